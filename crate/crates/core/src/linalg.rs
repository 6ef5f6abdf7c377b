//! Small dense symmetric eigenproblems (subband covariances are at most a few
//! dozen bins wide).

use ndarray::{Array1, Array2, ArrayView2};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as columns. The input is symmetrised as `(S + Sᵀ)/2` first.
pub fn symmetric_eigen(s: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = s.nrows();
    assert_eq!(n, s.ncols(), "matrix must be square");
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (s[[i, j]] + s[[j, i]]));
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn reconstructs_matrix() {
        let s = array![[4.0, 1.0, -2.0], [1.0, 3.0, 0.5], [-2.0, 0.5, 6.0]];
        let (vals, vecs) = symmetric_eigen(s.view());
        let rebuilt = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (a, b) in rebuilt.iter().zip(s.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let gram = vecs.t().dot(&vecs);
        for ((i, j), g) in gram.indexed_iter() {
            assert_abs_diff_eq!(*g, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_and_scalar() {
        let (vals, _) = symmetric_eigen(array![[2.0, 0.0], [0.0, 5.0]].view());
        assert_eq!(vals.to_vec(), vec![5.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(array![[3.0]].view());
        assert_eq!(vals[0], 3.0);
        assert_eq!(vecs[[0, 0]], 1.0);
    }
}
