//! Energy-based speech activity detection with a two-component Gaussian
//! model of frame log-energies.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dsp::LOG_FLOOR;
use crate::error::{Error, Result};

/// Per-frame selection flags for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMask {
    pub flags: Vec<bool>,
}

impl FrameMask {
    pub fn all(n_frames: usize) -> Self {
        Self {
            flags: vec![true; n_frames],
        }
    }

    pub fn none(n_frames: usize) -> Self {
        Self {
            flags: vec![false; n_frames],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.flags.len()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
    }

    /// Frame-wise conjunction.
    pub fn and(&self, other: &FrameMask) -> Result<FrameMask> {
        if self.flags.len() != other.flags.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask lengths {} and {}",
                self.flags.len(),
                other.flags.len()
            )));
        }
        Ok(FrameMask {
            flags: self
                .flags
                .iter()
                .zip(&other.flags)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// True when every selected frame here is also selected in `other`.
    pub fn is_subset_of(&self, other: &FrameMask) -> bool {
        self.flags.len() == other.flags.len()
            && self.flags.iter().zip(&other.flags).all(|(&a, &b)| !a || b)
    }
}

/// `log(Σ x² + ε)` per frame.
pub fn frame_log_energy(frames: ArrayView2<f64>) -> Vec<f64> {
    frames
        .rows()
        .into_iter()
        .map(|r| (r.iter().map(|x| x * x).sum::<f64>() + LOG_FLOOR).ln())
        .collect()
}

pub const SAD_MIN_FRAMES: usize = 10;
const MAX_ITERS: usize = 50;
const REL_TOL: f64 = 1e-6;
const VAR_FLOOR: f64 = 1e-10;

/// Result of fitting the two-Gaussian energy model.
#[derive(Debug, Clone)]
pub struct BiGaussianFit {
    /// Component parameters, ordered so that `means[0] <= means[1]`.
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Decision threshold on log-energy; frames at or above it are speech.
    pub threshold: f64,
    /// Mean per-frame log-likelihood after initialisation and after every
    /// EM update.
    pub log_likelihood: Vec<f64>,
    /// Set when the components could not be told apart.
    pub degenerate: bool,
}

impl BiGaussianFit {
    pub fn mask(&self, energies: &[f64]) -> FrameMask {
        FrameMask {
            flags: energies
                .iter()
                .map(|&e| self.degenerate || e >= self.threshold)
                .collect(),
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

struct Params {
    w: [f64; 2],
    m: [f64; 2],
    v: [f64; 2],
}

impl Params {
    /// Mean log-likelihood and, optionally, the next EM estimate.
    fn e_step(&self, x: &[f64]) -> (f64, Params) {
        let mut ll = 0.0;
        let mut n = [0.0; 2];
        let mut s1 = [0.0; 2];
        let mut s2 = [0.0; 2];
        for &e in x {
            let a = self.w[0].ln() + log_normal(e, self.m[0], self.v[0]);
            let b = self.w[1].ln() + log_normal(e, self.m[1], self.v[1]);
            let mx = a.max(b);
            let lse = mx + ((a - mx).exp() + (b - mx).exp()).ln();
            ll += lse;
            let g = [(a - lse).exp(), (b - lse).exp()];
            for c in 0..2 {
                n[c] += g[c];
                s1[c] += g[c] * e;
            }
        }
        let total = x.len() as f64;
        let mut next = Params {
            w: [0.5; 2],
            m: self.m,
            v: self.v,
        };
        for c in 0..2 {
            if n[c] > 0.0 {
                next.m[c] = s1[c] / n[c];
            }
        }
        for &e in x {
            let a = self.w[0].ln() + log_normal(e, self.m[0], self.v[0]);
            let b = self.w[1].ln() + log_normal(e, self.m[1], self.v[1]);
            let mx = a.max(b);
            let lse = mx + ((a - mx).exp() + (b - mx).exp()).ln();
            let g = [(a - lse).exp(), (b - lse).exp()];
            for c in 0..2 {
                let d = e - next.m[c];
                s2[c] += g[c] * d * d;
            }
        }
        for c in 0..2 {
            next.w[c] = (n[c] / total).max(f64::MIN_POSITIVE);
            next.v[c] = if n[c] > 0.0 {
                (s2[c] / n[c]).max(VAR_FLOOR)
            } else {
                self.v[c]
            };
        }
        let wsum = next.w[0] + next.w[1];
        next.w = [next.w[0] / wsum, next.w[1] / wsum];
        (ll / total, next)
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.e_step(x).0
    }
}

fn kmeans_init(x: &[f64]) -> Params {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let centers = [percentile(&sorted, 0.25), percentile(&sorted, 0.75)];
    let mut n = [0usize; 2];
    let mut s1 = [0.0; 2];
    let mut s2 = [0.0; 2];
    for &e in x {
        let c = usize::from((e - centers[1]).abs() < (e - centers[0]).abs());
        n[c] += 1;
        s1[c] += e;
        s2[c] += e * e;
    }
    let total = x.len() as f64;
    let gmean = x.iter().sum::<f64>() / total;
    let gvar = (x.iter().map(|e| (e - gmean).powi(2)).sum::<f64>() / total).max(VAR_FLOOR);
    if n[0] == 0 || n[1] == 0 {
        return Params {
            w: [0.5; 2],
            m: [gmean; 2],
            v: [gvar; 2],
        };
    }
    let mut p = Params {
        w: [0.0; 2],
        m: [0.0; 2],
        v: [0.0; 2],
    };
    for c in 0..2 {
        let nc = n[c] as f64;
        p.w[c] = nc / total;
        p.m[c] = s1[c] / nc;
        p.v[c] = (s2[c] / nc - p.m[c] * p.m[c]).max(VAR_FLOOR);
    }
    p
}

/// Log-energy where the two weighted component densities are equal, searched
/// between the means. Falls back to the midpoint.
fn crossing(p: &Params) -> f64 {
    let (lo, hi) = (p.m[0], p.m[1]);
    let mid = 0.5 * (lo + hi);
    let a = 0.5 / p.v[1] - 0.5 / p.v[0];
    let b = p.m[0] / p.v[0] - p.m[1] / p.v[1];
    let c = p.m[1] * p.m[1] / (2.0 * p.v[1]) - p.m[0] * p.m[0] / (2.0 * p.v[0])
        + (p.w[0] / p.w[1]).ln()
        - 0.5 * (p.v[0] / p.v[1]).ln();
    let mut roots = Vec::with_capacity(2);
    if a.abs() < 1e-12 * (b.abs() + 1.0) {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-b + sq) / (2.0 * a));
            roots.push((-b - sq) / (2.0 * a));
        }
    }
    roots
        .into_iter()
        .filter(|r| r.is_finite() && *r >= lo && *r <= hi)
        .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
        .unwrap_or(mid)
}

/// Fits the two-component model by EM: percentile-seeded k-means start, at
/// most 50 iterations or until the relative log-likelihood change drops
/// below 1e-6.
pub fn fit_bi_gaussian(energies: &[f64]) -> Result<BiGaussianFit> {
    if energies.len() < SAD_MIN_FRAMES {
        return Err(Error::InsufficientFrames {
            got: energies.len(),
            need: SAD_MIN_FRAMES,
        });
    }
    let mut params = kmeans_init(energies);
    let mut history = Vec::with_capacity(MAX_ITERS + 1);
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let (ll, next) = params.e_step(energies);
        converged = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= REL_TOL * prev.abs());
        history.push(ll);
        if converged {
            break;
        }
        params = next;
    }
    if !converged {
        history.push(params.log_likelihood(energies));
    }
    if params.m[0] > params.m[1] {
        params.w.swap(0, 1);
        params.m.swap(0, 1);
        params.v.swap(0, 1);
    }
    // Means closer than the floor's standard deviation cannot be separated.
    let degenerate = params.m[1] - params.m[0] < VAR_FLOOR.sqrt();
    let threshold = if degenerate { params.m[0] } else { crossing(&params) };
    Ok(BiGaussianFit {
        weights: params.w,
        means: params.m,
        variances: params.v,
        threshold,
        log_likelihood: history,
        degenerate,
    })
}

/// Speech mask from frame log-energies. Degenerate fits select every frame.
pub fn bi_gaussian_sad(energies: &[f64]) -> Result<FrameMask> {
    Ok(fit_bi_gaussian(energies)?.mask(energies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn log_energy_examples() {
        let e = frame_log_energy(Array2::zeros((1, 8)).view());
        assert_abs_diff_eq!(e[0], (1e-12f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[0], -27.631, epsilon = 1e-3);
        let e = frame_log_energy(Array2::ones((1, 4)).view());
        assert_abs_diff_eq!(e[0], 4.0f64.ln(), epsilon = 1e-9);
        let f = Array2::from_shape_fn((1, 16), |(_, n)| (n as f64 * 0.3).sin());
        let e1 = frame_log_energy(f.view())[0];
        let e2 = frame_log_energy((&f * 2.0).view())[0];
        assert_abs_diff_eq!(e2 - e1, 4.0f64.ln(), epsilon = 1e-9);
    }

    fn bimodal(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = Normal::new(-20.0, 0.5f64.sqrt()).unwrap();
        let hi = Normal::new(-2.0, 0.5f64.sqrt()).unwrap();
        let mut e = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let speech = i % 2 == 1;
            e.push(if speech { hi.sample(&mut rng) } else { lo.sample(&mut rng) });
            truth.push(speech);
        }
        (e, truth)
    }

    #[test]
    fn recovers_high_energy_half() {
        for seed in 0..5 {
            let (e, truth) = bimodal(seed, 400);
            let mask = bi_gaussian_sad(&e).unwrap();
            assert_eq!(mask.flags, truth);
        }
    }

    #[test]
    fn em_log_likelihood_non_decreasing() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Normal::new(-8.0, 2.0).unwrap();
            let b = Normal::new(-3.0, 1.5).unwrap();
            let e: Vec<f64> = (0..300)
                .map(|i| if i % 3 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
                .collect();
            let fit = fit_bi_gaussian(&e).unwrap();
            for w in fit.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{:?}", fit.log_likelihood);
            }
            assert!(fit.threshold > fit.means[0] && fit.threshold < fit.means[1]);
        }
    }

    #[test]
    fn identical_energies_select_everything() {
        let e = vec![-3.7; 25];
        let fit = fit_bi_gaussian(&e).unwrap();
        assert!(fit.degenerate);
        let mask = fit.mask(&e);
        assert_eq!(mask.count(), 25);
    }

    #[test]
    fn too_few_frames() {
        let err = bi_gaussian_sad(&[0.0; 9]).unwrap_err();
        assert!(err.to_string().starts_with("insufficient frames"));
    }

    #[test]
    fn mask_length_matches_input() {
        let (e, _) = bimodal(9, 37);
        assert_eq!(bi_gaussian_sad(&e).unwrap().n_frames(), 37);
    }

    #[test]
    fn crossing_of_equal_variance_components_is_weighted_midpoint() {
        let p = Params {
            w: [0.5, 0.5],
            m: [0.0, 4.0],
            v: [1.0, 1.0],
        };
        assert_abs_diff_eq!(crossing(&p), 2.0, epsilon = 1e-12);
        // A heavier low component pushes the crossing upward.
        let p = Params {
            w: [0.8, 0.2],
            m: [0.0, 4.0],
            v: [1.0, 1.0],
        };
        let want = 2.0 + (0.8f64 / 0.2).ln() / 4.0;
        assert_abs_diff_eq!(crossing(&p), want, epsilon = 1e-12);
    }

    #[test]
    fn mask_algebra() {
        let a = FrameMask {
            flags: vec![true, true, false],
        };
        let b = FrameMask {
            flags: vec![true, false, true],
        };
        let c = a.and(&b).unwrap();
        assert_eq!(c.flags, vec![true, false, false]);
        assert!(c.is_subset_of(&a) && c.is_subset_of(&b));
        assert!(a.and(&FrameMask::all(2)).is_err());
    }
}
