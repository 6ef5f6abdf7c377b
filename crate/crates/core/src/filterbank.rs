//! Filter placement on a warping scale and filter shapes: fixed triangles, or
//! responses learned as the first principal component of each subband's
//! log-power spectra.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dsp::{hamming_window, n_bins};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::sad::FrameMask;
use crate::scale::WarpingScale;

/// Boundary bins `b_0 < b_1 < … < b_{Q+1}`; filter `j` (1-based) spans
/// `b_{j-1}..=b_{j+1}` and peaks at `b_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterbankLayout {
    pub boundary_bins: Vec<usize>,
    pub sample_rate_hz: u32,
    pub n_fft: usize,
}

impl FilterbankLayout {
    pub fn n_filters(&self) -> usize {
        self.boundary_bins.len().saturating_sub(2)
    }

    pub fn n_bins(&self) -> usize {
        n_bins(self.n_fft)
    }

    /// Inclusive support of filter `j` (0-based).
    pub fn support(&self, j: usize) -> (usize, usize) {
        (self.boundary_bins[j], self.boundary_bins[j + 2])
    }

    pub fn center(&self, j: usize) -> usize {
        self.boundary_bins[j + 1]
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.boundary_bins;
        if b.len() < 3 {
            return Err(Error::Invariant(format!("layout has {} boundaries", b.len())));
        }
        if b[0] != 0 || *b.last().unwrap() != self.n_bins() - 1 {
            return Err(Error::Invariant(format!(
                "layout must span bins 0..={}, got {}..={}",
                self.n_bins() - 1,
                b[0],
                b.last().unwrap()
            )));
        }
        if b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invariant("boundary bins not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Places `q` filters at equal spacing on the warped axis.
///
/// Warped points `j/(Q+1)` are mapped back to Hz and rounded to bins;
/// collisions are resolved by moving the later boundary up one bin.
pub fn place_filter_edges(
    scale: &WarpingScale,
    q: usize,
    n_fft: usize,
    sample_rate_hz: u32,
) -> Result<FilterbankLayout> {
    if q == 0 {
        return Err(Error::InvalidArgument("need at least one filter".into()));
    }
    let k = n_bins(n_fft);
    if k < q + 2 {
        return Err(Error::TooFewBins { bins: k, filters: q });
    }
    let bin_hz = sample_rate_hz as f64 / n_fft as f64;
    let mut bins: Vec<usize> = edge_frequencies(scale, q)
        .into_iter()
        .map(|f| ((f / bin_hz).round().max(0.0) as usize).min(k - 1))
        .collect();
    bins[0] = 0;
    bins[q + 1] = k - 1;
    for j in 1..bins.len() {
        if bins[j] <= bins[j - 1] {
            bins[j] = bins[j - 1] + 1;
        }
    }
    // pull back anything pushed past the top bin
    bins[q + 1] = k - 1;
    for j in (0..=q).rev() {
        if bins[j] >= bins[j + 1] {
            bins[j] = bins[j + 1] - 1;
        }
    }
    let layout = FilterbankLayout {
        boundary_bins: bins,
        sample_rate_hz,
        n_fft,
    };
    layout.validate()?;
    Ok(layout)
}

/// Unrounded edge frequencies `W⁻¹(j/(Q+1))`, `j = 0..=Q+1`.
pub fn edge_frequencies(scale: &WarpingScale, q: usize) -> Vec<f64> {
    (0..q + 2)
        .map(|j| scale.unwarp(j as f64 / (q + 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    #[serde(rename = "triangular")]
    Triangular,
    #[serde(rename = "pca")]
    Pca,
    #[serde(rename = "windowed-pca")]
    WindowedPca,
    #[serde(rename = "windowed-pca-normalized")]
    WindowedPcaNormalized,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Triangular,
        ShapeKind::Pca,
        ShapeKind::WindowedPca,
        ShapeKind::WindowedPcaNormalized,
    ];

    pub fn options(self) -> Option<PcaOptions> {
        match self {
            ShapeKind::Triangular => None,
            ShapeKind::Pca => Some(PcaOptions {
                taper: false,
                normalize: false,
            }),
            ShapeKind::WindowedPca => Some(PcaOptions {
                taper: true,
                normalize: false,
            }),
            ShapeKind::WindowedPcaNormalized => Some(PcaOptions {
                taper: true,
                normalize: true,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcaOptions {
    pub taper: bool,
    pub normalize: bool,
}

impl PcaOptions {
    pub fn shape(self) -> ShapeKind {
        match (self.taper, self.normalize) {
            (false, _) => ShapeKind::Pca,
            (true, false) => ShapeKind::WindowedPca,
            (true, true) => ShapeKind::WindowedPcaNormalized,
        }
    }
}

/// `Q` full-band frequency responses on a shared layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub layout: FilterbankLayout,
    /// `Q × K`, zero outside each filter's support.
    pub responses: Array2<f64>,
    pub shape: ShapeKind,
}

impl Filterbank {
    pub fn n_filters(&self) -> usize {
        self.responses.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.responses.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let q = self.layout.n_filters();
        if self.responses.dim() != (q, self.layout.n_bins()) {
            return Err(Error::Invariant(format!(
                "responses are {:?}, layout needs ({q}, {})",
                self.responses.dim(),
                self.layout.n_bins()
            )));
        }
        for (j, row) in self.responses.rows().into_iter().enumerate() {
            let (lo, hi) = self.layout.support(j);
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < -1e-9 || ((k < lo || k > hi) && v != 0.0) {
                    return Err(Error::Invariant(format!(
                        "filter {j} has response {v} at bin {k} (support {lo}..={hi})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unit-peak triangles over each filter's support.
pub fn triangular_responses(layout: &FilterbankLayout) -> Filterbank {
    let q = layout.n_filters();
    let mut responses = Array2::zeros((q, layout.n_bins()));
    for j in 0..q {
        let (lo, hi) = layout.support(j);
        let c = layout.center(j);
        for k in lo..=hi {
            responses[[j, k]] = triangle(k, lo, c, hi);
        }
    }
    Filterbank {
        layout: layout.clone(),
        responses,
        shape: ShapeKind::Triangular,
    }
}

fn triangle(k: usize, lo: usize, c: usize, hi: usize) -> f64 {
    if k == c {
        1.0
    } else if k < c {
        (k - lo) as f64 / (c - lo) as f64
    } else {
        (hi - k) as f64 / (hi - c) as f64
    }
}

/// Sample covariance (`1/(N-1)` normalisation) and mean of columns
/// `band.0..=band.1`, optionally multiplied by a taper first.
pub fn subband_covariance(
    log_specs: ArrayView2<f64>,
    band: (usize, usize),
    taper: Option<&[f64]>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (lo, hi) = band;
    let n = log_specs.nrows();
    if n < 2 {
        return Err(Error::NeedTwoFrames(n));
    }
    if lo > hi || hi >= log_specs.ncols() {
        return Err(Error::InvalidArgument(format!(
            "band {lo}..={hi} outside {} bins",
            log_specs.ncols()
        )));
    }
    let mut x = log_specs.slice(s![.., lo..=hi]).to_owned();
    if let Some(t) = taper {
        if t.len() != hi - lo + 1 {
            return Err(Error::DimensionMismatch(format!(
                "taper length {} for band of {} bins",
                t.len(),
                hi - lo + 1
            )));
        }
        for mut row in x.rows_mut() {
            row.iter_mut().zip(t).for_each(|(v, w)| *v *= w);
        }
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    x.rows_mut().into_iter().for_each(|mut r| r -= &mean);
    let cov = x.t().dot(&x) / (n - 1) as f64;
    Ok((cov, mean))
}

/// Streaming mean/covariance with pairwise merging, so partial sums from
/// different utterances or threads combine exactly like a single pass.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n: usize,
    mean: Array1<f64>,
    /// Σ (x - mean)(x - mean)ᵀ
    scatter: Array2<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: Array1::zeros(dim),
            scatter: Array2::zeros((dim, dim)),
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let d = self.mean.len();
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        // scatter += (x - old_mean)(x - new_mean)ᵀ
        for i in 0..d {
            let di = delta[i];
            for j in 0..d {
                self.scatter[[i, j]] += di * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let d = delta.len();
        for i in 0..d {
            for j in 0..d {
                self.scatter[[i, j]] += other.scatter[[i, j]] + delta[i] * delta[j] * na * nb / n;
            }
        }
        self.mean = &self.mean + &(&delta * (nb / n));
        self.n += other.n;
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> Result<Array2<f64>> {
        if self.n < 2 {
            return Err(Error::NeedTwoFrames(self.n));
        }
        let c = &self.scatter / (self.n - 1) as f64;
        // exact symmetry regardless of accumulation order
        Ok(Array2::from_shape_fn(c.dim(), |(i, j)| 0.5 * (c[[i, j]] + c[[j, i]])))
    }
}

/// Dominant eigenvector of `S`, unit length, signed so its components sum to
/// a non-negative value.
pub fn pca_first_basis(s: ArrayView2<f64>) -> Result<Vec<f64>> {
    if s.nrows() == 0 || s.nrows() != s.ncols() {
        return Err(Error::InvalidArgument(format!(
            "covariance must be square and non-empty, got {:?}",
            s.dim()
        )));
    }
    if s.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSubband);
    }
    let (values, vectors) = symmetric_eigen(s);
    if !(values[0] > 0.0) {
        return Err(Error::DegenerateSubband);
    }
    let mut v = vectors.column(0).to_vec();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    v.iter_mut().for_each(|x| *x *= sign / norm);
    Ok(v)
}

/// Accumulates subband statistics over a corpus and turns them into a PCA
/// filterbank.
#[derive(Debug, Clone)]
pub struct PcaFilterLearner {
    layout: FilterbankLayout,
    options: PcaOptions,
    tapers: Vec<Option<Vec<f64>>>,
    stats: Vec<CovarianceAccumulator>,
}

/// Outcome of PCA learning; `fallbacks` lists filters (0-based) that kept the
/// triangular shape because their subband had no variance, `clipped` those
/// whose first basis had negative components.
#[derive(Debug, Clone)]
pub struct PcaLearnReport {
    pub filterbank: Filterbank,
    pub fallbacks: Vec<usize>,
    pub clipped: Vec<usize>,
}

/// Zeroes components below `-1e-9` and rescales to unit norm. Returns whether
/// anything was clipped.
///
/// A subband covariance with negative entries can have a first eigenvector of
/// mixed sign; a filter response has to stay non-negative.
pub fn clip_negative(v: &mut [f64]) -> bool {
    if v.iter().all(|&x| x >= -1e-9) {
        return false;
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

impl PcaFilterLearner {
    pub fn new(layout: FilterbankLayout, options: PcaOptions) -> Result<Self> {
        layout.validate()?;
        let q = layout.n_filters();
        let mut tapers = Vec::with_capacity(q);
        let mut stats = Vec::with_capacity(q);
        for j in 0..q {
            let (lo, hi) = layout.support(j);
            let width = hi - lo + 1;
            tapers.push(if options.taper {
                Some(hamming_window(width)?)
            } else {
                None
            });
            stats.push(CovarianceAccumulator::new(width));
        }
        Ok(Self {
            layout,
            options,
            tapers,
            stats,
        })
    }

    /// Adds the selected frames of one utterance's log-power spectrogram.
    pub fn add(&mut self, log_specs: ArrayView2<f64>, mask: &FrameMask) -> Result<()> {
        if log_specs.ncols() != self.layout.n_bins() {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram has {} bins, layout {}",
                log_specs.ncols(),
                self.layout.n_bins()
            )));
        }
        if mask.n_frames() != log_specs.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} frames, spectrogram {}",
                mask.n_frames(),
                log_specs.nrows()
            )));
        }
        let mut buf = Vec::new();
        for (j, acc) in self.stats.iter_mut().enumerate() {
            let (lo, hi) = self.layout.support(j);
            for i in mask.selected() {
                buf.clear();
                buf.extend(log_specs.slice(s![i, lo..=hi]).iter());
                if let Some(t) = &self.tapers[j] {
                    buf.iter_mut().zip(t).for_each(|(v, w)| *v *= w);
                }
                acc.push(&buf);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PcaFilterLearner) -> Result<()> {
        if self.layout != other.layout || self.options != other.options {
            return Err(Error::DimensionMismatch("merging learners with different layouts".into()));
        }
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn frames_seen(&self) -> usize {
        self.stats.first().map_or(0, CovarianceAccumulator::count)
    }

    pub fn finish(&self) -> Result<PcaLearnReport> {
        let q = self.layout.n_filters();
        if self.frames_seen() < 2 {
            return Err(Error::NeedTwoFrames(self.frames_seen()));
        }
        let mut responses = Array2::zeros((q, self.layout.n_bins()));
        let mut fallbacks = Vec::new();
        let mut clipped = Vec::new();
        for j in 0..q {
            let (lo, hi) = self.layout.support(j);
            let cov = self.stats[j].covariance()?;
            let mut row = responses.row_mut(j);
            match pca_first_basis(cov.view()) {
                Ok(mut v) => {
                    if clip_negative(&mut v) {
                        log::warn!("filter {j}: first basis has negative components, clipped to zero");
                        clipped.push(j);
                    }
                    if self.options.normalize {
                        let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        if peak > 0.0 {
                            v.iter_mut().for_each(|x| *x /= peak);
                        }
                    }
                    row.slice_mut(s![lo..=hi]).assign(&Array1::from(v));
                }
                Err(Error::DegenerateSubband) => {
                    log::warn!("filter {j}: zero-variance subband {lo}..={hi}, using triangular shape");
                    let c = self.layout.center(j);
                    for k in lo..=hi {
                        row[k] = triangle(k, lo, c, hi);
                    }
                    fallbacks.push(j);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(PcaLearnReport {
            filterbank: Filterbank {
                layout: self.layout.clone(),
                responses,
                shape: self.options.shape(),
            },
            fallbacks,
            clipped,
        })
    }
}

/// Learns PCA filter shapes from per-utterance log-power spectrograms, using
/// every frame of each.
pub fn learn_pca_filterbank(
    log_specs: &[ArrayView2<f64>],
    layout: &FilterbankLayout,
    options: PcaOptions,
) -> Result<PcaLearnReport> {
    let mut learner = PcaFilterLearner::new(layout.clone(), options)?;
    for spec in log_specs {
        learner.add(*spec, &FrameMask::all(spec.nrows()))?;
    }
    learner.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::{linear_scale, mel_warping_scale, ScaleKind, MEL_KNOTS};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn linear_layout() {
        let s = linear_scale(4000.0, ScaleKind::Speech).unwrap();
        let l = place_filter_edges(&s, 3, 512, 8000).unwrap();
        assert_eq!(l.boundary_bins, vec![0, 64, 128, 192, 256]);
        let l1 = place_filter_edges(&s, 1, 512, 8000).unwrap();
        assert_eq!(l1.boundary_bins, vec![0, 128, 256]);
    }

    #[test]
    fn too_few_bins() {
        let s = linear_scale(4000.0, ScaleKind::Speech).unwrap();
        let err = place_filter_edges(&s, 8, 16, 8000).unwrap_err();
        assert!(err.to_string().starts_with("too few bins"));
        // tight but valid: rounding collisions get pushed apart
        let l = place_filter_edges(&mel_warping_scale(4000.0, MEL_KNOTS).unwrap(), 7, 16, 8000).unwrap();
        assert_eq!(l.boundary_bins, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn mel_edges_widen_with_frequency() {
        let s = mel_warping_scale(4000.0, MEL_KNOTS).unwrap();
        let edges = edge_frequencies(&s, 20);
        for w in edges.windows(3) {
            assert!(w[2] - w[1] >= w[1] - w[0] - 1e-9, "{w:?}");
        }
        let l = place_filter_edges(&s, 20, 512, 8000).unwrap();
        let gaps: Vec<usize> = l.boundary_bins.windows(2).map(|w| w[1] - w[0]).collect();
        for w in gaps.windows(2) {
            assert!(w[1] + 1 >= w[0], "{gaps:?}");
        }
        assert!(gaps.last().unwrap() > gaps.first().unwrap());
    }

    #[test]
    fn triangle_example() {
        let layout = FilterbankLayout {
            boundary_bins: vec![0, 2, 4],
            sample_rate_hz: 8000,
            n_fft: 8,
        };
        let fb = triangular_responses(&layout);
        assert_eq!(fb.responses.row(0).to_vec(), vec![0.0, 0.5, 1.0, 0.5, 0.0]);
        fb.validate().unwrap();
    }

    #[test]
    fn triangles_are_complementary() {
        let s = mel_warping_scale(8000.0, MEL_KNOTS).unwrap();
        let layout = place_filter_edges(&s, 20, 512, 16000).unwrap();
        let fb = triangular_responses(&layout);
        for j in 0..19 {
            let (c0, c1) = (layout.center(j), layout.center(j + 1));
            for k in c0 + 1..c1 {
                let sum = fb.responses[[j, k]] + fb.responses[[j + 1, k]];
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
        for row in fb.responses.rows() {
            assert_eq!(row.iter().copied().fold(0.0, f64::max), 1.0);
        }
    }

    #[test]
    fn covariance_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let (cov, mean) = subband_covariance(x.view(), (0, 1), None).unwrap();
        assert_eq!(mean.to_vec(), vec![3.0, 4.0]);
        assert_eq!(cov, array![[4.0, 4.0], [4.0, 4.0]]);
        let (tapered, _) = subband_covariance(x.view(), (0, 1), Some(&[1.0, 1.0])).unwrap();
        assert_eq!(tapered, cov);

        let same = array![[2.0, 7.0, 1.0], [2.0, 7.0, 1.0]];
        let (z, _) = subband_covariance(same.view(), (0, 2), None).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        let err = subband_covariance(array![[1.0, 2.0]].view(), (0, 1), None).unwrap_err();
        assert!(err.to_string().starts_with("need ≥2 frames"));
    }

    #[test]
    fn accumulator_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((57, 6), |_| rng.random_range(-30.0..5.0));
        let (cov, mean) = subband_covariance(x.view(), (0, 5), None).unwrap();
        let mut a = CovarianceAccumulator::new(6);
        let mut b = CovarianceAccumulator::new(6);
        for (i, row) in x.rows().into_iter().enumerate() {
            let r = row.to_vec();
            if i < 20 {
                a.push(&r)
            } else {
                b.push(&r)
            }
        }
        a.merge(&b);
        assert_eq!(a.count(), 57);
        for (p, q) in a.covariance().unwrap().iter().zip(cov.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
        for (p, q) in a.mean().iter().zip(mean.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_basis_examples() {
        let v = pca_first_basis(array![[2.0, 0.0], [0.0, 1.0]].view()).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        let v = pca_first_basis(array![[4.0, 4.0], [4.0, 4.0]].view()).unwrap();
        assert_abs_diff_eq!(v[0], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.5f64.sqrt(), epsilon = 1e-12);
        let err = pca_first_basis(Array2::zeros((3, 3)).view()).unwrap_err();
        assert_eq!(err.to_string(), "degenerate subband");
    }

    #[test]
    fn first_basis_matches_independent_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..50 {
            let b = Array2::from_shape_fn((5, 5), |_| normal.sample(&mut rng));
            let s = b.dot(&b.t());
            let v = pca_first_basis(s.view()).unwrap();
            let m = nalgebra::DMatrix::from_fn(5, 5, |i, j| s[[i, j]]);
            let eig = nalgebra::SymmetricEigen::new(m);
            let top = eig.eigenvalues.imax();
            let u = eig.eigenvectors.column(top);
            let dot: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            let sign = dot.signum();
            for (a, b) in v.iter().zip(u.iter()) {
                assert_abs_diff_eq!(*a, sign * b, epsilon = 1e-6);
            }
        }
    }

    fn small_layout() -> FilterbankLayout {
        FilterbankLayout {
            boundary_bins: vec![0, 4, 9, 14, 20, 32],
            sample_rate_hz: 8000,
            n_fft: 64,
        }
    }

    #[test]
    fn rank_one_corpus_recovers_generator() {
        let layout = small_layout();
        let k = layout.n_bins();
        let g: Vec<f64> = (0..k).map(|i| 1.0 + (i as f64 * 0.4).sin().abs()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let specs = Array2::from_shape_fn((40, k), |_| 0.0);
        let mut specs = specs;
        for mut row in specs.rows_mut() {
            let a: f64 = rng.random_range(-3.0..3.0);
            row.iter_mut().zip(&g).for_each(|(v, gk)| *v = a * gk - 5.0);
        }
        for opts in [ShapeKind::Pca, ShapeKind::WindowedPca] {
            let opts = opts.options().unwrap();
            let rep = learn_pca_filterbank(&[specs.view()], &layout, opts).unwrap();
            assert!(rep.fallbacks.is_empty());
            for j in 0..layout.n_filters() {
                let (lo, hi) = layout.support(j);
                let mut want: Vec<f64> = g[lo..=hi].to_vec();
                if opts.taper {
                    let t = hamming_window(hi - lo + 1).unwrap();
                    want.iter_mut().zip(&t).for_each(|(w, t)| *w *= t);
                }
                let norm = want.iter().map(|x| x * x).sum::<f64>().sqrt();
                for (k, w) in (lo..=hi).zip(&want) {
                    assert_abs_diff_eq!(rep.filterbank.responses[[j, k]], w / norm, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn normalized_filters_peak_at_one_and_stay_in_support() {
        let layout = small_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = layout.n_bins();
        let specs = Array2::from_shape_fn((200, k), |_| rng.random_range(-2.0..2.0));
        let rep = learn_pca_filterbank(
            &[specs.view()],
            &layout,
            ShapeKind::WindowedPcaNormalized.options().unwrap(),
        )
        .unwrap();
        let fb = rep.filterbank;
        assert_eq!(fb.shape, ShapeKind::WindowedPcaNormalized);
        for (j, row) in fb.responses.rows().into_iter().enumerate() {
            assert_abs_diff_eq!(row.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0, epsilon = 1e-12);
            let (lo, hi) = layout.support(j);
            for (b, &v) in row.iter().enumerate() {
                if b < lo || b > hi {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn unnormalized_filters_have_unit_norm() {
        let layout = small_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let specs = Array2::from_shape_fn((100, layout.n_bins()), |(i, _)| {
            (i % 7) as f64 + rng.random_range(-0.5..0.5)
        });
        let rep = learn_pca_filterbank(&[specs.view()], &layout, ShapeKind::Pca.options().unwrap()).unwrap();
        for row in rep.filterbank.responses.rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-9);
        }
        rep.filterbank.validate().unwrap();
    }

    #[test]
    fn anticorrelated_band_is_clipped_to_non_negative() {
        let layout = small_layout();
        let k = layout.n_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // the two halves of every subband move in opposite directions
        let specs = Array2::from_shape_fn((200, k), |(i, b)| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            (if b % 8 < 4 { s } else { -s }) * 2.0 + rng.random_range(-0.1..0.1)
        });
        let rep = learn_pca_filterbank(&[specs.view()], &layout, ShapeKind::Pca.options().unwrap()).unwrap();
        assert!(!rep.clipped.is_empty());
        rep.filterbank.validate().unwrap();
        for row in rep.filterbank.responses.rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(row.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0, epsilon = 1e-9);
        }
        let mut v = vec![0.6, -0.8];
        assert!(clip_negative(&mut v));
        assert_eq!(v, vec![1.0, 0.0]);
        let mut w = vec![0.6, 0.8];
        assert!(!clip_negative(&mut w));
    }

    #[test]
    fn zero_variance_band_falls_back_to_triangle() {
        let layout = small_layout();
        let k = layout.n_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // bins below 14 vary, bins from 14 up are constant
        let specs = Array2::from_shape_fn((30, k), |(_, b)| if b < 14 { rng.random_range(0.0..1.0) } else { -3.0 });
        let rep = learn_pca_filterbank(&[specs.view()], &layout, ShapeKind::Pca.options().unwrap()).unwrap();
        assert_eq!(rep.fallbacks, vec![3]);
        let tri = triangular_responses(&layout);
        assert_eq!(rep.filterbank.responses.row(3), tri.responses.row(3));
    }

    #[test]
    fn tapered_noise_filters_follow_the_taper() {
        // white-noise frames at a randomly varying level: the common level
        // term dominates the tapered covariance, so the first basis tracks
        // the Hamming taper
        let layout = small_layout();
        let k = layout.n_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let level = Normal::new(0.0, 3.0).unwrap();
        let bin = Normal::new(0.0, 1.0).unwrap();
        let mut specs = Array2::zeros((2000, k));
        for mut row in specs.rows_mut() {
            let g = level.sample(&mut rng);
            row.iter_mut().for_each(|v| *v = g + bin.sample(&mut rng));
        }
        let rep = learn_pca_filterbank(&[specs.view()], &layout, ShapeKind::WindowedPca.options().unwrap()).unwrap();
        for j in 0..layout.n_filters() {
            let (lo, hi) = layout.support(j);
            let t = hamming_window(hi - lo + 1).unwrap();
            let r = rep.filterbank.responses.slice(s![j, lo..=hi]).to_vec();
            let dot: f64 = r.iter().zip(&t).map(|(a, b)| a * b).sum();
            let cos = dot / (t.iter().map(|x| x * x).sum::<f64>().sqrt());
            assert!(cos >= 0.9, "filter {j}: cosine {cos}");
        }
    }
}
