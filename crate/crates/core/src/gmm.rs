//! Diagonal-covariance GMM-UBM: EM training, MAP mean adaptation and
//! log-likelihood-ratio scoring.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_RELEVANCE: f64 = 14.0;
const KMEANS_ITERS: usize = 10;
/// Frames per parallel work unit. Partial sums are reduced in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `C × D`
    pub means: Array2<f64>,
    /// `C × D`
    pub variances: Array2<f64>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_components();
        if c == 0 || self.means.dim() != (c, self.dim()) || self.variances.dim() != self.means.dim() {
            return Err(Error::Invariant(format!(
                "gmm shapes: {} weights, means {:?}, variances {:?}",
                c,
                self.means.dim(),
                self.variances.dim()
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Invariant(format!("gmm weights sum to {total}")));
        }
        if self.variances.iter().any(|&v| !(v >= VARIANCE_FLOOR * (1.0 - 1e-12))) {
            return Err(Error::Invariant("gmm variance below floor".into()));
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite gmm mean".into()));
        }
        Ok(())
    }

    fn prepared(&self) -> Prepared {
        let d = self.dim() as f64;
        let inv_var = self.variances.mapv(|v| 1.0 / v);
        let log_norm = self
            .weights
            .iter()
            .zip(self.variances.rows())
            .map(|(w, var)| w.ln() - 0.5 * (d * (2.0 * PI).ln() + var.iter().map(|v| v.ln()).sum::<f64>()))
            .collect();
        Prepared {
            means: self.means.clone(),
            inv_var,
            log_norm,
        }
    }

    /// Per-frame log-likelihoods.
    pub fn frame_log_likelihoods(&self, frames: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_dim(frames.ncols())?;
        let p = self.prepared();
        let mut buf = vec![0.0; self.n_components()];
        Ok(frames.rows().into_iter().map(|x| p.joint(x, &mut buf)).collect())
    }

    pub fn mean_log_likelihood(&self, frames: ArrayView2<f64>) -> Result<f64> {
        let ll = self.frame_log_likelihoods(frames)?;
        if ll.is_empty() {
            return Err(Error::NoFramesSelected);
        }
        Ok(ll.iter().sum::<f64>() / ll.len() as f64)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "frames have dimension {d}, model {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

struct Prepared {
    means: Array2<f64>,
    inv_var: Array2<f64>,
    /// `ln w_c − ½ Σ_d ln(2π σ²_cd)`
    log_norm: Vec<f64>,
}

impl Prepared {
    /// Fills `out` with `ln w_c + ln N(x; μ_c, Σ_c)` and returns their
    /// log-sum-exp.
    fn joint(&self, x: ArrayView1<f64>, out: &mut [f64]) -> f64 {
        for (c, o) in out.iter_mut().enumerate() {
            let m = self.means.row(c);
            let iv = self.inv_var.row(c);
            let mut q = 0.0;
            for ((&xi, &mi), &ivi) in x.iter().zip(m.iter()).zip(iv.iter()) {
                let d = xi - mi;
                q += d * d * ivi;
            }
            *o = self.log_norm[c] - 0.5 * q;
        }
        let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + out.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(CHUNK)).map(|k| k * CHUNK..((k + 1) * CHUNK).min(n)).collect()
}

/// Posterior responsibilities (`N × C`) and the summed log-likelihood.
fn responsibilities(model: &GmmModel, frames: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let p = model.prepared();
    let c = model.n_components();
    let parts: Vec<(Array2<f64>, f64)> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|r| {
            let mut g = Array2::zeros((r.len(), c));
            let mut ll = 0.0;
            let mut buf = vec![0.0; c];
            for (mut row, i) in g.rows_mut().into_iter().zip(r) {
                let lse = p.joint(frames.row(i), &mut buf);
                ll += lse;
                row.iter_mut().zip(&buf).for_each(|(o, v)| *o = (v - lse).exp());
            }
            (g, ll)
        })
        .collect();
    let ll = parts.iter().map(|(_, l)| l).sum();
    let views: Vec<_> = parts.iter().map(|(g, _)| g.view()).collect();
    let gamma = if views.is_empty() {
        Array2::zeros((0, c))
    } else {
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    (gamma, ll)
}

/// Occupancies `n_c` and first-order sums `Σ γ x`, reduced in chunk order.
fn first_order(gamma: &Array2<f64>, frames: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (c, d) = (gamma.ncols(), frames.ncols());
    let parts: Vec<(Array1<f64>, Array2<f64>)> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|r| {
            let g = gamma.slice(s![r.clone(), ..]);
            (g.sum_axis(Axis(0)), g.t().dot(&frames.slice(s![r, ..])))
        })
        .collect();
    parts
        .into_iter()
        .fold((Array1::zeros(c), Array2::zeros((c, d))), |(n, f), (pn, pf)| (n + pn, f + pf))
}

/// `Σ γ (x − μ)²` per component, reduced in chunk order.
fn centred_second_order(gamma: &Array2<f64>, frames: ArrayView2<f64>, means: &Array2<f64>) -> Array2<f64> {
    let (c, d) = (gamma.ncols(), frames.ncols());
    let parts: Vec<Array2<f64>> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|r| {
            let mut s = Array2::<f64>::zeros((c, d));
            for i in r {
                let xr = frames.row(i);
                for (k, &gk) in gamma.row(i).iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let mut srow = s.row_mut(k);
                    for ((sv, &xv), &mv) in srow.iter_mut().zip(xr.iter()).zip(means.row(k).iter()) {
                        let dlt = xv - mv;
                        *sv += gk * dlt * dlt;
                    }
                }
            }
            s
        })
        .collect();
    parts.into_iter().fold(Array2::zeros((c, d)), |acc, p| acc + p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UbmConfig {
    pub n_components: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self {
            n_components: 64,
            iterations: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UbmTraining {
    pub model: GmmModel,
    /// Mean per-frame log-likelihood of the initial model and after every
    /// EM iteration.
    pub log_likelihood: Vec<f64>,
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.rows().into_iter().enumerate() {
        let d: f64 = x.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Seeded k-means: distinct random frames as initial centroids, a few
/// Lloyd passes, then per-cluster weights and floored variances.
fn kmeans_init(frames: ArrayView2<f64>, c: usize, seed: u64) -> GmmModel {
    let (n, d) = frames.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, c).into_vec();
    let mut centroids = frames.select(Axis(0), &picks);
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        assign
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, a)| *a = nearest(frames.row(i), &centroids));
        let mut sums = Array2::<f64>::zeros((c, d));
        let mut counts = vec![0usize; c];
        for (i, &a) in assign.iter().enumerate() {
            sums.row_mut(a).scaled_add(1.0, &frames.row(i));
            counts[a] += 1;
        }
        for k in 0..c {
            if counts[k] > 0 {
                centroids.row_mut(k).assign(&(&sums.row(k) / counts[k] as f64));
            }
        }
    }
    let global_mean = frames.mean_axis(Axis(0)).expect("frames");
    let global_var = frames.var_axis(Axis(0), 0.0).mapv(|v| v.max(VARIANCE_FLOOR));
    let mut counts = vec![0usize; c];
    let mut sq = Array2::<f64>::zeros((c, d));
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        let diff = &frames.row(i) - &centroids.row(a);
        sq.row_mut(a).scaled_add(1.0, &diff.mapv(|v| v * v));
    }
    let mut variances = Array2::zeros((c, d));
    let mut weights = vec![0.0; c];
    for k in 0..c {
        if counts[k] >= 2 {
            variances
                .row_mut(k)
                .assign(&(&sq.row(k) / counts[k] as f64).mapv(|v| v.max(VARIANCE_FLOOR)));
        } else {
            variances.row_mut(k).assign(&global_var);
            if counts[k] == 0 {
                centroids.row_mut(k).assign(&global_mean);
            }
        }
        // keep every component alive with at least one frame's worth of weight
        weights[k] = counts[k].max(1) as f64;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel {
        weights,
        means: centroids,
        variances,
    }
}

pub fn train_ubm(frames: ArrayView2<f64>, cfg: &UbmConfig) -> Result<UbmTraining> {
    let c = cfg.n_components;
    let n = frames.nrows();
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if n < 10 * c {
        return Err(Error::InsufficientFrames { got: n, need: 10 * c });
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training frame".into()));
    }
    let mut model = kmeans_init(frames, c, cfg.seed);
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let (gamma, ll) = responsibilities(&model, frames);
        history.push(ll / n as f64);
        if it == cfg.iterations {
            break;
        }
        let (occ, f) = first_order(&gamma, frames);
        let mut means = model.means.clone();
        for k in 0..c {
            if occ[k] > 0.0 {
                means.row_mut(k).assign(&(&f.row(k) / occ[k]));
            }
        }
        let s = centred_second_order(&gamma, frames, &means);
        let mut variances = model.variances.clone();
        for k in 0..c {
            if occ[k] > 0.0 {
                variances
                    .row_mut(k)
                    .assign(&(&s.row(k) / occ[k]).mapv(|v| v.max(VARIANCE_FLOOR)));
            }
        }
        let total: f64 = occ.sum();
        let weights = occ.iter().map(|o| o / total).collect();
        model = GmmModel {
            weights,
            means,
            variances,
        };
        log::debug!("em iteration {}: mean log-likelihood {:.6}", it + 1, history[it]);
    }
    Ok(UbmTraining {
        model,
        log_likelihood: history,
    })
}

/// Relevance-MAP adaptation of the UBM means; weights and variances are
/// copied.
pub fn map_adapt_means(ubm: &GmmModel, frames: ArrayView2<f64>, relevance: f64) -> Result<GmmModel> {
    ubm.check_dim(frames.ncols())?;
    if frames.nrows() == 0 {
        return Err(Error::NoFramesSelected);
    }
    if !(relevance >= 0.0) {
        return Err(Error::InvalidArgument(format!("relevance factor {relevance}")));
    }
    let (gamma, _) = responsibilities(ubm, frames);
    let (occ, f) = first_order(&gamma, frames);
    let mut means = ubm.means.clone();
    for k in 0..ubm.n_components() {
        let n = occ[k];
        if n > 0.0 {
            let alpha = n / (n + relevance);
            let e = &f.row(k) / n;
            let m = &e * alpha + &ubm.means.row(k) * (1.0 - alpha);
            means.row_mut(k).assign(&m);
        }
    }
    Ok(GmmModel {
        weights: ubm.weights.clone(),
        means,
        variances: ubm.variances.clone(),
    })
}

/// Mean per-frame log-likelihood ratio of the speech frames of `test`.
pub fn score_trial(enroll: &GmmModel, ubm: &GmmModel, test: &FeatureMatrix) -> Result<f64> {
    score_frames(enroll, ubm, test.speech_frames().view())
}

pub fn score_frames(enroll: &GmmModel, ubm: &GmmModel, frames: ArrayView2<f64>) -> Result<f64> {
    if enroll.dim() != ubm.dim() || enroll.n_components() != ubm.n_components() {
        return Err(Error::DimensionMismatch("enrolment model does not match the UBM".into()));
    }
    if frames.nrows() == 0 {
        return Err(Error::NoFramesSelected);
    }
    let a = enroll.frame_log_likelihoods(frames)?;
    let b = ubm.frame_log_likelihoods(frames)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
}
