//! Frequency warping scales.
//!
//! The data-driven scale comes from the corpus long-term average spectrum
//! (LTAS): its log is split into `Q` contiguous bands of (nearly) equal area,
//! and the band midpoints become interpolation knots of a monotone map from
//! Hz onto `[0, 1]`. The closed-form mel scale is provided for comparison.

use serde::{Deserialize, Serialize};

use crate::dsp::PowerSpectrogram;
use crate::error::{Error, Result};
use crate::sad::FrameMask;

/// Long-term average power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Ltas {
    pub values: Vec<f64>,
    pub n_frames_accumulated: usize,
    pub bin_hz: f64,
}

impl Ltas {
    /// Folds in another LTAS of the same utterance stream, weighting each side
    /// by its frame count. Equivalent to one pass over the concatenated frames.
    pub fn merge(&mut self, other: &Ltas) -> Result<()> {
        check_compatible(self, other)?;
        let n1 = self.n_frames_accumulated as f64;
        let n2 = other.n_frames_accumulated as f64;
        let n = n1 + n2;
        if n == 0.0 {
            return Ok(());
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = (*a * n1 + b * n2) / n;
        }
        self.n_frames_accumulated += other.n_frames_accumulated;
        Ok(())
    }
}

fn check_compatible(a: &Ltas, b: &Ltas) -> Result<()> {
    if a.values.len() != b.values.len() || a.bin_hz != b.bin_hz {
        return Err(Error::DimensionMismatch(format!(
            "LTAS with {} bins @ {} Hz vs {} bins @ {} Hz",
            a.values.len(),
            a.bin_hz,
            b.values.len(),
            b.bin_hz
        )));
    }
    Ok(())
}

/// Mean power spectrum over the frames selected by `mask`.
pub fn compute_ltas(spec: &PowerSpectrogram, mask: &FrameMask) -> Result<Ltas> {
    if mask.n_frames() != spec.n_frames() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} frames, spectrogram {}",
            mask.n_frames(),
            spec.n_frames()
        )));
    }
    let mut values = vec![0.0; spec.n_bins()];
    let mut n = 0usize;
    for i in mask.selected() {
        for (v, p) in values.iter_mut().zip(spec.frames.row(i)) {
            *v += p;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoFramesSelected);
    }
    values.iter_mut().for_each(|v| *v /= n as f64);
    Ok(Ltas {
        values,
        n_frames_accumulated: n,
        bin_hz: spec.bin_hz(),
    })
}

/// Unweighted mean over utterances: each LTAS counts once whatever its length.
pub fn average_ltas(list: &[Ltas]) -> Result<Ltas> {
    let first = list
        .first()
        .ok_or_else(|| Error::InvalidArgument("no LTAS to average".into()))?;
    let mut values = vec![0.0; first.values.len()];
    let mut frames = 0;
    for l in list {
        check_compatible(first, l)?;
        for (v, x) in values.iter_mut().zip(&l.values) {
            *v += x;
        }
        frames += l.n_frames_accumulated;
    }
    let n = list.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(Ltas {
        values,
        n_frames_accumulated: frames,
        bin_hz: first.bin_hz,
    })
}

/// Contiguous bands `(first_bin, last_bin)` (inclusive) and their areas.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPartition {
    pub bands: Vec<(usize, usize)>,
    pub areas: Vec<f64>,
}

impl BandPartition {
    pub fn spread(&self) -> f64 {
        let max = self.areas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.areas.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    fn from_ends(l: &[f64], ends: &[usize]) -> Self {
        let mut bands = Vec::with_capacity(ends.len());
        let mut start = 0;
        for &e in ends {
            bands.push((start, e));
            start = e + 1;
        }
        let areas = bands.iter().map(|&(a, b)| l[a..=b].iter().sum()).collect();
        Self { bands, areas }
    }
}

/// Offset added after shifting the log spectrum to a zero minimum, so every
/// bin carries strictly positive area.
pub const LOG_SHIFT: f64 = 1e-6;

/// `log P̄[k] - min log P̄ + δ`: the non-negative log spectrum that gets
/// partitioned.
pub fn shifted_log_spectrum(ltas: &Ltas) -> Vec<f64> {
    let logs: Vec<f64> = ltas.values.iter().map(|&v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let min = logs.iter().copied().fold(f64::INFINITY, f64::min);
    logs.into_iter().map(|v| v - min + LOG_SHIFT).collect()
}

/// Splits the LTAS log spectrum into `q` bands of approximately equal area.
pub fn equal_area_partition(avg_ltas: &Ltas, q: usize) -> Result<BandPartition> {
    partition_log_spectrum(&shifted_log_spectrum(avg_ltas), q)
}

/// Equal-area partition of an already non-negative spectrum `l`.
///
/// A cumulative scan closes band `j` at the first bin where the running sum
/// reaches `j·total/q`. That scan alone can leave bands whose areas differ
/// by more than one bin's worth; in that case the partition is rebuilt so
/// every band area falls in a window `[lo, lo + max_k l[k]]`.
pub fn partition_log_spectrum(l: &[f64], q: usize) -> Result<BandPartition> {
    let k = l.len();
    if q < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bands, got {q}")));
    }
    if q > k {
        return Err(Error::MoreBandsThanBins { bands: q, bins: k });
    }
    if l.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "partition input must be finite and strictly positive".into(),
        ));
    }
    let greedy = BandPartition::from_ends(l, &greedy_ends(l, q));
    let bin_max = l.iter().copied().fold(0.0, f64::max);
    // summation order alone can push an exact tie past the bound
    let tol = 1e-12 * l.iter().sum::<f64>();
    if greedy.spread() <= bin_max + tol {
        return Ok(greedy);
    }
    match window_repair(l, q, bin_max) {
        Some(ends) => Ok(BandPartition::from_ends(l, &ends)),
        None => {
            log::warn!("equal-area repair found no window; keeping cumulative split");
            Ok(greedy)
        }
    }
}

fn greedy_ends(l: &[f64], q: usize) -> Vec<usize> {
    let k = l.len();
    let total: f64 = l.iter().sum();
    let slack = 1e-12 * total;
    let mut ends = Vec::with_capacity(q);
    let mut cum = 0.0;
    let mut bin = 0;
    for j in 1..q {
        let target = j as f64 * total / q as f64;
        // leave at least one bin for each remaining band
        let last_allowed = k - 1 - (q - j);
        loop {
            cum += l[bin];
            if cum >= target - slack || bin == last_allowed {
                break;
            }
            bin += 1;
        }
        ends.push(bin);
        bin += 1;
    }
    ends.push(k - 1);
    ends
}

/// Looks for band ends with every area in `[lo, lo + width]`, trying lower
/// bounds from the mean band area downward.
fn window_repair(l: &[f64], q: usize, width: f64) -> Option<Vec<usize>> {
    let k = l.len();
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(0.0);
    for &v in l {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = prefix[k];
    let mean = total / q as f64;
    let eps = 1e-12 * total;
    let mut candidates: Vec<f64> = (0..k)
        .flat_map(|p| (p + 1..=k).map(move |e| (p, e)))
        .map(|(p, e)| prefix[e] - prefix[p])
        .filter(|&a| a <= mean + eps && a >= mean - width - eps)
        .collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    candidates
        .into_iter()
        .find_map(|lo| window_partition(&prefix, q, lo - eps, lo + width + eps))
}

/// Exact feasibility search over prefix positions: `reach[j][p]` is true when
/// the first `p` bins split into `j` bands with areas in `[lo, hi]`.
fn window_partition(prefix: &[f64], q: usize, lo: f64, hi: f64) -> Option<Vec<usize>> {
    let k = prefix.len() - 1;
    let mut reach = vec![vec![false; k + 1]; q + 1];
    reach[0][0] = true;
    for j in 1..=q {
        // running count of reachable starts for O(1) range queries
        let mut count = vec![0usize; k + 2];
        for p in 0..=k {
            count[p + 1] = count[p] + usize::from(reach[j - 1][p]);
        }
        for e in 1..=k {
            let (a, b) = start_range(prefix, e, lo, hi);
            if a <= b && count[b + 1] > count[a] {
                reach[j][e] = true;
            }
        }
    }
    if !reach[q][k] {
        return None;
    }
    let mut ends = vec![0; q];
    let mut e = k;
    for j in (1..=q).rev() {
        ends[j - 1] = e - 1;
        let (a, b) = start_range(prefix, e, lo, hi);
        e = (a..=b).rev().find(|&p| reach[j - 1][p])?;
    }
    Some(ends)
}

/// Starts `p < e` with `prefix[e] - prefix[p]` in `[lo, hi]`, as an inclusive
/// range (empty when `a > b`).
fn start_range(prefix: &[f64], e: usize, lo: f64, hi: f64) -> (usize, usize) {
    let head = &prefix[..e];
    // prefix[p] >= prefix[e] - hi
    let a = head.partition_point(|&c| c < prefix[e] - hi);
    // prefix[p] <= prefix[e] - lo
    let b = head.partition_point(|&c| c <= prefix[e] - lo);
    if b == 0 {
        (1, 0)
    } else {
        (a, b - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleKind {
    #[serde(rename = "mel")]
    Mel,
    #[serde(rename = "speech-based")]
    Speech,
    #[serde(rename = "speech-based-pitch")]
    SpeechPitch,
}

impl ScaleKind {
    pub const ALL: [ScaleKind; 3] = [ScaleKind::Mel, ScaleKind::Speech, ScaleKind::SpeechPitch];
}

/// Piecewise-linear monotone map from Hz onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpingScale {
    pub kind: ScaleKind,
    /// `(frequency_hz, warped)` pairs, strictly increasing in both.
    pub knots: Vec<(f64, f64)>,
}

impl WarpingScale {
    pub fn new(kind: ScaleKind, knots: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self { kind, knots };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        if k.len() < 2 {
            return Err(Error::DegenerateScale("fewer than two knots".into()));
        }
        if k[0] != (0.0, 0.0) {
            return Err(Error::DegenerateScale(format!("first knot {:?} is not (0, 0)", k[0])));
        }
        let last = k[k.len() - 1];
        if last.1 != 1.0 || !(last.0 > 0.0) {
            return Err(Error::DegenerateScale(format!("last knot {last:?} is not (nyquist, 1)")));
        }
        for (i, w) in k.windows(2).enumerate() {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(Error::DegenerateScale(format!(
                    "knots {i} and {} are not strictly increasing: {:?} -> {:?}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// Warped value of `f_hz`, clamped to the covered band.
    pub fn warp(&self, f_hz: f64) -> f64 {
        interpolate(&self.knots, f_hz, |k| k.0, |k| k.1)
    }

    /// Frequency whose warped value is `w`.
    pub fn unwarp(&self, w: f64) -> f64 {
        interpolate(&self.knots, w, |k| k.1, |k| k.0)
    }
}

fn interpolate(
    knots: &[(f64, f64)],
    x: f64,
    from: impl Fn(&(f64, f64)) -> f64,
    to: impl Fn(&(f64, f64)) -> f64,
) -> f64 {
    let first = &knots[0];
    let last = &knots[knots.len() - 1];
    if x <= from(first) {
        return to(first);
    }
    if x >= from(last) {
        return to(last);
    }
    let i = knots.partition_point(|k| from(k) <= x);
    let (a, b) = (&knots[i - 1], &knots[i]);
    let t = (x - from(a)) / (from(b) - from(a));
    to(a) + t * (to(b) - to(a))
}

/// Knots from a band partition: band `j` (1-based) has its midpoint mapped to
/// `(j - ½)/Q`, the centre of the `j`-th of `Q` equal slices of the warped
/// axis, bracketed by `(0, 0)` and `(nyquist, 1)`.
///
/// The `K` bins are read as `K` equal slices of `[0, nyquist]`, so band
/// `lo..=hi` covers `[lo, hi + 1]·nyquist/K` and its midpoint always lies
/// strictly inside the axis.
pub fn build_warping_scale(partition: &BandPartition, nyquist_hz: f64, kind: ScaleKind) -> Result<WarpingScale> {
    let Some(&(_, last)) = partition.bands.last() else {
        return Err(Error::DegenerateScale("empty partition".into()));
    };
    let slice_hz = nyquist_hz / (last + 1) as f64;
    let q = partition.bands.len() as f64;
    let mut knots = vec![(0.0, 0.0)];
    for (j, &(lo, hi)) in partition.bands.iter().enumerate() {
        let f = 0.5 * (lo + hi + 1) as f64 * slice_hz;
        knots.push((f, (j as f64 + 0.5) / q));
    }
    knots.push((nyquist_hz, 1.0));
    WarpingScale::new(kind, knots)
}

/// `2595 log10(1 + f/700)`.
pub fn mel(f_hz: f64) -> f64 {
    2595.0 * (1.0 + f_hz / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub const MEL_KNOTS: usize = 512;

/// Mel scale sampled at `n_knots` uniformly spaced frequencies and normalised
/// so the Nyquist frequency maps to 1.
pub fn mel_warping_scale(nyquist_hz: f64, n_knots: usize) -> Result<WarpingScale> {
    if !(nyquist_hz > 0.0) || n_knots < 2 {
        return Err(Error::InvalidArgument(format!(
            "mel scale needs nyquist > 0 and >= 2 knots, got {nyquist_hz}, {n_knots}"
        )));
    }
    let top = mel(nyquist_hz);
    let last = n_knots - 1;
    let knots = (0..n_knots)
        .map(|i| {
            if i == last {
                (nyquist_hz, 1.0)
            } else {
                let f = nyquist_hz * i as f64 / last as f64;
                (f, mel(f) / top)
            }
        })
        .collect();
    WarpingScale::new(ScaleKind::Mel, knots)
}

/// Uniform scale `W(f) = f / nyquist`.
pub fn linear_scale(nyquist_hz: f64, kind: ScaleKind) -> Result<WarpingScale> {
    WarpingScale::new(kind, vec![(0.0, 0.0), (nyquist_hz, 1.0)])
}
