//! Signal-processing primitives shared by the rest of the crate: pre-emphasis,
//! framing, windowing, short-time power spectra and the orthonormal DCT-II.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// A mono utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub id: String,
}

impl AudioSegment {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
            id: id.into(),
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Geometry of a framed signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub frame_len: usize,
    pub hop: usize,
    pub n_frames: usize,
}

impl FrameGrid {
    /// Frame geometry for `n_samples` at the given rate. Durations are rounded
    /// to the nearest sample.
    pub fn new(n_samples: usize, sample_rate_hz: u32, frame_ms: f64, hop_ms: f64) -> Result<Self> {
        if !(hop_ms > 0.0 && frame_ms >= hop_ms) {
            return Err(Error::InvalidArgument(format!(
                "need frame_ms >= hop_ms > 0, got {frame_ms}/{hop_ms}"
            )));
        }
        let sr = sample_rate_hz as f64;
        let frame_len = (frame_ms * sr / 1000.0).round() as usize;
        let hop = (hop_ms * sr / 1000.0).round() as usize;
        if hop == 0 || frame_len < hop {
            return Err(Error::InvalidArgument(format!(
                "frame geometry rounds to frame_len={frame_len}, hop={hop}"
            )));
        }
        if n_samples < frame_len {
            return Err(Error::TooShort {
                samples: n_samples,
                frame_len,
            });
        }
        Ok(Self {
            frame_len,
            hop,
            n_frames: 1 + (n_samples - frame_len) / hop,
        })
    }
}

/// Short-time power spectra, one row per frame over bins `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: Array2<f64>,
    pub n_fft: usize,
    pub sample_rate_hz: u32,
}

impl PowerSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.n_fft as f64
    }

    /// Natural-log power with a small floor, the representation PCA filter
    /// learning works on.
    pub fn log_power(&self) -> Array2<f64> {
        self.frames.mapv(|p| (p + LOG_FLOOR).ln())
    }
}

/// Floor added before taking logarithms of energies.
pub const LOG_FLOOR: f64 = 1e-12;

/// Number of bins in a one-sided spectrum of length `n_fft`.
pub fn n_bins(n_fft: usize) -> usize {
    n_fft / 2 + 1
}

/// First-order pre-emphasis `y[n] = x[n] - alpha * x[n-1]`, with `y[0] = x[0]`.
pub fn pre_emphasize(x: &AudioSegment, alpha: f64) -> Result<AudioSegment> {
    if x.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "pre-emphasis coefficient {alpha} outside [0, 1)"
        )));
    }
    let s = &x.samples;
    let mut y = Vec::with_capacity(s.len());
    y.push(s[0]);
    y.extend(s.windows(2).map(|w| w[1] - alpha * w[0]));
    Ok(AudioSegment {
        samples: y,
        sample_rate_hz: x.sample_rate_hz,
        id: x.id.clone(),
    })
}

/// Slices the signal into overlapping frames. The trailing partial frame is
/// dropped.
pub fn frame_signal(x: &AudioSegment, frame_ms: f64, hop_ms: f64) -> Result<(FrameGrid, Array2<f64>)> {
    if x.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let grid = FrameGrid::new(x.samples.len(), x.sample_rate_hz, frame_ms, hop_ms)?;
    let frames = Array2::from_shape_fn((grid.n_frames, grid.frame_len), |(i, n)| {
        x.samples[i * grid.hop + n]
    });
    Ok((grid, frames))
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2πm/(n-1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    match n {
        0 => Err(Error::InvalidArgument("window length must be >= 1".into())),
        1 => Ok(vec![1.0]),
        _ => {
            let denom = (n - 1) as f64;
            Ok((0..n)
                .map(|m| 0.54 - 0.46 * (2.0 * PI * m as f64 / denom).cos())
                .collect())
        }
    }
}

/// Smallest power of two that holds a frame of `frame_len` samples.
pub fn fft_len_for(frame_len: usize) -> usize {
    frame_len.max(1).next_power_of_two()
}

/// `|FFT(window ⊙ frame)|²` for every frame, zero-padded to `n_fft`.
pub fn power_spectrum(
    frames: ArrayView2<f64>,
    n_fft: usize,
    window: &[f64],
    sample_rate_hz: u32,
) -> Result<PowerSpectrogram> {
    let frame_len = frames.ncols();
    if n_fft < frame_len {
        return Err(Error::FftTooShort { n_fft, frame_len });
    }
    if !n_fft.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "n_fft {n_fft} is not a power of two"
        )));
    }
    if window.len() != frame_len {
        return Err(Error::DimensionMismatch(format!(
            "window length {} != frame length {frame_len}",
            window.len()
        )));
    }
    let k = n_bins(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n_fft];
    let mut out = Array2::<f64>::zeros((frames.nrows(), k));
    for (frame, mut row) in frames.rows().into_iter().zip(out.rows_mut()) {
        for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(window)) {
            *b = Complex::new(s * w, 0.0);
        }
        buf[frame_len..].fill(Complex::default());
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in row.iter_mut().zip(&buf[..k]) {
            *o = c.norm_sqr();
        }
    }
    Ok(PowerSpectrogram {
        frames: out,
        n_fft,
        sample_rate_hz,
    })
}

/// Orthonormal DCT-II basis: row `p` holds `s(p)·cos(π p (q + ½) / Q)`.
///
/// Precomputing this matrix is the fast path when many frames share `Q`.
#[derive(Debug, Clone)]
pub struct DctBasis {
    q: usize,
    n_out: usize,
    basis: Vec<f64>,
}

impl DctBasis {
    pub fn new(q: usize, n_out: usize) -> Result<Self> {
        if q == 0 || n_out == 0 || n_out > q {
            return Err(Error::InvalidArgument(format!(
                "DCT needs 1 <= n_out <= Q, got n_out={n_out}, Q={q}"
            )));
        }
        let qf = q as f64;
        let mut basis = Vec::with_capacity(n_out * q);
        for p in 0..n_out {
            let s = if p == 0 { (1.0 / qf).sqrt() } else { (2.0 / qf).sqrt() };
            basis.extend((0..q).map(|i| s * (PI * p as f64 * (i as f64 + 0.5) / qf).cos()));
        }
        Ok(Self { q, n_out, basis })
    }

    pub fn len_in(&self) -> usize {
        self.q
    }

    pub fn len_out(&self) -> usize {
        self.n_out
    }

    /// Forward transform into `out` (length `n_out`).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.q);
        for (o, row) in out.iter_mut().zip(self.basis.chunks_exact(self.q)) {
            *o = row.iter().zip(v).map(|(b, x)| b * x).sum();
        }
    }

    /// Transpose of the forward transform; inverts it when `n_out == Q`.
    pub fn apply_inverse(&self, c: &[f64]) -> Vec<f64> {
        debug_assert_eq!(c.len(), self.n_out);
        let mut v = vec![0.0; self.q];
        for (ci, row) in c.iter().zip(self.basis.chunks_exact(self.q)) {
            for (vi, b) in v.iter_mut().zip(row) {
                *vi += ci * b;
            }
        }
        v
    }
}

/// Orthonormal DCT-II of `v`, keeping the first `n_out` coefficients.
pub fn dct_ii_ortho(v: &[f64], n_out: usize) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("DCT of empty vector".into()));
    }
    if n_out > v.len() {
        return Err(Error::InvalidArgument(format!(
            "n_out {n_out} exceeds input length {}",
            v.len()
        )));
    }
    let basis = DctBasis::new(v.len(), n_out)?;
    let mut out = vec![0.0; n_out];
    basis.apply(v, &mut out);
    Ok(out)
}

/// Inverse of the full-length orthonormal DCT-II (an orthonormal DCT-III).
pub fn idct_ii_ortho(c: &[f64]) -> Result<Vec<f64>> {
    let basis = DctBasis::new(c.len(), c.len())?;
    Ok(basis.apply_inverse(c))
}
