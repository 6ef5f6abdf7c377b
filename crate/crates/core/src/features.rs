//! Cepstral feature extraction: filterbank log-energies, DCT, RASTA, deltas
//! and CMVN, plus the shared spectral front end.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    fft_len_for, frame_signal, hamming_window, power_spectrum, pre_emphasize, AudioSegment, DctBasis,
    FrameGrid, PowerSpectrogram, LOG_FLOOR,
};
use crate::error::{Error, Result};
use crate::filterbank::Filterbank;
use crate::sad::{bi_gaussian_sad, frame_log_energy, FrameMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_filters: usize,
    /// Cepstra `c1..=c_{n_ceps}`; `c0` is always dropped.
    pub n_ceps: usize,
    pub delta_window: usize,
    pub rasta: bool,
    pub cmvn: bool,
    pub preemph: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            hop_ms: 10.0,
            n_filters: 20,
            n_ceps: 19,
            delta_window: 2,
            rasta: true,
            cmvn: true,
            preemph: 0.97,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ceps == 0 || self.n_ceps + 1 > self.n_filters {
            return Err(Error::InvalidArgument(format!(
                "n_ceps must be in 1..={}, got {}",
                self.n_filters.saturating_sub(1),
                self.n_ceps
            )));
        }
        if self.delta_window == 0 {
            return Err(Error::InvalidArgument("delta_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        3 * self.n_ceps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    /// `n_frames × 3·n_ceps`, columns ordered `[static | Δ | ΔΔ]`.
    pub vectors: Array2<f64>,
    pub mask: FrameMask,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Copies of the speech frames only.
    pub fn speech_frames(&self) -> Array2<f64> {
        let rows: Vec<usize> = self.mask.selected().collect();
        self.vectors.select(Axis(0), &rows)
    }
}

/// Everything computed from one utterance before the filterbank is applied.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub grid: FrameGrid,
    /// Frames of the signal before pre-emphasis; used for SAD and pitch.
    pub raw_frames: Array2<f64>,
    /// Power spectra of the pre-emphasised, Hamming-windowed frames.
    pub spec: PowerSpectrogram,
    pub sad: FrameMask,
}

pub fn analyze(x: &AudioSegment, cfg: &FeatureConfig) -> Result<Frontend> {
    let (grid, raw_frames) = frame_signal(x, cfg.frame_ms, cfg.hop_ms)?;
    let emphasized = pre_emphasize(x, cfg.preemph)?;
    let (_, frames) = frame_signal(&emphasized, cfg.frame_ms, cfg.hop_ms)?;
    let window = hamming_window(grid.frame_len)?;
    let spec = power_spectrum(frames.view(), fft_len_for(grid.frame_len), &window, x.sample_rate_hz)?;
    let sad = bi_gaussian_sad(&frame_log_energy(raw_frames.view()))?;
    Ok(Frontend {
        grid,
        raw_frames,
        spec,
        sad,
    })
}

/// `E[i][j] = ln(Σ_k P[i][k]·H[j][k] + ε)`.
pub fn filterbank_log_energies(spec: &PowerSpectrogram, fb: &Filterbank) -> Result<Array2<f64>> {
    if spec.n_bins() != fb.n_bins() {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} bins, filterbank {}",
            spec.n_bins(),
            fb.n_bins()
        )));
    }
    Ok(spec.frames.dot(&fb.responses.t()).mapv(|e| (e + LOG_FLOOR).ln()))
}

/// Orthonormal DCT of each row, keeping `c1..=c_{n_ceps}`.
pub fn cepstra(log_energies: ArrayView2<f64>, n_ceps: usize) -> Result<Array2<f64>> {
    let q = log_energies.ncols();
    if n_ceps == 0 || n_ceps + 1 > q {
        return Err(Error::InvalidArgument(format!(
            "n_ceps {n_ceps} needs at least {} filters, have {q}",
            n_ceps + 1
        )));
    }
    let basis = DctBasis::new(q, n_ceps + 1)?;
    let mut out = Array2::zeros((log_energies.nrows(), n_ceps));
    let mut c = vec![0.0; n_ceps + 1];
    let mut row_buf = vec![0.0; q];
    for (row, mut o) in log_energies.rows().into_iter().zip(out.rows_mut()) {
        row_buf.iter_mut().zip(row.iter()).for_each(|(b, &v)| *b = v);
        basis.apply(&row_buf, &mut c);
        o.iter_mut().zip(&c[1..]).for_each(|(o, &v)| *o = v);
    }
    Ok(out)
}

const RASTA_NUM: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
const RASTA_POLE: f64 = 0.98;

/// Band-pass `0.1·(2 + z⁻¹ − z⁻³ − 2z⁻⁴) / (1 − 0.98 z⁻¹)` along each column,
/// starting from a zero state.
pub fn rasta_filter(trajectories: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(trajectories.raw_dim());
    for (x, mut y) in trajectories.columns().into_iter().zip(out.columns_mut()) {
        let mut prev = 0.0;
        for n in 0..x.len() {
            let mut acc = RASTA_POLE * prev;
            for (t, b) in RASTA_NUM.iter().enumerate() {
                if n >= t {
                    acc += b * x[n - t];
                }
            }
            y[n] = acc;
            prev = acc;
        }
    }
    out
}

/// Regression deltas with window `w`, edges replicated.
pub fn deltas(base: ArrayView2<f64>, w: usize) -> Array2<f64> {
    let n = base.nrows();
    let mut out = Array2::zeros(base.raw_dim());
    if n == 0 {
        return out;
    }
    let norm = 2.0 * (1..=w).map(|t| (t * t) as f64).sum::<f64>();
    let last = n as isize - 1;
    let at = |i: isize| i.clamp(0, last) as usize;
    for i in 0..n {
        let ii = i as isize;
        let mut row = out.row_mut(i);
        for t in 1..=w {
            let ti = t as isize;
            let (hi, lo) = (base.row(at(ii + ti)), base.row(at(ii - ti)));
            row.iter_mut()
                .zip(hi.iter().zip(lo.iter()))
                .for_each(|(o, (h, l))| *o += t as f64 * (h - l));
        }
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// `[base | Δ | ΔΔ]`.
pub fn append_deltas(base: ArrayView2<f64>, w: usize) -> Array2<f64> {
    let d1 = deltas(base, w);
    let d2 = deltas(d1.view(), w);
    ndarray::concatenate(Axis(1), &[base, d1.view(), d2.view()]).expect("row counts agree")
}

/// Per-column standardisation with statistics from the masked frames,
/// applied to every frame. Columns without variance are only centred.
pub fn cmvn(features: ArrayView2<f64>, mask: &FrameMask) -> Result<Array2<f64>> {
    if mask.n_frames() != features.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} frames, features {}",
            mask.n_frames(),
            features.nrows()
        )));
    }
    let rows: Vec<usize> = mask.selected().collect();
    if rows.len() < 2 {
        return Err(Error::InsufficientFrames {
            got: rows.len(),
            need: 2,
        });
    }
    let sel = features.select(Axis(0), &rows);
    let mean = sel.mean_axis(Axis(0)).expect("non-empty");
    let std = sel.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    Ok((&features - &mean) / &std)
}

/// Everything after the log-energy stage; shared by every filter shape.
pub fn features_from_log_energies(
    id: &str,
    log_energies: ArrayView2<f64>,
    mask: FrameMask,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let mut c = cepstra(log_energies, cfg.n_ceps)?;
    if cfg.rasta {
        c = rasta_filter(c.view());
    }
    let mut v = append_deltas(c.view(), cfg.delta_window);
    if cfg.cmvn {
        v = cmvn(v.view(), &mask)?;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invariant(format!("non-finite feature in {id}")));
    }
    Ok(FeatureMatrix {
        utterance_id: id.to_string(),
        vectors: v,
        mask,
    })
}

pub fn extract_features(x: &AudioSegment, fb: &Filterbank, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if x.sample_rate_hz != fb.layout.sample_rate_hz {
        return Err(Error::DimensionMismatch(format!(
            "audio at {} Hz, filterbank built for {} Hz",
            x.sample_rate_hz, fb.layout.sample_rate_hz
        )));
    }
    let front = analyze(x, cfg)?;
    let e = filterbank_log_energies(&front.spec, fb)?;
    features_from_log_energies(&x.id, e.view(), front.sad, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{place_filter_edges, triangular_responses};
    use crate::scale::{mel_warping_scale, MEL_KNOTS};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn mel_bank(sr: u32, n_fft: usize, q: usize) -> Filterbank {
        let s = mel_warping_scale(sr as f64 / 2.0, MEL_KNOTS).unwrap();
        triangular_responses(&place_filter_edges(&s, q, n_fft, sr).unwrap())
    }

    /// Vowel-like signal with a silent lead-in so SAD has two classes.
    fn vowel(sr: u32, secs: f64, seed: u64) -> AudioSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * sr as f64) as usize;
        let x = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                let noise = 1e-4 * rng.random_range(-1.0..1.0);
                if t < 0.5 {
                    noise
                } else {
                    let f0 = 120.0 + 10.0 * (2.0 * PI * 3.0 * t).sin();
                    let n_harm = (0.45 * sr as f64 / f0) as usize;
                    (1..=n_harm)
                        .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
                        .sum::<f64>()
                        * (1.0 + 0.3 * (2.0 * PI * 4.0 * t).sin())
                        + noise
                }
            })
            .collect();
        AudioSegment::new("vowel", x, sr)
    }

    #[test]
    fn log_energy_examples() {
        let fb = mel_bank(8000, 256, 10);
        let spec = PowerSpectrogram {
            frames: Array2::ones((2, 129)),
            n_fft: 256,
            sample_rate_hz: 8000,
        };
        let e = filterbank_log_energies(&spec, &fb).unwrap();
        for j in 0..10 {
            let s: f64 = fb.responses.row(j).sum();
            assert_abs_diff_eq!(e[[0, j]], (s + LOG_FLOOR).ln(), epsilon = 1e-12);
        }
        let zero = PowerSpectrogram {
            frames: Array2::zeros((1, 129)),
            ..spec.clone()
        };
        let z = filterbank_log_energies(&zero, &fb).unwrap();
        assert!(z.iter().all(|&v| v == LOG_FLOOR.ln()));
        let double = PowerSpectrogram {
            frames: spec.frames.mapv(|v| 2.0 * v),
            ..spec.clone()
        };
        let d = filterbank_log_energies(&double, &fb).unwrap();
        for (a, b) in d.iter().zip(e.iter()) {
            assert_abs_diff_eq!(a - b, 2f64.ln(), epsilon = 1e-9);
        }
        let wrong = PowerSpectrogram {
            frames: Array2::ones((1, 65)),
            n_fft: 128,
            sample_rate_hz: 8000,
        };
        assert!(filterbank_log_energies(&wrong, &fb).is_err());
    }

    #[test]
    fn cepstra_examples() {
        let flat = Array2::from_elem((3, 20), -4.2);
        let c = cepstra(flat.view(), 19).unwrap();
        assert_eq!(c.dim(), (3, 19));
        assert!(c.iter().all(|v| v.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Array2::from_shape_fn((5, 20), |_| rng.random_range(-10.0..0.0));
        let shifted = e.mapv(|v| v + 3.3);
        let (a, b) = (cepstra(e.view(), 19).unwrap(), cepstra(shifted.view(), 19).unwrap());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert!(cepstra(e.view(), 20).is_err());
    }

    #[test]
    fn rasta_rejects_dc() {
        let x = Array2::from_elem((600, 2), 5.0);
        let y = rasta_filter(x.view());
        for n in 500..600 {
            assert!(y[[n, 0]].abs() < 1e-3 * 5.0, "y[{n}] = {}", y[[n, 0]]);
        }
        assert!(rasta_filter(Array2::zeros((10, 3)).view()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasta_impulse_matches_recursion() {
        let mut x = Array2::zeros((40, 1));
        x[[0, 0]] = 1.0;
        let y = rasta_filter(x.view());
        // impulse response: h[n] = b[n] + 0.98 h[n-1]
        let b = [0.2, 0.1, 0.0, -0.1, -0.2];
        let mut h = 0.0;
        for n in 0..40 {
            h = 0.98 * h + if n < 5 { b[n] } else { 0.0 };
            assert_abs_diff_eq!(y[[n, 0]], h, epsilon = 1e-12);
        }
    }

    #[test]
    fn delta_examples() {
        let c = Array2::from_elem((7, 3), 2.5);
        let d = append_deltas(c.view(), 2);
        assert_eq!(d.ncols(), 9);
        assert!(d.slice(ndarray::s![.., 3..]).iter().all(|&v| v == 0.0));

        let ramp = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let d = deltas(ramp.view(), 2);
        for i in 2..8 {
            assert_abs_diff_eq!(d[[i, 0]], 1.0, epsilon = 1e-12);
        }
        // replicated edge: (1·(1-0) + 2·(2-0)) / 10
        assert_abs_diff_eq!(d[[0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cmvn_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((50, 4), |(_, j)| if j == 3 { 7.0 } else { rng.random_range(-3.0..9.0) });
        let mask = FrameMask {
            flags: (0..50).map(|i| i % 3 != 0).collect(),
        };
        let y = cmvn(x.view(), &mask).unwrap();
        let rows: Vec<usize> = mask.selected().collect();
        let sel = y.select(Axis(0), &rows);
        let m: Array1<f64> = sel.mean_axis(Axis(0)).unwrap();
        let v = sel.var_axis(Axis(0), 0.0);
        for j in 0..3 {
            assert_abs_diff_eq!(m[j], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(v[j], 1.0, epsilon = 1e-9);
        }
        assert!(y.column(3).iter().all(|&v| v == 0.0));
        let again = cmvn(y.view(), &mask).unwrap();
        for (a, b) in again.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let one = FrameMask {
            flags: (0..50).map(|i| i == 4).collect(),
        };
        assert!(cmvn(x.view(), &one).is_err());
    }

    #[test]
    fn three_second_vowel() {
        let x = vowel(16000, 3.0, 1);
        let fb = mel_bank(16000, 512, 20);
        let f = extract_features(&x, &fb, &FeatureConfig::default()).unwrap();
        // 1 + (48000 - 320) / 160
        assert_eq!(f.vectors.dim(), (299, 57));
        assert_eq!(f.mask.n_frames(), 299);
        assert!(f.vectors.iter().all(|v| v.is_finite()));
        let silent = f.mask.flags[..45].iter().filter(|&&s| s).count();
        let speech = f.mask.flags[55..].iter().filter(|&&s| s).count();
        assert!(silent <= 2 && speech >= 240, "{silent} {speech}");

        let g = extract_features(&x, &fb, &FeatureConfig::default()).unwrap();
        assert_eq!(f, g);
        let no_rasta = FeatureConfig {
            rasta: false,
            ..Default::default()
        };
        assert_ne!(extract_features(&x, &fb, &no_rasta).unwrap().vectors, f.vectors);
    }

    #[test]
    fn gain_leaves_cepstra_unchanged() {
        let x = vowel(16000, 1.5, 2);
        let fb = mel_bank(16000, 512, 20);
        let cfg = FeatureConfig::default();
        let base = analyze(&x, &cfg).unwrap();
        let c0 = cepstra(filterbank_log_energies(&base.spec, &fb).unwrap().view(), 19).unwrap();
        for gain in [0.5, 3.0] {
            let y = AudioSegment::new("g", x.samples.iter().map(|v| v * gain).collect(), 16000);
            let fr = analyze(&y, &cfg).unwrap();
            let c = cepstra(filterbank_log_energies(&fr.spec, &fb).unwrap().view(), 19).unwrap();
            // on speech frames the energy floor is negligible
            for i in base.sad.selected() {
                for (a, b) in c.row(i).iter().zip(c0.row(i).iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = FeatureConfig {
            n_ceps: 20,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(FeatureConfig::default().dim(), 57);
    }
}
