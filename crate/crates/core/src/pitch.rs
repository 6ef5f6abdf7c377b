//! Voiced-frame detection. The scale learner only needs a voiced/unvoiced
//! decision per frame plus an f0, so estimators sit behind [`PitchEstimator`].

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dsp::{PowerSpectrogram, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::sad::{bi_gaussian_sad, frame_log_energy, FrameMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f_min: 50.0,
            f_max: 400.0,
            voicing_threshold: 0.5,
        }
    }
}

/// Per-frame estimate; `f0_hz` is `None` for unvoiced frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    pub f0_hz: Option<f64>,
    pub voicing_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PitchTrack {
    pub f0_hz: Vec<Option<f64>>,
    pub voicing_score: Vec<f64>,
}

impl PitchTrack {
    pub fn voiced(&self) -> FrameMask {
        FrameMask {
            flags: self.f0_hz.iter().map(Option::is_some).collect(),
        }
    }
}

pub trait PitchEstimator: Send + Sync {
    fn estimate(&self, frame: &[f64], sample_rate_hz: u32) -> PitchEstimate;

    fn track(&self, frames: ArrayView2<f64>, sample_rate_hz: u32) -> PitchTrack {
        let mut t = PitchTrack::default();
        for row in frames.rows() {
            let frame = row.to_vec();
            let e = self.estimate(&frame, sample_rate_hz);
            t.f0_hz.push(e.f0_hz);
            t.voicing_score.push(e.voicing_score);
        }
        t
    }
}

/// Normalised-autocorrelation estimator.
///
/// The period is taken from the shortest-lag local maximum whose correlation
/// is within 10% of the best one in the search band, which keeps exactly
/// periodic signals from locking onto a multiple of the true period.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutocorrelationPitch {
    pub config: PitchConfig,
}

const PEAK_FRACTION: f64 = 0.9;

fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let a = &x[..x.len() - lag];
    let b = &x[lag..];
    let mut num = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    for (&u, &v) in a.iter().zip(b) {
        num += u * v;
        ea += u * u;
        eb += v * v;
    }
    let den = (ea * eb).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl PitchEstimator for AutocorrelationPitch {
    fn estimate(&self, frame: &[f64], sample_rate_hz: u32) -> PitchEstimate {
        let cfg = &self.config;
        let unvoiced = |score: f64| PitchEstimate {
            f0_hz: None,
            voicing_score: score,
        };
        let n = frame.len();
        if n < 3 || frame.iter().map(|x| x * x).sum::<f64>() <= LOG_FLOOR {
            return unvoiced(0.0);
        }
        let sr = sample_rate_hz as f64;
        let lag_lo = ((sr / cfg.f_max).floor() as usize).max(1);
        let lag_hi = ((sr / cfg.f_min).floor() as usize).min(n - 1);
        if lag_hi <= lag_lo {
            return unvoiced(0.0);
        }
        // one lag of padding on each side for the peak test and interpolation
        let first = lag_lo.saturating_sub(1).max(1);
        let last = (lag_hi + 1).min(n - 1);
        let r: Vec<f64> = (first..=last).map(|lag| normalized_autocorr(frame, lag)).collect();
        let at = |lag: usize| r[lag - first];

        let (best_lag, best) = (lag_lo..=lag_hi)
            .map(|lag| (lag, at(lag)))
            .fold((lag_lo, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let score = best.clamp(0.0, 1.0);
        if best < cfg.voicing_threshold {
            return unvoiced(score);
        }
        let is_peak = |lag: usize| {
            let v = at(lag);
            (lag == first || at(lag - 1) <= v) && (lag == last || at(lag + 1) < v)
        };
        let lag = (lag_lo..=lag_hi)
            .find(|&lag| at(lag) >= PEAK_FRACTION * best && is_peak(lag))
            .unwrap_or(best_lag);

        let mut period = lag as f64;
        if lag > first && lag < last {
            let (l, c, rr) = (at(lag - 1), at(lag), at(lag + 1));
            let curv = l - 2.0 * c + rr;
            if curv < 0.0 {
                period += (0.5 * (l - rr) / curv).clamp(-0.5, 0.5);
            }
        }
        let f0 = (sr / period).clamp(cfg.f_min, cfg.f_max);
        PitchEstimate {
            f0_hz: Some(f0),
            voicing_score: score,
        }
    }
}

/// Convenience wrapper around the built-in estimator.
pub fn estimate_pitch(frame: &[f64], sample_rate_hz: u32, config: PitchConfig) -> Option<f64> {
    AutocorrelationPitch { config }
        .estimate(frame, sample_rate_hz)
        .f0_hz
}

/// Frames that pass SAD and carry a pitch estimate.
///
/// `frames` are the raw (unwindowed) frames the spectrogram was computed from.
pub fn voiced_mask(
    spec: &PowerSpectrogram,
    frames: ArrayView2<f64>,
    estimator: &dyn PitchEstimator,
) -> Result<FrameMask> {
    if spec.n_frames() != frames.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} frames, frame matrix {}",
            spec.n_frames(),
            frames.nrows()
        )));
    }
    let sad = bi_gaussian_sad(&frame_log_energy(frames))?;
    let mut flags = sad.flags;
    for (flag, row) in flags.iter_mut().zip(frames.rows()) {
        if *flag {
            let frame = row.to_vec();
            *flag = estimator.estimate(&frame, spec.sample_rate_hz).f0_hz.is_some();
        }
    }
    Ok(FrameMask { flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{fft_len_for, frame_signal, hamming_window, power_spectrum, AudioSegment};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(f0: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * f0 * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn sine_at_200_hz() {
        let f0 = estimate_pitch(&tone(200.0, 8000, 320), 8000, PitchConfig::default()).unwrap();
        assert!((f0 - 200.0).abs() <= 2.0, "{f0}");
    }

    #[test]
    fn tone_grid_within_two_percent() {
        for sr in [8000, 16000] {
            for f in [80.0, 120.0, 200.0, 300.0] {
                let n = (sr as usize) / 50; // 20 ms
                for phase in [0usize, 17, 53] {
                    let x: Vec<f64> = tone(f, sr, n + phase)[phase..].to_vec();
                    let got = estimate_pitch(&x, sr, PitchConfig::default())
                        .unwrap_or_else(|| panic!("{f} Hz at {sr} unvoiced"));
                    assert!((got - f).abs() <= 0.02 * f, "{f} Hz at {sr}: {got}");
                }
            }
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        assert_eq!(estimate_pitch(&[0.0; 320], 8000, PitchConfig::default()), None);
    }

    #[test]
    fn white_noise_is_unvoiced() {
        let mut voiced = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..320).map(|_| rng.random_range(-1.0..1.0)).collect();
            if estimate_pitch(&x, 8000, PitchConfig::default()).is_some() {
                voiced += 1;
            }
        }
        assert!(voiced <= 2, "{voiced} of 200 noise frames voiced");
    }

    #[test]
    fn amplitude_invariance() {
        let x = tone(137.0, 16000, 320);
        let base = estimate_pitch(&x, 16000, PitchConfig::default()).unwrap();
        for c in [0.01, 0.5, 3.0, 250.0] {
            let y: Vec<f64> = x.iter().map(|v| v * c).collect();
            let got = estimate_pitch(&y, 16000, PitchConfig::default()).unwrap();
            assert!((got - base).abs() <= 1e-9 * base, "{c}: {got} vs {base}");
        }
    }

    #[test]
    fn f0_stays_inside_search_band() {
        let cfg = PitchConfig {
            f_min: 100.0,
            f_max: 250.0,
            voicing_threshold: 0.5,
        };
        for f in [60.0, 90.0, 180.0, 240.0] {
            if let Some(f0) = estimate_pitch(&tone(f, 16000, 640), 16000, cfg) {
                assert!((cfg.f_min..=cfg.f_max).contains(&f0));
            }
        }
    }

    fn analyse(x: Vec<f64>, sr: u32) -> (PowerSpectrogram, ndarray::Array2<f64>) {
        let seg = AudioSegment::new("t", x, sr);
        let (g, frames) = frame_signal(&seg, 20.0, 10.0).unwrap();
        let n_fft = fft_len_for(g.frame_len);
        let ps = power_spectrum(frames.view(), n_fft, &hamming_window(g.frame_len).unwrap(), sr)
            .unwrap();
        (ps, frames)
    }

    #[test]
    fn pure_tone_fully_voiced() {
        let (ps, frames) = analyse(tone(150.0, 16000, 16000), 16000);
        let mask = voiced_mask(&ps, frames.view(), &AutocorrelationPitch::default()).unwrap();
        assert_eq!(mask.count(), mask.n_frames());
    }

    #[test]
    fn silence_has_no_voiced_frames() {
        let (ps, frames) = analyse(vec![0.0; 8000], 8000);
        let mask = voiced_mask(&ps, frames.view(), &AutocorrelationPitch::default()).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn voiced_is_subset_of_sad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sr = 8000;
        let mut x = Vec::new();
        for seg in 0..6 {
            for i in 0..4000 {
                let v = if seg % 2 == 0 {
                    0.001 * rng.random_range(-1.0..1.0)
                } else if seg == 3 {
                    0.5 * rng.random_range(-1.0..1.0)
                } else {
                    0.5 * (2.0 * PI * 140.0 * i as f64 / sr as f64).sin()
                };
                x.push(v);
            }
        }
        let (ps, frames) = analyse(x, sr);
        let sad = bi_gaussian_sad(&frame_log_energy(frames.view())).unwrap();
        let voiced = voiced_mask(&ps, frames.view(), &AutocorrelationPitch::default()).unwrap();
        assert!(voiced.is_subset_of(&sad));
        assert!(voiced.count() > 0 && voiced.count() < sad.count());
    }
}
