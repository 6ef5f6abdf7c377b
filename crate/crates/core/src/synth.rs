//! Synthetic multi-speaker corpus: glottal pulse trains through cascaded
//! formant resonators, interleaved with frication noise and silence.
//!
//! Each speaker has a fixed vocal-tract scale, mean f0, spectral tilt and one
//! extra high resonance, so speakers are separable by their spectra alone.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::AudioSegment;
use crate::error::Result;
use crate::io::{atomic_write, write_wav_pcm16};

/// `(F1, F2, F3)` in Hz for a few vowels of an average adult tract.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub sample_rate_hz: u32,
    pub utterance_secs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            utterances_per_speaker: 20,
            sample_rate_hz: 16000,
            utterance_secs: 4.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub id: String,
    pub f0_hz: f64,
    /// Multiplies every formant frequency.
    pub tract_scale: f64,
    /// Pole of the one-pole low-pass shaping the glottal pulses.
    pub tilt: f64,
    pub extra_formant_hz: f64,
    /// Speaker-specific `(F1, F2, F3)` targets per vowel, tract scale applied.
    pub vowels: Vec<[f64; 3]>,
}

/// Speakers with parameters spread evenly over their ranges and shuffled
/// independently, so no two share a combination.
pub fn speakers(cfg: &SynthConfig) -> Vec<SyntheticSpeaker> {
    let n = cfg.n_speakers;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spread = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
            .collect();
        v.shuffle(rng);
        v
    };
    let nyq = cfg.sample_rate_hz as f64 / 2.0;
    let f0 = spread(95.0, 230.0, &mut rng);
    let scale = spread(0.82, 1.18, &mut rng);
    let tilt = spread(0.55, 0.92, &mut rng);
    let extra = spread(0.5 * nyq, 0.8 * nyq, &mut rng);
    (0..n)
        .map(|i| {
            // idiolect: each speaker realises every vowel a little differently
            let vowels = VOWELS
                .iter()
                .map(|v| v.map(|f| f * scale[i] * rng.random_range(0.9..1.1)))
                .collect();
            SyntheticSpeaker {
                id: format!("spk{:02}", i + 1),
                f0_hz: f0[i],
                tract_scale: scale[i],
                tilt: tilt[i],
                extra_formant_hz: extra[i],
                vowels,
            }
        })
        .collect()
}

/// Two-pole resonator with unit gain at DC.
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(f_hz: f64, bw_hz: f64, sr: f64) -> Self {
        let r = (-PI * bw_hz / sr).exp();
        let b = 2.0 * r * (2.0 * PI * f_hz / sr).cos();
        let c = -r * r;
        Self {
            a: 1.0 - b - c,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn ramp(i: usize, n: usize, edge: usize) -> f64 {
    let e = edge.min(n / 2).max(1) as f64;
    let d = i.min(n - 1 - i) as f64;
    (d / e).min(1.0)
}

fn vowel(spk: &SyntheticSpeaker, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = spk.vowels[rng.random_range(0..spk.vowels.len())];
    let mut formants: Vec<(f64, f64)> = v
        .iter()
        .enumerate()
        .map(|(k, f)| (f * rng.random_range(0.97..1.03), 60.0 + 30.0 * k as f64))
        .collect();
    formants.push((3500.0 * spk.tract_scale, 150.0));
    formants.push((spk.extra_formant_hz, 200.0));
    let nyq = sr / 2.0;
    let mut res: Vec<Resonator> = formants
        .into_iter()
        .filter(|(f, _)| *f < 0.95 * nyq)
        .map(|(f, bw)| Resonator::new(f, bw, sr))
        .collect();
    let f0_start = spk.f0_hz * rng.random_range(0.92..1.08);
    let f0_end = f0_start * rng.random_range(0.85..1.05);
    let jitter = Normal::new(0.0, 0.005).expect("valid sigma");
    let mut phase = 0.0;
    let mut glottal = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / n as f64;
        phase += f0 * (1.0 + jitter.sample(rng)) / sr;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        glottal = spk.tilt * glottal + (1.0 - spk.tilt) * pulse;
        let mut y = glottal;
        for r in res.iter_mut() {
            y = r.step(y);
        }
        out.push(y);
    }
    out
}

fn frication(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut r = Resonator::new(rng.random_range(0.55..0.8) * sr / 2.0, 1500.0, sr);
    (0..n).map(|_| r.step(rng.random_range(-1.0..1.0))).collect()
}

/// One utterance; deterministic in `(cfg.seed, speaker, index)`.
pub fn synthesize_utterance(spk: &SyntheticSpeaker, index: usize, cfg: &SynthConfig) -> AudioSegment {
    let sr = cfg.sample_rate_hz as f64;
    let speaker_no: u64 = spk.id.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ speaker_no.rotate_left(17) ^ ((index as u64) << 40));
    let total = (cfg.utterance_secs * sr) as usize;
    let mut x = vec![0.0; total];
    let lead = (rng.random_range(0.2..0.35) * sr) as usize;
    let tail = (0.2 * sr) as usize;
    let mut at = lead;
    while at + tail < total {
        let (seg, n) = if rng.random_bool(0.2) {
            let n = (rng.random_range(0.05..0.1) * sr) as usize;
            (frication(n, sr, &mut rng).into_iter().map(|v| 0.2 * v).collect::<Vec<_>>(), n)
        } else {
            let n = (rng.random_range(0.15..0.35) * sr) as usize;
            (vowel(spk, n, sr, &mut rng), n)
        };
        let n = n.min(total - tail - at);
        let peak = seg.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for i in 0..n {
            x[at + i] = seg[i] / peak * ramp(i, n, (0.01 * sr) as usize);
        }
        at += n;
        if rng.random_bool(0.3) {
            at += (0.04 * sr) as usize;
        }
    }
    let gain = rng.random_range(0.3..0.8);
    let floor = Normal::new(0.0, 1e-3).expect("valid sigma");
    for v in x.iter_mut() {
        *v = gain * *v + floor.sample(&mut rng);
    }
    AudioSegment::new(format!("{}_u{:02}", spk.id, index), x, cfg.sample_rate_hz)
}

/// Writes 16-bit WAVs and `manifest.tsv` (with speaker ids) into `dir`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for spk in speakers(cfg) {
        for u in 0..cfg.utterances_per_speaker {
            let x = synthesize_utterance(&spk, u, cfg);
            let name = format!("{}.wav", x.id);
            write_wav_pcm16(&dir.join(&name), &x)?;
            manifest.push_str(&format!("{}\t{}\t{}\n", x.id, name, spk.id));
        }
    }
    let path = dir.join("manifest.tsv");
    atomic_write(&path, |w| Ok(w.write_all(manifest.as_bytes())?))?;
    Ok(path)
}
