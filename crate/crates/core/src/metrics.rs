//! Trial scores, DET sweeps, EER, minimum detection cost and score fusion.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Impostor,
}

impl TrialLabel {
    pub fn flipped(self) -> Self {
        match self {
            TrialLabel::Target => TrialLabel::Impostor,
            TrialLabel::Impostor => TrialLabel::Target,
        }
    }
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialLabel::Target => "target",
            TrialLabel::Impostor => "impostor",
        })
    }
}

impl FromStr for TrialLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "impostor" => Ok(TrialLabel::Impostor),
            other => Err(format!("label must be target or impostor, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialKey {
    pub enroll: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub key: TrialKey,
    pub label: TrialLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialScoreSet {
    pub trials: Vec<ScoredTrial>,
}

impl TrialScoreSet {
    pub fn from_scores(targets: &[f64], impostors: &[f64]) -> Self {
        let mk = |label, prefix: &str, (i, &score): (usize, &f64)| ScoredTrial {
            key: TrialKey {
                enroll: prefix.to_string(),
                test: i.to_string(),
            },
            label,
            score,
        };
        let trials = targets
            .iter()
            .enumerate()
            .map(|t| mk(TrialLabel::Target, "t", t))
            .chain(impostors.iter().enumerate().map(|t| mk(TrialLabel::Impostor, "i", t)))
            .collect();
        Self { trials }
    }

    pub fn count(&self, label: TrialLabel) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }

    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            trials: self
                .trials
                .iter()
                .map(|t| ScoredTrial {
                    score: f(t.score),
                    ..t.clone()
                })
                .collect(),
        }
    }

    pub fn with_flipped_labels(&self) -> Self {
        Self {
            trials: self
                .trials
                .iter()
                .map(|t| ScoredTrial {
                    label: t.label.flipped(),
                    ..t.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points for thresholds at every distinct score plus `+∞`, in
/// increasing threshold order. A trial is accepted iff `score ≥ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

pub fn det_curve(scores: &TrialScoreSet) -> Result<DetCurve> {
    let mut all: Vec<(f64, TrialLabel)> = scores.trials.iter().map(|t| (t.score, t.label)).collect();
    if let Some(t) = all.iter().find(|t| !t.0.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {}", t.0)));
    }
    let n_tar = all.iter().filter(|t| t.1 == TrialLabel::Target).count();
    let n_imp = all.len() - n_tar;
    if n_tar == 0 || n_imp == 0 {
        return Err(Error::SingleClass);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, ni) = (n_tar as f64, n_imp as f64);
    let mut points = Vec::new();
    // targets below / impostors at or above the current threshold
    let (mut tar_below, mut imp_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let theta = all[i].0;
        points.push(DetPoint {
            threshold: theta,
            p_miss: tar_below as f64 / nt,
            p_fa: (n_imp - imp_below) as f64 / ni,
        });
        while i < all.len() && all[i].0 == theta {
            match all[i].1 {
                TrialLabel::Target => tar_below += 1,
                TrialLabel::Impostor => imp_below += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(DetCurve { points })
}

/// Rate where miss and false-alarm curves cross, linearly interpolated
/// between the two sweep points that bracket the sign change.
pub fn eer(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    let diff = |p: &DetPoint| p.p_miss - p.p_fa;
    let Some(i) = pts.iter().position(|p| diff(p) >= 0.0) else {
        return pts.last().map_or(0.5, |p| 0.5 * (p.p_miss + p.p_fa));
    };
    let b = &pts[i];
    if diff(b) == 0.0 || i == 0 {
        return 0.5 * (b.p_miss + b.p_fa);
    }
    let a = &pts[i - 1];
    let (da, db) = (diff(a), diff(b));
    let t = -da / (db - da);
    a.p_miss + t * (b.p_miss - a.p_miss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl CostParams {
    pub const NIST_SRE: CostParams = CostParams {
        c_miss: 10.0,
        c_fa: 1.0,
        p_target: 0.01,
    };
    pub const VOXCELEB: CostParams = CostParams {
        c_miss: 1.0,
        c_fa: 1.0,
        p_target: 0.01,
    };

    pub fn preset(name: &str) -> Option<CostParams> {
        match name {
            "nist-sre" => Some(Self::NIST_SRE),
            "voxceleb" => Some(Self::VOXCELEB),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0 && self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid cost parameters {self:?}")));
        }
        Ok(())
    }

    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.c_miss * p_miss * self.p_target + self.c_fa * p_fa * (1.0 - self.p_target)
    }
}

/// Minimum of the detection cost over the sweep (not normalised).
pub fn min_dcf(curve: &DetCurve, params: &CostParams) -> f64 {
    curve
        .points
        .iter()
        .map(|p| params.cost(p.p_miss, p.p_fa))
        .fold(f64::INFINITY, f64::min)
}

/// Equal-weight average of two score sets over the same trials, in the
/// order of `a`.
pub fn fuse_scores(a: &TrialScoreSet, b: &TrialScoreSet) -> Result<TrialScoreSet> {
    if a.trials.len() != b.trials.len() {
        return Err(Error::KeyMismatch(format!(
            "{} trials vs {} trials",
            a.trials.len(),
            b.trials.len()
        )));
    }
    let index: HashMap<&TrialKey, &ScoredTrial> = b.trials.iter().map(|t| (&t.key, t)).collect();
    let mut trials = Vec::with_capacity(a.trials.len());
    for t in &a.trials {
        let Some(u) = index.get(&t.key) else {
            return Err(Error::KeyMismatch(format!("{} / {} missing", t.key.enroll, t.key.test)));
        };
        if u.label != t.label {
            return Err(Error::KeyMismatch(format!(
                "{} / {} labelled {} and {}",
                t.key.enroll, t.key.test, t.label, u.label
            )));
        }
        trials.push(ScoredTrial {
            score: (t.score + u.score) / 2.0,
            ..t.clone()
        });
    }
    Ok(TrialScoreSet { trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(n: usize, seed: u64) -> TrialScoreSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let t: Vec<f64> = (0..n).map(|_| 1.0 + z.sample(&mut rng)).collect();
        let i: Vec<f64> = (0..n).map(|_| -1.0 + z.sample(&mut rng)).collect();
        TrialScoreSet::from_scores(&t, &i)
    }

    #[test]
    fn separable_and_reversed() {
        let s = TrialScoreSet::from_scores(&[2.0, 3.0], &[0.0, 1.0]);
        let c = det_curve(&s).unwrap();
        assert!(c.points.iter().any(|p| p.p_miss == 0.0 && p.p_fa == 0.0));
        assert_eq!(eer(&c), 0.0);
        assert_eq!(min_dcf(&c, &CostParams::NIST_SRE), 0.0);
        let r = TrialScoreSet::from_scores(&[0.0, 1.0], &[2.0, 3.0]);
        assert_eq!(eer(&det_curve(&r).unwrap()), 1.0);
    }

    #[test]
    fn identical_distributions_give_chance() {
        let s = TrialScoreSet::from_scores(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(eer(&det_curve(&s).unwrap()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sweep_is_monotone() {
        let c = det_curve(&gaussian_set(500, 1)).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].p_miss >= w[0].p_miss && w[1].p_fa <= w[0].p_fa);
        }
        let first = c.points[0];
        assert_eq!((first.p_miss, first.p_fa), (0.0, 1.0));
    }

    #[test]
    fn single_class_is_rejected() {
        let s = TrialScoreSet::from_scores(&[1.0], &[]);
        assert!(matches!(det_curve(&s), Err(Error::SingleClass)));
    }

    #[test]
    fn gaussian_eer() {
        let c = det_curve(&gaussian_set(100_000, 7)).unwrap();
        assert_abs_diff_eq!(eer(&c), 0.158_655, epsilon = 0.01);
    }

    #[test]
    fn min_dcf_matches_exhaustive_sweep() {
        let s = gaussian_set(1500, 3);
        let c = det_curve(&s).unwrap();
        let nt = s.count(TrialLabel::Target) as f64;
        let ni = s.count(TrialLabel::Impostor) as f64;
        let mut thresholds: Vec<f64> = s.trials.iter().map(|t| t.score).collect();
        thresholds.push(f64::INFINITY);
        let p = CostParams::NIST_SRE;
        let brute = thresholds
            .iter()
            .map(|&th| {
                let miss = s.trials.iter().filter(|t| t.label == TrialLabel::Target && t.score < th).count();
                let fa = s.trials.iter().filter(|t| t.label == TrialLabel::Impostor && t.score >= th).count();
                p.cost(miss as f64 / nt, fa as f64 / ni)
            })
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(min_dcf(&c, &p), brute, epsilon = 1e-9);
        assert!(min_dcf(&c, &p) <= p.c_fa * (1.0 - p.p_target));
        assert!(min_dcf(&c, &p) <= p.c_miss * p.p_target);
    }

    #[test]
    fn rank_invariance() {
        let s = gaussian_set(2000, 4);
        let c = det_curve(&s).unwrap();
        let t = det_curve(&s.map_scores(|x| 3.0 * x.powi(3) + 0.5)).unwrap();
        assert_eq!(eer(&c), eer(&t));
        assert_eq!(min_dcf(&c, &CostParams::VOXCELEB), min_dcf(&t, &CostParams::VOXCELEB));
    }

    #[test]
    fn flipped_labels_complement_rates() {
        let s = gaussian_set(300, 5);
        let a = det_curve(&s).unwrap();
        let b = det_curve(&s.with_flipped_labels()).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_abs_diff_eq!(q.p_miss, 1.0 - p.p_fa, epsilon = 1e-12);
            assert_abs_diff_eq!(q.p_fa, 1.0 - p.p_miss, epsilon = 1e-12);
        }
    }

    #[test]
    fn fusion() {
        let a = TrialScoreSet::from_scores(&[1.0], &[3.0]);
        let b = TrialScoreSet::from_scores(&[3.0], &[1.0]);
        let f = fuse_scores(&a, &b).unwrap();
        assert_eq!(f.trials.iter().map(|t| t.score).collect::<Vec<_>>(), vec![2.0, 2.0]);
        assert_eq!(fuse_scores(&a, &a).unwrap(), a);
        let s = gaussian_set(200, 6);
        let u = s.map_scores(|x| x * 0.3 - 1.0);
        let (x, y) = (fuse_scores(&s, &u).unwrap(), fuse_scores(&u, &s).unwrap());
        assert_eq!(x, y);
        let short = TrialScoreSet::from_scores(&[1.0], &[]);
        assert!(matches!(fuse_scores(&a, &short), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn presets() {
        assert_eq!(CostParams::preset("nist-sre"), Some(CostParams::NIST_SRE));
        assert_eq!(CostParams::preset("voxceleb").unwrap().c_miss, 1.0);
        assert_eq!(CostParams::preset("sre"), None);
    }
}
