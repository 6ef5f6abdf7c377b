//! Tab-separated trial lists (`enroll  test  target|impostor`) and score
//! files (the same three columns plus the score).

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{ScoredTrial, TrialKey, TrialLabel, TrialScoreSet};

use super::atomic_write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub key: TrialKey,
    pub label: TrialLabel,
}

fn parse_lines<T>(
    path: &Path,
    n_fields: usize,
    mut f: impl FnMut(&[&str]) -> std::result::Result<(TrialKey, T), String>,
) -> Result<Vec<(TrialKey, T)>> {
    let text = std::fs::read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n_fields || fields.iter().any(|s| s.is_empty()) {
            return Err(err(format!("expected {n_fields} tab-separated fields, got {line:?}")));
        }
        let (key, v) = f(&fields).map_err(err)?;
        if !seen.insert(key.clone()) {
            return Err(err(format!("duplicate trial {} / {}", key.enroll, key.test)));
        }
        out.push((key, v));
    }
    Ok(out)
}

fn key(f: &[&str]) -> TrialKey {
    TrialKey {
        enroll: f[0].to_string(),
        test: f[1].to_string(),
    }
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    Ok(parse_lines(path, 3, |f| Ok((key(f), f[2].parse::<TrialLabel>()?)))?
        .into_iter()
        .map(|(key, label)| Trial { key, label })
        .collect())
}

pub fn read_scores(path: &Path) -> Result<TrialScoreSet> {
    let rows = parse_lines(path, 4, |f| {
        let label = f[2].parse::<TrialLabel>()?;
        let score: f64 = f[3].parse().map_err(|_| format!("bad score {:?}", f[3]))?;
        if !score.is_finite() {
            return Err(format!("non-finite score {:?}", f[3]));
        }
        Ok((key(f), (label, score)))
    })?;
    Ok(TrialScoreSet {
        trials: rows
            .into_iter()
            .map(|(key, (label, score))| ScoredTrial { key, label, score })
            .collect(),
    })
}

/// Scores are written in shortest round-trip decimal form.
pub fn write_scores(path: &Path, scores: &TrialScoreSet) -> Result<()> {
    let mut text = String::new();
    for t in &scores.trials {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", t.key.enroll, t.key.test, t.label, t.score));
    }
    atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?))
}
