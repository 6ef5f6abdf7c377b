//! Speaker separability of filterbank log-energies measured by the F-ratio.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames × Q log-energies per speaker.
pub type GroupedEnergies = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FRatio {
    pub per_filter: Vec<f64>,
    pub average: f64,
}

/// Variance of the speaker means over the mean within-speaker variance, per
/// filter. Within-speaker variances are unbiased.
pub fn f_ratio(data: &GroupedEnergies) -> Result<FRatio> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "F-ratio needs at least 2 speakers, got {}",
            data.len()
        )));
    }
    let q = data.values().next().expect("non-empty").ncols();
    let mut means = Vec::with_capacity(data.len());
    let mut vars = Vec::with_capacity(data.len());
    for (spk, m) in data {
        if m.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "speaker {spk} has {} filters, expected {q}",
                m.ncols()
            )));
        }
        if m.nrows() < 2 {
            return Err(Error::InsufficientFrames {
                got: m.nrows(),
                need: 2,
            });
        }
        means.push(m.mean_axis(Axis(0)).expect("rows"));
        vars.push(m.var_axis(Axis(0), 1.0));
    }
    let s = data.len() as f64;
    let mut per_filter = Vec::with_capacity(q);
    for j in 0..q {
        let grand = means.iter().map(|m| m[j]).sum::<f64>() / s;
        let between = means.iter().map(|m| (m[j] - grand).powi(2)).sum::<f64>() / s;
        let within = vars.iter().map(|v| v[j]).sum::<f64>() / s;
        if !(within > 0.0) {
            return Err(Error::ZeroWithinClassVariance(j));
        }
        per_filter.push(between / within);
    }
    let average = per_filter.iter().sum::<f64>() / q as f64;
    Ok(FRatio { per_filter, average })
}

/// Per-filter F-ratios of several filterbank variants side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FRatioReport {
    pub variants: Vec<String>,
    pub results: Vec<FRatio>,
    /// Index of the variant with the strictly largest F-ratio per filter;
    /// `None` on ties.
    pub winners: Vec<Option<usize>>,
}

impl FRatioReport {
    pub fn new(variants: Vec<(String, FRatio)>) -> Result<Self> {
        if variants.len() < 2 {
            return Err(Error::InvalidArgument("a report needs at least 2 variants".into()));
        }
        let q = variants[0].1.per_filter.len();
        if let Some((name, r)) = variants.iter().find(|(_, r)| r.per_filter.len() != q) {
            return Err(Error::DimensionMismatch(format!(
                "variant {name} has {} filters, expected {q}",
                r.per_filter.len()
            )));
        }
        let winners = (0..q)
            .map(|j| {
                let best = variants
                    .iter()
                    .map(|(_, r)| r.per_filter[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut at = variants
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, r))| r.per_filter[j] == best)
                    .map(|(i, _)| i);
                match (at.next(), at.next()) {
                    (Some(i), None) => Some(i),
                    _ => None,
                }
            })
            .collect();
        let (names, results) = variants.into_iter().unzip();
        Ok(Self {
            variants: names,
            results,
            winners,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.winners.len()
    }

    /// Tab-separated: one row per filter plus an `average` row; winning
    /// cells carry a trailing `*`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("filter");
        for v in &self.variants {
            out.push('\t');
            out.push_str(v);
        }
        out.push('\n');
        for j in 0..self.n_filters() {
            let _ = write!(out, "{}", j + 1);
            for (i, r) in self.results.iter().enumerate() {
                let star = if self.winners[j] == Some(i) { "*" } else { "" };
                let _ = write!(out, "\t{:.6}{star}", r.per_filter[j]);
            }
            out.push('\n');
        }
        out.push_str("average");
        for r in &self.results {
            let _ = write!(out, "\t{:.6}", r.average);
        }
        out.push('\n');
        out
    }

    /// Column-aligned version of [`FRatioReport::to_tsv`].
    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .to_tsv()
            .lines()
            .map(|l| l.split('\t').map(str::to_string).collect())
            .collect();
        let n_cols = rows[0].len();
        let widths: Vec<usize> = (0..n_cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
