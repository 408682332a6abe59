//! Group-level summaries of estimated item parameters.

use std::path::Path;

use lcm_core::ItemParams;

use crate::error::{CliError, Result};

pub const ABSOLUTE_LOW: f64 = 0.4;
pub const ABSOLUTE_HIGH: f64 = 0.6;
pub const QUANTILE_LOW: f64 = 0.4;
pub const QUANTILE_HIGH: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Absolute,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }

    /// At or above `hi` is high, otherwise at or below `lo` is low.
    pub fn of(v: f64, lo: f64, hi: f64) -> Self {
        if v >= hi {
            Level::High
        } else if v <= lo {
            Level::Low
        } else {
            Level::Medium
        }
    }
}

/// Linear interpolation between order statistics (type 7). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub groups: Vec<String>,
    /// `means[g][l]`: average item parameter of group `g` in class `l`.
    pub means: Vec<Vec<f64>>,
    pub levels: Vec<Vec<Level>>,
}

/// `item_groups[j]` names the group of item `j`. Groups keep first-seen order.
pub fn profile(theta: &ItemParams, item_groups: &[String], mode: Mode) -> Result<Profile> {
    if item_groups.len() != theta.n_items() {
        return Err(CliError::Data(format!(
            "{} group assignments for {} items",
            item_groups.len(),
            theta.n_items()
        )));
    }
    let mut groups: Vec<String> = Vec::new();
    for g in item_groups {
        if !groups.contains(g) {
            groups.push(g.clone());
        }
    }
    let l = theta.n_classes();
    let mut means = Vec::with_capacity(groups.len());
    let mut levels = Vec::with_capacity(groups.len());
    for g in &groups {
        let items: Vec<usize> = (0..theta.n_items()).filter(|&j| &item_groups[j] == g).collect();
        let row: Vec<f64> = (0..l)
            .map(|a| items.iter().map(|&j| theta.get(j, a)).sum::<f64>() / items.len() as f64)
            .collect();
        let (lo, hi) = match mode {
            Mode::Absolute => (ABSOLUTE_LOW, ABSOLUTE_HIGH),
            Mode::Quantile => {
                let mut pooled: Vec<f64> = items
                    .iter()
                    .flat_map(|&j| (0..l).map(move |a| theta.get(j, a)))
                    .collect();
                pooled.sort_by(f64::total_cmp);
                (quantile(&pooled, QUANTILE_LOW), quantile(&pooled, QUANTILE_HIGH))
            }
        };
        levels.push(row.iter().map(|&v| Level::of(v, lo, hi)).collect());
        means.push(row);
    }
    Ok(Profile {
        groups,
        means,
        levels,
    })
}

/// `item,group` rows with 1-based item indices; a non-numeric first row is a header.
pub fn read_groups(path: &Path, n_items: usize) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out: Vec<Option<String>> = vec![None; n_items];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let (Some(idx), Some(group)) = (rec.get(0), rec.get(1)) else {
            return Err(CliError::Data(format!(
                "{}: line {} needs item,group",
                path.display(),
                line + 1
            )));
        };
        let Ok(idx) = idx.parse::<usize>() else {
            if line == 0 {
                continue;
            }
            return Err(CliError::Data(format!(
                "{}: line {}: bad item index {idx:?}",
                path.display(),
                line + 1
            )));
        };
        if idx == 0 || idx > n_items {
            return Err(CliError::Data(format!(
                "{}: unknown item {idx}, the estimate has {n_items} items",
                path.display()
            )));
        }
        if out[idx - 1].replace(group.to_string()).is_some() {
            return Err(CliError::Data(format!(
                "{}: item {idx} is assigned twice",
                path.display()
            )));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(j, g)| {
            g.ok_or_else(|| {
                CliError::Data(format!("{}: item {} has no group", path.display(), j + 1))
            })
        })
        .collect()
}

fn grid_csv<T>(p: &Profile, cells: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
    let l = cells.first().map_or(0, Vec::len);
    let mut s = String::from("group");
    for a in 1..=l {
        s.push_str(&format!(",class_{a}"));
    }
    s.push('\n');
    for (g, row) in p.groups.iter().zip(cells) {
        s.push_str(g);
        for c in row {
            s.push(',');
            s.push_str(&fmt(c));
        }
        s.push('\n');
    }
    s
}

pub fn levels_csv(p: &Profile) -> String {
    grid_csv(p, &p.levels, |l| l.as_str().to_string())
}

pub fn means_csv(p: &Profile) -> String {
    grid_csv(p, &p.means, |v| v.to_string())
}
