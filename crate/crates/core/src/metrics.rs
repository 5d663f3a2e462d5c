//! Binary classification metrics, group-level fold planning and mean/std
//! aggregation. Metrics with a zero denominator are errors, never 0.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::rng::{purpose, Philox};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: u64, den: u64, what: &str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric(format!("{what}: denominator is zero")));
    }
    Ok(num as f64 / den as f64)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp, c.tp + c.fp, "precision")
}

pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp, c.tp + c.fn_, "recall")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredSample {
    /// Higher means more likely positive.
    pub score: f64,
    pub truth: bool,
}

/// Area under the ROC curve by trapezoids over every distinct threshold.
/// Tied scores form one diagonal step, so the result equals the
/// Mann–Whitney statistic with ties counted as one half.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::InvalidArgument("AUC scores must be finite".into()));
    }
    let pos = samples.iter().filter(|s| s.truth).count() as f64;
    let neg = samples.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative sample".into(),
        ));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let (tp0, fp0) = (tp, fp);
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].truth {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    Ok(area / (pos * neg))
}

/// Assignment of groups to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, group: &str) -> Option<usize> {
        self.assignment.get(group).copied()
    }

    /// Groups of each fold, sorted.
    pub fn folds(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (g, &f) in &self.assignment {
            out[f].push(g.clone());
        }
        out
    }
}

/// Distinct groups shuffled with a seeded stream, then dealt round-robin.
pub fn plan_group_kfold(groups: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    plan_stratified_group_kfold(&groups.iter().map(|g| (g.clone(), 0)).collect::<Vec<_>>(), k, seed)
}

/// Like [`plan_group_kfold`], but groups are shuffled within each stratum
/// and strata are dealt one after another with a running counter, so each
/// fold gets a balanced share of every stratum and fold sizes still differ
/// by at most one. A group's stratum is taken from its first occurrence.
pub fn plan_stratified_group_kfold(groups: &[(String, usize)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut strata: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (g, s) in groups {
        if seen.insert(g.clone()) {
            strata.entry(*s).or_default().insert(g.clone());
        }
    }
    if seen.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} distinct groups cannot fill {k} folds",
            seen.len()
        )));
    }
    let mut rng = Philox::for_tags(seed, &[purpose::FOLDS]);
    let mut assignment = BTreeMap::new();
    let mut next = 0;
    for members in strata.into_values() {
        let mut members: Vec<String> = members.into_iter().collect();
        rng.shuffle(&mut members);
        for g in members {
            assignment.insert(g, next % k);
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignment })
}

/// Mean and Bessel-corrected standard deviation.
pub fn aggregate(runs: &[f64]) -> Result<(f64, f64)> {
    if runs.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "standard deviation needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
