//! Accuracy measures for simulated fits: misclassification, Hausdorff
//! break-date error, coefficient RMSE and interval coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gagfl::FitResult;
use crate::model::{BreakStructure, CoefficientPath, GroupAssignment};
use crate::simulate::SimTruth;

/// Share of misclassified units under the best matching of estimated labels
/// to true labels. The returned vector maps estimated label to true label;
/// label sets are padded to the larger of the two group counts.
pub fn misclassification(est: &GroupAssignment, truth: &GroupAssignment) -> (f64, Vec<usize>) {
    assert_eq!(est.n_units(), truth.n_units(), "assignments differ in N");
    let m = est.n_groups().max(truth.n_groups());
    let mut agree = vec![0usize; m * m];
    for i in 0..est.n_units() {
        agree[est.label(i) * m + truth.label(i)] += 1;
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (usize::MAX, perm.clone());
    let mut consider = |p: &[usize]| {
        let hits: usize = (0..m).map(|g| agree[g * m + p[g]]).sum();
        let miss = est.n_units() - hits;
        if miss < best.0 {
            best = (miss, p.to_vec());
        }
    };
    // Heap's algorithm
    let mut c = vec![0usize; m];
    consider(&perm);
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            consider(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best.0 as f64 / est.n_units() as f64, best.1)
}

/// Two-sided Hausdorff distance between break-date sets, scaled by `100/T`.
/// Both empty gives 0; exactly one empty gives 100.
pub fn hausdorff(est: &[usize], truth: &[usize], n_periods: usize) -> f64 {
    hausdorff_flagged(est, truth, n_periods).0
}

/// As [`hausdorff`]; the flag is set when exactly one set is empty.
pub fn hausdorff_flagged(est: &[usize], truth: &[usize], n_periods: usize) -> (f64, bool) {
    match (est.is_empty(), truth.is_empty()) {
        (true, true) => (0.0, false),
        (true, false) | (false, true) => (100.0, true),
        _ => {
            let directed = |a: &[usize], b: &[usize]| {
                b.iter()
                    .map(|&x| a.iter().map(|&y| x.abs_diff(y)).min().unwrap_or(0))
                    .max()
                    .unwrap_or(0)
            };
            let hd = directed(est, truth).max(directed(truth, est));
            (100.0 * hd as f64 / n_periods as f64, false)
        }
    }
}

/// Coefficients of each unit: `N x T x k`, taken from its group's path.
pub fn unit_paths(assignment: &GroupAssignment, path: &CoefficientPath) -> Vec<f64> {
    let mut out = Vec::with_capacity(assignment.n_units() * path.n_periods() * path.dim());
    for i in 0..assignment.n_units() {
        out.extend_from_slice(path.group(assignment.label(i)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub per_coord: Vec<f64>,
    /// `sqrt(sum ||b_hat - b||^2 / NT)`.
    pub pooled: f64,
}

/// RMSE between unit-level coefficient arrays laid out `N x T x k`.
pub fn rmse(est: &[f64], truth: &[f64], k: usize) -> Rmse {
    assert_eq!(est.len(), truth.len());
    let cells = (est.len() / k) as f64;
    let mut per = vec![0.0; k];
    for (j, (a, b)) in est.iter().zip(truth).enumerate() {
        per[j % k] += (a - b) * (a - b);
    }
    let pooled = (per.iter().sum::<f64>() / cells).sqrt();
    Rmse {
        per_coord: per.iter().map(|s| (s / cells).sqrt()).collect(),
        pooled,
    }
}

/// Fraction of entries with `truth` inside `est +- 1.96 se`.
pub fn coverage(est: &[f64], se: &[f64], truth: &[f64]) -> Result<f64> {
    if let Some(bad) = se.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Numerical(format!(
            "standard error at position {bad} is not positive ({})",
            se[bad]
        )));
    }
    let hits = est
        .iter()
        .zip(se)
        .zip(truth)
        .filter(|((b, s), t)| (**t - **b).abs() <= 1.96 * **s)
        .count();
    Ok(hits as f64 / est.len() as f64)
}

/// Scores of one fit against the truth. Per-group entries follow the true
/// group order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mf: f64,
    /// Scaled Hausdorff error; `None` when no estimated group matches.
    pub hd_per_group: Vec<Option<f64>>,
    /// Exactly one of the two date sets was empty.
    pub hd_flagged: Vec<bool>,
    pub break_count_correct: Vec<bool>,
    pub rmse: f64,
    pub rmse_per_coord: Vec<f64>,
    /// `None` when some standard error was not positive.
    pub coverage: Option<f64>,
    pub g_selected: usize,
}

pub fn score_fit(fit: &FitResult, truth: &SimTruth) -> MetricRow {
    score_parts(
        &fit.assignment,
        fit.breaks(),
        &fit.post.coef_path,
        &fit.post.se_path,
        truth,
    )
}

/// Scores estimates given as separate pieces, e.g. read back from a report.
pub fn score_parts(
    assignment: &GroupAssignment,
    breaks: &BreakStructure,
    coef_path: &CoefficientPath,
    se_path: &CoefficientPath,
    truth: &SimTruth,
) -> MetricRow {
    let (mf, perm) = misclassification(assignment, &truth.assignment);
    let t_len = truth.beta_path.n_periods();
    let g_true = truth.assignment.n_groups();
    let mut hd = Vec::with_capacity(g_true);
    let mut flagged = Vec::with_capacity(g_true);
    let mut correct = Vec::with_capacity(g_true);
    for h in 0..g_true {
        let true_dates = &truth.break_structure.groups[h].break_dates;
        match (0..assignment.n_groups()).find(|&g| perm[g] == h) {
            Some(g) => {
                let dates = &breaks.groups[g].break_dates;
                let (d, flag) = hausdorff_flagged(dates, true_dates, t_len);
                hd.push(Some(d));
                flagged.push(flag);
                correct.push(dates.len() == true_dates.len());
            }
            None => {
                hd.push(None);
                flagged.push(true);
                correct.push(false);
            }
        }
    }
    let k = truth.beta_path.dim();
    let est = unit_paths(assignment, coef_path);
    let se = unit_paths(assignment, se_path);
    let tru = unit_paths(&truth.assignment, &truth.beta_path);
    let r = rmse(&est, &tru, k);
    MetricRow {
        mf,
        hd_per_group: hd,
        hd_flagged: flagged,
        break_count_correct: correct,
        rmse: r.pooled,
        rmse_per_coord: r.per_coord,
        coverage: coverage(&est, &se, &tru).ok(),
        g_selected: assignment.n_groups(),
    }
}
