//! Grouped fixed effects: least-squares clustering of units with fully
//! time-varying group coefficients, fitted from many random starts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    fill_homogeneous, group_stats, ssr_matrix, update_homogeneous, Layout, QuadProblem,
};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SingularPolicy};
use crate::model::{CoefficientPath, GroupAssignment, Mode, ModelSpec, Panel};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfeOptions {
    pub n_starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub singular_policy: SingularPolicy,
    /// Optional warm start; used as start 0 in place of a random draw.
    pub init: Option<GroupAssignment>,
}

impl Default for GfeOptions {
    fn default() -> Self {
        Self {
            n_starts: 100,
            max_iters: 100,
            seed: 0,
            singular_policy: SingularPolicy::Error,
            init: None,
        }
    }
}

impl GfeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.max_iters == 0 {
            return Err(Error::InvalidOptions(
                "n_starts and max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfeFit {
    pub path: CoefficientPath,
    pub assignment: GroupAssignment,
    /// Unnormalized sum of squared residuals.
    pub sse: f64,
    pub best_start: usize,
    pub iterations: usize,
    /// SSE after every refit of the winning start.
    pub sse_trace: Vec<f64>,
    pub failed_starts: usize,
}

/// Per-(group, period) OLS: `beta_{g,t} = (sum x x')^-1 sum x y` over the
/// members of `g`.
pub fn ols_per_cell(
    panel: &Panel,
    gamma: &GroupAssignment,
    policy: SingularPolicy,
) -> Result<CoefficientPath> {
    let k = panel.n_regressors();
    let t_len = panel.n_periods();
    let g_len = gamma.n_groups();
    let sizes = gamma.sizes();
    let mut grams = vec![DMatrix::<f64>::zeros(k, k); g_len * t_len];
    let mut rhs = vec![DVector::<f64>::zeros(k); g_len * t_len];
    for i in 0..panel.n_units() {
        let g = gamma.label(i);
        for t in 0..t_len {
            let x = panel.x(i, t);
            let y = panel.y(i, t);
            let cell = g * t_len + t;
            let (a, b) = (&mut grams[cell], &mut rhs[cell]);
            for r in 0..k {
                b[r] += x[r] * y;
                for c in 0..k {
                    a[(r, c)] += x[r] * x[c];
                }
            }
        }
    }
    let mut path = CoefficientPath::zeros(g_len, t_len, k);
    for g in 0..g_len {
        for t in 0..t_len {
            let cell = g * t_len + t;
            let beta = solve_spd(&grams[cell], &rhs[cell], policy).ok_or(Error::SingularCell {
                group: g,
                period: t,
                group_size: sizes[g],
            })?;
            path.get_mut(g, t).copy_from_slice(beta.as_slice());
        }
    }
    Ok(path)
}

/// Assigns each unit to the group with the smallest time-summed squared
/// residual; ties go to the lowest group index.
pub fn assign_groups(panel: &Panel, path: &CoefficientPath) -> GroupAssignment {
    assign_groups_with(panel, Mode::Level, path).0
}

/// As [`assign_groups`] for either estimating equation. Also returns the
/// `N x G` residual matrix.
pub fn assign_groups_with(
    panel: &Panel,
    mode: Mode,
    path: &CoefficientPath,
) -> (GroupAssignment, Vec<f64>) {
    let g_len = path.n_groups();
    let ssr = ssr_matrix(panel, mode, path);
    let labels = (0..panel.n_units())
        .map(|i| argmin(&ssr[i * g_len..(i + 1) * g_len]))
        .collect();
    (
        GroupAssignment::new(labels, g_len).expect("argmin within range"),
        ssr,
    )
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (g, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = g;
        }
    }
    best
}

/// Refills empty groups: each empty group receives the unit with the largest
/// own residual among units whose group has more than one member. Returns the
/// number of moves.
pub fn repair_empty_groups(assignment: &mut GroupAssignment, ssr: &[f64]) -> usize {
    let g_len = assignment.n_groups();
    let mut moves = 0;
    loop {
        let sizes = assignment.sizes();
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return moves;
        };
        let donor = (0..assignment.n_units())
            .filter(|&i| sizes[assignment.label(i)] > 1)
            .fold(None::<usize>, |best, i| {
                let own = ssr[i * g_len + assignment.label(i)];
                match best {
                    Some(b) if ssr[b * g_len + assignment.label(b)] >= own => Some(b),
                    _ => Some(i),
                }
            });
        let Some(i) = donor else {
            return moves;
        };
        assignment.set(i, empty);
        moves += 1;
    }
}

/// Unpenalized group coefficients given the assignment.
pub fn fit_unpenalized(
    panel: &Panel,
    spec: &ModelSpec,
    gamma: &GroupAssignment,
    policy: SingularPolicy,
) -> Result<CoefficientPath> {
    if spec.is_plain() {
        return ols_per_cell(panel, gamma, policy);
    }
    let t_len = panel.n_periods();
    let layout = Layout::new(spec, t_len);
    let scale = panel.n_obs() as f64;
    let has_hom = !spec.homogeneous_coords().is_empty();
    let mut hom = vec![0.0; spec.k()];
    let mut path = CoefficientPath::zeros(gamma.n_groups(), t_len, spec.k());
    for _ in 0..1000 {
        for g in 0..gamma.n_groups() {
            let members = gamma.members(g);
            let stats = group_stats(panel, spec, &layout, &members, &hom);
            let z = QuadProblem::new(&stats, &layout, scale).solve(g, policy)?;
            layout.write_beta(&mut path, g, &layout.beta_from_z(z.as_slice()));
        }
        if !has_hom {
            break;
        }
        let next = update_homogeneous(panel, spec, gamma, &path, policy)?;
        let change = next
            .iter()
            .zip(&hom)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let size = next.iter().map(|v| v.abs()).fold(1.0, f64::max);
        hom = next;
        if change <= 1e-13 * size {
            break;
        }
    }
    fill_homogeneous(&mut path, spec, &hom);
    Ok(path)
}

/// Grouped fixed effects for the plain level model.
pub fn fit_gfe(panel: &Panel, n_groups: usize, opts: &GfeOptions) -> Result<GfeFit> {
    fit_gfe_spec(
        panel,
        &ModelSpec::fused(panel.n_regressors()),
        n_groups,
        opts,
    )
}

/// Grouped fixed effects under an arbitrary estimating equation and
/// coefficient roles. Starts run in parallel; the result is the start with
/// the smallest SSE, ties to the lowest start index.
pub fn fit_gfe_spec(
    panel: &Panel,
    spec: &ModelSpec,
    n_groups: usize,
    opts: &GfeOptions,
) -> Result<GfeFit> {
    opts.validate()?;
    if n_groups == 0 {
        return Err(Error::InvalidOptions("G must be at least 1".into()));
    }
    if n_groups > panel.n_units() {
        return Err(Error::InvalidOptions(format!(
            "G={n_groups} exceeds N={}",
            panel.n_units()
        )));
    }
    let n_starts = if n_groups == 1 { 1 } else { opts.n_starts };
    let outcomes: Vec<Result<GfeFit>> = (0..n_starts)
        .into_par_iter()
        .map(|s| {
            let init = match (&opts.init, s) {
                (Some(a), 0) => a.clone(),
                _ => random_start(panel.n_units(), n_groups, opts.seed, s as u64),
            };
            run_start(panel, spec, init, opts).map(|mut f| {
                f.best_start = s;
                f
            })
        })
        .collect();
    let mut best: Option<GfeFit> = None;
    let mut first_err = None;
    let mut failed = 0;
    for out in outcomes {
        match out {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(fit) => {
            let mut fit = transfer_search(panel, spec, fit, opts)?;
            fit.failed_starts = failed;
            Ok(fit)
        }
        None => Err(Error::AllStartsFailed {
            n_starts,
            first: Box::new(first_err.expect("at least one start")),
        }),
    }
}

/// Single-unit transfers on the winning start: moves one unit to another
/// group whenever the refitted SSE drops, then reruns the alternation from
/// there. Lloyd fixed points need not be transfer-stable, so this can
/// improve on every start.
fn transfer_search(
    panel: &Panel,
    spec: &ModelSpec,
    mut fit: GfeFit,
    opts: &GfeOptions,
) -> Result<GfeFit> {
    let g_len = fit.assignment.n_groups();
    if g_len == 1 {
        return Ok(fit);
    }
    for _ in 0..opts.max_iters {
        let mut moved = None;
        'scan: for i in 0..panel.n_units() {
            let from = fit.assignment.label(i);
            if fit.assignment.sizes()[from] < 2 {
                continue;
            }
            for to in (0..g_len).filter(|&h| h != from) {
                let mut cand = fit.assignment.clone();
                cand.set(i, to);
                let Ok(path) = fit_unpenalized(panel, spec, &cand, opts.singular_policy) else {
                    continue;
                };
                let ssr = ssr_matrix(panel, spec.mode, &path);
                let sse: f64 = (0..panel.n_units())
                    .map(|u| ssr[u * g_len + cand.label(u)])
                    .sum();
                if sse < fit.sse - 1e-12 * fit.sse.max(1e-300) {
                    moved = Some(cand);
                    break 'scan;
                }
            }
        }
        let Some(cand) = moved else { break };
        let next = run_start(panel, spec, cand, opts)?;
        if next.sse >= fit.sse {
            break;
        }
        let best_start = fit.best_start;
        let mut trace = std::mem::take(&mut fit.sse_trace);
        trace.extend(&next.sse_trace);
        fit = GfeFit {
            sse_trace: trace,
            best_start,
            iterations: fit.iterations + 1 + next.iterations,
            ..next
        };
    }
    Ok(fit)
}

/// Uniform draw over labelings with every group non-empty.
fn random_start(n_units: usize, n_groups: usize, seed: u64, stream: u64) -> GroupAssignment {
    let mut rng = rng_for(seed, stream);
    loop {
        let labels: Vec<usize> = (0..n_units)
            .map(|_| rng.random_range(0..n_groups))
            .collect();
        let a = GroupAssignment::new(labels, n_groups).expect("labels in range");
        if !a.has_empty_group() {
            return a;
        }
    }
}

fn run_start(
    panel: &Panel,
    spec: &ModelSpec,
    mut gamma: GroupAssignment,
    opts: &GfeOptions,
) -> Result<GfeFit> {
    let g_len = gamma.n_groups();
    if gamma.has_empty_group() {
        let ssr = vec![0.0; panel.n_units() * g_len];
        repair_empty_groups(&mut gamma, &ssr);
    }
    let mut path = fit_unpenalized(panel, spec, &gamma, opts.singular_policy)?;
    let mut ssr = ssr_matrix(panel, spec.mode, &path);
    let total = |gamma: &GroupAssignment, ssr: &[f64]| -> f64 {
        (0..gamma.n_units())
            .map(|i| ssr[i * g_len + gamma.label(i)])
            .sum()
    };
    let mut trace = vec![total(&gamma, &ssr)];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let labels = (0..panel.n_units())
            .map(|i| argmin(&ssr[i * g_len..(i + 1) * g_len]))
            .collect();
        let mut next = GroupAssignment::new(labels, g_len)?;
        repair_empty_groups(&mut next, &ssr);
        if next == gamma {
            break;
        }
        iterations += 1;
        gamma = next;
        path = fit_unpenalized(panel, spec, &gamma, opts.singular_policy)?;
        ssr = ssr_matrix(panel, spec.mode, &path);
        trace.push(total(&gamma, &ssr));
    }
    Ok(GfeFit {
        sse: *trace.last().expect("non-empty trace"),
        path,
        assignment: gamma,
        best_start: 0,
        iterations,
        sse_trace: trace,
        failed_starts: 0,
    })
}
