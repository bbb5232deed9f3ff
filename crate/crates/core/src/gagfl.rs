//! The joint estimator: GFE initialization, then alternation between
//! per-group adaptive group fused lasso and unit reassignment.

use std::collections::HashSet;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agfl::{
    compute_weights_on, refit, solve_penalized, AdaptiveWeights, AgflOptions, PostLasso,
};
use crate::design::{
    fill_homogeneous, group_stats, ssr_matrix, unit_ssr, update_homogeneous, Layout, QuadProblem,
};
use crate::error::{Error, Result};
use crate::gfe::{fit_gfe_spec, repair_empty_groups, GfeFit, GfeOptions};
use crate::linalg::SingularPolicy;
use crate::model::{
    infer_breaks_on, BreakStructure, CoefficientPath, GroupAssignment, Mode, ModelSpec, Panel,
    DEFAULT_BREAK_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GagflOptions {
    pub gfe: GfeOptions,
    pub agfl: AgflOptions,
    pub max_outer_iters: usize,
    pub mode: Mode,
    /// `true` = coefficient fused. `None` fuses every coefficient not named
    /// by another mask.
    pub penalized_mask: Option<Vec<bool>>,
    /// `true` = common to all groups and constant in time.
    pub homogeneous_mask: Option<Vec<bool>>,
    /// `true` = group specific but constant in time.
    pub time_invariant_mask: Option<Vec<bool>>,
    /// Jumps with norm at or below this are not breaks.
    pub break_tol: f64,
}

impl Default for GagflOptions {
    fn default() -> Self {
        Self {
            gfe: GfeOptions::default(),
            agfl: AgflOptions::default(),
            max_outer_iters: 100,
            mode: Mode::Level,
            penalized_mask: None,
            homogeneous_mask: None,
            time_invariant_mask: None,
            break_tol: DEFAULT_BREAK_TOL,
        }
    }
}

impl GagflOptions {
    /// Coefficient roles implied by the masks for `k` regressors.
    pub fn model_spec(&self, k: usize) -> Result<ModelSpec> {
        let check = |m: &Option<Vec<bool>>, name: &str| -> Result<Vec<bool>> {
            match m {
                Some(v) if v.len() != k => Err(Error::InvalidOptions(format!(
                    "{name} has length {} but there are {k} regressors",
                    v.len()
                ))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![false; k]),
            }
        };
        let hom = check(&self.homogeneous_mask, "homogeneous mask")?;
        let inv = check(&self.time_invariant_mask, "time-invariant mask")?;
        let pen = match &self.penalized_mask {
            Some(_) => check(&self.penalized_mask, "penalized mask")?,
            None => (0..k).map(|c| !hom[c] && !inv[c]).collect(),
        };
        ModelSpec::from_masks(self.mode, &pen, &hom, &inv)
    }

    pub fn validate(&self) -> Result<()> {
        self.gfe.validate()?;
        self.agfl.validate()?;
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidOptions(
                "max_outer_iters must be positive".into(),
            ));
        }
        if !(self.break_tol >= 0.0) {
            return Err(Error::InvalidOptions(
                "break_tol must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// GFE fit and the adaptive weights derived from it. Independent of lambda,
/// so one preliminary serves a whole grid.
#[derive(Debug, Clone)]
pub struct Preliminary {
    pub spec: ModelSpec,
    pub gfe: GfeFit,
    pub weights: AdaptiveWeights,
}

pub fn preliminary(panel: &Panel, n_groups: usize, opts: &GagflOptions) -> Result<Preliminary> {
    opts.validate()?;
    let spec = opts.model_spec(panel.n_regressors())?;
    spec.validate(panel)?;
    let gfe = fit_gfe_spec(panel, &spec, n_groups, &opts.gfe)?;
    let weights = compute_weights_on(
        &gfe.path,
        opts.agfl.kappa,
        opts.agfl.weight_floor,
        &spec.fused_coords(),
    );
    Ok(Preliminary { spec, gfe, weights })
}

/// Convergence and numerical flags of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// The assignment reached a fixed point.
    pub converged: bool,
    /// An earlier assignment recurred.
    pub cycled: bool,
    pub outer_iters: usize,
    pub empty_group_repairs: usize,
    /// Group solves that hit `max_sweeps`.
    pub bcd_nonconverged: usize,
    /// Block updates that fell back to a majorization step.
    pub root_fallbacks: usize,
    /// Penalized objective after each Step 1.
    pub objective_trace: Vec<f64>,
    pub gfe_sse: f64,
    pub gfe_failed_starts: usize,
}

/// Estimates for one `(G, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n_groups: usize,
    pub lambda: f64,
    pub spec: ModelSpec,
    pub assignment: GroupAssignment,
    /// Penalized path with exact zeros between breaks.
    pub penalized_path: CoefficientPath,
    pub weights: AdaptiveWeights,
    /// Post-lasso regimes and standard errors.
    pub post: PostLasso,
    /// Penalized objective at the final path.
    pub objective: f64,
    /// Post-lasso SSE divided by `N T`.
    pub sse: f64,
    /// Number of post-lasso parameters.
    pub n_params: usize,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn breaks(&self) -> &BreakStructure {
        &self.post.regimes
    }

    pub fn break_counts(&self) -> Vec<usize> {
        self.post.regimes.break_counts()
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn has_std_errors(&self) -> bool {
        !self.post.se_path.values().iter().any(|v| v.is_nan())
    }

    /// Fills in post-lasso standard errors for a fit made without them.
    pub fn compute_std_errors(&mut self, panel: &Panel, policy: SingularPolicy) -> Result<()> {
        if self.has_std_errors() {
            return Ok(());
        }
        let dates: Vec<Vec<usize>> = self
            .post
            .regimes
            .groups
            .iter()
            .map(|g| g.break_dates.clone())
            .collect();
        self.post = refit(panel, &self.spec, &self.assignment, &dates, policy, true)?;
        Ok(())
    }
}

/// Full estimator: GFE, weights, alternation, post-lasso.
pub fn fit_gagfl(
    panel: &Panel,
    n_groups: usize,
    lambda: f64,
    opts: &GagflOptions,
) -> Result<FitResult> {
    let prelim = preliminary(panel, n_groups, opts)?;
    fit_from_preliminary(panel, &prelim, lambda, opts)
}

/// As [`fit_gagfl`] with coefficient roles taken from the masks; at least
/// one mask must be set.
pub fn fit_partial(
    panel: &Panel,
    n_groups: usize,
    lambda: f64,
    opts: &GagflOptions,
) -> Result<FitResult> {
    if opts.penalized_mask.is_none()
        && opts.homogeneous_mask.is_none()
        && opts.time_invariant_mask.is_none()
    {
        return Err(Error::InvalidOptions(
            "partial fit needs at least one coefficient mask".into(),
        ));
    }
    fit_gagfl(panel, n_groups, lambda, opts)
}

/// Runs the alternation from a precomputed GFE fit.
pub fn fit_from_preliminary(
    panel: &Panel,
    prelim: &Preliminary,
    lambda: f64,
    opts: &GagflOptions,
) -> Result<FitResult> {
    fit_from_preliminary_with(panel, prelim, lambda, opts, true)
}

/// As [`fit_from_preliminary`]; without `std_errors` the post-lasso
/// standard errors are NaN until [`FitResult::compute_std_errors`].
pub fn fit_from_preliminary_with(
    panel: &Panel,
    prelim: &Preliminary,
    lambda: f64,
    opts: &GagflOptions,
    std_errors: bool,
) -> Result<FitResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidOptions(format!("invalid lambda {lambda}")));
    }
    let spec = &prelim.spec;
    let layout = Layout::new(spec, panel.n_periods());
    let g_len = prelim.gfe.assignment.n_groups();
    let hom_coords = spec.homogeneous_coords();
    let mut gamma = prelim.gfe.assignment.clone();
    let mut path = prelim.gfe.path.clone();
    let mut hom = vec![0.0; spec.k()];
    for &c in &hom_coords {
        hom[c] = path.get(0, 0)[c];
    }
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(gamma.labels().to_vec());
    let mut diag = Diagnostics {
        converged: false,
        cycled: false,
        outer_iters: 0,
        empty_group_repairs: 0,
        bcd_nonconverged: 0,
        root_fallbacks: 0,
        objective_trace: Vec::new(),
        gfe_sse: prelim.gfe.sse,
        gfe_failed_starts: prelim.gfe.failed_starts,
    };
    let mut objective;
    loop {
        diag.outer_iters += 1;
        objective = step_one(
            panel, prelim, &layout, &gamma, lambda, opts, &mut path, &mut hom, &mut diag,
        )?;
        diag.objective_trace.push(objective);

        let ssr = ssr_matrix(panel, spec.mode, &path);
        let labels = (0..panel.n_units())
            .map(|i| argmin(&ssr[i * g_len..(i + 1) * g_len]))
            .collect();
        let mut next = GroupAssignment::new(labels, g_len)?;
        let moved = repair_empty_groups(&mut next, &ssr);
        if moved > 0 {
            log::warn!("repaired {moved} empty group(s) after reassignment");
        }
        diag.empty_group_repairs += moved;
        if next == gamma {
            diag.converged = true;
            break;
        }
        if !seen.insert(next.labels().to_vec()) {
            log::warn!(
                "assignment cycle detected after {} outer iterations",
                diag.outer_iters
            );
            diag.cycled = true;
            break;
        }
        if diag.outer_iters >= opts.max_outer_iters {
            log::warn!("outer loop stopped at max_outer_iters without a fixed point");
            break;
        }
        gamma = next;
    }

    let breaks = infer_breaks_on(&path, opts.break_tol, &spec.fused_coords());
    let dates: Vec<Vec<usize>> = breaks
        .groups
        .iter()
        .map(|g| g.break_dates.clone())
        .collect();
    let post = refit(
        panel,
        spec,
        &gamma,
        &dates,
        opts.gfe.singular_policy,
        std_errors,
    )?;
    Ok(FitResult {
        n_groups: g_len,
        lambda,
        spec: spec.clone(),
        assignment: gamma,
        penalized_path: path,
        weights: prelim.weights.clone(),
        sse: post.sse / panel.n_obs() as f64,
        n_params: post.n_params,
        post,
        objective,
        diagnostics: diag,
    })
}

/// Step 1: penalized fit of every group given the assignment, alternating
/// with the homogeneous coefficients when there are any. Returns the
/// penalized objective.
#[allow(clippy::too_many_arguments)]
fn step_one(
    panel: &Panel,
    prelim: &Preliminary,
    layout: &Layout,
    gamma: &GroupAssignment,
    lambda: f64,
    opts: &GagflOptions,
    path: &mut CoefficientPath,
    hom: &mut Vec<f64>,
    diag: &mut Diagnostics,
) -> Result<f64> {
    let spec = &prelim.spec;
    let has_hom = !spec.homogeneous_coords().is_empty();
    let scale = panel.n_obs() as f64;
    let max_rounds = if has_hom { 200 } else { 1 };
    let mut objective = f64::INFINITY;
    for _ in 0..max_rounds {
        let solved: Vec<Result<(Vec<f64>, f64, bool, usize)>> = (0..gamma.n_groups())
            .into_par_iter()
            .map(|g| {
                let members = gamma.members(g);
                let stats = group_stats(panel, spec, layout, &members, hom);
                let prob = QuadProblem::new(&stats, layout, scale);
                let z0: DVector<f64> = layout.z_from_beta(&layout.local_beta(path, g));
                let sol = solve_penalized(
                    &prob,
                    layout,
                    prelim.weights.row(g),
                    lambda,
                    &opts.agfl,
                    Some(&z0),
                    g,
                    false,
                )?;
                Ok((
                    layout.beta_from_z(sol.z.as_slice()),
                    sol.objective,
                    sol.converged,
                    sol.fallbacks,
                ))
            })
            .collect();
        let mut total = 0.0;
        for (g, res) in solved.into_iter().enumerate() {
            let (beta, obj, converged, fallbacks) = res?;
            layout.write_beta(path, g, &beta);
            total += obj;
            diag.bcd_nonconverged += usize::from(!converged);
            diag.root_fallbacks += fallbacks;
        }
        if !has_hom {
            return Ok(total);
        }
        let next = update_homogeneous(panel, spec, gamma, path, opts.gfe.singular_policy)?;
        let change = next
            .iter()
            .zip(hom.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        *hom = next;
        fill_homogeneous(path, spec, hom);
        let prev = objective;
        objective = penalized_objective(panel, spec, gamma, path, &prelim.weights, lambda);
        let size = hom.iter().map(|v| v.abs()).fold(1.0, f64::max);
        if change <= 1e-10 * size || (prev - objective).abs() <= 1e-14 * objective.abs() {
            break;
        }
    }
    Ok(objective)
}

/// Penalized objective of a full path evaluated directly from the data:
/// `(1/NT) sum_i SSR_i + lambda sum_g sum_{t>=2} w_{g,t} ||jump over fused coords||`.
pub fn penalized_objective(
    panel: &Panel,
    spec: &ModelSpec,
    assignment: &GroupAssignment,
    path: &CoefficientPath,
    weights: &AdaptiveWeights,
    lambda: f64,
) -> f64 {
    let loss: f64 = (0..panel.n_units())
        .map(|i| unit_ssr(panel, spec.mode, i, path, assignment.label(i)))
        .sum();
    let fused = spec.fused_coords();
    let pen: f64 = (0..path.n_groups())
        .map(|g| {
            (1..path.n_periods())
                .map(|t| weights.row(g)[t - 1] * path.jump_norm(g, t, &fused))
                .sum::<f64>()
        })
        .sum();
    loss / panel.n_obs() as f64 + lambda * pen
}

fn argmin(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (g, &v)| if v < best.1 { (g, v) } else { best },
        )
        .0
}

/// First-differenced regression `dy_it = x_it' b_t - x_{i,t-1}' b_{t-1} + de_it`
/// over `t = 2..T`, with coefficients still indexed by level periods.
#[derive(Debug, Clone)]
pub struct DifferencedPanel {
    n_units: usize,
    n_periods: usize,
    k: usize,
    /// `N x (T-1)`, entry `t - 1` for `t = 1..T-1` (0-based).
    dy: Vec<f64>,
    x: Vec<f64>,
}

pub fn first_difference(panel: &Panel) -> Result<DifferencedPanel> {
    let (n, t_len, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    if t_len < 3 {
        return Err(Error::InvalidPanel(
            "first differencing needs T >= 3".into(),
        ));
    }
    let mut dy = Vec::with_capacity(n * (t_len - 1));
    for i in 0..n {
        for t in 1..t_len {
            dy.push(panel.y(i, t) - panel.y(i, t - 1));
        }
    }
    Ok(DifferencedPanel {
        n_units: n,
        n_periods: t_len,
        k,
        dy,
        x: panel.x_values().to_vec(),
    })
}

impl DifferencedPanel {
    pub fn n_rows(&self) -> usize {
        self.n_units * (self.n_periods - 1)
    }

    /// `dy_it` for 0-based `t >= 1`.
    pub fn dy(&self, i: usize, t: usize) -> f64 {
        self.dy[i * (self.n_periods - 1) + t - 1]
    }

    fn x(&self, i: usize, t: usize) -> &[f64] {
        let off = (i * self.n_periods + t) * self.k;
        &self.x[off..off + self.k]
    }

    /// Loadings of observation `(i, t)` on `beta_t` and `beta_{t-1}`.
    pub fn loadings(&self, i: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.x(i, t).to_vec(),
            self.x(i, t - 1).iter().map(|v| -v).collect(),
        )
    }

    /// Regressor of jump `theta_s` in observation `(i, t)`: `dx_it` when
    /// `s <= t - 1`, `x_it` when `s = t`, zero after.
    pub fn theta_regressor(&self, i: usize, t: usize, s: usize) -> Vec<f64> {
        if s > t {
            vec![0.0; self.k]
        } else if s == t {
            self.x(i, t).to_vec()
        } else {
            self.x(i, t)
                .iter()
                .zip(self.x(i, t - 1))
                .map(|(a, b)| a - b)
                .collect()
        }
    }
}
