//! Adaptive group fused lasso for a fixed group assignment.
//!
//! Within a group the objective is
//! `(1/NT) sum_i sum_t (y_it - x_it' beta_t)^2 + lambda sum_{t>=2} w_t ||beta_t - beta_{t-1}||`,
//! solved by block coordinate descent over the jumps `theta_t`. Multiplying
//! through by `NT`, a jump block with Gram `A` and score `b` (evaluated with
//! the block itself set to zero) minimizes
//! `theta' A theta - 2 b' theta + p ||theta||` with `p = NT lambda w_t`.
//! The block is exactly zero iff `||b|| <= p / 2`; otherwise it solves
//! `(A + p / (2 ||theta||) I) theta = b`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{BlockKind, GroupStats, Layout, QuadProblem};
use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, is_well_conditioned_pd, SingularPolicy};
use crate::model::{
    BreakStructure, CoefRole, CoefficientPath, GroupAssignment, GroupRegimes, Mode, ModelSpec,
    Panel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgflOptions {
    pub kappa: f64,
    pub tol_theta: f64,
    pub tol_obj: f64,
    pub max_sweeps: usize,
    pub weight_floor: f64,
    pub singular_policy: SingularPolicy,
}

impl Default for AgflOptions {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            tol_theta: 1e-6,
            tol_obj: 1e-10,
            max_sweeps: 1000,
            weight_floor: 1e-10,
            singular_policy: SingularPolicy::Error,
        }
    }
}

impl AgflOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.kappa, self.tol_theta, self.tol_obj, self.weight_floor];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.max_sweeps == 0 {
            return Err(Error::InvalidOptions(
                "kappa, tolerances, weight floor and max_sweeps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Adaptive weights `w_{g,t}` for `t = 2..T`, stored `G x (T-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeights {
    n_groups: usize,
    n_periods: usize,
    values: Vec<f64>,
}

impl AdaptiveWeights {
    pub fn from_values(n_groups: usize, n_periods: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_groups * (n_periods - 1) {
            return Err(Error::InvalidStructure(
                "weight table has wrong size".into(),
            ));
        }
        if values.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidStructure(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(Self {
            n_groups,
            n_periods,
            values,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Weights of group `g`; entry `t - 1` belongs to the jump at 0-based
    /// period `t`.
    pub fn row(&self, g: usize) -> &[f64] {
        let w = self.n_periods - 1;
        &self.values[g * w..(g + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    pub fn permute_groups(&self, perm: &[usize]) -> Self {
        let w = self.n_periods - 1;
        let mut values = vec![0.0; self.values.len()];
        for g in 0..self.n_groups {
            values[perm[g] * w..(perm[g] + 1) * w].copy_from_slice(self.row(g));
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// `w_{g,t} = max(||b_{g,t} - b_{g,t-1}||, floor)^-kappa` over all coordinates.
pub fn compute_weights(prelim: &CoefficientPath, kappa: f64, weight_floor: f64) -> AdaptiveWeights {
    let all: Vec<usize> = (0..prelim.dim()).collect();
    compute_weights_on(prelim, kappa, weight_floor, &all)
}

/// As [`compute_weights`], measuring differences over `coords` only.
pub fn compute_weights_on(
    prelim: &CoefficientPath,
    kappa: f64,
    weight_floor: f64,
    coords: &[usize],
) -> AdaptiveWeights {
    let mut values = Vec::with_capacity(prelim.n_groups() * (prelim.n_periods() - 1));
    for g in 0..prelim.n_groups() {
        for t in 1..prelim.n_periods() {
            let d = prelim.jump_norm(g, t, coords).max(weight_floor);
            values.push(d.powf(-kappa));
        }
    }
    AdaptiveWeights {
        n_groups: prelim.n_groups(),
        n_periods: prelim.n_periods(),
        values,
    }
}

/// Result of one penalized block minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockUpdate {
    pub theta: DVector<f64>,
    pub is_zero: bool,
    /// Root search failed and a majorization step was taken instead.
    pub fallback: bool,
}

/// Eigen-decomposed block Gram, reused across sweeps.
#[derive(Debug, Clone)]
pub struct BlockGram {
    a: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl BlockGram {
    pub fn new(a: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(a.clone());
        let eigvals = eig.eigenvalues.map(|e| e.max(0.0));
        Self {
            a,
            eigvals,
            eigvecs: eig.eigenvectors,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn max_eig(&self) -> f64 {
        self.eigvals.max()
    }
}

/// Minimizes `theta' A theta - 2 b' theta + penalty ||theta||`.
pub fn block_update(a: &DMatrix<f64>, b: &DVector<f64>, penalty: f64) -> BlockUpdate {
    let gram = BlockGram::new(a.clone());
    let zero = DVector::zeros(b.len());
    block_update_with(&gram, b, penalty, &zero)
}

/// As [`block_update`] with a cached decomposition; `current` seeds the
/// majorization fallback.
pub fn block_update_with(
    gram: &BlockGram,
    b: &DVector<f64>,
    penalty: f64,
    current: &DVector<f64>,
) -> BlockUpdate {
    let bnorm = b.norm();
    if bnorm <= penalty / 2.0 {
        return BlockUpdate {
            theta: DVector::zeros(b.len()),
            is_zero: true,
            fallback: false,
        };
    }
    let proj = gram.eigvecs.tr_mul(b);
    let solve_at = |mu: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            proj.len(),
            proj.iter()
                .zip(gram.eigvals.iter())
                .map(|(p, e)| p / (e + mu)),
        );
        &gram.eigvecs * scaled
    };
    if penalty == 0.0 {
        if gram.eigvals.min() > 0.0 {
            return BlockUpdate {
                theta: solve_at(0.0),
                is_zero: false,
                fallback: false,
            };
        }
        return majorize(gram, b, penalty, current);
    }
    if b.len() == 1 {
        let a = gram.a[(0, 0)];
        if a > 0.0 {
            let shrunk = bnorm - penalty / 2.0;
            return BlockUpdate {
                theta: DVector::from_element(1, b[0].signum() * shrunk / a),
                is_zero: false,
                fallback: false,
            };
        }
        return majorize(gram, b, penalty, current);
    }
    match secular_root(&proj, &gram.eigvals, penalty, bnorm) {
        Some(mu) => BlockUpdate {
            theta: solve_at(mu),
            is_zero: false,
            fallback: false,
        },
        None => majorize(gram, b, penalty, current),
    }
}

/// Finds `mu > 0` with `2 || mu (A + mu I)^-1 b || = penalty`, which fixes
/// `||theta|| = penalty / (2 mu)`. The left side increases in `mu`.
fn secular_root(
    proj: &DVector<f64>,
    eigvals: &DVector<f64>,
    penalty: f64,
    bnorm: f64,
) -> Option<f64> {
    let h = |mu: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for (p, e) in proj.iter().zip(eigvals.iter()) {
            let denom = e + mu;
            let ratio = mu * p / denom;
            s += ratio * ratio;
            ds += 2.0 * p * p * mu * e / (denom * denom * denom);
        }
        let root = s.sqrt();
        (
            2.0 * root - penalty,
            if root > 0.0 { ds / root } else { 0.0 },
        )
    };
    let gap = 2.0 * bnorm - penalty;
    let mut lo = penalty * eigvals.min() / gap;
    let mut hi = penalty * eigvals.max() / gap;
    if !(hi > 0.0) || !hi.is_finite() {
        return None;
    }
    if h(lo).0 > 0.0 {
        // only possible with a singular Gram; the block problem is unbounded
        return None;
    }
    if (hi - lo) <= f64::EPSILON * hi {
        return Some(hi);
    }
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..60 {
        let (f, df) = h(mu);
        if f.abs() <= 1e-15 * penalty {
            return Some(mu);
        }
        if f > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
        let newton = if df > 0.0 { mu - f / df } else { f64::NAN };
        mu = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Some(0.5 * (lo + hi));
        }
    }
    let (f, _) = h(mu);
    (f.abs() <= 1e-10 * penalty).then_some(mu)
}

fn majorize(
    gram: &BlockGram,
    b: &DVector<f64>,
    penalty: f64,
    current: &DVector<f64>,
) -> BlockUpdate {
    let l = gram.max_eig().max(f64::MIN_POSITIVE);
    let step = current + (b - &gram.a * current) / l;
    let norm = step.norm();
    let thr = penalty / (2.0 * l);
    if norm <= thr {
        BlockUpdate {
            theta: DVector::zeros(b.len()),
            is_zero: true,
            fallback: true,
        }
    } else {
        BlockUpdate {
            theta: step * (1.0 - thr / norm),
            is_zero: false,
            fallback: true,
        }
    }
}

/// Stationarity residual `(A + p/(2||theta||)) theta - b` for an active block,
/// or the threshold excess `max(||b|| - p/2, 0)` for a zero block.
pub fn block_kkt_residual(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    penalty: f64,
    theta: &DVector<f64>,
) -> f64 {
    let norm = theta.norm();
    if norm == 0.0 {
        (b.norm() - penalty / 2.0).max(0.0)
    } else {
        (a * theta + theta * (penalty / (2.0 * norm)) - b).norm()
    }
}

const POLISH_EVERY: usize = 25;
const POLISH_KKT: f64 = 1e-12;

/// Outcome of block coordinate descent on one group.
#[derive(Debug, Clone)]
pub struct BcdSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub fallbacks: usize,
    /// Objective after every block update when tracing is on.
    pub trace: Vec<f64>,
}

enum BlockSolver {
    Free(DMatrix<f64>),
    Penalized(BlockGram, f64),
}

/// Penalty coefficient `NT lambda w` for each block; zero for unpenalized ones.
fn block_penalties(prob: &QuadProblem, layout: &Layout, weights: &[f64], lambda: f64) -> Vec<f64> {
    layout
        .blocks()
        .iter()
        .map(|blk| match blk.kind {
            BlockKind::Fused { period } => prob.scale * lambda * weights[period - 1],
            _ => 0.0,
        })
        .collect()
}

fn penalty_value(layout: &Layout, z: &DVector<f64>, penalties: &[f64], scale: f64) -> f64 {
    layout
        .blocks()
        .iter()
        .zip(penalties)
        .filter(|(_, p)| **p > 0.0)
        .map(|(blk, p)| p / scale * z.rows(blk.start, blk.len).norm())
        .sum()
}

/// Penalized objective `(1/NT) loss + lambda sum w ||z_t||` of one group.
pub fn group_objective(
    prob: &QuadProblem,
    layout: &Layout,
    weights: &[f64],
    lambda: f64,
    z: &DVector<f64>,
) -> f64 {
    let pens = block_penalties(prob, layout, weights, lambda);
    prob.loss(z) + penalty_value(layout, z, &pens, prob.scale)
}

/// Block coordinate descent. Sweeps blocks in period order, stopping when
/// the largest entry change falls below `tol_theta`, the relative objective
/// change below `tol_obj`, or after `max_sweeps`.
pub fn solve_penalized(
    prob: &QuadProblem,
    layout: &Layout,
    weights: &[f64],
    lambda: f64,
    opts: &AgflOptions,
    z0: Option<&DVector<f64>>,
    group: usize,
    trace: bool,
) -> Result<BcdSolution> {
    let penalties = block_penalties(prob, layout, weights, lambda);
    let solvers = layout
        .blocks()
        .iter()
        .zip(&penalties)
        .map(|(blk, &p)| {
            let a = prob
                .q
                .view((blk.start, blk.start), (blk.len, blk.len))
                .into_owned();
            match blk.kind {
                BlockKind::Fused { .. } => Ok(BlockSolver::Penalized(BlockGram::new(a), p)),
                _ => inverse_spd(&a, opts.singular_policy)
                    .map(BlockSolver::Free)
                    .ok_or_else(|| Error::SingularGroup {
                        group,
                        detail: format!("unpenalized block {:?} has a singular Gram", blk.kind),
                    }),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut z = z0.cloned().unwrap_or_else(|| DVector::zeros(prob.dim()));
    let mut qz = &prob.q * &z;
    let objective_of = |z: &DVector<f64>, qz: &DVector<f64>| {
        prob.loss_with(z, qz) + penalty_value(layout, z, &penalties, prob.scale)
    };
    let mut objective = objective_of(&z, &qz);
    let mut trace_values = if trace { vec![objective] } else { Vec::new() };
    let mut fallbacks = 0;
    let mut converged = false;
    let mut sweeps = 0;
    let mut stalls = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for (blk, solver) in layout.blocks().iter().zip(&solvers) {
            let r = blk.range();
            let current = z.rows(blk.start, blk.len).into_owned();
            let a = prob.q.view((blk.start, blk.start), (blk.len, blk.len));
            let b = prob.c.rows(blk.start, blk.len) - qz.rows(blk.start, blk.len) + a * &current;
            let next = match solver {
                BlockSolver::Free(inv) => inv * &b,
                BlockSolver::Penalized(gram, p) => {
                    let up = block_update_with(gram, &b, *p, &current);
                    fallbacks += usize::from(up.fallback);
                    up.theta
                }
            };
            let delta = &next - &current;
            let change = delta.amax();
            if change > 0.0 {
                qz += prob.q.columns(r.start, r.len()) * &delta;
                z.rows_mut(blk.start, blk.len).copy_from(&next);
            }
            max_change = max_change.max(change);
            if trace {
                trace_values.push(objective_of(&z, &qz));
            }
        }
        // refresh to shed accumulated rounding
        qz = &prob.q * &z;
        let next_obj = objective_of(&z, &qz);
        let rel = (objective - next_obj).abs() / next_obj.abs().max(f64::MIN_POSITIVE);
        objective = next_obj;
        let stalled = max_change < opts.tol_theta || rel < opts.tol_obj;
        // Coordinate descent in jump coordinates crawls on ill-conditioned
        // groups; Newton steps on the active blocks finish the job once the
        // support has settled, so try them at a stall and periodically.
        if stalled || sweeps % POLISH_EVERY == 0 {
            if let Some((zp, zeros_ok)) = polish(prob, layout, &penalties, &z) {
                let qzp = &prob.q * &zp;
                let obj_p = objective_of(&zp, &qzp);
                if obj_p <= objective + 1e-12 * objective.abs() {
                    z = zp;
                    qz = qzp;
                    objective = obj_p;
                    if trace {
                        trace_values.push(objective);
                    }
                    let tol = POLISH_KKT * objective.abs().max(1.0);
                    if zeros_ok && kkt_with(prob, layout, &penalties, &z) <= tol {
                        converged = true;
                        break;
                    }
                }
            }
        }
        if stalled {
            // a fused block wants to open: resume descent a few times
            stalls += 1;
            if stalls > 3 {
                converged = true;
                break;
            }
        }
    }
    Ok(BcdSolution {
        z,
        objective,
        sweeps,
        converged,
        fallbacks,
        trace: trace_values,
    })
}

/// Newton iterations on the smooth problem restricted to the current
/// support: unpenalized blocks and nonzero penalized blocks. Returns the
/// refined point and whether every zero block still satisfies its
/// threshold condition; `None` when the support would change.
fn polish(
    prob: &QuadProblem,
    layout: &Layout,
    penalties: &[f64],
    z0: &DVector<f64>,
) -> Option<(DVector<f64>, bool)> {
    let active: Vec<(usize, usize, f64)> = layout
        .blocks()
        .iter()
        .zip(penalties)
        .filter(|(blk, p)| **p == 0.0 || z0.rows(blk.start, blk.len).norm() > 0.0)
        .map(|(blk, p)| (blk.start, blk.len, *p))
        .collect();
    let idx: Vec<usize> = active.iter().flat_map(|&(s, l, _)| s..s + l).collect();
    let q_ss = prob.q.select_rows(&idx).select_columns(&idx);
    // half gradient and half Hessian of `z'Qz - 2c'z + sum p ||z_t||`
    let derivs = |z: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let qz = &prob.q * z;
        let mut g = DVector::from_iterator(idx.len(), idx.iter().map(|&e| qz[e] - prob.c[e]));
        let mut h = q_ss.clone();
        let mut pos = 0;
        for &(s, l, p) in &active {
            if p > 0.0 {
                let zt = z.rows(s, l);
                let norm = zt.norm();
                let u = zt / norm;
                for a in 0..l {
                    g[pos + a] += 0.5 * p * u[a];
                    for b in 0..l {
                        let eye = if a == b { 1.0 } else { 0.0 };
                        h[(pos + a, pos + b)] += 0.5 * p / norm * (eye - u[a] * u[b]);
                    }
                }
            }
            pos += l;
        }
        (g, h)
    };
    let mut z = z0.clone();
    let (mut g, mut h) = derivs(&z);
    let mut gnorm = g.norm();
    for _ in 0..50 {
        if gnorm == 0.0 {
            break;
        }
        let step = h.clone().cholesky()?.solve(&g);
        let mut next = z.clone();
        for (pos, &e) in idx.iter().enumerate() {
            next[e] -= step[pos];
        }
        let flips = active
            .iter()
            .any(|&(s, l, p)| p > 0.0 && next.rows(s, l).dot(&z.rows(s, l)) <= 0.0);
        if flips {
            return None;
        }
        let (ng, nh) = derivs(&next);
        let nnorm = ng.norm();
        if !(nnorm < gnorm) {
            break;
        }
        z = next;
        g = ng;
        h = nh;
        gnorm = nnorm;
    }
    let qz = &prob.q * &z;
    let zeros_ok = layout.blocks().iter().zip(penalties).all(|(blk, &p)| {
        p == 0.0
            || z.rows(blk.start, blk.len).norm() > 0.0
            || (prob.c.rows(blk.start, blk.len) - qz.rows(blk.start, blk.len)).norm() <= p / 2.0
    });
    Some((z, zeros_ok))
}

/// Largest KKT violation of `z`, in objective units (divided by `NT`).
pub fn kkt_residual(
    prob: &QuadProblem,
    layout: &Layout,
    weights: &[f64],
    lambda: f64,
    z: &DVector<f64>,
) -> f64 {
    kkt_with(
        prob,
        layout,
        &block_penalties(prob, layout, weights, lambda),
        z,
    )
}

fn kkt_with(prob: &QuadProblem, layout: &Layout, penalties: &[f64], z: &DVector<f64>) -> f64 {
    let qz = &prob.q * z;
    layout
        .blocks()
        .iter()
        .zip(penalties)
        .map(|(blk, &p)| {
            let cur = z.rows(blk.start, blk.len).into_owned();
            let a = prob
                .q
                .view((blk.start, blk.start), (blk.len, blk.len))
                .into_owned();
            let b = prob.c.rows(blk.start, blk.len) - qz.rows(blk.start, blk.len) + &a * &cur;
            // gradient of the scaled objective is twice the unscaled residual
            2.0 * block_kkt_residual(&a, &b, p, &cur) / prob.scale
        })
        .fold(0.0, f64::max)
}

/// Smallest lambda at which every penalized jump of the group is zero.
pub fn lambda_max(
    prob: &QuadProblem,
    layout: &Layout,
    weights: &[f64],
    policy: SingularPolicy,
    group: usize,
) -> Result<f64> {
    let z = restricted_solution(prob, layout, policy, group)?;
    let qz = &prob.q * &z;
    Ok(layout
        .blocks()
        .iter()
        .filter_map(|blk| match blk.kind {
            BlockKind::Fused { period } => {
                let b = prob.c.rows(blk.start, blk.len) - qz.rows(blk.start, blk.len);
                Some(2.0 * b.norm() / (prob.scale * weights[period - 1]))
            }
            _ => None,
        })
        .fold(0.0, f64::max))
}

/// Least squares with every penalized jump fixed at zero.
pub fn restricted_solution(
    prob: &QuadProblem,
    layout: &Layout,
    policy: SingularPolicy,
    group: usize,
) -> Result<DVector<f64>> {
    let free: Vec<usize> = layout
        .blocks()
        .iter()
        .filter(|blk| !matches!(blk.kind, BlockKind::Fused { .. }))
        .flat_map(|blk| blk.range())
        .collect();
    let a = prob.q.select_rows(&free).select_columns(&free);
    let c = prob.c.select_rows(&free);
    let sol = crate::linalg::solve_spd(&a, &c, policy).ok_or_else(|| Error::SingularGroup {
        group,
        detail: "restricted least-squares system is rank deficient".into(),
    })?;
    let mut z = DVector::zeros(prob.dim());
    for (pos, &e) in free.iter().enumerate() {
        z[e] = sol[pos];
    }
    Ok(z)
}

/// Penalized fit of one group.
#[derive(Debug, Clone)]
pub struct GroupFit {
    /// `T x k` path.
    pub path: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub fallbacks: usize,
}

/// Adaptive group fused lasso on the units in `members`, level equation with
/// every coefficient fused. The loss is scaled by `1 / (N T)` of the whole
/// panel. `init` is a `T x k` warm start.
pub fn agfl_solve_group(
    panel: &Panel,
    members: &[usize],
    weights: &[f64],
    lambda: f64,
    opts: &AgflOptions,
    init: Option<&[f64]>,
) -> Result<GroupFit> {
    let spec = ModelSpec::fused(panel.n_regressors());
    agfl_solve_group_spec(
        panel,
        &spec,
        members,
        weights,
        lambda,
        opts,
        init,
        &vec![0.0; spec.k()],
    )
}

/// As [`agfl_solve_group`] for any estimating equation and coefficient
/// roles. `hom` holds the current homogeneous coefficients; `init` and the
/// returned path are over the group coordinates only.
#[allow(clippy::too_many_arguments)]
pub fn agfl_solve_group_spec(
    panel: &Panel,
    spec: &ModelSpec,
    members: &[usize],
    weights: &[f64],
    lambda: f64,
    opts: &AgflOptions,
    init: Option<&[f64]>,
    hom: &[f64],
) -> Result<GroupFit> {
    opts.validate()?;
    if members.is_empty() {
        return Err(Error::InvalidOptions("group has no members".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidOptions("lambda must be nonnegative".into()));
    }
    let layout = Layout::new(spec, panel.n_periods());
    let stats: GroupStats = crate::design::group_stats(panel, spec, &layout, members, hom);
    let prob = QuadProblem::new(&stats, &layout, panel.n_obs() as f64);
    let z0 = init.map(|b| layout.z_from_beta(b));
    let sol = solve_penalized(&prob, &layout, weights, lambda, opts, z0.as_ref(), 0, false)?;
    Ok(GroupFit {
        path: layout.beta_from_z(sol.z.as_slice()),
        objective: sol.objective,
        sweeps: sol.sweeps,
        converged: sol.converged,
        fallbacks: sol.fallbacks,
    })
}

/// A homogeneous coefficient and its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousEstimate {
    pub coord: usize,
    pub estimate: f64,
    pub std_error: f64,
}

/// Unpenalized refit on estimated groups and regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostLasso {
    /// Break dates with refitted regime coefficients.
    pub regimes: BreakStructure,
    /// Per group, per regime, per coordinate.
    pub std_errors: Vec<Vec<Vec<f64>>>,
    pub coef_path: CoefficientPath,
    pub se_path: CoefficientPath,
    pub homogeneous: Vec<HomogeneousEstimate>,
    /// Unnormalized sum of squared residuals.
    pub sse: f64,
    pub n_params: usize,
}

/// Post-lasso OLS for the plain level model: pools units of group `g` over
/// the periods of each regime. Standard errors are sandwich estimates
/// clustered by unit.
pub fn post_lasso(
    panel: &Panel,
    assignment: &GroupAssignment,
    breaks: &BreakStructure,
) -> Result<PostLasso> {
    let dates: Vec<Vec<usize>> = breaks
        .groups
        .iter()
        .map(|g| g.break_dates.clone())
        .collect();
    post_lasso_spec(
        panel,
        &ModelSpec::fused(panel.n_regressors()),
        assignment,
        &dates,
        SingularPolicy::Error,
    )
}

/// Post-lasso refit for any estimating equation and coefficient roles.
/// `dates[g]` are the 1-based break dates of group `g`.
pub fn post_lasso_spec(
    panel: &Panel,
    spec: &ModelSpec,
    assignment: &GroupAssignment,
    dates: &[Vec<usize>],
    policy: SingularPolicy,
) -> Result<PostLasso> {
    refit(panel, spec, assignment, dates, policy, true)
}

/// Post-lasso refit; without `std_errors` every standard error is NaN.
pub(crate) fn refit(
    panel: &Panel,
    spec: &ModelSpec,
    assignment: &GroupAssignment,
    dates: &[Vec<usize>],
    policy: SingularPolicy,
    std_errors: bool,
) -> Result<PostLasso> {
    let t_len = panel.n_periods();
    let k = panel.n_regressors();
    let g_len = assignment.n_groups();
    if dates.len() != g_len {
        return Err(Error::InvalidStructure(format!(
            "{} break sets for {g_len} groups",
            dates.len()
        )));
    }
    for (g, d) in dates.iter().enumerate() {
        if d.iter().any(|&v| v < 2 || v > t_len) || d.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStructure(format!(
                "group {}: invalid break dates {d:?}",
                g + 1
            )));
        }
    }
    let regime_of = |g: usize, t: usize| dates[g].partition_point(|&d| d <= t + 1);

    // parameter map: homogeneous first, then per group
    let mut index = vec![0usize; g_len * t_len * k];
    let mut next = 0usize;
    let mut hom_index = vec![usize::MAX; k];
    for c in spec.homogeneous_coords() {
        hom_index[c] = next;
        next += 1;
    }
    let mut regime_params: Vec<Vec<Vec<usize>>> = Vec::with_capacity(g_len);
    for g in 0..g_len {
        let n_reg = dates[g].len() + 1;
        let mut fused_ids = vec![Vec::new(); n_reg];
        let mut base = vec![usize::MAX; k];
        for c in 0..k {
            match spec.roles[c] {
                CoefRole::Fused => {
                    for ids in fused_ids.iter_mut() {
                        ids.push(next);
                        next += 1;
                    }
                }
                CoefRole::TimeInvariant | CoefRole::TimeVarying => {
                    base[c] = next;
                    next += if spec.roles[c] == CoefRole::TimeVarying {
                        t_len
                    } else {
                        1
                    };
                }
                CoefRole::Homogeneous => {}
            }
        }
        let fused = spec.fused_coords();
        for t in 0..t_len {
            let j = regime_of(g, t);
            for c in 0..k {
                index[(g * t_len + t) * k + c] = match spec.roles[c] {
                    CoefRole::Fused => {
                        fused_ids[j][fused.iter().position(|&f| f == c).expect("fused coord")]
                    }
                    CoefRole::TimeInvariant => base[c],
                    CoefRole::TimeVarying => base[c] + t,
                    CoefRole::Homogeneous => hom_index[c],
                };
            }
        }
        regime_params.push(fused_ids);
    }
    let n_params = next;

    let rows_of = |i: usize| -> Vec<(Vec<(usize, f64)>, f64)> {
        let g = assignment.label(i);
        let idx = |t: usize, c: usize| index[(g * t_len + t) * k + c];
        match spec.mode {
            Mode::Level => (0..t_len)
                .map(|t| {
                    let x = panel.x(i, t);
                    (merge((0..k).map(|c| (idx(t, c), x[c]))), panel.y(i, t))
                })
                .collect(),
            Mode::FirstDifference => (1..t_len)
                .map(|t| {
                    let (x, xp) = (panel.x(i, t), panel.x(i, t - 1));
                    let entries = (0..k)
                        .map(|c| (idx(t, c), x[c]))
                        .chain((0..k).map(|c| (idx(t - 1, c), -xp[c])));
                    (merge(entries), panel.y(i, t) - panel.y(i, t - 1))
                })
                .collect(),
        }
    };

    let mut xtx = DMatrix::<f64>::zeros(n_params, n_params);
    let mut xty = DVector::<f64>::zeros(n_params);
    for i in 0..panel.n_units() {
        for (row, y) in rows_of(i) {
            for &(a, va) in &row {
                xty[a] += va * y;
                for &(b, vb) in &row {
                    xtx[(a, b)] += va * vb;
                }
            }
        }
    }

    for (g, regimes) in regime_params.iter().enumerate() {
        for (j, ids) in regimes.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let sub = xtx.select_rows(ids).select_columns(ids);
            if !is_well_conditioned_pd(&sub) && policy == SingularPolicy::Error {
                return Err(Error::DegenerateRegime {
                    group: g,
                    regime: j,
                    detail: format!(
                        "Gram over {} units in periods {:?} is singular",
                        assignment.sizes()[g],
                        regime_span(&dates[g], j, t_len)
                    ),
                });
            }
        }
    }
    let bread = inverse_spd(&xtx, policy)
        .ok_or_else(|| Error::Numerical("post-lasso normal equations are singular".into()))?;
    let coef = &bread * &xty;

    // Bias-reduced cluster-robust meat (CR2): each unit's residuals are
    // rescaled by (I - H_ii)^{-1/2}, H_ii its block of the hat matrix.
    let mut meat = DMatrix::<f64>::zeros(n_params, n_params);
    let mut sse = 0.0;
    let mut score = DVector::<f64>::zeros(n_params);
    for i in 0..panel.n_units() {
        let rows = rows_of(i);
        if !std_errors {
            sse += rows
                .iter()
                .map(|(row, y)| (y - row.iter().map(|&(a, v)| v * coef[a]).sum::<f64>()).powi(2))
                .sum::<f64>();
            continue;
        }
        let mut ids: Vec<usize> = rows
            .iter()
            .flat_map(|(r, _)| r.iter().map(|&(a, _)| a))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let mut xi = DMatrix::<f64>::zeros(rows.len(), ids.len());
        let mut e = DVector::<f64>::zeros(rows.len());
        for (ri, (row, y)) in rows.iter().enumerate() {
            e[ri] = y - row.iter().map(|&(a, v)| v * coef[a]).sum::<f64>();
            for &(a, v) in row {
                xi[(ri, ids.binary_search(&a).expect("own parameter"))] = v;
            }
        }
        sse += e.norm_squared();
        let b_sub = bread.select_rows(&ids).select_columns(&ids);
        let resid_maker = DMatrix::identity(rows.len(), rows.len()) - &xi * b_sub * xi.transpose();
        let eig = SymmetricEigen::new(resid_maker);
        let inv_root = eig
            .eigenvalues
            .map(|l| if l > 1e-10 { 1.0 / l.sqrt() } else { 0.0 });
        let adjusted = &eig.eigenvectors
            * DMatrix::from_diagonal(&inv_root)
            * eig.eigenvectors.transpose()
            * e;
        let local = xi.tr_mul(&adjusted);
        score.fill(0.0);
        for (pos, &a) in ids.iter().enumerate() {
            score[a] = local[pos];
        }
        meat.ger(1.0, &score, &score, 1.0);
    }
    let cov = &bread * meat * &bread;
    let se: Vec<f64> = (0..n_params)
        .map(|a| {
            if std_errors {
                cov[(a, a)].max(0.0).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();

    let mut coef_path = CoefficientPath::zeros(g_len, t_len, k);
    let mut se_path = CoefficientPath::zeros(g_len, t_len, k);
    for g in 0..g_len {
        for t in 0..t_len {
            for c in 0..k {
                let a = index[(g * t_len + t) * k + c];
                coef_path.get_mut(g, t)[c] = coef[a];
                se_path.get_mut(g, t)[c] = se[a];
            }
        }
    }
    let mut groups = Vec::with_capacity(g_len);
    let mut std_errors = Vec::with_capacity(g_len);
    for (g, d) in dates.iter().enumerate() {
        let starts: Vec<usize> = std::iter::once(1).chain(d.iter().copied()).collect();
        groups.push(GroupRegimes {
            break_dates: d.clone(),
            regime_coefs: starts
                .iter()
                .map(|&s| coef_path.get(g, s - 1).to_vec())
                .collect(),
        });
        std_errors.push(
            starts
                .iter()
                .map(|&s| se_path.get(g, s - 1).to_vec())
                .collect(),
        );
    }
    let homogeneous = spec
        .homogeneous_coords()
        .into_iter()
        .map(|c| HomogeneousEstimate {
            coord: c,
            estimate: coef[hom_index[c]],
            std_error: se[hom_index[c]],
        })
        .collect();
    Ok(PostLasso {
        regimes: BreakStructure {
            n_periods: t_len,
            dim: k,
            groups,
        },
        std_errors,
        coef_path,
        se_path,
        homogeneous,
        sse,
        n_params,
    })
}

fn regime_span(dates: &[usize], j: usize, t_len: usize) -> (usize, usize) {
    let start = if j == 0 { 1 } else { dates[j - 1] };
    let end = dates.get(j).copied().unwrap_or(t_len + 1) - 1;
    (start, end)
}

fn merge(entries: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (a, v) in entries {
        match out.iter_mut().find(|(b, _)| *b == a) {
            Some(slot) => slot.1 += v,
            None => out.push((a, v)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formula() {
        let p = CoefficientPath::from_scalar_rows(&[vec![0.0, 0.5, 1.5, 1.5]]).unwrap();
        let w = compute_weights(&p, 2.0, 1e-10);
        assert!((w.row(0)[0] - 4.0).abs() < 1e-12);
        assert!((w.row(0)[1] - 1.0).abs() < 1e-12);
        assert!((w.row(0)[2] - 1e20).abs() / 1e20 < 1e-12);
        let w3 = compute_weights(&p, 3.7, 1e-10);
        assert!((w3.row(0)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_is_exact_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let b = DVector::from_vec(vec![0.3, 0.4]); // norm 0.5
        let up = block_update(&a, &b, 1.0 + 1e-12);
        assert!(up.is_zero);
        assert_eq!(up.theta, DVector::zeros(2));
    }

    #[test]
    fn identity_gram_is_group_soft_threshold() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![3.0, 0.0, 4.0]);
        let penalty = 4.0; // effective threshold 2
        let up = block_update(&a, &b, penalty);
        let expect = &b * (1.0 - 2.0 / 5.0);
        assert!((up.theta - expect).amax() < 1e-12);
    }

    #[test]
    fn scalar_block_closed_form() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DVector::from_element(1, -3.0);
        let up = block_update(&a, &b, 2.0);
        assert!((up.theta[0] - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn merge_sums_duplicates() {
        let m = merge([(1, 2.0), (3, 1.0), (1, -0.5)].into_iter());
        assert_eq!(m, vec![(1, 1.5), (3, 1.0)]);
    }
}
