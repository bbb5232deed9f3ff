//! Per-group least-squares problems in the jump parameterization.
//!
//! For one group the loss is a quadratic in the period coefficients
//! `beta_t`: `sum (target - u' beta)^2 = beta' H beta - 2 v' beta + yy`, where
//! `H` is block diagonal in the level equation and block tridiagonal after
//! first differencing. The solver works on jumps: `beta_t = sum_{s<=t} z_s`,
//! so `beta = L z` and the loss becomes `z' (L'HL) z - 2 (L'v)' z + yy`.
//!
//! Each group coordinate contributes a base entry at period 0. Fused and
//! time-varying coordinates also get one jump entry per later period;
//! time-invariant coordinates get none. Homogeneous coordinates are not part
//! of the group problem: their contribution is subtracted from the target.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SingularPolicy};
use crate::model::{CoefRole, CoefficientPath, GroupAssignment, Mode, ModelSpec, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Period-0 levels of every group coordinate. Unpenalized.
    Base,
    /// Jump of the fused coordinates at 0-based `period >= 1`. Penalized.
    Fused { period: usize },
    /// Jump of the time-varying coordinates at `period >= 1`. Unpenalized.
    Free { period: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub len: usize,
    pub kind: BlockKind,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Mapping between the jump vector `z` and a group's local `T x kg` path.
#[derive(Debug, Clone)]
pub struct Layout {
    n_periods: usize,
    group_coords: Vec<usize>,
    /// `(period, local coordinate)` for each entry of `z`.
    entries: Vec<(usize, usize)>,
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new(spec: &ModelSpec, n_periods: usize) -> Self {
        let group_coords = spec.group_coords();
        let local_roles: Vec<CoefRole> = group_coords.iter().map(|&c| spec.roles[c]).collect();
        let kg = group_coords.len();
        let mut entries: Vec<(usize, usize)> = (0..kg).map(|lc| (0, lc)).collect();
        let mut blocks = vec![Block {
            start: 0,
            len: kg,
            kind: BlockKind::Base,
        }];
        let fused: Vec<usize> = (0..kg)
            .filter(|&lc| local_roles[lc] == CoefRole::Fused)
            .collect();
        let free: Vec<usize> = (0..kg)
            .filter(|&lc| local_roles[lc] == CoefRole::TimeVarying)
            .collect();
        for t in 1..n_periods {
            for (coords, kind) in [
                (&fused, BlockKind::Fused { period: t }),
                (&free, BlockKind::Free { period: t }),
            ] {
                if coords.is_empty() {
                    continue;
                }
                blocks.push(Block {
                    start: entries.len(),
                    len: coords.len(),
                    kind,
                });
                entries.extend(coords.iter().map(|&lc| (t, lc)));
            }
        }
        Self {
            n_periods,
            group_coords,
            entries,
            blocks,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Panel coordinates of the group-specific coefficients.
    pub fn group_coords(&self) -> &[usize] {
        &self.group_coords
    }

    pub fn kg(&self) -> usize {
        self.group_coords.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Local `T x kg` path from jumps.
    pub fn beta_from_z(&self, z: &[f64]) -> Vec<f64> {
        let kg = self.kg();
        let mut jumps = vec![0.0; self.n_periods * kg];
        for (e, &(t, lc)) in self.entries.iter().enumerate() {
            jumps[t * kg + lc] = z[e];
        }
        for t in 1..self.n_periods {
            for lc in 0..kg {
                jumps[t * kg + lc] += jumps[(t - 1) * kg + lc];
            }
        }
        jumps
    }

    /// Jumps from a local `T x kg` path. Coordinates without jump entries
    /// keep their period-0 value.
    pub fn z_from_beta(&self, beta: &[f64]) -> DVector<f64> {
        let kg = self.kg();
        DVector::from_iterator(
            self.dim(),
            self.entries.iter().map(|&(t, lc)| {
                if t == 0 {
                    beta[lc]
                } else {
                    beta[t * kg + lc] - beta[(t - 1) * kg + lc]
                }
            }),
        )
    }

    /// Local path of group `g` read from a full path.
    pub fn local_beta(&self, path: &CoefficientPath, g: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_periods * self.kg());
        for t in 0..self.n_periods {
            let b = path.get(g, t);
            out.extend(self.group_coords.iter().map(|&c| b[c]));
        }
        out
    }

    /// Writes a local path into group `g` of a full path.
    pub fn write_beta(&self, path: &mut CoefficientPath, g: usize, beta: &[f64]) {
        let kg = self.kg();
        for t in 0..self.n_periods {
            let dst = path.get_mut(g, t);
            for (lc, &c) in self.group_coords.iter().enumerate() {
                dst[c] = beta[t * kg + lc];
            }
        }
    }
}

/// Quadratic loss in the period coefficients of one group.
#[derive(Debug, Clone)]
pub struct GroupStats {
    /// `(T kg) x (T kg)`, indexed `t * kg + local coordinate`.
    pub h: DMatrix<f64>,
    pub v: DVector<f64>,
    pub yy: f64,
    pub n_members: usize,
}

/// Accumulates the quadratic loss for `members`, with the homogeneous part
/// `x_hom' hom` removed from the outcome.
pub fn group_stats(
    panel: &Panel,
    spec: &ModelSpec,
    layout: &Layout,
    members: &[usize],
    hom: &[f64],
) -> GroupStats {
    let t_len = panel.n_periods();
    let gc = layout.group_coords();
    let kg = gc.len();
    let hc = spec.homogeneous_coords();
    let n = t_len * kg;
    let mut h = DMatrix::zeros(n, n);
    let mut v = DVector::zeros(n);
    let mut yy = 0.0;
    let target = |i: usize, t: usize| -> f64 {
        let x = panel.x(i, t);
        panel.y(i, t) - hc.iter().map(|&c| x[c] * hom[c]).sum::<f64>()
    };
    match spec.mode {
        Mode::Level => {
            for &i in members {
                for t in 0..t_len {
                    let x = panel.x(i, t);
                    let r = target(i, t);
                    let base = t * kg;
                    for a in 0..kg {
                        let xa = x[gc[a]];
                        v[base + a] += xa * r;
                        for b in 0..kg {
                            h[(base + a, base + b)] += xa * x[gc[b]];
                        }
                    }
                    yy += r * r;
                }
            }
        }
        Mode::FirstDifference => {
            let mut idx = vec![0usize; 2 * kg];
            let mut u = vec![0.0; 2 * kg];
            for &i in members {
                for t in 1..t_len {
                    let xc = panel.x(i, t);
                    let xp = panel.x(i, t - 1);
                    let r = target(i, t) - target(i, t - 1);
                    for a in 0..kg {
                        idx[a] = t * kg + a;
                        u[a] = xc[gc[a]];
                        idx[kg + a] = (t - 1) * kg + a;
                        u[kg + a] = -xp[gc[a]];
                    }
                    for a in 0..2 * kg {
                        v[idx[a]] += u[a] * r;
                        for b in 0..2 * kg {
                            h[(idx[a], idx[b])] += u[a] * u[b];
                        }
                    }
                    yy += r * r;
                }
            }
        }
    }
    GroupStats {
        h,
        v,
        yy,
        n_members: members.len(),
    }
}

/// The loss of one group in jump coordinates, scaled by `1 / scale`.
#[derive(Debug, Clone)]
pub struct QuadProblem {
    /// `L' H L`.
    pub q: DMatrix<f64>,
    /// `L' v`.
    pub c: DVector<f64>,
    pub yy: f64,
    /// `N T` of the full panel.
    pub scale: f64,
}

impl QuadProblem {
    pub fn new(stats: &GroupStats, layout: &Layout, scale: f64) -> Self {
        let kg = layout.kg();
        let t_len = layout.n_periods();
        let mut m = stats.h.clone();
        // suffix sums over row periods, then over column periods
        for s in (0..t_len.saturating_sub(1)).rev() {
            for a in 0..kg {
                let (dst, src) = (s * kg + a, (s + 1) * kg + a);
                for col in 0..m.ncols() {
                    m[(dst, col)] += m[(src, col)];
                }
            }
        }
        for s in (0..t_len.saturating_sub(1)).rev() {
            for a in 0..kg {
                let (dst, src) = (s * kg + a, (s + 1) * kg + a);
                for row in 0..m.nrows() {
                    m[(row, dst)] += m[(row, src)];
                }
            }
        }
        let mut vs = stats.v.clone();
        for s in (0..t_len.saturating_sub(1)).rev() {
            for a in 0..kg {
                vs[s * kg + a] += vs[(s + 1) * kg + a];
            }
        }
        let d = layout.dim();
        let pos: Vec<usize> = layout.entries.iter().map(|&(t, lc)| t * kg + lc).collect();
        let q = DMatrix::from_fn(d, d, |r, c| m[(pos[r], pos[c])]);
        let c = DVector::from_iterator(d, pos.iter().map(|&p| vs[p]));
        Self {
            q,
            c,
            yy: stats.yy,
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `(z'Qz - 2 c'z + yy) / scale` given `qz = Q z`.
    pub fn loss_with(&self, z: &DVector<f64>, qz: &DVector<f64>) -> f64 {
        (z.dot(qz) - 2.0 * self.c.dot(z) + self.yy) / self.scale
    }

    pub fn loss(&self, z: &DVector<f64>) -> f64 {
        self.loss_with(z, &(&self.q * z))
    }

    /// Unpenalized minimizer.
    pub fn solve(&self, group: usize, policy: SingularPolicy) -> Result<DVector<f64>> {
        solve_spd(&self.q, &self.c, policy).ok_or_else(|| Error::SingularGroup {
            group,
            detail: "least-squares system is rank deficient".into(),
        })
    }
}

/// Squared residual of unit `i` against group `g` of a full path.
pub fn unit_ssr(panel: &Panel, mode: Mode, i: usize, path: &CoefficientPath, g: usize) -> f64 {
    let fit = |t: usize| -> f64 {
        panel
            .x(i, t)
            .iter()
            .zip(path.get(g, t))
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    match mode {
        Mode::Level => (0..panel.n_periods())
            .map(|t| (panel.y(i, t) - fit(t)).powi(2))
            .sum(),
        Mode::FirstDifference => {
            let mut prev = fit(0);
            let mut acc = 0.0;
            for t in 1..panel.n_periods() {
                let cur = fit(t);
                let r = panel.y(i, t) - panel.y(i, t - 1) - cur + prev;
                acc += r * r;
                prev = cur;
            }
            acc
        }
    }
}

/// `N x G` matrix of unit residuals, row-major.
pub fn ssr_matrix(panel: &Panel, mode: Mode, path: &CoefficientPath) -> Vec<f64> {
    let g_len = path.n_groups();
    let mut out = vec![0.0; panel.n_units() * g_len];
    for i in 0..panel.n_units() {
        for g in 0..g_len {
            out[i * g_len + g] = unit_ssr(panel, mode, i, path, g);
        }
    }
    out
}

/// Least-squares update of the homogeneous coefficients given the
/// group-specific part of `path`. Returns a length-`k` vector holding the
/// new values at homogeneous coordinates and zeros elsewhere.
pub fn update_homogeneous(
    panel: &Panel,
    spec: &ModelSpec,
    assignment: &GroupAssignment,
    path: &CoefficientPath,
    policy: SingularPolicy,
) -> Result<Vec<f64>> {
    let hc = spec.homogeneous_coords();
    let gc = spec.group_coords();
    let kh = hc.len();
    let mut out = vec![0.0; spec.k()];
    if kh == 0 {
        return Ok(out);
    }
    let mut xtx = DMatrix::zeros(kh, kh);
    let mut xty = DVector::zeros(kh);
    let group_fit = |i: usize, t: usize| -> f64 {
        let x = panel.x(i, t);
        let b = path.get(assignment.label(i), t);
        gc.iter().map(|&c| x[c] * b[c]).sum::<f64>()
    };
    let mut u = vec![0.0; kh];
    for i in 0..panel.n_units() {
        let t0 = if spec.mode == Mode::Level { 0 } else { 1 };
        for t in t0..panel.n_periods() {
            let x = panel.x(i, t);
            let r = match spec.mode {
                Mode::Level => {
                    for (a, &c) in hc.iter().enumerate() {
                        u[a] = x[c];
                    }
                    panel.y(i, t) - group_fit(i, t)
                }
                Mode::FirstDifference => {
                    let xp = panel.x(i, t - 1);
                    for (a, &c) in hc.iter().enumerate() {
                        u[a] = x[c] - xp[c];
                    }
                    panel.y(i, t) - panel.y(i, t - 1) - group_fit(i, t) + group_fit(i, t - 1)
                }
            };
            for a in 0..kh {
                xty[a] += u[a] * r;
                for b in 0..kh {
                    xtx[(a, b)] += u[a] * u[b];
                }
            }
        }
    }
    let sol = solve_spd(&xtx, &xty, policy)
        .ok_or_else(|| Error::Numerical("homogeneous coefficients are not identified".into()))?;
    for (a, &c) in hc.iter().enumerate() {
        out[c] = sol[a];
    }
    Ok(out)
}

/// Sets every homogeneous coordinate of `path` to `hom`.
pub fn fill_homogeneous(path: &mut CoefficientPath, spec: &ModelSpec, hom: &[f64]) {
    let hc = spec.homogeneous_coords();
    for g in 0..path.n_groups() {
        for t in 0..path.n_periods() {
            let b = path.get_mut(g, t);
            for &c in &hc {
                b[c] = hom[c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(n: usize, t: usize, k: usize, seed: u64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = (0..n * t * k)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Panel::new(n, t, k, y, x).unwrap()
    }

    #[test]
    fn layout_round_trip() {
        let spec = ModelSpec {
            mode: Mode::Level,
            roles: vec![
                CoefRole::Fused,
                CoefRole::TimeVarying,
                CoefRole::TimeInvariant,
            ],
        };
        let layout = Layout::new(&spec, 4);
        // base 3 + 3 periods * (1 fused + 1 free)
        assert_eq!(layout.dim(), 9);
        let z = DVector::from_iterator(9, (0..9).map(|v| v as f64 + 1.0));
        let beta = layout.beta_from_z(z.as_slice());
        assert_eq!(layout.z_from_beta(&beta), z);
        // time-invariant coordinate stays at its base value
        for t in 0..4 {
            assert_eq!(beta[t * 3 + 2], 3.0);
        }
    }

    #[test]
    fn quad_loss_matches_direct_residuals() {
        for mode in [Mode::Level, Mode::FirstDifference] {
            let panel = random_panel(5, 4, 2, 3);
            let spec = ModelSpec::fused(2).with_mode(mode);
            let layout = Layout::new(&spec, 4);
            let members = [0, 2, 3];
            let stats = group_stats(&panel, &spec, &layout, &members, &[0.0, 0.0]);
            let prob = QuadProblem::new(&stats, &layout, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let z = DVector::from_iterator(
                layout.dim(),
                (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)),
            );
            let beta = layout.beta_from_z(z.as_slice());
            let mut path = CoefficientPath::zeros(1, 4, 2);
            layout.write_beta(&mut path, 0, &beta);
            let direct: f64 = members
                .iter()
                .map(|&i| unit_ssr(&panel, mode, i, &path, 0))
                .sum();
            assert!((prob.loss(&z) - direct).abs() < 1e-10, "{mode:?}");
        }
    }
}
