//! Panel data, group assignments, coefficient paths and regime structures.
//!
//! Periods are indexed `0..T` internally. Break dates are reported on the
//! 1-based calendar used throughout the estimator: a break date `d` in
//! `2..=T` is the first period of a new regime, so regime `j` covers the
//! 1-based periods `d_{j-1} <= t < d_j` with sentinels `d_0 = 1` and
//! `d_{m+1} = T + 1`. Group labels are 0-based in code and 1-based in every
//! file the crate writes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance used when reading break dates off a coefficient path.
pub const DEFAULT_BREAK_TOL: f64 = 1e-8;

/// A balanced panel `y_it = x_it' beta + e_it` with `N` units, `T` periods and
/// `k` regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    n_units: usize,
    n_periods: usize,
    n_regressors: usize,
    /// Row-major `N x T`.
    y: Vec<f64>,
    /// `N x T x k`, regressor index fastest.
    x: Vec<f64>,
    unit_ids: Vec<String>,
    period_ids: Vec<String>,
    regressor_names: Vec<String>,
}

impl Panel {
    /// Builds a panel from flat buffers. `y` is `N x T` row-major and `x` is
    /// `N x T x k` with the regressor index varying fastest.
    pub fn new(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        let unit_ids = (1..=n_units).map(|i| i.to_string()).collect();
        let period_ids = (1..=n_periods).map(|t| t.to_string()).collect();
        let regressor_names = (1..=n_regressors).map(|c| format!("x{c}")).collect();
        Self::with_labels(
            n_units,
            n_periods,
            n_regressors,
            y,
            x,
            unit_ids,
            period_ids,
            regressor_names,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_labels(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_ids: Vec<String>,
        period_ids: Vec<String>,
        regressor_names: Vec<String>,
    ) -> Result<Self> {
        if n_units < 2 {
            return Err(Error::InvalidPanel(format!("need N >= 2, got {n_units}")));
        }
        if n_periods < 2 {
            return Err(Error::InvalidPanel(format!("need T >= 2, got {n_periods}")));
        }
        if n_regressors < 1 {
            return Err(Error::InvalidPanel("need k >= 1".into()));
        }
        if y.len() != n_units * n_periods {
            return Err(Error::InvalidPanel(format!(
                "y has {} entries, expected {}",
                y.len(),
                n_units * n_periods
            )));
        }
        if x.len() != n_units * n_periods * n_regressors {
            return Err(Error::InvalidPanel(format!(
                "x has {} entries, expected {}",
                x.len(),
                n_units * n_periods * n_regressors
            )));
        }
        if unit_ids.len() != n_units
            || period_ids.len() != n_periods
            || regressor_names.len() != n_regressors
        {
            return Err(Error::InvalidPanel(
                "label vectors do not match dimensions".into(),
            ));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite y at unit {} period {}",
                unit_ids[pos / n_periods],
                period_ids[pos % n_periods]
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let cell = pos / n_regressors;
            return Err(Error::InvalidPanel(format!(
                "non-finite {} at unit {} period {}",
                regressor_names[pos % n_regressors],
                unit_ids[cell / n_periods],
                period_ids[cell % n_periods]
            )));
        }
        Ok(Self {
            n_units,
            n_periods,
            n_regressors,
            y,
            x,
            unit_ids,
            period_ids,
            regressor_names,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_regressors(&self) -> usize {
        self.n_regressors
    }

    #[inline]
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.n_periods + t]
    }

    #[inline]
    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let k = self.n_regressors;
        let start = (i * self.n_periods + t) * k;
        &self.x[start..start + k]
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    /// Total number of observation cells, `N * T`.
    pub fn n_obs(&self) -> usize {
        self.n_units * self.n_periods
    }

    /// Returns a copy with every outcome multiplied by `c`.
    pub fn scale_outcome(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// True when regressor `c` takes the same value for every unit in every
    /// period (an intercept or a global variable).
    pub fn is_unit_invariant(&self, c: usize) -> bool {
        (0..self.n_periods).all(|t| {
            let v0 = self.x(0, t)[c];
            (1..self.n_units).all(|i| self.x(i, t)[c] == v0)
        })
    }

    /// True when regressor `c` equals one everywhere.
    pub fn is_intercept(&self, c: usize) -> bool {
        (0..self.n_units).all(|i| (0..self.n_periods).all(|t| self.x(i, t)[c] == 1.0))
    }
}

/// Group membership for each unit. Labels are `0..n_groups`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    n_groups: usize,
}

impl GroupAssignment {
    pub fn new(labels: Vec<usize>, n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::InvalidStructure("need at least one group".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= n_groups) {
            return Err(Error::InvalidStructure(format!(
                "label {bad} outside 0..{n_groups}"
            )));
        }
        Ok(Self { labels, n_groups })
    }

    /// Builds an assignment from 1-based labels.
    pub fn from_one_based(labels: &[usize], n_groups: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidStructure(
                "1-based labels must be >= 1".into(),
            ));
        }
        Self::new(labels.iter().map(|g| g - 1).collect(), n_groups)
    }

    pub fn single(n_units: usize) -> Self {
        Self {
            labels: vec![0; n_units],
            n_groups: 1,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_units(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == g).then_some(i))
            .collect()
    }

    pub fn has_empty_group(&self) -> bool {
        self.sizes().contains(&0)
    }

    /// Applies `perm`, mapping old label `g` to `perm[g]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            labels: self.labels.iter().map(|&g| perm[g]).collect(),
            n_groups: self.n_groups,
        }
    }

    pub(crate) fn set(&mut self, i: usize, g: usize) {
        self.labels[i] = g;
    }
}

/// Per-group, per-period coefficient vectors `beta_{g,t}` stored `G x T x k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPath {
    n_groups: usize,
    n_periods: usize,
    dim: usize,
    values: Vec<f64>,
}

impl CoefficientPath {
    pub fn zeros(n_groups: usize, n_periods: usize, dim: usize) -> Self {
        Self {
            n_groups,
            n_periods,
            dim,
            values: vec![0.0; n_groups * n_periods * dim],
        }
    }

    pub fn from_values(
        n_groups: usize,
        n_periods: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n_groups * n_periods * dim {
            return Err(Error::InvalidStructure(format!(
                "path needs {} values, got {}",
                n_groups * n_periods * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStructure(
                "path has non-finite entries".into(),
            ));
        }
        Ok(Self {
            n_groups,
            n_periods,
            dim,
            values,
        })
    }

    /// Scalar-coefficient path from one row per group.
    pub fn from_scalar_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_periods = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_periods) {
            return Err(Error::InvalidStructure("ragged rows".into()));
        }
        Self::from_values(rows.len(), n_periods, 1, rows.concat())
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, g: usize, t: usize) -> &[f64] {
        let start = (g * self.n_periods + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, g: usize, t: usize) -> &mut [f64] {
        let start = (g * self.n_periods + t) * self.dim;
        &mut self.values[start..start + self.dim]
    }

    /// Contiguous `T x k` block for group `g`.
    pub fn group(&self, g: usize) -> &[f64] {
        let len = self.n_periods * self.dim;
        &self.values[g * len..(g + 1) * len]
    }

    pub fn group_mut(&mut self, g: usize) -> &mut [f64] {
        let len = self.n_periods * self.dim;
        &mut self.values[g * len..(g + 1) * len]
    }

    /// `theta_{g,t} = beta_{g,t} - beta_{g,t-1}` for `t >= 1`, and
    /// `theta_{g,0} = beta_{g,0}`.
    pub fn jump(&self, g: usize, t: usize) -> Vec<f64> {
        if t == 0 {
            return self.get(g, 0).to_vec();
        }
        self.get(g, t)
            .iter()
            .zip(self.get(g, t - 1))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Euclidean norm of the jump at `t >= 1` restricted to `coords`.
    pub fn jump_norm(&self, g: usize, t: usize, coords: &[usize]) -> f64 {
        let cur = self.get(g, t);
        let prev = self.get(g, t - 1);
        coords
            .iter()
            .map(|&c| (cur[c] - prev[c]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Rebuilds a path from its jumps by cumulative summation.
    pub fn from_jumps(n_groups: usize, n_periods: usize, dim: usize, jumps: &[f64]) -> Self {
        let mut values = jumps.to_vec();
        for g in 0..n_groups {
            for t in 1..n_periods {
                for c in 0..dim {
                    let prev = values[(g * n_periods + t - 1) * dim + c];
                    values[(g * n_periods + t) * dim + c] += prev;
                }
            }
        }
        Self {
            n_groups,
            n_periods,
            dim,
            values,
        }
    }

    pub fn permute_groups(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n_groups, self.n_periods, self.dim);
        for g in 0..self.n_groups {
            out.group_mut(perm[g]).copy_from_slice(self.group(g));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Break dates and regime coefficients for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRegimes {
    /// Strictly increasing 1-based break dates in `2..=T`.
    pub break_dates: Vec<usize>,
    /// One coefficient vector per regime; `break_dates.len() + 1` rows.
    pub regime_coefs: Vec<Vec<f64>>,
}

impl GroupRegimes {
    pub fn n_breaks(&self) -> usize {
        self.break_dates.len()
    }

    /// Regime start dates with the leading sentinel `1`.
    pub fn regime_starts(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.break_dates.iter().copied())
            .collect()
    }

    /// Lengths `I_j = T_j - T_{j-1}`.
    pub fn regime_lengths(&self, n_periods: usize) -> Vec<usize> {
        let mut bounds = self.regime_starts();
        bounds.push(n_periods + 1);
        bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Regime index holding the 0-based period `t`.
    pub fn regime_of(&self, t: usize) -> usize {
        self.break_dates.partition_point(|&d| d <= t + 1)
    }
}

/// Break structure for all groups over a horizon of `n_periods`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakStructure {
    pub n_periods: usize,
    pub dim: usize,
    pub groups: Vec<GroupRegimes>,
}

impl BreakStructure {
    pub fn new(n_periods: usize, dim: usize, groups: Vec<GroupRegimes>) -> Result<Self> {
        let out = Self {
            n_periods,
            dim,
            groups,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn break_counts(&self) -> Vec<usize> {
        self.groups.iter().map(GroupRegimes::n_breaks).collect()
    }

    pub fn total_regimes(&self) -> usize {
        self.groups.iter().map(|g| g.n_breaks() + 1).sum()
    }

    /// Checks dates, regime counts and coefficient dimensions.
    pub fn validate(&self) -> Result<()> {
        for (g, grp) in self.groups.iter().enumerate() {
            if let Some(&d) = grp
                .break_dates
                .iter()
                .find(|&&d| d < 2 || d > self.n_periods)
            {
                return Err(Error::InvalidStructure(format!(
                    "group {}: break date {d} outside 2..={}",
                    g + 1,
                    self.n_periods
                )));
            }
            if grp.break_dates.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidStructure(format!(
                    "group {}: break dates not strictly increasing",
                    g + 1
                )));
            }
            if grp.regime_coefs.len() != grp.break_dates.len() + 1 {
                return Err(Error::InvalidStructure(format!(
                    "group {}: {} regimes for {} breaks",
                    g + 1,
                    grp.regime_coefs.len(),
                    grp.break_dates.len()
                )));
            }
            if grp.regime_coefs.iter().any(|a| a.len() != self.dim) {
                return Err(Error::InvalidStructure(format!(
                    "group {}: regime coefficient has wrong dimension",
                    g + 1
                )));
            }
        }
        Ok(())
    }

    /// True when adjacent regimes always differ, i.e. no break is redundant.
    pub fn is_minimal(&self) -> bool {
        self.groups.iter().all(|grp| {
            grp.regime_coefs
                .windows(2)
                .all(|w| w[0].iter().zip(&w[1]).any(|(a, b)| a != b))
        })
    }
}

/// Expands regime coefficients into a per-period path.
pub fn expand_regimes(breaks: &BreakStructure, n_periods: usize) -> Result<CoefficientPath> {
    if breaks.n_periods != n_periods {
        return Err(Error::InvalidStructure(format!(
            "structure horizon {} does not match T={n_periods}",
            breaks.n_periods
        )));
    }
    breaks.validate()?;
    let mut path = CoefficientPath::zeros(breaks.n_groups(), n_periods, breaks.dim);
    for (g, grp) in breaks.groups.iter().enumerate() {
        for t in 0..n_periods {
            path.get_mut(g, t)
                .copy_from_slice(&grp.regime_coefs[grp.regime_of(t)]);
        }
    }
    Ok(path)
}

/// Reads break dates off a path: `t` is a break when the jump norm exceeds
/// `tol`. Regime coefficients are the path values at each regime start.
pub fn infer_breaks(path: &CoefficientPath, tol: f64) -> BreakStructure {
    let all: Vec<usize> = (0..path.dim()).collect();
    infer_breaks_on(path, tol, &all)
}

/// As [`infer_breaks`], measuring jumps only over `coords`.
pub fn infer_breaks_on(path: &CoefficientPath, tol: f64, coords: &[usize]) -> BreakStructure {
    let groups = (0..path.n_groups())
        .map(|g| {
            let break_dates: Vec<usize> = (1..path.n_periods())
                .filter(|&t| path.jump_norm(g, t, coords) > tol)
                .map(|t| t + 1)
                .collect();
            let regime_coefs = std::iter::once(1)
                .chain(break_dates.iter().copied())
                .map(|d| path.get(g, d - 1).to_vec())
                .collect();
            GroupRegimes {
                break_dates,
                regime_coefs,
            }
        })
        .collect();
    BreakStructure {
        n_periods: path.n_periods(),
        dim: path.dim(),
        groups,
    }
}

/// How a regressor's coefficient is allowed to vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefRole {
    /// Group specific, piecewise constant in time with penalized jumps.
    Fused,
    /// Group specific, free to change every period.
    TimeVarying,
    /// Group specific, constant over time.
    TimeInvariant,
    /// Common to all groups and constant over time.
    Homogeneous,
}

/// Estimating equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `y_it = x_it' beta_{g,t} + e_it`.
    #[default]
    Level,
    /// `dy_it = x_it' beta_{g,t} - x_{i,t-1}' beta_{g,t-1} + de_it`, `t >= 2`.
    FirstDifference,
}

/// Estimating equation plus the role of each coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: Mode,
    pub roles: Vec<CoefRole>,
}

impl ModelSpec {
    /// Every coefficient fused, level equation.
    pub fn fused(k: usize) -> Self {
        Self {
            mode: Mode::Level,
            roles: vec![CoefRole::Fused; k],
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Builds roles from masks. A coordinate outside all three masks is
    /// fully time varying.
    pub fn from_masks(
        mode: Mode,
        penalized: &[bool],
        homogeneous: &[bool],
        time_invariant: &[bool],
    ) -> Result<Self> {
        let k = penalized.len();
        if homogeneous.len() != k || time_invariant.len() != k {
            return Err(Error::InvalidOptions("mask lengths differ".into()));
        }
        let roles = (0..k)
            .map(
                |c| match (penalized[c], homogeneous[c], time_invariant[c]) {
                    (true, false, false) => Ok(CoefRole::Fused),
                    (false, true, false) => Ok(CoefRole::Homogeneous),
                    (false, false, true) => Ok(CoefRole::TimeInvariant),
                    (false, false, false) => Ok(CoefRole::TimeVarying),
                    _ => Err(Error::InvalidOptions(format!(
                        "coordinate {c} appears in more than one mask"
                    ))),
                },
            )
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mode, roles })
    }

    pub fn k(&self) -> usize {
        self.roles.len()
    }

    pub fn coords_with(&self, role: CoefRole) -> Vec<usize> {
        (0..self.k()).filter(|&c| self.roles[c] == role).collect()
    }

    pub fn fused_coords(&self) -> Vec<usize> {
        self.coords_with(CoefRole::Fused)
    }

    pub fn homogeneous_coords(&self) -> Vec<usize> {
        self.coords_with(CoefRole::Homogeneous)
    }

    /// Coordinates carrying a group-specific coefficient.
    pub fn group_coords(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&c| self.roles[c] != CoefRole::Homogeneous)
            .collect()
    }

    pub fn is_plain(&self) -> bool {
        self.mode == Mode::Level && self.roles.iter().all(|r| *r == CoefRole::Fused)
    }

    pub fn validate(&self, panel: &Panel) -> Result<()> {
        if self.k() != panel.n_regressors() {
            return Err(Error::InvalidOptions(format!(
                "{} coefficient roles for {} regressors",
                self.k(),
                panel.n_regressors()
            )));
        }
        if self.mode == Mode::FirstDifference {
            if panel.n_periods() < 3 {
                return Err(Error::InvalidPanel(
                    "first differencing needs T >= 3".into(),
                ));
            }
            let has_intercept = (0..self.k()).any(|c| panel.is_intercept(c));
            let invariant: Vec<usize> = (0..self.k())
                .filter(|&c| !panel.is_intercept(c) && panel.is_unit_invariant(c))
                .collect();
            if has_intercept && !invariant.is_empty() {
                return Err(Error::InvalidOptions(format!(
                    "regressors {:?} are identical across units and collinear with the \
                     intercept in first-difference estimation",
                    invariant
                        .iter()
                        .map(|&c| panel.regressor_names()[c].as_str())
                        .collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_structure(t: usize, dates: Vec<usize>, alphas: Vec<f64>) -> BreakStructure {
        BreakStructure::new(
            t,
            1,
            vec![GroupRegimes {
                break_dates: dates,
                regime_coefs: alphas.into_iter().map(|a| vec![a]).collect(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn expand_single_break() {
        let b = scalar_structure(4, vec![3], vec![1.0, 2.0]);
        let p = expand_regimes(&b, 4).unwrap();
        assert_eq!(p.values(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn expand_constant() {
        let b = scalar_structure(4, vec![], vec![1.5]);
        let p = expand_regimes(&b, 4).unwrap();
        assert_eq!(p.values(), &[1.5; 4]);
    }

    #[test]
    fn expand_two_breaks_t12() {
        let b = scalar_structure(12, vec![6, 10], vec![1.0, 2.0, 3.0]);
        let p = expand_regimes(&b, 12).unwrap();
        let expect: Vec<f64> = [vec![1.0; 5], vec![2.0; 4], vec![3.0; 3]].concat();
        assert_eq!(p.values(), expect.as_slice());
    }

    #[test]
    fn expand_rejects_out_of_range_dates() {
        let bad = BreakStructure {
            n_periods: 4,
            dim: 1,
            groups: vec![GroupRegimes {
                break_dates: vec![5],
                regime_coefs: vec![vec![1.0], vec![2.0]],
            }],
        };
        assert!(matches!(
            expand_regimes(&bad, 4),
            Err(Error::InvalidStructure(_))
        ));
        let bad1 = BreakStructure {
            n_periods: 4,
            dim: 1,
            groups: vec![GroupRegimes {
                break_dates: vec![1],
                regime_coefs: vec![vec![1.0], vec![2.0]],
            }],
        };
        assert!(expand_regimes(&bad1, 4).is_err());
    }

    #[test]
    fn infer_simple_paths() {
        let p = CoefficientPath::from_scalar_rows(&[vec![1.0, 1.0, 2.0, 2.0]]).unwrap();
        let b = infer_breaks(&p, 0.0);
        assert_eq!(b.groups[0].break_dates, vec![3]);
        assert_eq!(b.groups[0].regime_coefs, vec![vec![1.0], vec![2.0]]);

        let c = CoefficientPath::from_scalar_rows(&[vec![1.5, 1.5, 1.5]]).unwrap();
        let b = infer_breaks(&c, 0.0);
        assert!(b.groups[0].break_dates.is_empty());
        assert_eq!(b.groups[0].regime_coefs.len(), 1);
    }

    #[test]
    fn infer_thresholds_float_dust() {
        let p = CoefficientPath::from_scalar_rows(&[vec![1.0, 1.0 + 1e-12, 2.0]]).unwrap();
        assert_eq!(infer_breaks(&p, 1e-8).groups[0].break_dates, vec![3]);
        // exact comparison sees the dust as a break
        assert_eq!(infer_breaks(&p, 0.0).groups[0].break_dates, vec![2, 3]);
    }

    #[test]
    fn regime_lengths_partition_horizon() {
        let b = scalar_structure(12, vec![6, 10], vec![1.0, 2.0, 3.0]);
        let lens = b.groups[0].regime_lengths(12);
        assert_eq!(lens, vec![5, 4, 3]);
        assert_eq!(lens.iter().sum::<usize>(), 12);
    }

    #[test]
    fn regime_of_matches_dates() {
        let g = GroupRegimes {
            break_dates: vec![3, 4],
            regime_coefs: vec![vec![0.0]; 3],
        };
        let regimes: Vec<usize> = (0..5).map(|t| g.regime_of(t)).collect();
        assert_eq!(regimes, vec![0, 0, 1, 2, 2]);
    }

    #[test]
    fn assignment_validation() {
        assert!(GroupAssignment::new(vec![0, 2], 2).is_err());
        let a = GroupAssignment::from_one_based(&[1, 2, 2], 2).unwrap();
        assert_eq!(a.sizes(), vec![1, 2]);
        assert_eq!(a.members(1), vec![1, 2]);
    }

    #[test]
    fn panel_rejects_non_finite() {
        let err = Panel::new(2, 2, 1, vec![1.0, f64::NAN, 0.0, 0.0], vec![1.0; 4]);
        assert!(err.is_err());
        assert!(Panel::new(1, 2, 1, vec![1.0, 2.0], vec![1.0; 2]).is_err());
    }

    #[test]
    fn masks_are_exclusive() {
        let err =
            ModelSpec::from_masks(Mode::Level, &[true, false], &[true, false], &[false, false]);
        assert!(err.is_err());
        let ok = ModelSpec::from_masks(
            Mode::Level,
            &[true, false],
            &[false, false],
            &[false, false],
        )
        .unwrap();
        assert_eq!(ok.roles, vec![CoefRole::Fused, CoefRole::TimeVarying]);
    }

    #[test]
    fn fd_rejects_invariant_regressor_with_intercept() {
        // x1 = intercept, x2 = global variable, x3 = idiosyncratic
        let (n, t, k) = (3, 4, 3);
        let mut x = Vec::new();
        for i in 0..n {
            for s in 0..t {
                x.extend([1.0, s as f64 * 0.5, (i * 7 + s * 3) as f64 % 5.0]);
            }
        }
        let panel = Panel::new(n, t, k, vec![0.0; n * t], x).unwrap();
        let spec = ModelSpec::fused(3).with_mode(Mode::FirstDifference);
        assert!(matches!(
            spec.validate(&panel),
            Err(Error::InvalidOptions(_))
        ));
        assert!(ModelSpec::fused(3).validate(&panel).is_ok());
    }
}
