//! Monte Carlo designs DGP.1-DGP.4 and a replication driver.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gagfl::{fit_from_preliminary, preliminary, FitResult, GagflOptions};
use crate::metrics::{score_fit, MetricRow};
use crate::model::{
    expand_regimes, BreakStructure, CoefficientPath, GroupAssignment, GroupRegimes, Mode, Panel,
};
use crate::rng::{derive_seed, rng_for};
use crate::selection::{bic_groups, lambda_path, LambdaGrid, SelectionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// Static, i.i.d. normal errors.
    Dgp1,
    /// AR(1) errors with coefficient 0.5.
    Dgp2,
    /// Additive unit effect equal to the unit's mean regressor.
    Dgp3,
    /// Lagged outcome with group-specific breaking coefficient.
    Dgp4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakLayout {
    /// Group 1 at `T/2, 5T/6`; group 2 at `T/3, 5T/6`.
    #[default]
    Standard,
    /// Group 1 at `T/2, 2T/3`; group 2 at `T/3, T/2`.
    CloseBreaks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: Dgp,
    pub n_units: usize,
    pub n_periods: usize,
    pub sigma_eps: f64,
    /// Three shares summing to one.
    pub group_shares: Vec<f64>,
    pub break_layout: BreakLayout,
    pub seed: u64,
    /// Shift regressor means by +0.5, -0.5, 0 across the groups.
    pub group_dependent_x: bool,
    /// Smaller jumps and closer group coefficients (magnitudes chosen here,
    /// not taken from the literature).
    pub small_breaks: bool,
}

impl DgpSpec {
    pub fn new(dgp: Dgp, n_units: usize, n_periods: usize, sigma_eps: f64, seed: u64) -> Self {
        Self {
            dgp,
            n_units,
            n_periods,
            sigma_eps,
            group_shares: vec![0.3, 0.3, 0.4],
            break_layout: BreakLayout::Standard,
            seed,
            group_dependent_x: false,
            small_breaks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_shares.len() != 3 {
            return Err(Error::InvalidOptions(
                "designs have exactly three groups".into(),
            ));
        }
        let sum: f64 = self.group_shares.iter().sum();
        if self.group_shares.iter().any(|s| !(*s > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidOptions(
                "group shares must be positive and sum to 1".into(),
            ));
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return Err(Error::InvalidOptions(
                "sigma_eps must be nonnegative".into(),
            ));
        }
        if self.group_sizes().contains(&0) {
            return Err(Error::InvalidOptions(format!(
                "N={} leaves a group empty under shares {:?}",
                self.n_units, self.group_shares
            )));
        }
        Ok(())
    }

    /// Floors of `N * share`; leftover units go one each to groups in index
    /// order.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .group_shares
            .iter()
            .map(|s| (self.n_units as f64 * s + 1e-9).floor() as usize)
            .collect();
        let mut left = self.n_units.saturating_sub(sizes.iter().sum());
        let (mut g, n_groups) = (0, sizes.len());
        while left > 0 {
            sizes[g % n_groups] += 1;
            left -= 1;
            g += 1;
        }
        sizes
    }

    /// 1-based break dates of the three groups.
    pub fn break_dates(&self) -> Result<[Vec<usize>; 3]> {
        let t = self.n_periods;
        let fl = |num: usize, den: usize| num * t / den;
        let (g1, g2) = match self.break_layout {
            BreakLayout::Standard => ([fl(1, 2), fl(5, 6)], [fl(1, 3), fl(5, 6)]),
            BreakLayout::CloseBreaks => ([fl(1, 2), fl(2, 3)], [fl(1, 3), fl(1, 2)]),
        };
        for (g, d) in [g1, g2].iter().enumerate() {
            if d[0] < 2 || d[0] >= d[1] || d[1] > t {
                return Err(Error::InvalidOptions(format!(
                    "T={t} gives break dates {d:?} for group {}; they must be distinct and in 2..=T",
                    g + 1
                )));
            }
        }
        Ok([g1.to_vec(), g2.to_vec(), Vec::new()])
    }

    /// Regime values of the slope on `x` for each group.
    fn beta_regimes(&self) -> [Vec<f64>; 3] {
        if self.small_breaks {
            [vec![1.0, 1.5, 2.0], vec![1.5, 2.0, 2.5], vec![1.5]]
        } else {
            [vec![1.0, 2.0, 3.0], vec![3.0, 4.0, 5.0], vec![1.5]]
        }
    }

    fn tau_regimes() -> [Vec<f64>; 3] {
        [vec![0.2, 0.8, 0.2], vec![-0.3, -0.6, -0.9], vec![0.5]]
    }

    /// Estimating equation suited to the design.
    pub fn natural_mode(&self) -> Mode {
        match self.dgp {
            Dgp::Dgp3 => Mode::FirstDifference,
            _ => Mode::Level,
        }
    }
}

/// Data-generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub assignment: GroupAssignment,
    pub beta_path: CoefficientPath,
    pub break_structure: BreakStructure,
}

const BURN_IN: usize = 100;

pub fn generate(spec: &DgpSpec) -> Result<(Panel, SimTruth)> {
    spec.validate()?;
    let (n, t_len) = (spec.n_units, spec.n_periods);
    let dates = spec.break_dates()?;
    let betas = spec.beta_regimes();
    let taus = DgpSpec::tau_regimes();
    let dynamic = spec.dgp == Dgp::Dgp4;
    let k = if dynamic { 2 } else { 1 };
    let groups: Vec<GroupRegimes> = (0..3)
        .map(|g| GroupRegimes {
            break_dates: dates[g].clone(),
            regime_coefs: (0..betas[g].len())
                .map(|j| {
                    if dynamic {
                        vec![taus[g][j], betas[g][j]]
                    } else {
                        vec![betas[g][j]]
                    }
                })
                .collect(),
        })
        .collect();
    let break_structure = BreakStructure::new(t_len, k, groups)?;
    let beta_path = expand_regimes(&break_structure, t_len)?;

    let sizes = spec.group_sizes();
    let labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    let assignment = GroupAssignment::new(labels, 3)?;

    let sigma = spec.sigma_eps;
    let units: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(spec.seed, i as u64);
            let g = assignment.label(i);
            let shift = if spec.group_dependent_x {
                [0.5, -0.5, 0.0][g]
            } else {
                0.0
            };
            simulate_unit(
                spec,
                &mut rng,
                g,
                shift,
                sigma,
                &beta_path,
                &break_structure,
            )
        })
        .collect();

    let mut y = Vec::with_capacity(n * t_len);
    let mut x = Vec::with_capacity(n * t_len * k);
    for (yi, xi) in units {
        y.extend(yi);
        x.extend(xi);
    }
    let names = if dynamic {
        vec!["y_lag".to_string(), "x".to_string()]
    } else {
        vec!["x".to_string()]
    };
    let panel = Panel::with_labels(
        n,
        t_len,
        k,
        y,
        x,
        (1..=n).map(|i| i.to_string()).collect(),
        (1..=t_len).map(|t| t.to_string()).collect(),
        names,
    )?;
    Ok((
        panel,
        SimTruth {
            assignment,
            beta_path,
            break_structure,
        },
    ))
}

fn simulate_unit(
    spec: &DgpSpec,
    rng: &mut ChaCha8Rng,
    g: usize,
    shift: f64,
    sigma: f64,
    path: &CoefficientPath,
    breaks: &BreakStructure,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = spec.n_periods;
    let draw_x = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z + shift
    };
    let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    };
    let xs: Vec<f64> = (0..t_len).map(|_| draw_x(rng)).collect();
    let eps: Vec<f64> = match spec.dgp {
        Dgp::Dgp2 => {
            let innov = sigma * 0.75_f64.sqrt();
            let mut e = normal(rng, sigma);
            (0..t_len)
                .map(|_| {
                    e = 0.5 * e + normal(rng, innov);
                    e
                })
                .collect()
        }
        _ => (0..t_len).map(|_| normal(rng, sigma)).collect(),
    };
    match spec.dgp {
        Dgp::Dgp1 | Dgp::Dgp2 => {
            let y = (0..t_len)
                .map(|t| xs[t] * path.get(g, t)[0] + eps[t])
                .collect();
            (y, xs)
        }
        Dgp::Dgp3 => {
            let mu = xs.iter().sum::<f64>() / t_len as f64;
            let y = (0..t_len)
                .map(|t| mu + xs[t] * path.get(g, t)[0] + eps[t])
                .collect();
            (y, xs)
        }
        Dgp::Dgp4 => {
            let first = &breaks.groups[g].regime_coefs[0];
            let mut prev = 0.0;
            for _ in 0..BURN_IN {
                let xb = draw_x(rng);
                prev = first[0] * prev + first[1] * xb + normal(rng, sigma);
            }
            let mut y = Vec::with_capacity(t_len);
            let mut x = Vec::with_capacity(2 * t_len);
            for t in 0..t_len {
                let b = path.get(g, t);
                let yt = b[0] * prev + b[1] * xs[t] + eps[t];
                x.push(prev);
                x.push(xs[t]);
                y.push(yt);
                prev = yt;
            }
            (y, x)
        }
    }
}

/// How each replication is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub estimator: GagflOptions,
    /// Fixed G, or BIC over this range.
    pub groups: GroupChoice,
    pub lambda: LambdaChoice,
    pub selection: SelectionOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupChoice {
    Fixed(usize),
    Bic(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Ic(LambdaGrid),
}

impl StudyConfig {
    /// IC over the simulation grid, the design's natural estimating equation.
    pub fn for_design(spec: &DgpSpec, groups: GroupChoice) -> Self {
        Self {
            estimator: GagflOptions {
                mode: spec.natural_mode(),
                ..Default::default()
            },
            groups,
            lambda: LambdaChoice::Ic(LambdaGrid::simulation()),
            selection: SelectionOptions::default(),
        }
    }
}

/// Estimates one panel per the study configuration.
pub fn estimate(panel: &Panel, config: &StudyConfig, seed: u64) -> Result<FitResult> {
    let mut opts = config.estimator.clone();
    opts.gfe.seed = seed;
    match (&config.groups, &config.lambda) {
        (GroupChoice::Fixed(g), LambdaChoice::Fixed(l)) => {
            let p = preliminary(panel, *g, &opts)?;
            fit_from_preliminary(panel, &p, *l, &opts)
        }
        (GroupChoice::Fixed(g), LambdaChoice::Ic(grid)) => {
            grid.validate()?;
            let p = preliminary(panel, *g, &opts)?;
            let path = lambda_path(panel, &p, &grid.values(), &opts, config.selection.ic_c)?;
            Ok(path
                .fits
                .into_iter()
                .nth(path.chosen)
                .expect("chosen index"))
        }
        (GroupChoice::Bic(range), lambda) => {
            let grid = match lambda {
                LambdaChoice::Ic(grid) => *grid,
                LambdaChoice::Fixed(l) => LambdaGrid {
                    min: *l,
                    max: *l,
                    n_points: 1,
                },
            };
            if grid.n_points == 1 {
                return Err(Error::InvalidOptions(
                    "BIC over G needs a lambda grid".into(),
                ));
            }
            let sel = bic_groups(panel, range, &grid, &opts, &config.selection)?;
            Ok(sel.best().clone())
        }
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub metrics: Option<MetricRow>,
    pub lambda: Option<f64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub n_reps: usize,
    pub n_failed: usize,
    pub mean_mf: f64,
    /// Mean scaled HD per true group over replications with the correct
    /// break count for that group.
    pub mean_hd_conditioned: Vec<Option<f64>>,
    /// Mean scaled HD per true group over every replication with a
    /// matched group.
    pub mean_hd_unconditioned: Vec<Option<f64>>,
    pub break_accuracy: Vec<f64>,
    pub mean_rmse: f64,
    pub mean_coverage: Option<f64>,
    /// Share of replications selecting each G, indexed `G - 1`.
    pub g_frequency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: DgpSpec,
    pub rows: Vec<RepRow>,
    pub summary: StudySummary,
}

/// Generates, fits and scores `n_reps` replications. Replication `r` draws
/// data with seed `derive_seed(seed, r)`.
pub fn run_study(
    spec: &DgpSpec,
    config: &StudyConfig,
    n_reps: usize,
    seed: u64,
) -> Result<StudyReport> {
    if n_reps == 0 {
        return Err(Error::InvalidOptions(
            "need at least one replication".into(),
        ));
    }
    spec.validate()?;
    let rows: Vec<RepRow> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let data_seed = derive_seed(seed, r as u64);
            let rep_spec = DgpSpec {
                seed: data_seed,
                ..spec.clone()
            };
            let out = generate(&rep_spec).and_then(|(panel, truth)| {
                estimate(&panel, config, derive_seed(data_seed, u64::MAX)).map(|f| (f, truth))
            });
            match out {
                Ok((fit, truth)) => RepRow {
                    rep: r,
                    metrics: Some(score_fit(&fit, &truth)),
                    lambda: Some(fit.lambda),
                    converged: Some(fit.converged()),
                    error: None,
                },
                Err(e) => RepRow {
                    rep: r,
                    metrics: None,
                    lambda: None,
                    converged: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let summary = summarize(&rows, 3);
    Ok(StudyReport {
        spec: spec.clone(),
        rows,
        summary,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(rows: &[RepRow], n_true_groups: usize) -> StudySummary {
    let ok: Vec<&MetricRow> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let n_ok = ok.len().max(1) as f64;
    let per_group = |f: &dyn Fn(&MetricRow, usize) -> Option<f64>| -> Vec<Option<f64>> {
        (0..n_true_groups)
            .map(|h| mean(ok.iter().filter_map(|m| f(m, h))))
            .collect()
    };
    let max_g = ok.iter().map(|m| m.g_selected).max().unwrap_or(0);
    StudySummary {
        n_reps: rows.len(),
        n_failed: rows.len() - ok.len(),
        mean_mf: mean(ok.iter().map(|m| m.mf)).unwrap_or(f64::NAN),
        mean_hd_conditioned: per_group(&|m, h| {
            if m.break_count_correct[h] {
                m.hd_per_group[h]
            } else {
                None
            }
        }),
        mean_hd_unconditioned: per_group(&|m, h| m.hd_per_group[h]),
        break_accuracy: (0..n_true_groups)
            .map(|h| ok.iter().filter(|m| m.break_count_correct[h]).count() as f64 / n_ok)
            .collect(),
        mean_rmse: mean(ok.iter().map(|m| m.rmse)).unwrap_or(f64::NAN),
        mean_coverage: mean(ok.iter().filter_map(|m| m.coverage)),
        g_frequency: (1..=max_g)
            .map(|g| ok.iter().filter(|m| m.g_selected == g).count() as f64 / n_ok)
            .collect(),
    }
}

impl StudyReport {
    /// Replication table with columns `rep, mf, hd_g1, hd_g2, break_acc_g1,
    /// break_acc_g2, break_acc_g3, rmse, coverage, g_selected`, followed by
    /// `hd_g3, lambda, converged, error`. Missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rep,mf,hd_g1,hd_g2,break_acc_g1,break_acc_g2,break_acc_g3,rmse,coverage,g_selected,hd_g3,lambda,converged,error\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(out, "{}", r.rep);
            match &r.metrics {
                Some(m) => {
                    let hd = |h: usize| opt(m.hd_per_group.get(h).copied().flatten());
                    let acc = |h: usize| {
                        u8::from(m.break_count_correct.get(h).copied().unwrap_or(false)).to_string()
                    };
                    let _ = write!(
                        out,
                        ",{},{},{},{},{},{},{},{},{},{}",
                        m.mf,
                        hd(0),
                        hd(1),
                        acc(0),
                        acc(1),
                        acc(2),
                        m.rmse,
                        opt(m.coverage),
                        m.g_selected,
                        hd(2)
                    );
                }
                None => out.push_str(",,,,,,,,,,"),
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                opt(r.lambda),
                r.converged.map(|c| c.to_string()).unwrap_or_default(),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}
