//! Choosing lambda by an information criterion and the number of groups by
//! BIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gagfl::{fit_from_preliminary_with, preliminary, FitResult, GagflOptions, Preliminary};
use crate::model::Panel;

/// Log-spaced lambda values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub n_points: usize,
}

impl LambdaGrid {
    pub fn new(min: f64, max: f64, n_points: usize) -> Result<Self> {
        let g = Self { min, max, n_points };
        g.validate()?;
        Ok(g)
    }

    /// 50 points on `[0.01, 100]`.
    pub fn simulation() -> Self {
        Self {
            min: 0.01,
            max: 100.0,
            n_points: 50,
        }
    }

    /// 200 points on `[0.001, 50]`.
    pub fn empirical() -> Self {
        Self {
            min: 0.001,
            max: 50.0,
            n_points: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min < self.max && self.max.is_finite()) || self.n_points < 2 {
            return Err(Error::InvalidOptions(format!(
                "lambda grid needs 0 < min < max and at least 2 points, got [{}, {}] x {}",
                self.min, self.max, self.n_points
            )));
        }
        Ok(())
    }

    /// Ascending values with exact endpoints.
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.min.ln(), self.max.ln());
        let step = (b - a) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|j| match j {
                0 => self.min,
                j if j == self.n_points - 1 => self.max,
                j => (a + step * j as f64).exp(),
            })
            .collect()
    }
}

/// `rho_NT = c ln(NT) / sqrt(NT)`.
pub fn rho(n_units: usize, n_periods: usize, c: f64) -> f64 {
    let nt = (n_units * n_periods) as f64;
    c * nt.ln() / nt.sqrt()
}

/// `SSE/NT + rho * n_params`; `n_params` equals `k sum_g (m_g + 1)` when
/// every coefficient is fused.
pub fn ic_value(fit: &FitResult, rho: f64) -> f64 {
    fit.sse + rho * fit.n_params as f64
}

/// `SSE/NT + sigma2 (n_params + N) / NT ln(NT)`.
pub fn bic_value(sse: f64, n_params: usize, sigma2: f64, n_units: usize, n_periods: usize) -> f64 {
    let nt = (n_units * n_periods) as f64;
    sse + sigma2 * (n_params + n_units) as f64 / nt * nt.ln()
}

/// Index of the fit with the smallest IC; ties go to the earlier entry, so
/// pass fits in ascending lambda.
pub fn ic_lambda(fits: &[FitResult], n_units: usize, n_periods: usize, c: f64) -> Result<usize> {
    if fits.is_empty() {
        return Err(Error::InvalidOptions(
            "no fits to select lambda from".into(),
        ));
    }
    let r = rho(n_units, n_periods, c);
    Ok(argmin_first(fits.iter().map(|f| ic_value(f, r))))
}

fn argmin_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, v) in values.enumerate() {
        if v < best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Which estimates enter the BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicBasis {
    /// Post-lasso fit at the IC-selected lambda.
    #[default]
    Final,
    /// Unpenalized GFE fit with a free coefficient every period.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub ic_c: f64,
    pub bic_basis: BicBasis,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            ic_c: 0.05,
            bic_basis: BicBasis::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub n_groups: usize,
    pub lambda: f64,
    pub ic: f64,
    /// Filled on the IC-selected row of each G.
    pub bic: Option<f64>,
    pub break_counts: Vec<usize>,
    pub n_params: usize,
    pub sse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenLambda {
    pub n_groups: usize,
    pub lambda: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
    pub chosen_lambda: Vec<ChosenLambda>,
    pub chosen_g: usize,
    pub sigma2: f64,
    /// Group counts whose fits failed entirely.
    pub failed_groups: Vec<usize>,
}

/// Report plus the IC-selected fit for each G, ordered like
/// `report.chosen_lambda`.
#[derive(Debug, Clone)]
pub struct Selection {
    pub report: SelectionReport,
    pub fits: Vec<FitResult>,
}

impl Selection {
    pub fn best(&self) -> &FitResult {
        let pos = self
            .report
            .chosen_lambda
            .iter()
            .position(|c| c.n_groups == self.report.chosen_g)
            .expect("chosen G has a fit");
        &self.fits[pos]
    }
}

/// Every lambda of `grid` for one preliminary fit, with the IC choice.
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    /// Successful fits in ascending lambda. Only the chosen fit carries
    /// standard errors.
    pub fits: Vec<FitResult>,
    pub chosen: usize,
}

pub fn lambda_path(
    panel: &Panel,
    prelim: &Preliminary,
    grid: &[f64],
    opts: &GagflOptions,
    ic_c: f64,
) -> Result<LambdaPath> {
    let results: Vec<(f64, Result<FitResult>)> = grid
        .par_iter()
        .map(|&l| (l, fit_from_preliminary_with(panel, prelim, l, opts, false)))
        .collect();
    let mut lambdas = Vec::new();
    let mut fits = Vec::new();
    let mut first_err = None;
    for (l, r) in results {
        match r {
            Ok(f) => {
                lambdas.push(l);
                fits.push(f);
            }
            Err(e) => {
                log::warn!("fit at lambda={l} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if fits.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::InvalidOptions("empty lambda grid".into())));
    }
    let chosen = ic_lambda(&fits, panel.n_units(), panel.n_periods(), ic_c)?;
    fits[chosen].compute_std_errors(panel, opts.gfe.singular_policy)?;
    Ok(LambdaPath {
        lambdas,
        fits,
        chosen,
    })
}

/// Chooses lambda by IC within each G of `g_range`, then G by BIC. The
/// BIC scale is the SSE of the G=1 selected fit, computed even when 1 is
/// not in the range.
pub fn bic_groups(
    panel: &Panel,
    g_range: &[usize],
    grid: &LambdaGrid,
    opts: &GagflOptions,
    sel: &SelectionOptions,
) -> Result<Selection> {
    grid.validate()?;
    if g_range.is_empty() {
        return Err(Error::InvalidOptions("empty G range".into()));
    }
    if !(sel.ic_c > 0.0) {
        return Err(Error::InvalidOptions("ic_c must be positive".into()));
    }
    let lambdas = grid.values();
    let mut gs: Vec<usize> = g_range.to_vec();
    gs.sort_unstable();
    gs.dedup();
    let mut all = gs.clone();
    if !all.contains(&1) {
        all.insert(0, 1);
    }
    let outcomes: Vec<(usize, Result<(Preliminary, LambdaPath)>)> = all
        .par_iter()
        .map(|&g| {
            let out = preliminary(panel, g, opts).and_then(|p| {
                let path = lambda_path(panel, &p, &lambdas, opts, sel.ic_c)?;
                Ok((p, path))
            });
            (g, out)
        })
        .collect();

    let nt = panel.n_obs() as f64;
    let mut sigma2 = None;
    let mut per_g = Vec::new();
    let mut failed_groups = Vec::new();
    let mut first_err = None;
    for (g, out) in outcomes {
        match out {
            Ok((prelim, path)) => {
                if g == 1 {
                    sigma2 = Some(match sel.bic_basis {
                        BicBasis::Final => path.fits[path.chosen].sse,
                        BicBasis::Initial => prelim.gfe.sse / nt,
                    });
                }
                if gs.contains(&g) {
                    per_g.push((g, prelim, path));
                }
            }
            Err(e) => {
                log::warn!("G={g} excluded: {e}");
                if gs.contains(&g) {
                    failed_groups.push(g);
                }
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(sigma2) = sigma2 else {
        return Err(first_err.expect("G=1 failed with an error"));
    };
    if per_g.is_empty() {
        return Err(
            first_err.unwrap_or_else(|| Error::InvalidOptions("no G could be fitted".into()))
        );
    }

    let r = rho(panel.n_units(), panel.n_periods(), sel.ic_c);
    let mut rows = Vec::new();
    let mut chosen_lambda = Vec::new();
    let mut fits = Vec::new();
    for (g, prelim, path) in per_g {
        let chosen_fit = &path.fits[path.chosen];
        let bic = match sel.bic_basis {
            BicBasis::Final => bic_value(
                chosen_fit.sse,
                chosen_fit.n_params,
                sigma2,
                panel.n_units(),
                panel.n_periods(),
            ),
            BicBasis::Initial => {
                let np = prelim.spec.group_coords().len() * g * panel.n_periods()
                    + prelim.spec.homogeneous_coords().len();
                bic_value(
                    prelim.gfe.sse / nt,
                    np,
                    sigma2,
                    panel.n_units(),
                    panel.n_periods(),
                )
            }
        };
        for (j, (l, f)) in path.lambdas.iter().zip(&path.fits).enumerate() {
            rows.push(SelectionRow {
                n_groups: g,
                lambda: *l,
                ic: ic_value(f, r),
                bic: (j == path.chosen).then_some(bic),
                break_counts: f.break_counts(),
                n_params: f.n_params,
                sse: f.sse,
                converged: f.converged(),
            });
        }
        chosen_lambda.push(ChosenLambda {
            n_groups: g,
            lambda: path.lambdas[path.chosen],
            bic,
        });
        fits.push(
            path.fits
                .into_iter()
                .nth(path.chosen)
                .expect("chosen index"),
        );
    }
    let best = argmin_first(chosen_lambda.iter().map(|c| c.bic));
    let chosen_g = chosen_lambda[best].n_groups;
    Ok(Selection {
        report: SelectionReport {
            rows,
            chosen_lambda,
            chosen_g,
            sigma2,
            failed_groups,
        },
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_value() {
        let nt: f64 = 500.0;
        assert!((rho(50, 10, 0.05) - 0.05 * nt.ln() / nt.sqrt()).abs() < 1e-15);
        // quoted to six decimals as 0.013897
        assert!((rho(50, 10, 0.05) - 0.013897).abs() < 1e-6);
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let v = LambdaGrid::simulation().values();
        assert_eq!(v.len(), 50);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[49], 100.0);
        let r1 = v[1] / v[0];
        let r2 = v[30] / v[29];
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn bad_grid_rejected() {
        assert!(LambdaGrid::new(1.0, 1.0, 5).is_err());
        assert!(LambdaGrid::new(0.1, 1.0, 1).is_err());
    }

    #[test]
    fn bic_increases_in_params() {
        assert!(bic_value(1.0, 4, 0.5, 10, 5) < bic_value(1.0, 5, 0.5, 10, 5));
    }
}
