//! Reading long-format panels and writing results.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agfl::HomogeneousEstimate;
use crate::error::{Error, Result};
use crate::gagfl::{Diagnostics, FitResult};
use crate::model::{BreakStructure, CoefficientPath, GroupAssignment, Panel};
use crate::selection::SelectionReport;
use crate::simulate::StudyReport;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Demean and scale `y` and every non-constant-one regressor by its
    /// overall mean and standard deviation.
    pub standardize: bool,
}

pub fn load_panel(path: &Path, opts: LoadOptions) -> Result<Panel> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_panel(file, opts)
}

/// Parses CSV with header `unit,time,y,<x1>,...,<xk>`, one row per
/// `(unit, time)`. Units keep their order of first appearance; periods are
/// sorted numerically when every label is a number, else lexically.
pub fn read_panel<R: Read>(reader: R, opts: LoadOptions) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.len() < 4 {
        return Err(Error::Parse {
            line: 1,
            msg: "header needs unit, time, y and at least one regressor".into(),
        });
    }
    let expected = ["unit", "time", "y"];
    for (pos, want) in expected.iter().enumerate() {
        if !header[pos].eq_ignore_ascii_case(want) {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "column {} must be '{want}', found '{}'",
                    pos + 1,
                    &header[pos]
                ),
            });
        }
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let k = names.len();

    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != k + 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", k + 3, record.len()),
            });
        }
        let unit = record[0].to_string();
        let time = record[1].to_string();
        let values = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column '{}' is not numeric: '{f}'", &header[c + 2]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let u = *unit_pos.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            units.len() - 1
        });
        let t = *period_pos.entry(time.clone()).or_insert_with(|| {
            periods.push(time.clone());
            periods.len() - 1
        });
        if cells.insert((u, t), values).is_some() {
            return Err(Error::InvalidPanel(format!(
                "duplicate row for unit {unit} time {time} (line {line})"
            )));
        }
    }
    if units.is_empty() {
        return Err(Error::InvalidPanel("no data rows".into()));
    }

    let mut order: Vec<usize> = (0..periods.len()).collect();
    let numeric: Option<Vec<f64>> = periods.iter().map(|p| p.parse::<f64>().ok()).collect();
    match numeric {
        Some(v) => order.sort_by(|&a, &b| v[a].total_cmp(&v[b])),
        None => order.sort_by(|&a, &b| periods[a].cmp(&periods[b])),
    }

    let (n, t_len) = (units.len(), periods.len());
    let mut missing = Vec::new();
    let mut y = Vec::with_capacity(n * t_len);
    let mut x = Vec::with_capacity(n * t_len * k);
    for u in 0..n {
        for &t in &order {
            match cells.get(&(u, t)) {
                Some(v) => {
                    y.push(v[0]);
                    x.extend_from_slice(&v[1..]);
                }
                None => {
                    missing.push(format!("({}, {})", units[u], periods[t]));
                    y.push(f64::NAN);
                    x.extend(std::iter::repeat_n(f64::NAN, k));
                }
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
        return Err(Error::InvalidPanel(format!(
            "panel is unbalanced: {} missing (unit, time) cells: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    if opts.standardize {
        standardize_column(&mut y, 1, 0);
        for c in 0..k {
            let is_ones = x.iter().skip(c).step_by(k).all(|v| *v == 1.0);
            if !is_ones {
                standardize_column(&mut x, k, c);
            }
        }
    }
    let periods_sorted = order.iter().map(|&t| periods[t].clone()).collect();
    Panel::with_labels(n, t_len, k, y, x, units, periods_sorted, names)
}

/// Standardizes entries `c, c + stride, ...` with the population standard
/// deviation; a constant column is only demeaned.
fn standardize_column(values: &mut [f64], stride: usize, c: usize) {
    let n = (values.len() / stride) as f64;
    let mean = values.iter().skip(c).step_by(stride).sum::<f64>() / n;
    let var = values
        .iter()
        .skip(c)
        .step_by(stride)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
    for v in values.iter_mut().skip(c).step_by(stride) {
        *v = (*v - mean) * scale;
    }
}

/// Writes a panel in the long format read by [`load_panel`].
pub fn write_panel(panel: &Panel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend(panel.regressor_names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            let mut rec = vec![
                panel.unit_ids()[i].clone(),
                panel.period_ids()[t].clone(),
                panel.y(i, t).to_string(),
            ];
            rec.extend(panel.x(i, t).iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// A coefficient with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// 1-based group.
    pub group: usize,
    /// 1-based regime.
    pub regime: usize,
    pub start: String,
    pub end: String,
    pub coefficients: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitGroup {
    pub unit: String,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreaks {
    pub group: usize,
    /// 1-based period indices where a new regime starts.
    pub dates: Vec<usize>,
    pub labels: Vec<String>,
}

/// Serializable summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_groups: usize,
    pub lambda: f64,
    pub regressors: Vec<String>,
    pub periods: Vec<String>,
    pub assignment: Vec<UnitGroup>,
    pub breaks: Vec<GroupBreaks>,
    pub regimes: Vec<RegimeReport>,
    pub homogeneous: Vec<Estimate>,
    pub sse: f64,
    pub n_params: usize,
    pub objective: f64,
    pub diagnostics: Diagnostics,
    /// Post-lasso coefficient and standard-error paths, `G x T x k`.
    pub coef_path: CoefficientPath,
    pub se_path: CoefficientPath,
}

impl FitReport {
    pub fn new(fit: &FitResult, panel: &Panel) -> Self {
        let names = panel.regressor_names();
        let periods = panel.period_ids();
        let t_len = panel.n_periods();
        let mut regimes = Vec::new();
        let mut breaks = Vec::new();
        for (g, gr) in fit.breaks().groups.iter().enumerate() {
            breaks.push(GroupBreaks {
                group: g + 1,
                dates: gr.break_dates.clone(),
                labels: gr
                    .break_dates
                    .iter()
                    .map(|&d| periods[d - 1].clone())
                    .collect(),
            });
            let starts = gr.regime_starts();
            for (j, len) in gr.regime_lengths(t_len).into_iter().enumerate() {
                let s = starts[j];
                regimes.push(RegimeReport {
                    group: g + 1,
                    regime: j + 1,
                    start: periods[s - 1].clone(),
                    end: periods[s + len - 2].clone(),
                    coefficients: (0..names.len())
                        .map(|c| Estimate {
                            name: names[c].clone(),
                            estimate: gr.regime_coefs[j][c],
                            se: fit.post.std_errors[g][j][c],
                        })
                        .collect(),
                });
            }
        }
        Self {
            n_groups: fit.n_groups,
            lambda: fit.lambda,
            regressors: names.to_vec(),
            periods: periods.to_vec(),
            assignment: (0..panel.n_units())
                .map(|i| UnitGroup {
                    unit: panel.unit_ids()[i].clone(),
                    group: fit.assignment.label(i) + 1,
                })
                .collect(),
            breaks,
            regimes,
            homogeneous: fit
                .post
                .homogeneous
                .iter()
                .map(|h: &HomogeneousEstimate| Estimate {
                    name: names[h.coord].clone(),
                    estimate: h.estimate,
                    se: h.std_error,
                })
                .collect(),
            sse: fit.sse,
            n_params: fit.n_params,
            objective: fit.objective,
            diagnostics: fit.diagnostics.clone(),
            coef_path: fit.post.coef_path.clone(),
            se_path: fit.post.se_path.clone(),
        }
    }

    pub fn group_assignment(&self) -> Result<GroupAssignment> {
        let labels: Vec<usize> = self.assignment.iter().map(|u| u.group).collect();
        GroupAssignment::from_one_based(&labels, self.n_groups)
    }

    /// Break dates with regime coefficients rebuilt from the report.
    pub fn break_structure(&self) -> Result<BreakStructure> {
        let groups = self
            .breaks
            .iter()
            .map(|b| crate::model::GroupRegimes {
                break_dates: b.dates.clone(),
                regime_coefs: self
                    .regimes
                    .iter()
                    .filter(|r| r.group == b.group)
                    .map(|r| r.coefficients.iter().map(|c| c.estimate).collect())
                    .collect(),
            })
            .collect();
        BreakStructure::new(self.periods.len(), self.regressors.len(), groups)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Writes a fit into `dir`: `fit.json`, or `regimes.csv` and
/// `assignment.csv`; always `plotdata.csv`. Returns the files written.
pub fn emit_fit(report: &FitReport, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    match format {
        Format::Json => {
            let p = dir.join("fit.json");
            write_json(report, &p)?;
            written.push(p);
        }
        Format::Csv => {
            let p = dir.join("regimes.csv");
            let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
            w.write_record([
                "group",
                "regime",
                "start",
                "end",
                "coefficient",
                "estimate",
                "se",
            ])
            .map_err(|e| csv_err(&p, e))?;
            for r in &report.regimes {
                for c in &r.coefficients {
                    w.write_record([
                        r.group.to_string(),
                        r.regime.to_string(),
                        r.start.clone(),
                        r.end.clone(),
                        c.name.clone(),
                        c.estimate.to_string(),
                        c.se.to_string(),
                    ])
                    .map_err(|e| csv_err(&p, e))?;
                }
            }
            w.flush().map_err(|e| io_err(&p, e))?;
            written.push(p);

            let p = dir.join("assignment.csv");
            let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
            w.write_record(["unit", "group"])
                .map_err(|e| csv_err(&p, e))?;
            for u in &report.assignment {
                w.write_record([u.unit.clone(), u.group.to_string()])
                    .map_err(|e| csv_err(&p, e))?;
            }
            w.flush().map_err(|e| io_err(&p, e))?;
            written.push(p);
        }
    }
    let p = dir.join("plotdata.csv");
    write_plotdata(report, &p)?;
    written.push(p);
    Ok(written)
}

/// Per-group coefficient paths over time: `group,time,coefficient,estimate,se`.
pub fn write_plotdata(report: &FitReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["group", "time", "coefficient", "estimate", "se"])
        .map_err(|e| csv_err(path, e))?;
    for g in 0..report.n_groups {
        for (t, label) in report.periods.iter().enumerate() {
            let b = report.coef_path.get(g, t);
            let s = report.se_path.get(g, t);
            for (c, name) in report.regressors.iter().enumerate() {
                w.write_record([
                    (g + 1).to_string(),
                    label.clone(),
                    name.clone(),
                    b[c].to_string(),
                    s[c].to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `selection.json`, or `selection.csv` with one `chosen` row per G
/// followed by every `grid` row.
pub fn emit_selection(report: &SelectionReport, dir: &Path, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    match format {
        Format::Json => {
            let p = dir.join("selection.json");
            write_json(report, &p)?;
            Ok(p)
        }
        Format::Csv => {
            let p = dir.join("selection.csv");
            let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
            w.write_record([
                "kind", "groups", "lambda", "ic", "bic", "breaks", "n_params", "sse", "selected",
            ])
            .map_err(|e| csv_err(&p, e))?;
            for c in &report.chosen_lambda {
                w.write_record([
                    "chosen".to_string(),
                    c.n_groups.to_string(),
                    c.lambda.to_string(),
                    String::new(),
                    c.bic.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    (c.n_groups == report.chosen_g).to_string(),
                ])
                .map_err(|e| csv_err(&p, e))?;
            }
            for r in &report.rows {
                let breaks: Vec<String> = r.break_counts.iter().map(usize::to_string).collect();
                w.write_record([
                    "grid".to_string(),
                    r.n_groups.to_string(),
                    r.lambda.to_string(),
                    r.ic.to_string(),
                    r.bic.map(|b| b.to_string()).unwrap_or_default(),
                    breaks.join(" "),
                    r.n_params.to_string(),
                    r.sse.to_string(),
                    String::new(),
                ])
                .map_err(|e| csv_err(&p, e))?;
            }
            w.flush().map_err(|e| io_err(&p, e))?;
            Ok(p)
        }
    }
}

/// Writes `replications.csv` and `summary.json`.
pub fn emit_study(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let reps = dir.join("replications.csv");
    report.write_csv(&reps)?;
    let summary = dir.join("summary.json");
    write_json(&report.summary, &summary)?;
    Ok(vec![reps, summary])
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Serialize(format!("{}: {other:?}", path.display())),
    }
}
