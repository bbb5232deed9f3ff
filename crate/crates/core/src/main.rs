use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gagfl::gagfl::{fit_gagfl, GagflOptions};
use gagfl::io::{
    emit_fit, emit_selection, emit_study, load_panel, read_json, write_json, write_panel,
    FitReport, Format, LoadOptions,
};
use gagfl::metrics::score_parts;
use gagfl::model::Mode;
use gagfl::selection::{bic_groups, BicBasis, LambdaGrid, SelectionOptions};
use gagfl::simulate::{
    generate, run_study, BreakLayout, Dgp, DgpSpec, GroupChoice, LambdaChoice, SimTruth,
    StudyConfig,
};
use gagfl::{Error, Result};

/// Grouped panel regression with group-specific structural breaks.
#[derive(Parser)]
#[command(name = "gagfl", version)]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one (G, lambda), or lambda by IC for a fixed G.
    Fit(FitArgs),
    /// Choose lambda by IC and G by BIC.
    Select(SelectArgs),
    /// Run a Monte Carlo study, or write one simulated panel.
    Simulate(SimulateArgs),
    /// Score a fit report against a simulated truth.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Level,
    Fd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    #[arg(long, value_enum, default_value = "level")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random starts for the preliminary GFE fit.
    #[arg(long, default_value_t = 100)]
    starts: usize,
    /// Regressors (names or 1-based positions) common to all groups and periods.
    #[arg(long, value_delimiter = ',')]
    homogeneous: Vec<String>,
    /// Regressors that are group specific but constant in time.
    #[arg(long, value_delimiter = ',')]
    time_invariant: Vec<String>,
    /// Regressors that are group specific and free every period.
    #[arg(long, value_delimiter = ',')]
    time_varying: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    ic_c: f64,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_points: Option<usize>,
}

impl GridArgs {
    fn grid(&self, default: LambdaGrid) -> Result<LambdaGrid> {
        LambdaGrid::new(
            self.lambda_min.unwrap_or(default.min),
            self.lambda_max.unwrap_or(default.max),
            self.lambda_points.unwrap_or(default.n_points),
        )
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    standardize: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    groups: usize,
    /// Fixed lambda; without it lambda is chosen by IC over the grid.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    groups_min: usize,
    #[arg(long, default_value_t = 5)]
    groups_max: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Compare G with BIC on the initial GFE estimates.
    #[arg(long)]
    bic_initial: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design number 1-4.
    #[arg(long, default_value_t = 1)]
    dgp: u8,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    t: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Group shares, e.g. 0.1,0.8,0.1.
    #[arg(long, value_delimiter = ',')]
    shares: Option<Vec<f64>>,
    #[arg(long)]
    close_breaks: bool,
    /// Fixed G; without it G is chosen by BIC over --groups-min..--groups-max.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value_t = 1)]
    groups_min: usize,
    #[arg(long, default_value_t = 5)]
    groups_max: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Write one panel (`panel.csv`) and its truth (`truth.json`) only.
    #[arg(long)]
    data_only: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// `fit.json` written by `fit` or `select`.
    #[arg(long)]
    input: PathBuf,
    /// `truth.json` written by `simulate --data-only`.
    #[arg(long)]
    truth: PathBuf,
    /// Where to write the metrics as JSON; printed when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Like `println!`, but a closed pipe (e.g. `| head`) is not a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GAGFL_LOG")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: could not size thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Select(a) => run_select(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve(names: &[String], items: &[String]) -> Result<Vec<bool>> {
    let mut mask = vec![false; names.len()];
    for item in items {
        let pos = names
            .iter()
            .position(|n| n == item)
            .or_else(|| {
                item.parse::<usize>()
                    .ok()
                    .filter(|&p| p >= 1 && p <= names.len())
                    .map(|p| p - 1)
            })
            .ok_or_else(|| Error::InvalidOptions(format!("unknown regressor '{item}'")))?;
        mask[pos] = true;
    }
    Ok(mask)
}

fn estimator_options(est: &EstimatorArgs, names: &[String]) -> Result<GagflOptions> {
    let mut opts = GagflOptions {
        mode: match est.mode {
            ModeArg::Level => Mode::Level,
            ModeArg::Fd => Mode::FirstDifference,
        },
        ..Default::default()
    };
    opts.agfl.kappa = est.kappa;
    opts.gfe.seed = est.seed;
    opts.gfe.n_starts = est.starts;
    if !(est.homogeneous.is_empty() && est.time_invariant.is_empty() && est.time_varying.is_empty())
    {
        let hom = resolve(names, &est.homogeneous)?;
        let inv = resolve(names, &est.time_invariant)?;
        let free = resolve(names, &est.time_varying)?;
        opts.penalized_mask = Some(
            (0..names.len())
                .map(|c| !(hom[c] || inv[c] || free[c]))
                .collect(),
        );
        opts.homogeneous_mask = Some(hom);
        opts.time_invariant_mask = Some(inv);
    }
    Ok(opts)
}

fn run_fit(a: FitArgs) -> Result<()> {
    let panel = load_panel(
        &a.data.input,
        LoadOptions {
            standardize: a.data.standardize,
        },
    )?;
    let opts = estimator_options(&a.est, panel.regressor_names())?;
    let fit = match a.lambda {
        Some(l) => fit_gagfl(&panel, a.groups, l, &opts)?,
        None => {
            let grid = a.grid.grid(LambdaGrid::empirical())?;
            let prelim = gagfl::gagfl::preliminary(&panel, a.groups, &opts)?;
            let path =
                gagfl::selection::lambda_path(&panel, &prelim, &grid.values(), &opts, a.est.ic_c)?;
            path.fits
                .into_iter()
                .nth(path.chosen)
                .expect("chosen index")
        }
    };
    let report = FitReport::new(&fit, &panel);
    for p in emit_fit(&report, &a.data.output, a.data.format.into())? {
        out!("wrote {}", p.display());
    }
    out!(
        "G={} lambda={} breaks per group {:?}{}",
        fit.n_groups,
        fit.lambda,
        fit.break_counts(),
        if fit.converged() {
            ""
        } else {
            " (not converged)"
        }
    );
    Ok(())
}

fn run_select(a: SelectArgs) -> Result<()> {
    if a.groups_min == 0 || a.groups_min > a.groups_max {
        return Err(Error::InvalidOptions(
            "need 1 <= groups-min <= groups-max".into(),
        ));
    }
    let panel = load_panel(
        &a.data.input,
        LoadOptions {
            standardize: a.data.standardize,
        },
    )?;
    let opts = estimator_options(&a.est, panel.regressor_names())?;
    let grid = a.grid.grid(LambdaGrid::empirical())?;
    let sel = SelectionOptions {
        ic_c: a.est.ic_c,
        bic_basis: if a.bic_initial {
            BicBasis::Initial
        } else {
            BicBasis::Final
        },
    };
    let range: Vec<usize> = (a.groups_min..=a.groups_max).collect();
    let selection = bic_groups(&panel, &range, &grid, &opts, &sel)?;
    let format: Format = a.data.format.into();
    out!(
        "wrote {}",
        emit_selection(&selection.report, &a.data.output, format)?.display()
    );
    let best = FitReport::new(selection.best(), &panel);
    for p in emit_fit(&best, &a.data.output, format)? {
        out!("wrote {}", p.display());
    }
    out!("selected G={} lambda={}", best.n_groups, best.lambda);
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let dgp = match a.dgp {
        1 => Dgp::Dgp1,
        2 => Dgp::Dgp2,
        3 => Dgp::Dgp3,
        4 => Dgp::Dgp4,
        other => return Err(Error::InvalidOptions(format!("unknown design {other}"))),
    };
    let mut spec = DgpSpec::new(dgp, a.n, a.t, a.sigma, a.est.seed);
    if let Some(s) = a.shares {
        spec.group_shares = s;
    }
    if a.close_breaks {
        spec.break_layout = BreakLayout::CloseBreaks;
    }
    if a.data_only {
        let (panel, truth) = generate(&spec)?;
        std::fs::create_dir_all(&a.output).map_err(|e| Error::Io {
            path: a.output.display().to_string(),
            source: e,
        })?;
        write_panel(&panel, &a.output.join("panel.csv"))?;
        write_json(&truth, &a.output.join("truth.json"))?;
        out!("wrote {}", a.output.display());
        return Ok(());
    }
    let names: Vec<String> = match dgp {
        Dgp::Dgp4 => vec!["y_lag".into(), "x".into()],
        _ => vec!["x".into()],
    };
    let mut estimator = estimator_options(&a.est, &names)?;
    if matches!(a.est.mode, ModeArg::Level) {
        estimator.mode = spec.natural_mode();
    }
    let config = StudyConfig {
        estimator,
        groups: match a.groups {
            Some(g) => GroupChoice::Fixed(g),
            None => GroupChoice::Bic((a.groups_min..=a.groups_max).collect()),
        },
        lambda: match a.lambda {
            Some(l) => LambdaChoice::Fixed(l),
            None => LambdaChoice::Ic(a.grid.grid(LambdaGrid::simulation())?),
        },
        selection: SelectionOptions {
            ic_c: a.est.ic_c,
            bic_basis: BicBasis::Final,
        },
    };
    let report = run_study(&spec, &config, a.reps, a.est.seed)?;
    for p in emit_study(&report, &a.output)? {
        out!("wrote {}", p.display());
    }
    let s = &report.summary;
    out!(
        "mean MF {:.4}, break accuracy {:?}, mean RMSE {:.4}, failed {}",
        s.mean_mf, s.break_accuracy, s.mean_rmse, s.n_failed
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let report: FitReport = read_json(&a.input)?;
    let truth: SimTruth = read_json(&a.truth)?;
    let assignment = report.group_assignment()?;
    if assignment.n_units() != truth.assignment.n_units() {
        return Err(Error::InvalidOptions("fit and truth differ in N".into()));
    }
    let row = score_parts(
        &assignment,
        &report.break_structure()?,
        &report.coef_path,
        &report.se_path,
        &truth,
    );
    match a.output {
        Some(p) => {
            write_json(&row, &p)?;
            out!("wrote {}", p.display());
        }
        None => out!(
            "{}",
            serde_json::to_string_pretty(&row).map_err(|e| Error::Serialize(e.to_string()))?
        ),
    }
    Ok(())
}
