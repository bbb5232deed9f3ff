//! Fit G=3 to a panel stored as CSV, choosing lambda by IC.
//!
//! cargo run --release --example fit_csv [-- path/to/panel.csv]
//!
//! Without a path a DGP.1 panel is simulated and written to a temp dir
//! first. CSV layout: `unit,time,y,x1,...`.

use std::path::PathBuf;

use gagfl::gagfl::{preliminary, GagflOptions};
use gagfl::io::{emit_fit, load_panel, write_panel, FitReport, Format, LoadOptions};
use gagfl::selection::{lambda_path, LambdaGrid};
use gagfl::simulate::{generate, Dgp, DgpSpec};

fn main() -> gagfl::Result<()> {
    let dir = std::env::temp_dir().join("gagfl-fit-csv");
    std::fs::create_dir_all(&dir).map_err(|e| gagfl::Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let (panel, _) = generate(&DgpSpec::new(Dgp::Dgp1, 60, 10, 0.5, 3))?;
            let p = dir.join("panel.csv");
            write_panel(&panel, &p)?;
            p
        }
    };
    let panel = load_panel(&path, LoadOptions::default())?;
    println!(
        "{} units x {} periods, k = {}",
        panel.n_units(),
        panel.n_periods(),
        panel.n_regressors()
    );

    let opts = GagflOptions::default();
    let prelim = preliminary(&panel, 3, &opts)?;
    let path = lambda_path(
        &panel,
        &prelim,
        &LambdaGrid::simulation().values(),
        &opts,
        0.05,
    )?;
    let fit = &path.fits[path.chosen];
    println!(
        "IC chose lambda = {:.4} (of {} grid points)",
        fit.lambda,
        path.lambdas.len()
    );

    for (g, regimes) in fit.breaks().groups.iter().enumerate() {
        println!(
            "group {} ({} units), breaks at {:?}",
            g + 1,
            fit.assignment.members(g).len(),
            regimes.break_dates
        );
        for (j, coef) in regimes.regime_coefs.iter().enumerate() {
            println!(
                "  regime {}: {:.3} (se {:.3})",
                j + 1,
                coef[0],
                fit.post.std_errors[g][j][0]
            );
        }
    }
    let written = emit_fit(&FitReport::new(fit, &panel), &dir, Format::Csv)?;
    println!("wrote {} files under {}", written.len(), dir.display());
    Ok(())
}
