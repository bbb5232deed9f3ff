//! With sigma = 0 the estimator recovers groups, break dates and regime
//! coefficients to rounding error.
//!
//! cargo run --release --example noise_free

use gagfl::gagfl::{fit_gagfl, GagflOptions};
use gagfl::metrics::{misclassification, score_fit};
use gagfl::simulate::{generate, Dgp, DgpSpec};

fn main() -> gagfl::Result<()> {
    let (panel, truth) = generate(&DgpSpec::new(Dgp::Dgp1, 30, 12, 0.0, 8))?;
    let fit = fit_gagfl(&panel, 3, 0.01, &GagflOptions::default())?;
    let (mf, perm) = misclassification(&fit.assignment, &truth.assignment);
    println!("misclassification {mf}");
    for g in 0..3 {
        let est = &fit.breaks().groups[g];
        let tru = &truth.break_structure.groups[perm[g]];
        println!(
            "group {}: estimated {:?}, true {:?}",
            g + 1,
            est.break_dates,
            tru.break_dates
        );
        for (a, b) in est.regime_coefs.iter().zip(&tru.regime_coefs) {
            println!("  {:+.12} vs {:+.12}", a[0], b[0]);
        }
    }
    let row = score_fit(&fit, &truth);
    println!(
        "RMSE {:.1e}, correct break counts {:?}",
        row.rmse, row.break_count_correct
    );
    Ok(())
}
