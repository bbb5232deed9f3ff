//! Unit fixed effects correlated with x bias the level fit; first
//! differencing removes them.
//!
//! cargo run --release --example first_difference

use gagfl::gagfl::{fit_gagfl, GagflOptions};
use gagfl::metrics::misclassification;
use gagfl::simulate::{generate, Dgp, DgpSpec};
use gagfl::Mode;

fn main() -> gagfl::Result<()> {
    let (panel, truth) = generate(&DgpSpec::new(Dgp::Dgp3, 100, 20, 0.5, 4))?;
    for mode in [Mode::Level, Mode::FirstDifference] {
        let opts = GagflOptions {
            mode,
            ..Default::default()
        };
        let fit = fit_gagfl(&panel, 3, 0.02, &opts)?;
        let (mf, perm) = misclassification(&fit.assignment, &truth.assignment);
        let mut sq = 0.0;
        for g in 0..3 {
            for t in 0..panel.n_periods() {
                sq +=
                    (fit.post.coef_path.get(g, t)[0] - truth.beta_path.get(perm[g], t)[0]).powi(2);
            }
        }
        let rmse = (sq / (3 * panel.n_periods()) as f64).sqrt();
        println!(
            "{mode:?}: MF {mf:.3}, breaks {:?}, path RMSE {rmse:.3}",
            fit.break_counts()
        );
    }
    Ok(())
}
