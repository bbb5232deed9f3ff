//! Choose the number of groups by BIC, lambda by IC within each G.
//!
//! cargo run --release --example select_groups

use gagfl::gagfl::GagflOptions;
use gagfl::selection::{bic_groups, LambdaGrid, SelectionOptions};
use gagfl::simulate::{generate, Dgp, DgpSpec};

fn main() -> gagfl::Result<()> {
    let (panel, truth) = generate(&DgpSpec::new(Dgp::Dgp1, 50, 10, 0.5, 11))?;
    let sel = bic_groups(
        &panel,
        &[1, 2, 3, 4, 5],
        &LambdaGrid::simulation(),
        &GagflOptions::default(),
        &SelectionOptions::default(),
    )?;
    println!("sigma2 (G=1 SSE/NT) = {:.4}", sel.report.sigma2);
    println!(" G   lambda      BIC    breaks");
    for (c, fit) in sel.report.chosen_lambda.iter().zip(&sel.fits) {
        println!(
            "{:2} {:8.4} {:8.4}    {:?}",
            c.n_groups,
            c.lambda,
            c.bic,
            fit.break_counts()
        );
    }
    println!(
        "chosen G = {} (true {})",
        sel.report.chosen_g,
        truth.assignment.n_groups()
    );
    Ok(())
}
