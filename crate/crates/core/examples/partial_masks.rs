//! Mixed coefficient roles: a common slope, a group-specific constant, and
//! a fused coefficient with breaks.
//!
//! cargo run --release --example partial_masks

use gagfl::gagfl::{fit_partial, GagflOptions};
use gagfl::{Panel, Result};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let (n, t_len) = (60, 12);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let std = Normal::new(0.0, 1.0).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in 0..n {
        let g = i % 2;
        for t in 0..t_len {
            let (x1, x2, x3): (f64, f64, f64) = (
                std.sample(&mut rng),
                std.sample(&mut rng),
                std.sample(&mut rng),
            );
            let b3 = match (g, t >= 6) {
                (0, false) => 1.0,
                (0, true) => 2.5,
                _ => -1.0,
            };
            x.extend([x1, x2, x3]);
            y.push(
                0.8 * x1
                    + (if g == 0 { 0.5 } else { -0.5 }) * x2
                    + b3 * x3
                    + 0.3 * std.sample(&mut rng),
            );
        }
    }
    let panel = Panel::new(n, t_len, 3, y, x)?;
    let opts = GagflOptions {
        homogeneous_mask: Some(vec![true, false, false]),
        time_invariant_mask: Some(vec![false, true, false]),
        ..Default::default()
    };
    let fit = fit_partial(&panel, 2, 0.02, &opts)?;
    for h in &fit.post.homogeneous {
        println!(
            "common x{}: {:.3} (se {:.3})",
            h.coord + 1,
            h.estimate,
            h.std_error
        );
    }
    for (g, regimes) in fit.breaks().groups.iter().enumerate() {
        println!("group {}: breaks {:?}", g + 1, regimes.break_dates);
        for coef in &regimes.regime_coefs {
            println!("  x2 {:.3}, x3 {:.3}", coef[1], coef[2]);
        }
    }
    Ok(())
}
