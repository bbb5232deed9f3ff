mod common;

use common::{all_assignments, dense_ols, panel_from};
use gagfl::agfl::{agfl_solve_group, compute_weights, AgflOptions};
use gagfl::gagfl::{
    fit_from_preliminary, fit_gagfl, fit_partial, preliminary, GagflOptions, Preliminary,
};
use gagfl::gfe::{fit_unpenalized, ols_per_cell};
use gagfl::linalg::SingularPolicy;
use gagfl::metrics::misclassification;
use gagfl::simulate::{generate, Dgp, DgpSpec};
use gagfl::{GroupAssignment, Mode, ModelSpec, Panel};

#[test]
fn single_group_is_pooled_fused_lasso() {
    let panel = panel_from(&[0; 15], 8, 1, 0.5, 1, |_, t| {
        vec![if t < 4 { 1.0 } else { 2.5 }]
    });
    let fit = fit_gagfl(&panel, 1, 0.02, &GagflOptions::default()).unwrap();
    let ols = ols_per_cell(&panel, &GroupAssignment::single(15), SingularPolicy::Error).unwrap();
    let w = compute_weights(&ols, 2.0, 1e-10);
    let members: Vec<usize> = (0..15).collect();
    let pls = agfl_solve_group(
        &panel,
        &members,
        w.row(0),
        0.02,
        &AgflOptions::default(),
        None,
    )
    .unwrap();
    let diff = fit
        .penalized_path
        .values()
        .iter()
        .zip(&pls.path)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "diff {diff}");
    assert!((fit.objective - pls.objective).abs() < 1e-12);
    assert_eq!(fit.break_counts(), vec![1]);
}

#[test]
fn noise_free_design_is_recovered_exactly() {
    let spec = DgpSpec::new(Dgp::Dgp1, 30, 12, 0.0, 8);
    let (panel, truth) = generate(&spec).unwrap();
    for lambda in [0.001, 0.01, 0.1] {
        let fit = fit_gagfl(&panel, 3, lambda, &GagflOptions::default()).unwrap();
        let (mf, perm) = misclassification(&fit.assignment, &truth.assignment);
        assert_eq!(mf, 0.0, "lambda {lambda}");
        for g in 0..3 {
            let est = &fit.breaks().groups[g];
            let tru = &truth.break_structure.groups[perm[g]];
            assert_eq!(
                est.break_dates, tru.break_dates,
                "lambda {lambda} group {g}"
            );
            for (a, b) in est
                .regime_coefs
                .iter()
                .flatten()
                .zip(tru.regime_coefs.iter().flatten())
            {
                assert!((a - b).abs() < 1e-10, "lambda {lambda}: {a} vs {b}");
            }
        }
    }
    let dates: Vec<_> = truth
        .break_structure
        .groups
        .iter()
        .map(|g| g.break_dates.clone())
        .collect();
    assert_eq!(dates, vec![vec![6, 10], vec![4, 10], vec![]]);
}

#[test]
fn objective_beats_every_assignment_in_exhaustive_scan() {
    let labels = [0, 0, 0, 0, 1, 1, 1, 1];
    let panel = panel_from(&labels, 4, 1, 0.3, 42, |g, t| {
        vec![if g == 0 {
            if t < 2 {
                1.0
            } else {
                2.0
            }
        } else {
            -0.5
        }]
    });
    let lambda = 0.01;
    let fit = fit_gagfl(&panel, 2, lambda, &GagflOptions::default()).unwrap();
    let opts = AgflOptions::default();
    let best = all_assignments(8, 2)
        .iter()
        .map(|l| {
            (0..2)
                .map(|g| {
                    let members: Vec<usize> = (0..8).filter(|&i| l[i] == g).collect();
                    agfl_solve_group(&panel, &members, fit.weights.row(g), lambda, &opts, None)
                        .unwrap()
                        .objective
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(
        fit.objective <= best + 1e-10,
        "{} vs exhaustive {best}",
        fit.objective
    );
}

#[test]
fn first_difference_solution_matches_dense_coupled_system() {
    let labels = [0, 0, 0, 0, 1, 1, 1, 1, 1];
    let t_len = 4;
    let panel = panel_from(&labels, t_len, 1, 0.5, 9, |g, t| {
        vec![g as f64 + 0.1 * t as f64]
    });
    let gamma = GroupAssignment::new(labels.to_vec(), 2).unwrap();
    let spec = ModelSpec::fused(1).with_mode(Mode::FirstDifference);
    let path = fit_unpenalized(&panel, &spec, &gamma, SingularPolicy::Error).unwrap();
    // dy_it = x_it b_{g,t} - x_{i,t-1} b_{g,t-1}; unknowns ordered (g, t)
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, &g) in labels.iter().enumerate() {
        for t in 1..t_len {
            let mut r = vec![0.0; 2 * t_len];
            r[g * t_len + t] = panel.x(i, t)[0];
            r[g * t_len + t - 1] = -panel.x(i, t - 1)[0];
            rows.push(r);
            y.push(panel.y(i, t) - panel.y(i, t - 1));
        }
    }
    let b = dense_ols(&rows, &y);
    for g in 0..2 {
        for t in 0..t_len {
            assert!((path.get(g, t)[0] - b[g * t_len + t]).abs() < 1e-9);
        }
    }
}

#[test]
fn first_difference_removes_fixed_effects() {
    let spec = DgpSpec::new(Dgp::Dgp3, 30, 12, 0.0, 3);
    let (panel, truth) = generate(&spec).unwrap();
    let fd = GagflOptions {
        mode: Mode::FirstDifference,
        ..Default::default()
    };
    let fit = fit_gagfl(&panel, 3, 0.01, &fd).unwrap();
    let (mf, perm) = misclassification(&fit.assignment, &truth.assignment);
    assert_eq!(mf, 0.0);
    let mut worst = 0.0_f64;
    for g in 0..3 {
        for t in 0..12 {
            worst = worst
                .max((fit.post.coef_path.get(g, t)[0] - truth.beta_path.get(perm[g], t)[0]).abs());
        }
    }
    assert!(worst < 1e-8, "fd error {worst}");
    let level = fit_gagfl(&panel, 3, 0.01, &GagflOptions::default()).unwrap();
    let (_, perm) = misclassification(&level.assignment, &truth.assignment);
    let mut level_err = 0.0_f64;
    for g in 0..3 {
        for t in 0..12 {
            level_err = level_err.max(
                (level.post.coef_path.get(g, t)[0] - truth.beta_path.get(perm[g], t)[0]).abs(),
            );
        }
    }
    assert!(
        level_err > 0.05,
        "level estimates unexpectedly unbiased ({level_err})"
    );
}

#[test]
fn constant_coefficient_survives_differencing() {
    // y = 1.7 x + unit effect, no breaks
    let n = 10;
    let base = panel_from(&vec![0; n], 6, 1, 0.0, 31, |_, _| vec![1.7]);
    let y: Vec<f64> = (0..n)
        .flat_map(|i| (0..6).map(move |t| (i, t)))
        .map(|(i, t)| base.y(i, t) + i as f64)
        .collect();
    let panel = Panel::new(n, 6, 1, y, base.x_values().to_vec()).unwrap();
    let spec = ModelSpec::fused(1).with_mode(Mode::FirstDifference);
    let path = fit_unpenalized(
        &panel,
        &spec,
        &GroupAssignment::single(n),
        SingularPolicy::Error,
    )
    .unwrap();
    assert!(path.values().iter().all(|b| (b - 1.7).abs() < 1e-10));
}

#[test]
fn all_homogeneous_single_group_is_pooled_ols() {
    let panel = panel_from(&[0; 8], 5, 2, 0.6, 13, |_, _| vec![1.0, -0.5]);
    let opts = GagflOptions {
        homogeneous_mask: Some(vec![true, true]),
        ..Default::default()
    };
    let fit = fit_partial(&panel, 1, 0.1, &opts).unwrap();
    let rows: Vec<Vec<f64>> = (0..8)
        .flat_map(|i| (0..5).map(move |t| (i, t)))
        .map(|(i, t)| panel.x(i, t).to_vec())
        .collect();
    let y: Vec<f64> = (0..8)
        .flat_map(|i| (0..5).map(move |t| (i, t)))
        .map(|(i, t)| panel.y(i, t))
        .collect();
    let b = dense_ols(&rows, &y);
    for (h, expect) in fit.post.homogeneous.iter().zip(&b) {
        assert!((h.estimate - expect).abs() < 1e-10);
    }
    assert!(fit_partial(&panel, 1, 0.1, &GagflOptions::default()).is_err());
}

#[test]
fn group_time_effects_are_cell_least_squares() {
    let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
    let base = panel_from(&labels, 6, 1, 0.3, 77, |g, t| {
        vec![if g == 0 && t >= 3 { 2.0 } else { 1.0 }]
    });
    // prepend an intercept with group-specific time effects
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..12 {
        for t in 0..6 {
            x.push(1.0);
            x.push(base.x(i, t)[0]);
            y.push(base.y(i, t) + 0.5 * (t as f64) * labels[i] as f64);
        }
    }
    let panel = Panel::new(12, 6, 2, y, x).unwrap();
    let opts = GagflOptions {
        penalized_mask: Some(vec![false, true]),
        ..Default::default()
    };
    let fit = fit_partial(&panel, 2, 0.02, &opts).unwrap();
    for path in [&fit.post.coef_path, &fit.penalized_path] {
        let tol = if std::ptr::eq(path, &fit.post.coef_path) {
            1e-10
        } else {
            1e-6
        };
        for g in 0..2 {
            let members = fit.assignment.members(g);
            for t in 0..6 {
                let b = path.get(g, t);
                let mean = members
                    .iter()
                    .map(|&i| panel.y(i, t) - panel.x(i, t)[1] * b[1])
                    .sum::<f64>()
                    / members.len() as f64;
                assert!((b[0] - mean).abs() < tol, "g {g} t {t}: {} vs {mean}", b[0]);
            }
        }
    }
}

#[test]
fn relabeled_start_gives_relabeled_fit() {
    let spec = DgpSpec::new(Dgp::Dgp1, 30, 10, 0.5, 12);
    let (panel, _) = generate(&spec).unwrap();
    let opts = GagflOptions::default();
    let prelim = preliminary(&panel, 3, &opts).unwrap();
    let perm = [2, 0, 1];
    let mut gfe = prelim.gfe.clone();
    gfe.assignment = gfe.assignment.relabel(&perm);
    gfe.path = gfe.path.permute_groups(&perm);
    let swapped = Preliminary {
        spec: prelim.spec.clone(),
        weights: prelim.weights.permute_groups(&perm),
        gfe,
    };
    let a = fit_from_preliminary(&panel, &prelim, 0.05, &opts).unwrap();
    let b = fit_from_preliminary(&panel, &swapped, 0.05, &opts).unwrap();
    assert_eq!(b.assignment, a.assignment.relabel(&perm));
    assert!((a.objective - b.objective).abs() <= 1e-12 * a.objective);
    for g in 0..3 {
        assert_eq!(
            a.breaks().groups[g].break_dates,
            b.breaks().groups[perm[g]].break_dates
        );
    }
    assert!(
        b.post
            .coef_path
            .max_abs_diff(&a.post.coef_path.permute_groups(&perm))
            < 1e-12
    );
}
