mod common;

use common::{dense_ols, panel_from};
use gagfl::agfl::{post_lasso, post_lasso_spec};
use gagfl::linalg::SingularPolicy;
use gagfl::model::{BreakStructure, GroupRegimes};
use gagfl::simulate::{generate, Dgp, DgpSpec};
use gagfl::{GroupAssignment, ModelSpec, Panel};

fn breaks(t_len: usize, dates: Vec<Vec<usize>>) -> BreakStructure {
    let groups = dates
        .into_iter()
        .map(|d| GroupRegimes {
            regime_coefs: vec![vec![0.0]; d.len() + 1],
            break_dates: d,
        })
        .collect();
    BreakStructure::new(t_len, 1, groups).unwrap()
}

#[test]
fn intercept_only_is_grand_mean_with_mean_standard_error() {
    let n = 12;
    let t_len = 5;
    let panel = panel_from(&vec![0; n], t_len, 1, 1.0, 2, |_, _| vec![0.0]);
    // rebuild with x = 1 and a unit-level shift so clustering matters
    let y: Vec<f64> = (0..n)
        .flat_map(|i| (0..t_len).map(move |t| (i, t)))
        .map(|(i, t)| 3.0 + 0.3 * i as f64 + panel.x(i, t)[0])
        .collect();
    let panel = Panel::new(n, t_len, 1, y.clone(), vec![1.0; n * t_len]).unwrap();
    let post = post_lasso(
        &panel,
        &GroupAssignment::single(n),
        &breaks(t_len, vec![vec![]]),
    )
    .unwrap();
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    assert!((post.regimes.groups[0].regime_coefs[0][0] - grand).abs() < 1e-12);
    // the bias-reduced cluster sandwich for a mean reduces to the textbook
    // standard error of the N unit means
    let means: Vec<f64> = (0..n)
        .map(|i| y[i * t_len..(i + 1) * t_len].iter().sum::<f64>() / t_len as f64)
        .collect();
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n * (n - 1)) as f64;
    let se = post.std_errors[0][0][0];
    assert!((se - var.sqrt()).abs() < 1e-12, "se {se} vs {}", var.sqrt());
}

#[test]
fn noise_free_truth_gives_exact_regimes_and_zero_se() {
    let spec = DgpSpec::new(Dgp::Dgp1, 30, 12, 0.0, 5);
    let (panel, truth) = generate(&spec).unwrap();
    let post = post_lasso(&panel, &truth.assignment, &truth.break_structure).unwrap();
    for (est, tru) in post
        .regimes
        .groups
        .iter()
        .zip(&truth.break_structure.groups)
    {
        assert_eq!(est.break_dates, tru.break_dates);
        for (a, b) in est
            .regime_coefs
            .iter()
            .flatten()
            .zip(tru.regime_coefs.iter().flatten())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(post
        .std_errors
        .iter()
        .flatten()
        .flatten()
        .all(|s| s.abs() < 1e-10));
}

#[test]
fn one_break_matches_two_separate_regressions() {
    let panel = panel_from(&[0; 10], 6, 1, 0.5, 17, |_, t| {
        vec![if t < 3 { 1.0 } else { 2.0 }]
    });
    let post = post_lasso(
        &panel,
        &GroupAssignment::single(10),
        &breaks(6, vec![vec![4]]),
    )
    .unwrap();
    for (j, periods) in [(0usize, 0..3usize), (1, 3..6)] {
        let cells: Vec<(usize, usize)> = (0..10)
            .flat_map(|i| periods.clone().map(move |t| (i, t)))
            .collect();
        let rows: Vec<Vec<f64>> = cells.iter().map(|&(i, t)| panel.x(i, t).to_vec()).collect();
        let y: Vec<f64> = cells.iter().map(|&(i, t)| panel.y(i, t)).collect();
        let b = dense_ols(&rows, &y)[0];
        assert!((post.regimes.groups[0].regime_coefs[j][0] - b).abs() < 1e-12);
    }
}

#[test]
fn homogeneous_coefficient_matches_partitioned_regression() {
    // x1 common to everyone, x2 group specific with a break in group 0
    let labels = [0, 0, 0, 0, 1, 1, 1, 1];
    let panel = panel_from(&labels, 5, 2, 0.4, 23, |g, t| {
        vec![
            0.7,
            if g == 0 && t >= 2 {
                2.0
            } else {
                1.0 - g as f64
            },
        ]
    });
    let spec = ModelSpec::from_masks(
        gagfl::Mode::Level,
        &[false, true],
        &[true, false],
        &[false, false],
    )
    .unwrap();
    let gamma = GroupAssignment::new(labels.to_vec(), 2).unwrap();
    let post = post_lasso_spec(
        &panel,
        &spec,
        &gamma,
        &[vec![3], vec![]],
        SingularPolicy::Error,
    )
    .unwrap();
    // columns: x1, x2 in (g0, regime 0), (g0, regime 1), (g1)
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..8 {
        for t in 0..5 {
            let x = panel.x(i, t);
            let col = if labels[i] == 1 {
                3
            } else if t >= 2 {
                2
            } else {
                1
            };
            let mut r = vec![0.0; 4];
            r[0] = x[0];
            r[col] = x[1];
            rows.push(r);
            y.push(panel.y(i, t));
        }
    }
    let b = dense_ols(&rows, &y);
    assert!((post.homogeneous[0].estimate - b[0]).abs() < 1e-10);
    let g0 = &post.regimes.groups[0].regime_coefs;
    let g1 = &post.regimes.groups[1].regime_coefs;
    assert!((g0[0][1] - b[1]).abs() < 1e-10 && (g0[1][1] - b[2]).abs() < 1e-10);
    assert!((g1[0][1] - b[3]).abs() < 1e-10);
}
