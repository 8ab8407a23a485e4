use gsc_core::diff::neg_kl_approx;
use gsc_core::regression::{regression_dataset, sparse_regression, RegressionConfig};
use gsc_core::sparsevd::mc_kl_oracle;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn kl_approximation_tracks_monte_carlo() {
    // equal up to one additive constant, fixed by the log alpha = 0 point
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 400_000;
    let c = mc_kl_oracle(0.0, n, &mut rng).unwrap() - neg_kl_approx(0.0);
    for la in [-3.0, -1.0, 1.0, 3.0] {
        let mc = mc_kl_oracle(la, n, &mut rng).unwrap();
        assert!((mc - c - neg_kl_approx(la)).abs() < 3e-2, "log alpha {la}: mc {mc} approx {}", neg_kl_approx(la));
    }
}

#[test]
fn negative_kl_decreases_toward_dropout() {
    let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
    assert!(xs.windows(2).all(|w| neg_kl_approx(w[1]) > neg_kl_approx(w[0])));
}

#[test]
fn trained_coefficients_solve_the_expected_objective() {
    // at a stationary point with alpha held fixed, the expected data loss
    // ||y - X theta||^2 + sum_j alpha_j theta_j^2 (X^T X)_jj is minimized
    // by theta = (X^T X + diag(X^T X) diag(alpha))^-1 X^T y
    let cfg = RegressionConfig::default();
    let report = sparse_regression(&cfg).unwrap();
    let (train, _) = regression_dataset(&cfg).unwrap();
    let kept: Vec<usize> = (0..cfg.features).filter(|&j| report.kept[j]).collect();
    let (n, k) = (cfg.samples, kept.len());
    let mut x = DMatrix::<f64>::zeros(n, k + 1);
    for i in 0..n {
        for (c, &j) in kept.iter().enumerate() {
            x[(i, c)] = train.x.at(i, j);
        }
        x[(i, k)] = 1.0;
    }
    let y = DVector::from_column_slice(&train.y);
    let xtx = x.transpose() * &x;
    let mut a = xtx.clone();
    for (c, &j) in kept.iter().enumerate() {
        a[(c, c)] += xtx[(c, c)] * report.log_alpha[j].exp();
    }
    let theta = a.lu().solve(&(x.transpose() * y)).unwrap();
    for (c, &j) in kept.iter().enumerate() {
        let rel = (report.theta[j] - theta[c]).abs() / theta[c].abs();
        assert!(rel < 0.05, "feature {j}: trained {} closed form {}", report.theta[j], theta[c]);
    }
}
