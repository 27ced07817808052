//! Statistical checks of the lattice simulation and off-lattice evaluation
//! against covariance-model oracles. All runs are seeded.

use warpfield::covariance::CovarianceModel;
use warpfield::deform::Deformation;
use warpfield::field::{
    deformed_field, simulate, simulate_with_sample, spatial_mean_std_err, GridField, GridSpec,
};
use warpfield::geom::{Mat2, Vec2};
use warpfield::stats;

const BASE_SEED: u64 = 42;

/// Empirical covariance at integer lag `(di, dj)` averaged over the grid.
fn lag_covariance(field: &GridField, di: usize, dj: usize) -> f64 {
    let (rows, cols) = field.spec.shape;
    let mut acc = Vec::with_capacity((rows - di) * (cols - dj));
    for i in 0..rows - di {
        for j in 0..cols - dj {
            acc.push(field.value(i, j) * field.value(i + di, j + dj));
        }
    }
    stats::mean(&acc)
}

#[test]
fn spatial_mean_within_theoretical_error() {
    let spec = GridSpec::new(Vec2::ZERO, 0.2, (512, 512)).unwrap();
    let model = CovarianceModel::gaussian();
    let field = simulate(&spec, &model, BASE_SEED).unwrap();
    let mean = stats::mean(field.values.as_slice());
    let se = spatial_mean_std_err(&model, spec.shape, spec.spacing);
    assert!(
        mean.abs() <= 4.0 * se,
        "spatial mean {mean} exceeds 4 x theoretical SE {se}"
    );
}

#[test]
fn lag_one_correlation_matches_model() {
    let spec = GridSpec::new(Vec2::ZERO, 0.2, (48, 48)).unwrap();
    let model = CovarianceModel::gaussian();
    let reps = 200u64;
    let per_rep: Vec<f64> = (0..reps)
        .map(|r| {
            let f = simulate(&spec, &model, stats::derive_seed(BASE_SEED, r)).unwrap();
            lag_covariance(&f, 0, 1)
        })
        .collect();
    let expected = model.evaluate(Vec2::new(spec.spacing, 0.0));
    let mean = stats::mean(&per_rep);
    let se = stats::std_err(&per_rep);
    assert!(
        (mean - expected).abs() <= 3.0 * se,
        "lag-1 covariance {mean} vs model {expected} (3 SE = {})",
        3.0 * se
    );
}

#[test]
fn stationarity_over_lag_classes() {
    // Chi-square style: z-scores of 10 lag classes against the model, over
    // 200 replications; their squared sum should look like chi^2(10).
    let spec = GridSpec::new(Vec2::ZERO, 0.2, (48, 48)).unwrap();
    let model = CovarianceModel::gaussian();
    let reps = 200u64;
    let lags: [(usize, usize); 10] = [
        (0, 1),
        (1, 0),
        (1, 1),
        (0, 2),
        (2, 0),
        (2, 1),
        (1, 2),
        (2, 2),
        (0, 4),
        (3, 3),
    ];
    let mut per_lag: Vec<Vec<f64>> = vec![Vec::new(); lags.len()];
    for r in 0..reps {
        let f = simulate(&spec, &model, stats::derive_seed(BASE_SEED, r)).unwrap();
        for (k, &(di, dj)) in lags.iter().enumerate() {
            per_lag[k].push(lag_covariance(&f, di, dj));
        }
    }
    let mut chi2 = 0.0;
    for (k, &(di, dj)) in lags.iter().enumerate() {
        let expected = model.evaluate(Vec2::new(
            dj as f64 * spec.spacing,
            di as f64 * spec.spacing,
        ));
        let z = (stats::mean(&per_lag[k]) - expected) / stats::std_err(&per_lag[k]);
        chi2 += z * z;
    }
    // 0.5% critical values of chi^2 with 10 degrees of freedom.
    assert!(chi2 < 25.19, "chi2 = {chi2} exceeds the 99.5% quantile");
    assert!(
        chi2 > 1.0,
        "chi2 = {chi2} suspiciously small (shared noise?)"
    );
}

#[test]
fn isotropy_equal_norm_lags_agree() {
    let spec = GridSpec::new(Vec2::ZERO, 0.2, (48, 48)).unwrap();
    let model = CovarianceModel::gaussian();
    let reps = 200u64;
    // Pairs of lags with equal Euclidean norm but different direction.
    let pairs: [((usize, usize), (usize, usize)); 3] =
        [((0, 5), (5, 0)), ((3, 4), (4, 3)), ((0, 5), (3, 4))];
    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    for r in 0..reps {
        let f = simulate(&spec, &model, stats::derive_seed(BASE_SEED, r)).unwrap();
        for (k, &((a1, a2), (b1, b2))) in pairs.iter().enumerate() {
            diffs[k].push(lag_covariance(&f, a1, a2) - lag_covariance(&f, b1, b2));
        }
    }
    for (k, d) in diffs.iter().enumerate() {
        let z = stats::mean(d) / stats::std_err(d);
        assert!(z.abs() <= 3.5, "equal-norm pair {k}: z = {z}");
    }
}

#[test]
fn derivative_variance_matches_normalization() {
    // First differences estimate the derivative field whose variance is 1
    // under the normalization C''(0) = -I; at finite spacing the exact value
    // is 2 (1 - C(h)) / h^2.
    let spec = GridSpec::new(Vec2::ZERO, 0.2, (48, 48)).unwrap();
    let model = CovarianceModel::gaussian();
    let reps = 100u64;
    let mut sq = Vec::new();
    for r in 0..reps {
        let f = simulate(&spec, &model, stats::derive_seed(BASE_SEED, r)).unwrap();
        for i in 0..48 {
            for j in 0..47 {
                let d = (f.value(i, j + 1) - f.value(i, j)) / spec.spacing;
                sq.push(d * d);
            }
        }
    }
    let var = stats::mean(&sq);
    let exact =
        2.0 * (1.0 - model.evaluate(Vec2::new(spec.spacing, 0.0))) / (spec.spacing * spec.spacing);
    assert!(
        (var - exact).abs() / exact < 0.05,
        "difference variance {var} vs exact {exact}"
    );
    assert!(
        (var - 1.0).abs() < 0.1,
        "difference variance {var} not within 10% of 1"
    );
}

#[test]
fn midpoint_values_are_standard_normal() {
    // Off-lattice points of the band-limited realization still have unit
    // variance and zero mean across seeds.
    let spec = GridSpec::new(Vec2::ZERO, 0.25, (24, 24)).unwrap();
    let model = CovarianceModel::gaussian();
    let reps = 300u64;
    let mut vals = Vec::new();
    for r in 0..reps {
        let (_, sample) =
            simulate_with_sample(&spec, &model, stats::derive_seed(BASE_SEED, r), 4).unwrap();
        // midpoint of two lattice nodes and a generic interior point
        vals.push(sample.eval(Vec2::new(2.125, 2.0)).unwrap());
        vals.push(sample.eval(Vec2::new(3.3932, 1.77)).unwrap());
    }
    let m = stats::mean(&vals);
    let v = stats::variance(&vals);
    let n = vals.len() as f64;
    assert!(m.abs() <= 4.0 / n.sqrt(), "midpoint mean {m}");
    // SE of a variance estimate of Gaussians is roughly sqrt(2/n).
    assert!(
        (v - 1.0).abs() <= 4.0 * (2.0 / n).sqrt(),
        "midpoint variance {v}"
    );
}

#[test]
fn rotated_field_keeps_isotropic_covariance() {
    // theta = rho_alpha on an isotropic realization: the deformed lattice
    // field has the same covariance as the undeformed one.
    let out_spec = GridSpec::new(Vec2::new(-2.0, -2.0), 0.2, (21, 21)).unwrap();
    // Window large enough to contain the rotated image of the output grid.
    let win = GridSpec::new(Vec2::new(-4.5, -4.5), 0.25, (37, 37)).unwrap();
    let model = CovarianceModel::gaussian();
    let theta = Deformation::linear(Mat2::rotation(0.6)).unwrap();
    let reps = 200u64;
    let mut rot_lag = Vec::new();
    let mut base_lag = Vec::new();
    for r in 0..reps {
        let seed = stats::derive_seed(BASE_SEED, r);
        let (_, sample) = simulate_with_sample(&win, &model, seed, 4).unwrap();
        let rot = deformed_field(&sample, &theta, &out_spec, &model, seed).unwrap();
        rot_lag.push(lag_covariance(&rot, 0, 1));
        let base = simulate(&out_spec, &model, stats::derive_seed(BASE_SEED ^ 0xABCD, r)).unwrap();
        base_lag.push(lag_covariance(&base, 0, 1));
    }
    let diff: Vec<f64> = rot_lag
        .iter()
        .zip(base_lag.iter())
        .map(|(a, b)| a - b)
        .collect();
    let z = stats::mean(&diff) / stats::std_err(&diff);
    assert!(z.abs() <= 3.5, "rotated vs base lag covariance z = {z}");
}

#[test]
fn linear_stretch_halves_correlation_length() {
    // theta = diag(2, 1): X_theta(x) = X(2 x1, x2), so the correlation along
    // axis 1 at lag h matches C(2h): the correlation length is halved.
    let out_spec = GridSpec::new(Vec2::new(0.0, 0.0), 0.2, (24, 24)).unwrap();
    let win = GridSpec::new(Vec2::new(-0.5, -0.5), 0.2, (60, 60)).unwrap();
    let model = CovarianceModel::gaussian();
    let theta = Deformation::linear(Mat2::diagonal(2.0, 1.0)).unwrap();
    let reps = 200u64;
    let mut along = Vec::new();
    let mut across = Vec::new();
    for r in 0..reps {
        let seed = stats::derive_seed(BASE_SEED, r);
        let (_, sample) = simulate_with_sample(&win, &model, seed, 4).unwrap();
        let def = deformed_field(&sample, &theta, &out_spec, &model, seed).unwrap();
        along.push(lag_covariance(&def, 0, 1));
        across.push(lag_covariance(&def, 1, 0));
    }
    let c_along = stats::mean(&along);
    let c_across = stats::mean(&across);
    let expect_along = model.evaluate(Vec2::new(2.0 * out_spec.spacing, 0.0));
    let expect_across = model.evaluate(Vec2::new(0.0, out_spec.spacing));
    assert!(
        (c_along - expect_along).abs() / expect_along < 0.1,
        "along-axis correlation {c_along} vs C(2h) = {expect_along}"
    );
    assert!(
        (c_across - expect_across).abs() / expect_across < 0.1,
        "across-axis correlation {c_across} vs C(h) = {expect_across}"
    );
}
