//! Statistical checks of the sector and segment estimators against the
//! closed-form expectations. Seeded; moderate replication counts.

use warpfield::covariance::{rho, CovarianceModel, Level};
use warpfield::field::{GridSpec, LinearDeformedSampler};
use warpfield::geom::{Mat2, Vec2};
use warpfield::spiral::{regress_colnorm, run_y_schedule, SectorFamily, SegmentFamily};
use warpfield::stats;
use warpfield::{spiral, Result};

const SEED: u64 = 4242;

fn annulus_spec(r0: f64, n: usize) -> Result<GridSpec> {
    let spacing = 1.0 / (8.0 * n as f64);
    let half = r0 + 1.0 / n as f64 + 4.0 * spacing;
    let side = (2.0 * half / spacing).round() as usize + 1;
    GridSpec::new(Vec2::new(-half, -half), spacing, (side, side))
}

#[test]
fn z_mean_matches_expected_phi() {
    // Identity deformation, N = 16, u = 1: E[Z_N] = rho_2(u) |T_N^0|.
    let model = CovarianceModel::gaussian();
    let (r0, phi0, u, n) = (2.0, 0.0, 1.0, 16usize);
    let spec = annulus_spec(r0, n).unwrap();
    let sampler = LinearDeformedSampler::new(&spec, &model, Mat2::IDENTITY).unwrap();
    let family = SectorFamily::new(r0, phi0, n).unwrap();
    let reps = 200u64;
    let values: Vec<f64> = (0..reps)
        .map(|rep| {
            let f = sampler.sample(stats::derive_seed(SEED, rep));
            spiral::z_estimator(&f, &family, u).unwrap()
        })
        .collect();
    let mean = stats::mean(&values);
    let se = stats::std_err(&values);
    let expected = rho(2, Level(u)).unwrap() * family.sector_area();
    assert!(
        (mean - expected).abs() <= 3.0 * se,
        "Z_16 mean {mean:.5} vs expected {expected:.5} (3 SE = {:.5})",
        3.0 * se
    );
}

#[test]
fn y_mean_matches_expected_phi_at_zero_level() {
    // Identity, u = 0: E[Y_N] / |S_N^0| = rho_1(0) = 1/(2 pi).
    let model = CovarianceModel::gaussian();
    let (base, u, n) = (Vec2::new(2.0, 0.0), 0.0, 16usize);
    let spec = annulus_spec(2.0, n).unwrap();
    let sampler = LinearDeformedSampler::new(&spec, &model, Mat2::IDENTITY).unwrap();
    let family = SegmentFamily::new(base, n).unwrap();
    let reps = 200u64;
    let values: Vec<f64> = (0..reps)
        .map(|rep| {
            let f = sampler.sample(stats::derive_seed(SEED ^ 0x55, rep));
            spiral::y_estimator(&f, &family, u).unwrap()
        })
        .collect();
    let mean = stats::mean(&values);
    let se = stats::std_err(&values);
    let expected = rho(1, Level(u)).unwrap() * family.length();
    assert!(
        (mean - expected).abs() <= 3.0 * se,
        "Y_16 mean {mean:.6} vs expected {expected:.6} (3 SE = {:.6})",
        3.0 * se
    );
}

#[test]
fn y_schedule_recovers_column_norm() {
    // f(r) = 2r: X_theta = X(2x), |J^1| = 2; pooled regression over the
    // schedule recovers it from 200 replications per N.
    let model = CovarianceModel::gaussian();
    let base = Vec2::new(2.0, 0.0);
    let schedule = [8usize, 12, 16, 24, 32];
    let u = 0.0;
    let m = Mat2::diagonal(2.0, 2.0);
    let samplers: std::collections::BTreeMap<usize, LinearDeformedSampler> = schedule
        .iter()
        .map(|&n| {
            let spec = annulus_spec(2.0, n).unwrap();
            (n, LinearDeformedSampler::new(&spec, &model, m).unwrap())
        })
        .collect();
    let run = run_y_schedule(
        |n, rep| Ok(samplers[&n].sample(stats::derive_seed(SEED ^ 0x77, rep))),
        base,
        &schedule,
        200,
        u,
    )
    .unwrap();
    let norm = regress_colnorm(&run).unwrap();
    assert!(
        (norm - 2.0).abs() / 2.0 <= 0.10,
        "recovered column norm {norm:.3} vs 2 (outside 10%)"
    );

    // The normalized variance sequence N Var[Y_N] / (|J^1| |S_N^0|) stays
    // bounded across the schedule.
    let nv: Vec<f64> = run
        .entries
        .iter()
        .map(|e| e.n as f64 * e.variance / (2.0 * e.domain_measure))
        .collect();
    let hi = nv.iter().cloned().fold(f64::MIN, f64::max);
    let lo = nv.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        hi / lo <= 8.0,
        "normalized Y variance ratio {} ({nv:?})",
        hi / lo
    );
}

#[test]
fn z_mean_invariant_under_base_rotation() {
    // chi-isotropy in action: rotating the base sector of the family about
    // the origin leaves the Monte Carlo mean unchanged within noise.
    let model = CovarianceModel::gaussian();
    let (r0, u, n) = (2.0, 1.0, 12usize);
    let spec = annulus_spec(r0, n).unwrap();
    let sampler = LinearDeformedSampler::new(&spec, &model, Mat2::IDENTITY).unwrap();
    let reps = 150u64;
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &phi0 in &[0.0, 0.9, 2.2] {
        let family = SectorFamily::new(r0, phi0, n).unwrap();
        let vals: Vec<f64> = (0..reps)
            .map(|rep| {
                let f = sampler.sample(stats::derive_seed(SEED ^ 0x99, rep));
                spiral::z_estimator(&f, &family, u).unwrap()
            })
            .collect();
        means.push(stats::mean(&vals));
        ses.push(stats::std_err(&vals));
    }
    for k in 1..means.len() {
        let z = (means[k] - means[0]) / (ses[k].powi(2) + ses[0].powi(2)).sqrt();
        assert!(z.abs() <= 3.5, "base rotation {k}: z = {z:.2}");
    }
}
