//! Empirical probe of the sector-estimator statistics at the acceptance
//! scale: recovered Jacobian determinants, their replication spread, and
//! the normalized variance sequence.
//!
//! ```text
//! cargo run --release --example spiral_probe [reps] [seed]
//! ```

use warpfield::covariance::CovarianceModel;
use warpfield::field::{simulate_linear_deformed, GridSpec};
use warpfield::geom::{Mat2, Vec2};
use warpfield::spiral::{regress_detjac, run_z_schedule};
use warpfield::stats;

fn main() {
    let reps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42);
    let model = CovarianceModel::gaussian();
    let schedule = [8usize, 12, 16, 24, 32];
    let r0 = 2.0f64;
    let phi0 = 0.0;
    let u = 1.0;
    let spacing = 1.0 / 256.0;
    let half = r0 + 1.0 / 8.0 + 4.0 * spacing;
    let n = (2.0 * half / spacing).round() as usize + 1;
    let spec = GridSpec::new(Vec2::new(-half, -half), spacing, (n, n)).unwrap();
    println!("grid {n}x{n}, spacing {spacing}, reps {reps}, seed {seed}");

    for (name, lam, det_true) in [("identity", 1.0, 1.0), ("f(r)=2r", 2.0, 4.0)] {
        let t0 = std::time::Instant::now();
        let run = run_z_schedule(
            |_n, rep| {
                simulate_linear_deformed(
                    &spec,
                    &model,
                    Mat2::diagonal(lam, lam),
                    stats::derive_seed(seed, 10_000 + rep),
                )
            },
            r0,
            phi0,
            &schedule,
            reps,
            u,
        )
        .unwrap();
        let est = regress_detjac(&run).unwrap();
        println!(
            "{name}: det = {:.4} (true {det_true}), rel err {:+.3}%  [{:.1?}]",
            est.det,
            100.0 * (est.det - det_true) / det_true,
            t0.elapsed()
        );
        for (e, nv) in run.entries.iter().zip(est.normalized_var.iter()) {
            println!(
                "   N = {:>2}: mean = {:.5}, sd = {:.5}, area = {:.4}, N var/(det area) = {:.4}",
                e.n,
                e.mean,
                e.variance.sqrt(),
                e.domain_measure,
                nv
            );
        }
        let nv_max = est.normalized_var.iter().cloned().fold(f64::MIN, f64::max);
        let nv_min = est.normalized_var.iter().cloned().fold(f64::MAX, f64::min);
        println!("   normalized-variance max/min = {:.2}", nv_max / nv_min);
    }
}
