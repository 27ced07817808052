//! Monte Carlo mean-EC tables agree with their analytic counterparts
//! within the reported uncertainties, for both the stationary-composition
//! (linear) and interpolation (general) simulation paths.

use warpfield::covariance::{expected_phi, Level};
use warpfield::deform::{self, Deformation, Rect, ScalarMap, Segment, SpiralSpec};
use warpfield::geom::{Mat2, Vec2};
use warpfield::identify::{identify_linear, monte_carlo_table, TableDomain};

#[test]
fn linear_table_matches_analytic_and_identifies() {
    let model = warpfield::covariance::CovarianceModel::gaussian();
    let theta = Deformation::linear(Mat2::new(2.0, 1.0, 0.0, 1.0)).unwrap();
    let u = Level(1.0);
    let sigma = [-1.6, -0.8, 0.0, 0.8, 1.6];
    let table = monte_carlo_table(&theta, &model, u, &sigma, 0.2, 300, 2024).unwrap();

    // Entries match the closed forms within 4 reported standard errors.
    for (s, t) in [(1.6, 0.0), (0.8, -0.8)] {
        let e = table.get(&TableDomain::hseg(s, t)).unwrap();
        let seg = Segment::new(Vec2::new(0.0, t), Vec2::new(s, t)).unwrap();
        let want = expected_phi(1, deform::image_length(&theta, &seg).unwrap(), u).unwrap();
        assert!(
            (e.mean_phi - want).abs() <= 4.0 * e.std_err + 0.02 * want,
            "hseg({s},{t}): {} vs {want} (se {})",
            e.mean_phi,
            e.std_err
        );
    }
    let e = table.get(&TableDomain::rect(1.6, 1.6)).unwrap();
    let want = expected_phi(
        2,
        deform::image_area(&theta, &Rect::new(1.6, 1.6).unwrap()).unwrap(),
        u,
    )
    .unwrap();
    assert!(
        (e.mean_phi - want).abs() <= 4.0 * e.std_err + 0.02 * want,
        "rect: {} vs {want} (se {})",
        e.mean_phi,
        e.std_err
    );

    // The linear identification on the noisy table lands near (2, sqrt 2, 2).
    let id = identify_linear(&table, 1.6, 1.6).unwrap();
    assert!((id.a - 2.0).abs() < 0.3, "a = {}", id.a);
    assert!((id.b - 2.0f64.sqrt()).abs() < 0.3, "b = {}", id.b);
    assert!((id.c - 2.0).abs() < 0.5, "c = {}", id.c);
}

#[test]
fn general_path_spiral_table_matches_analytic() {
    let model = warpfield::covariance::CovarianceModel::gaussian();
    let f = ScalarMap::new(|r| r * (1.0 + 0.1 * r * r), |r| 1.0 + 0.3 * r * r, "r(1+0.1r^2)");
    let g = ScalarMap::new(|r| 0.05 * r * r, |r| 0.1 * r, "0.05r^2");
    let theta = Deformation::spiral(SpiralSpec::new(f, g).unwrap(), 2.0).unwrap();
    let u = Level(1.0);
    let sigma = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let table = monte_carlo_table(&theta, &model, u, &sigma, 0.25, 150, 77).unwrap();
    let e = table.get(&TableDomain::rect(1.0, 1.0)).unwrap();
    let want =
        expected_phi(2, deform::image_area(&theta, &Rect::new(1.0, 1.0).unwrap()).unwrap(), u)
            .unwrap();
    assert!(
        (e.mean_phi - want).abs() <= 4.0 * e.std_err + 0.05 * want,
        "rect mean {} vs {want} (se {})",
        e.mean_phi,
        e.std_err
    );

    // Partition misaligned with the lattice is refused.
    assert!(monte_carlo_table(&theta, &model, u, &[-0.3, 0.0, 0.3], 0.2, 40, 1).is_err());
}
