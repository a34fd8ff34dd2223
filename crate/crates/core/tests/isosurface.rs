use biplanar_core::isosurface::{evaluate_grid, extract_bones, grid_node, marching_cubes, reconstruct_with, ScalarGrid};
use biplanar_core::{OccupancyVector, Point3, Result};
use proptest::prelude::*;

/// Smooth field that crosses 0.5 on the sphere of radius `r`.
fn ball_field(res: usize, r: f64) -> ScalarGrid {
    let mut v = Vec::with_capacity(res * res * res);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let p = grid_node(res, i, j, k);
                v.push(1.0 / (1.0 + (8.0 * (p.coords.norm() - r)).exp()));
            }
        }
    }
    ScalarGrid::unit_cube(res, v).unwrap()
}

fn mean_radial_error(res: usize) -> f64 {
    let m = marching_cubes(&ball_field(res, 0.5), 0.5).unwrap();
    m.vertices.iter().map(|v| (v.coords.norm() - 0.5).abs()).sum::<f64>() / m.vertices.len() as f64
}

#[test]
fn ball_surface_is_accurate_and_spherical() {
    let m = marching_cubes(&ball_field(64, 0.5), 0.5).unwrap();
    assert!(mean_radial_error(64) <= 0.5 * 2.0 / 63.0);
    assert!(m.is_watertight());
    assert!(m.is_consistently_oriented());
    assert_eq!(m.euler_characteristic(), 2);
    let v = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
    assert!((m.volume() - v).abs() / v < 0.01);
    for t in 0..m.triangles.len() {
        assert!(m.triangle_area(t) > 1e-12);
    }
}

#[test]
fn finer_grids_are_no_worse() {
    assert!(mean_radial_error(128) <= mean_radial_error(32));
}

#[test]
fn vertices_invariant_under_iso_preserving_rescale() {
    let g = ball_field(24, 0.6);
    let a = marching_cubes(&g, 0.5).unwrap();
    let scaled = ScalarGrid { values: g.values.iter().map(|v| 0.5 + 0.3 * (v - 0.5)).collect(), ..g.clone() };
    let b = marching_cubes(&scaled, 0.5).unwrap();
    assert_eq!(a.triangles, b.triangles);
    for (p, q) in a.vertices.iter().zip(&b.vertices) {
        assert!((p - q).norm() < 1e-12);
    }
}

#[test]
fn evaluated_ball_has_expected_interior() {
    let r = 0.5;
    let res = 64;
    let mut ball = |pts: &[Point3]| -> Result<Vec<OccupancyVector>> {
        Ok(pts.iter().map(|p| OccupancyVector::one_hot(if p.coords.norm() <= r { 2 } else { 0 })).collect())
    };
    let field = evaluate_grid(&mut ball, res, 5000).unwrap();
    let h = 2.0 / (res - 1) as f64;
    let inside = field.probs.iter().filter(|p| p.argmax() == 2).count() as f64 * h.powi(3);
    let v = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    assert!((inside - v).abs() / v < 0.02, "{inside} vs {v}");

    let mut smooth = |pts: &[Point3]| -> Result<Vec<OccupancyVector>> {
        Ok(pts.iter().map(|p| OccupancyVector::from_logits(&[p.x, p.y * 2.0, p.z.sin(), 0.0, p.coords.norm()])).collect())
    };
    let a = evaluate_grid(&mut smooth, 17, 1).unwrap();
    let b = evaluate_grid(&mut smooth, 17, 333).unwrap();
    let c = evaluate_grid(&mut smooth, 17, 17 * 17 * 17).unwrap();
    assert!(a == b && b == c);
}

#[test]
fn constant_predictor_gives_constant_grid_and_empty_meshes() {
    let mut bg = |pts: &[Point3]| -> Result<Vec<OccupancyVector>> { Ok(vec![OccupancyVector::one_hot(0); pts.len()]) };
    let rec = reconstruct_with(&mut bg, 16, 100, 0.5).unwrap();
    assert_eq!(rec.meshes.len(), 4);
    assert!(rec.meshes.iter().all(|(_, m)| m.is_empty()));
    let mut classes: Vec<_> = rec.meshes.iter().map(|(c, _)| *c).collect();
    classes.dedup();
    assert_eq!(classes.len(), 4);
    let field = evaluate_grid(&mut bg, 8, 3).unwrap();
    assert!(field.probs.iter().all(|p| *p == OccupancyVector::one_hot(0)));
    assert!(extract_bones(&field, 0.5).unwrap().iter().all(|(_, m)| m.is_empty()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Arbitrary interiors (padded by an outside border) always give closed,
    /// consistently oriented surfaces, ambiguous configurations included.
    #[test]
    fn random_fields_are_watertight(vals in proptest::collection::vec(0.0f64..1.0, 6 * 6 * 6), iso in 0.2f64..0.8) {
        let n = 8;
        let mut v = vec![0.0; n * n * n];
        for k in 0..6 {
            for j in 0..6 {
                for i in 0..6 {
                    v[((k + 1) * n + j + 1) * n + i + 1] = vals[(k * 6 + j) * 6 + i];
                }
            }
        }
        let g = ScalarGrid::new([n; 3], Point3::origin(), [1.0; 3], v).unwrap();
        let m = marching_cubes(&g, iso).unwrap();
        prop_assume!(!m.is_empty());
        prop_assert!(m.is_watertight());
        prop_assert!(m.is_consistently_oriented());
        prop_assert!(m.volume() > 0.0);
        prop_assert!(m.indices_valid());
    }
}

#[test]
fn full_inference_contract() {
    use biplanar_core::drr::{simulate_view, DrrConfig};
    use biplanar_core::geometry::{CameraGeometry, GeometryConfig, View};
    use biplanar_core::isosurface::reconstruct_all;
    use biplanar_core::models::{EncoderConfig, SegNet, SegNetConfig, StudentConfig, StudentNet};
    use biplanar_core::phantom::generate_scene;
    use biplanar_core::PhantomConfig;

    let scene = generate_scene(2, &PhantomConfig::default()).unwrap();
    let gcfg = GeometryConfig { detector_px: 16, ..Default::default() };
    let views: Vec<_> = [View::Ap, View::Rl]
        .iter()
        .map(|&v| simulate_view(&scene, &CameraGeometry::from_config(&gcfg, v).unwrap(), &DrrConfig::default(), 1).unwrap())
        .collect();
    let enc = EncoderConfig { base_width: 2, levels: 2 };
    let student = StudentNet::new(StudentConfig { image_px: 16, encoder: enc }, 1).unwrap();
    let seg = SegNet::new(SegNetConfig { encoder: enc }, 1).unwrap();
    let rec = reconstruct_all(&student, &seg, &views, 0.5, 0.5, 12, 500, 0.5).unwrap();
    assert!(rec.meshes.len() <= 4);
    let mut ids: Vec<usize> = rec.meshes.iter().map(|(c, _)| c.index()).collect();
    ids.dedup();
    assert_eq!(ids.len(), rec.meshes.len());
    assert!(rec.meshes.iter().all(|(c, m)| m.class == Some(*c) && m.indices_valid()));
    assert!(rec.timings.total() >= 0.0);

    let err = reconstruct_all(&student, &seg, &views[..1], 0.5, 0.5, 12, 500, 0.5).unwrap_err();
    assert!(err.to_string().contains("encode stage"), "{err}");
}
