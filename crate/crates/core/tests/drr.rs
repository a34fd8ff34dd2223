use biplanar_core::drr::{apply_noise, bone_mask, line_integrals, render_drr, ImageDomain, ProjectionImage};
use biplanar_core::geometry::{CameraGeometry, GeometryConfig, View};
use biplanar_core::phantom::{generate_scene, Bone, PhantomConfig, PhantomScene, Primitive};
use biplanar_core::BoneClass;

fn geom(view: View, px: usize) -> CameraGeometry {
    let cfg = GeometryConfig { detector_px: px, ..Default::default() };
    CameraGeometry::from_config(&cfg, view).unwrap()
}

fn single(prim: Primitive) -> PhantomScene {
    PhantomScene { bones: vec![Bone { class: BoneClass::Femur, primitives: vec![prim] }], ..PhantomScene::empty() }
}

#[test]
fn homogeneous_slab_follows_beer_lambert() {
    let scene = single(Primitive::Cuboid { center: [0.0; 3], half: [0.5; 3] });
    for view in [View::Ap, View::Rl] {
        let g = geom(view, 33);
        let img = render_drr(&scene, &g, 0.01).unwrap();
        let centre = img.at(16, 16);
        assert!((centre - (-0.5f64).exp()).abs() < 1e-3, "{view:?}: {centre}");
    }
}

#[test]
fn halving_the_step_changes_little() {
    let scene = generate_scene(3, &PhantomConfig::default()).unwrap();
    for view in [View::Ap, View::Rl] {
        let g = geom(view, 32);
        let a = render_drr(&scene, &g, 0.01).unwrap();
        let b = render_drr(&scene, &g, 0.005).unwrap();
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{view:?}: {worst}");
    }
}

#[test]
fn adding_material_never_brightens() {
    let full = generate_scene(4, &PhantomConfig::default()).unwrap();
    let mut partial = full.clone();
    partial.bones.retain(|b| b.class != BoneClass::Tibia && b.class != BoneClass::Patella);
    let mut bare = partial.clone();
    bare.bones.clear();
    for view in [View::Ap, View::Rl] {
        let g = geom(view, 32);
        let imgs: Vec<ProjectionImage> = [&bare, &partial, &full].iter().map(|s| render_drr(s, &g, 0.01).unwrap()).collect();
        for w in imgs.windows(2) {
            for (less, more) in w[0].data.iter().zip(&w[1].data) {
                assert!(more <= less);
            }
        }
    }
}

fn silhouette_centroid(mask: &[bool], width: usize) -> (f64, f64) {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            su += (i % width) as f64;
            sv += (i / width) as f64;
            n += 1.0;
        }
    }
    (su / n, sv / n)
}

#[test]
fn translation_along_x_moves_only_the_ap_silhouette() {
    let ball = |x: f64| single(Primitive::Ellipsoid { center: [x, 0.1, -0.2], radii: [0.15; 3] });
    let (ap, rl) = (geom(View::Ap, 64), geom(View::Rl, 64));
    let (a0, a1) = (bone_mask(&ball(0.0), &ap, 0.01).unwrap(), bone_mask(&ball(0.1), &ap, 0.01).unwrap());
    let (r0, r1) = (bone_mask(&ball(0.0), &rl, 0.01).unwrap(), bone_mask(&ball(0.1), &rl, 0.01).unwrap());
    let (ca0, ca1) = (silhouette_centroid(&a0, 64), silhouette_centroid(&a1, 64));
    let (cr0, cr1) = (silhouette_centroid(&r0, 64), silhouette_centroid(&r1, 64));
    assert!(ca1.0 - ca0.0 > 1.5, "AP shift {}", ca1.0 - ca0.0);
    assert!((cr1.0 - cr0.0).abs() < 0.5, "RL shift {}", cr1.0 - cr0.0);
}

#[test]
fn noiseless_limit() {
    let scene = generate_scene(5, &PhantomConfig::default()).unwrap();
    let img = render_drr(&scene, &geom(View::Ap, 32), 0.01).unwrap();
    let noisy = apply_noise(&img, 1e9, 0.0, 1).unwrap();
    let worst = img.data.iter().zip(&noisy.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3);
}

#[test]
fn poisson_variance() {
    let g = geom(View::Ap, 64);
    let img = ProjectionImage::new(vec![0.5; 64 * 64], g, ImageDomain::Intensity).unwrap();
    let noisy = apply_noise(&img, 1e4, 0.0, 11).unwrap();
    let n = noisy.data.len() as f64;
    let mean = noisy.data.iter().sum::<f64>() / n;
    let var = noisy.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expect = 0.5 / 1e4;
    assert!((var - expect).abs() / expect < 0.1, "{var} vs {expect}");
}

#[test]
fn noise_is_seeded_and_bounded() {
    let scene = generate_scene(6, &PhantomConfig::default()).unwrap();
    let img = render_drr(&scene, &geom(View::Rl, 32), 0.01).unwrap();
    let a = apply_noise(&img, 50.0, 0.05, 3).unwrap();
    let b = apply_noise(&img, 50.0, 0.05, 3).unwrap();
    let c = apply_noise(&img, 50.0, 0.05, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.data, c.data);
    assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn line_integrals_are_raw_domain() {
    let scene = single(Primitive::Cuboid { center: [0.0; 3], half: [0.5; 3] });
    let l = line_integrals(&scene, &geom(View::Ap, 33), 0.01).unwrap();
    assert_eq!(l.domain, ImageDomain::LineIntegral);
    assert!((l.at(16, 16) - 0.5).abs() < 1e-6);
}
