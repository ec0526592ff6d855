use nlos_autocal::init::{backproject, default_wavelength, initial_albedo, InitOptions};
use nlos_autocal::sim::{make_phantom, synthesize, GridSpec, PhantomKind, Setup};
use nlos_autocal::types::{total_path_length, CalibrationState, TransientSet, Vec3, VolumeGrid};

fn small_desk() -> Setup {
    let mut s = Setup::desk();
    s.grid = GridSpec::square(4, 1.28);
    s.volume = VolumeGrid::cube(Vec3::new(0.0, 0.0, 1.0), 0.08, 8);
    s
}

#[test]
fn impulse_backprojects_onto_its_shell() {
    let setup = small_desk();
    let l = Vec3::new(0.1, -0.2, 0.0);
    let s = setup.detection_positions[0];
    let cal = CalibrationState::new(vec![l], vec![s]);
    let nk = setup.scene.bin_count;
    let n = setup.volume.voxel_count();
    for probe in [0, n / 2, n - 1] {
        let o = setup.volume.voxel_center(probe).unwrap();
        let k0 = setup.scene.nearest_bin(total_path_length(&l, &s, &o, &setup.scene).unwrap()).unwrap();
        let mut m = TransientSet::zeros(1, 1, nk);
        m.data[k0] = 1.0;
        let bp = backproject(&cal, &setup.scene, &m, &setup.volume).unwrap();
        let mut hits = 0;
        for (i, &a) in bp.albedo.iter().enumerate() {
            let o = setup.volume.voxel_center(i).unwrap();
            let d = total_path_length(&l, &s, &o, &setup.scene).unwrap();
            let k = ((d - setup.scene.first_bin_path()) / setup.scene.bin_path_width()).round();
            if k == k0 as f64 {
                let weight = (l - o).norm_squared() * (s - o).norm_squared();
                assert!((a - weight).abs() <= 1e-12 * weight, "voxel {i}: {a} vs {weight}");
                hits += 1;
            } else {
                assert_eq!(a, 0.0, "voxel {i} at bin {k} lit by impulse at {k0}");
            }
        }
        assert!(hits > 0);
    }
}

#[test]
fn backprojection_is_linear() {
    let setup = small_desk();
    let cal = setup.calibration();
    let a = synthesize(&cal, &make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap(), &setup.scene).unwrap();
    let b = synthesize(&cal, &make_phantom(PhantomKind::SingleVoxel, &setup.volume, setup.phantom_depth).unwrap(), &setup.scene).unwrap();
    let mut mix = a.clone();
    for (m, v) in mix.data.iter_mut().zip(&b.data) {
        *m = 2.0 * *m - 3.0 * v;
    }
    let pa = backproject(&cal, &setup.scene, &a, &setup.volume).unwrap();
    let pb = backproject(&cal, &setup.scene, &b, &setup.volume).unwrap();
    let pm = backproject(&cal, &setup.scene, &mix, &setup.volume).unwrap();
    let scale = pa.albedo.iter().chain(&pb.albedo).fold(0.0f64, |m, v| m.max(v.abs()));
    for ((x, y), z) in pa.albedo.iter().zip(&pb.albedo).zip(&pm.albedo) {
        assert!((2.0 * x - 3.0 * y - z).abs() <= 1e-12 * scale);
    }
}

#[test]
fn shifting_everything_shifts_the_volume() {
    let setup = small_desk();
    let cal = setup.calibration();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&cal, &vol, &setup.scene).unwrap();
    let base = backproject(&cal, &setup.scene, &measured, &setup.volume).unwrap();

    // translating wall points, sensors and voxels together leaves every path unchanged
    let t = Vec3::new(0.25, -0.5, 0.0);
    let mut scene = setup.scene.clone();
    scene.source_pos += t;
    scene.detector_pos += t;
    let moved = CalibrationState::new(
        cal.scan_positions.iter().map(|p| p + t).collect(),
        cal.detection_positions.iter().map(|p| p + t).collect(),
    );
    let mut grid = setup.volume.clone();
    grid.origin += t;
    let shifted = backproject(&moved, &scene, &measured, &grid).unwrap();
    let scale = base.albedo.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in base.albedo.iter().zip(&shifted.albedo) {
        assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
    }
}

#[test]
fn filtering_tightens_single_voxel_support() {
    let setup = small_desk();
    let cal = setup.calibration();
    let vol = make_phantom(PhantomKind::SingleVoxel, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&cal, &vol, &setup.scene).unwrap();
    let opts = |filter| InitOptions { filter, fit_scale: false };
    let plain = initial_albedo(&cal, &setup.scene, &measured, &setup.volume, opts(None)).unwrap();
    let wl = default_wavelength(&setup.scene);
    let filtered = initial_albedo(&cal, &setup.scene, &measured, &setup.volume, opts(Some((wl, 1.0)))).unwrap();
    let support = |v: &[f64]| {
        let peak = v.iter().cloned().fold(0.0, f64::max);
        v.iter().filter(|&&a| a >= 0.5 * peak).count()
    };
    let (p, f) = (support(&plain.albedo), support(&filtered.albedo));
    assert!(f <= p, "filtered support {f} wider than plain {p}");
}

#[test]
fn fitted_scale_minimizes_residual() {
    let setup = small_desk();
    let cal = setup.calibration();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&cal, &vol, &setup.scene).unwrap();
    let fitted = initial_albedo(&cal, &setup.scene, &measured, &setup.volume, InitOptions::default()).unwrap();
    let residual = |scale: f64| {
        let mut v = fitted.clone();
        v.albedo.iter_mut().for_each(|a| *a *= scale);
        let subset: Vec<usize> = (0..cal.scan_count()).collect();
        nlos_autocal::forward::loss(&cal, &v, &setup.scene, &measured, &subset).unwrap()
    };
    let best = residual(1.0);
    assert!(best <= residual(1.01) && best <= residual(0.99));
}
