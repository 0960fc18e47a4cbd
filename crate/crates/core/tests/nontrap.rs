use qls_core::hamilton::{FlatMetric, Metric, Rotated};
use qls_core::model::{BuiltinNonlinearity, MetricField};
use qls_core::nontrap::*;
use qls_core::spectral::{Field, GridSpec};

fn bump_field(spec: GridSpec, amp: f64) -> MetricField {
    MetricField::conformal(spec, |x| 1.0 + amp * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp())
}

#[test]
fn exterior_cutoff_has_the_right_shape() {
    assert_eq!(exterior_cutoff(2.0, 1.9), 0.0);
    assert_eq!(exterior_cutoff(2.0, 4.0), 1.0);
    let mid: Vec<f64> = (0..=20).map(|i| exterior_cutoff(2.0, 2.0 + 0.1 * i as f64)).collect();
    assert!(mid.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn found_radius_is_the_smallest_admissible_one() {
    let spec = GridSpec::new(1, 512, 7).unwrap();
    let cfg = TrapConfig::for_dim(1);
    let g = bump_field(spec, 0.3);
    let r = find_r(&g, &cfg).unwrap();
    let h = spec.spacing();
    assert!((r / h - (r / h).round()).abs() < 1e-12, "R = {r} is not on the grid");
    assert!(exterior_norm(&g, r, cfg.s0) <= cfg.epsilon);
    assert!(exterior_norm(&g, r - h, cfg.s0) > cfg.epsilon, "R − h = {} is also admissible", r - h);
}

#[test]
fn radius_grows_with_amplitude() {
    let spec = GridSpec::new(1, 512, 7).unwrap();
    let cfg = TrapConfig::for_dim(1);
    let rs: Vec<f64> = [0.01, 0.1, 0.3, 1.0].iter().map(|&a| find_r(&bump_field(spec, a), &cfg).unwrap()).collect();
    assert!(rs.windows(2).all(|w| w[1] >= w[0]), "{rs:?}");
    assert!(rs[3] > rs[0]);
}

#[test]
fn radius_fails_when_the_box_is_too_small() {
    let spec = GridSpec::new(1, 128, 3).unwrap();
    let g = MetricField::conformal(spec, |x| 1.0 + 0.5 * (-x[0] * x[0] / 16.0).exp());
    assert!(find_r(&g, &TrapConfig::for_dim(1)).is_err());
}

#[test]
fn zero_data_sees_flat_space() {
    let spec = GridSpec::new(1, 256, 6).unwrap();
    let cfg = TrapConfig::for_dim(1);
    let (rep, g) = analyze(&Field::zeros(spec, 1), &BuiltinNonlinearity::conformal(1.0), &cfg).unwrap();
    assert_eq!(g, MetricField::identity(spec));
    assert_eq!((rep.m, rep.r), (0.0, cfg.r_min));
    assert!(!rep.trapped && (rep.l - 4.0 * rep.r).abs() < 1e-6, "L = {}", rep.l);
    assert_eq!(rep.margin, perturbation_margin(0.0, rep.l, &cfg));
}

#[test]
fn weak_bump_length_is_close_to_flat() {
    let cfg = TrapConfig::for_dim(2);
    let r = 6.0;
    let flat = compute_l(&FlatMetric { dim: 2 }, r, 0.0, &cfg).unwrap();
    let bump = compute_l(&bump_metric(2, 0.1, [0.5, -0.5], 2.0), r, 0.0, &cfg).unwrap();
    assert!(!bump.trapped);
    assert!((bump.l - flat.l).abs() <= 0.1 * flat.l, "{} vs {}", bump.l, flat.l);
}

#[test]
fn length_is_rotation_invariant() {
    let cfg = TrapConfig::for_dim(2);
    let r = 6.0;
    let inner = bump_metric(2, 0.5, [2.0, 0.0], 1.5);
    let base = compute_l(&inner, r, 0.0, &cfg).unwrap();
    for angle in [0.5, 2.0] {
        let rot = compute_l(&Rotated { inner: &inner, angle }, r, 0.0, &cfg).unwrap();
        assert!((rot.l - base.l).abs() <= 0.02 * base.l, "angle {angle}: {} vs {}", rot.l, base.l);
    }
}

#[test]
fn length_is_stable_under_seed_refinement() {
    let cfg = TrapConfig::for_dim(2);
    let fine =
        TrapConfig { boundary_points: 2 * cfg.boundary_points, directions: 2 * cfg.directions, interior_density: 2 * cfg.interior_density, ..cfg.clone() };
    let g = bump_metric(2, 0.5, [1.0, 0.5], 1.5);
    let a = compute_l(&g, 6.0, 0.0, &cfg).unwrap();
    let b = compute_l(&g, 6.0, 0.0, &fine).unwrap();
    assert!(b.rays > a.rays);
    assert!((a.l - b.l).abs() <= 0.05 * b.l, "{} vs {}", a.l, b.l);
}

#[test]
fn outgoing_rays_escape_outside_the_smallness_radius() {
    let cfg = TrapConfig::for_dim(2);
    let flat = check_exterior_escape(&FlatMetric { dim: 2 }, 6.0, &cfg).unwrap();
    assert!(flat.passed() && flat.min_radius >= 6.0 - 1e-9);
    let bump = check_exterior_escape(&bump_metric(2, 0.3, [0.0, 0.0], 1.0), 6.0, &cfg).unwrap();
    assert!(bump.passed(), "{bump:?}");
    // Rays bend away from large c: a strong ring just outside 2R reflects
    // outgoing rays back through the middle.
    let ring = check_exterior_escape(&ring_metric(2, 8.0, 9.0, 0.5), 4.0, &cfg).unwrap();
    assert!(!ring.passed(), "{ring:?}");
}

#[test]
fn tiny_perturbations_keep_length() {
    let cfg = TrapConfig::for_dim(2);
    let g = FlatMetric { dim: 2 };
    let rep = compute_l(&g, 4.0, 0.0, &cfg).unwrap();
    let unit = c2_norm(&bump_metric(2, 1.0, [1.0, 0.0], 2.0), 12.0, 96);
    let small = bump_metric(2, 0.5 * rep.margin / unit, [1.0, 0.0], 2.0);
    let v = check_stability(&g, &small, &rep, &cfg).unwrap();
    assert!(v.within_margin && v.holds == Some(true), "{v:?}");
    assert!((v.l_after - v.l_before).abs() <= 1e-6 * v.l_before);

    let big = bump_metric(2, 0.5, [1.0, 0.0], 2.0);
    let v = check_stability(&g, &big, &rep, &cfg).unwrap();
    assert!(!v.within_margin && v.holds.is_none());
}

#[test]
fn c2_norm_of_flat_deviation_is_zero() {
    let flat: &dyn Metric = &FlatMetric { dim: 2 };
    assert_eq!(c2_norm(flat, 10.0, 32), 0.0);
    // |A e^{−x²}|'' peaks at 2A, |·|' at A√2 e^{−1/2}, |·| at A.
    let a = 0.01;
    let n = c2_norm(&bump_metric(1, a, [0.0, 0.0], 1.0), 4.0, 800);
    let want = a * (1.0 + (2.0_f64).sqrt() * (-0.5_f64).exp() + 2.0);
    assert!((n - want).abs() <= 1e-3 * want, "{n} vs {want}");
}

#[test]
fn bad_configs_are_rejected() {
    let ok = TrapConfig::for_dim(2);
    assert!(ok.validate(2).is_ok());
    for bad in [
        TrapConfig { epsilon: 0.0, ..ok.clone() },
        TrapConfig { s0: 2.0, ..ok.clone() },
        TrapConfig { kappa: 5.0, ..ok.clone() },
        TrapConfig { directions: 0, ..ok.clone() },
    ] {
        assert!(bad.validate(2).is_err(), "{bad:?}");
    }
}
