use std::f64::consts::PI;

use qls_core::hamilton::*;
use qls_core::nontrap::{bump_metric, compute_l_with_rays, ring_metric, TrapConfig};

/// `c(x) = 1 + 0.4 exp(−|x − (1, 0.5)|²/4)` and its gradient, written out by hand.
fn conformal(x: [f64; 2]) -> (f64, [f64; 2]) {
    let d = [x[0] - 1.0, x[1] - 0.5];
    let e = 0.4 * (-(d[0] * d[0] + d[1] * d[1]) / 4.0).exp();
    (1.0 + e, [-d[0] / 2.0 * e, -d[1] / 2.0 * e])
}

/// Hamilton flow of `c|ξ|²` with fixed-step RK4, carrying `τ' = |ξ|` along.
fn hamilton_rk4(p: PhasePoint, t: f64, steps: usize) -> ([f64; 2], [f64; 2], f64) {
    let f = |y: [f64; 5]| {
        let (c, dc) = conformal([y[0], y[1]]);
        let s = y[2] * y[2] + y[3] * y[3];
        [2.0 * c * y[2], 2.0 * c * y[3], -dc[0] * s, -dc[1] * s, s.sqrt()]
    };
    let add = |a: [f64; 5], b: [f64; 5], h: f64| std::array::from_fn::<f64, 5, _>(|i| a[i] + h * b[i]);
    let mut y = [p.x[0], p.x[1], p.xi[0], p.xi[1], 0.0];
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(add(y, k1, h / 2.0));
        let k3 = f(add(y, k2, h / 2.0));
        let k4 = f(add(y, k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    (([y[0], y[1]]), [y[2], y[3]], y[4])
}

#[test]
fn cosphere_flow_is_reparametrized_hamilton_flow() {
    // a_ξ is homogeneous of degree one, so the cosphere flow runs at clock dτ = |ξ| dt.
    let g = FnConformal { dim: 2, f: conformal };
    for theta in [0.1, 1.3, 2.9, 4.4] {
        let p = PhasePoint::unit([-2.0, 0.3], theta);
        let (x, xi, tau) = hamilton_rk4(p, 1.5, 4000);
        let q = cosphere_flow(&g, &p, tau, 1e-12).unwrap();
        let n = xi[0].hypot(xi[1]);
        let gap = (q.x[0] - x[0]).hypot(q.x[1] - x[1]) + (q.xi[0] - xi[0] / n).hypot(q.xi[1] - xi[1] / n);
        assert!(gap < 1e-8, "θ = {theta}: {gap:e}");
    }
}

#[test]
fn hamilton_flow_matches_reference_integrator() {
    let g = FnConformal { dim: 2, f: conformal };
    let p = PhasePoint::new([0.5, -1.0], [0.6, 1.1]);
    let (x, xi, _) = hamilton_rk4(p, 1.0, 4000);
    let q = flow_step(&g, &p, 1.0, 1e-12).unwrap();
    let gap = (q.x[0] - x[0]).hypot(q.x[1] - x[1]) + (q.xi[0] - xi[0]).hypot(q.xi[1] - xi[1]);
    assert!(gap < 1e-8, "{gap:e}");
}

#[test]
fn cosphere_flow_stays_on_unit_sphere() {
    let g = bump_metric(2, 0.8, [0.0, 0.0], 1.5);
    let mut p = PhasePoint::unit([-3.0, 0.7], 0.2);
    for _ in 0..20 {
        p = cosphere_flow(&g, &p, 0.5, FLOW_TOL).unwrap();
        assert!((p.xi[0].hypot(p.xi[1]) - 1.0).abs() < 1e-8, "{:?}", p.xi);
    }
    assert!(cosphere_flow(&g, &PhasePoint::new([0.0, 0.0], [2.0, 0.0]), 1.0, FLOW_TOL).is_err());
}

#[test]
fn flat_chords_have_euclidean_length() {
    // Flat rays are lines: the chord of B_{2R} at impact parameter b has length 2√(4R² − b²).
    let g = FlatMetric { dim: 2 };
    let r = 5.0;
    let caps = RayCaps::for_radius(r, 25.0);
    for b in [0.0, 3.0, 7.5, 9.9] {
        let ray = trace_ray(&g, &PhasePoint::unit([-1.0, b], 0.0), &caps).unwrap();
        let want = 2.0 * (4.0 * r * r - b * b).sqrt();
        assert_eq!(ray.status, RayStatus::Escaped);
        assert!((ray.length_in_ball - want).abs() < 1e-6, "b = {b}: {} vs {want}", ray.length_in_ball);
    }
}

#[test]
fn flat_outgoing_ray_never_reenters() {
    let g = FlatMetric { dim: 2 };
    let r = 4.0;
    let caps = RayCaps { record: true, ..RayCaps::for_radius(r, 25.0) };
    for phi in [0.0, 1.0, 2.5] {
        let x = [2.0 * r * f64::cos(phi), 2.0 * r * f64::sin(phi)];
        let ray = trace_forward(&g, &PhasePoint::unit(x, phi + 0.3), &caps).unwrap();
        assert_eq!(ray.status, RayStatus::Escaped);
        assert!(ray.length_in_ball < 1e-9);
        let radii: Vec<f64> = ray.samples.iter().map(|s| s.x[0].hypot(s.x[1])).collect();
        assert!(radii.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn one_dimensional_flat_ray_crosses_the_ball_once() {
    let g = FlatMetric { dim: 1 };
    let r = 3.0;
    let ray = trace_ray(&g, &PhasePoint::new([0.5, 0.0], [1.0, 0.0]), &RayCaps { record: true, ..RayCaps::for_radius(r, 25.0) }).unwrap();
    assert_eq!(ray.status, RayStatus::Escaped);
    assert!((ray.length_in_ball - 4.0 * r).abs() < 1e-6, "{}", ray.length_in_ball);
    // Speed 2 in flow time.
    let last = ray.samples.last().unwrap();
    assert!((last.x[0] - 0.5 - 2.0 * last.t).abs() < 1e-9);
}

#[test]
fn ring_traps_its_worst_ray() {
    let cfg = TrapConfig::for_dim(2);
    let r = 4.0;
    let g = ring_metric(2, 8.0, 4.0, 1.0);
    let (rep, rays) = compute_l_with_rays(&g, r, 0.0, &cfg).unwrap();
    assert!(rep.trapped && rep.capped > 0);
    assert_eq!(rep.l, rep.length_cap);
    for ray in rays.iter().filter(|r| r.status == RayStatus::Capped) {
        assert!(ray.length >= cfg.caps(r).length_cap);
    }
    let again = trace_ray(&g, &rep.worst_ray, &RayCaps { record: true, ..cfg.caps(r) }).unwrap();
    assert_eq!(again.status, RayStatus::Capped);
    let far = again.samples.iter().map(|s| s.x[0].hypot(s.x[1])).fold(0.0, f64::max);
    assert!(far < 2.5 * r, "{far}");
}

#[test]
fn flow_deviation_is_linear_in_perturbation_size() {
    let base = bump_metric(2, 0.5, [0.0, 0.0], 2.0);
    let p = PhasePoint::unit([-4.0, 0.8], 0.05);
    let sizes = [1e-5, 2e-5, 4e-5, 8e-5, 1.6e-4];
    let mut logs = Vec::new();
    for eps in sizes {
        let delta = bump_metric(2, eps, [1.0, 1.0], 1.5);
        let pert = Perturbed { base: &base, delta: &delta };
        let d = compare_flows(&base, &pert, &p, 6.0, 60, 1e-12).unwrap();
        assert_eq!(d.times.len(), 61);
        assert!(d.running_max.windows(2).all(|w| w[1] >= w[0]));
        logs.push(d.max().ln());
    }
    let xs: Vec<f64> = sizes.iter().map(|e| e.ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &logs);
    assert!((slope - 1.0).abs() < 0.05 && r2 >= 0.95, "slope {slope}, R² {r2}");
    let same = compare_flows(&base, &base, &p, 6.0, 10, 1e-12).unwrap();
    assert_eq!(same.max(), 0.0);
}

#[test]
fn rotation_commutes_with_the_flow() {
    let inner = bump_metric(2, 0.6, [1.0, 0.0], 1.5);
    let angle = 0.7;
    let rot = Rotated { inner: &inner, angle };
    let turn = |v: [f64; 2]| [angle.cos() * v[0] - angle.sin() * v[1], angle.sin() * v[0] + angle.cos() * v[1]];
    let p = PhasePoint::unit([-3.0, 0.4], 0.15);
    let a = cosphere_flow(&inner, &p, 5.0, 1e-12).unwrap();
    let b = cosphere_flow(&rot, &PhasePoint::new(turn(p.x), turn(p.xi)), 5.0, 1e-12).unwrap();
    let (ax, axi) = (turn(a.x), turn(a.xi));
    let gap = (ax[0] - b.x[0]).hypot(ax[1] - b.x[1]) + (axi[0] - b.xi[0]).hypot(axi[1] - b.xi[1]);
    assert!(gap < 1e-8, "{gap:e}");
}

#[test]
fn linear_fit_recovers_a_line() {
    let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - PI).collect();
    let (slope, icpt, r2) = linear_fit(&xs, &ys);
    assert!((slope - 3.0).abs() < 1e-12 && (icpt + PI).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
}
