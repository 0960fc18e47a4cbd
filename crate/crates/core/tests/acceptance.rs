//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p qls-core --test acceptance`. Each criterion has a
//! wall-clock budget; exceeding it counts as a failure.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use qls_core::hamilton::{trace_ray, FlatMetric, Metric, PhasePoint, RayCaps, RayStatus};
use qls_core::model::{CoefficientSet, MetricField, ParadiffOperator};
use qls_core::multiplier::{phase_samples, transport_escape_symbol, verify_commutator, CommutatorCheck, PhaseSymbol, ShiftedIncoming, TransportConfig};
use qls_core::nontrap::{bump_metric, c2_norm, check_stability, compute_l, ring_metric, TrapConfig};
use qls_core::sample::{gaussian, random_field};
use qls_core::solver::{continuous_dependence, direct_reference, envelope_trace, iterate, midpoint_step, Solution};
use qls_core::spaces::{l1_hs_norm, lp_hs_norm, make_envelope, CubeSum};
use qls_core::spectral::{cube_partition, dyadic_pieces, from_frequency, to_frequency, Field, GridSpec};
use qls_core::C64;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lp_partition() -> Outcome {
    let mut worst: f64 = 0.0;
    for (dim, n) in [(1, 256), (2, 128)] {
        let spec = GridSpec::new(dim, n, 5).unwrap();
        for f in random_fields(&spec, 100, 0.5, 11 + dim as u64) {
            let sum = dyadic_pieces(&f).iter().fold(Field::zeros(spec, 1), |acc, p| acc.add(p));
            worst = worst.max(sum.sub(&f).sup_norm());
        }
    }
    check(worst <= 1e-10, format!("max |Σ S_k f − f| = {worst:.2e}"))
}

fn cube_partition_sum() -> Outcome {
    let mut worst: f64 = 0.0;
    for (dim, n) in [(1, 256), (2, 64)] {
        let spec = GridSpec::new(dim, n, 6).unwrap();
        for j in 0..=spec.box_exp + 1 {
            let mut total = vec![0.0; spec.len()];
            for (_, w) in cube_partition(&spec, j) {
                total.iter_mut().zip(&w).for_each(|(t, v)| *t += v);
            }
            worst = worst.max(total.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max));
        }
    }
    check(worst <= 1e-12, format!("max |Σ χ_Q − 1| = {worst:.2e}"))
}

fn norm_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut fields = Vec::new();
    fields.extend(random_fields(&GridSpec::new(1, 128, 5).unwrap(), 30, 1.0, 21));
    fields.extend(random_fields(&GridSpec::new(2, 32, 4).unwrap(), 20, 1.0, 22));
    for (i, f) in fields.iter().enumerate() {
        let s = 0.5 + 0.25 * (i % 5) as f64;
        let fast = l1_hs_norm(f, s).value;
        let slow = brute_l1_hs(f, s);
        worst = worst.max((fast - slow).abs() / slow);
    }
    check(worst <= 1e-9, format!("{} fields, max relative gap {worst:.2e}", fields.len()))
}

fn envelope_admissible() -> Outcome {
    let spec = GridSpec::new(1, 256, 5).unwrap();
    let mut failures = 0;
    let mut r = rng(31);
    for i in 0..100 {
        let f = random_field(&spec, 1, 0.5 + (i % 4) as f64, &mut r);
        let rep = lp_hs_norm(&f, 1.5, CubeSum::One);
        let a: Vec<f64> = rep.per_scale.iter().map(|&(k, v)| 2.0_f64.powf(1.5 * k as f64) * v).collect();
        let (delta, sigma) = [(0.25, 3.0), (0.5, 1.0), (0.1, 2.0), (1.0, 4.0)][i % 4];
        let env = make_envelope(&a, delta, sigma).unwrap();
        if !env.check(&a).all() {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} of 100 envelopes fail a condition"))
}

fn flat_geometry() -> Outcome {
    let g = FlatMetric { dim: 2 };
    let r = 8.0;
    let caps = RayCaps { record: true, ..RayCaps::for_radius(r, 25.0) };
    let mut dev: f64 = 0.0;
    for k in 0..16 {
        let th = 2.0 * PI * k as f64 / 16.0;
        let x0 = [3.0 * (1.3 * th).cos(), 2.0 * th.sin()];
        let ray = trace_ray(&g, &PhasePoint::unit(x0, th), &caps).map_err(|e| e.to_string())?;
        if ray.status != RayStatus::Escaped {
            return Err(format!("flat ray at angle {th} did not escape"));
        }
        for s in &ray.samples {
            let d = [s.x[0] - x0[0], s.x[1] - x0[1]];
            // Distance from the line through x0 with direction (cos θ, sin θ).
            dev = dev.max((d[0] * th.sin() - d[1] * th.cos()).abs());
        }
    }
    let cfg = TrapConfig::for_dim(2);
    let rep = compute_l(&g, r, 0.0, &cfg).map_err(|e| e.to_string())?;
    let rel = (rep.l - 4.0 * r).abs() / (4.0 * r);
    check(dev <= 1e-8 && rel <= 0.01 && !rep.trapped, format!("max line deviation {dev:.2e}, L = {:.4} (4R = {})", rep.l, 4.0 * r))
}

fn trapping_detection() -> Outcome {
    let cfg = TrapConfig::for_dim(2);
    let r = 8.0;
    let ring = compute_l(&ring_metric(2, 8.0, 4.0, 1.0), r, 0.0, &cfg).map_err(|e| e.to_string())?;
    let bump = bump_metric(2, 0.5, [0.0, 0.0], 1.0);
    let coarse = compute_l(&bump, r, 0.0, &cfg).map_err(|e| e.to_string())?;
    let dense_cfg = TrapConfig { max_step: cfg.max_step / 10.0, tol: cfg.tol / 10.0, ..cfg.clone() };
    let dense = compute_l(&bump, r, 0.0, &dense_cfg).map_err(|e| e.to_string())?;
    let rel = (coarse.l - dense.l).abs() / dense.l;
    check(
        ring.trapped && !coarse.trapped && !dense.trapped && rel <= 0.1,
        format!("ring trapped = {} ({} capped); bump L = {:.4}, dense L = {:.4}, gap {rel:.2e}", ring.trapped, ring.capped, coarse.l, dense.l),
    )
}

/// `1 + a·bump` scaled so its C² size equals `target`.
fn sized_bump(target: f64) -> impl Metric {
    let unit = c2_norm(&bump_metric(2, 1.0, [2.0, -1.0], 3.0), 24.0, 96);
    bump_metric(2, target / unit, [2.0, -1.0], 3.0)
}

fn perturbation_stability() -> Outcome {
    let cfg = TrapConfig::for_dim(2);
    let r = 8.0;
    let mut lines = Vec::new();
    let mut ok = true;
    let ring = ring_metric(2, 8.0, 4.0, 1.0);
    let bump = bump_metric(2, 0.5, [0.0, 0.0], 1.0);
    let fixtures: [(&str, &dyn Metric); 2] = [("ring", &ring), ("bump", &bump)];
    for (name, g) in fixtures {
        let rep = compute_l(g, r, 0.0, &cfg).map_err(|e| e.to_string())?;
        let dg = sized_bump(rep.margin);
        let v = check_stability(g, &dg, &rep, &cfg).map_err(|e| e.to_string())?;
        let change = (v.l_after - v.l_before).abs() / v.l_before;
        ok &= change <= 0.05 && v.trapped_after == v.trapped_before;
        lines.push(format!("{name}: margin {:.2e}, |δg|_C2 {:.2e}, ΔL/L {change:.2e}, trapped {}→{}", v.margin, v.delta_c2, v.trapped_before, v.trapped_after));
    }
    check(ok, lines.join("; "))
}

/// `∫_0^∞ e^{cm s} χ(x + 2sξ, ξ) ds` for the flat flow, by quadrature.
fn flat_q_oracle(chi: &ShiftedIncoming, r: f64, cm: f64, p: &PhasePoint) -> f64 {
    let xi = [p.xi[0] / p.xi[0].hypot(p.xi[1]), p.xi[1] / p.xi[0].hypot(p.xi[1])];
    // Past this time `x − 8Rξ` points along ξ, so χ stays zero.
    let end = 0.5 * (8.0 * r - (p.x[0] * xi[0] + p.x[1] * xi[1])).max(0.0);
    if end == 0.0 {
        return 0.0;
    }
    let f = |s: f64| (cm * s).exp() * chi.eval([p.x[0] + 2.0 * s * xi[0], p.x[1] + 2.0 * s * xi[1]], xi).unwrap();
    gauss_legendre(f, 0.0, end, 4000)
}

fn transport_symbol() -> Outcome {
    let r = 8.0;
    let cm = 0.02;
    let g = FlatMetric { dim: 2 };
    let chi = ShiftedIncoming::chi(2, r);
    let q = transport_escape_symbol(&g, &chi, 4.0 * r, TransportConfig::new(r, cm));
    let samples = phase_samples(2, 1000, 10.0 * r, 41);
    let mut worst: f64 = 0.0;
    let mut largest: f64 = 0.0;
    for p in &samples {
        let v = q.eval(p.x, p.xi).map_err(|e| e.to_string())?;
        let o = flat_q_oracle(&chi, r, cm, p);
        worst = worst.max((v - o).abs());
        largest = largest.max(o);
    }
    let rep = verify_commutator(&q, &g, &samples, &CommutatorCheck::new(r, cm)).map_err(|e| e.to_string())?;
    check(worst <= 1e-6 && rep.min_margin >= -1e-8, format!("max |q − oracle| = {worst:.2e} (max q {largest:.1}), commutator margin {:.2e}", rep.min_margin))
}

fn free_error(spec: &GridSpec, w0: &Field, t: f64, steps: usize) -> Result<f64, String> {
    let op = ParadiffOperator::new(&CoefficientSet::flat(*spec, 1));
    let zero = Field::zeros(*spec, 1);
    let dt = t / steps as f64;
    let mut w = w0.clone();
    for _ in 0..steps {
        w = midpoint_step(&op, &w, &zero, dt, 1e-13, 500).map_err(|e| e.to_string())?.0;
    }
    let mut hat = to_frequency(w0);
    for (i, z) in hat.comp_mut(0).iter_mut().enumerate() {
        let k = spec.frequency_norm(i);
        *z *= C64::from_polar(1.0, -k * k * t);
    }
    Ok(w.sub(&from_frequency(&hat)).l2_norm() / t)
}

fn linear_order() -> Outcome {
    let spec = GridSpec::new(1, 256, 5).unwrap();
    let w0 = gaussian(&spec, 1.0, [0.0, 0.0], 1.0, [2.0, 0.0]);
    let errs: Vec<f64> = [25, 50, 100].iter().map(|&n| free_error(&spec, &w0, 0.1, n)).collect::<Result<_, _>>()?;
    let falls = [errs[0] / errs[1], errs[1] / errs[2]];

    // Variable metric, first-order terms switched off: the scheme is a Cayley transform.
    let g = MetricField::conformal(spec, |x| 1.0 + 0.3 * (-x[0] * x[0] / 4.0).exp());
    let cs = CoefficientSet { g, ..CoefficientSet::flat(spec, 1) };
    let op = ParadiffOperator::second_order_only(&cs);
    let zero = Field::zeros(spec, 1);
    let mut w = w0.clone();
    let mut drift: f64 = 0.0;
    for _ in 0..40 {
        let next = midpoint_step(&op, &w, &zero, 2e-3, 1e-13, 500).map_err(|e| e.to_string())?.0;
        drift = drift.max((next.l2_norm() - w.l2_norm()).abs());
        w = next;
    }
    check(
        falls.iter().all(|f| *f >= 3.5) && drift <= 1e-10,
        format!("error/T {:.2e} {:.2e} {:.2e}, falls {:.2} {:.2}; L² drift {drift:.2e}/step", errs[0], errs[1], errs[2], falls[0], falls[1]),
    )
}

fn quadratic_run(n: usize) -> Result<Solution, String> {
    iterate(&quadratic_data(n), &quadratic_nl(), &quadratic_solver(), &quadratic_trap()).map_err(|e| e.to_string())
}

fn contraction(sol: &Solution) -> Outcome {
    let ratios: Vec<(usize, f64)> = sol.trace.ratios().into_iter().filter(|(n, _)| (3..=8).contains(n)).collect();
    let worst = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let cfg = quadratic_solver();
    check(
        sol.converged && sol.trace.records.len() <= cfg.n_max && !ratios.is_empty() && worst <= 0.6,
        format!(
            "converged = {} after {} iterations, diffs {:?}, worst ratio over 3–8 {worst:.3}",
            sol.converged,
            sol.trace.records.len(),
            sol.trace.diffs().iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn uniform_bounds(sol: &Solution) -> Outcome {
    let t = &sol.trace;
    let norm = t.records.iter().map(|r| r.norm_s0).fold(0.0, f64::max);
    let ext = t.records.iter().map(|r| r.exterior_s0).fold(0.0, f64::max);
    check(
        norm <= 2.0 * t.m && ext <= 2.0 * t.epsilon,
        format!("max norm {norm:.4} vs 2M = {:.4}; max exterior {ext:.2e} vs 2ε = {:.1e}", 2.0 * t.m, 2.0 * t.epsilon),
    )
}

fn envelope_propagation(coarse: &Solution) -> Outcome {
    let cfg = quadratic_solver();
    let a = envelope_trace(&coarse.u, cfg.s, &cfg).map_err(|e| e.to_string())?.max_ratio;
    let fine = quadratic_run(1024)?;
    let b = envelope_trace(&fine.u, cfg.s, &cfg).map_err(|e| e.to_string())?.max_ratio;
    let rel = (a - b).abs() / a;
    check(a.is_finite() && b.is_finite() && rel <= 0.2, format!("max ratio {a:.4} (n = 512), {b:.4} (n = 1024), change {rel:.2e}"))
}

fn dependence() -> Outcome {
    let u0 = quadratic_data(512);
    let phi = gaussian(u0.spec(), 1.0, [1.0, 0.0], 1.0, [-0.5, 0.0]);
    let t = continuous_dependence(&u0, &phi, &[1e-2, 1e-3, 1e-4], &quadratic_nl(), &quadratic_solver(), &quadratic_trap()).map_err(|e| e.to_string())?;
    let spreads: Vec<f64> = (0..t.sigmas.len()).map(|i| t.spread(i)).collect();
    let ratios: Vec<String> = t.rows.iter().map(|r| format!("{:.4}", r.by_sigma[0].3)).collect();
    check(
        t.excluded.is_empty() && spreads.iter().all(|s| *s <= 1.3),
        format!("ratios at σ = 0: {}; spreads {:?}", ratios.join(", "), spreads.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()),
    )
}

fn cross_formulation(sol: &Solution) -> Outcome {
    let times = sol.u.times().to_vec();
    let direct = direct_reference(sol.u.slice(0), &quadratic_nl(), &times, 8).map_err(|e| e.to_string())?;
    let mut gap: f64 = 0.0;
    let mut size: f64 = 0.0;
    for (a, b) in sol.u.slices().iter().zip(direct.slices()) {
        gap = gap.max(a.sub(b).l2_norm());
        size = size.max(b.l2_norm());
    }
    let rel = gap / size;
    check(rel <= 1e-4, format!("relative L^∞L² gap {rel:.2e}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let (pass, detail) = match out {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {id}: {} ({:.1} s) {detail}", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
    };
    let secs = Duration::from_secs;
    report(1, secs(30), &mut lp_partition);
    report(2, secs(5), &mut cube_partition_sum);
    report(3, secs(60), &mut norm_oracle);
    report(4, secs(10), &mut envelope_admissible);
    report(5, secs(60), &mut flat_geometry);
    report(6, secs(300), &mut trapping_detection);
    report(7, secs(300), &mut perturbation_stability);
    report(8, secs(120), &mut transport_symbol);
    report(9, secs(120), &mut linear_order);

    let start = Instant::now();
    let run = quadratic_run(512);
    let run_time = start.elapsed();
    match run {
        Ok(sol) => {
            report(10, secs(600).saturating_sub(run_time), &mut || contraction(&sol));
            report(11, Duration::MAX, &mut || uniform_bounds(&sol));
            report(12, secs(900).saturating_sub(run_time), &mut || envelope_propagation(&sol));
            report(13, secs(1200), &mut dependence);
            report(14, secs(600).saturating_sub(run_time), &mut || cross_formulation(&sol));
        }
        Err(e) => {
            for id in [10, 11, 12, 14] {
                report(id, Duration::MAX, &mut || Err(format!("fixture run failed: {e}")));
            }
            report(13, secs(1200), &mut dependence);
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
