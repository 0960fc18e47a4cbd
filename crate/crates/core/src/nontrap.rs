//! Quantitative nontrapping: the smallness radius `R`, the longest geodesic
//! length `L` inside `B_{2R}`, the trapping verdict, and the stability margin
//! under metric perturbations.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamilton::{trace_forward, trace_ray, FnConformal, Metric, PhasePoint, Ray, RayCaps, RayStatus, FLOW_TOL};
use crate::model::{metric_of, MetricField, Nonlinearity};
use crate::spaces::l1_hs_norm;
use crate::spectral::{lowpass_profile, Field};

/// Parameters of the trapping analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrapConfig {
    /// Exterior smallness threshold.
    pub epsilon: f64,
    /// Sobolev index of the data size `M` and the exterior norm.
    pub s0: f64,
    /// Seed positions on the sphere `|x| = 2R` (2D).
    pub boundary_points: usize,
    /// Directions per seed position.
    pub directions: usize,
    /// Interior rings of seeds per radius `R`, times four.
    pub interior_density: usize,
    /// Length cap multiplier: rays longer than `kappa · 4R` count as trapped.
    pub kappa: f64,
    /// `C₀(M) = c0_scale · (1 + M)²` in the stability margin.
    pub c0_scale: f64,
    /// Smallest radius considered by [`find_r`].
    pub r_min: f64,
    pub tol: f64,
    pub max_step: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            s0: 3.5,
            boundary_points: 32,
            directions: 16,
            interior_density: 2,
            kappa: 25.0,
            c0_scale: 1.0,
            r_min: 1.0,
            tol: FLOW_TOL,
            max_step: 0.5,
        }
    }
}

impl TrapConfig {
    /// Defaults with `s0 = d/2 + 2.5`.
    pub fn for_dim(dim: usize) -> Self {
        Self { s0: dim as f64 / 2.0 + 2.5, ..Self::default() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        // Enough for the exterior norm to control `g − I` and its gradient.
        if !(self.s0 > dim as f64 / 2.0 + 1.0) {
            return bad("s0 must exceed d/2 + 1");
        }
        if !(self.kappa >= 10.0) {
            return bad("kappa must be at least 10");
        }
        if self.boundary_points == 0 || self.directions == 0 {
            return bad("seed net is empty");
        }
        if !(self.c0_scale > 0.0 && self.r_min > 0.0 && self.tol > 0.0 && self.max_step > 0.0) {
            return bad("c0_scale, r_min, tol and max_step must be positive");
        }
        Ok(())
    }

    pub fn caps(&self, r: f64) -> RayCaps {
        RayCaps { tol: self.tol, max_step: self.max_step, ..RayCaps::for_radius(r, self.kappa) }
    }

    /// `C₀(M)`.
    pub fn c0(&self, m: f64) -> f64 {
        self.c0_scale * (1.0 + m) * (1.0 + m)
    }
}

/// Outcome of [`compute_l`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapReport {
    /// Data size `‖u₀‖_{ℓ¹H^{s₀}}`.
    pub m: f64,
    pub r: f64,
    /// Longest length inside `B_{2R}`; the cap when trapped.
    pub l: f64,
    pub trapped: bool,
    /// `e^{−C₀(M) L}`.
    pub margin: f64,
    pub worst_ray: PhasePoint,
    pub rays: usize,
    pub capped: usize,
    pub left_grid: usize,
    pub length_cap: f64,
    pub c0_scale: f64,
}

/// Smooth exterior cutoff: 0 for `ρ ≤ r`, 1 for `ρ ≥ 2r`.
pub fn exterior_cutoff(r: f64, rho: f64) -> f64 {
    1.0 - lowpass_profile(rho / r)
}

/// `‖χ_{>R/2}(g − I)‖_{ℓ¹H^{s₀}}`.
pub fn exterior_norm(g: &MetricField, r: f64, s0: f64) -> f64 {
    exterior_field_norm(&g.deviation_field(), r, s0)
}

/// `‖χ_{>R/2} f‖_{ℓ¹H^{s₀}}`.
pub fn exterior_field_norm(f: &Field, r: f64, s0: f64) -> f64 {
    let spec = *f.spec();
    let w: Vec<f64> = (0..spec.len())
        .map(|i| {
            let x = spec.position(i);
            exterior_cutoff(0.5 * r, x[0].hypot(x[1]))
        })
        .collect();
    l1_hs_norm(&f.weighted(&w), s0).value
}

/// Smallest grid-aligned radius with exterior norm at most `epsilon`.
///
/// Doubling from `r_min`, then bisection to one grid cell between the last
/// rejected and the first accepted radius.
pub fn find_r(g: &MetricField, cfg: &TrapConfig) -> Result<f64> {
    find_radius(g.spec(), cfg, |r| exterior_norm(g, r, cfg.s0))
}

fn find_radius(spec: &crate::spectral::GridSpec, cfg: &TrapConfig, norm: impl Fn(f64) -> f64) -> Result<f64> {
    let h = spec.spacing();
    let limit = 0.5 * spec.period();
    let ok = |cells: usize| norm(cells as f64 * h) <= cfg.epsilon;
    let mut hi = (cfg.r_min / h).ceil().max(1.0) as usize;
    if ok(hi) {
        return Ok(hi as f64 * h);
    }
    let mut lo = hi;
    loop {
        hi *= 2;
        if hi as f64 * h > limit {
            let radius = hi as f64 * h;
            return Err(Error::NoAdmissibleRadius { radius, norm: norm(limit) });
        }
        if ok(hi) {
            break;
        }
        lo = hi;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi as f64 * h)
}

/// `M = ‖u₀‖_{ℓ¹H^{s₀}}`, `g(u₀)` and `R` in one call.
///
/// `R` is the smallest radius where both `g(u₀) − I` and `u₀` itself are
/// `ε`-small outside `B_{R/2}`.
pub fn data_radius(u0: &Field, nl: &dyn Nonlinearity, cfg: &TrapConfig) -> Result<(f64, MetricField, f64)> {
    cfg.validate(u0.spec().dim)?;
    let m = l1_hs_norm(u0, cfg.s0).value;
    let g = metric_of(u0, nl)?;
    let r = find_radius(u0.spec(), cfg, |r| exterior_norm(&g, r, cfg.s0).max(exterior_field_norm(u0, r, cfg.s0)))?;
    Ok((m, g, r))
}

/// Seeds: inward directions on `|x| = 2R` plus polar rings inside `B_{2R}`.
///
/// Each ray is traced both ways, so half the circle of directions suffices in
/// the interior.
pub fn seed_net(dim: usize, r: f64, cfg: &TrapConfig) -> Vec<PhasePoint> {
    if dim == 1 {
        return vec![PhasePoint::new([2.0 * r, 0.0], [-1.0, 0.0]), PhasePoint::new([-2.0 * r, 0.0], [1.0, 0.0]), PhasePoint::new([0.0, 0.0], [1.0, 0.0])];
    }
    let mut seeds = Vec::new();
    let nd = cfg.directions;
    for i in 0..cfg.boundary_points {
        let phi = 2.0 * PI * i as f64 / cfg.boundary_points as f64;
        let x = [2.0 * r * phi.cos(), 2.0 * r * phi.sin()];
        for k in 0..nd {
            let alpha = -0.5 * PI + PI * (k as f64 + 0.5) / nd as f64;
            seeds.push(PhasePoint::unit(x, phi + PI + alpha));
        }
    }
    // Polar rings inside `B_{2R}`; directions are measured from the radial
    // direction so tangential launches are always present.
    let rings = 4 * cfg.interior_density.max(1);
    let half = (nd / 2).max(1);
    for i in 0..rings {
        let rho = 2.0 * r * i as f64 / rings as f64;
        let count = if i == 0 { 1 } else { ((cfg.boundary_points as f64 * rho / (2.0 * r)).round() as usize).max(4) };
        for j in 0..count {
            let phi = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / count as f64;
            let x = [rho * phi.cos(), rho * phi.sin()];
            for k in 0..half {
                seeds.push(PhasePoint::unit(x, phi + PI * k as f64 / half as f64));
            }
        }
    }
    seeds
}

/// Trace the seed net and reduce to `L` and the trapping verdict.
pub fn compute_l(g: &dyn Metric, r: f64, m: f64, cfg: &TrapConfig) -> Result<TrapReport> {
    Ok(compute_l_with_rays(g, r, m, cfg)?.0)
}

/// [`compute_l`] keeping the traced rays, in seed-net order.
pub fn compute_l_with_rays(g: &dyn Metric, r: f64, m: f64, cfg: &TrapConfig) -> Result<(TrapReport, Vec<Ray>)> {
    cfg.validate(g.dim())?;
    if let Some(e) = g.extent() {
        if 2.5 * r >= e {
            return Err(Error::InvalidArgument(format!("escape radius {} does not fit in the box half-width {e}", 2.5 * r)));
        }
    }
    let caps = cfg.caps(r);
    let seeds = seed_net(g.dim(), r, cfg);
    let rays: Vec<Ray> = seeds.par_iter().map(|p| trace_ray(g, p, &caps).map_err(|e| Error::Integrator(format!("seed {p:?}: {e}")))).collect::<Result<_>>()?;
    Ok((reduce(&rays, r, m, cfg, caps.length_cap), rays))
}

fn reduce(rays: &[Ray], r: f64, m: f64, cfg: &TrapConfig, cap: f64) -> TrapReport {
    let capped = rays.iter().filter(|r| r.status == RayStatus::Capped).count();
    let left_grid = rays.iter().filter(|r| r.status == RayStatus::LeftGrid).count();
    let worst = rays
        .iter()
        .max_by(|a, b| {
            let key = |r: &Ray| if r.status == RayStatus::Capped { f64::INFINITY } else { r.length_in_ball };
            key(a).total_cmp(&key(b))
        })
        .expect("nonempty seed net");
    let trapped = capped > 0;
    let l = if trapped { cap } else { worst.length_in_ball };
    TrapReport {
        m,
        r,
        l,
        trapped,
        margin: perturbation_margin(m, l, cfg),
        worst_ray: worst.seed,
        rays: rays.len(),
        capped,
        left_grid,
        length_cap: cap,
        c0_scale: cfg.c0_scale,
    }
}

/// Full analysis of initial data.
pub fn analyze(u0: &Field, nl: &dyn Nonlinearity, cfg: &TrapConfig) -> Result<(TrapReport, MetricField)> {
    let (m, g, r) = data_radius(u0, nl, cfg)?;
    let gm = crate::hamilton::GridMetric::new(&g);
    Ok((compute_l(&gm, r, m, cfg)?, g))
}

/// `e^{−C₀(M) L}`.
pub fn perturbation_margin(m: f64, l: f64, cfg: &TrapConfig) -> f64 {
    (-cfg.c0(m) * l).exp()
}

/// Result of re-measuring `L` for a perturbed metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub delta_c2: f64,
    pub margin: f64,
    pub within_margin: bool,
    pub l_before: f64,
    pub l_after: f64,
    pub trapped_before: bool,
    pub trapped_after: bool,
    /// `L' ≤ 2L` and not trapped; `None` when the perturbation is outside the guarantee.
    pub holds: Option<bool>,
}

/// `sup |δg| + sup |∇δg| + sup |∇²δg|` sampled on `|x_i| ≤ half_width`.
///
/// Second derivatives are central differences of the exact gradient.
pub fn c2_norm(dg: &dyn Metric, half_width: f64, samples: usize) -> f64 {
    let dim = dg.dim();
    let h = 2.0 * half_width / samples as f64;
    let eps = 1e-4 * half_width.max(1.0);
    let (mut s0, mut s1, mut s2) = (0.0_f64, 0.0_f64, 0.0_f64);
    let ny = if dim == 2 { samples } else { 0 };
    for i in 0..=samples {
        for j in 0..=ny {
            let x = [-half_width + i as f64 * h, if dim == 2 { -half_width + j as f64 * h } else { 0.0 }];
            let (g, d) = dg.eval(x);
            for a in 0..dim {
                for b in 0..dim {
                    s0 = s0.max((g[a][b] - if a == b { 1.0 } else { 0.0 }).abs());
                    for dl in d.iter().take(dim) {
                        s1 = s1.max(dl[a][b].abs());
                    }
                }
            }
            for l in 0..dim {
                let mut xp = x;
                let mut xm = x;
                xp[l] += eps;
                xm[l] -= eps;
                let (_, dp) = dg.eval(xp);
                let (_, dm) = dg.eval(xm);
                for k in 0..dim {
                    for a in 0..dim {
                        for b in 0..dim {
                            s2 = s2.max(((dp[k][a][b] - dm[k][a][b]) / (2.0 * eps)).abs());
                        }
                    }
                }
            }
        }
    }
    s0 + s1 + s2
}

/// Recompute `L` for `g + δg` (with `δg` given as a metric near `I`).
pub fn check_stability(g: &dyn Metric, dg: &dyn Metric, report: &TrapReport, cfg: &TrapConfig) -> Result<StabilityVerdict> {
    let delta_c2 = c2_norm(dg, 3.0 * report.r, 96);
    let within = delta_c2 <= report.margin;
    let after = if delta_c2 == 0.0 {
        report.clone()
    } else {
        let pert = crate::hamilton::Perturbed { base: g, delta: dg };
        compute_l(&pert, report.r, report.m, cfg)?
    };
    let holds = within.then_some(after.l <= 2.0 * report.l && !after.trapped);
    Ok(StabilityVerdict {
        delta_c2,
        margin: report.margin,
        within_margin: within,
        l_before: report.l,
        l_after: after.l,
        trapped_before: report.trapped,
        trapped_after: after.trapped,
        holds,
    })
}

/// Outward seeds with `|x₀| ∈ [R, 2R]`: all must escape without entering `B_{R/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeCheck {
    pub seeds: usize,
    pub failures: usize,
    /// Smallest radius reached by any outward ray.
    pub min_radius: f64,
}

impl EscapeCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn check_exterior_escape(g: &dyn Metric, r: f64, cfg: &TrapConfig) -> Result<EscapeCheck> {
    let caps = cfg.caps(r);
    let mut seeds = Vec::new();
    if g.dim() == 1 {
        for rho in [r, 1.5 * r, 2.0 * r] {
            seeds.push(PhasePoint::new([rho, 0.0], [1.0, 0.0]));
            seeds.push(PhasePoint::new([-rho, 0.0], [-1.0, 0.0]));
        }
    } else {
        for rho in [r, 1.5 * r, 2.0 * r] {
            for i in 0..cfg.boundary_points {
                let phi = 2.0 * PI * i as f64 / cfg.boundary_points as f64;
                let x = [rho * phi.cos(), rho * phi.sin()];
                for k in 0..cfg.directions / 2 {
                    let alpha = -0.5 * PI + PI * (k as f64 + 0.5) / (cfg.directions / 2) as f64;
                    seeds.push(PhasePoint::unit(x, phi + alpha));
                }
            }
        }
    }
    let results: Vec<(bool, f64)> = seeds
        .par_iter()
        .map(|p| {
            let ray = trace_forward(g, p, &RayCaps { record: true, ..caps })?;
            let min_r = ray.samples.iter().map(|s| s.x[0].hypot(s.x[1])).fold(f64::INFINITY, f64::min);
            Ok((ray.status == RayStatus::Escaped && min_r >= 0.5 * r, min_r))
        })
        .collect::<Result<_>>()?;
    Ok(EscapeCheck {
        seeds: seeds.len(),
        failures: results.iter().filter(|(ok, _)| !ok).count(),
        min_radius: results.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min),
    })
}

/// Radial conformal profile `c(x) = 1 + A exp(−(|x| − r₀)²/w²)` with gradient.
pub fn ring_profile(amplitude: f64, r0: f64, width: f64) -> impl Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync + Copy {
    move |x: [f64; 2]| {
        let rho = x[0].hypot(x[1]);
        let z = (rho - r0) / width;
        let e = amplitude * (-z * z).exp();
        let dr = -2.0 * z / width * e;
        let (ux, uy) = if rho > 0.0 { (x[0] / rho, x[1] / rho) } else { (0.0, 0.0) };
        (1.0 + e, [dr * ux, dr * uy])
    }
}

/// Ring-shaped conformal metric; traps rays for large amplitudes.
pub fn ring_metric(dim: usize, amplitude: f64, r0: f64, width: f64) -> FnConformal<impl Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync> {
    FnConformal { dim, f: ring_profile(amplitude, r0, width) }
}

/// Gaussian conformal bump `1 + A exp(−|x − x₀|²/w²)`.
pub fn bump_metric(dim: usize, amplitude: f64, center: [f64; 2], width: f64) -> FnConformal<impl Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync> {
    FnConformal {
        dim,
        f: move |x: [f64; 2]| {
            let d = [x[0] - center[0], x[1] - center[1]];
            let e = amplitude * (-(d[0] * d[0] + d[1] * d[1]) / (width * width)).exp();
            (1.0 + e, [-2.0 * d[0] / (width * width) * e, -2.0 * d[1] / (width * width) * e])
        },
    }
}
