//! Bicharacteristic flow of `a(x, ξ) = g^{jk}(x) ξ_j ξ_k`, its projection to
//! the cosphere bundle, ray tracing with arclength bookkeeping, and flow
//! comparison between two metrics.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mat2, MetricField};
use crate::ode::{integrate, Controller};
use crate::spectral::{dft_inplace, GridSpec};

/// A metric that can be evaluated with its gradient anywhere in its domain.
pub trait Metric: Send + Sync {
    fn dim(&self) -> usize;
    /// `g(x)` and `∂_l g(x)` for `l = 0, 1`.
    fn eval(&self, x: [f64; 2]) -> (Mat2, [Mat2; 2]);
    /// Half-width of the box where the metric is defined; `None` for all of space.
    fn extent(&self) -> Option<f64> {
        None
    }
}

/// The Euclidean metric.
#[derive(Clone, Copy, Debug)]
pub struct FlatMetric {
    pub dim: usize,
}

const ID: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
const ZERO: Mat2 = [[0.0; 2]; 2];

impl Metric for FlatMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _x: [f64; 2]) -> (Mat2, [Mat2; 2]) {
        (ID, [ZERO; 2])
    }
}

/// Conformal metric `c(x) I` from a closure returning `(c, ∇c)`.
pub struct FnConformal<F: Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync> Metric for FnConformal<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: [f64; 2]) -> (Mat2, [Mat2; 2]) {
        let (c, dc) = (self.f)(x);
        let s = |v: f64| [[v, 0.0], [0.0, v]];
        (s(c), [s(dc[0]), s(dc[1])])
    }
}

/// `g₁ + g₂ − I`, i.e. `g₂`'s deviation from flat added to `g₁`.
pub struct Perturbed<'a> {
    pub base: &'a dyn Metric,
    pub delta: &'a dyn Metric,
}

impl Metric for Perturbed<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, x: [f64; 2]) -> (Mat2, [Mat2; 2]) {
        let (g, dg) = self.base.eval(x);
        let (h, dh) = self.delta.eval(x);
        let add = |a: &Mat2, b: &Mat2, sub: f64| {
            let mut o = *a;
            for j in 0..2 {
                for k in 0..2 {
                    o[j][k] += b[j][k] - if j == k { sub } else { 0.0 };
                }
            }
            o
        };
        (add(&g, &h, 1.0), [add(&dg[0], &dh[0], 0.0), add(&dg[1], &dh[1], 0.0)])
    }

    fn extent(&self) -> Option<f64> {
        match (self.base.extent(), self.delta.extent()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// `Q g(Qᵀx) Qᵀ` for the rotation `Q` by `angle`.
pub struct Rotated<'a> {
    pub inner: &'a dyn Metric,
    pub angle: f64,
}

impl Metric for Rotated<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: [f64; 2]) -> (Mat2, [Mat2; 2]) {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let q = [[c, -s], [s, c]];
        let y = [c * x[0] + s * x[1], -s * x[0] + c * x[1]];
        let (g, dg) = self.inner.eval(y);
        let conj = |m: &Mat2| {
            let mut o = ZERO;
            for j in 0..2 {
                for k in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            o[j][k] += q[j][a] * m[a][b] * q[k][b];
                        }
                    }
                }
            }
            o
        };
        let mut d = [ZERO; 2];
        for (l, dl) in d.iter_mut().enumerate() {
            let mut m = ZERO;
            for (mm, dgm) in dg.iter().enumerate() {
                for j in 0..2 {
                    for k in 0..2 {
                        m[j][k] += q[l][mm] * dgm[j][k];
                    }
                }
            }
            *dl = conj(&m);
        }
        (conj(&g), d)
    }
}

/// Trigonometric interpolant of a grid metric: exact for band-limited samples,
/// with the gradient of the interpolant itself so the flow conserves `a`.
#[derive(Clone, Debug)]
pub struct GridMetric {
    spec: GridSpec,
    /// Per entry `(j, k)` with `j ≤ k`: retained coefficients, or `None` when constant.
    entries: [[Option<Spectrum>; 2]; 2],
    constants: Mat2,
    /// `g^{11}` repeats `g^{00}` (conformal fields), evaluated once.
    diagonal_shared: bool,
}

#[derive(Clone, Debug)]
struct Spectrum {
    /// Retained signed wavenumber indices per axis.
    k0: Vec<i64>,
    k1: Vec<i64>,
    /// Coefficients indexed `[i0 * k1.len() + i1]`.
    coef: Vec<C64>,
}

impl GridMetric {
    pub fn new(g: &MetricField) -> Self {
        let spec = *g.spec();
        let mut entries: [[Option<Spectrum>; 2]; 2] = Default::default();
        let mut constants = ID;
        let diagonal_shared = spec.dim == 2 && g.entries().iter().all(|m| m[0][0] == m[1][1]);
        for j in 0..spec.dim {
            for k in j..spec.dim {
                if diagonal_shared && j == 1 && k == 1 {
                    continue;
                }
                let vals = g.entry(j, k);
                let first = vals[0];
                if vals.iter().all(|&v| v == first) {
                    constants[j][k] = first;
                    constants[k][j] = first;
                    continue;
                }
                constants[j][k] = 0.0;
                constants[k][j] = 0.0;
                entries[j][k] = Some(Spectrum::new(&spec, &vals));
            }
        }
        Self { spec, entries, constants, diagonal_shared }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

impl Spectrum {
    fn new(spec: &GridSpec, vals: &[f64]) -> Self {
        let n = spec.n;
        let mut hat: Vec<C64> = vals.iter().map(|&v| C64::new(v, 0.0)).collect();
        dft_inplace(spec, &mut hat, false);
        let norm = 1.0 / (spec.len() as f64).sqrt();
        hat.iter_mut().for_each(|z| *z *= norm);
        let max = hat.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let thresh = 1e-15 * max;
        let signed = |i: usize| if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
        let mut reach = [0i64; 2];
        for (idx, z) in hat.iter().enumerate() {
            if z.norm() > thresh {
                let mi = spec.multi_index(idx);
                reach[0] = reach[0].max(signed(mi[0]).abs());
                reach[1] = reach[1].max(signed(mi[1]).abs());
            }
        }
        let keep = |r: i64| -> Vec<i64> {
            let r = r.min(n as i64 / 2);
            (-r..=r).filter(|&k| k > -(n as i64) / 2 || r == n as i64 / 2).collect()
        };
        let k0 = keep(reach[0]);
        let k1 = if spec.dim == 2 { keep(reach[1]) } else { vec![0] };
        let wrap = |k: i64| if k < 0 { (k + n as i64) as usize } else { k as usize };
        let mut coef = Vec::with_capacity(k0.len() * k1.len());
        for &a in &k0 {
            for &b in &k1 {
                coef.push(hat[spec.flat_index([wrap(a), wrap(b)])]);
            }
        }
        Self { k0, k1, coef }
    }

    /// Value and gradient at `x`.
    fn eval(&self, spec: &GridSpec, x: [f64; 2]) -> (f64, [f64; 2]) {
        let w = 2.0 * PI / spec.period();
        let x0 = -0.5 * spec.period();
        let phases = |ks: &[i64], xi: f64| -> Vec<C64> {
            let base = C64::from_polar(1.0, w * (xi - x0));
            let kmax = ks.iter().fold(0, |m, k| m.max(k.abs())) as usize;
            let mut pow = Vec::with_capacity(kmax + 1);
            let mut p = C64::new(1.0, 0.0);
            for _ in 0..=kmax {
                pow.push(p);
                p *= base;
            }
            ks.iter().map(|&k| if k >= 0 { pow[k as usize] } else { pow[(-k) as usize].conj() }).collect()
        };
        let e0 = phases(&self.k0, x[0]);
        let e1 = if spec.dim == 2 { phases(&self.k1, x[1]) } else { vec![C64::new(1.0, 0.0)] };
        let (mut v, mut g0, mut g1) = (C64::default(), C64::default(), C64::default());
        let m1 = self.k1.len();
        for (i0, (&ka, ea)) in self.k0.iter().zip(&e0).enumerate() {
            let row = &self.coef[i0 * m1..(i0 + 1) * m1];
            let mut s = C64::default();
            let mut sy = C64::default();
            for ((c, &kb), eb) in row.iter().zip(&self.k1).zip(&e1) {
                let t = c * eb;
                s += t;
                sy += t * kb as f64;
            }
            v += ea * s;
            g0 += ea * s * ka as f64;
            g1 += ea * sy;
        }
        let i = C64::new(0.0, w);
        (v.re, [(i * g0).re, (i * g1).re])
    }
}

impl Metric for GridMetric {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn eval(&self, x: [f64; 2]) -> (Mat2, [Mat2; 2]) {
        let mut g = self.constants;
        let mut dg = [ZERO; 2];
        for j in 0..2 {
            for k in j..2 {
                if let Some(s) = &self.entries[j][k] {
                    let (v, d) = s.eval(&self.spec, x);
                    g[j][k] = v;
                    g[k][j] = v;
                    for l in 0..2 {
                        dg[l][j][k] = d[l];
                        dg[l][k][j] = d[l];
                    }
                }
            }
        }
        if self.diagonal_shared {
            g[1][1] = g[0][0];
            for d in dg.iter_mut() {
                d[1][1] = d[0][0];
            }
        }
        (g, dg)
    }

    fn extent(&self) -> Option<f64> {
        Some(0.5 * self.spec.period())
    }
}

/// A point of phase space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub xi: [f64; 2],
}

impl PhasePoint {
    pub fn new(x: [f64; 2], xi: [f64; 2]) -> Self {
        Self { x, xi }
    }

    /// Unit covector at angle `theta` (ignored direction in one dimension).
    pub fn unit(x: [f64; 2], theta: f64) -> Self {
        Self { x, xi: [theta.cos(), theta.sin()] }
    }
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// `a(x, ξ)`.
pub fn symbol(g: &dyn Metric, p: &PhasePoint) -> f64 {
    let (m, _) = g.eval(p.x);
    quad(&m, p.xi)
}

fn quad(m: &Mat2, v: [f64; 2]) -> f64 {
    m[0][0] * v[0] * v[0] + 2.0 * m[0][1] * v[0] * v[1] + m[1][1] * v[1] * v[1]
}

/// `(a_ξ, a_x)` at a phase point.
fn derivatives(g: &dyn Metric, x: [f64; 2], xi: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let (m, dm) = g.eval(x);
    let dim = g.dim();
    let mut axi = [0.0; 2];
    let mut ax = [0.0; 2];
    for j in 0..dim {
        axi[j] = 2.0 * (0..dim).map(|k| m[j][k] * xi[k]).sum::<f64>();
        ax[j] = quad(&dm[j], xi);
    }
    if dim == 1 {
        axi[0] = 2.0 * m[0][0] * xi[0];
        ax[0] = dm[0][0][0] * xi[0] * xi[0];
    }
    (axi, ax)
}

/// Vector field of the Hamilton flow, state `(x, ξ)`.
fn full_field(g: &dyn Metric) -> impl Fn(f64, &[f64; 4]) -> [f64; 4] + '_ {
    move |_t, y| {
        let (axi, ax) = derivatives(g, [y[0], y[1]], [y[2], y[3]]);
        [axi[0], axi[1], -ax[0], -ax[1]]
    }
}

/// Vector field of the cosphere flow, state `(x, ξ, ℓ)` with `ℓ̇ = |ẋ|`.
fn cosphere_field(g: &dyn Metric) -> impl Fn(f64, &[f64; 5]) -> [f64; 5] + '_ {
    move |_t, y| {
        let xi = [y[2], y[3]];
        let (axi, ax) = derivatives(g, [y[0], y[1]], xi);
        let proj = ax[0] * xi[0] + ax[1] * xi[1];
        let mut out = [axi[0], axi[1], -ax[0] + proj * xi[0], -ax[1] + proj * xi[1], norm(axi)];
        if g.dim() == 1 {
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = 0.0;
        }
        out
    }
}

/// Default absolute tolerance of the flow integrators.
pub const FLOW_TOL: f64 = 1e-10;

/// Advance the Hamilton flow by `dt` (negative for backward).
pub fn flow_step(g: &dyn Metric, p: &PhasePoint, dt: f64, tol: f64) -> Result<PhasePoint> {
    let y = integrate(&full_field(g), 0.0, [p.x[0], p.x[1], p.xi[0], p.xi[1]], dt, tol)?;
    Ok(PhasePoint { x: [y[0], y[1]], xi: [y[2], y[3]] })
}

/// Advance the cosphere flow by `dt`; requires `|ξ| = 1`.
pub fn cosphere_flow(g: &dyn Metric, p: &PhasePoint, dt: f64, tol: f64) -> Result<PhasePoint> {
    check_unit(p)?;
    let y = integrate(&cosphere_field(g), 0.0, [p.x[0], p.x[1], p.xi[0], p.xi[1], 0.0], dt, tol)?;
    Ok(PhasePoint { x: [y[0], y[1]], xi: [y[2], y[3]] })
}

fn check_unit(p: &PhasePoint) -> Result<()> {
    let n = norm(p.xi);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("|ξ| = {n} is not 1")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayStatus {
    Escaped,
    Capped,
    LeftGrid,
}

impl RayStatus {
    fn worst(self, other: RayStatus) -> RayStatus {
        use RayStatus::*;
        match (self, other) {
            (Capped, _) | (_, Capped) => Capped,
            (LeftGrid, _) | (_, LeftGrid) => LeftGrid,
            _ => Escaped,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySample {
    pub t: f64,
    pub x: [f64; 2],
    pub xi: [f64; 2],
    /// Arclength from the seed (signed like `t`).
    pub ell: f64,
}

/// Stopping rules for [`trace_ray`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayCaps {
    /// Radius of the ball where length is measured (`2R`).
    pub ball_radius: f64,
    /// Rays stop once beyond this radius and moving outward.
    pub escape_radius: f64,
    /// Total arclength cap per time direction.
    pub length_cap: f64,
    pub tol: f64,
    /// Largest flow-time step of the integrator.
    pub max_step: f64,
    /// Keep every accepted step in `samples`.
    pub record: bool,
}

impl RayCaps {
    /// Caps for smallness radius `r`: length measured in `B_{2r}`, escape at `2.5 r`,
    /// cap at `kappa · 4r`.
    pub fn for_radius(r: f64, kappa: f64) -> Self {
        Self { ball_radius: 2.0 * r, escape_radius: 2.5 * r, length_cap: kappa * 4.0 * r, tol: FLOW_TOL, max_step: 0.5, record: false }
    }
}

/// A traced cosphere geodesic, both time directions from its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub seed: PhasePoint,
    pub samples: Vec<RaySample>,
    pub status: RayStatus,
    /// Total Euclidean arclength over both directions.
    pub length: f64,
    /// Euclidean arclength spent in the ball of radius `caps.ball_radius`.
    pub length_in_ball: f64,
    /// Smallest `|x|` after the ray first left the ball, per direction (for reentry checks).
    pub min_radius_after_exit: f64,
}

struct HalfRay {
    samples: Vec<RaySample>,
    status: RayStatus,
    length: f64,
    inside: f64,
    min_after_exit: f64,
}

fn trace_half(g: &dyn Metric, p: &PhasePoint, caps: &RayCaps) -> Result<HalfRay> {
    let f = cosphere_field(g);
    let radius = |y: &[f64; 5]| (y[0] * y[0] + y[1] * y[1]).sqrt();
    let mut y = [p.x[0], p.x[1], p.xi[0], p.xi[1], 0.0];
    let mut t = 0.0;
    let mut ctl = Controller::new(caps.tol, 0.05_f64.min(caps.max_step), caps.max_step);
    let mut samples = Vec::new();
    if caps.record {
        samples.push(RaySample { t, x: p.x, xi: p.xi, ell: 0.0 });
    }
    let mut inside = 0.0;
    let mut entered_at = if radius(&y) < caps.ball_radius { Some(0.0) } else { None };
    let mut left_once = entered_at.is_none();
    let mut min_after_exit = if left_once { radius(&y) } else { f64::INFINITY };
    let extent = g.extent();
    let mut steps = 0usize;
    let status = loop {
        let (h, mut ny) = ctl.step(&f, t, &y, f64::INFINITY)?;
        let n = norm([ny[2], ny[3]]);
        if n > 0.0 && g.dim() == 2 {
            ny[2] /= n;
            ny[3] /= n;
        }
        let (r0, r1) = (radius(&y), radius(&ny));
        let inside0 = r0 < caps.ball_radius;
        let inside1 = r1 < caps.ball_radius;
        if inside0 != inside1 {
            let ell_cross = crossing(&f, t, &y, h, caps.ball_radius, inside0)?;
            if inside0 {
                inside += ell_cross - entered_at.unwrap_or(ell_cross);
                entered_at = None;
                left_once = true;
            } else {
                entered_at = Some(ell_cross);
            }
        }
        t += h;
        y = ny;
        steps += 1;
        if left_once && entered_at.is_none() {
            min_after_exit = min_after_exit.min(r1);
        }
        if caps.record {
            samples.push(RaySample { t, x: [y[0], y[1]], xi: [y[2], y[3]], ell: y[4] });
        }
        let (axi, _) = derivatives(g, [y[0], y[1]], [y[2], y[3]]);
        let outward = y[0] * axi[0] + y[1] * axi[1] > 0.0;
        if r1 >= caps.escape_radius && outward {
            break RayStatus::Escaped;
        }
        if y[4] >= caps.length_cap {
            break RayStatus::Capped;
        }
        if let Some(e) = extent {
            if y[0].abs() >= e || y[1].abs() >= e {
                break RayStatus::LeftGrid;
            }
        }
        if steps > 5_000_000 {
            return Err(Error::Integrator("ray step budget exhausted".into()));
        }
    };
    if let Some(e) = entered_at {
        inside += y[4] - e;
    }
    Ok(HalfRay { samples, status, length: y[4], inside, min_after_exit })
}

/// Arclength at which a step from `y` crosses the sphere of radius `r`, by bisection on the step fraction.
fn crossing(f: &impl Fn(f64, &[f64; 5]) -> [f64; 5], t: f64, y: &[f64; 5], h: f64, r: f64, from_inside: bool) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, h);
    let mut ell = y[4];
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        let ym = crate::ode::dp_step(f, t, y, mid).0;
        let rm = (ym[0] * ym[0] + ym[1] * ym[1]).sqrt();
        ell = ym[4];
        if (rm < r) == from_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ell)
}

/// Trace the cosphere geodesic through `p` in both time directions.
///
/// The backward half is traced as the forward flow from `(x, −ξ)` and mapped
/// back with `t → −t`, `ξ → −ξ`.
pub fn trace_ray(g: &dyn Metric, p: &PhasePoint, caps: &RayCaps) -> Result<Ray> {
    check_unit(p)?;
    let fwd = trace_half(g, p, caps)?;
    let back_seed = PhasePoint { x: p.x, xi: [-p.xi[0], -p.xi[1]] };
    let bwd = trace_half(g, &back_seed, caps)?;
    let mut samples: Vec<RaySample> =
        bwd.samples.iter().rev().filter(|s| s.t > 0.0).map(|s| RaySample { t: -s.t, x: s.x, xi: [-s.xi[0], -s.xi[1]], ell: -s.ell }).collect();
    samples.extend(fwd.samples);
    Ok(Ray {
        seed: *p,
        samples,
        status: fwd.status.worst(bwd.status),
        length: fwd.length + bwd.length,
        length_in_ball: fwd.inside + bwd.inside,
        min_radius_after_exit: fwd.min_after_exit.min(bwd.min_after_exit),
    })
}

/// Trace only the forward half; used for exterior escape checks.
pub fn trace_forward(g: &dyn Metric, p: &PhasePoint, caps: &RayCaps) -> Result<Ray> {
    check_unit(p)?;
    let h = trace_half(g, p, caps)?;
    Ok(Ray { seed: *p, samples: h.samples, status: h.status, length: h.length, length_in_ball: h.inside, min_radius_after_exit: h.min_after_exit })
}

/// Deviation between the cosphere flows of two metrics from one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationTrace {
    pub times: Vec<f64>,
    /// `|x − x̃| + |ξ − ξ̃|` at each time.
    pub pointwise: Vec<f64>,
    /// Running maximum of `pointwise`.
    pub running_max: Vec<f64>,
}

impl DeviationTrace {
    pub fn max(&self) -> f64 {
        self.running_max.last().copied().unwrap_or(0.0)
    }
}

/// Integrate both cosphere flows to `horizon`, sampling `samples` uniform times.
pub fn compare_flows(g1: &dyn Metric, g2: &dyn Metric, p: &PhasePoint, horizon: f64, samples: usize, tol: f64) -> Result<DeviationTrace> {
    check_unit(p)?;
    let n = samples.max(1);
    let dt = horizon / n as f64;
    let (mut a, mut b) = (*p, *p);
    let mut times = vec![0.0];
    let mut pointwise = vec![0.0];
    for i in 1..=n {
        a = cosphere_flow(g1, &a, dt, tol)?;
        b = cosphere_flow(g2, &b, dt, tol)?;
        a.xi = normalize(a.xi);
        b.xi = normalize(b.xi);
        times.push(i as f64 * dt);
        pointwise.push(norm([a.x[0] - b.x[0], a.x[1] - b.x[1]]) + norm([a.xi[0] - b.xi[0], a.xi[1] - b.xi[1]]));
    }
    let mut running_max = Vec::with_capacity(pointwise.len());
    let mut m: f64 = 0.0;
    for v in &pointwise {
        m = m.max(*v);
        running_max.push(m);
    }
    Ok(DeviationTrace { times, pointwise, running_max })
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = norm(v);
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        v
    }
}

/// Slope and coefficient of determination of a least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump() -> impl Metric {
        FnConformal {
            dim: 2,
            f: |x: [f64; 2]| {
                let e = 0.3 * (-(x[0] * x[0] + x[1] * x[1]) / 2.25).exp();
                (1.0 + e, [-2.0 * x[0] / 2.25 * e, -2.0 * x[1] / 2.25 * e])
            },
        }
    }

    #[test]
    fn flat_flow_is_straight() {
        let g = FlatMetric { dim: 2 };
        let p = PhasePoint::new([1.0, -2.0], [0.3, 0.4]);
        let q = flow_step(&g, &p, 3.0, FLOW_TOL).unwrap();
        assert!((q.x[0] - 2.8).abs() < 1e-10 && (q.x[1] - 0.4).abs() < 1e-10);
        assert_eq!(q.xi, p.xi);
    }

    #[test]
    fn bump_conserves_hamiltonian_and_reverses() {
        let g = bump();
        let p = PhasePoint::new([-3.0, 0.4], [1.0, 0.1]);
        let q = flow_step(&g, &p, 2.0, FLOW_TOL).unwrap();
        assert!((symbol(&g, &q) - symbol(&g, &p)).abs() < 2e-8);
        let back = flow_step(&g, &PhasePoint::new(q.x, [-q.xi[0], -q.xi[1]]), 2.0, FLOW_TOL).unwrap();
        assert!(norm([back.x[0] - p.x[0], back.x[1] - p.x[1]]) < 1e-8);
    }

    #[test]
    fn grid_metric_interpolates_exactly() {
        let spec = GridSpec::new(2, 32, 4).unwrap();
        let mf = MetricField::conformal(spec, |x| 1.0 + 0.2 * (2.0 * PI * x[0] / 16.0).cos() * (2.0 * PI * 3.0 * x[1] / 16.0).sin());
        let gm = GridMetric::new(&mf);
        let x = [0.37, -1.91];
        let (g, dg) = gm.eval(x);
        let w = 2.0 * PI / 16.0;
        let exact = 1.0 + 0.2 * (w * x[0]).cos() * (3.0 * w * x[1]).sin();
        assert!((g[0][0] - exact).abs() < 1e-13);
        let dx = -0.2 * w * (w * x[0]).sin() * (3.0 * w * x[1]).sin();
        let dy = 0.2 * 3.0 * w * (w * x[0]).cos() * (3.0 * w * x[1]).cos();
        assert!((dg[0][0][0] - dx).abs() < 1e-12 && (dg[1][0][0] - dy).abs() < 1e-12);
    }

    #[test]
    fn flat_chord_through_center() {
        let g = FlatMetric { dim: 2 };
        let r = 8.0;
        let caps = RayCaps::for_radius(r, 25.0);
        let ray = trace_ray(&g, &PhasePoint::unit([r, 0.0], PI), &caps).unwrap();
        assert_eq!(ray.status, RayStatus::Escaped);
        assert!((ray.length_in_ball - 4.0 * r).abs() < 1e-6, "{}", ray.length_in_ball);
    }
}
