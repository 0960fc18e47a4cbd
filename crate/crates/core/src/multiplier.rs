//! Phase-space symbols: the exterior weight `μ`, the radial weight `ρ_R`, the
//! incoming symbol `q_in`, the escape symbol `q` obtained by transport along
//! the cosphere flow, its compact truncation `q_comp`, and a sampled check of
//! the positive commutator `−H_a q ≥ CM q`.
//!
//! All symbols are 0-homogeneous: they are evaluated at `(x, ξ/|ξ|)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamilton::{Metric, PhasePoint};
use crate::model::{CoefficientSet, MetricField};
use crate::ode::Controller;
use crate::spectral::spectral_derivative;

/// `0` for `t ≤ 0`, `1` for `t ≥ 1`, smooth in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let f = |s: f64| (-1.0 / s).exp();
        let (a, b) = (f(t), f(1.0 - t));
        a / (a + b)
    }
}

/// `0` below `a`, `1` above `b`.
pub fn above(a: f64, b: f64, t: f64) -> f64 {
    smooth_step((t - a) / (b - a))
}

/// `1` below `a`, `0` above `b`.
pub fn below(a: f64, b: f64, t: f64) -> f64 {
    1.0 - above(a, b, t)
}

fn unit(xi: [f64; 2], dim: usize) -> [f64; 2] {
    if dim == 1 {
        return [xi[0].signum(), 0.0];
    }
    let n = xi[0].hypot(xi[1]);
    [xi[0] / n, xi[1] / n]
}

fn cos_angle(x: [f64; 2], xi: [f64; 2]) -> f64 {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        0.0
    } else {
        (x[0] * xi[0] + x[1] * xi[1]) / r
    }
}

/// A nonnegative 0-homogeneous symbol on phase space.
pub trait PhaseSymbol: Send + Sync {
    fn dim(&self) -> usize;
    /// Value at `(x, ξ)`, `ξ ≠ 0` of any length.
    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64>;
    /// Short description of the declared support.
    fn support(&self) -> String;
}

/// Exterior weights on the unit shells `k ≤ |x| < k + 1`, `k ≥ R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSequence {
    pub r: f64,
    /// Inner radius of each shell.
    pub shells: Vec<f64>,
    /// `μ_k²` before the slowly-varying repair (`μ_R² = 1`).
    pub raw_sq: Vec<f64>,
    /// Repaired `μ_k`: neighbours within a factor 2.
    pub mu: Vec<f64>,
}

impl MuSequence {
    pub fn square_sum(&self) -> f64 {
        self.mu.iter().map(|m| m * m).sum()
    }

    /// Largest neighbour ratio `max(μ_{k+1}/μ_k, μ_k/μ_{k+1})`.
    pub fn max_neighbor_ratio(&self) -> f64 {
        self.mu.windows(2).map(|w| (w[1] / w[0]).max(w[0] / w[1])).fold(1.0, f64::max)
    }

    /// Uniform sequence over `k` shells, mostly for tests.
    pub fn uniform(r: f64, k: usize, value: f64) -> Self {
        let shells: Vec<f64> = (0..k).map(|i| r + i as f64).collect();
        Self { r, shells, raw_sq: vec![value * value; k], mu: vec![value; k] }
    }
}

/// Shell maxima of `(|g − I| + |∇g| + |b|)/ε`, normalized with `μ_R = 1` and
/// repaired to be slowly varying by a running maximum with decay 1/2.
pub fn build_mu(g: &MetricField, coeffs: Option<&CoefficientSet>, r: f64, epsilon: f64) -> Result<MuSequence> {
    let spec = *g.spec();
    let d = spec.dim;
    let mut pointwise = vec![0.0; spec.len()];
    for j in 0..d {
        for k in 0..d {
            let e = g.entry(j, k);
            let field = crate::spectral::Field::from_real(spec, e.iter().map(|v| v - if j == k { 1.0 } else { 0.0 }).collect())?;
            for (p, v) in pointwise.iter_mut().zip(field.comp(0)) {
                *p += v.norm();
            }
            for l in 0..d {
                let de = spectral_derivative(&field, l)?;
                for (p, v) in pointwise.iter_mut().zip(de.comp(0)) {
                    *p += v.norm();
                }
            }
        }
    }
    if let Some(cs) = coeffs {
        for (i, p) in pointwise.iter_mut().enumerate() {
            let mut s = 0.0;
            for bj in cs.b.iter().chain(cs.bt.iter()) {
                for ab in bj {
                    s += ab[i].norm_sqr();
                }
            }
            *p += s.sqrt();
        }
    }
    let outer = (0.5 * spec.period() * (d as f64).sqrt()).ceil();
    let first = r.floor();
    let count = ((outer - first).max(1.0)) as usize;
    let mut raw_sq = vec![0.0; count];
    for (i, p) in pointwise.iter().enumerate() {
        let x = spec.position(i);
        let rho = x[0].hypot(x[1]);
        if rho >= first {
            let k = ((rho - first).floor() as usize).min(count - 1);
            raw_sq[k] = f64::max(raw_sq[k], p / epsilon);
        }
    }
    raw_sq[0] = 1.0;
    let mut mu: Vec<f64> = raw_sq.iter().map(|v| v.sqrt()).collect();
    for k in 1..count {
        mu[k] = mu[k].max(0.5 * mu[k - 1]);
    }
    for k in (0..count - 1).rev() {
        mu[k] = mu[k].max(0.5 * mu[k + 1]);
    }
    let shells = (0..count).map(|k| first + k as f64).collect();
    Ok(MuSequence { r, shells, raw_sq, mu })
}

/// Increasing radial weight `ρ_R : [R, ∞) → [1, 2]` with `ρ' = μ_k²/Σμ²` on shell `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rho {
    pub r: f64,
    shells: Vec<f64>,
    slope: Vec<f64>,
    /// `ρ' ≥ c μ_k²` on every shell.
    pub c: f64,
}

pub fn build_rho(mu: &MuSequence) -> Rho {
    let total = mu.square_sum();
    let slope = mu.mu.iter().map(|m| if total > 0.0 { m * m / total } else { 0.0 }).collect();
    Rho { r: mu.r, shells: mu.shells.clone(), slope, c: if total > 0.0 { 1.0 / total } else { 0.0 } }
}

impl Rho {
    pub fn value(&self, rho: f64) -> f64 {
        let mut v = 1.0;
        for (k, (&a, &s)) in self.shells.iter().zip(&self.slope).enumerate() {
            let lo = if k == 0 { self.r.max(a) } else { a };
            let hi = a + 1.0;
            if rho <= lo {
                break;
            }
            v += s * (rho.min(hi) - lo) / (hi - lo);
        }
        v.min(2.0)
    }

    /// Slope on the shell containing `rho` (0 outside the shells).
    pub fn derivative(&self, rho: f64) -> f64 {
        for (k, (&a, &s)) in self.shells.iter().zip(&self.slope).enumerate() {
            let lo = if k == 0 { self.r.max(a) } else { a };
            if rho >= lo && rho < a + 1.0 {
                return s / (a + 1.0 - lo);
            }
        }
        0.0
    }
}

impl PhaseSymbol for Rho {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: [f64; 2], _xi: [f64; 2]) -> Result<f64> {
        Ok(self.value(x[0].hypot(x[1])))
    }

    fn support(&self) -> String {
        "everywhere, values in [1, 2]".into()
    }
}

/// `q_in = ρ_R(r) χ_{>5R}(r) χ_in(cos θ − c ρ_R(r))`.
#[derive(Clone, Debug)]
pub struct IncomingSymbol {
    pub dim: usize,
    pub r: f64,
    pub rho: Rho,
    /// The small constant `c`.
    pub c: f64,
}

/// Radial cutoff of `q_in`: 0 on `r ≤ 4R`, 1 on `r ≥ 5R`.
pub fn incoming_radial(r: f64, rho: f64) -> f64 {
    above(4.0 * r, 5.0 * r, rho)
}

/// Angular profile of `q_in`: 1 below `−1/2`, 0 above `−1/4`, nonincreasing.
pub fn incoming_profile(t: f64) -> f64 {
    below(-0.5, -0.25, t)
}

pub fn incoming_symbol(dim: usize, r: f64, rho: Rho, c: f64) -> IncomingSymbol {
    IncomingSymbol { dim, r, rho, c }
}

impl PhaseSymbol for IncomingSymbol {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
        let xi = unit(xi, self.dim);
        let rad = x[0].hypot(x[1]);
        let rho = self.rho.value(rad);
        Ok(rho * incoming_radial(self.r, rad) * incoming_profile(cos_angle(x, xi) - self.c * rho))
    }

    fn support(&self) -> String {
        format!("|x| > {} and cos θ < {}", 4.0 * self.r, -0.25 + 2.0 * self.c)
    }
}

/// `χ(x, ξ) = χ_{>2R}(|x − 8Rξ|) χ_{<−1/2}(cos∠(x − 8Rξ, ξ))` with `|ξ| = 1`:
/// incoming for the flat flow and equal to 1 on `B_{2R}`.
///
/// `widen` shifts both cutoffs outward to give the wider cover `χ̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedIncoming {
    pub dim: usize,
    pub r: f64,
    pub widen: bool,
}

impl ShiftedIncoming {
    pub fn chi(dim: usize, r: f64) -> Self {
        Self { dim, r, widen: false }
    }

    pub fn chi_tilde(dim: usize, r: f64) -> Self {
        Self { dim, r, widen: true }
    }

    fn value(&self, x: [f64; 2], xi: [f64; 2]) -> f64 {
        let y = [x[0] - 8.0 * self.r * xi[0], x[1] - 8.0 * self.r * xi[1]];
        let ny = y[0].hypot(y[1]);
        let c = cos_angle(y, xi);
        if self.widen {
            above(self.r, 2.0 * self.r, ny) * below(-0.5, -0.25, c)
        } else {
            above(2.0 * self.r, 4.0 * self.r, ny) * below(-0.75, -0.5, c)
        }
    }
}

impl PhaseSymbol for ShiftedIncoming {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
        Ok(self.value(x, unit(xi, self.dim)))
    }

    fn support(&self) -> String {
        let (rr, c) = if self.widen { (self.r, -0.25) } else { (2.0 * self.r, -0.5) };
        format!("|x − 8Rξ| > {rr} and cos∠(x − 8Rξ, ξ) < {c}")
    }
}

/// `c · χ` for a symbol `χ`.
pub struct Scaled<'a> {
    pub inner: &'a dyn PhaseSymbol,
    pub factor: f64,
}

impl PhaseSymbol for Scaled<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
        Ok(self.factor * self.inner.eval(x, xi)?)
    }

    fn support(&self) -> String {
        self.inner.support()
    }
}

/// Settings of the transport solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub r: f64,
    /// The rate `CM`.
    pub cm: f64,
    /// Tolerance on the accumulated integral.
    pub tol: f64,
    pub max_step: f64,
    /// Characteristics must leave `supp χ` before this radius (`100R`).
    pub box_radius: f64,
    /// Arclength budget; longer characteristics count as trapped.
    pub length_cap: f64,
}

impl TransportConfig {
    pub fn new(r: f64, cm: f64) -> Self {
        Self { r, cm, tol: 1e-12, max_step: 0.125 * r, box_radius: 100.0 * r, length_cap: 1000.0 * r }
    }
}

/// The escape symbol `q(p) = ∫_0^∞ e^{CM s} χ(Φ_s p) ds` along the cosphere
/// flow `Φ_s`, i.e. the solution of `−H̃_a q = CM q + χ` vanishing after the
/// last exit from `supp χ`.
pub struct TransportSymbol<'a> {
    pub metric: &'a dyn Metric,
    pub chi: &'a dyn PhaseSymbol,
    pub cfg: TransportConfig,
    /// Trapping length `L` used for the reported Gronwall envelope.
    pub l: f64,
}

pub fn transport_escape_symbol<'a>(metric: &'a dyn Metric, chi: &'a dyn PhaseSymbol, l: f64, cfg: TransportConfig) -> TransportSymbol<'a> {
    TransportSymbol { metric, chi, cfg, l }
}

/// One sample of a characteristic: arclength parameter, point, `χ` and the running integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSample {
    pub s: f64,
    pub point: PhasePoint,
    pub chi: f64,
    /// `∫_0^s e^{CMτ} χ dτ`.
    pub integral: f64,
}

impl TransportSymbol<'_> {
    /// `e^{CM L} sup χ`, the Gronwall size of `q`.
    pub fn gronwall_envelope(&self) -> f64 {
        (self.cfg.cm * self.l).exp()
    }

    /// Integrate the characteristic through `p` until it has escaped and left `supp χ`.
    pub fn characteristic(&self, p: &PhasePoint, record: bool) -> Result<(f64, Vec<CharacteristicSample>)> {
        let g = self.metric;
        let dim = g.dim();
        let cm = self.cfg.cm;
        let chi = self.chi;
        let field = |s: f64, y: &[f64; 5]| -> [f64; 5] {
            let x = [y[0], y[1]];
            let xi = [y[2], y[3]];
            let (m, dm) = g.eval(x);
            let mut axi = [0.0; 2];
            let mut ax = [0.0; 2];
            for j in 0..dim {
                axi[j] = 2.0 * (0..dim).map(|k| m[j][k] * xi[k]).sum::<f64>();
                ax[j] = (0..dim).map(|a| (0..dim).map(|b| dm[j][a][b] * xi[a] * xi[b]).sum::<f64>()).sum();
            }
            let proj = ax[0] * xi[0] + ax[1] * xi[1];
            let c = chi.eval(x, xi).unwrap_or(f64::NAN);
            let (d2, d3) = if dim == 1 { (0.0, 0.0) } else { (-ax[0] + proj * xi[0], -ax[1] + proj * xi[1]) };
            [axi[0], axi[1], d2, d3, (cm * s).exp() * c]
        };
        let xi0 = unit(p.xi, dim);
        let mut y = [p.x[0], p.x[1], xi0[0], xi0[1], 0.0];
        let mut s = 0.0;
        let mut ell = 0.0;
        let mut ctl = Controller::new(self.cfg.tol, 0.01 * self.cfg.max_step, self.cfg.max_step);
        let mut out = Vec::new();
        let push = |s: f64, y: &[f64; 5], out: &mut Vec<CharacteristicSample>| -> Result<f64> {
            let pt = PhasePoint::new([y[0], y[1]], [y[2], y[3]]);
            let c = chi.eval(pt.x, pt.xi)?;
            if record {
                out.push(CharacteristicSample { s, point: pt, chi: c, integral: y[4] });
            }
            Ok(c)
        };
        let mut c = push(s, &y, &mut out)?;
        let escape = 2.5 * self.cfg.r;
        loop {
            let rad = y[0].hypot(y[1]);
            let (m, _) = g.eval([y[0], y[1]]);
            let vel = [2.0 * (m[0][0] * y[2] + m[0][1] * y[3]), if dim == 2 { 2.0 * (m[1][0] * y[2] + m[1][1] * y[3]) } else { 0.0 }];
            let outgoing = y[0] * vel[0] + y[1] * vel[1] > 0.0;
            if c == 0.0 && rad >= escape && outgoing {
                break;
            }
            if rad > self.cfg.box_radius {
                return Err(Error::CharacteristicEscaped { radius: self.cfg.box_radius, x: p.x, xi: p.xi });
            }
            if ell > self.cfg.length_cap {
                return Err(Error::Integrator(format!("characteristic from {p:?} exceeded the length cap")));
            }
            let (h, mut ny) = ctl.step(&field, s, &y, f64::INFINITY)?;
            if dim == 2 {
                let n = ny[2].hypot(ny[3]);
                ny[2] /= n;
                ny[3] /= n;
            }
            ell += (ny[0] - y[0]).hypot(ny[1] - y[1]);
            s += h;
            y = ny;
            c = push(s, &y, &mut out)?;
        }
        Ok((y[4], out))
    }

    /// Largest `|−dq/ds − CM q − χ|` along the characteristic through `p`,
    /// with `q` re-evaluated independently at `samples` uniform points and
    /// differentiated by fourth-order central differences.
    pub fn transport_residual(&self, p: &PhasePoint, ds: f64, samples: usize) -> Result<f64> {
        let g = self.metric;
        let mut pts = vec![*p];
        let mut cur = *p;
        cur.xi = unit(cur.xi, g.dim());
        for _ in 0..samples + 3 {
            cur = crate::hamilton::cosphere_flow(g, &cur, ds, 1e-12)?;
            cur.xi = unit(cur.xi, g.dim());
            pts.push(cur);
        }
        let q: Vec<f64> = pts.iter().map(|p| self.eval(p.x, p.xi)).collect::<Result<_>>()?;
        let mut worst: f64 = 0.0;
        for i in 2..pts.len() - 2 {
            let dq = (-q[i + 2] + 8.0 * q[i + 1] - 8.0 * q[i - 1] + q[i - 2]) / (12.0 * ds);
            let chi = self.chi.eval(pts[i].x, pts[i].xi)?;
            worst = worst.max((-dq - self.cfg.cm * q[i] - chi).abs());
        }
        Ok(worst)
    }
}

impl PhaseSymbol for TransportSymbol<'_> {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
        Ok(self.characteristic(&PhasePoint::new(x, xi), false)?.0)
    }

    fn support(&self) -> String {
        format!("backward flow-out of supp χ ({})", self.chi.support())
    }
}

/// `q_comp = χ_{<75R}(|x|) (q + χ̃)`.
pub struct CompactSymbol<'a> {
    pub q: &'a dyn PhaseSymbol,
    pub chi_tilde: &'a dyn PhaseSymbol,
    pub r: f64,
}

/// Radial truncation of `q_comp`: 1 on `|x| ≤ 75R`, 0 on `|x| ≥ 80R`.
pub fn compact_cutoff(r: f64, rho: f64) -> f64 {
    below(75.0 * r, 80.0 * r, rho)
}

/// Build `q_comp`, checking `χ̃ ≥ 1/2` wherever `q > 0` on the given samples.
pub fn assemble_qcomp<'a>(q: &'a dyn PhaseSymbol, chi_tilde: &'a dyn PhaseSymbol, r: f64, cover_samples: &[PhasePoint]) -> Result<CompactSymbol<'a>> {
    for p in cover_samples {
        if compact_cutoff(r, p.x[0].hypot(p.x[1])) == 0.0 {
            continue;
        }
        if q.eval(p.x, p.xi)? > 0.0 && chi_tilde.eval(p.x, p.xi)? < 0.5 {
            return Err(Error::CoverCheck(format!("χ̃ < 1/2 at {p:?} where q > 0")));
        }
    }
    Ok(CompactSymbol { q, chi_tilde, r })
}

impl PhaseSymbol for CompactSymbol<'_> {
    fn dim(&self) -> usize {
        self.q.dim()
    }

    fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
        let cut = compact_cutoff(self.r, x[0].hypot(x[1]));
        if cut == 0.0 {
            return Ok(0.0);
        }
        Ok(cut * (self.q.eval(x, xi)? + self.chi_tilde.eval(x, xi)?))
    }

    fn support(&self) -> String {
        format!("|x| < {}", 80.0 * self.r)
    }
}

/// `n` phase points with `|x| ≤ radius`, uniform in area, and uniform unit directions.
pub fn phase_samples(dim: usize, n: usize, radius: f64, seed: u64) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if dim == 1 {
                let x = rng.gen_range(-radius..radius);
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                PhasePoint::new([x, 0.0], [s, 0.0])
            } else {
                let rho = radius * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(0.0..2.0 * PI);
                PhasePoint::unit([rho * phi.cos(), rho * phi.sin()], rng.gen_range(0.0..2.0 * PI))
            }
        })
        .collect()
}

/// Outcome of [`verify_commutator`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorReport {
    pub samples: usize,
    /// `min(−H_a q − CM q)` over the samples.
    pub min_margin: f64,
    pub witness: PhasePoint,
    /// `min(−H_a q)` over samples with `|x| < 2R`, when any.
    pub inner_min: Option<f64>,
    /// `max (|q_x| + |q_ξ|)/(−H_a q)` over samples where `−H_a q > 1e-6`.
    pub gradient_ratio: f64,
    pub commutator_ok: bool,
    pub inner_ok: bool,
}

impl CommutatorReport {
    pub fn passed(&self) -> bool {
        self.commutator_ok && self.inner_ok
    }
}

/// Settings of [`verify_commutator`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorCheck {
    pub r: f64,
    pub cm: f64,
    /// Finite-difference step along the flow and in phase.
    pub step: f64,
    /// Allowed negative margin.
    pub slack: f64,
    /// Require `−H_a q ≥ 1` inside `B_{2R}`.
    pub check_inner: bool,
}

impl CommutatorCheck {
    pub fn new(r: f64, cm: f64) -> Self {
        Self { r, cm, step: 1e-2, slack: 1e-8, check_inner: true }
    }
}

fn central(f: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((-f(2.0 * h)? + 8.0 * f(h)? - 8.0 * f(-h)? + f(-2.0 * h)?) / (12.0 * h))
}

/// `H_a q` at a unit phase point, differentiating along the Hamilton field.
pub fn hamilton_derivative(q: &dyn PhaseSymbol, g: &dyn Metric, p: &PhasePoint, step: f64) -> Result<f64> {
    let dim = g.dim();
    let (m, dm) = g.eval(p.x);
    let mut axi = [0.0; 2];
    let mut ax = [0.0; 2];
    for j in 0..dim {
        axi[j] = 2.0 * (0..dim).map(|k| m[j][k] * p.xi[k]).sum::<f64>();
        ax[j] = (0..dim).map(|a| (0..dim).map(|b| dm[j][a][b] * p.xi[a] * p.xi[b]).sum::<f64>()).sum();
    }
    central(|t| q.eval([p.x[0] + t * axi[0], p.x[1] + t * axi[1]], [p.xi[0] - t * ax[0], p.xi[1] - t * ax[1]]), step)
}

/// Evaluate `−H_a q − CM q` at unit samples and the companion checks.
pub fn verify_commutator(q: &dyn PhaseSymbol, g: &dyn Metric, samples: &[PhasePoint], check: &CommutatorCheck) -> Result<CommutatorReport> {
    let dim = g.dim();
    let mut min_margin = f64::INFINITY;
    let mut witness = samples.first().copied().unwrap_or(PhasePoint::new([0.0; 2], [1.0, 0.0]));
    let mut inner_min: Option<f64> = None;
    let mut gradient_ratio: f64 = 0.0;
    let h = check.step;
    for p in samples {
        let p = PhasePoint::new(p.x, unit(p.xi, dim));
        let val = q.eval(p.x, p.xi)?;
        let minus_h = -hamilton_derivative(q, g, &p, h)?;
        let margin = minus_h - check.cm * val;
        if margin < min_margin {
            min_margin = margin;
            witness = p;
        }
        if p.x[0].hypot(p.x[1]) < 2.0 * check.r {
            inner_min = Some(inner_min.map_or(minus_h, |m| m.min(minus_h)));
        }
        if minus_h > 1e-6 {
            let mut grad = 0.0;
            for l in 0..dim {
                let d = central(
                    |t| {
                        let mut x = p.x;
                        x[l] += t;
                        q.eval(x, p.xi)
                    },
                    h,
                )?;
                grad += d * d;
            }
            let mut gx = grad.sqrt();
            if dim == 2 {
                let th = p.xi[1].atan2(p.xi[0]);
                gx += central(|t| q.eval(p.x, [(th + t).cos(), (th + t).sin()]), h)?.abs();
            }
            gradient_ratio = gradient_ratio.max(gx / minus_h);
        }
    }
    let inner_ok = !check.check_inner || inner_min.is_none_or(|m| m >= 1.0 - check.slack);
    Ok(CommutatorReport { samples: samples.len(), min_margin, witness, inner_min, gradient_ratio, commutator_ok: min_margin >= -check.slack, inner_ok })
}

/// Values of a symbol on a polar phase grid: `(x, ξ, value)` rows for dumps.
pub fn sample_grid(q: &dyn PhaseSymbol, radius: f64, n_r: usize, n_angle: usize, n_dir: usize) -> Result<Vec<(PhasePoint, f64)>> {
    let mut out = Vec::new();
    for i in 0..n_r {
        let rho = radius * i as f64 / (n_r.max(2) - 1) as f64;
        let na = if i == 0 { 1 } else { n_angle };
        for j in 0..na {
            let phi = 2.0 * PI * j as f64 / na as f64;
            for k in 0..n_dir {
                let p = PhasePoint::unit([rho * phi.cos(), rho * phi.sin()], 2.0 * PI * k as f64 / n_dir as f64);
                out.push((p, q.eval(p.x, p.xi)?));
            }
        }
    }
    Ok(out)
}
