//! Implicit-midpoint time stepping of the linear paradifferential flow, the
//! nonlinear iteration built on it, and the experiments run on converged
//! solutions: frequency envelopes, continuous dependence and local energy.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamilton::GridMetric;
use crate::model::{divergence_form, forcing_of, linearized_coeffs, metric_of, remainder_g_with, InteractionClass, Nonlinearity, ParadiffOperator};
use crate::multiplier::{above, below};
use crate::nontrap::{compute_l, data_radius, exterior_cutoff, TrapConfig, TrapReport};
use crate::spaces::{lp_hs_norm, lp_xs_norm, make_envelope, y_surrogate, CubeSum, YScale};
use crate::spectral::{bands, dft_inplace, lowpass_profile, Field, GridSpec, SpacetimeField};

/// Forms of the lifespan constants: `C(M) = c_scale (1 + M)²`, `K(M_s) = 1 + k_scale M_s²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifespanConstants {
    pub c_scale: f64,
    pub k_scale: f64,
}

impl Default for LifespanConstants {
    fn default() -> Self {
        Self { c_scale: 1.0, k_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub t_final: f64,
    /// Number of time steps on `[0, T]`.
    pub steps: usize,
    pub s: f64,
    pub s0: f64,
    pub n_max: usize,
    /// Stopping threshold on `‖u^{(n+1)} − u^{(n)}‖_{ℓ^p X⁰}`.
    pub tol: f64,
    pub lifespan: LifespanConstants,
    /// Relative residual of the inner linear solve.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Cube summation: `ℓ¹` for quadratic, `ℓ²` for cubic interactions.
    pub cube_sum: CubeSum,
    /// Recompute `L` for every iterate.
    pub recheck_trapping: bool,
    /// Exponents of the frequency envelope; `σ` defaults to `⌈2(s − s₀)⌉`.
    pub envelope_delta: f64,
    pub envelope_sigma: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_dim(1)
    }
}

impl SolverConfig {
    /// Defaults `s₀ = d/2 + 2.5`, `s = s₀ + 1.01`.
    pub fn for_dim(dim: usize) -> Self {
        let s0 = dim as f64 / 2.0 + 2.5;
        Self {
            t_final: 0.25,
            steps: 32,
            s: s0 + 1.01,
            s0,
            n_max: 12,
            tol: 1e-8,
            lifespan: LifespanConstants::default(),
            inner_tol: 1e-12,
            inner_max_iter: 200,
            cube_sum: CubeSum::One,
            recheck_trapping: true,
            envelope_delta: 0.25,
            envelope_sigma: 3.0,
        }
    }

    /// Cubic-class defaults: `ℓ²` cube sums and `s > (d + 3)/2`.
    pub fn cubic(dim: usize) -> Self {
        let s = (dim as f64 + 3.0) / 2.0 + 0.5;
        Self { s, s0: s - 0.5, cube_sum: CubeSum::Two, envelope_sigma: 1.0, ..Self::for_dim(dim) }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn validate(&self, dim: usize, class: InteractionClass) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) || self.steps == 0 {
            return bad("T must be positive with at least one step");
        }
        if !(self.s > self.s0) {
            return bad("s must exceed s0");
        }
        match class {
            InteractionClass::Quadratic if !(self.s0 > dim as f64 / 2.0 + 2.0) => return bad("s0 must exceed d/2 + 2"),
            InteractionClass::Cubic if !(self.s > (dim as f64 + 3.0) / 2.0) => return bad("s must exceed (d + 3)/2"),
            _ => {}
        }
        if !(self.tol > 0.0 && self.inner_tol > 0.0) || self.n_max == 0 || self.inner_max_iter == 0 {
            return bad("tolerances and iteration caps must be positive");
        }
        Ok(())
    }
}

/// `min(T_user, e^{−C(M) L}/K(M_s))`; zero data have no lifespan restriction.
pub fn lifespan_bound(m: f64, m_s: f64, l: f64, t_user: f64, k: &LifespanConstants) -> f64 {
    if m == 0.0 && m_s == 0.0 {
        return t_user;
    }
    let c = k.c_scale * (1.0 + m) * (1.0 + m);
    let kk = 1.0 + k.k_scale * m_s * m_s;
    t_user.min((-c * l).exp() / kk)
}

fn flatten(f: &Field) -> Vec<C64> {
    f.comps().concat()
}

fn unflatten(spec: GridSpec, m: usize, v: Vec<C64>) -> Field {
    let n = spec.len();
    Field::new(spec, (0..m).map(|a| v[a * n..(a + 1) * n].to_vec()).collect()).expect("shape")
}

fn rdot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn rnorm(a: &[C64]) -> f64 {
    rdot(a, a).sqrt()
}

/// Outcome of [`gmres`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub residual: f64,
    pub iterations: usize,
}

/// Restarted right-preconditioned GMRES for a real-linear operator on `ℂ^N`,
/// with the real inner product `Re⟨a, b⟩`.
pub fn gmres(
    a: &dyn Fn(&[C64]) -> Vec<C64>,
    prec: &dyn Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    x0: Vec<C64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, SolveInfo)> {
    const RESTART: usize = 40;
    let bnorm = rnorm(b);
    if bnorm == 0.0 {
        return Ok((vec![C64::default(); b.len()], SolveInfo { residual: 0.0, iterations: 0 }));
    }
    let mut x = x0;
    let mut iters = 0;
    loop {
        let ax = a(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = rnorm(&r);
        if beta <= tol * bnorm {
            return Ok((x, SolveInfo { residual: beta / bnorm, iterations: iters }));
        }
        if iters >= max_iter {
            return Err(Error::SolveStagnated { residual: beta / bnorm, iterations: iters });
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h = vec![vec![0.0; RESTART]; RESTART + 1];
        let (mut cs, mut sn) = (vec![0.0; RESTART], vec![0.0; RESTART]);
        let mut g = vec![0.0; RESTART + 1];
        g[0] = beta;
        let mut k = 0;
        while k < RESTART && iters < max_iter {
            let mut w = a(&prec(&v[k]));
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = rdot(vi, &w);
                    h[i][k] += c;
                    w.iter_mut().zip(vi).for_each(|(wz, vz)| *wz -= c * vz);
                }
            }
            let hn = rnorm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / den;
            sn[k] = h[k + 1][k] / den;
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iters += 1;
            k += 1;
            if g[k].abs() <= tol * bnorm || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut comb = vec![C64::default(); b.len()];
        for (yi, vi) in y.iter().zip(&v) {
            comb.iter_mut().zip(vi).for_each(|(c, z)| *c += yi * z);
        }
        x.iter_mut().zip(prec(&comb)).for_each(|(xz, d)| *xz += d);
    }
}

/// Per-step record of a linear march.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub l2: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// One implicit-midpoint step `i(w₁ − w₀)/dt + L(w₀ + w₁)/2 = f` with a
/// prepared operator. The inner solve is preconditioned by the free
/// resolvent `(1 + i dt |ξ|²/2)^{-1}`.
pub fn midpoint_step(op: &ParadiffOperator, w: &Field, f: &Field, dt: f64, tol: f64, max_iter: usize) -> Result<(Field, SolveInfo)> {
    let spec = *w.spec();
    let m = w.m();
    let half = C64::new(0.0, 0.5 * dt);
    let lw = op.apply(w);
    let rhs = w.axpy(half, &lw).axpy(C64::new(0.0, -dt), f);
    let apply = |v: &[C64]| -> Vec<C64> {
        let fv = unflatten(spec, m, v.to_vec());
        flatten(&fv.axpy(-half, &op.apply(&fv)))
    };
    let res: Vec<C64> = (0..spec.len())
        .map(|i| {
            let r = spec.frequency_norm(i);
            C64::new(1.0, 0.5 * dt * r * r).inv()
        })
        .collect();
    let n = spec.len();
    let prec = |v: &[C64]| -> Vec<C64> {
        let mut out = v.to_vec();
        for a in 0..m {
            let blk = &mut out[a * n..(a + 1) * n];
            dft_inplace(&spec, blk, false);
            blk.iter_mut().zip(&res).for_each(|(z, r)| *z *= r);
            dft_inplace(&spec, blk, true);
        }
        out
    };
    let (x, info) = gmres(&apply, &prec, &flatten(&rhs), flatten(w), tol, max_iter)?;
    Ok((unflatten(spec, m, x), info))
}

/// [`midpoint_step`] with the operator built from a frozen coefficient set.
pub fn linear_step(cs: &crate::model::CoefficientSet, w: &Field, f: &Field, dt: f64, tol: f64) -> Result<(Field, SolveInfo)> {
    midpoint_step(&ParadiffOperator::new(cs), w, f, dt, tol, 500)
}

/// A march of the linear flow.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub w: SpacetimeField,
    pub steps: Vec<StepRecord>,
}

fn march(times: &[f64], w0: &Field, cfg: &SolverConfig, mut step_data: impl FnMut(usize) -> Result<(ParadiffOperator, Field)>) -> Result<LinearSolution> {
    let mut slices = vec![w0.clone()];
    let mut steps = vec![StepRecord { t: times[0], l2: w0.l2_norm(), residual: 0.0, iterations: 0 }];
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let (op, f) = step_data(k)?;
        let (w, info) = midpoint_step(&op, &slices[k], &f, dt, cfg.inner_tol, cfg.inner_max_iter)?;
        if !w.is_finite() {
            return Err(Error::Integrator(format!("non-finite state at t = {}", times[k + 1])));
        }
        steps.push(StepRecord { t: times[k + 1], l2: w.l2_norm(), residual: info.residual, iterations: info.iterations });
        slices.push(w);
    }
    Ok(LinearSolution { w: SpacetimeField::new(times.to_vec(), slices)?, steps })
}

fn midpoint(a: &Field, b: &Field) -> Field {
    a.add(b).scaled(C64::new(0.5, 0.0))
}

/// March `i w_t + L(u_ref) w = f` on the time grid of `u_ref`, with
/// coefficients and forcing taken at each step midpoint.
pub fn solve_linear(u_ref: &SpacetimeField, w0: &Field, f: &SpacetimeField, nl: &dyn Nonlinearity, cfg: &SolverConfig) -> Result<LinearSolution> {
    if f.times() != u_ref.times() {
        return Err(Error::InvalidTimeAxis("forcing and reference must share the time grid".into()));
    }
    let times = u_ref.times().to_vec();
    march(&times, w0, cfg, |k| {
        let ubar = midpoint(u_ref.slice(k), u_ref.slice(k + 1));
        let cs = linearized_coeffs(&ubar, nl)?;
        Ok((ParadiffOperator::new(&cs), midpoint(f.slice(k), f.slice(k + 1))))
    })
}

/// Per-iterate diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub n: usize,
    /// `‖u^{(n)}‖_{ℓ^pX^s}`.
    pub norm_s: f64,
    pub norm_s0: f64,
    /// `‖χ_{>R/2} u^{(n)}‖_{ℓ^pX^{s₀}}`.
    pub exterior_s0: f64,
    /// `‖u^{(n)} − u^{(n−1)}‖_{ℓ^pX⁰}`.
    pub diff_x0: f64,
    /// The same difference in `ℓ^pX^σ`, `σ = s₀ − 1.01`.
    pub diff_sigma: f64,
    pub trap: Option<TrapReport>,
    pub max_inner_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// `M = ‖u₀‖_{ℓ^pH^{s₀}}` and `M_s`.
    pub m: f64,
    pub m_s: f64,
    pub epsilon: f64,
    pub data_trap: TrapReport,
    pub lifespan_bound: f64,
    pub records: Vec<IterateRecord>,
}

impl IterationTrace {
    pub fn diffs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.diff_x0).collect()
    }

    /// `d_{n+1}/d_n` for consecutive differences.
    pub fn ratios(&self) -> Vec<(usize, f64)> {
        self.records.windows(2).map(|w| (w[1].n, w[1].diff_x0 / w[0].diff_x0)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: SpacetimeField,
    pub trace: IterationTrace,
    pub converged: bool,
    pub diverged: bool,
    /// Step records of the last linear march.
    pub steps: Vec<StepRecord>,
}

fn cube_norm(u: &SpacetimeField, s: f64, p: CubeSum) -> Result<f64> {
    Ok(lp_xs_norm(u, s, p)?.value)
}

fn exterior_weights(spec: &GridSpec, r: f64) -> Vec<f64> {
    (0..spec.len())
        .map(|i| {
            let x = spec.position(i);
            exterior_cutoff(0.5 * r, x[0].hypot(x[1]))
        })
        .collect()
}

/// The nonlinear iteration: `u^{(0)} = 0` and `u^{(n+1)}` solves the linear
/// flow with coefficients from `u^{(n)}`, data `u₀` and forcing `G(u^{(n)})`.
///
/// Runs on `[0, cfg.t_final]`; the lifespan bound from the data parameters is
/// computed and reported alongside.
pub fn iterate(u0: &Field, nl: &dyn Nonlinearity, cfg: &SolverConfig, trap: &TrapConfig) -> Result<Solution> {
    let spec = *u0.spec();
    cfg.validate(spec.dim, nl.class())?;
    let p = cfg.cube_sum;
    let trap = TrapConfig { s0: cfg.s0, ..trap.clone() };
    let (_, g0, r) = data_radius(u0, nl, &trap)?;
    let m = lp_hs_norm(u0, cfg.s0, p).value;
    let m_s = lp_hs_norm(u0, cfg.s, p).value;
    let data_trap = compute_l(&GridMetric::new(&g0), r, m, &trap)?;
    let lifespan = lifespan_bound(m, m_s, data_trap.l, cfg.t_final, &cfg.lifespan);
    let times: Vec<f64> = (0..=cfg.steps).map(|k| cfg.t_final * k as f64 / cfg.steps as f64).collect();
    let ext_w = exterior_weights(&spec, r);
    let sigma = cfg.s0 - 1.01;

    let mut prev = SpacetimeField::new(times.clone(), vec![Field::zeros(spec, u0.m()); times.len()])?;
    let mut records: Vec<IterateRecord> = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut last_steps = Vec::new();
    for n in 1..=cfg.n_max {
        let sol = march(&times, u0, cfg, |k| {
            let ubar = midpoint(prev.slice(k), prev.slice(k + 1));
            let cs = linearized_coeffs(&ubar, nl)?;
            let op = ParadiffOperator::new(&cs);
            let g = remainder_g_with(&ubar, nl, &cs, &op)?;
            Ok((op, g))
        })?;
        let u = sol.w;
        let diff = u.sub(&prev)?;
        let trap_n = if cfg.recheck_trapping {
            let gn = metric_of(u.slice(u.len() - 1), nl)?;
            Some(compute_l(&GridMetric::new(&gn), r, m, &trap)?)
        } else {
            None
        };
        let rec = IterateRecord {
            n,
            norm_s: cube_norm(&u, cfg.s, p)?,
            norm_s0: cube_norm(&u, cfg.s0, p)?,
            exterior_s0: cube_norm(&u.map_slices(|f| f.weighted(&ext_w)), cfg.s0, p)?,
            diff_x0: cube_norm(&diff, 0.0, p)?,
            diff_sigma: cube_norm(&diff, sigma, p)?,
            trap: trap_n,
            max_inner_iterations: sol.steps.iter().map(|s| s.iterations).max().unwrap_or(0),
        };
        let d = rec.diff_x0;
        records.push(rec);
        prev = u;
        last_steps = sol.steps;
        if d <= cfg.tol {
            converged = true;
            break;
        }
        let k = records.len();
        if k >= 3 && records[k - 1].diff_x0 > records[k - 2].diff_x0 && records[k - 2].diff_x0 > records[k - 3].diff_x0 {
            diverged = true;
            break;
        }
    }
    Ok(Solution {
        u: prev,
        trace: IterationTrace { m, m_s, epsilon: trap.epsilon, data_trap, lifespan_bound: lifespan, records },
        converged,
        diverged,
        steps: last_steps,
    })
}

/// Direct pseudo-spectral integration of `i u_t + ∂_j(g^{jk}(u)∂_k u) = F(u)`
/// by classical RK4 with `substeps` steps per output interval.
pub fn direct_reference(u0: &Field, nl: &dyn Nonlinearity, times: &[f64], substeps: usize) -> Result<SpacetimeField> {
    let rhs = |u: &Field| -> Result<Field> {
        let g = metric_of(u, nl)?;
        let f = forcing_of(u, nl)?;
        Ok(divergence_form(&g, u).sub(&f).scaled(C64::new(0.0, 1.0)))
    };
    let mut u = u0.clone();
    let mut slices = vec![u.clone()];
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            let k1 = rhs(&u)?;
            let k2 = rhs(&u.axpy(C64::new(0.5 * h, 0.0), &k1))?;
            let k3 = rhs(&u.axpy(C64::new(0.5 * h, 0.0), &k2))?;
            let k4 = rhs(&u.axpy(C64::new(h, 0.0), &k3))?;
            let inc = k1.add(&k2.scaled(C64::new(2.0, 0.0))).add(&k3.scaled(C64::new(2.0, 0.0))).add(&k4);
            u = u.axpy(C64::new(h / 6.0, 0.0), &inc);
        }
        slices.push(u.clone());
    }
    SpacetimeField::new(times.to_vec(), slices)
}

/// Comparison of solution blocks with the envelope of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTrace {
    /// Envelope `c_k` of the data blocks `2^{ks}‖S_k u₀‖_{ℓ^p_k L²}`.
    pub envelope: Vec<f64>,
    /// `2^{ks}‖S_k u‖_{ℓ^p_k X_k}`.
    pub solution_blocks: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `max_k` of `ratios`.
    pub max_ratio: f64,
    /// `(t, max_k ‖S_k u(t)‖_{L²}/c⁰_k)` with `c⁰` the envelope of the plain `L²` data blocks.
    pub l2_ratio_by_time: Vec<(f64, f64)>,
}

fn band_l2_blocks(f: &Field) -> Vec<f64> {
    let spec = *f.spec();
    let b = bands(&spec);
    let hats: Vec<Vec<C64>> = f
        .comps()
        .iter()
        .map(|c| {
            let mut h = c.clone();
            dft_inplace(&spec, &mut h, false);
            h
        })
        .collect();
    (0..=b.top())
        .map(|k| {
            let mask = b.band(k).unwrap_or(&[]);
            let s: f64 = hats.iter().map(|h| h.iter().zip(mask).map(|(z, w)| (z * w).norm_sqr()).sum::<f64>()).sum();
            (s * spec.cell_volume()).sqrt()
        })
        .collect()
}

pub fn envelope_trace(u: &SpacetimeField, s: f64, cfg: &SolverConfig) -> Result<EnvelopeTrace> {
    let p = cfg.cube_sum;
    let weight = |k: usize| 2.0_f64.powf(k as f64 * s);
    let data: Vec<f64> = lp_hs_norm(u.slice(0), s, p).per_scale.iter().map(|&(k, v)| weight(k) * v).collect();
    let env = make_envelope(&data, cfg.envelope_delta, cfg.envelope_sigma)?;
    let sol: Vec<f64> = lp_xs_norm(u, s, p)?.per_scale.iter().map(|&(k, v)| weight(k) * v).collect();
    let ratio = |a: &[f64], c: &[f64]| -> Vec<f64> { a.iter().zip(c).map(|(a, c)| if *c > 0.0 { a / c } else { 0.0 }).collect() };
    let ratios = ratio(&sol, &env.c);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let l2_env = make_envelope(&band_l2_blocks(u.slice(0)), cfg.envelope_delta, cfg.envelope_sigma)?;
    let l2_ratio_by_time = u.times().iter().zip(u.slices()).map(|(&t, f)| (t, ratio(&band_l2_blocks(f), &l2_env.c).into_iter().fold(0.0, f64::max))).collect();
    Ok(EnvelopeTrace { envelope: env.c, solution_blocks: sol, ratios, max_ratio, l2_ratio_by_time })
}

/// One row of the continuous dependence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceRow {
    pub delta: f64,
    pub converged: bool,
    /// `(σ, ‖u₁ − u₂‖_{ℓ^pX^σ}, ‖u₁(0) − u₂(0)‖_{ℓ^pH^σ}, ratio)`.
    pub by_sigma: Vec<(f64, f64, f64, f64)>,
    /// `‖g(u₀ + δφ) − g(u₀)‖_{C⁰}` against the data's stability margin.
    pub metric_change: f64,
    pub within_margin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceTable {
    pub base_converged: bool,
    pub sigmas: Vec<f64>,
    pub rows: Vec<DependenceRow>,
    /// Deltas whose run did not converge, excluded from comparisons.
    pub excluded: Vec<f64>,
}

impl DependenceTable {
    /// `max/min` of the ratios at one `σ` over the included rows.
    pub fn spread(&self, sigma_index: usize) -> f64 {
        let r: Vec<f64> = self.rows.iter().filter(|r| r.converged).map(|r| r.by_sigma[sigma_index].3).collect();
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Solve for `u₀ + δ φ` for each `δ` and compare with the solution for `u₀`.
pub fn continuous_dependence(u0: &Field, phi: &Field, deltas: &[f64], nl: &dyn Nonlinearity, cfg: &SolverConfig, trap: &TrapConfig) -> Result<DependenceTable> {
    let base = iterate(u0, nl, cfg, trap)?;
    let sigmas = vec![0.0, cfg.s0 - 1.01];
    let p = cfg.cube_sum;
    let g0 = metric_of(u0, nl)?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &delta in deltas {
        let data = u0.axpy(C64::new(delta, 0.0), phi);
        let run = iterate(&data, nl, cfg, trap)?;
        if !run.converged || !base.converged {
            excluded.push(delta);
        }
        let diff = run.u.sub(&base.u)?;
        let d0 = data.sub(u0);
        let by_sigma = sigmas
            .iter()
            .map(|&s| {
                let num = cube_norm(&diff, s, p)?;
                let den = lp_hs_norm(&d0, s, p).value;
                Ok((s, num, den, if den > 0.0 { num / den } else { f64::NAN }))
            })
            .collect::<Result<Vec<_>>>()?;
        let g1 = metric_of(&data, nl)?;
        let metric_change = g0
            .entries()
            .iter()
            .zip(g1.entries())
            .map(|(a, b)| (0..2).flat_map(|j| (0..2).map(move |k| (a[j][k] - b[j][k]).abs())).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        rows.push(DependenceRow {
            delta,
            converged: run.converged && base.converged,
            by_sigma,
            metric_change,
            within_margin: metric_change <= base.trace.data_trap.margin,
        });
    }
    Ok(DependenceTable { base_converged: base.converged, sigmas, rows, excluded })
}

/// Measured analogues of the local energy bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergyReport {
    /// `‖u‖_{ℓ^pX⁰}`.
    pub x0: f64,
    /// The same norm of the incoming part.
    pub incoming: f64,
    /// `‖χ_{<R} u‖_{L²H^{1/2}}`.
    pub compact: f64,
    pub data_l2: f64,
    /// Upper `Y` bound of the balanced forcing `G(u)`.
    pub forcing_y: f64,
    pub ratio_x0: f64,
    pub ratio_incoming: f64,
    pub ratio_compact: f64,
    /// `compact / (incoming + data)`.
    pub compact_constant: f64,
}

/// Incoming part of a field: angular Fourier sectors, each masked to the
/// region `|x| > R`, `cos∠(x, ξ) < −1/4`.
pub fn incoming_part(f: &Field, r: f64) -> Field {
    let spec = *f.spec();
    let sectors: Vec<f64> = if spec.dim == 1 { vec![0.0, PI] } else { (0..8).map(|s| 2.0 * PI * s as f64 / 8.0).collect() };
    let width = 2.0 * PI / sectors.len() as f64;
    let mut out = Field::zeros(spec, f.m());
    for &theta in &sectors {
        let dir = [theta.cos(), theta.sin()];
        let mask: Vec<f64> = (0..spec.len())
            .map(|i| {
                let k = spec.frequency(i);
                if k[0] == 0.0 && k[1] == 0.0 {
                    return 0.0;
                }
                let ang = k[1].atan2(k[0]);
                let d = (ang - theta + PI).rem_euclid(2.0 * PI) - PI;
                if d.abs() < 0.5 * width || (d.abs() - 0.5 * width).abs() < 1e-12 && d > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let spatial: Vec<f64> = (0..spec.len())
            .map(|i| {
                let x = spec.position(i);
                let rho = x[0].hypot(x[1]);
                if rho == 0.0 {
                    return 0.0;
                }
                let c = (x[0] * dir[0] + x[1] * dir[1]) / rho;
                above(r, 2.0 * r, rho) * below(-0.5, -0.25, c)
            })
            .collect();
        let comps =
            f.comps().iter().map(|c| crate::spectral::apply_multiplier(&spec, c, &mask).into_iter().zip(&spatial).map(|(z, w)| z * w).collect()).collect();
        out = out.add(&Field::new(spec, comps).expect("shape"));
    }
    out
}

/// `(∫ ‖⟨D⟩^{1/2}(χ_{<R} u)‖² dt)^{1/2}`.
pub fn compact_norm(u: &SpacetimeField, r: f64) -> f64 {
    let spec = *u.spec();
    let cut: Vec<f64> = (0..spec.len())
        .map(|i| {
            let x = spec.position(i);
            lowpass_profile(x[0].hypot(x[1]) / r)
        })
        .collect();
    let sym: Vec<f64> = (0..spec.len()).map(|i| (1.0 + spec.frequency_norm(i).powi(2)).powf(0.25)).collect();
    let w = u.time_weights();
    let s: f64 = u
        .slices()
        .iter()
        .zip(&w)
        .map(|(f, wt)| {
            let g = f.weighted(&cut);
            let comps = g.comps().iter().map(|c| crate::spectral::apply_multiplier(&spec, c, &sym)).collect();
            wt * Field::new(spec, comps).expect("shape").l2_norm().powi(2)
        })
        .sum();
    s.sqrt()
}

pub fn local_energy_report(u: &SpacetimeField, nl: &dyn Nonlinearity, r: f64, p: CubeSum) -> Result<LocalEnergyReport> {
    let x0 = cube_norm(u, 0.0, p)?;
    let incoming = cube_norm(&u.map_slices(|f| incoming_part(f, r)), 0.0, p)?;
    let compact = compact_norm(u, r);
    let data_l2 = u.slice(0).l2_norm();
    let g = u
        .slices()
        .iter()
        .map(|f| {
            let cs = linearized_coeffs(f, nl)?;
            remainder_g_with(f, nl, &cs, &ParadiffOperator::new(&cs))
        })
        .collect::<Result<Vec<_>>>()?;
    let forcing_y = y_surrogate(&SpacetimeField::new(u.times().to_vec(), g)?, YScale::Plain).upper;
    let base = data_l2 + forcing_y;
    let ratio = |v: f64| if base > 0.0 { v / base } else { 0.0 };
    Ok(LocalEnergyReport {
        x0,
        incoming,
        compact,
        data_l2,
        forcing_y,
        ratio_x0: ratio(x0),
        ratio_incoming: ratio(incoming),
        ratio_compact: ratio(compact),
        compact_constant: if incoming + base > 0.0 { compact / (incoming + base) } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientSet;
    use crate::sample::gaussian;

    #[test]
    fn lifespan_shape() {
        let k = LifespanConstants::default();
        assert_eq!(lifespan_bound(0.0, 0.0, 32.0, 0.5, &k), 0.5);
        let t = lifespan_bound(1.0, 0.0, 8.0, 1.0, &k);
        assert!((t - (-32.0_f64).exp()).abs() < 1e-25);
        let t1 = lifespan_bound(1.0, 2.0, 8.0, 1.0, &k);
        let t2 = lifespan_bound(1.0, 2.0, 16.0, 1.0, &k);
        assert!(t2 >= t1 * t1 && t2 < t1);
    }

    #[test]
    fn free_step_matches_cayley() {
        let spec = GridSpec::new(1, 64, 5).unwrap();
        let w = gaussian(&spec, 1.0, [0.0, 0.0], 2.0, [1.0, 0.0]);
        let cs = CoefficientSet::flat(spec, 1);
        let dt = 0.01;
        let (w1, info) = linear_step(&cs, &w, &Field::zeros(spec, 1), dt, 1e-13).unwrap();
        assert!(info.residual <= 1e-13);
        let mut hat = w.comp(0).to_vec();
        dft_inplace(&spec, &mut hat, false);
        for (i, z) in hat.iter_mut().enumerate() {
            let k2 = spec.frequency_norm(i).powi(2);
            *z *= C64::new(1.0, -0.5 * dt * k2) / C64::new(1.0, 0.5 * dt * k2);
        }
        dft_inplace(&spec, &mut hat, true);
        let err = w1.comp(0).iter().zip(&hat).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }
}
