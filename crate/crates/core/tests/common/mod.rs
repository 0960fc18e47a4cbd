//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use qls_core::model::{BuiltinNonlinearity, Factor, InteractionClass, MetricModel, Monomial};
use qls_core::nontrap::TrapConfig;
use qls_core::sample::{gaussian, random_field};
use qls_core::solver::SolverConfig;
use qls_core::spectral::{Field, GridSpec};
use qls_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_fields(spec: &GridSpec, count: usize, decay: f64, seed: u64) -> Vec<Field> {
    let mut r = rng(seed);
    (0..count).map(|_| random_field(spec, 1, decay, &mut r)).collect()
}

/// `g = (1 + Re u) I`, `F = u u_x`: the small quadratic 1D model.
pub fn quadratic_nl() -> BuiltinNonlinearity {
    BuiltinNonlinearity {
        m: 1,
        metric: MetricModel::Linear { beta: 1.0 },
        forcing: vec![Monomial::new(1.0, vec![Factor::U { comp: 0 }, Factor::Du { axis: 0, comp: 0 }])],
        class: InteractionClass::Quadratic,
        c0: 0.5,
    }
}

/// Gaussian packet of amplitude 0.1, width 1.5, frequency 1 on `n` points of a box of side 64.
pub fn quadratic_data(n: usize) -> Field {
    let spec = GridSpec::new(1, n, 6).unwrap();
    gaussian(&spec, 0.1, [0.0, 0.0], 1.5, [1.0, 0.0])
}

pub fn quadratic_solver() -> SolverConfig {
    SolverConfig { t_final: 0.05, steps: 16, ..SolverConfig::for_dim(1) }
}

pub fn quadratic_trap() -> TrapConfig {
    TrapConfig { s0: quadratic_solver().s0, ..TrapConfig::for_dim(1) }
}

/// Unitary DFT by direct summation, `O(N²)`.
pub fn naive_dft(spec: &GridSpec, data: &[C64]) -> Vec<C64> {
    let n = spec.n;
    let tw: Vec<C64> = (0..n).map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
    let axis = |v: &[C64]| -> Vec<C64> { (0..n).map(|k| (0..n).map(|i| v[i] * tw[(i * k) % n]).sum::<C64>() / (n as f64).sqrt()).collect() };
    if spec.dim == 1 {
        return axis(data);
    }
    let mut rows = vec![C64::default(); n * n];
    for i in 0..n {
        let r = axis(&data[i * n..(i + 1) * n]);
        rows[i * n..(i + 1) * n].copy_from_slice(&r);
    }
    let mut out = vec![C64::default(); n * n];
    for j in 0..n {
        let col: Vec<C64> = (0..n).map(|i| rows[i * n + j]).collect();
        for (i, v) in axis(&col).into_iter().enumerate() {
            out[i * n + j] = v;
        }
    }
    out
}

/// Inverse of [`naive_dft`], via conjugation.
pub fn naive_idft(spec: &GridSpec, hat: &[C64]) -> Vec<C64> {
    let c: Vec<C64> = hat.iter().map(|z| z.conj()).collect();
    naive_dft(spec, &c).into_iter().map(|z| z.conj()).collect()
}

/// `1` on `[0, 1]`, `0` on `[2, ∞)`, `cos²(π/2 · log₂ r)` between.
pub fn oracle_lowpass(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        (0.5 * PI * r.log2()).cos().powi(2)
    }
}

fn signed(i: usize, n: usize) -> f64 {
    if i < n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// `|ξ|` of flat index `idx`, recomputed from scratch.
pub fn oracle_freq(spec: &GridSpec, idx: usize) -> f64 {
    let n = spec.n;
    let p = spec.period();
    let (a, b) = if spec.dim == 1 { (idx, None) } else { (idx / n, Some(idx % n)) };
    let ka = 2.0 * PI * signed(a, n) / p;
    let kb = b.map_or(0.0, |b| 2.0 * PI * signed(b, n) / p);
    ka.hypot(kb)
}

/// Number of dyadic bands so that the last one reaches the Nyquist corner.
pub fn oracle_top(spec: &GridSpec) -> usize {
    let m = (spec.dim as f64).sqrt() * PI * spec.n as f64 / spec.period();
    if m <= 1.0 {
        0
    } else {
        m.log2().ceil() as usize
    }
}

pub fn oracle_band_mask(spec: &GridSpec, k: usize) -> Vec<f64> {
    (0..spec.len())
        .map(|i| {
            let r = oracle_freq(spec, i);
            let hi = oracle_lowpass(r / (k as f64).exp2());
            let lo = if k == 0 { 0.0 } else { oracle_lowpass(r / ((k - 1) as f64).exp2()) };
            hi - lo
        })
        .collect()
}

fn oracle_bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - y * y)).exp()
    }
}

/// One-axis partition weights at side `2^j`: normalized periodic translates of a bump.
pub fn oracle_axis_weights(spec: &GridSpec, j: u32) -> Vec<Vec<f64>> {
    let n = spec.n;
    let p = spec.period();
    if j >= spec.box_exp {
        return vec![vec![1.0; n]];
    }
    let side = (j as f64).exp2();
    let count = 1usize << (spec.box_exp - j);
    let x = |i: usize| -0.5 * p + i as f64 * p / n as f64;
    let raw: Vec<Vec<f64>> = (0..count)
        .map(|q| {
            let c = -0.5 * p + (q as f64 + 0.5) * side;
            (0..n)
                .map(|i| {
                    // Sum over periodic images explicitly.
                    (-2..=2).map(|w| oracle_bump((x(i) - c + w as f64 * p) / side)).sum()
                })
                .collect()
        })
        .collect();
    let total: Vec<f64> = (0..n).map(|i| raw.iter().map(|r| r[i]).sum()).collect();
    raw.into_iter().map(|r| r.iter().zip(&total).map(|(a, t)| a / t).collect()).collect()
}

/// `Σ_k 2^{ks}`-weighted `ℓ²` sum of `Σ_Q ‖χ_Q S_k f‖_{L²}`, by direct summation.
pub fn brute_l1_hs(f: &Field, s: f64) -> f64 {
    let spec = *f.spec();
    let n = spec.n;
    let vol = spec.spacing().powi(spec.dim as i32);
    let hats: Vec<Vec<C64>> = f.comps().iter().map(|c| naive_dft(&spec, c)).collect();
    let mut total = 0.0;
    for k in 0..=oracle_top(&spec) {
        let mask = oracle_band_mask(&spec, k);
        let pieces: Vec<Vec<C64>> = hats.iter().map(|h| naive_idft(&spec, &h.iter().zip(&mask).map(|(z, m)| z * m).collect::<Vec<_>>())).collect();
        let w = oracle_axis_weights(&spec, k as u32);
        let mut block = 0.0;
        if spec.dim == 1 {
            for wq in &w {
                let e: f64 = pieces.iter().map(|p| (0..n).map(|i| wq[i] * wq[i] * p[i].norm_sqr()).sum::<f64>()).sum();
                block += (e * vol).sqrt();
            }
        } else {
            for wa in &w {
                for wb in &w {
                    let mut e = 0.0;
                    for p in &pieces {
                        for i in 0..n {
                            for j in 0..n {
                                let c = wa[i] * wb[j];
                                e += c * c * p[i * n + j].norm_sqr();
                            }
                        }
                    }
                    block += (e * vol).sqrt();
                }
            }
        }
        total += (2.0_f64.powf(k as f64 * s) * block).powi(2);
    }
    total.sqrt()
}

/// Composite 5-point Gauss-Legendre rule on `[a, b]` with `panels` panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let m = a + (p as f64 + 0.5) * h;
            X.iter().zip(&W).map(|(x, w)| w * f(m + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}
