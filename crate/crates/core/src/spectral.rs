//! Periodic grids, unitary discrete Fourier transforms, Littlewood-Paley
//! projections and smooth cube partitions of unity.
//!
//! The torus has side `2^J` and is sampled with `n` points per axis on the
//! centered box `[-2^J/2, 2^J/2)^d`. Vector-valued fields carry their
//! components as an outer axis; every operation here acts componentwise.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling of the periodic box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    /// Points per axis, a power of two.
    pub n: usize,
    /// The box side is `2^box_exp`.
    pub box_exp: u32,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, box_exp: u32) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n = {n} is not a power of two >= 4")));
        }
        if box_exp > 20 {
            return Err(Error::InvalidGrid(format!("box exponent {box_exp} too large")));
        }
        Ok(Self { dim, n, box_exp })
    }

    pub fn period(&self) -> f64 {
        (self.box_exp as f64).exp2()
    }

    pub fn spacing(&self) -> f64 {
        self.period() / self.n as f64
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of the `i`-th sample along an axis.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.period() + i as f64 * self.spacing()
    }

    /// Multi-index of a flat index; axis 0 is the slow axis.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        if self.dim == 1 {
            mi[0]
        } else {
            mi[0] * self.n + mi[1]
        }
    }

    /// Position of a flat index (second entry is zero in d = 1).
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        if self.dim == 1 {
            [self.coord(mi[0]), 0.0]
        } else {
            [self.coord(mi[0]), self.coord(mi[1])]
        }
    }

    /// Signed angular wavenumber of the `i`-th DFT bin along an axis.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let signed = if i < self.n / 2 { i as f64 } else { i as f64 - self.n as f64 };
        2.0 * PI * signed / self.period()
    }

    /// Frequency vector of a flat DFT index.
    pub fn frequency(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        if self.dim == 1 {
            [self.wavenumber(mi[0]), 0.0]
        } else {
            [self.wavenumber(mi[0]), self.wavenumber(mi[1])]
        }
    }

    pub fn frequency_norm(&self, idx: usize) -> f64 {
        let k = self.frequency(idx);
        (k[0] * k[0] + k[1] * k[1]).sqrt()
    }

    /// Largest |ξ| represented on the grid (the Nyquist corner).
    pub fn max_frequency(&self) -> f64 {
        (self.dim as f64).sqrt() * PI * self.n as f64 / self.period()
    }

    /// Index of the last dyadic band; `S_0 + ... + S_top` is the identity on the grid.
    pub fn top_band(&self) -> usize {
        let m = self.max_frequency();
        if m <= 1.0 {
            0
        } else {
            m.log2().ceil() as usize
        }
    }

    /// Finest admissible cube scale: cubes of side `2^l` contain a whole number of samples.
    pub fn finest_cube_scale(&self) -> u32 {
        let m = self.n.trailing_zeros();
        self.box_exp.saturating_sub(m)
    }
}

/// Complex samples of an `m`-component field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    spec: GridSpec,
    comps: Vec<Vec<C64>>,
}

/// Unitary DFT coefficients of a [`Field`]; same layout as the samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyField {
    spec: GridSpec,
    comps: Vec<Vec<C64>>,
}

fn check_comps(spec: &GridSpec, comps: &[Vec<C64>]) -> Result<()> {
    if comps.is_empty() {
        return Err(Error::InvalidArgument("field needs at least one component".into()));
    }
    for c in comps {
        if c.len() != spec.len() {
            return Err(Error::SizeMismatch { expected: spec.len(), got: c.len() });
        }
    }
    Ok(())
}

impl Field {
    pub fn new(spec: GridSpec, comps: Vec<Vec<C64>>) -> Result<Self> {
        check_comps(&spec, &comps)?;
        Ok(Self { spec, comps })
    }

    pub fn zeros(spec: GridSpec, m: usize) -> Self {
        Self { spec, comps: vec![vec![C64::default(); spec.len()]; m.max(1)] }
    }

    /// Scalar field sampled from a function of position.
    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 2]) -> C64) -> Self {
        let c = (0..spec.len()).map(|i| f(spec.position(i))).collect();
        Self { spec, comps: vec![c] }
    }

    /// Multi-component field sampled from a function of position.
    pub fn from_fn_m(spec: GridSpec, m: usize, f: impl Fn([f64; 2], usize) -> C64) -> Self {
        let comps = (0..m).map(|a| (0..spec.len()).map(|i| f(spec.position(i), a)).collect()).collect();
        Self { spec, comps }
    }

    pub fn from_real(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(spec, vec![values.into_iter().map(|v| C64::new(v, 0.0)).collect()])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Vec<C64>] {
        &self.comps
    }

    pub fn comp(&self, a: usize) -> &[C64] {
        &self.comps[a]
    }

    pub fn comp_mut(&mut self, a: usize) -> &mut Vec<C64> {
        &mut self.comps[a]
    }

    pub fn into_comps(self) -> Vec<Vec<C64>> {
        self.comps
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Pointwise squared modulus summed over components.
    pub fn density(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.len()];
        for c in &self.comps {
            for (o, z) in out.iter_mut().zip(c) {
                *o += z.norm_sqr();
            }
        }
        out
    }

    /// Grid L² norm, `(h^d Σ |f|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.density().iter().sum::<f64>() * self.spec.cell_volume()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.density().iter().fold(0.0_f64, |m, &v| m.max(v)).sqrt()
    }

    /// Grid inner product `h^d Σ_a Σ_x f_a conj(g_a)`.
    pub fn inner(&self, other: &Field) -> C64 {
        let mut s = C64::default();
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                s += x * y.conj();
            }
        }
        s * self.spec.cell_volume()
    }

    pub fn scaled(&self, s: C64) -> Field {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        Field { spec: self.spec, comps: self.comps.iter().map(|c| c.iter().map(|&z| f(z)).collect()).collect() }
    }

    pub fn conj(&self) -> Field {
        self.map(|z| z.conj())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: C64, other: &Field) -> Field {
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect()).collect();
        Field { spec: self.spec, comps }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// Multiply every component by a real weight field.
    pub fn weighted(&self, w: &[f64]) -> Field {
        self.map_indexed(|i, z| z * w[i])
    }

    fn map_indexed(&self, f: impl Fn(usize, C64) -> C64) -> Field {
        Field { spec: self.spec, comps: self.comps.iter().map(|c| c.iter().enumerate().map(|(i, &z)| f(i, z)).collect()).collect() }
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        if self.m() != other.m() {
            return Err(Error::ComponentMismatch(self.m(), other.m()));
        }
        Ok(())
    }
}

impl FrequencyField {
    pub fn new(spec: GridSpec, comps: Vec<Vec<C64>>) -> Result<Self> {
        check_comps(&spec, &comps)?;
        Ok(Self { spec, comps })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Vec<C64>] {
        &self.comps
    }

    pub fn comp(&self, a: usize) -> &[C64] {
        &self.comps[a]
    }

    pub fn comp_mut(&mut self, a: usize) -> &mut Vec<C64> {
        &mut self.comps[a]
    }

    /// Same normalization as [`Field::l2_norm`]; equal to it by Plancherel.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.comps.iter().flatten().map(|z| z.norm_sqr()).sum();
        (s * self.spec.cell_volume()).sqrt()
    }

    /// Multiply every component by a real Fourier multiplier.
    pub fn apply_mask(&mut self, mask: &[f64]) {
        for c in &mut self.comps {
            for (z, &w) in c.iter_mut().zip(mask) {
                *z *= w;
            }
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn transpose_square(data: &mut [C64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// In-place unitary DFT of one component.
pub fn dft_inplace(spec: &GridSpec, data: &mut [C64], inverse: bool) {
    let n = spec.n;
    let fft = plan(n, inverse);
    let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    if spec.dim == 2 {
        transpose_square(data, n);
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, n);
    }
    let s = 1.0 / (spec.len() as f64).sqrt();
    for z in data.iter_mut() {
        *z *= s;
    }
}

pub fn to_frequency(f: &Field) -> FrequencyField {
    let mut comps = f.comps.clone();
    for c in &mut comps {
        dft_inplace(&f.spec, c, false);
    }
    FrequencyField { spec: f.spec, comps }
}

pub fn from_frequency(f: &FrequencyField) -> Field {
    let mut comps = f.comps.clone();
    for c in &mut comps {
        dft_inplace(&f.spec, c, true);
    }
    Field { spec: f.spec, comps }
}

/// Apply a real Fourier multiplier to one component.
pub fn apply_multiplier(spec: &GridSpec, data: &[C64], mask: &[f64]) -> Vec<C64> {
    let mut buf = data.to_vec();
    dft_inplace(spec, &mut buf, false);
    for (z, &w) in buf.iter_mut().zip(mask) {
        *z *= w;
    }
    dft_inplace(spec, &mut buf, true);
    buf
}

/// Symbol `i ξ_axis` of `∂_axis`, with the Nyquist bin of that axis zeroed so
/// the discrete derivative stays skew-adjoint and maps real data to real data.
pub fn derivative_symbol(spec: &GridSpec, axis: usize) -> Vec<C64> {
    (0..spec.len())
        .map(|idx| {
            let mi = spec.multi_index(idx);
            if mi[axis] == spec.n / 2 {
                C64::default()
            } else {
                C64::new(0.0, spec.frequency(idx)[axis])
            }
        })
        .collect()
}

/// Exact derivative of band-limited data along `axis`.
pub fn spectral_derivative(f: &Field, axis: usize) -> Result<Field> {
    if axis >= f.spec.dim {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range for dimension {}", f.spec.dim)));
    }
    let sym = derivative_symbol(&f.spec, axis);
    let mut out = f.clone();
    for c in &mut out.comps {
        dft_inplace(&f.spec, c, false);
        for (z, s) in c.iter_mut().zip(&sym) {
            *z *= s;
        }
        dft_inplace(&f.spec, c, true);
    }
    Ok(out)
}

/// Raised-cosine low-pass profile: 1 on `[0, 1]`, 0 on `[2, ∞)`, `cos²` in `log2 r` between.
pub fn lowpass_profile(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let c = (0.5 * PI * r.log2()).cos();
        c * c
    }
}

/// Precomputed Littlewood-Paley masks for one grid.
#[derive(Debug)]
pub struct Bands {
    top: usize,
    band: Vec<Vec<f64>>,
    low: Vec<Vec<f64>>,
}

impl Bands {
    fn build(spec: &GridSpec) -> Self {
        let top = spec.top_band();
        let norms: Vec<f64> = (0..spec.len()).map(|i| spec.frequency_norm(i)).collect();
        let low: Vec<Vec<f64>> = (0..=top)
            .map(|k| {
                let s = (k as f64).exp2();
                norms.iter().map(|&r| lowpass_profile(r / s)).collect()
            })
            .collect();
        let band = (0..=top).map(|k| if k == 0 { low[0].clone() } else { low[k].iter().zip(&low[k - 1]).map(|(a, b)| a - b).collect() }).collect();
        Self { top, band, low }
    }

    pub fn top(&self) -> usize {
        self.top
    }

    /// Mask of `S_k`; zero for `k > top`.
    pub fn band(&self, k: usize) -> Option<&[f64]> {
        self.band.get(k).map(|v| v.as_slice())
    }

    /// Mask of `S_{≤k}`; the identity for `k ≥ top`.
    pub fn lowpass(&self, k: usize) -> &[f64] {
        &self.low[k.min(self.top)]
    }
}

/// Shared Littlewood-Paley masks for `spec`.
pub fn bands(spec: &GridSpec) -> Arc<Bands> {
    static CACHE: OnceLock<Mutex<HashMap<GridSpec, Arc<Bands>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(*spec).or_insert_with(|| Arc::new(Bands::build(spec))).clone()
}

fn masked(f: &Field, mask: &[f64]) -> Field {
    let mut hat = to_frequency(f);
    hat.apply_mask(mask);
    from_frequency(&hat)
}

/// `S_k f`. Bands above the top band are empty.
pub fn lp_project(f: &Field, k: usize) -> Field {
    let b = bands(&f.spec);
    match b.band(k) {
        Some(mask) => masked(f, mask),
        None => Field::zeros(f.spec, f.m()),
    }
}

/// `S_{≤k} f`.
pub fn lp_lowpass(f: &Field, k: usize) -> Field {
    let b = bands(&f.spec);
    masked(f, b.lowpass(k))
}

/// `S_{[lo, hi]} f`; `S_{≥N}` is `lp_range(f, N, usize::MAX)`.
pub fn lp_range(f: &Field, lo: usize, hi: usize) -> Field {
    let b = bands(&f.spec);
    let hi = hi.min(b.top());
    if lo > hi {
        return Field::zeros(f.spec, f.m());
    }
    let mask: Vec<f64> = if lo == 0 { b.lowpass(hi).to_vec() } else { b.lowpass(hi).iter().zip(b.lowpass(lo - 1)).map(|(a, c)| a - c).collect() };
    masked(f, &mask)
}

/// All dyadic pieces `S_0 f, ..., S_top f` from one forward transform.
pub fn dyadic_pieces(f: &Field) -> Vec<Field> {
    let b = bands(&f.spec);
    let hat = to_frequency(f);
    (0..=b.top())
        .map(|k| {
            let mut h = hat.clone();
            h.apply_mask(b.band(k).unwrap_or(&[]));
            from_frequency(&h)
        })
        .collect()
}

/// Samples of `x ↦ f(|x - center|_periodic)` style windows along one axis.
#[derive(Clone, Debug)]
struct AxisWindow {
    start: usize,
    weights: Vec<f64>,
}

fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - y * y)).exp()
    }
}

/// Smooth partition of unity subordinate to the cubes of side `2^scale`.
///
/// Each weight is a translated bump supported in the concentric cube of twice
/// the side, divided by the sum of all translates, separably in each axis.
#[derive(Clone, Debug)]
pub struct CubePartition {
    spec: GridSpec,
    scale: u32,
    per_axis: usize,
    windows: Vec<AxisWindow>,
}

impl CubePartition {
    pub fn new(spec: &GridSpec, scale: u32) -> Self {
        let n = spec.n;
        if scale >= spec.box_exp {
            return Self { spec: *spec, scale, per_axis: 1, windows: vec![AxisWindow { start: 0, weights: vec![1.0; n] }] };
        }
        let count = 1usize << (spec.box_exp - scale);
        let side = (scale as f64).exp2();
        let period = spec.period();
        let mut raw = vec![vec![0.0; n]; count];
        for (q, row) in raw.iter_mut().enumerate() {
            let center = -0.5 * period + (q as f64 + 0.5) * side;
            for (i, r) in row.iter_mut().enumerate() {
                let mut d = spec.coord(i) - center;
                d -= period * (d / period).round();
                *r = bump(d / side);
            }
        }
        let mut total = vec![0.0; n];
        for row in &raw {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        let windows = raw
            .into_iter()
            .map(|row| {
                let w: Vec<f64> = row.iter().zip(&total).map(|(v, t)| v / t).collect();
                let positive = w.iter().filter(|&&v| v > 0.0).count();
                if positive == n || positive == 0 {
                    return AxisWindow { start: 0, weights: if positive == 0 { vec![] } else { w } };
                }
                let start = (0..n).find(|&i| w[i] > 0.0 && w[(i + n - 1) % n] == 0.0).unwrap_or(0);
                let weights = (0..positive).map(|o| w[(start + o) % n]).collect();
                AxisWindow { start, weights }
            })
            .collect();
        Self { spec: *spec, scale, per_axis: count, windows }
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn cubes_per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.spec.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Center of cube `id`.
    pub fn center(&self, id: usize) -> [f64; 2] {
        let side = (self.scale.min(self.spec.box_exp) as f64).exp2();
        let c = |q: usize| -0.5 * self.spec.period() + (q as f64 + 0.5) * side;
        if self.spec.dim == 1 {
            [c(id), 0.0]
        } else {
            [c(id / self.per_axis), c(id % self.per_axis)]
        }
    }

    /// Visit the nonzero weights of cube `id` as `(flat index, weight)`.
    pub fn for_each_weight(&self, id: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.spec.n;
        if self.spec.dim == 1 {
            let w = &self.windows[id];
            for (o, &v) in w.weights.iter().enumerate() {
                f((w.start + o) % n, v);
            }
        } else {
            let wx = &self.windows[id / self.per_axis];
            let wy = &self.windows[id % self.per_axis];
            for (ox, &vx) in wx.weights.iter().enumerate() {
                let ix = (wx.start + ox) % n;
                for (oy, &vy) in wy.weights.iter().enumerate() {
                    f(ix * n + (wy.start + oy) % n, vx * vy);
                }
            }
        }
    }

    /// Number of grid points in the support of cube `id`.
    pub fn support_len(&self, id: usize) -> usize {
        if self.spec.dim == 1 {
            self.windows[id].weights.len()
        } else {
            self.windows[id / self.per_axis].weights.len() * self.windows[id % self.per_axis].weights.len()
        }
    }

    /// Full weight field `χ_Q` of cube `id`.
    pub fn weight_field(&self, id: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.len()];
        self.for_each_weight(id, |i, w| out[i] = w);
        out
    }
}

/// All `(cube id, χ_Q)` pairs at scale `2^j`.
pub fn cube_partition(spec: &GridSpec, j: u32) -> Vec<(usize, Vec<f64>)> {
    let p = CubePartition::new(spec, j);
    (0..p.len()).map(|id| (id, p.weight_field(id))).collect()
}

/// Uniformly sampled `u(t, x)` on `[t_0, t_last]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacetimeField {
    times: Vec<f64>,
    slices: Vec<Field>,
}

impl SpacetimeField {
    pub fn new(times: Vec<f64>, slices: Vec<Field>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidTimeAxis("empty time axis".into()));
        }
        if times.len() != slices.len() {
            return Err(Error::InvalidTimeAxis(format!("{} times but {} slices", times.len(), slices.len())));
        }
        if times.len() > 1 {
            let dt = times[1] - times[0];
            if dt <= 0.0 {
                return Err(Error::InvalidTimeAxis("times not increasing".into()));
            }
            for w in times.windows(2) {
                let step = w[1] - w[0];
                if step <= 0.0 || (step - dt).abs() > 1e-9 * dt.max(1e-300) * 10.0 {
                    return Err(Error::InvalidTimeAxis("time step is not uniform".into()));
                }
            }
        }
        let spec = *slices[0].spec();
        let m = slices[0].m();
        for s in &slices {
            if *s.spec() != spec {
                return Err(Error::GridMismatch);
            }
            if s.m() != m {
                return Err(Error::ComponentMismatch(m, s.m()));
            }
        }
        Ok(Self { times, slices })
    }

    /// Constant-in-time field sampled at `count` uniform instants of `[0, t_final]`.
    pub fn uniform(t_final: f64, count: usize, f: impl Fn(f64) -> Field) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidTimeAxis("empty time axis".into()));
        }
        let times: Vec<f64> = if count == 1 { vec![0.0] } else { (0..count).map(|i| t_final * i as f64 / (count - 1) as f64).collect() };
        let slices = times.iter().map(|&t| f(t)).collect();
        Self::new(times, slices)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn slice(&self, i: usize) -> &Field {
        &self.slices[i]
    }

    pub fn spec(&self) -> &GridSpec {
        self.slices[0].spec()
    }

    pub fn m(&self) -> usize {
        self.slices[0].m()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Trapezoid weights of the time grid.
    pub fn time_weights(&self) -> Vec<f64> {
        let nt = self.times.len();
        if nt == 1 {
            return vec![0.0];
        }
        let dt = self.times[1] - self.times[0];
        (0..nt).map(|i| if i == 0 || i == nt - 1 { 0.5 * dt } else { dt }).collect()
    }

    pub fn map_slices(&self, f: impl Fn(&Field) -> Field) -> SpacetimeField {
        SpacetimeField { times: self.times.clone(), slices: self.slices.iter().map(f).collect() }
    }

    pub fn sub(&self, other: &SpacetimeField) -> Result<SpacetimeField> {
        if self.times.len() != other.times.len() {
            return Err(Error::InvalidTimeAxis("time grids differ".into()));
        }
        let slices = self.slices.iter().zip(&other.slices).map(|(a, b)| a.sub(b)).collect();
        Ok(SpacetimeField { times: self.times.clone(), slices })
    }

    pub fn into_slices(self) -> Vec<Field> {
        self.slices
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::random_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec1() -> GridSpec {
        GridSpec::new(1, 256, 5).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(3, 64, 4).is_err());
        assert!(GridSpec::new(1, 100, 4).is_err());
        let f = Field::new(spec1(), vec![vec![C64::default(); 10]]);
        assert!(matches!(f, Err(Error::SizeMismatch { expected: 256, got: 10 })));
    }

    #[test]
    fn round_trip_and_plancherel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [spec1(), GridSpec::new(2, 32, 4).unwrap()] {
            let f = random_field(&spec, 2, 1.0, &mut rng);
            let hat = to_frequency(&f);
            assert!((hat.l2_norm() - f.l2_norm()).abs() <= 1e-12 * f.l2_norm());
            let back = from_frequency(&hat);
            let err = back.sub(&f).sup_norm();
            assert!(err <= 1e-12, "round trip error {err}");
        }
    }

    #[test]
    fn constant_lives_at_mode_zero() {
        let f = Field::from_fn(spec1(), |_| C64::new(1.0, 0.0));
        let hat = to_frequency(&f);
        let c = hat.comp(0);
        assert!((c[0].norm() - 16.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn derivative_of_plane_wave_and_sine() {
        let spec = GridSpec::new(2, 32, 3).unwrap();
        let (k0, k1) = (3.0, -5.0);
        let w0 = 2.0 * PI * k0 / spec.period();
        let w1 = 2.0 * PI * k1 / spec.period();
        let f = Field::from_fn(spec, |x| C64::new(0.0, w0 * x[0] + w1 * x[1]).exp());
        for (axis, w) in [(0, w0), (1, w1)] {
            let d = spectral_derivative(&f, axis).unwrap();
            let expected = f.scaled(C64::new(0.0, w));
            assert!(d.sub(&expected).sup_norm() <= 1e-10);
        }
        let s = spec1();
        let a = 2.0 * PI / s.period();
        let f = Field::from_fn(s, |x| C64::new((a * x[0]).sin(), 0.0));
        let d = spectral_derivative(&f, 0).unwrap();
        let e = Field::from_fn(s, |x| C64::new(a * (a * x[0]).cos(), 0.0));
        assert!(d.sub(&e).sup_norm() <= 1e-10);
        let c = Field::from_fn(s, |_| C64::new(2.0, 1.0));
        assert!(spectral_derivative(&c, 0).unwrap().sup_norm() <= 1e-12);
        assert!(spectral_derivative(&c, 1).is_err());
    }

    #[test]
    fn bands_are_disjoint_beyond_neighbors() {
        let spec = GridSpec::new(1, 1024, 5).unwrap();
        let b = bands(&spec);
        for j in 0..=b.top() {
            for k in (j + 2)..=b.top() {
                let overlap: f64 = b.band(j).unwrap().iter().zip(b.band(k).unwrap()).map(|(x, y)| x * y).sum();
                assert_eq!(overlap, 0.0, "bands {j} and {k} overlap");
            }
        }
    }

    #[test]
    fn band_center_mode_passes() {
        let spec = GridSpec::new(1, 1024, 5).unwrap();
        let k = 3;
        let period = spec.period();
        let m = ((k as f64).exp2() * period / (2.0 * PI)).round();
        let w = 2.0 * PI * m / period;
        let f = Field::from_fn(spec, |x| C64::new(0.0, w * x[0]).exp());
        let sk = lp_project(&f, k);
        let mask_val = lowpass_profile(w / 8.0) - lowpass_profile(w / 4.0);
        assert!(sk.sub(&f.scaled(C64::new(mask_val, 0.0))).sup_norm() < 1e-12);
        assert!(lp_project(&f, k + 2).sup_norm() < 1e-12);
        assert!(lp_project(&f, k - 2).sup_norm() < 1e-12);
    }

    #[test]
    fn cube_weights_sum_to_one() {
        for spec in [spec1(), GridSpec::new(2, 64, 4).unwrap()] {
            for j in 0..=spec.box_exp + 1 {
                let p = CubePartition::new(&spec, j);
                let mut total = vec![0.0; spec.len()];
                for id in 0..p.len() {
                    p.for_each_weight(id, |i, w| {
                        assert!(w >= 0.0);
                        total[i] += w
                    });
                }
                let err = total.iter().fold(0.0_f64, |m, t| m.max((t - 1.0).abs()));
                assert!(err <= 1e-12, "scale {j}: {err}");
            }
        }
    }

    #[test]
    fn degenerate_scale_is_single_cube() {
        let spec = spec1();
        let cubes = cube_partition(&spec, spec.box_exp);
        assert_eq!(cubes.len(), 1);
        assert!(cubes[0].1.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn quarter_box_cubes_have_double_width_support() {
        let spec = spec1();
        let j = spec.box_exp - 2;
        let cubes = cube_partition(&spec, j);
        assert_eq!(cubes.len(), 4);
        let side = (j as f64).exp2();
        let p = CubePartition::new(&spec, j);
        for (id, w) in &cubes {
            let c = p.center(*id)[0];
            for (i, &v) in w.iter().enumerate() {
                if v > 0.0 {
                    let mut d = spec.coord(i) - c;
                    d -= spec.period() * (d / spec.period()).round();
                    assert!(d.abs() < side, "weight outside the dilated cube");
                }
            }
        }
    }

    #[test]
    fn spacetime_validation() {
        let spec = spec1();
        let f = Field::zeros(spec, 1);
        assert!(SpacetimeField::new(vec![], vec![]).is_err());
        assert!(SpacetimeField::new(vec![0.0, 1.0, 3.0], vec![f.clone(), f.clone(), f.clone()]).is_err());
        let st = SpacetimeField::uniform(1.0, 5, |_| f.clone()).unwrap();
        let w: f64 = st.time_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
    }
}
