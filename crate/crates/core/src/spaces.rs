//! Cube-summed Sobolev norms, the local energy spaces `X`, `X_j`, a two-sided
//! bracket for the dual spaces `Y`, `Y_j`, frequency envelopes, and randomized
//! probes of the bilinear estimate constants.
//!
//! Every quadrature uses the grid cell volume in space and trapezoid weights
//! in time, so the discrete pairing `⟨f, w⟩` and the discrete norms satisfy
//! Hölder and duality exactly; the `Y` bracket relies on this.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{bands, dft_inplace, CubePartition, Field, GridSpec, SpacetimeField};

/// Exponent of the cube summation `ℓ^p_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeSum {
    One,
    Two,
    Inf,
}

impl CubeSum {
    fn combine(self, vals: impl Iterator<Item = f64>) -> f64 {
        match self {
            CubeSum::One => vals.sum(),
            CubeSum::Two => vals.map(|v| v * v).sum::<f64>().sqrt(),
            CubeSum::Inf => vals.fold(0.0, f64::max),
        }
    }
}

/// A norm value with its dyadic breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub name: String,
    pub value: f64,
    /// `(k, block value)` before the `2^{ks}` weight.
    pub per_scale: Vec<(usize, f64)>,
}

impl NormReport {
    fn from_blocks(name: String, s: f64, blocks: Vec<f64>) -> Self {
        let value = blocks.iter().enumerate().map(|(k, b)| (2.0_f64.powf(k as f64 * s) * b).powi(2)).sum::<f64>().sqrt();
        Self { name, value, per_scale: blocks.into_iter().enumerate().collect() }
    }
}

/// `(Σ_Q ‖χ_Q f‖_{L²}^p)^{1/p}` over the smooth cubes of side `2^j`.
pub fn lpj_norm(f: &Field, j: u32, p: CubeSum) -> f64 {
    lpj_of_density(f.spec(), &f.density(), j, p)
}

fn lpj_of_density(spec: &GridSpec, dens: &[f64], j: u32, p: CubeSum) -> f64 {
    let part = CubePartition::new(spec, j);
    let vol = spec.cell_volume();
    p.combine((0..part.len()).map(|id| {
        let mut s = 0.0;
        part.for_each_weight(id, |i, w| s += w * w * dens[i]);
        (s * vol).sqrt()
    }))
}

/// `(Σ_j 2^{2sj} ‖S_j f‖²_{ℓ^p_j L²})^{1/2}`.
pub fn lp_hs_norm(f: &Field, s: f64, p: CubeSum) -> NormReport {
    let spec = *f.spec();
    let blocks = band_densities_of_field(f).iter().enumerate().map(|(k, d)| lpj_of_density(&spec, d, k as u32, p)).collect();
    NormReport::from_blocks(format!("l{}H^{s}", p_label(p)), s, blocks)
}

/// The `ℓ¹H^s` norm.
pub fn l1_hs_norm(f: &Field, s: f64) -> NormReport {
    lp_hs_norm(f, s, CubeSum::One)
}

fn p_label(p: CubeSum) -> &'static str {
    match p {
        CubeSum::One => "1",
        CubeSum::Two => "2",
        CubeSum::Inf => "inf",
    }
}

/// Pointwise densities `Σ_a |S_k f_a|²` for every band.
fn band_densities_of_field(f: &Field) -> Vec<Vec<f64>> {
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
            let mut dens = vec![0.0; spec.len()];
            for h in &hats {
                let mut buf: Vec<C64> = h.iter().zip(mask).map(|(z, w)| z * w).collect();
                dft_inplace(&spec, &mut buf, true);
                for (d, z) in dens.iter_mut().zip(&buf) {
                    *d += z.norm_sqr();
                }
            }
            dens
        })
        .collect()
}

/// Pointwise densities of a spacetime field with its time weights.
#[derive(Clone, Debug)]
pub struct SpacetimeDensity {
    spec: GridSpec,
    weights: Vec<f64>,
    slices: Vec<Vec<f64>>,
}

impl SpacetimeDensity {
    pub fn of(u: &SpacetimeField) -> Self {
        Self { spec: *u.spec(), weights: u.time_weights(), slices: u.slices().iter().map(|f| f.density()).collect() }
    }

    /// `∫ |u|² dt` at every grid point.
    pub fn integrated(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.spec.len()];
        for (w, d) in self.weights.iter().zip(&self.slices) {
            for (a, b) in e.iter_mut().zip(d) {
                *a += w * b;
            }
        }
        e
    }

    fn l_inf_l2(&self) -> f64 {
        let vol = self.spec.cell_volume();
        self.slices.iter().map(|d| (d.iter().sum::<f64>() * vol).sqrt()).fold(0.0, f64::max)
    }

    fn l1_l2(&self) -> f64 {
        let vol = self.spec.cell_volume();
        self.weights.iter().zip(&self.slices).map(|(w, d)| w * (d.iter().sum::<f64>() * vol).sqrt()).sum()
    }
}

/// Band-by-band densities of a spacetime field; one transform per slice.
pub fn band_densities(u: &SpacetimeField) -> Vec<SpacetimeDensity> {
    let spec = *u.spec();
    let b = bands(&spec);
    let weights = u.time_weights();
    let hats: Vec<Vec<Vec<C64>>> = u
        .slices()
        .iter()
        .map(|f| {
            f.comps()
                .iter()
                .map(|c| {
                    let mut h = c.clone();
                    dft_inplace(&spec, &mut h, false);
                    h
                })
                .collect()
        })
        .collect();
    (0..=b.top())
        .map(|k| {
            let mask = b.band(k).unwrap_or(&[]);
            let slices = hats
                .iter()
                .map(|comps| {
                    let mut dens = vec![0.0; spec.len()];
                    for h in comps {
                        let mut buf: Vec<C64> = h.iter().zip(mask).map(|(z, w)| z * w).collect();
                        dft_inplace(&spec, &mut buf, true);
                        for (d, z) in dens.iter_mut().zip(&buf) {
                            *d += z.norm_sqr();
                        }
                    }
                    dens
                })
                .collect();
            SpacetimeDensity { spec, weights: weights.clone(), slices }
        })
        .collect()
}

/// Per-axis shift turning a grid index into a sharp-cube index at scale `2^l`.
fn cell_shift(spec: &GridSpec, l: u32) -> u32 {
    let m = spec.n.trailing_zeros();
    (l + m).saturating_sub(spec.box_exp).min(m)
}

fn cell_key(spec: &GridSpec, idx: usize, shift: u32) -> usize {
    let mi = spec.multi_index(idx);
    if spec.dim == 1 {
        mi[0] >> shift
    } else {
        ((mi[0] >> shift) << 20) | (mi[1] >> shift)
    }
}

/// Sums of a sparse nonnegative density over the sharp cubes of side `2^l`.
fn cell_sums(spec: &GridSpec, entries: &[(usize, f64)], l: u32) -> Vec<f64> {
    let shift = cell_shift(spec, l);
    let mut keyed: Vec<(usize, f64)> = entries.iter().map(|&(i, v)| (cell_key(spec, i, shift), v)).collect();
    keyed.sort_unstable_by_key(|e| e.0);
    let mut out = Vec::new();
    let mut cur = usize::MAX;
    for (k, v) in keyed {
        if k != cur {
            out.push(0.0);
            cur = k;
        }
        *out.last_mut().unwrap() += v;
    }
    out
}

fn scales(spec: &GridSpec) -> std::ops::RangeInclusive<u32> {
    spec.finest_cube_scale()..=spec.box_exp
}

/// `sup_l sup_Q 2^{-l/2} (∫_Q e)^{1/2}` for a time-integrated density `e`.
fn x_sup(spec: &GridSpec, entries: &[(usize, f64)]) -> f64 {
    let vol = spec.cell_volume();
    scales(spec)
        .map(|l| {
            let m = cell_sums(spec, entries, l).into_iter().fold(0.0, f64::max);
            2.0_f64.powf(-0.5 * l as f64) * (m * vol).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Atomic upper bound for `Y`: `min_l Σ_Q 2^{l/2} (∫_Q e)^{1/2}`.
fn y_atomic(spec: &GridSpec, entries: &[(usize, f64)]) -> f64 {
    let vol = spec.cell_volume();
    scales(spec)
        .map(|l| {
            let s: f64 = cell_sums(spec, entries, l).into_iter().map(|v| (v * vol).sqrt()).sum();
            2.0_f64.powf(0.5 * l as f64) * s
        })
        .fold(f64::INFINITY, f64::min)
}

fn dense_entries(e: &[f64]) -> Vec<(usize, f64)> {
    e.iter().copied().enumerate().collect()
}

/// The local energy norm `sup_l sup_Q 2^{-l/2} ‖u‖_{L²([0,T]×Q)}` over sharp dyadic cubes.
pub fn x_norm(u: &SpacetimeField) -> f64 {
    let d = SpacetimeDensity::of(u);
    x_sup(&d.spec, &dense_entries(&d.integrated()))
}

/// `‖u‖_{X_j} = max(2^{j/2}‖u‖_X, ‖u‖_{L^∞L²})`.
pub fn xj_norm(u: &SpacetimeField, j: usize) -> f64 {
    let d = SpacetimeDensity::of(u);
    let x = x_sup(&d.spec, &dense_entries(&d.integrated()));
    (2.0_f64.powf(0.5 * j as f64) * x).max(d.l_inf_l2())
}

pub fn l_inf_l2(u: &SpacetimeField) -> f64 {
    SpacetimeDensity::of(u).l_inf_l2()
}

pub fn l1_l2(u: &SpacetimeField) -> f64 {
    SpacetimeDensity::of(u).l1_l2()
}

fn validate_time(u: &SpacetimeField) -> Result<()> {
    if u.len() < 2 {
        return Err(Error::InvalidTimeAxis("at least two time samples are needed".into()));
    }
    Ok(())
}

/// Localized densities `χ_Q² D_t` of one cube, as sparse per-slice rows.
struct CubeRows {
    idx: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

fn cube_rows(d: &SpacetimeDensity, part: &CubePartition, id: usize) -> CubeRows {
    let mut idx = Vec::with_capacity(part.support_len(id));
    let mut w2 = Vec::with_capacity(part.support_len(id));
    part.for_each_weight(id, |i, w| {
        idx.push(i);
        w2.push(w * w);
    });
    let rows = d.slices.iter().map(|s| idx.iter().zip(&w2).map(|(&i, &w)| w * s[i]).collect()).collect();
    CubeRows { idx, rows }
}

impl CubeRows {
    fn integrated(&self, weights: &[f64], keep: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let mut e = vec![0.0; self.idx.len()];
        for (t, (w, r)) in weights.iter().zip(&self.rows).enumerate() {
            if keep(t) {
                for (a, b) in e.iter_mut().zip(r) {
                    *a += w * b;
                }
            }
        }
        self.idx.iter().copied().zip(e).collect()
    }

    fn slice_masses(&self, vol: f64) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum::<f64>() * vol).collect()
    }
}

fn xj_of_rows(spec: &GridSpec, weights: &[f64], rows: &CubeRows, j: usize) -> f64 {
    let x = x_sup(spec, &rows.integrated(weights, |_| true));
    let linf = rows.slice_masses(spec.cell_volume()).into_iter().fold(0.0, f64::max).sqrt();
    (2.0_f64.powf(0.5 * j as f64) * x).max(linf)
}

fn split_counts(nt: usize) -> Vec<usize> {
    let mut v = vec![0, nt / 8, nt / 4, nt / 2, nt];
    v.dedup();
    v
}

/// Upper bound for `‖f‖_{Y_j}` from atomic bounds after moving the heaviest
/// time slices into the `L¹L²` term.
fn yj_upper_of_rows(spec: &GridSpec, weights: &[f64], rows: &CubeRows, j: usize) -> f64 {
    let vol = spec.cell_volume();
    let masses = rows.slice_masses(vol);
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]));
    let mut rank = vec![0usize; masses.len()];
    for (r, &t) in order.iter().enumerate() {
        rank[t] = r;
    }
    let scale = 2.0_f64.powf(-0.5 * j as f64);
    split_counts(masses.len())
        .into_iter()
        .map(|m| {
            let l1: f64 = order[..m].iter().map(|&t| weights[t] * masses[t].sqrt()).sum();
            let rest = if m == masses.len() { 0.0 } else { scale * y_atomic(spec, &rows.integrated(weights, |t| rank[t] >= m)) };
            l1 + rest
        })
        .fold(f64::INFINITY, f64::min)
}

/// `‖v‖_{ℓ^p_j X_j}` for a density of one frequency band.
pub fn lpj_x_of_density(d: &SpacetimeDensity, j: usize, p: CubeSum) -> f64 {
    let part = CubePartition::new(&d.spec, j as u32);
    p.combine((0..part.len()).map(|id| xj_of_rows(&d.spec, &d.weights, &cube_rows(d, &part, id), j)))
}

/// Upper bound for `‖f‖_{ℓ^p_j Y_j}` for a density of one frequency band.
pub fn lpj_y_upper_of_density(d: &SpacetimeDensity, j: usize, p: CubeSum) -> f64 {
    let part = CubePartition::new(&d.spec, j as u32);
    p.combine((0..part.len()).map(|id| yj_upper_of_rows(&d.spec, &d.weights, &cube_rows(d, &part, id), j)))
}

/// `‖u‖_{ℓ^pX^s} = (Σ_j 2^{2js} ‖S_j u‖²_{ℓ^p_j X_j})^{1/2}`.
pub fn lp_xs_norm(u: &SpacetimeField, s: f64, p: CubeSum) -> Result<NormReport> {
    validate_time(u)?;
    let blocks = band_densities(u).iter().enumerate().map(|(k, d)| lpj_x_of_density(d, k, p)).collect();
    Ok(NormReport::from_blocks(format!("l{}X^{s}", p_label(p)), s, blocks))
}

/// Upper bound for `‖f‖_{ℓ^pY^s}` built from [`y_surrogate`]-style atomic bounds.
pub fn lp_ys_upper(f: &SpacetimeField, s: f64, p: CubeSum) -> Result<NormReport> {
    validate_time(f)?;
    let blocks = band_densities(f).iter().enumerate().map(|(k, d)| lpj_y_upper_of_density(d, k, p)).collect();
    Ok(NormReport::from_blocks(format!("l{}Y^{s}(upper)", p_label(p)), s, blocks))
}

/// Which dual space the bracket estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum YScale {
    /// `Y`, the predual of `X`.
    Plain,
    /// `Y_j = 2^{j/2} Y + L¹L²`.
    Dyadic(usize),
}

/// Two-sided estimate of a dual norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YBracket {
    pub lower: f64,
    pub upper: f64,
}

/// Bracket `lower ≤ ‖f‖ ≤ upper` for `Y` or `Y_j`.
///
/// The upper value is the best atomic decomposition over sharp dyadic cubes,
/// combined (for `Y_j`) with moving the heaviest time slices into `L¹L²`.
/// The lower value is the best ratio `|⟨f, w⟩| / ‖w‖` over a fixed bank of
/// test fields: `f` itself, `f` restricted to its heaviest cubes at every
/// scale, and `f` restricted to its heaviest time slices.
pub fn y_surrogate(f: &SpacetimeField, scale: YScale) -> YBracket {
    let d = SpacetimeDensity::of(f);
    let spec = d.spec;
    let vol = spec.cell_volume();
    let all = CubeRows { idx: (0..spec.len()).collect(), rows: d.slices.clone() };
    let e = dense_entries(&d.integrated());
    let upper = match scale {
        YScale::Plain => y_atomic(&spec, &e),
        YScale::Dyadic(j) => yj_upper_of_rows(&spec, &d.weights, &all, j),
    };

    let dual_norm = |rows: &CubeRows| match scale {
        YScale::Plain => x_sup(&spec, &rows.integrated(&d.weights, |_| true)),
        YScale::Dyadic(j) => xj_of_rows(&spec, &d.weights, rows, j),
    };
    let mut lower: f64 = 0.0;
    let mut consider = |rows: CubeRows| {
        let pairing: f64 = rows.integrated(&d.weights, |_| true).iter().map(|e| e.1).sum::<f64>() * vol;
        let nw = dual_norm(&rows);
        if nw > 0.0 {
            lower = lower.max(pairing / nw);
        }
    };
    consider(CubeRows { idx: all.idx.clone(), rows: all.rows.clone() });

    for l in scales(&spec) {
        let shift = cell_shift(&spec, l);
        let mut mass: std::collections::HashMap<usize, f64> = Default::default();
        for &(i, v) in &e {
            *mass.entry(cell_key(&spec, i, shift)).or_default() += v;
        }
        let mut cells: Vec<(usize, f64)> = mass.into_iter().collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(key, _) in cells.iter().take(3) {
            let idx: Vec<usize> = (0..spec.len()).filter(|&i| cell_key(&spec, i, shift) == key).collect();
            let rows = d.slices.iter().map(|s| idx.iter().map(|&i| s[i]).collect()).collect();
            consider(CubeRows { idx, rows });
        }
    }

    if let YScale::Dyadic(_) = scale {
        let masses = all.slice_masses(vol);
        let mut order: Vec<usize> = (0..masses.len()).collect();
        order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]));
        for m in split_counts(masses.len()).into_iter().filter(|&m| m > 0) {
            let keep: Vec<bool> = {
                let mut k = vec![false; masses.len()];
                order[..m].iter().for_each(|&t| k[t] = true);
                k
            };
            let rows = d.slices.iter().enumerate().map(|(t, s)| if keep[t] { s.clone() } else { vec![0.0; s.len()] }).collect();
            consider(CubeRows { idx: all.idx.clone(), rows });
        }
    }
    YBracket { lower: lower.min(upper), upper }
}

/// An admissible frequency envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c: Vec<f64>,
    pub delta: f64,
    pub sigma: f64,
}

/// Outcome of checking the admissibility conditions against block norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub dominates: bool,
    pub l2_controlled: bool,
    pub slowly_varying_left: bool,
    pub uniform_right: bool,
    /// `Σ c_k² / Σ a_k²`.
    pub l2_ratio: f64,
}

impl EnvelopeCheck {
    pub fn all(&self) -> bool {
        self.dominates && self.l2_controlled && self.slowly_varying_left && self.uniform_right
    }
}

/// `c_j = max(max_{k≥j} 2^{-δ(k-j)} a_k, max_{k≤j} 2^{-σ(j-k)} a_k)`.
pub fn make_envelope(a: &[f64], delta: f64, sigma: f64) -> Result<Envelope> {
    if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("block norms must be finite and nonnegative".into()));
    }
    if !(delta > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidArgument("envelope exponents must be positive".into()));
    }
    let n = a.len();
    let mut c = vec![0.0; n];
    for (j, cj) in c.iter_mut().enumerate() {
        let right = (j..n).map(|k| 2.0_f64.powf(-delta * (k - j) as f64) * a[k]).fold(0.0, f64::max);
        let left = (0..=j).map(|k| 2.0_f64.powf(-sigma * (j - k) as f64) * a[k]).fold(0.0, f64::max);
        *cj = right.max(left);
    }
    Ok(Envelope { c, delta, sigma })
}

impl Envelope {
    /// `ℓ¹` norm of the convolution kernel bounding `Σ c² ≤ K² Σ a²`.
    pub fn kernel_mass(&self) -> f64 {
        let d = 2.0_f64.powf(-self.delta);
        let s = 2.0_f64.powf(-self.sigma);
        1.0 / (1.0 - d) + s / (1.0 - s)
    }

    pub fn check(&self, a: &[f64]) -> EnvelopeCheck {
        const SLACK: f64 = 1e-12;
        let c = &self.c;
        let dominates = a.iter().zip(c).all(|(a, c)| *a <= *c);
        let sa: f64 = a.iter().map(|v| v * v).sum();
        let sc: f64 = c.iter().map(|v| v * v).sum();
        let k = self.kernel_mass();
        let l2_controlled = sc <= k * k * sa * (1.0 + SLACK);
        let mut left = true;
        let mut right = true;
        for j in 0..c.len() {
            for k in 0..c.len() {
                if j < k {
                    left &= c[j] >= 2.0_f64.powf(self.delta * (j as f64 - k as f64)) * c[k] * (1.0 - SLACK);
                } else if j > k {
                    right &= c[j] >= 2.0_f64.powf(-self.sigma * (j - k) as f64) * c[k] * (1.0 - SLACK);
                }
            }
        }
        EnvelopeCheck { dominates, l2_controlled, slowly_varying_left: left, uniform_right: right, l2_ratio: if sa > 0.0 { sc / sa } else { 0.0 } }
    }
}

/// The estimates that [`probe_estimate`] can measure. Norms on the right are
/// computed without the implicit constant, so the recorded ratio is that constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimate {
    /// `‖S_j u‖_{L^∞L^∞} ≤ C 2^{jd/2} ‖u‖_{ℓ¹_j X_j}`, worst band.
    Bernstein,
    /// `‖uv‖_{ℓ^pX^σ} ≤ C ‖u‖_{ℓ^pX^σ} ‖v‖_{ℓ^pX^s}`.
    Bilinear { sigma: f64, s: f64, p: CubeSum },
    /// `‖u³‖_{ℓ¹X^σ} ≤ C ‖u‖_{ℓ¹X^σ} ‖u‖²_{ℓ¹X^s}`.
    Moser { sigma: f64, s: f64 },
    /// `‖uv‖_{ℓ^pY^{σ-δ}} ≤ C T^δ ‖u‖_{ℓ^pX^{σ-1}} ‖v‖_{ℓ^pX^{s-1}}` with the `Y` upper bound.
    BilinearY { sigma: f64, s: f64, delta: f64, p: CubeSum },
    /// `‖uvw‖_{ℓ²X^σ} ≤ C ‖u‖_{ℓ²X^σ} ‖v‖_{ℓ²X^s} ‖w‖_{ℓ²X^s}`.
    Trilinear { sigma: f64, s: f64 },
}

impl Estimate {
    pub fn id(&self) -> String {
        match self {
            Estimate::Bernstein => "bernstein".into(),
            Estimate::Bilinear { p, .. } => format!("bilinear_l{}", p_label(*p)),
            Estimate::Moser { .. } => "moser".into(),
            Estimate::BilinearY { p, .. } => format!("bilinear_y_l{}", p_label(*p)),
            Estimate::Trilinear { .. } => "trilinear".into(),
        }
    }

    fn operands(&self) -> usize {
        match self {
            Estimate::Bernstein | Estimate::Moser { .. } => 1,
            Estimate::Bilinear { .. } | Estimate::BilinearY { .. } => 2,
            Estimate::Trilinear { .. } => 3,
        }
    }

    /// `(lhs, rhs)` on one sample; `rhs` excludes the constant.
    fn evaluate(&self, ops: &[SpacetimeField]) -> Result<(f64, f64)> {
        let product = |fs: &[&SpacetimeField]| -> SpacetimeField {
            let mut out = fs[0].clone();
            for g in &fs[1..] {
                out = pointwise(&out, g);
            }
            out
        };
        let t = ops[0].duration();
        Ok(match self {
            Estimate::Bernstein => {
                let u = &ops[0];
                let d = u.spec().dim as f64;
                let mut worst: f64 = 0.0;
                let mut rhs_at_worst = 0.0;
                let mut lhs_at_worst = 0.0;
                for (k, dens) in band_densities(u).iter().enumerate() {
                    let sup = dens.slices.iter().flatten().fold(0.0_f64, |m, &v| m.max(v)).sqrt();
                    let rhs = 2.0_f64.powf(0.5 * d * k as f64) * lpj_x_of_density(dens, k, CubeSum::One);
                    if rhs > 0.0 && sup / rhs >= worst {
                        worst = sup / rhs;
                        lhs_at_worst = sup;
                        rhs_at_worst = rhs;
                    }
                }
                (lhs_at_worst, rhs_at_worst)
            }
            Estimate::Bilinear { sigma, s, p } => {
                let lhs = lp_xs_norm(&product(&[&ops[0], &ops[1]]), *sigma, *p)?.value;
                let rhs = lp_xs_norm(&ops[0], *sigma, *p)?.value * lp_xs_norm(&ops[1], *s, *p)?.value;
                (lhs, rhs)
            }
            Estimate::Moser { sigma, s } => {
                let u = &ops[0];
                let lhs = lp_xs_norm(&product(&[u, u, u]), *sigma, CubeSum::One)?.value;
                let us = lp_xs_norm(u, *s, CubeSum::One)?.value;
                (lhs, lp_xs_norm(u, *sigma, CubeSum::One)?.value * us * us)
            }
            Estimate::BilinearY { sigma, s, delta, p } => {
                let lhs = lp_ys_upper(&product(&[&ops[0], &ops[1]]), sigma - delta, *p)?.value;
                let rhs = t.powf(*delta) * lp_xs_norm(&ops[0], sigma - 1.0, *p)?.value * lp_xs_norm(&ops[1], s - 1.0, *p)?.value;
                (lhs, rhs)
            }
            Estimate::Trilinear { sigma, s } => {
                let lhs = lp_xs_norm(&product(&[&ops[0], &ops[1], &ops[2]]), *sigma, CubeSum::Two)?.value;
                let rhs = lp_xs_norm(&ops[0], *sigma, CubeSum::Two)?.value
                    * lp_xs_norm(&ops[1], *s, CubeSum::Two)?.value
                    * lp_xs_norm(&ops[2], *s, CubeSum::Two)?.value;
                (lhs, rhs)
            }
        })
    }
}

/// Pointwise product of two spacetime fields with matching grids (first components).
pub fn pointwise(a: &SpacetimeField, b: &SpacetimeField) -> SpacetimeField {
    let slices: Vec<Field> = a
        .slices()
        .iter()
        .zip(b.slices())
        .map(|(x, y)| {
            let comps = x.comps().iter().zip(y.comps()).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u * v).collect()).collect();
            Field::new(*x.spec(), comps).expect("matching shapes")
        })
        .collect();
    SpacetimeField::new(a.times().to_vec(), slices).expect("same time axis")
}

/// Measured constant of one estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub estimate_id: String,
    pub observed_ratio: f64,
    pub sample_count: usize,
    pub skipped: usize,
    /// Worst ratio at each probed final time.
    pub ratio_by_t: Vec<(f64, f64)>,
    /// Least-squares slope of `log ratio` against `log T` (needs two or more times).
    pub t_exponent_fit: Option<f64>,
}

/// Run `trials` samples of an estimate at each final time in `t_values`.
///
/// `generator(trial, T)` returns the operands on `[0, T]`. Samples with a
/// vanishing right-hand side are skipped and counted.
pub fn probe_estimate(
    estimate: &Estimate,
    mut generator: impl FnMut(usize, f64) -> Vec<SpacetimeField>,
    trials: usize,
    t_values: &[f64],
) -> Result<ProbeResult> {
    if trials == 0 || t_values.is_empty() {
        return Err(Error::InvalidArgument("probe needs at least one trial and one final time".into()));
    }
    let mut ratio_by_t = Vec::new();
    let mut count = 0;
    let mut skipped = 0;
    for &t in t_values {
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let ops = generator(trial, t);
            if ops.len() < estimate.operands() {
                return Err(Error::InvalidArgument(format!("{} needs {} operands, generator gave {}", estimate.id(), estimate.operands(), ops.len())));
            }
            let (lhs, rhs) = estimate.evaluate(&ops)?;
            if !(rhs > 0.0) || !lhs.is_finite() {
                skipped += 1;
                continue;
            }
            count += 1;
            worst = worst.max(lhs / rhs);
        }
        ratio_by_t.push((t, worst));
    }
    let usable: Vec<(f64, f64)> = ratio_by_t.iter().copied().filter(|&(t, r)| t > 0.0 && r > 0.0).collect();
    let t_exponent_fit = if usable.len() >= 2 {
        let xs: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
        Some(linear_slope(&xs, &ys))
    } else {
        None
    };
    Ok(ProbeResult {
        estimate_id: estimate.id(),
        observed_ratio: ratio_by_t.iter().map(|p| p.1).fold(0.0, f64::max),
        sample_count: count,
        skipped,
        ratio_by_t,
        t_exponent_fit,
    })
}

pub(crate) fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}
