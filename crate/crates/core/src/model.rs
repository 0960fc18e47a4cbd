//! Nonlinearities, linearized coefficients, paraproducts, the divergence-form
//! paradifferential operator, the balanced remainder `G`, and the conjugation
//! that removes the principal `∇w̄` coupling.
//!
//! The equation is `i u_t + ∂_j g^{jk}(u) ∂_k u = F(u, ∇u)` for `u` with `m`
//! components; the paradifferential operator is
//! `L w = A w + T_{b^j} ∂_j w + T_{b̃^j} ∂_j w̄` with `A` the symmetrized
//! `∂_j T_{g^{jk}} ∂_k` completed on the low bands by the flat Laplacian.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::normal;
use crate::spectral::{bands, derivative_symbol, dft_inplace, lowpass_profile, Bands, Field, GridSpec};

/// Lowest band carried by paraproducts; `S_{≤N-4}` of the coefficient multiplies `S_N`.
pub const PARA_GAP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionClass {
    /// `g(0) = I`, `F` at least quadratic.
    Quadratic,
    /// `g = I + O(|u|²)`, `F` at least cubic.
    Cubic,
}

/// `g` is 2×2 even in one dimension; only the `[0][0]` entry is read there.
pub type Mat2 = [[f64; 2]; 2];
pub type CMat2 = [[C64; 2]; 2];

/// First partials of `F_a` with respect to `u_b`, `ū_b`, `∂_j u_b`, `∂_j ū_b`,
/// stored row-major in `(a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingPartials {
    pub du: Vec<C64>,
    pub dubar: Vec<C64>,
    pub dgrad: Vec<[C64; 2]>,
    pub dgradbar: Vec<[C64; 2]>,
}

impl ForcingPartials {
    pub fn zeros(m: usize) -> Self {
        Self {
            du: vec![C64::default(); m * m],
            dubar: vec![C64::default(); m * m],
            dgrad: vec![[C64::default(); 2]; m * m],
            dgradbar: vec![[C64::default(); 2]; m * m],
        }
    }
}

/// A quasilinear nonlinearity `(g, F)` with exact first partials.
///
/// `u` holds the `m` component values and `du[a][j] = ∂_j u_a`.
pub trait Nonlinearity: Send + Sync {
    fn components(&self) -> usize;
    fn class(&self) -> InteractionClass;
    /// Ellipticity constant `c0`: `c0|ξ|² ≤ g ξ·ξ ≤ |ξ|²/c0`.
    fn ellipticity(&self) -> f64;
    fn metric(&self, u: &[C64]) -> Mat2;
    /// `∂g/∂u_b`.
    fn metric_du(&self, u: &[C64], b: usize) -> CMat2;
    /// `∂g/∂ū_b`; the conjugate of `∂g/∂u_b` since `g` is real.
    fn metric_dubar(&self, u: &[C64], b: usize) -> CMat2 {
        let d = self.metric_du(u, b);
        [[d[0][0].conj(), d[0][1].conj()], [d[1][0].conj(), d[1][1].conj()]]
    }
    fn forcing(&self, u: &[C64], du: &[[C64; 2]], dim: usize) -> Vec<C64>;
    fn forcing_partials(&self, u: &[C64], du: &[[C64; 2]], dim: usize) -> ForcingPartials;
}

/// Built-in metric families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricModel {
    Flat,
    /// `(1 + α Σ|u_a|²) I`.
    Conformal {
        alpha: f64,
    },
    /// `diag(1 + α_0 Σ|u_a|², 1 + α_1 Σ|u_a|²)`.
    Diagonal {
        alpha: [f64; 2],
    },
    /// `(1 + β Σ Re u_a) I`, genuinely quadratic.
    Linear {
        beta: f64,
    },
}

/// One factor of a forcing monomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    U { comp: usize },
    Ubar { comp: usize },
    Du { axis: usize, comp: usize },
    Dubar { axis: usize, comp: usize },
}

/// `coeff · Π factors`, contributing to component `target` of `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: C64,
    #[serde(default)]
    pub target: usize,
    pub factors: Vec<Factor>,
}

impl Monomial {
    pub fn new(coeff: f64, factors: Vec<Factor>) -> Self {
        Self { coeff: C64::new(coeff, 0.0), target: 0, factors }
    }
}

/// Parameterized nonlinearity selectable from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuiltinNonlinearity {
    #[serde(default = "one")]
    pub m: usize,
    pub metric: MetricModel,
    #[serde(default)]
    pub forcing: Vec<Monomial>,
    pub class: InteractionClass,
    #[serde(default = "half")]
    pub c0: f64,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

impl BuiltinNonlinearity {
    pub fn flat(m: usize) -> Self {
        Self { m, metric: MetricModel::Flat, forcing: vec![], class: InteractionClass::Quadratic, c0: 0.5 }
    }

    pub fn conformal(alpha: f64) -> Self {
        Self { m: 1, metric: MetricModel::Conformal { alpha }, forcing: vec![], class: InteractionClass::Cubic, c0: 0.5 }
    }

    pub fn with_forcing(mut self, forcing: Vec<Monomial>) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_class(mut self, class: InteractionClass) -> Self {
        self.class = class;
        self
    }

    /// Structural checks: indices in range, degrees matching the declared class.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(Error::InvalidArgument(format!("c0 = {} not in (0, 1]", self.c0)));
        }
        let min_degree = match self.class {
            InteractionClass::Quadratic => 2,
            InteractionClass::Cubic => 3,
        };
        for t in &self.forcing {
            if t.target >= self.m {
                return Err(Error::InvalidArgument(format!("monomial target {} out of range", t.target)));
            }
            if t.factors.len() < min_degree {
                return Err(Error::InvalidArgument(format!("monomial of degree {} below the {:?} class minimum {min_degree}", t.factors.len(), self.class)));
            }
            for f in &t.factors {
                let (axis, comp) = match *f {
                    Factor::U { comp } | Factor::Ubar { comp } => (0, comp),
                    Factor::Du { axis, comp } | Factor::Dubar { axis, comp } => (axis, comp),
                };
                if comp >= self.m || axis > 1 {
                    return Err(Error::InvalidArgument(format!("factor {f:?} out of range")));
                }
            }
        }
        if self.class == InteractionClass::Cubic && matches!(self.metric, MetricModel::Linear { .. }) {
            return Err(Error::InvalidArgument("a linear metric is not of cubic class".into()));
        }
        Ok(())
    }

    fn factor_value(f: Factor, u: &[C64], du: &[[C64; 2]]) -> C64 {
        match f {
            Factor::U { comp } => u[comp],
            Factor::Ubar { comp } => u[comp].conj(),
            Factor::Du { axis, comp } => du[comp][axis],
            Factor::Dubar { axis, comp } => du[comp][axis].conj(),
        }
    }
}

impl Nonlinearity for BuiltinNonlinearity {
    fn components(&self) -> usize {
        self.m
    }

    fn class(&self) -> InteractionClass {
        self.class
    }

    fn ellipticity(&self) -> f64 {
        self.c0
    }

    fn metric(&self, u: &[C64]) -> Mat2 {
        let mass: f64 = u.iter().map(|z| z.norm_sqr()).sum();
        match &self.metric {
            MetricModel::Flat => [[1.0, 0.0], [0.0, 1.0]],
            MetricModel::Conformal { alpha } => {
                let s = 1.0 + alpha * mass;
                [[s, 0.0], [0.0, s]]
            }
            MetricModel::Diagonal { alpha } => [[1.0 + alpha[0] * mass, 0.0], [0.0, 1.0 + alpha[1] * mass]],
            MetricModel::Linear { beta } => {
                let s = 1.0 + beta * u.iter().map(|z| z.re).sum::<f64>();
                [[s, 0.0], [0.0, s]]
            }
        }
    }

    fn metric_du(&self, u: &[C64], b: usize) -> CMat2 {
        let z = C64::default();
        let diag = |a: C64, c: C64| [[a, z], [z, c]];
        match &self.metric {
            MetricModel::Flat => diag(z, z),
            MetricModel::Conformal { alpha } => diag(u[b].conj() * *alpha, u[b].conj() * *alpha),
            MetricModel::Diagonal { alpha } => diag(u[b].conj() * alpha[0], u[b].conj() * alpha[1]),
            MetricModel::Linear { beta } => diag(C64::new(0.5 * beta, 0.0), C64::new(0.5 * beta, 0.0)),
        }
    }

    fn forcing(&self, u: &[C64], du: &[[C64; 2]], _dim: usize) -> Vec<C64> {
        let mut out = vec![C64::default(); self.m];
        for t in &self.forcing {
            let p = t.factors.iter().fold(t.coeff, |acc, &f| acc * Self::factor_value(f, u, du));
            out[t.target] += p;
        }
        out
    }

    fn forcing_partials(&self, u: &[C64], du: &[[C64; 2]], _dim: usize) -> ForcingPartials {
        let m = self.m;
        let mut p = ForcingPartials::zeros(m);
        for t in &self.forcing {
            for (i, &f) in t.factors.iter().enumerate() {
                let rest = t.factors.iter().enumerate().filter(|&(k, _)| k != i).fold(t.coeff, |acc, (_, &g)| acc * Self::factor_value(g, u, du));
                let row = t.target * m;
                match f {
                    Factor::U { comp } => p.du[row + comp] += rest,
                    Factor::Ubar { comp } => p.dubar[row + comp] += rest,
                    Factor::Du { axis, comp } => p.dgrad[row + comp][axis] += rest,
                    Factor::Dubar { axis, comp } => p.dgradbar[row + comp][axis] += rest,
                }
            }
        }
        p
    }
}

/// Pointwise metric `g^{jk}(u(x))` on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    spec: GridSpec,
    g: Vec<Mat2>,
}

fn eigen_sym(g: &Mat2, dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (g[0][0], g[0][0]);
    }
    let m = 0.5 * (g[0][0] + g[1][1]);
    let r = (0.25 * (g[0][0] - g[1][1]).powi(2) + g[0][1] * g[0][1]).sqrt();
    (m - r, m + r)
}

impl MetricField {
    pub fn new(spec: GridSpec, g: Vec<Mat2>) -> Result<Self> {
        if g.len() != spec.len() {
            return Err(Error::SizeMismatch { expected: spec.len(), got: g.len() });
        }
        Ok(Self { spec, g })
    }

    /// `g = I` everywhere.
    pub fn identity(spec: GridSpec) -> Self {
        Self { spec, g: vec![[[1.0, 0.0], [0.0, 1.0]]; spec.len()] }
    }

    /// Conformal metric `c(x) I` from real samples.
    pub fn conformal(spec: GridSpec, c: impl Fn([f64; 2]) -> f64) -> Self {
        let g = (0..spec.len())
            .map(|i| {
                let v = c(spec.position(i));
                [[v, 0.0], [0.0, v]]
            })
            .collect();
        Self { spec, g }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn at(&self, i: usize) -> &Mat2 {
        &self.g[i]
    }

    pub fn entries(&self) -> &[Mat2] {
        &self.g
    }

    /// Scalar field of entry `(j, k)`.
    pub fn entry(&self, j: usize, k: usize) -> Vec<f64> {
        self.g.iter().map(|g| g[j][k]).collect()
    }

    /// Smallest and largest pointwise eigenvalue.
    pub fn eigen_range(&self) -> (f64, f64) {
        self.g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
            let (a, b) = eigen_sym(g, self.spec.dim);
            (lo.min(a), hi.max(b))
        })
    }

    pub fn check_ellipticity(&self, c0: f64) -> Result<()> {
        for (index, g) in self.g.iter().enumerate() {
            let (lo, _) = eigen_sym(g, self.spec.dim);
            if !(lo >= 0.5 * c0) {
                return Err(Error::Ellipticity { eigenvalue: lo, bound: 0.5 * c0, index });
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &MetricField) -> Result<MetricField> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        let g = self.g.iter().zip(&other.g).map(|(a, b)| [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]).collect();
        Ok(MetricField { spec: self.spec, g })
    }

    /// `g − I` as a `dim²`-component field, used for exterior smallness.
    pub fn deviation_field(&self) -> Field {
        let d = self.spec.dim;
        let comps = (0..d * d)
            .map(|e| {
                let (j, k) = (e / d, e % d);
                self.g.iter().map(|g| C64::new(g[j][k] - if j == k { 1.0 } else { 0.0 }, 0.0)).collect()
            })
            .collect();
        Field::new(self.spec, comps).expect("shape")
    }
}

/// Values and spatial derivatives of a field at every grid point.
struct FieldJet {
    u: Vec<Vec<C64>>,
    du: Vec<[Vec<C64>; 2]>,
}

fn jet_of(u: &Field) -> FieldJet {
    let spec = *u.spec();
    let syms: Vec<Vec<C64>> = (0..spec.dim).map(|j| derivative_symbol(&spec, j)).collect();
    let du = u
        .comps()
        .iter()
        .map(|c| {
            let mut hat = c.clone();
            dft_inplace(&spec, &mut hat, false);
            let mut out = [vec![C64::default(); spec.len()], vec![C64::default(); spec.len()]];
            for (j, sym) in syms.iter().enumerate() {
                let mut buf: Vec<C64> = hat.iter().zip(sym).map(|(a, b)| a * b).collect();
                dft_inplace(&spec, &mut buf, true);
                out[j] = buf;
            }
            out
        })
        .collect();
    FieldJet { u: u.comps().to_vec(), du }
}

impl FieldJet {
    fn load(&self, i: usize, u: &mut [C64], du: &mut [[C64; 2]]) {
        for a in 0..self.u.len() {
            u[a] = self.u[a][i];
            du[a] = [self.du[a][0][i], self.du[a][1][i]];
        }
    }
}

fn check_components(u: &Field, nl: &dyn Nonlinearity) -> Result<()> {
    if u.m() != nl.components() {
        return Err(Error::ComponentMismatch(u.m(), nl.components()));
    }
    if !u.is_finite() {
        return Err(Error::InvalidArgument("field has non-finite samples".into()));
    }
    Ok(())
}

/// `g(u)` on the grid, symmetrized, with the ellipticity check at `c0/2`.
pub fn metric_of(u: &Field, nl: &dyn Nonlinearity) -> Result<MetricField> {
    check_components(u, nl)?;
    let spec = *u.spec();
    let m = u.m();
    let mut vals = vec![C64::default(); m];
    let g = (0..spec.len())
        .map(|i| {
            for (a, v) in vals.iter_mut().enumerate() {
                *v = u.comp(a)[i];
            }
            let g = nl.metric(&vals);
            let off = 0.5 * (g[0][1] + g[1][0]);
            [[g[0][0], off], [off, g[1][1]]]
        })
        .collect();
    let mf = MetricField { spec, g };
    mf.check_ellipticity(nl.ellipticity())?;
    Ok(mf)
}

/// `F(u, ∇u)` on the grid.
pub fn forcing_of(u: &Field, nl: &dyn Nonlinearity) -> Result<Field> {
    check_components(u, nl)?;
    let spec = *u.spec();
    let m = u.m();
    let jet = jet_of(u);
    let mut out = vec![vec![C64::default(); spec.len()]; m];
    let (mut v, mut dv) = (vec![C64::default(); m], vec![[C64::default(); 2]; m]);
    for i in 0..spec.len() {
        jet.load(i, &mut v, &mut dv);
        for (a, f) in nl.forcing(&v, &dv, spec.dim).into_iter().enumerate() {
            out[a][i] = f;
        }
    }
    Field::new(spec, out)
}

/// Coefficients of the linearized equation
/// `i v_t + ∂_j g^{jk} ∂_k v + b^j ∂_j v + b̃^j ∂_j v̄ + c v + c̃ v̄ = 0`.
///
/// Matrix coefficients are stored row-major over component pairs `(a, b)`.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub spec: GridSpec,
    pub m: usize,
    pub g: MetricField,
    /// `b[j][a*m + b]`.
    pub b: Vec<Vec<Vec<C64>>>,
    pub bt: Vec<Vec<Vec<C64>>>,
    pub c: Vec<Vec<C64>>,
    pub ct: Vec<Vec<C64>>,
    /// The state the coefficients were evaluated at.
    pub source: Field,
}

impl CoefficientSet {
    /// Coefficients of the flat equation (`g = I`, all others zero).
    pub fn flat(spec: GridSpec, m: usize) -> Self {
        let zero = vec![vec![C64::default(); spec.len()]; m * m];
        Self {
            spec,
            m,
            g: MetricField::identity(spec),
            b: vec![zero.clone(); spec.dim],
            bt: vec![zero.clone(); spec.dim],
            c: zero.clone(),
            ct: zero,
            source: Field::zeros(spec, m),
        }
    }

    /// Pointwise `|b| = (Σ_{j,a,b} |b^j_{ab}|²)^{1/2}` and the same for `b̃`.
    pub fn first_order_size(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.spec.len()];
        for set in [&self.b, &self.bt] {
            for per_axis in set {
                for field in per_axis {
                    for (acc, z) in s.iter_mut().zip(field) {
                        *acc += z.norm_sqr();
                    }
                }
            }
        }
        s.into_iter().map(f64::sqrt).collect()
    }

    pub fn is_finite(&self) -> bool {
        let fin = |v: &Vec<Vec<C64>>| v.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite());
        self.b.iter().all(fin) && self.bt.iter().all(fin) && fin(&self.c) && fin(&self.ct)
    }
}

/// `b, b̃, c, c̃` from the nonlinearity's exact partials, spatial derivatives spectral.
///
/// `c` is the full zero-order part of the linearization,
/// `c_{ab} = ∂_j(∂_{u_b} g^{jk} ∂_k u_a) − ∂_{u_b} F_a`, and `c̃` likewise with `ū_b`.
pub fn linearized_coeffs(u: &Field, nl: &dyn Nonlinearity) -> Result<CoefficientSet> {
    let g = metric_of(u, nl)?;
    let spec = *u.spec();
    let (m, d, n) = (u.m(), spec.dim, spec.len());
    let jet = jet_of(u);
    let zero = || vec![vec![C64::default(); n]; m * m];
    let mut b = vec![zero(); d];
    let mut bt = vec![zero(); d];
    let mut hb = vec![zero(); d];
    let mut hbt = vec![zero(); d];
    let mut c = zero();
    let mut ct = zero();
    let (mut v, mut dv) = (vec![C64::default(); m], vec![[C64::default(); 2]; m]);
    for i in 0..n {
        jet.load(i, &mut v, &mut dv);
        let fp = nl.forcing_partials(&v, &dv, d);
        for bb in 0..m {
            let gu = nl.metric_du(&v, bb);
            let gub = nl.metric_dubar(&v, bb);
            for a in 0..m {
                let e = a * m + bb;
                for j in 0..d {
                    let mut s = C64::default();
                    let mut st = C64::default();
                    for k in 0..d {
                        s += gu[j][k] * dv[a][k];
                        st += gub[j][k] * dv[a][k];
                    }
                    hb[j][e][i] = s;
                    hbt[j][e][i] = st;
                    b[j][e][i] = s - fp.dgrad[e][j];
                    bt[j][e][i] = st - fp.dgradbar[e][j];
                }
                c[e][i] = -fp.du[e];
                ct[e][i] = -fp.dubar[e];
            }
        }
    }
    for j in 0..d {
        let sym = derivative_symbol(&spec, j);
        for e in 0..m * m {
            for (h, out) in [(&hb[j][e], &mut c[e]), (&hbt[j][e], &mut ct[e])] {
                let mut buf = h.clone();
                dft_inplace(&spec, &mut buf, false);
                buf.iter_mut().zip(&sym).for_each(|(z, s)| *z *= s);
                dft_inplace(&spec, &mut buf, true);
                out.iter_mut().zip(&buf).for_each(|(o, z)| *o += z);
            }
        }
    }
    Ok(CoefficientSet { spec, m, g, b, bt, c, ct, source: u.clone() })
}

/// Low-passed copies `S_{≤N-4} a` of a coefficient, for `N ≥ 4`.
#[derive(Clone, Debug)]
pub struct LowParts {
    parts: Vec<Option<Vec<C64>>>,
}

impl LowParts {
    pub fn new(spec: &GridSpec, a: &[C64]) -> Self {
        let b = bands(spec);
        let top = b.top();
        let zero = a.iter().all(|z| *z == C64::default());
        let mut hat = a.to_vec();
        dft_inplace(spec, &mut hat, false);
        let parts = (0..=top)
            .map(|n| {
                if n < PARA_GAP || zero {
                    return None;
                }
                let mask = b.lowpass(n - PARA_GAP);
                let mut buf: Vec<C64> = hat.iter().zip(mask).map(|(z, w)| z * w).collect();
                dft_inplace(spec, &mut buf, true);
                Some(buf)
            })
            .collect();
        Self { parts }
    }

    fn real(spec: &GridSpec, a: &[f64]) -> Self {
        let v: Vec<C64> = a.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::new(spec, &v)
    }

    fn at(&self, n: usize) -> Option<&[C64]> {
        self.parts.get(n).and_then(|p| p.as_deref())
    }

    fn is_zero(&self) -> bool {
        self.parts.iter().all(|p| p.is_none())
    }
}

fn masked_inverse(spec: &GridSpec, hat: &[C64], mask: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = hat.iter().zip(mask).map(|(z, w)| z * w).collect();
    dft_inplace(spec, &mut buf, true);
    buf
}

/// `T_a b = Σ_{N≥4} S_{≤N-4}a · S_N b`, componentwise; a scalar `a` multiplies every component.
pub fn paraproduct(a: &Field, b: &Field) -> Result<Field> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    if a.m() != 1 && a.m() != b.m() {
        return Err(Error::ComponentMismatch(a.m(), b.m()));
    }
    let spec = *b.spec();
    let bd = bands(&spec);
    let lows: Vec<LowParts> = a.comps().iter().map(|c| LowParts::new(&spec, c)).collect();
    let comps = b
        .comps()
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let low = &lows[if a.m() == 1 { 0 } else { ci }];
            let mut hat = c.clone();
            dft_inplace(&spec, &mut hat, false);
            let mut out = vec![C64::default(); spec.len()];
            for n in PARA_GAP..=bd.top() {
                if let Some(l) = low.at(n) {
                    let piece = masked_inverse(&spec, &hat, bd.band(n).unwrap_or(&[]));
                    out.iter_mut().zip(l).zip(&piece).for_each(|((o, x), y)| *o += x * y);
                }
            }
            out
        })
        .collect();
    Field::new(spec, comps)
}

/// Precomputed paradifferential operator `L` for one coefficient set.
#[derive(Clone)]
pub struct ParadiffOperator {
    spec: GridSpec,
    m: usize,
    bands: Arc<Bands>,
    dsym: Vec<Vec<C64>>,
    g_low: Vec<Vec<Option<LowParts>>>,
    b_low: Vec<Vec<LowParts>>,
    bt_low: Vec<Vec<LowParts>>,
    completion: Vec<f64>,
    first_order: bool,
}

impl ParadiffOperator {
    pub fn new(cs: &CoefficientSet) -> Self {
        Self::build(cs, true)
    }

    /// Only the symmetrized second-order part `A`.
    pub fn second_order_only(cs: &CoefficientSet) -> Self {
        Self::build(cs, false)
    }

    fn build(cs: &CoefficientSet, first_order: bool) -> Self {
        let spec = cs.spec;
        let d = spec.dim;
        let bd = bands(&spec);
        let g_low = (0..d)
            .map(|j| {
                (0..d)
                    .map(|k| {
                        let e = cs.g.entry(j, k);
                        if e.iter().all(|&v| v == 0.0) {
                            None
                        } else {
                            Some(LowParts::real(&spec, &e))
                        }
                    })
                    .collect()
            })
            .collect();
        let lows = |set: &Vec<Vec<Vec<C64>>>| -> Vec<Vec<LowParts>> { set.iter().map(|per| per.iter().map(|f| LowParts::new(&spec, f)).collect()).collect() };
        let completion = (0..spec.len())
            .map(|i| {
                let r = spec.frequency_norm(i);
                -r * r * bd.lowpass(PARA_GAP - 1)[i]
            })
            .collect();
        Self {
            spec,
            m: cs.m,
            dsym: (0..d).map(|j| derivative_symbol(&spec, j)).collect(),
            g_low,
            b_low: if first_order { lows(&cs.b) } else { vec![] },
            bt_low: if first_order { lows(&cs.bt) } else { vec![] },
            bands: bd,
            completion,
            first_order,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `L w`.
    pub fn apply(&self, w: &Field) -> Field {
        let spec = self.spec;
        let (d, m, n) = (spec.dim, self.m, spec.len());
        let top = self.bands.top();
        let hats: Vec<Vec<C64>> = w
            .comps()
            .iter()
            .map(|c| {
                let mut h = c.clone();
                dft_inplace(&spec, &mut h, false);
                h
            })
            .collect();
        // pieces[b][k][N] = S_N ∂_k w_b for N ≥ 4
        let pieces: Vec<Vec<Vec<Vec<C64>>>> = hats
            .iter()
            .map(|h| {
                (0..d)
                    .map(|k| {
                        let dh: Vec<C64> = h.iter().zip(&self.dsym[k]).map(|(a, s)| a * s).collect();
                        (0..=top).map(|nn| if nn < PARA_GAP { vec![] } else { masked_inverse(&spec, &dh, self.bands.band(nn).unwrap_or(&[])) }).collect()
                    })
                    .collect()
            })
            .collect();
        let grads: Vec<Vec<Vec<C64>>> = hats
            .iter()
            .map(|h| {
                (0..d)
                    .map(|k| {
                        let mut buf: Vec<C64> = h.iter().zip(&self.dsym[k]).map(|(a, s)| a * s).collect();
                        dft_inplace(&spec, &mut buf, true);
                        buf
                    })
                    .collect()
            })
            .collect();

        let mut out = Vec::with_capacity(m);
        for a in 0..m {
            let mut acc_hat: Vec<C64> = hats[a].iter().zip(&self.completion).map(|(z, c)| z * c).collect();
            for j in 0..d {
                let mut inner_hat = vec![C64::default(); n];
                for k in 0..d {
                    let Some(low) = &self.g_low[j][k] else { continue };
                    let mut first = vec![C64::default(); n];
                    for nn in PARA_GAP..=top {
                        let Some(l) = low.at(nn) else { continue };
                        first.iter_mut().zip(l).zip(&pieces[a][k][nn]).for_each(|((o, x), y)| *o += x * y);
                        let mut prod: Vec<C64> = l.iter().zip(&grads[a][k]).map(|(x, y)| x * y).collect();
                        dft_inplace(&spec, &mut prod, false);
                        let mask = self.bands.band(nn).unwrap_or(&[]);
                        inner_hat.iter_mut().zip(&prod).zip(mask).for_each(|((o, p), w)| *o += p * w);
                    }
                    dft_inplace(&spec, &mut first, false);
                    inner_hat.iter_mut().zip(&first).for_each(|(o, f)| *o += f);
                }
                acc_hat.iter_mut().zip(&inner_hat).zip(&self.dsym[j]).for_each(|((o, x), s)| *o += 0.5 * s * x);
            }
            dft_inplace(&spec, &mut acc_hat, true);
            let mut res = acc_hat;
            if self.first_order {
                for j in 0..d {
                    for bb in 0..m {
                        let e = a * m + bb;
                        for (set, conj) in [(&self.b_low, false), (&self.bt_low, true)] {
                            let low = &set[j][e];
                            if low.is_zero() {
                                continue;
                            }
                            for nn in PARA_GAP..=top {
                                let Some(l) = low.at(nn) else { continue };
                                let p = &pieces[bb][j][nn];
                                if conj {
                                    res.iter_mut().zip(l).zip(p).for_each(|((o, x), y)| *o += x * y.conj());
                                } else {
                                    res.iter_mut().zip(l).zip(p).for_each(|((o, x), y)| *o += x * y);
                                }
                            }
                        }
                    }
                }
            }
            out.push(res);
        }
        Field::new(spec, out).expect("shape")
    }
}

/// `A_sym w + T_{b^j} ∂_j w + T_{b̃^j} ∂_j w̄`.
pub fn paradiff_operator(cs: &CoefficientSet, w: &Field) -> Result<Field> {
    if cs.spec != *w.spec() {
        return Err(Error::GridMismatch);
    }
    if cs.m != w.m() {
        return Err(Error::ComponentMismatch(cs.m, w.m()));
    }
    Ok(ParadiffOperator::new(cs).apply(w))
}

/// `∂_j(g^{jk} ∂_k u)` with the full metric.
pub fn divergence_form(g: &MetricField, u: &Field) -> Field {
    let spec = *u.spec();
    let d = spec.dim;
    let syms: Vec<Vec<C64>> = (0..d).map(|j| derivative_symbol(&spec, j)).collect();
    let comps = u
        .comps()
        .iter()
        .map(|c| {
            let mut hat = c.clone();
            dft_inplace(&spec, &mut hat, false);
            let grads: Vec<Vec<C64>> = syms.iter().map(|s| masked_c(&spec, &hat, s)).collect();
            let mut acc = vec![C64::default(); spec.len()];
            for j in 0..d {
                let mut flux: Vec<C64> = (0..spec.len()).map(|i| (0..d).map(|k| grads[k][i] * g.at(i)[j][k]).sum()).collect();
                dft_inplace(&spec, &mut flux, false);
                acc.iter_mut().zip(&flux).zip(&syms[j]).for_each(|((a, f), s)| *a += f * s);
            }
            dft_inplace(&spec, &mut acc, true);
            acc
        })
        .collect();
    Field::new(spec, comps).expect("shape")
}

fn masked_c(spec: &GridSpec, hat: &[C64], sym: &[C64]) -> Vec<C64> {
    let mut buf: Vec<C64> = hat.iter().zip(sym).map(|(a, s)| a * s).collect();
    dft_inplace(spec, &mut buf, true);
    buf
}

/// The balanced remainder `G = F − ∂_j(g^{jk}∂_k u) + L u`, so that the full
/// equation reads `i u_t + L u = G` exactly.
pub fn remainder_g(u: &Field, nl: &dyn Nonlinearity) -> Result<Field> {
    let cs = linearized_coeffs(u, nl)?;
    remainder_g_with(u, nl, &cs, &ParadiffOperator::new(&cs))
}

/// [`remainder_g`] reusing coefficients already evaluated at `u`.
pub fn remainder_g_with(u: &Field, nl: &dyn Nonlinearity, cs: &CoefficientSet, op: &ParadiffOperator) -> Result<Field> {
    let f = forcing_of(u, nl)?;
    let div = divergence_form(&cs.g, u);
    Ok(f.sub(&div).add(&op.apply(u)))
}

/// The operator `w ↦ R w̄` with symbol `r(x,ξ) = −i b̃^j ξ_j / (2 g^{jk} ξ_j ξ_k) · (1 − χ(2^{-ℓ₀}|ξ|))`,
/// applied low-high: the `x`-dependence is low-passed four bands below each `ξ` band.
///
/// In one dimension the two signs of `ξ` make the symbol separable and the
/// application exact; in two dimensions the direction dependence is
/// interpolated over angular sectors.
#[derive(Clone)]
pub struct ConjugationOp {
    spec: GridSpec,
    m: usize,
    floor: usize,
    norm: f64,
    bands: Arc<Bands>,
    /// Per sector: Fourier weight `φ_s(ξ̂)|ξ|^{-1}(1−χ)` and low parts of `ρ_s` per `(a, b)`.
    sectors: Vec<(Vec<f64>, Vec<LowParts>)>,
}

const SECTORS_2D: usize = 16;

fn sector_weights(spec: &GridSpec) -> Vec<(Vec<f64>, [f64; 2])> {
    if spec.dim == 1 {
        let pos = (0..spec.len()).map(|i| if spec.frequency(i)[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let neg = (0..spec.len()).map(|i| if spec.frequency(i)[0] < 0.0 { 1.0 } else { 0.0 }).collect();
        return vec![(pos, [1.0, 0.0]), (neg, [-1.0, 0.0])];
    }
    let width = 2.0 * PI / SECTORS_2D as f64;
    (0..SECTORS_2D)
        .map(|s| {
            let th = s as f64 * width;
            let w = (0..spec.len())
                .map(|i| {
                    let k = spec.frequency(i);
                    if k[0] == 0.0 && k[1] == 0.0 {
                        return 0.0;
                    }
                    let mut dth = k[1].atan2(k[0]) - th;
                    dth -= 2.0 * PI * (dth / (2.0 * PI)).round();
                    (1.0 - dth.abs() / width).max(0.0)
                })
                .collect();
            (w, [th.cos(), th.sin()])
        })
        .collect()
}

impl ConjugationOp {
    fn with_floor(cs: &CoefficientSet, floor: usize) -> Self {
        let spec = cs.spec;
        let m = cs.m;
        let d = spec.dim;
        let cut = (floor as f64).exp2();
        let radial: Vec<f64> = (0..spec.len())
            .map(|i| {
                let r = spec.frequency_norm(i);
                if r == 0.0 {
                    0.0
                } else {
                    (1.0 - lowpass_profile(r / cut)) / r
                }
            })
            .collect();
        let zero_bt = cs.bt.iter().flatten().flatten().all(|z| *z == C64::default());
        let sectors = if zero_bt {
            vec![]
        } else {
            sector_weights(&spec)
                .into_iter()
                .map(|(w, th)| {
                    let weight: Vec<f64> = w.iter().zip(&radial).map(|(a, b)| a * b).collect();
                    let coeffs = (0..m * m)
                        .map(|e| {
                            let rho: Vec<C64> = (0..spec.len())
                                .map(|i| {
                                    let g = cs.g.at(i);
                                    let mut q = 0.0;
                                    let mut num = C64::default();
                                    for j in 0..d {
                                        num += cs.bt[j][e][i] * th[j];
                                        for k in 0..d {
                                            q += g[j][k] * th[j] * th[k];
                                        }
                                    }
                                    C64::new(0.0, -1.0) * num / (2.0 * q)
                                })
                                .collect();
                            LowParts::new(&spec, &rho)
                        })
                        .collect();
                    (weight, coeffs)
                })
                .collect()
        };
        Self { spec, m, floor, norm: 0.0, bands: bands(&spec), sectors }
    }

    pub fn floor(&self) -> usize {
        self.floor
    }

    /// Measured operator norm of `R` on `L²`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_identity(&self) -> bool {
        self.sectors.is_empty()
    }

    /// `R v` (no conjugation applied to the input).
    pub fn apply_r(&self, v: &Field) -> Field {
        let spec = self.spec;
        let m = self.m;
        let mut out = vec![vec![C64::default(); spec.len()]; m];
        if self.sectors.is_empty() {
            return Field::new(spec, out).expect("shape");
        }
        let top = self.bands.top();
        for bb in 0..m {
            let mut hat = v.comp(bb).to_vec();
            dft_inplace(&spec, &mut hat, false);
            for (weight, coeffs) in &self.sectors {
                for nn in PARA_GAP..=top {
                    let band = self.bands.band(nn).unwrap_or(&[]);
                    let mut piece: Option<Vec<C64>> = None;
                    for a in 0..m {
                        let Some(l) = coeffs[a * m + bb].at(nn) else { continue };
                        let p = piece.get_or_insert_with(|| {
                            let mut buf: Vec<C64> = hat.iter().zip(weight).zip(band).map(|((z, w), s)| z * (w * s)).collect();
                            dft_inplace(&spec, &mut buf, true);
                            buf
                        });
                        out[a].iter_mut().zip(l).zip(p.iter()).for_each(|((o, x), y)| *o += x * y);
                    }
                }
            }
        }
        Field::new(spec, out).expect("shape")
    }

    /// `R* c`.
    pub fn apply_r_adjoint(&self, c: &Field) -> Field {
        let spec = self.spec;
        let m = self.m;
        let mut out = vec![vec![C64::default(); spec.len()]; m];
        if self.sectors.is_empty() {
            return Field::new(spec, out).expect("shape");
        }
        let top = self.bands.top();
        for bb in 0..m {
            let mut acc = vec![C64::default(); spec.len()];
            for (weight, coeffs) in &self.sectors {
                for nn in PARA_GAP..=top {
                    let band = self.bands.band(nn).unwrap_or(&[]);
                    let mut prod = vec![C64::default(); spec.len()];
                    let mut any = false;
                    for a in 0..m {
                        let Some(l) = coeffs[a * m + bb].at(nn) else { continue };
                        any = true;
                        prod.iter_mut().zip(l).zip(c.comp(a)).for_each(|((o, x), y)| *o += x.conj() * y);
                    }
                    if any {
                        dft_inplace(&spec, &mut prod, false);
                        acc.iter_mut().zip(&prod).zip(weight.iter().zip(band)).for_each(|((o, p), (w, s))| *o += p * (w * s));
                    }
                }
            }
            dft_inplace(&spec, &mut acc, true);
            out[bb] = acc;
        }
        Field::new(spec, out).expect("shape")
    }

    fn measure_norm(&mut self) {
        if self.sectors.is_empty() {
            self.norm = 0.0;
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let spec = self.spec;
        let comps = (0..self.m).map(|_| (0..spec.len()).map(|_| C64::new(normal(&mut rng), normal(&mut rng))).collect()).collect();
        let mut v = Field::new(spec, comps).expect("shape");
        let mut est = 0.0;
        for _ in 0..40 {
            let nv = v.l2_norm();
            if nv == 0.0 {
                break;
            }
            v = v.scaled(C64::new(1.0 / nv, 0.0));
            let rv = self.apply_r(&v);
            let next = rv.l2_norm();
            let w = self.apply_r_adjoint(&rv);
            if (next - est).abs() <= 1e-6 * next {
                est = next;
                break;
            }
            est = next;
            v = w;
        }
        self.norm = est;
    }

    /// `S w = w + R w̄`.
    pub fn apply(&self, w: &Field) -> Field {
        w.add(&self.apply_r(&w.conj()))
    }

    /// Solve `S w = y` by the Neumann series `w ← y − R w̄`.
    pub fn invert(&self, y: &Field) -> Result<Field> {
        if self.norm >= 1.0 {
            return Err(Error::NotContracting(self.norm));
        }
        let mut w = y.clone();
        let scale = y.l2_norm().max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            let next = y.sub(&self.apply_r(&w.conj()));
            let inc = next.sub(&w).l2_norm();
            w = next;
            if inc <= 1e-12 * scale {
                return Ok(w);
            }
        }
        Err(Error::NotContracting(self.norm))
    }
}

/// Build the conjugation, choosing the smallest floor `ℓ₀` with `‖R‖ ≤ 1/2`
/// unless `floor` fixes it, in which case a larger norm is an error.
pub fn build_conjugation(cs: &CoefficientSet, floor: Option<usize>) -> Result<ConjugationOp> {
    let top = cs.spec.top_band();
    match floor {
        Some(f) => {
            let mut op = ConjugationOp::with_floor(cs, f);
            op.measure_norm();
            if op.norm > 0.5 {
                return Err(Error::NotContracting(op.norm));
            }
            Ok(op)
        }
        None => {
            for f in 0..=top + 1 {
                let mut op = ConjugationOp::with_floor(cs, f);
                op.measure_norm();
                if op.norm <= 0.5 {
                    return Ok(op);
                }
            }
            Err(Error::NotContracting(f64::INFINITY))
        }
    }
}

/// `S w = w + R w̄`.
pub fn apply_conjugation(op: &ConjugationOp, w: &Field) -> Field {
    op.apply(w)
}

/// `Σ_j T_{c^j} ∂_j v` for matrix coefficients `c[j][a*m + b]`.
pub fn para_first_order(spec: &GridSpec, coeff: &[Vec<Vec<C64>>], v: &Field) -> Result<Field> {
    let m = v.m();
    let mut out = Field::zeros(*spec, m);
    for (j, per_axis) in coeff.iter().enumerate() {
        let dv = crate::spectral::spectral_derivative(v, j)?;
        for a in 0..m {
            for bb in 0..m {
                let c = Field::new(*spec, vec![per_axis[a * m + bb].clone()])?;
                let piece = Field::new(*spec, vec![dv.comp(bb).to_vec()])?;
                let t = paraproduct(&c, &piece)?;
                out.comp_mut(a).iter_mut().zip(t.comp(0)).for_each(|(o, x)| *o += x);
            }
        }
    }
    Ok(out)
}

/// The principal `∇w̄` coupling left after conjugation,
/// `A R v + R A v − T_{b̃^j} ∂_j v`, returned with `T_{b̃^j} ∂_j v` for comparison.
pub fn conjugated_coupling(cs: &CoefficientSet, op: &ConjugationOp, v: &Field) -> Result<(Field, Field)> {
    let a = ParadiffOperator::second_order_only(cs);
    let coupling = para_first_order(&cs.spec, &cs.bt, v)?;
    let residual = a.apply(&op.apply_r(v)).add(&op.apply_r(&a.apply(v))).sub(&coupling);
    Ok((residual, coupling))
}
