//! Deterministic test-field generators shared by tests, probes and the cli.

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::spectral::{from_frequency, Field, FrequencyField, GridSpec};

/// Standard normal draw (Box-Muller).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random field with Fourier coefficients `N(0,1)·(1+|ξ|²)^{-decay/2}`,
/// normalized to unit grid L² norm.
pub fn random_field<R: Rng + ?Sized>(spec: &GridSpec, m: usize, decay: f64, rng: &mut R) -> Field {
    let comps = (0..m)
        .map(|_| {
            (0..spec.len())
                .map(|i| {
                    let r = spec.frequency_norm(i);
                    let w = (1.0 + r * r).powf(-0.5 * decay);
                    C64::new(normal(rng), normal(rng)) * w
                })
                .collect()
        })
        .collect();
    let f = from_frequency(&FrequencyField::new(*spec, comps).expect("shape"));
    let n = f.l2_norm();
    if n > 0.0 {
        f.scaled(C64::new(1.0 / n, 0.0))
    } else {
        f
    }
}

/// Periodic distance from the origin along one axis.
fn wrap(spec: &GridSpec, x: f64) -> f64 {
    let p = spec.period();
    x - p * (x / p).round()
}

/// `amp·exp(−|x−c|²/w²)·e^{iω·x}` with periodic distance.
pub fn gaussian(spec: &GridSpec, amp: f64, center: [f64; 2], width: f64, omega: [f64; 2]) -> Field {
    let s = *spec;
    Field::from_fn(s, move |x| {
        let d0 = wrap(&s, x[0] - center[0]);
        let d1 = if s.dim == 2 { wrap(&s, x[1] - center[1]) } else { 0.0 };
        let r2 = d0 * d0 + d1 * d1;
        let phase = omega[0] * x[0] + if s.dim == 2 { omega[1] * x[1] } else { 0.0 };
        C64::from_polar(amp * (-r2 / (width * width)).exp(), phase)
    })
}
