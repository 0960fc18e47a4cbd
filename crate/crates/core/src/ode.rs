//! Dormand-Prince 5(4) embedded Runge-Kutta pair with step-size control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand-Prince step; returns the fifth-order solution and the error estimate.
pub fn dp_step<const N: usize>(f: &impl Fn(f64, &[f64; N]) -> [f64; N], t: f64, y: &[f64; N], h: f64) -> ([f64; N], f64) {
    let mut k = [[0.0; N]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (r, a) in A[s].iter().enumerate().take(s) {
            if *a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * k[r][i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut err: f64 = 0.0;
    for i in 0..N {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += B5[s] * k[s][i];
            d4 += B4[s] * k[s][i];
        }
        y5[i] += h * d5;
        err = err.max((h * (d5 - d4)).abs());
    }
    (y5, err)
}

/// Adaptive step controller with an absolute tolerance on the max-norm error.
#[derive(Clone, Copy, Debug)]
pub struct Controller {
    pub tol: f64,
    pub h: f64,
    pub h_max: f64,
    pub h_min: f64,
}

impl Controller {
    pub fn new(tol: f64, h0: f64, h_max: f64) -> Self {
        Self { tol, h: h0.min(h_max), h_max, h_min: 1e-12 }
    }

    /// Take one accepted step of at most `h_cap`; returns `(h_used, y_new)`.
    pub fn step<const N: usize>(&mut self, f: &impl Fn(f64, &[f64; N]) -> [f64; N], t: f64, y: &[f64; N], h_cap: f64) -> Result<(f64, [f64; N])> {
        let mut rejections = 0;
        loop {
            let h = self.h.min(h_cap).min(self.h_max);
            let (ynew, err) = dp_step(f, t, y, h);
            if !ynew.iter().all(|v| v.is_finite()) {
                self.h = 0.25 * h;
            } else if err <= self.tol {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * (self.tol / err).powf(0.2)).clamp(0.2, 5.0) };
                let proposed = (h * fac).min(self.h_max);
                self.h = if h < self.h { self.h.max(proposed) } else { proposed };
                return Ok((h, ynew));
            } else {
                self.h = h * (0.9 * (self.tol / err).powf(0.25)).clamp(0.1, 0.9);
            }
            rejections += 1;
            if self.h < self.h_min || rejections > 60 {
                return Err(Error::Integrator(format!("step size collapsed to {:.3e} at t = {t:.6} after {rejections} rejections", self.h)));
            }
        }
    }
}

/// Integrate from `t0` to `t1` (either direction) and return the final state.
pub fn integrate<const N: usize>(f: &impl Fn(f64, &[f64; N]) -> [f64; N], t0: f64, y0: [f64; N], t1: f64, tol: f64) -> Result<[f64; N]> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let g = |t: f64, y: &[f64; N]| {
        let mut d = f(t0 + dir * (t - t0), y);
        d.iter_mut().for_each(|v| *v *= dir);
        d
    };
    let mut ctl = Controller::new(tol, (span.abs() / 16.0).min(0.1), span.abs());
    let (mut t, mut y) = (t0, y0);
    let end = t0 + span.abs();
    let mut steps = 0usize;
    while end - t > 1e-14 * end.abs().max(1.0) {
        let (h, ny) = ctl.step(&g, t, &y, end - t)?;
        t += h;
        y = ny;
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::Integrator("step budget exhausted".into()));
        }
    }
    Ok(y)
}
