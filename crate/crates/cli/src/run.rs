//! Experiment orchestration for the four modes.

use std::time::Instant;

use qls_core::hamilton::{trace_ray, FlatMetric, GridMetric, Metric, PhasePoint, Ray, RayCaps};
use qls_core::model::{linearized_coeffs, metric_of, CoefficientSet, MetricField};
use qls_core::nontrap::{
    bump_metric, check_exterior_escape, compute_l_with_rays, data_radius, exterior_norm, find_r, ring_metric, ring_profile, EscapeCheck, TrapReport,
};
use qls_core::sample::random_field;
use qls_core::solver::{
    continuous_dependence, envelope_trace, iterate, linear_step, local_energy_report, DependenceTable, EnvelopeTrace, IterationTrace, LocalEnergyReport,
    SolverConfig, StepRecord,
};
use qls_core::spaces::{lp_hs_norm, lp_xs_norm, make_envelope, CubeSum, NormReport};
use qls_core::spectral::{bands, cube_partition, dft_inplace, lp_project, Field, GridSpec};
use qls_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Background, Mode, RunConfig};

/// One checked or reported property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    /// Asserted verdicts decide the exit code; the rest are informational.
    pub asserted: bool,
}

impl Verdict {
    fn at_most(name: &str, value: f64, bound: f64, asserted: bool) -> Self {
        Self { name: name.into(), value, bound, passed: value <= bound, asserted }
    }

    fn flag(name: &str, ok: bool, asserted: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, bound: 1.0, passed: ok, asserted }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub trap: TrapReport,
    pub escape: Option<EscapeCheck>,
    /// Exterior norm of `g − I` at the chosen radius, when the metric lives on the grid.
    pub exterior_norm: Option<f64>,
    pub data_norms: NormReport,
    #[serde(skip)]
    pub rays: Vec<Ray>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub diverged: bool,
    pub trace: IterationTrace,
    pub envelope: EnvelopeTrace,
    pub local_energy: LocalEnergyReport,
    pub final_norms: NormReport,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSweepRow {
    pub t: f64,
    pub converged: bool,
    pub ratio_x0: f64,
    pub ratio_incoming: f64,
    pub ratio_compact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub n: usize,
    pub converged: bool,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dependence: Option<DependenceTable>,
    pub t_sweep: Vec<TSweepRow>,
    pub resolution: Vec<ResolutionRow>,
}

/// Everything written to `report.json`. Timings are kept apart so that the
/// report is reproducible bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub analysis: Option<AnalysisReport>,
    pub solve: Option<SolveReport>,
    pub sweep: Option<SweepReport>,
    pub verdicts: Vec<Verdict>,
    /// Set when a numerical failure cut the run short.
    pub failure: Option<String>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self { schema_version: config.schema_version, config, analysis: None, solve: None, sweep: None, verdicts: vec![], failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.verdicts.iter().filter(|v| v.asserted).all(|v| v.passed)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push((name.into(), t.elapsed().as_secs_f64()));
        log::info!("{name}: {:.3}s", t.elapsed().as_secs_f64());
        out
    }
}

/// Run the configured mode, filling `report`. Numerical errors stop the run
/// and are recorded in the report.
pub fn run(cfg: &RunConfig, report: &mut RunReport, timings: &mut Timings) {
    let res = match cfg.mode {
        Mode::Analyze => timings.time("analyze", || analyze(cfg)).map(|(a, v)| {
            report.analysis = Some(a);
            report.verdicts.extend(v);
        }),
        Mode::Solve => timings.time("solve", || solve(cfg, &cfg.solver, cfg.grid)).map(|s| {
            report.verdicts.push(Verdict::flag("converged", s.converged, true));
            report.verdicts.extend(uniform_bounds(&s.trace));
            report.solve = Some(s);
        }),
        Mode::Verify => {
            report.verdicts.extend(timings.time("verify", || verify(cfg)));
            Ok(())
        }
        Mode::Sweep => timings.time("sweep", || sweep(cfg)).map(|(s, v)| {
            report.sweep = Some(s);
            report.verdicts.extend(v);
        }),
    };
    if let Err(e) = res {
        log::error!("{e}");
        report.failure = Some(e.to_string());
    }
}

fn background(cfg: &RunConfig, u0: &Field) -> qls_core::Result<(Box<dyn Metric>, Option<MetricField>)> {
    let dim = cfg.grid.dim;
    let spec = cfg.grid;
    Ok(match cfg.analysis.background {
        Background::FromData => {
            let g = metric_of(u0, &cfg.nonlinearity)?;
            (Box::new(GridMetric::new(&g)), Some(g))
        }
        Background::Flat => (Box::new(FlatMetric { dim }), Some(MetricField::identity(spec))),
        Background::Ring { amplitude, r0, width } => {
            let c = ring_profile(amplitude, r0, width);
            (Box::new(ring_metric(dim, amplitude, r0, width)), Some(MetricField::conformal(spec, move |x| c(x).0)))
        }
        Background::Bump { amplitude, center, width } => {
            let m = bump_metric(dim, amplitude, center, width);
            let sampled = MetricField::conformal(spec, |x| (m.f)(x).0);
            (Box::new(m), Some(sampled))
        }
    })
}

fn analyze(cfg: &RunConfig) -> qls_core::Result<(AnalysisReport, Vec<Verdict>)> {
    let u0 = cfg.initial_data();
    let data_norms = lp_hs_norm(&u0, cfg.trap.s0, cfg.solver.cube_sum);
    let m = data_norms.value;
    let (g, sampled) = background(cfg, &u0)?;
    let r = match (cfg.analysis.radius, &cfg.analysis.background) {
        (Some(r), _) => r,
        (None, Background::FromData) => data_radius(&u0, &cfg.nonlinearity, &cfg.trap)?.2,
        (None, _) => find_r(sampled.as_ref().expect("sampled background"), &cfg.trap)?,
    };
    let exterior = sampled.as_ref().map(|s| exterior_norm(s, r, cfg.trap.s0));
    let (trap, rays) = compute_l_with_rays(g.as_ref(), r, m, &cfg.trap)?;
    let mut verdicts = vec![Verdict::at_most("exterior_norm_within_epsilon", exterior.unwrap_or(0.0), cfg.trap.epsilon, false)];
    let escape = if cfg.analysis.escape_check && g.dim() == 2 {
        let e = check_exterior_escape(g.as_ref(), r, &cfg.trap)?;
        verdicts.push(Verdict::flag("exterior_escape", e.passed(), true));
        Some(e)
    } else {
        None
    };
    verdicts.push(Verdict::flag("nontrapping", !trap.trapped, false));
    let rays = if cfg.analysis.dump_rays { rays } else { vec![] };
    Ok((AnalysisReport { trap, escape, exterior_norm: exterior, data_norms, rays }, verdicts))
}

fn solve(cfg: &RunConfig, scfg: &SolverConfig, grid: GridSpec) -> qls_core::Result<SolveReport> {
    let u0 = cfg.data.build(&grid, cfg.nonlinearity.m, cfg.seed);
    let sol = iterate(&u0, &cfg.nonlinearity, scfg, &cfg.trap)?;
    let envelope = envelope_trace(&sol.u, scfg.s, scfg)?;
    let local_energy = local_energy_report(&sol.u, &cfg.nonlinearity, sol.trace.data_trap.r, scfg.cube_sum)?;
    let final_norms = lp_xs_norm(&sol.u, scfg.s, scfg.cube_sum)?;
    Ok(SolveReport { converged: sol.converged, diverged: sol.diverged, trace: sol.trace, envelope, local_energy, final_norms, steps: sol.steps })
}

/// `‖u⁽ⁿ⁾‖ ≤ 2M` and exterior `≤ 2ε` along the trace; reported, not asserted,
/// since they are only expected inside the lifespan bound.
fn uniform_bounds(trace: &IterationTrace) -> Vec<Verdict> {
    let norm = trace.records.iter().map(|r| r.norm_s0).fold(0.0, f64::max);
    let ext = trace.records.iter().map(|r| r.exterior_s0).fold(0.0, f64::max);
    vec![
        Verdict::at_most("uniform_norm_within_2m", norm, 2.0 * trace.m, false),
        Verdict::at_most("uniform_exterior_within_2eps", ext, 2.0 * trace.epsilon, false),
    ]
}

fn sweep(cfg: &RunConfig) -> qls_core::Result<(SweepReport, Vec<Verdict>)> {
    let u0 = cfg.initial_data();
    let mut verdicts = vec![];
    let dependence = if cfg.sweep.deltas.is_empty() {
        None
    } else {
        let phi = cfg.sweep.perturbation.build(&cfg.grid, cfg.nonlinearity.m, cfg.seed.wrapping_add(1));
        let t = continuous_dependence(&u0, &phi, &cfg.sweep.deltas, &cfg.nonlinearity, &cfg.solver, &cfg.trap)?;
        for (i, s) in t.sigmas.iter().enumerate() {
            verdicts.push(Verdict::at_most(&format!("dependence_spread_sigma_{s:.2}"), t.spread(i), 1.3, false));
        }
        Some(t)
    };
    let t_sweep = cfg
        .sweep
        .t_values
        .iter()
        .map(|&t| {
            let scfg = SolverConfig { t_final: t, ..cfg.solver.clone() };
            let sol = iterate(&u0, &cfg.nonlinearity, &scfg, &cfg.trap)?;
            let le = local_energy_report(&sol.u, &cfg.nonlinearity, sol.trace.data_trap.r, scfg.cube_sum)?;
            Ok(TSweepRow { t, converged: sol.converged, ratio_x0: le.ratio_x0, ratio_incoming: le.ratio_incoming, ratio_compact: le.ratio_compact })
        })
        .collect::<qls_core::Result<Vec<_>>>()?;
    let resolution = cfg
        .sweep
        .resolutions
        .iter()
        .map(|&n| {
            let grid = GridSpec::new(cfg.grid.dim, n, cfg.grid.box_exp)?;
            let s = solve(cfg, &cfg.solver, grid)?;
            Ok(ResolutionRow { n, converged: s.converged, max_ratio: s.envelope.max_ratio })
        })
        .collect::<qls_core::Result<Vec<_>>>()?;
    Ok((SweepReport { dependence, t_sweep, resolution }, verdicts))
}

/// Fast invariants of the numerical substrate, on the configured grid.
fn verify(cfg: &RunConfig) -> Vec<Verdict> {
    let spec = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fields: Vec<Field> = (0..10).map(|_| random_field(&spec, 1, 1.0, &mut rng)).collect();
    let mut out = vec![];

    let top = bands(&spec).top();
    let partition = fields
        .iter()
        .map(|f| {
            let sum = (0..=top).map(|k| lp_project(f, k)).fold(Field::zeros(spec, 1), |a, b| a.add(&b));
            sum.sub(f).sup_norm()
        })
        .fold(0.0, f64::max);
    out.push(Verdict::at_most("lp_partition_of_unity", partition, 1e-10, true));

    let cubes = (0..=spec.finest_cube_scale())
        .map(|j| {
            let parts = cube_partition(&spec, j);
            (0..spec.len()).map(|i| (parts.iter().map(|(_, w)| w[i]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    out.push(Verdict::at_most("cube_partition_of_unity", cubes, 1e-12, true));

    let round_trip = fields
        .iter()
        .map(|f| {
            let mut buf = f.comp(0).to_vec();
            dft_inplace(&spec, &mut buf, false);
            dft_inplace(&spec, &mut buf, true);
            buf.iter().zip(f.comp(0)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    out.push(Verdict::at_most("dft_round_trip", round_trip, 1e-12, true));

    let envelope_ok = fields.iter().all(|f| {
        let blocks: Vec<f64> = lp_hs_norm(f, cfg.solver.s, CubeSum::One).per_scale.iter().map(|&(_, v)| v).collect();
        make_envelope(&blocks, cfg.solver.envelope_delta, cfg.solver.envelope_sigma).map(|e| e.check(&blocks).all()).unwrap_or(false)
    });
    out.push(Verdict::flag("envelope_admissible", envelope_ok, true));

    let flat = FlatMetric { dim: spec.dim };
    let r = 8.0;
    let caps = RayCaps { record: true, ..RayCaps::for_radius(r, cfg.trap.kappa) };
    let p = PhasePoint::unit([2.0 * r, 0.5], std::f64::consts::PI);
    let chord = 2.0 * (4.0 * r * r - 0.25_f64).sqrt();
    let (straight, length) = match trace_ray(&flat, &p, &caps) {
        Ok(ray) => (ray.samples.iter().map(|s| (s.x[1] - 0.5).abs()).fold(0.0, f64::max), (ray.length_in_ball - chord).abs() / chord),
        Err(_) => (f64::INFINITY, f64::INFINITY),
    };
    out.push(Verdict::at_most("flat_ray_straight", straight, 1e-8, true));
    out.push(Verdict::at_most("flat_chord_length", length, 1e-6, true));

    // One free implicit-midpoint step against the exact Cayley factor.
    let w = &fields[0];
    let dt = 1e-2;
    let cayley = match linear_step(&CoefficientSet::flat(spec, 1), w, &Field::zeros(spec, 1), dt, 1e-13) {
        Ok((w1, _)) => {
            let mut hat = w.comp(0).to_vec();
            dft_inplace(&spec, &mut hat, false);
            for (i, z) in hat.iter_mut().enumerate() {
                let k2 = spec.frequency_norm(i).powi(2);
                *z *= C64::new(1.0, -0.5 * dt * k2) / C64::new(1.0, 0.5 * dt * k2);
            }
            dft_inplace(&spec, &mut hat, true);
            w1.comp(0).iter().zip(&hat).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        }
        Err(_) => f64::INFINITY,
    };
    out.push(Verdict::at_most("free_step_cayley", cayley, 1e-10, true));

    let coeffs_zero = linearized_coeffs(&Field::zeros(spec, cfg.nonlinearity.m), &cfg.nonlinearity)
        .map(|cs| cs.first_order_size().iter().copied().fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    out.push(Verdict::at_most("zero_state_first_order_vanish", coeffs_zero, 1e-14, true));
    out
}
