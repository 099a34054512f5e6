//! Stage implementations. Each stage returns its results as data; the
//! writers in [`crate::output`] persist them.

use rayon::prelude::*;

use dynprobe_core::conductivity::{build_conductivity, ConductivityOptions, ConductivityPair, Fill, Tensor};
use dynprobe_core::geometry::{curve_profile, validate_inclusion, DistanceProfile, GeometryGrid, GeometryReport, MovingInclusion, ProbeCurve};
use dynprobe_core::indicator::{
    classify_curve, compare_slopes, judge_mismatch, log_slope, residual_bound, volume_indicator, BoundaryProbe, Classification,
    IndicatorMode, IndicatorSamples, IndicatorValue, MismatchVerdict, PairDn, SlopeEstimate,
};
use dynprobe_core::math::dist;
use dynprobe_core::mesh::{Embedding, SpaceTimeField, TimeGrid};
use dynprobe_core::pde::{assemble_damped_dn, solve_heat, BoundaryField, DampedSolver, Direction, Medium};
use dynprobe_core::runge::RungeOptions;
use dynprobe_core::special::{compute_special_set, estimate_kappa, KernelConstants, KernelSamples, KernelSimulation, PKernel, SpecialOptions, SpecialSolutionSet};
use dynprobe_core::verify::{
    check_caccioppoli, check_comparisons, check_harnack_elliptic, check_harnack_parabolic, check_inclusion_estimates, check_indicator_bounds,
    empirical_tau0, p_integrals, ConstantReport, KernelCache, SamplePlan, STABILITY_LIMIT,
};
use dynprobe_core::Point;

use crate::config::{build_inclusion, CurveConfig, ExperimentConfig};
use crate::error::LabError;

/// Everything built from a configuration before the first solve.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub emb: Embedding,
    pub grid: TimeGrid,
    pub incl: MovingInclusion,
    pub search: MovingInclusion,
    pub pair: ConductivityPair,
    pub b_outer: Vec<Tensor>,
    pub v0: Vec<f64>,
    pub geometry: GeometryReport,
    pub curves: Vec<(CurveConfig, ProbeCurve)>,
}

pub fn grid_times(grid: &TimeGrid) -> Vec<f64> {
    (grid.n0()..=grid.n_t()).map(|n| grid.t(n)).collect()
}

fn mass_norm2(emb: &Embedding, v: &[f64]) -> f64 {
    emb.inner.lumped_mass().iter().zip(v).map(|(m, x)| m * x * x).sum()
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, LabError> {
        Self::build_at(cfg, cfg.mesh.cells, cfg.mesh.pad)
    }

    /// Same experiment on a mesh with `cells` per side and `pad` extra cells.
    pub fn build_at(cfg: &ExperimentConfig, cells: usize, pad: usize) -> Result<Self, LabError> {
        cfg.validate()?;
        let emb = cfg.embedding_with(cells, pad)?;
        let grid = cfg.grid()?;
        let incl = cfg.inclusion()?;
        let search = cfg.search_region()?;
        let times = grid_times(&grid);
        let pair = build_conductivity(&cfg.background(), &incl, Fill::Scaled(cfg.fill.scale), &times, &emb.inner, &ConductivityOptions::default())?;
        let b_outer = pair.background_on(&emb);
        let v0 = ExperimentConfig::initial_on(&cfg.initial, &emb.inner);
        let geometry = validate_inclusion(&incl, &cfg.domain()?, &GeometryGrid { n_time: 32, n_space: 41, ..GeometryGrid::default() })?;
        let mut curves = Vec::new();
        for c in &cfg.curve {
            let curve = cfg.build_curve(c, &incl, geometry.k_d)?;
            curves.push((c.clone(), curve));
        }
        Ok(Setup { cfg: cfg.clone(), emb, grid, incl, search, pair, b_outer, v0, geometry, curves })
    }

    pub fn d_omega(&self) -> f64 {
        self.cfg.mesh.size * (self.cfg.dim as f64).sqrt()
    }

    pub fn special_options(&self, kappa: Option<f64>) -> SpecialOptions {
        SpecialOptions { kappa_hat: if self.cfg.probe.enforce_mu_floor { kappa } else { None }, d_omega: self.d_omega() }
    }

    pub fn special(&self, curve: &ProbeCurve, tau: f64, kappa: Option<f64>) -> Result<SpecialSolutionSet, LabError> {
        let p = &self.cfg.probe;
        Ok(compute_special_set(&self.b_outer, &self.emb.outer, &self.grid, curve, tau, p.mu, p.theta, &self.special_options(kappa))?)
    }

    pub fn residual_bound(&self, tau: f64) -> f64 {
        let p = &self.cfg.probe;
        residual_bound(mass_norm2(&self.emb, &self.v0), self.d_omega(), tau, p.mu, p.theta, self.grid.t_final)
    }

    pub fn probe<'a>(&'a self, curve: &'a ProbeCurve, id: &str, kappa: Option<f64>) -> BoundaryProbe<'a> {
        let r = &self.cfg.runge;
        BoundaryProbe {
            id: id.to_string(),
            emb: &self.emb,
            grid: &self.grid,
            b_outer: &self.b_outer,
            b_inner: &self.pair.b,
            search: &self.search,
            margin: r.margin_cells.map(|m| m * self.emb.inner.h),
            curve,
            mu: self.cfg.probe.mu,
            theta: self.cfg.probe.theta,
            n_space: r.n_space,
            n_time: r.n_time,
            runge: RungeOptions { lambda_reg: r.lambda, ..RungeOptions::default() },
            special: self.special_options(kappa),
        }
    }

    pub fn mode(&self) -> IndicatorMode {
        if self.cfg.probe.mode == "boundary" {
            IndicatorMode::Boundary
        } else {
            IndicatorMode::Volume
        }
    }
}

/// Runs `f` on `jobs` worker threads; `0` keeps the global pool.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Aronson and parabolic Harnack constants of the background, or the
/// configured `kappa_hat`.
pub fn kernel_constants(setup: &Setup) -> Result<KernelConstants, LabError> {
    if let Some(k) = setup.cfg.kernel.kappa_hat {
        return Ok(KernelConstants { kappa_hat: k, harnack_c: f64::NAN, samples: 0, excluded_cylinders: 0, provenance: "configured".into() });
    }
    let spec = kernel_samples(setup);
    Ok(estimate_kappa(&setup.b_outer, &setup.emb.outer, &spec)?)
}

pub fn kernel_samples(setup: &Setup) -> KernelSamples {
    let (lo, s) = (setup.cfg.lo(), setup.cfg.mesh.size);
    let at = |a: f64, b: f64| -> Point { [lo[0] + a * s, lo[1] + b * s, if setup.cfg.dim == 3 { lo[2] + 0.5 * s } else { 0.0 }] };
    KernelSamples {
        sources: vec![at(0.5, 0.5), at(0.3, 0.6)],
        targets: vec![at(0.5, 0.5), at(0.6, 0.5), at(0.5, 0.75), at(0.3, 0.3), at(0.7, 0.65)],
        times: setup.cfg.kernel.times.clone(),
        cylinders: (0..12)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 6.0;
                (at(0.5 + 0.25 * a.cos(), 0.5 + 0.25 * a.sin()), 0.03, 0.08)
            })
            .collect(),
        steps_per_unit: setup.cfg.kernel.steps_per_unit,
        bump_radius: 0.0,
    }
}

/// One `(curve, tau)` evaluation.
#[derive(Debug, Clone)]
pub struct TauResult {
    pub tau: f64,
    pub volume: Result<IndicatorValue, String>,
    /// Boundary-mode value, with the Runge residuals of the two fits.
    pub boundary: Option<Result<IndicatorValue, String>>,
    pub runge: Option<RungeSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungeSummary {
    pub residual_u: f64,
    pub residual_ustar: f64,
    pub flagged: bool,
    pub separated: bool,
    pub coefficients_u: Vec<f64>,
    pub coefficients_ustar: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CurveSweep {
    pub id: String,
    pub samples: IndicatorSamples,
    /// Volume-indicator sweep (same as `samples` in volume mode).
    pub volume: IndicatorSamples,
    pub results: Vec<TauResult>,
    pub residual_bounds: Vec<f64>,
    pub profile: DistanceProfile,
    pub slopes: SlopeEstimate,
    pub class: Classification,
}

fn eval_tau(setup: &Setup, curve: &ProbeCurve, id: &str, tau: f64, kappa: Option<f64>, boundary: bool) -> TauResult {
    if !boundary {
        let volume = setup
            .special(curve, tau, kappa)
            .and_then(|sp| Ok(volume_indicator(&setup.pair, &sp, &setup.emb, &setup.grid, &setup.v0)?))
            .map_err(|e| e.to_string());
        return TauResult { tau, volume, boundary: None, runge: None };
    }
    let probe = setup.probe(curve, id, kappa);
    let prepared = match probe.prepare(tau) {
        Ok(p) => p,
        Err(e) => return TauResult { tau, volume: Err(e.to_string()), boundary: Some(Err(e.to_string())), runge: None },
    };
    let volume = volume_indicator(&setup.pair, &prepared.special, &setup.emb, &setup.grid, &setup.v0).map_err(|e| e.to_string());
    let runge = RungeSummary {
        residual_u: prepared.u.residual,
        residual_ustar: prepared.u_star.residual,
        flagged: prepared.u.flagged || prepared.u_star.flagged,
        separated: prepared.separated,
        coefficients_u: prepared.u.coefficients.clone(),
        coefficients_ustar: prepared.u_star.coefficients.clone(),
    };
    let fam = PairDn { pair: &setup.pair, v0: setup.v0.clone() };
    let b = if prepared.separated {
        probe.indicator(&prepared, &fam).map_err(|e| e.to_string())
    } else {
        Err("probe tube meets the Runge region".into())
    };
    TauResult { tau, volume, boundary: Some(b), runge: Some(runge) }
}

/// Indicator sweeps of every configured curve. Jobs run in parallel over
/// `(curve, tau)`; results keep the configuration order.
pub fn run_indicators(setup: &Setup, kc: &KernelConstants) -> Result<Vec<CurveSweep>, LabError> {
    let taus = setup.cfg.probe.tau_grid();
    let boundary = setup.mode() == IndicatorMode::Boundary;
    let kappa = Some(kc.kappa_hat);
    let jobs: Vec<(usize, f64)> = (0..setup.curves.len()).flat_map(|c| taus.iter().map(move |t| (c, *t))).collect();
    let results: Vec<TauResult> = jobs
        .par_iter()
        .map(|&(c, tau)| {
            let (cc, curve) = &setup.curves[c];
            eval_tau(setup, curve, &cc.id, tau, kappa, boundary)
        })
        .collect();
    let p = &setup.cfg.probe;
    let mut out = Vec::new();
    for (c, (cc, curve)) in setup.curves.iter().enumerate() {
        let rs: Vec<TauResult> = results[c * taus.len()..(c + 1) * taus.len()].to_vec();
        let mut volume = IndicatorSamples::new(IndicatorMode::Volume, &cc.id, &setup.cfg.name);
        let mut samples = IndicatorSamples::new(setup.mode(), &cc.id, &setup.cfg.name);
        for r in &rs {
            match &r.volume {
                Ok(v) => volume.push(v.clone()),
                Err(e) => volume.failures.push((r.tau, e.clone())),
            }
            if let Some(b) = &r.boundary {
                match b {
                    Ok(v) => samples.push(v.clone()),
                    Err(e) => samples.failures.push((r.tau, e.clone())),
                }
            }
        }
        if !boundary {
            samples = volume.clone();
        }
        let profile = curve_profile(curve, &setup.incl);
        let slopes = log_slope(&samples, p.slope_fraction, p.slope_min_points);
        let class = classify_curve(&slopes, kc, &profile, cc.alpha, cc.epsilon, p.mu, p.classify_tol);
        let residual_bounds = samples.taus.iter().map(|t| setup.residual_bound(*t)).collect();
        out.push(CurveSweep { id: cc.id.clone(), samples, volume, results: rs, residual_bounds, profile, slopes, class });
    }
    Ok(out)
}

/// Forward synthesis: the heat equation in the perturbed medium with
/// Dirichlet data `amplitude * sin(pi t / T) * (1 + x_0)`.
pub struct ForwardResult {
    pub field: SpaceTimeField,
    pub flux: BoundaryField,
}

pub fn run_forward(setup: &Setup) -> Result<ForwardResult, LabError> {
    let mesh = &setup.emb.inner;
    let grid = &setup.grid;
    let (n0, nt) = (grid.n0(), grid.n_t());
    let mut f = BoundaryField::zeros(mesh, n0, nt - n0 + 1);
    let amp = setup.cfg.forward.amplitude;
    let lo = setup.cfg.lo();
    for n in n0..=nt {
        let s = (std::f64::consts::PI * grid.t(n) / grid.t_final).sin();
        let nodes = f.nodes.clone();
        for (j, p) in nodes.iter().enumerate() {
            f.at_time_mut(n)[j] = amp * s * (1.0 + mesh.node(*p as usize)[0] - lo[0]);
        }
    }
    let field = solve_heat(Medium::Moving(&setup.pair), &f, &setup.v0, mesh, grid)?;
    let solver = DampedSolver::new(mesh, grid, 0.0, Medium::Moving(&setup.pair))?;
    let flux = solver.flux(&field, Direction::Forward, (n0, nt), None)?;
    Ok(ForwardResult { field, flux })
}

/// Norms of the damped D-N data of one curve: per time step, the
/// boundary `L2` norms of the special solution trace and of its flux.
#[derive(Debug, Clone)]
pub struct DnRecord {
    pub curve_id: String,
    pub tau: f64,
    pub rows: Vec<(usize, f64, f64, f64)>,
}

pub fn run_dnmap(setup: &Setup, kc: &KernelConstants) -> Result<Vec<DnRecord>, LabError> {
    let taus = setup.cfg.probe.tau_grid();
    let jobs: Vec<(usize, f64)> = (0..setup.curves.len()).flat_map(|c| taus.iter().map(move |t| (c, *t))).collect();
    jobs.par_iter()
        .map(|&(c, tau)| {
            let (cc, curve) = &setup.curves[c];
            let sp = setup.special(curve, tau, Some(kc.kappa_hat))?;
            let mesh = &setup.emb.inner;
            let grid = &setup.grid;
            let u = sp.u.restrict(&setup.emb.node_map);
            let (n0, nt) = (grid.n0(), grid.n_t());
            let trace = BoundaryField::trace(mesh, &u, n0, nt - n0 + 1);
            let dn = assemble_damped_dn(Medium::Moving(&setup.pair), &setup.v0, tau, mesh, grid)?;
            let flux = dn.apply(&trace)?;
            let l2 = |v: &[f64], m: &[f64]| v.iter().zip(m).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
            let rows = (flux.start..flux.end())
                .map(|n| (n, grid.t(n), l2(trace.at_time(n).unwrap(), &trace.mass), l2(flux.at_time(n).unwrap(), &flux.mass)))
                .collect();
            Ok(DnRecord { curve_id: cc.id.clone(), tau, rows })
        })
        .collect()
}

/// Result of the blind comparison of two bodies.
pub struct DetectResult {
    pub verdict: MismatchVerdict,
    pub sweeps_a: Vec<IndicatorSamples>,
    pub sweeps_b: Vec<IndicatorSamples>,
}

/// Second body of the detect stage.
pub struct World {
    pub pair: ConductivityPair,
    pub v0: Vec<f64>,
}

pub fn second_world(setup: &Setup) -> Result<World, LabError> {
    let dc = setup.cfg.detect.clone().ok_or_else(|| LabError::Missing("[detect] section".into()))?;
    let incl = if dc.inclusion.is_empty() { setup.incl.clone() } else { build_inclusion(&dc.inclusion, setup.cfg.dim, setup.grid.t_final)? };
    let scale = dc.fill_scale.unwrap_or(setup.cfg.fill.scale);
    let pair = build_conductivity(&setup.cfg.background(), &incl, Fill::Scaled(scale), &grid_times(&setup.grid), &setup.emb.inner, &ConductivityOptions::default())?;
    let v0 = match &dc.initial {
        Some(i) => ExperimentConfig::initial_on(i, &setup.emb.inner),
        None => setup.v0.clone(),
    };
    Ok(World { pair, v0 })
}

/// Blind mode: every configured curve probes the search region under the
/// maps of both bodies; only D-N data enter the comparison.
pub fn run_detect(setup: &Setup, world_b: &World, kc: &KernelConstants) -> Result<DetectResult, LabError> {
    let dc = setup.cfg.detect.clone().ok_or_else(|| LabError::Missing("[detect] section".into()))?;
    let taus = setup.cfg.probe.tau_grid();
    let kappa = Some(kc.kappa_hat);
    let jobs: Vec<(usize, f64)> = (0..setup.curves.len()).flat_map(|c| taus.iter().map(move |t| (c, *t))).collect();
    type Pair = (Result<IndicatorValue, String>, Result<IndicatorValue, String>);
    let vals: Vec<Pair> = jobs
        .par_iter()
        .map(|&(c, tau)| {
            let (cc, curve) = &setup.curves[c];
            let probe = setup.probe(curve, &cc.id, kappa);
            match probe.prepare(tau) {
                Ok(prep) if prep.separated => {
                    let fa = PairDn { pair: &setup.pair, v0: setup.v0.clone() };
                    let fb = PairDn { pair: &world_b.pair, v0: world_b.v0.clone() };
                    (probe.indicator(&prep, &fa).map_err(|e| e.to_string()), probe.indicator(&prep, &fb).map_err(|e| e.to_string()))
                }
                Ok(_) => {
                    let e = String::from("probe tube meets the Runge region");
                    (Err(e.clone()), Err(e))
                }
                Err(e) => (Err(e.to_string()), Err(e.to_string())),
            }
        })
        .collect();
    let p = &setup.cfg.probe;
    let (mut sweeps_a, mut sweeps_b, mut evidence) = (Vec::new(), Vec::new(), Vec::new());
    for (c, (cc, _)) in setup.curves.iter().enumerate() {
        let mut sa = IndicatorSamples::new(IndicatorMode::Boundary, &cc.id, "a");
        let mut sb = IndicatorSamples::new(IndicatorMode::Boundary, &cc.id, "b");
        for (k, &tau) in taus.iter().enumerate() {
            let (a, b) = &vals[c * taus.len() + k];
            for (r, s) in [(a, &mut sa), (b, &mut sb)] {
                match r {
                    Ok(v) => s.push(v.clone()),
                    Err(e) => s.failures.push((tau, e.clone())),
                }
            }
        }
        evidence.push(compare_slopes(&cc.id, &sa, &sb, p.slope_fraction, p.slope_min_points, dc.tol, setup.cfg.runge.residual_limit));
        sweeps_a.push(sa);
        sweeps_b.push(sb);
    }
    let verdict = judge_mismatch(evidence, dc.tol, setup.cfg.runge.residual_limit);
    Ok(DetectResult { verdict, sweeps_a, sweeps_b })
}

/// Distance from `y` to the nearest point of `incl` at `t`, for reports.
pub fn curve_distance(incl: &MovingInclusion, curve: &ProbeCurve, t: f64) -> f64 {
    let y = curve.position(t);
    incl.distances(&y, t).0
}

/// Euclidean distance helper re-exported for the acceptance tests.
pub fn point_distance(a: &Point, b: &Point) -> f64 {
    dist(a, b)
}

/// Reports of one refinement level.
#[derive(Debug, Clone)]
pub struct VerifyLevel {
    pub level: usize,
    pub cells: usize,
    pub reports: Vec<ConstantReport>,
    /// `(tau, C_M)` per verification `tau`.
    pub c_m: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct VerifyResult {
    pub levels: Vec<VerifyLevel>,
    /// Refinement-merged reports (one per lemma); empty without refinement.
    pub refined: Vec<ConstantReport>,
    pub tau0: Option<f64>,
}

/// Physical sample lattice: every `stride`-th line of the coarse mesh,
/// so that all refinement levels share the same points.
fn lattice(cfg: &ExperimentConfig, stride: usize) -> Vec<Point> {
    let lo = cfg.lo();
    let k = (cfg.mesh.cells / stride.max(1)).max(1);
    let step = cfg.mesh.size / k as f64;
    let mut out = Vec::new();
    let kz = if cfg.dim == 3 { k } else { 0 };
    for i in 0..=k {
        for j in 0..=k {
            for l in 0..=kz {
                out.push([lo[0] + i as f64 * step, lo[1] + j as f64 * step, if cfg.dim == 3 { lo[2] + l as f64 * step } else { 0.0 }]);
            }
        }
    }
    out
}

/// Merges the per-`tau` reports of one lemma: the largest constant, with
/// samples and exclusions summed.
fn merge(reports: &[ConstantReport]) -> Vec<ConstantReport> {
    let mut ids: Vec<&str> = Vec::new();
    for r in reports {
        if !ids.contains(&r.lemma_id.as_str()) {
            ids.push(&r.lemma_id);
        }
    }
    ids.iter()
        .map(|id| {
            let rs: Vec<&ConstantReport> = reports.iter().filter(|r| r.lemma_id == *id).collect();
            let c = rs.iter().map(|r| r.fitted_constant).fold(f64::NEG_INFINITY, f64::max);
            let samples = rs.iter().map(|r| r.samples).sum();
            let excluded = rs.iter().map(|r| r.excluded).sum();
            let desc = rs.iter().map(|r| r.description.as_str()).collect::<Vec<_>>().join("; ");
            let mut m = ConstantReport::new(id, c, samples, excluded, desc);
            m.pass = m.pass && rs.iter().all(|r| r.pass);
            m
        })
        .collect()
}

fn verify_level(cfg: &ExperimentConfig, level: usize, jobs_kc: Option<f64>) -> Result<VerifyLevel, LabError> {
    let vc = cfg.verify.clone().ok_or_else(|| LabError::Missing("[verify] section".into()))?;
    let f = 1usize << level;
    let setup = Setup::build_at(cfg, cfg.mesh.cells * f, cfg.mesh.pad * f)?;
    let (_, curve) = setup
        .curves
        .iter()
        .find(|(c, _)| c.id == vc.curve)
        .ok_or_else(|| LabError::Config(vec![format!("verify.curve `{}` is not a configured curve", vc.curve)]))?;
    let outer = &setup.emb.outer;
    let points = lattice(cfg, vc.node_stride);
    let (a, b) = (setup.grid.n0(), setup.grid.n_t());
    let n_times = vc.sample_times.max(2);
    let plan = SamplePlan { steps: (0..n_times).map(|k| a + (b - a) * k / (n_times - 1)).collect(), points: points.clone(), cutoff: vc.cutoff };

    let mut reports = Vec::new();
    // Kernel constants and the parabolic Harnack check share the simulations.
    let ks = kernel_samples(&setup);
    let kc = estimate_kappa(&setup.b_outer, outer, &ks)?;
    reports.push(ConstantReport::new("kappa-hat", kc.kappa_hat, kc.samples, kc.excluded_cylinders, kc.provenance.clone()));
    let t_max = ks.cylinders.iter().map(|(_, t, r)| t + r * r).fold(0.0, f64::max);
    let sims: Vec<KernelSimulation> =
        ks.sources.iter().map(|y| KernelSimulation::run(outer, &setup.b_outer, y, t_max, ks.steps_per_unit, 2.0 * outer.h)).collect::<Result<_, _>>()?;
    reports.push(check_harnack_parabolic(&sims, &ks.cylinders));
    let kappa = jobs_kc.or(Some(kc.kappa_hat));

    let y = curve.position(cfg.probe.theta);
    let per_tau: Vec<Result<(Vec<ConstantReport>, f64), LabError>> = vc
        .taus
        .par_iter()
        .map(|&tau| {
            let pk = PKernel::new(outer, &setup.b_outer, tau)?;
            let mut reps = Vec::new();
            let kernels = vec![(y, pk.at(&y)?)];
            reps.push(check_harnack_elliptic(outer, &kernels, &points, vc.beta, tau));
            reps.push(check_caccioppoli(outer, &pk.mollified(&y)?, &y, &points, vc.beta, tau));
            let sp = setup.special(curve, tau, kappa)?;
            let mut cache = KernelCache::new(&pk);
            reps.extend(check_comparisons(&sp, outer, &setup.grid, &mut cache, &plan)?);
            let incl = check_inclusion_estimates(&sp, outer, &setup.grid, &setup.incl, &mut cache, &plan, vc.guard)?;
            let c_m = incl.iter().find(|r| r.lemma_id == "incl-grad-q").map(|r| r.fitted_constant).unwrap_or(0.0);
            reps.extend(incl);
            Ok((reps, c_m))
        })
        .collect();
    let mut all = Vec::new();
    let mut c_m = Vec::new();
    for (tau, r) in vc.taus.iter().zip(per_tau) {
        let (reps, cm) = r?;
        all.extend(reps);
        c_m.push((*tau, cm));
    }
    reports.extend(merge(&all));

    // One C_M for the whole indicator sweep.
    let c_m_max = c_m.iter().map(|p| p.1).fold(0.0, f64::max);
    let bound_taus = if vc.bound_taus.is_empty() { &vc.taus } else { &vc.bound_taus };
    let bounds: Vec<Result<(IndicatorValue, (f64, f64), f64), LabError>> = bound_taus
        .par_iter()
        .map(|&tau| {
            let pk = PKernel::new(outer, &setup.b_outer, tau)?;
            let mut cache = KernelCache::new(&pk);
            let sp = setup.special(curve, tau, kappa)?;
            let value = volume_indicator(&setup.pair, &sp, &setup.emb, &setup.grid, &setup.v0)?;
            let s = p_integrals(&mut cache, outer, &setup.grid, &setup.incl, curve, cfg.probe.mu, cfg.probe.theta, c_m_max)?;
            Ok((value, s, setup.residual_bound(tau)))
        })
        .collect();
    let mut samples = IndicatorSamples::new(IndicatorMode::Volume, &vc.curve, &cfg.name);
    let (mut s_minus, mut s_plus, mut resid) = (Vec::new(), Vec::new(), Vec::new());
    for r in bounds {
        let (v, (sm, sp), rb) = r?;
        let (i, before) = (samples.taus.partition_point(|t| *t < v.tau), samples.len());
        samples.push(v);
        if samples.len() > before {
            s_minus.insert(i, sm);
            s_plus.insert(i, sp);
            resid.insert(i, rb);
        }
    }
    reports.push(check_indicator_bounds(&samples, &s_minus, &s_plus, &resid, cfg.dim));
    Ok(VerifyLevel { level, cells: cfg.mesh.cells * f, reports, c_m })
}

/// The lemma checks on the configured mesh and, when `refine` is set, on
/// the mesh with half the cell width (same time step).
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyResult, LabError> {
    let vc = cfg.verify.clone().ok_or_else(|| LabError::Missing("[verify] section".into()))?;
    let kappa = cfg.kernel.kappa_hat;
    let mut levels = vec![verify_level(cfg, 0, kappa)?];
    let mut refined = Vec::new();
    if vc.refine {
        levels.push(verify_level(cfg, 1, kappa)?);
        for c in &levels[0].reports {
            if let Some(fine) = levels[1].reports.iter().find(|r| r.lemma_id == c.lemma_id) {
                refined.push(ConstantReport::refined(c, fine, STABILITY_LIMIT));
            }
        }
    }
    let last = levels.last().map(|l| l.c_m.clone()).unwrap_or_default();
    let tau0 = empirical_tau0(&last, STABILITY_LIMIT);
    Ok(VerifyResult { levels, refined, tau0 })
}
