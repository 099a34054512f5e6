//! Indicator functionals, their large-`tau` slopes, the far/touching
//! dichotomy and the mismatch detector built on it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::{ConductivityPair, Tensor};
use crate::geometry::{DistanceProfile, MovingInclusion, ProbeCurve};
use crate::linalg::Csr;
use crate::math::line_fit;
use crate::mesh::{BoxMesh, Embedding, SpaceTimeField, TimeGrid};
use crate::pde::{assemble_damped_dn, stiffness_jump, BoundaryField, DampedDNMap, DampedSolver, Direction, Medium};
use crate::runge::{boundary_basis, runge_fit, RungeApproximant, RungeOptions, RungeRegion};
use crate::special::{compute_special_set, KernelConstants, SpecialOptions, SpecialSolutionSet};
use crate::{Error, Result};

/// Values within this fraction of the magnitude of their summands are
/// treated as nonpositive (ten times the solver tolerance).
pub const FLOOR_FRACTION: f64 = 1e-9;

/// Floor fraction of the pre-indicator when every solve is a Cholesky
/// factorization (a few thousand rounding units).
pub const DIRECT_FLOOR_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorMode {
    Boundary,
    Volume,
}

impl IndicatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IndicatorMode::Boundary => "boundary",
            IndicatorMode::Volume => "volume",
        }
    }
}

/// One indicator evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorValue {
    pub tau: f64,
    pub value: f64,
    /// Positivity floor for `ln`.
    pub floor: f64,
    /// Largest relative Runge residual of the two approximants.
    pub runge_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSamples {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub floors: Vec<f64>,
    pub runge_residuals: Vec<Option<f64>>,
    pub mode: IndicatorMode,
    pub curve_id: String,
    pub conductivity_id: String,
    pub failures: Vec<(f64, String)>,
}

impl IndicatorSamples {
    pub fn new(mode: IndicatorMode, curve_id: &str, conductivity_id: &str) -> Self {
        IndicatorSamples {
            taus: Vec::new(),
            values: Vec::new(),
            floors: Vec::new(),
            runge_residuals: Vec::new(),
            mode,
            curve_id: curve_id.to_string(),
            conductivity_id: conductivity_id.to_string(),
            failures: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Inserts keeping `tau` sorted; a repeated `tau` or a non-finite
    /// value is recorded as a failure instead.
    pub fn push(&mut self, v: IndicatorValue) {
        if !v.value.is_finite() {
            self.failures.push((v.tau, "non-finite indicator".into()));
            return;
        }
        let i = self.taus.partition_point(|t| *t < v.tau);
        if self.taus.get(i) == Some(&v.tau) {
            self.failures.push((v.tau, "duplicate tau".into()));
            return;
        }
        self.taus.insert(i, v.tau);
        self.values.insert(i, v.value);
        self.floors.insert(i, v.floor);
        self.runge_residuals.insert(i, v.runge_residual);
    }
}

/// `10 (|v0|^2 + d_Omega) exp(-tau mu min(T - theta, theta))`.
pub fn residual_bound(v0_norm2: f64, d_omega: f64, tau: f64, mu: f64, theta: f64, t_final: f64) -> f64 {
    10.0 * (v0_norm2 + d_omega) * (-tau * mu * (t_final - theta).min(theta)).exp()
}

/// Discrete volume form on the window `[lo, hi]`:
/// `dt sum z_n (K_a - K_b)_n v_n + w_hi M z_{hi+1} - w_lo M z_{lo+1}`
/// with `w = v - u`. Returns the value and the sum of absolute summands.
pub fn green_volume(
    pair: &ConductivityPair,
    mesh: &BoxMesh,
    grid: &TimeGrid,
    v: &SpaceTimeField,
    u: &SpaceTimeField,
    z: &SpaceTimeField,
    window: (usize, usize),
) -> Result<(f64, f64)> {
    let (lo, hi) = window;
    if hi + 1 >= grid.num_times() {
        return Err(Error::Invalid("the volume form needs z one step beyond the window".into()));
    }
    let mass = mesh.lumped_mass();
    let dt = grid.dt;
    let mut last: Option<(Vec<bool>, Csr)> = None;
    let mut kv = vec![0.0; mesh.num_nodes()];
    let (mut acc, mut scale) = (0.0, 0.0);
    for n in lo + 1..=hi {
        let mask = pair.mask(grid.t(n));
        if !mask.iter().any(|&b| b) {
            continue;
        }
        if last.as_ref().map(|l| l.0 != mask).unwrap_or(true) {
            let k = stiffness_jump(mesh, pair, &mask);
            last = Some((mask, k));
        }
        let k = &last.as_ref().unwrap().1;
        k.matvec(v.at(n), &mut kv);
        for (zi, ki) in z.at(n).iter().zip(&kv) {
            acc += dt * zi * ki;
            scale += dt * (zi * ki).abs();
        }
    }
    let mut ends = |n: usize, zn: usize, sign: f64| {
        for p in 0..mass.len() {
            let e = (v.at(n)[p] - u.at(n)[p]) * mass[p] * z.at(zn)[p];
            acc += sign * e;
            scale += e.abs();
        }
    };
    ends(hi, hi + 1, 1.0);
    ends(lo, lo + 1, -1.0);
    Ok((acc, scale))
}

/// Volume indicator in damped coordinates. `pair` lives on the inner mesh
/// of `emb`, `special` on its outer mesh, `v0` on the inner mesh.
pub fn volume_indicator(
    pair: &ConductivityPair,
    special: &SpecialSolutionSet,
    emb: &Embedding,
    grid: &TimeGrid,
    v0: &[f64],
) -> Result<IndicatorValue> {
    let mesh = &emb.inner;
    let tau = special.tau;
    let u = special.u.restrict(&emb.node_map);
    let z = special.u_star.restrict(&emb.node_map);
    let window = (grid.n0(), grid.n_t());
    let mut src = SpaceTimeField::zeros(mesh.num_nodes(), grid.num_times());
    for n in window.0..=window.1 {
        let s = special.source_on(mesh, grid, n);
        src.at_mut(n).copy_from_slice(&s);
    }
    let trace = BoundaryField::trace(mesh, &u, window.0, window.1 - window.0 + 1);
    let solver = DampedSolver::new(mesh, grid, tau, Medium::Moving(pair))?;
    let f = (-tau * tau * grid.t_final).exp();
    let start: Vec<f64> = v0.iter().map(|x| x * f).collect();
    let v = solver.solve(Direction::Forward, window, Some(&start), Some(&src), Some(&trace))?;
    let (value, scale) = green_volume(pair, mesh, grid, &v, &u, &z, window)?;
    Ok(IndicatorValue { tau, value, floor: FLOOR_FRACTION * scale, runge_residual: None })
}

/// Pre-indicator from boundary data: the D-N map applied to the trace of
/// `u_j`, minus the `b`-flux of `u_j`, paired with `u*_j` on the boundary.
pub fn pre_indicator(
    dn: &DampedDNMap<'_>,
    approx_u: &RungeApproximant,
    approx_ustar: &RungeApproximant,
    b_solver: &DampedSolver<'_>,
) -> Result<IndicatorValue> {
    let tau = dn.tau();
    if approx_u.tau != tau || approx_ustar.tau != tau || b_solver.tau != tau {
        return Err(Error::Contract("pre-indicator inputs were built for different tau".into()));
    }
    let window = dn.window();
    if approx_u.window != window || approx_u.direction != Direction::Forward {
        return Err(Error::Contract("u_j must be a forward fit on [0, T]".into()));
    }
    if approx_ustar.direction != Direction::Backward || approx_ustar.window.0 > window.0 || approx_ustar.window.1 < window.1 + 1 {
        return Err(Error::Contract("u*_j must be a backward fit reaching one step past T".into()));
    }
    let fa = dn.apply(&approx_u.trace)?;
    let fb = b_solver.flux(&approx_u.field, Direction::Forward, window, None)?;
    let dt = b_solver.dt();
    let z = &approx_ustar.field;
    let (mut value, mut scale) = (0.0, 0.0);
    for n in fa.start..fa.end() {
        let (a, b) = (fa.at_time(n).unwrap(), fb.at_time(n).unwrap());
        let zn = z.at(n);
        for (j, &p) in fa.nodes.iter().enumerate() {
            let zp = zn[p as usize] * fa.mass[j] * dt;
            value += (a[j] - b[j]) * zp;
            scale += (a[j].abs() + b[j].abs()) * zp.abs();
        }
    }
    Ok(IndicatorValue {
        tau,
        value,
        floor: if dn.solver.is_direct()? && b_solver.is_direct()? { DIRECT_FLOOR_FRACTION } else { FLOOR_FRACTION } * scale,
        runge_residual: Some(approx_u.residual.max(approx_ustar.residual)),
    })
}

/// Evaluates `eval` at every `tau`; failures are recorded and skipped.
pub fn indicator_sweep<F>(taus: &[f64], mode: IndicatorMode, curve_id: &str, conductivity_id: &str, mut eval: F) -> IndicatorSamples
where
    F: FnMut(f64) -> Result<IndicatorValue>,
{
    let mut s = IndicatorSamples::new(mode, curve_id, conductivity_id);
    for &tau in taus {
        match eval(tau) {
            Ok(v) => s.push(v),
            Err(e) => s.failures.push((tau, e.to_string())),
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimate {
    pub slope_lo: f64,
    pub slope_hi: f64,
    /// Least-squares slope of `ln I` against `tau` over the window.
    pub fit: f64,
    /// The `tau` values of the window.
    pub window: Vec<f64>,
}

impl SlopeEstimate {
    pub fn minus_infinity(window: Vec<f64>) -> Self {
        SlopeEstimate { slope_lo: f64::NEG_INFINITY, slope_hi: f64::NEG_INFINITY, fit: f64::NEG_INFINITY, window }
    }

    pub fn is_finite(&self) -> bool {
        self.slope_lo.is_finite() && self.slope_hi.is_finite()
    }
}

/// Slope of `ln I` over the top `frac` of the samples (at least `k_min`).
/// Any value at or below its floor in the window gives `-inf`.
pub fn log_slope(samples: &IndicatorSamples, frac: f64, k_min: usize) -> SlopeEstimate {
    let n = samples.len();
    let k = ((frac * n as f64).ceil() as usize).max(k_min).min(n);
    let start = n - k;
    let window: Vec<f64> = samples.taus[start..].to_vec();
    if k < 3 {
        return SlopeEstimate::minus_infinity(window);
    }
    let vals = &samples.values[start..];
    let floors = &samples.floors[start..];
    if vals.iter().zip(floors).any(|(v, f)| *v <= 0.0 || *v <= *f) {
        return SlopeEstimate::minus_infinity(window);
    }
    let ln: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    let (fit, _) = line_fit(&window, &ln);
    let mut lo = fit;
    let mut hi = fit;
    for i in 1..k {
        let s = (ln[i] - ln[i - 1]) / (window[i] - window[i - 1]);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    SlopeEstimate { slope_lo: lo, slope_hi: hi, fit, window }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveClass {
    Far,
    Touching,
    Inconclusive,
}

impl CurveClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveClass::Far => "far",
            CurveClass::Touching => "touching",
            CurveClass::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: CurveClass,
    /// `-2 kappa eps_Sigma (1 - tol)`.
    pub far_threshold: f64,
    /// `-(8 / (kappa alpha^3) + 4 mu) eps (1 + tol)`, for family curves.
    pub touch_threshold: Option<f64>,
    pub tol: f64,
}

/// Far/touching decision. A family curve (`alpha` and `epsilon` given) is
/// tested against the touching bound first, any other curve against the
/// far bound only. Fewer than three samples are inconclusive.
pub fn classify_curve(
    slopes: &SlopeEstimate,
    kc: &KernelConstants,
    profile: &DistanceProfile,
    alpha: Option<f64>,
    epsilon: Option<f64>,
    mu: f64,
    tol: f64,
) -> Classification {
    let k = kc.kappa_hat;
    let far_threshold = if profile.eps_sigma.is_finite() { -2.0 * k * profile.eps_sigma * (1.0 - tol) } else { f64::NEG_INFINITY };
    let touch_threshold = match (alpha, epsilon) {
        (Some(a), Some(e)) => Some(-(8.0 / (k * a * a * a) + 4.0 * mu) * e * (1.0 + tol)),
        _ => None,
    };
    let is_far = slopes.slope_hi <= far_threshold || slopes.slope_hi == f64::NEG_INFINITY;
    let class = match touch_threshold {
        _ if slopes.window.len() < 3 => CurveClass::Inconclusive,
        Some(th) if slopes.slope_lo.is_finite() && slopes.slope_lo >= th => CurveClass::Touching,
        _ if is_far => CurveClass::Far,
        _ => CurveClass::Inconclusive,
    };
    Classification { class, far_threshold, touch_threshold, tol }
}

/// A damped D-N map family indexed by `tau`, e.g. one body with one
/// initial state.
pub trait DnFamily {
    fn map_at<'m>(&'m self, mesh: &'m BoxMesh, grid: &TimeGrid, tau: f64) -> Result<DampedDNMap<'m>>;
}

/// The D-N maps of a conductivity pair with initial value `v0`.
pub struct PairDn<'a> {
    pub pair: &'a ConductivityPair,
    pub v0: Vec<f64>,
}

impl DnFamily for PairDn<'_> {
    fn map_at<'m>(&'m self, mesh: &'m BoxMesh, grid: &TimeGrid, tau: f64) -> Result<DampedDNMap<'m>> {
        assemble_damped_dn(Medium::Moving(self.pair), &self.v0, tau, mesh, grid)
    }
}

/// Everything a boundary-mode probe needs besides the D-N maps.
pub struct BoundaryProbe<'a> {
    pub id: String,
    pub emb: &'a Embedding,
    pub grid: &'a TimeGrid,
    /// Background on the outer and the inner mesh.
    pub b_outer: &'a [Tensor],
    pub b_inner: &'a [Tensor],
    /// Region `U` where the special solutions are approximated.
    pub search: &'a MovingInclusion,
    /// Inflation of `search`; `None` selects `max(2/tau, 2h)`.
    pub margin: Option<f64>,
    pub curve: &'a ProbeCurve,
    pub mu: f64,
    pub theta: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub runge: RungeOptions,
    pub special: SpecialOptions,
}

/// The map-independent part of a probe at one `tau`.
pub struct PreparedProbe {
    pub special: SpecialSolutionSet,
    pub u: RungeApproximant,
    pub u_star: RungeApproximant,
    pub separated: bool,
}

impl BoundaryProbe<'_> {
    pub fn prepare(&self, tau: f64) -> Result<PreparedProbe> {
        let mesh = &self.emb.inner;
        let grid = self.grid;
        let special = compute_special_set(self.b_outer, &self.emb.outer, grid, self.curve, tau, self.mu, self.theta, &self.special)?;
        let basis = boundary_basis(mesh, self.n_space, self.n_time)?;
        let solver = DampedSolver::new(mesh, grid, tau, Medium::Static(self.b_inner))?;
        let margin = self.margin.unwrap_or((2.0 / tau).max(2.0 * mesh.h));
        let mut opts = self.runge.clone();
        opts.focus = opts.focus.or(Some(self.theta));
        let fw = (grid.n0(), grid.n_t());
        let bw = (grid.n0(), grid.n_t() + 1);
        let rf = RungeRegion::with_margin(mesh, self.search, Some(self.curve), grid, tau, fw, margin)?;
        let rb = RungeRegion::with_margin(mesh, self.search, Some(self.curve), grid, tau, bw, margin)?;
        let separated = rf.separated(mesh.h) && rb.separated(mesh.h) && rf.connected;
        let target = special.u.restrict(&self.emb.node_map);
        let u = runge_fit(&target, &basis, &rf, &solver, Direction::Forward, &opts)?;
        let target = special.u_star.restrict(&self.emb.node_map);
        let u_star = runge_fit(&target, &basis, &rb, &solver, Direction::Backward, &opts)?;
        Ok(PreparedProbe { special, u, u_star, separated })
    }

    pub fn indicator(&self, prepared: &PreparedProbe, family: &dyn DnFamily) -> Result<IndicatorValue> {
        let mesh = &self.emb.inner;
        let tau = prepared.u.tau;
        let dn = family.map_at(mesh, self.grid, tau)?;
        let solver = DampedSolver::new(mesh, self.grid, tau, Medium::Static(self.b_inner))?;
        pre_indicator(&dn, &prepared.u, &prepared.u_star, &solver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Different,
    Indistinguishable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Different => "different",
            Verdict::Indistinguishable => "indistinguishable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEvidence {
    pub probe: String,
    pub slopes_a: SlopeEstimate,
    pub slopes_b: SlopeEstimate,
    /// Separation of the two slope intervals (positive when disjoint).
    pub gap: f64,
    /// Combined tolerance the gap must exceed.
    pub tolerance: f64,
    pub usable: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MismatchVerdict {
    pub verdict: Verdict,
    pub evidence: Vec<ProbeEvidence>,
    pub tol: f64,
    pub runge_limit: f64,
}

/// Compares the slope intervals of one probe under two maps. The combined
/// tolerance is `tol` times the mean magnitude of the two fitted slopes.
pub fn compare_slopes(probe: &str, a: &IndicatorSamples, b: &IndicatorSamples, frac: f64, k_min: usize, tol: f64, runge_limit: f64) -> ProbeEvidence {
    let sa = log_slope(a, frac, k_min);
    let sb = log_slope(b, frac, k_min);
    let worst = a.runge_residuals.iter().chain(&b.runge_residuals).flatten().fold(0.0f64, |m, r| m.max(*r));
    let mut note = String::new();
    let mut usable = true;
    if worst > runge_limit {
        usable = false;
        note = format!("Runge residual {worst:.3} above {runge_limit}");
    } else if !a.failures.is_empty() || !b.failures.is_empty() {
        usable = false;
        note = format!("{} failed tau evaluations", a.failures.len() + b.failures.len());
    }
    let (gap, tolerance) = match (sa.is_finite(), sb.is_finite()) {
        (true, true) => {
            let gap = (sa.slope_lo - sb.slope_hi).max(sb.slope_lo - sa.slope_hi);
            (gap, tol * 0.5 * (sa.fit.abs() + sb.fit.abs()))
        }
        (true, false) | (false, true) => (f64::INFINITY, 0.0),
        (false, false) => (f64::NEG_INFINITY, 0.0),
    };
    ProbeEvidence { probe: probe.to_string(), slopes_a: sa, slopes_b: sb, gap, tolerance, usable, note }
}

/// Different as soon as one usable probe separates the maps; inconclusive
/// when no probe is usable.
pub fn judge_mismatch(evidence: Vec<ProbeEvidence>, tol: f64, runge_limit: f64) -> MismatchVerdict {
    let usable: Vec<&ProbeEvidence> = evidence.iter().filter(|e| e.usable).collect();
    let verdict = if usable.iter().any(|e| e.gap > e.tolerance) {
        Verdict::Different
    } else if usable.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::Indistinguishable
    };
    MismatchVerdict { verdict, evidence, tol, runge_limit }
}

/// Serial detector: boundary-mode sweeps of every probe under both maps.
pub fn detect_mismatch(
    probes: &[BoundaryProbe<'_>],
    map_a: &dyn DnFamily,
    map_b: &dyn DnFamily,
    taus: &[f64],
    tol: f64,
    runge_limit: f64,
) -> MismatchVerdict {
    let mut evidence = Vec::new();
    for p in probes {
        let mut sa = IndicatorSamples::new(IndicatorMode::Boundary, &p.id, "a");
        let mut sb = IndicatorSamples::new(IndicatorMode::Boundary, &p.id, "b");
        for &tau in taus {
            match p.prepare(tau) {
                Ok(prep) => {
                    if !prep.separated {
                        sa.failures.push((tau, "probe tube meets the Runge region".into()));
                        continue;
                    }
                    for (fam, s) in [(map_a, &mut sa), (map_b, &mut sb)] {
                        match p.indicator(&prep, fam) {
                            Ok(v) => s.push(v),
                            Err(e) => s.failures.push((tau, e.to_string())),
                        }
                    }
                }
                Err(e) => sa.failures.push((tau, e.to_string())),
            }
        }
        evidence.push(compare_slopes(&p.id, &sa, &sb, 0.4, 5, tol, runge_limit));
    }
    judge_mismatch(evidence, tol, runge_limit)
}
