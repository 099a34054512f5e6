//! Experiment configuration: a TOML file, validated before any solve.

use std::path::Path;

use dynprobe_core::conductivity::{Background, Tensor};
use dynprobe_core::geometry::{Domain, MotionPath, MovingInclusion, MovingShape, ProbeCurve, Shape};
use dynprobe_core::mesh::{BoxMesh, Embedding, TimeGrid};
use dynprobe_core::Point;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stages run when no `--stage` is given.
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    #[serde(default)]
    pub inclusion: Vec<ShapeConfig>,
    #[serde(default)]
    pub fill: FillConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub probe: ProbeConfig,
    #[serde(default)]
    pub curve: Vec<CurveConfig>,
    #[serde(default)]
    pub runge: RungeConfig,
    #[serde(default)]
    pub search: Vec<ShapeConfig>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    pub verify: Option<VerifyConfig>,
    pub detect: Option<DetectConfig>,
}

fn two() -> usize {
    2
}

fn default_stages() -> Vec<String> {
    vec!["indicator".into(), "report".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Cells per side of the body.
    pub cells: usize,
    /// Extra cells on every side of the enlarged box carrying the special
    /// solutions.
    #[serde(default = "default_pad")]
    pub pad: usize,
    #[serde(default)]
    pub lo: Vec<f64>,
    #[serde(default = "one")]
    pub size: f64,
    pub steps_per_unit: usize,
    pub t_final: f64,
}

fn default_pad() -> usize {
    8
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// `uniform`, `layered` or `checker`.
    pub kind: String,
    pub value: f64,
    #[serde(default = "one")]
    pub other: f64,
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "half")]
    pub at: f64,
    #[serde(default = "four")]
    pub blocks: usize,
}

fn half() -> f64 {
    0.5
}

fn four() -> usize {
    4
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig { kind: "uniform".into(), value: 1.0, other: 1.0, axis: 0, at: 0.5, blocks: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeConfig {
    /// `disc` (or `ball`), `ellipse` or `polygon`.
    pub shape: String,
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub semi: Vec<f64>,
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub vertices: Vec<Vec<f64>>,
    /// Constant velocity over `[0, T]`.
    #[serde(default)]
    pub velocity: Vec<f64>,
    /// Activity window; absent means always present.
    pub active: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillConfig {
    /// `a = scale * b` inside the inclusion.
    pub scale: f64,
}

impl Default for FillConfig {
    fn default() -> Self {
        FillConfig { scale: 2.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Coefficients `[c0, c1, .., cd]` of `v0(x) = c0 + c . x`; empty is zero.
    #[serde(default)]
    pub affine: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// `volume` or `boundary`.
    #[serde(default = "volume")]
    pub mode: String,
    pub theta: f64,
    pub mu: f64,
    #[serde(default)]
    pub taus: Vec<f64>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub tau_count: Option<usize>,
    #[serde(default = "half")]
    pub slope_fraction: f64,
    #[serde(default = "three")]
    pub slope_min_points: usize,
    #[serde(default = "tenth")]
    pub classify_tol: f64,
    /// Enforce the lower bound on `mu`.
    #[serde(default)]
    pub enforce_mu_floor: bool,
}

fn volume() -> String {
    "volume".into()
}

fn three() -> usize {
    3
}

fn tenth() -> f64 {
    0.1
}

impl ProbeConfig {
    pub fn tau_grid(&self) -> Vec<f64> {
        if !self.taus.is_empty() {
            return self.taus.clone();
        }
        match (self.tau_min, self.tau_max, self.tau_count) {
            (Some(a), Some(b), Some(n)) if n >= 2 => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
            (Some(a), _, Some(1)) => vec![a],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub id: String,
    /// `stationary`, `polyline` or `family`.
    pub kind: String,
    #[serde(default)]
    pub point: Vec<f64>,
    /// `[t, x, y(, z)]` rows.
    #[serde(default)]
    pub knots: Vec<Vec<f64>>,
    /// Seed on the boundary of `D_theta` for the family curve.
    #[serde(default)]
    pub z: Vec<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RungeConfig {
    pub n_space: usize,
    pub n_time: usize,
    /// Inflation of the search region in units of `h`; absent selects
    /// `max(2/tau, 2h)`.
    pub margin_cells: Option<f64>,
    pub lambda: Option<f64>,
    pub residual_limit: f64,
}

impl Default for RungeConfig {
    fn default() -> Self {
        RungeConfig { n_space: 16, n_time: 16, margin_cells: Some(2.0), lambda: None, residual_limit: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Use this constant instead of estimating it.
    pub kappa_hat: Option<f64>,
    #[serde(default = "kernel_spu")]
    pub steps_per_unit: usize,
    #[serde(default = "kernel_times")]
    pub times: Vec<f64>,
}

fn kernel_spu() -> usize {
    2048
}

fn kernel_times() -> Vec<f64> {
    vec![0.01, 0.02, 0.05]
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { kappa_hat: None, steps_per_unit: kernel_spu(), times: kernel_times() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    /// Dirichlet data `amplitude * sin(pi t / T) * (1 + x_0)`.
    pub amplitude: f64,
    /// Times at which field snapshots are written.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { amplitude: 1.0, snapshots: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub taus: Vec<f64>,
    /// Sweep of the indicator-bounds check; empty reuses `taus`.
    #[serde(default)]
    pub bound_taus: Vec<f64>,
    #[serde(default = "beta")]
    pub beta: f64,
    /// `C_1` of the pointwise comparisons.
    #[serde(default = "cutoff")]
    pub cutoff: f64,
    /// Samples need `tau d(t) >= guard` in the inclusion estimates.
    #[serde(default = "guard")]
    pub guard: f64,
    #[serde(default = "sample_times")]
    pub sample_times: usize,
    /// Lattice spacing of the sample points, in cells of the coarse mesh.
    #[serde(default = "stride")]
    pub node_stride: usize,
    /// Also run the checks on a mesh with half the cell width.
    #[serde(default = "yes")]
    pub refine: bool,
    /// Curve used by the comparison and inclusion checks.
    pub curve: String,
}

// Balls of radius 8/tau do not fit a unit body at the desk-scale tau range.
fn beta() -> f64 {
    2.0
}

fn cutoff() -> f64 {
    8.0
}

fn guard() -> f64 {
    3.0
}

fn sample_times() -> usize {
    24
}

fn stride() -> usize {
    5
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    /// The second body; empty repeats the first.
    #[serde(default)]
    pub inclusion: Vec<ShapeConfig>,
    pub fill_scale: Option<f64>,
    pub initial: Option<InitialConfig>,
    #[serde(default = "quarter")]
    pub tol: f64,
}

fn quarter() -> f64 {
    0.25
}

pub const STAGES: [&str; 7] = ["forward", "dnmap", "probe", "indicator", "verify", "detect", "report"];

fn point(v: &[f64]) -> Point {
    let mut p = [0.0; 3];
    for (i, x) in v.iter().take(3).enumerate() {
        p[i] = *x;
    }
    p
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Collects every violation before failing.
    pub fn validate(&self) -> Result<(), LabError> {
        let mut v = Vec::new();
        let d = self.dim;
        if d != 2 && d != 3 {
            v.push(format!("dim must be 2 or 3, got {d}"));
        }
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                v.push(format!("unknown stage `{s}`"));
            }
        }
        let m = &self.mesh;
        if m.cells < 2 {
            v.push("mesh.cells must be at least 2".into());
        }
        if !m.lo.is_empty() && m.lo.len() != d {
            v.push(format!("mesh.lo needs {d} entries"));
        }
        if !(m.size > 0.0) {
            v.push("mesh.size must be positive".into());
        }
        if m.steps_per_unit == 0 || !(m.t_final > 0.0) {
            v.push("mesh.steps_per_unit and mesh.t_final must be positive".into());
        }
        match self.background.kind.as_str() {
            "uniform" | "layered" | "checker" => {}
            k => v.push(format!("unknown background kind `{k}`")),
        }
        if !(self.background.value > 0.0 && self.background.other > 0.0) {
            v.push("background values must be positive".into());
        }
        if self.background.axis >= d {
            v.push("background.axis out of range".into());
        }
        for (i, s) in self.inclusion.iter().chain(&self.search).enumerate() {
            check_shape(s, d, i, &mut v);
        }
        if !(self.fill.scale > 0.0) || self.fill.scale == 1.0 {
            v.push("fill.scale must be positive and different from 1".into());
        }
        if !self.initial.affine.is_empty() && self.initial.affine.len() != d + 1 {
            v.push(format!("initial.affine needs {} entries", d + 1));
        }
        let p = &self.probe;
        if !(p.theta > 0.0 && p.theta < m.t_final) {
            v.push(format!("probe.theta = {} must lie in (0, T)", p.theta));
        }
        if !(p.mu > 0.0) {
            v.push("probe.mu must be positive".into());
        }
        let taus = p.tau_grid();
        if taus.is_empty() {
            v.push("no tau values: give probe.taus or tau_min/tau_max/tau_count".into());
        }
        if taus.iter().any(|t| !(*t > 0.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
            v.push("tau values must be positive and increasing".into());
        }
        if p.mode != "volume" && p.mode != "boundary" {
            v.push(format!("unknown probe.mode `{}`", p.mode));
        }
        if !(p.slope_fraction > 0.0 && p.slope_fraction <= 1.0) {
            v.push("probe.slope_fraction must lie in (0, 1]".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.curve {
            if !ids.insert(c.id.clone()) {
                v.push(format!("duplicate curve id `{}`", c.id));
            }
            match c.kind.as_str() {
                "stationary" if c.point.len() != d => v.push(format!("curve `{}`: point needs {d} entries", c.id)),
                "polyline" if c.knots.len() < 2 || c.knots.iter().any(|k| k.len() != d + 1) => {
                    v.push(format!("curve `{}`: knots need at least two rows of {} entries", c.id, d + 1))
                }
                "family" if c.z.len() != d || c.alpha.is_none() || c.epsilon.is_none() => {
                    v.push(format!("curve `{}`: family needs z, alpha and epsilon", c.id))
                }
                "stationary" | "polyline" | "family" => {}
                k => v.push(format!("curve `{}`: unknown kind `{k}`", c.id)),
            }
        }
        let r = &self.runge;
        if r.n_space == 0 || r.n_time == 0 || !(r.residual_limit > 0.0) {
            v.push("runge sizes and residual_limit must be positive".into());
        }
        if let Some(k) = self.kernel.kappa_hat {
            if !(k > 0.0 && k < 1.0) {
                v.push("kernel.kappa_hat must lie in (0, 1)".into());
            }
        }
        if let Some(vc) = &self.verify {
            if vc.taus.is_empty() {
                v.push("verify.taus is empty".into());
            }
            for (name, t) in [("taus", &vc.taus), ("bound_taus", &vc.bound_taus)] {
                if t.iter().any(|x| !(*x > 0.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
                    v.push(format!("verify.{name} must be positive and increasing"));
                }
            }
            if !self.curve.iter().any(|c| c.id == vc.curve) {
                v.push(format!("verify.curve `{}` is not a configured curve", vc.curve));
            }
        }
        if let Some(dc) = &self.detect {
            for (i, s) in dc.inclusion.iter().enumerate() {
                check_shape(s, d, i, &mut v);
            }
            if let Some(init) = &dc.initial {
                if !init.affine.is_empty() && init.affine.len() != d + 1 {
                    v.push(format!("detect.initial.affine needs {} entries", d + 1));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(v))
        }
    }

    pub fn lo(&self) -> Point {
        if self.mesh.lo.is_empty() {
            [0.0; 3]
        } else {
            point(&self.mesh.lo)
        }
    }

    pub fn domain(&self) -> Result<Domain, LabError> {
        let lo = self.lo();
        let mut hi = lo;
        for x in hi.iter_mut().take(self.dim) {
            *x += self.mesh.size;
        }
        Ok(Domain::new(self.dim, lo, hi)?)
    }

    /// Body mesh with the given cells per side, embedded in the padded box.
    pub fn embedding_with(&self, cells: usize, pad: usize) -> Result<Embedding, LabError> {
        let mut n = [0; 3];
        for x in n.iter_mut().take(self.dim) {
            *x = cells;
        }
        let inner = BoxMesh::new(self.dim, self.lo(), n, self.mesh.size / cells as f64)?;
        Ok(Embedding::new(inner, pad)?)
    }

    pub fn embedding(&self) -> Result<Embedding, LabError> {
        self.embedding_with(self.mesh.cells, self.mesh.pad)
    }

    pub fn grid(&self) -> Result<TimeGrid, LabError> {
        Ok(TimeGrid::new(self.mesh.t_final, self.mesh.steps_per_unit)?)
    }

    pub fn background(&self) -> Background {
        let b = &self.background;
        match b.kind.as_str() {
            "layered" => Background::Layered { axis: b.axis, at: b.at, below: Tensor::scalar(b.value), above: Tensor::scalar(b.other) },
            "checker" => {
                let lo = self.lo();
                let mut hi = lo;
                for x in hi.iter_mut().take(self.dim) {
                    *x += self.mesh.size;
                }
                Background::Checker { lo, hi, blocks: b.blocks, even: Tensor::scalar(b.value), odd: Tensor::scalar(b.other) }
            }
            _ => Background::Uniform(Tensor::scalar(b.value)),
        }
    }

    pub fn inclusion(&self) -> Result<MovingInclusion, LabError> {
        build_inclusion(&self.inclusion, self.dim, self.mesh.t_final)
    }

    /// Search region for blind probing; defaults to the inclusion.
    pub fn search_region(&self) -> Result<MovingInclusion, LabError> {
        if self.search.is_empty() {
            self.inclusion()
        } else {
            build_inclusion(&self.search, self.dim, self.mesh.t_final)
        }
    }

    pub fn initial_on(init: &InitialConfig, mesh: &BoxMesh) -> Vec<f64> {
        if init.affine.is_empty() {
            return vec![0.0; mesh.num_nodes()];
        }
        (0..mesh.num_nodes())
            .map(|p| {
                let x = mesh.node(p);
                init.affine[0] + (0..mesh.dim).map(|i| init.affine[i + 1] * x[i]).sum::<f64>()
            })
            .collect()
    }

    pub fn curve_by_id(&self, id: &str) -> Option<&CurveConfig> {
        self.curve.iter().find(|c| c.id == id)
    }

    /// Builds a configured curve; family curves need the inclusion and the
    /// Lipschitz constant of its motion.
    pub fn build_curve(&self, c: &CurveConfig, incl: &MovingInclusion, k_d: f64) -> Result<ProbeCurve, LabError> {
        let (t, th) = (self.mesh.t_final, self.probe.theta);
        let curve = match c.kind.as_str() {
            "stationary" => ProbeCurve::stationary(point(&c.point), t, th)?,
            "polyline" => ProbeCurve::new(c.knots.iter().map(|k| (k[0], point(&k[1..]))).collect(), t, th)?,
            _ => {
                let opts = dynprobe_core::geometry::FamilyOptions { k_d, ..Default::default() };
                dynprobe_core::geometry::build_curve_family(
                    &point(&c.z),
                    th,
                    c.alpha.unwrap_or(0.0),
                    c.epsilon.unwrap_or(0.0),
                    incl,
                    None,
                    &self.domain()?,
                    &opts,
                )?
            }
        };
        Ok(curve.with_mu(self.probe.mu))
    }
}

fn check_shape(s: &ShapeConfig, d: usize, i: usize, v: &mut Vec<String>) {
    let needs_center = matches!(s.shape.as_str(), "disc" | "ball" | "ellipse");
    if needs_center && s.center.len() != d {
        v.push(format!("shape {i}: center needs {d} entries"));
    }
    match s.shape.as_str() {
        "disc" | "ball" if !(s.radius > 0.0) => v.push(format!("shape {i}: radius must be positive")),
        "ellipse" if d != 2 || s.semi.len() != 2 || s.semi.iter().any(|a| !(*a > 0.0)) => {
            v.push(format!("shape {i}: ellipse needs dim 2 and two positive semi-axes"))
        }
        "polygon" if d != 2 || s.vertices.len() < 3 || s.vertices.iter().any(|p| p.len() != 2) => {
            v.push(format!("shape {i}: polygon needs dim 2 and at least three 2D vertices"))
        }
        "disc" | "ball" | "ellipse" | "polygon" => {}
        k => v.push(format!("shape {i}: unknown shape `{k}`")),
    }
    if !s.velocity.is_empty() && s.velocity.len() != d {
        v.push(format!("shape {i}: velocity needs {d} entries"));
    }
    if let Some([a, b]) = s.active {
        if !(a < b) {
            v.push(format!("shape {i}: empty activity window"));
        }
    }
}

pub fn build_inclusion(shapes: &[ShapeConfig], dim: usize, t_final: f64) -> Result<MovingInclusion, LabError> {
    let mut out = Vec::new();
    for s in shapes {
        let shape = match s.shape.as_str() {
            "ellipse" => Shape::Ellipse { center: point(&s.center), semi: [s.semi[0], s.semi[1]], angle: s.angle },
            "polygon" => Shape::Polygon { vertices: s.vertices.iter().map(|p| point(p)).collect() },
            _ => Shape::Ball { center: point(&s.center), radius: s.radius },
        };
        let mut m = MovingShape::stationary(shape);
        if s.velocity.iter().any(|x| *x != 0.0) {
            m.path = MotionPath::linear(point(&s.velocity), t_final);
        }
        if let Some(w) = s.active {
            m.active = (w[0], w[1]);
        }
        out.push(m);
    }
    Ok(MovingInclusion::new(dim, t_final, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(text: &str) -> ProbeConfig {
        toml::from_str(&format!("theta = 2.0\nmu = 3.5\n{text}")).unwrap()
    }

    #[test]
    fn tau_grid_prefers_the_explicit_list() {
        assert_eq!(probe("taus = [8.0, 6.0]\ntau_min = 1.0\ntau_max = 2.0\ntau_count = 3").tau_grid(), vec![8.0, 6.0]);
        assert_eq!(probe("tau_min = 6.0\ntau_max = 24.0\ntau_count = 10").tau_grid(), (0..10).map(|k| 6.0 + 2.0 * k as f64).collect::<Vec<_>>());
        assert_eq!(probe("tau_min = 6.0\ntau_count = 1").tau_grid(), vec![6.0]);
        assert!(probe("").tau_grid().is_empty());
    }
}
