//! Artifact writers. Floats are written in Rust's shortest round-trip
//! form, so equal numbers give equal bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use dynprobe_core::geometry::GeometryReport;
use dynprobe_core::indicator::MismatchVerdict;
use dynprobe_core::mesh::{BoxMesh, TimeGrid};
use dynprobe_core::special::KernelConstants;
use dynprobe_core::verify::ConstantReport;

use crate::error::LabError;
use crate::experiment::{CurveSweep, DetectResult, DnRecord, ForwardResult, VerifyResult};

pub const MANIFEST: &str = "manifest.txt";
pub const FAILED: &str = "FAILED";
pub const INDICATOR: &str = "indicator.csv";
pub const SLOPES: &str = "slopes.csv";
pub const CONSTANTS: &str = "constants.csv";
pub const VERDICT: &str = "verdict.txt";

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `key = value` lines; values that are not plain numbers are quoted.
pub fn key_values(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
            let _ = writeln!(s, "{k} = {v}");
        } else {
            let _ = writeln!(s, "{k} = {v:?}");
        }
    }
    s
}

/// Parses a file written by [`key_values`].
pub fn read_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().trim_matches('"').to_string()))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, LabError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), LabError> {
        Ok(fs::write(self.path(name), text)?)
    }

    pub fn mark_failed(&self, stage: &str, err: &LabError) -> Result<(), LabError> {
        self.write_text(FAILED, &key_values(&[("stage", stage.to_string()), ("error", err.to_string())]))
    }

    pub fn clear_failed(&self) -> Result<(), LabError> {
        match fs::remove_file(self.path(FAILED)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn geometry(&self, g: &GeometryReport) -> Result<(), LabError> {
        let mut kv = vec![
            ("k_d", num(g.k_d)),
            ("rho", num(g.rho)),
            ("l_d", num(g.l_d)),
            ("h1", g.h1_ok.to_string()),
            ("h2", g.h2_ok.to_string()),
            ("h3a", g.h3a_ok.to_string()),
            ("h3b", g.h3b_ok.to_string()),
        ];
        let empty = g.empty_intervals.iter().map(|(a, b)| format!("[{a}, {b}]")).collect::<Vec<_>>().join(" ");
        kv.push(("empty_intervals", empty));
        self.write_text("geometry.txt", &key_values(&kv))
    }

    pub fn kernel(&self, k: &KernelConstants) -> Result<(), LabError> {
        self.write_text(
            "kernel.txt",
            &key_values(&[
                ("kappa_hat", num(k.kappa_hat)),
                ("harnack_c", num(k.harnack_c)),
                ("samples", k.samples.to_string()),
                ("excluded_cylinders", k.excluded_cylinders.to_string()),
                ("provenance", k.provenance.clone()),
            ]),
        )
    }

    pub fn mesh(&self, mesh: &BoxMesh) -> Result<(), LabError> {
        table(
            &self.path("mesh_nodes.csv"),
            &["node", "x", "y", "z"],
            (0..mesh.num_nodes()).map(|p| {
                let x = mesh.node(p);
                vec![p.to_string(), num(x[0]), num(x[1]), num(x[2])]
            }),
        )?;
        table(
            &self.path("mesh_cells.csv"),
            &["cell", "nodes"],
            (0..mesh.num_cells()).map(|c| vec![c.to_string(), mesh.cell(c).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")]),
        )
    }

    pub fn forward(&self, f: &ForwardResult, grid: &TimeGrid, snapshots: &[f64]) -> Result<(), LabError> {
        let l2 = |n: usize| f.flux.at_time(n).map(|v| v.iter().zip(&f.flux.mass).map(|(x, m)| m * x * x).sum::<f64>().sqrt());
        table(
            &self.path("forward_flux.csv"),
            &["n", "t", "flux_l2"],
            (f.flux.start..f.flux.end()).map(|n| vec![n.to_string(), num(grid.t(n)), opt(l2(n))]),
        )?;
        let mut rows = Vec::new();
        for &t in snapshots {
            let n = grid.index_of(t).map_err(LabError::Core)?;
            for (p, v) in f.field.at(n).iter().enumerate() {
                rows.push(vec![num(grid.t(n)), p.to_string(), num(*v)]);
            }
        }
        table(&self.path("forward_snapshots.csv"), &["t", "node", "value"], rows)
    }

    pub fn dnmap(&self, recs: &[DnRecord]) -> Result<(), LabError> {
        let rows = recs.iter().flat_map(|r| {
            r.rows.iter().map(move |(n, t, a, b)| vec![r.curve_id.clone(), num(r.tau), n.to_string(), num(*t), num(*a), num(*b)])
        });
        table(&self.path("dnmap.csv"), &["curve_id", "tau", "n", "t", "trace_l2", "flux_l2"], rows)
    }

    /// Runge fits of the boundary-mode probes.
    pub fn probe(&self, sweeps: &[CurveSweep]) -> Result<(), LabError> {
        let mut rows = Vec::new();
        let mut coef = Vec::new();
        for s in sweeps {
            for r in &s.results {
                if let Some(g) = &r.runge {
                    rows.push(vec![
                        s.id.clone(),
                        num(r.tau),
                        num(g.residual_u),
                        num(g.residual_ustar),
                        g.flagged.to_string(),
                        g.separated.to_string(),
                    ]);
                    for (field, c) in [("u", &g.coefficients_u), ("u_star", &g.coefficients_ustar)] {
                        for (k, v) in c.iter().enumerate() {
                            coef.push(vec![s.id.clone(), num(r.tau), field.to_string(), k.to_string(), num(*v)]);
                        }
                    }
                }
            }
        }
        table(&self.path("probe.csv"), &["curve_id", "tau", "residual_u", "residual_u_star", "flagged", "separated"], rows)?;
        table(&self.path("runge_coefficients.csv"), &["curve_id", "tau", "field", "k", "c"], coef)
    }

    pub fn indicator(&self, sweeps: &[CurveSweep], kappa_hat: f64, mu: f64) -> Result<(), LabError> {
        let mut rows = Vec::new();
        let mut detail = Vec::new();
        let mut fails = Vec::new();
        for s in sweeps {
            let mut sets = vec![&s.samples];
            if s.volume.mode != s.samples.mode {
                sets.push(&s.volume);
            }
            for set in sets {
                for i in 0..set.len() {
                    let tau = set.taus[i];
                    let rb = s.residual_bounds.get(s.samples.taus.iter().position(|t| *t == tau).unwrap_or(usize::MAX)).copied();
                    rows.push(vec![num(tau), num(set.values[i]), set.mode.as_str().into(), s.id.clone(), opt(rb)]);
                    detail.push(vec![s.id.clone(), set.mode.as_str().into(), num(tau), num(set.values[i]), num(set.floors[i]), opt(set.runge_residuals[i])]);
                }
                for (tau, e) in &set.failures {
                    fails.push(vec![s.id.clone(), set.mode.as_str().into(), num(*tau), e.clone()]);
                }
            }
        }
        table(&self.path(INDICATOR), &["tau", "I", "mode", "curve_id", "residual_bound"], rows)?;
        table(&self.path("indicator_detail.csv"), &["curve_id", "mode", "tau", "I", "floor", "runge_residual"], detail)?;
        table(&self.path("failures.csv"), &["curve_id", "mode", "tau", "error"], fails)?;
        let slopes = sweeps.iter().map(|s| {
            let w = &s.slopes.window;
            vec![
                s.id.clone(),
                s.samples.mode.as_str().into(),
                num(s.slopes.slope_lo),
                num(s.slopes.slope_hi),
                num(s.slopes.fit),
                opt(w.first().copied()),
                opt(w.last().copied()),
                num(s.profile.eps_sigma),
                num(kappa_hat),
                num(mu),
                num(s.class.far_threshold),
                opt(s.class.touch_threshold),
                s.class.class.as_str().into(),
            ]
        });
        table(
            &self.path(SLOPES),
            &[
                "curve_id",
                "mode",
                "slope_lo",
                "slope_hi",
                "slope_fit",
                "window_lo",
                "window_hi",
                "eps_sigma",
                "kappa_hat",
                "mu",
                "far_threshold",
                "touch_threshold",
                "class",
            ],
            slopes,
        )
    }

    pub fn constants(&self, v: &VerifyResult) -> Result<(), LabError> {
        let row = |r: &ConstantReport, level: &str| {
            vec![
                r.lemma_id.clone(),
                level.to_string(),
                num(r.fitted_constant),
                r.samples.to_string(),
                r.excluded.to_string(),
                r.pass.to_string(),
                opt(r.stability),
                r.description.clone(),
            ]
        };
        let mut rows = Vec::new();
        for l in &v.levels {
            rows.extend(l.reports.iter().map(|r| row(r, &l.level.to_string())));
        }
        rows.extend(v.refined.iter().map(|r| row(r, "refined")));
        table(&self.path(CONSTANTS), &["lemma_id", "level", "fitted_constant", "samples", "excluded", "pass", "stability", "description"], rows)?;
        let cm = v.levels.iter().flat_map(|l| l.c_m.iter().map(move |(t, c)| vec![l.level.to_string(), num(*t), num(*c)]));
        table(&self.path("c_m.csv"), &["level", "tau", "c_m"], cm)?;
        self.write_text("tau0.txt", &key_values(&[("empirical_tau0", opt(v.tau0))]))
    }

    pub fn detect(&self, d: &DetectResult) -> Result<(), LabError> {
        let v: &MismatchVerdict = &d.verdict;
        let rows = v.evidence.iter().map(|e| {
            vec![
                e.probe.clone(),
                num(e.slopes_a.slope_lo),
                num(e.slopes_a.slope_hi),
                num(e.slopes_a.fit),
                num(e.slopes_b.slope_lo),
                num(e.slopes_b.slope_hi),
                num(e.slopes_b.fit),
                num(e.gap),
                num(e.tolerance),
                e.usable.to_string(),
                e.note.clone(),
            ]
        });
        table(
            &self.path("detect.csv"),
            &["probe", "slope_lo_a", "slope_hi_a", "fit_a", "slope_lo_b", "slope_hi_b", "fit_b", "gap", "tolerance", "usable", "note"],
            rows,
        )?;
        let mut samples = Vec::new();
        for (tag, sweeps) in [("a", &d.sweeps_a), ("b", &d.sweeps_b)] {
            for s in sweeps.iter() {
                for i in 0..s.len() {
                    samples.push(vec![s.curve_id.clone(), tag.to_string(), num(s.taus[i]), num(s.values[i]), opt(s.runge_residuals[i])]);
                }
            }
        }
        table(&self.path("detect_samples.csv"), &["probe", "map", "tau", "I", "runge_residual"], samples)?;
        let fails = [("a", &d.sweeps_a), ("b", &d.sweeps_b)]
            .into_iter()
            .flat_map(|(tag, sw)| sw.iter().flat_map(move |s| s.failures.iter().map(move |(t, e)| vec![s.curve_id.clone(), tag.to_string(), num(*t), e.clone()])));
        table(&self.path("detect_failures.csv"), &["probe", "map", "tau", "error"], fails)?;
        self.write_text(
            VERDICT,
            &key_values(&[
                ("verdict", v.verdict.as_str().to_string()),
                ("tol", num(v.tol)),
                ("runge_limit", num(v.runge_limit)),
                ("probes", v.evidence.len().to_string()),
                ("usable_probes", v.evidence.iter().filter(|e| e.usable).count().to_string()),
            ]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 1e-12 * 7.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt(None), "");
    }

    #[test]
    fn key_values_round_trip() {
        let text = key_values(&[("name", "ac \"one\"".into()), ("seed", "7".into()), ("ok", "true".into())]);
        assert!(text.contains("seed = 7\n") && text.contains("ok = true\n"));
        let back = read_key_values(&text);
        assert_eq!(back[1], ("seed".to_string(), "7".to_string()));
        assert_eq!(back[2].1, "true");
    }

    #[test]
    fn sha256_of_abc() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
