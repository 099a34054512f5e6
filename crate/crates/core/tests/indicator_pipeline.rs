use dynprobe_core::conductivity::{build_conductivity, Background, ConductivityOptions, Fill, Tensor};
use dynprobe_core::geometry::{MovingInclusion, ProbeCurve, Shape};
use dynprobe_core::indicator::{residual_bound, volume_indicator};
use dynprobe_core::mesh::{BoxMesh, Embedding, TimeGrid};
use dynprobe_core::special::{compute_special_set, SpecialOptions};

struct Case {
    emb: Embedding,
    grid: TimeGrid,
    curve: ProbeCurve,
}

fn case() -> Case {
    Case {
        emb: Embedding::new(BoxMesh::unit(2, 24).unwrap(), 6).unwrap(),
        grid: TimeGrid::new(2.0, 32).unwrap(),
        curve: ProbeCurve::stationary([0.2, 0.5, 0.0], 2.0, 1.0).unwrap(),
    }
}

fn indicator(c: &Case, incl: &MovingInclusion, fill: f64, tau: f64, mu: f64, v0: &[f64]) -> f64 {
    let times: Vec<f64> = (0..c.grid.num_times()).map(|n| c.grid.t(n)).collect();
    let bg = Background::Uniform(Tensor::identity());
    let pair = build_conductivity(&bg, incl, Fill::Scaled(fill), &times, &c.emb.inner, &ConductivityOptions::default()).unwrap();
    let b_outer = pair.background_on(&c.emb);
    let sp = compute_special_set(&b_outer, &c.emb.outer, &c.grid, &c.curve, tau, mu, 1.0, &SpecialOptions { kappa_hat: None, d_omega: 2f64.sqrt() }).unwrap();
    volume_indicator(&pair, &sp, &c.emb, &c.grid, v0).unwrap().value
}

#[test]
fn zeroing_the_initial_state_stays_within_the_residual_envelope() {
    let c = case();
    let incl = MovingInclusion::stationary(2, 2.0, vec![Shape::Ball { center: [0.55, 0.5, 0.0], radius: 0.12 }]).unwrap();
    let v0: Vec<f64> = (0..c.emb.inner.num_nodes()).map(|p| 1.0 + c.emb.inner.node(p)[1]).collect();
    let m = c.emb.inner.lumped_mass();
    let v0_norm2: f64 = v0.iter().zip(&m).map(|(v, w)| w * v * v).sum();
    let zero = vec![0.0; v0.len()];
    for tau in [6.0, 8.0] {
        let mu = 4.0;
        let a = indicator(&c, &incl, 2.0, tau, mu, &v0);
        let b = indicator(&c, &incl, 2.0, tau, mu, &zero);
        let env = residual_bound(v0_norm2, 2f64.sqrt(), tau, mu, 1.0, 2.0);
        assert!((a - b).abs() <= env, "tau {tau}: |{a:e} - {b:e}| > {env:e}");
    }
}

#[test]
fn sign_follows_the_jump() {
    let c = case();
    let incl = MovingInclusion::stationary(2, 2.0, vec![Shape::Ball { center: [0.45, 0.5, 0.0], radius: 0.12 }]).unwrap();
    let zero = vec![0.0; c.emb.inner.num_nodes()];
    let up = indicator(&c, &incl, 2.0, 8.0, 4.0, &zero);
    let down = indicator(&c, &incl, 0.5, 8.0, 4.0, &zero);
    assert!(up > 0.0 && down < 0.0, "{up:e} {down:e}");
}

#[test]
fn empty_inclusion_gives_zero_with_matched_start() {
    let c = case();
    let incl = MovingInclusion::empty(2, 2.0);
    let zero = vec![0.0; c.emb.inner.num_nodes()];
    let v = indicator(&c, &incl, 2.0, 8.0, 4.0, &zero);
    assert!(v.abs() <= 1e-14, "{v:e}");
}
