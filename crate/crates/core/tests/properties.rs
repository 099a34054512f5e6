use dynprobe_core::conductivity::{build_conductivity, Background, ConductivityOptions, Fill, Tensor};
use dynprobe_core::geometry::{
    build_curve_family, inclusion_distance, validate_inclusion, vitali_cover, Domain, FamilyOptions, GeometryGrid,
    MotionPath, MovingInclusion, MovingShape, Shape,
};
use dynprobe_core::math::{dist, Point};
use dynprobe_core::mesh::{BoxMesh, SpaceTimeField, TimeGrid};
use dynprobe_core::pde::{solve_damped, solve_heat, solve_screened, BoundaryField, Direction, Medium};
use proptest::prelude::*;

fn disc(c: (f64, f64), r: f64) -> Shape {
    Shape::Ball { center: [c.0, c.1, 0.0], radius: r }
}

fn moving_disc(c: (f64, f64), r: f64, v: (f64, f64)) -> MovingInclusion {
    let mut s = MovingShape::stationary(disc(c, r));
    s.path = MotionPath::linear([v.0, v.1, 0.0], 1.0);
    MovingInclusion::new(2, 1.0, vec![s]).unwrap()
}

fn spd(l1: f64, l2: f64, angle: f64) -> Tensor {
    let (c, s) = (angle.cos(), angle.sin());
    let mut m = [[0.0; 3]; 3];
    m[0][0] = l1 * c * c + l2 * s * s;
    m[1][1] = l1 * s * s + l2 * c * c;
    m[0][1] = (l1 - l2) * c * s;
    m[1][0] = m[0][1];
    m[2][2] = 1.0;
    Tensor(m)
}

fn mass_norm(mesh: &BoxMesh, f: &[f64]) -> f64 {
    mesh.lumped_mass().iter().zip(f).map(|(m, v)| m * v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn curve_family_keeps_its_distance_bands(r in 0.12f64..0.25, phi in 0.0f64..6.28, alpha in 0.1f64..0.3, frac in 0.05f64..1.0) {
        let c = (0.5, 0.5);
        let incl = MovingInclusion::stationary(2, 1.0, vec![disc(c, r)]).unwrap();
        let z = [c.0 + r * phi.cos(), c.1 + r * phi.sin(), 0.0];
        let eps = frac * alpha * alpha;
        let theta = 0.5;
        let Ok(curve) = build_curve_family(&z, theta, alpha, eps, &incl, None, &Domain::unit(2), &FamilyOptions::default()) else {
            return Ok(());
        };
        let a3 = alpha.powi(3);
        for k in 0..=2000 {
            let t = k as f64 / 2000.0;
            let y = curve.position(t);
            let d = (dist(&y, &[c.0, c.1, 0.0]) - r).max(0.0);
            let u = (t - theta).abs();
            let slack = 1e-6;
            if u <= eps {
                prop_assert!(d <= 2.0 * eps / a3 + slack);
            } else if u <= alpha * alpha {
                prop_assert!(d >= u / (2.0 * alpha) - slack && d <= 2.0 * u / a3 + slack);
            } else {
                prop_assert!(d >= alpha / 2.0 - slack);
            }
        }
        for w in curve.knots.windows(2) {
            prop_assert!(dist(&w[0].1, &w[1].1) <= curve.speed * (w[1].0 - w[0].0) * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn lipschitz_estimate_grows_under_nested_refinement(vx in -0.3f64..0.3, vy in -0.3f64..0.3, r in 0.1f64..0.2) {
        let incl = moving_disc((0.45, 0.5), r, (vx, vy));
        let dom = Domain::unit(2);
        let coarse = GeometryGrid { n_time: 8, n_space: 21, ..GeometryGrid::default() };
        let fine = GeometryGrid { n_time: 16, ..coarse.clone() };
        let a = validate_inclusion(&incl, &dom, &coarse).unwrap().k_d;
        let b = validate_inclusion(&incl, &dom, &fine).unwrap().k_d;
        prop_assert!(b >= a - 1e-12);
        prop_assert!(b <= (vx * vx + vy * vy).sqrt() + 1e-9);
    }

    #[test]
    fn vitali_cover_packs_and_covers(cx in 0.3f64..0.7, cy in 0.3f64..0.7, r in 0.05f64..0.2, tau in 6.0f64..30.0, seed in 0u64..1000) {
        let incl = MovingInclusion::stationary(2, 1.0, vec![disc((cx, cy), r)]).unwrap();
        let centres = vitali_cover(&incl, 0.5, tau).unwrap();
        for (i, a) in centres.iter().enumerate() {
            prop_assert!(incl.contains(a, 0.5));
            for b in &centres[i + 1..] {
                prop_assert!(dist(a, b) >= 2.0 / tau - 1e-12);
            }
        }
        let mut s = seed;
        for _ in 0..200 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let rho = r * ((s >> 11) as f64 / (1u64 << 53) as f64).sqrt();
            let ang = 6.283185307179586 * ((s >> 20) as f64 / (1u64 << 44) as f64);
            let p = [cx + rho * ang.cos(), cy + rho * ang.sin(), 0.0];
            prop_assert!(centres.iter().any(|c| dist(c, &p) <= 3.0 / tau + 1e-12));
        }
    }

    #[test]
    fn inclusion_distance_is_one_lipschitz(
        x in (0.0f64..1.0, 0.0f64..1.0), y in (0.0f64..1.0, 0.0f64..1.0), t in 0.0f64..1.0,
        a in 0.08f64..0.2, b in 0.05f64..0.15, rot in 0.0f64..3.1,
    ) {
        let mut e = MovingShape::stationary(Shape::Ellipse { center: [0.5, 0.5, 0.0], semi: [a, b], angle: rot });
        e.path = MotionPath::linear([0.2, -0.1, 0.0], 1.0);
        let incl = MovingInclusion::new(2, 1.0, vec![e, MovingShape::stationary(disc((0.2, 0.25), 0.08))]).unwrap();
        let dom = Domain::unit(2);
        let p = [x.0, x.1, 0.0];
        let q = [y.0, y.1, 0.0];
        let (i1, o1) = inclusion_distance(&p, t, &incl, &dom).unwrap();
        let (i2, o2) = inclusion_distance(&q, t, &incl, &dom).unwrap();
        let d = dist(&p, &q);
        prop_assert!((i1 - i2).abs() <= d + 1e-9);
        prop_assert!((o1 - o2).abs() <= d + 1e-9);
    }

    #[test]
    fn gamma_bounds_every_rayleigh_quotient(l1 in 0.3f64..3.0, l2 in 0.3f64..3.0, ang in 0.0f64..3.1, s in 1.2f64..4.0, dirs in prop::collection::vec(0.0f64..6.28, 100)) {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let incl = MovingInclusion::stationary(2, 1.0, vec![disc((0.5, 0.5), 0.2)]).unwrap();
        let bg = Background::Uniform(spd(l1, l2, ang));
        let pair = build_conductivity(&bg, &incl, Fill::Scaled(s), &[0.0, 0.5, 1.0], &mesh, &ConductivityOptions::default()).unwrap();
        let a = pair.a_at(0.5);
        for t in pair.b.iter().chain(a.iter()) {
            for phi in &dirs {
                let v: Point = [phi.cos(), phi.sin(), 0.0];
                let q = t.quad(&v, &v);
                prop_assert!(q <= pair.gamma_inf * (1.0 + 1e-12));
                prop_assert!(1.0 / q <= pair.gamma_inf * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn heat_solutions_obey_the_maximum_principle(seed in 0u64..10_000, lo in -2.0f64..0.0, span in 0.1f64..3.0) {
        let mesh = BoxMesh::unit(2, 10).unwrap();
        let grid = TimeGrid::new(0.25, 32).unwrap();
        let b: Vec<Tensor> = (0..mesh.num_cells()).map(|c| if mesh.centroid(c)[0] < 0.5 { Tensor::identity() } else { Tensor::scalar(4.0) }).collect();
        let mut s = seed.wrapping_add(1);
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            lo + span * ((s >> 11) as f64 / (1u64 << 53) as f64)
        };
        let mut f = BoundaryField::zeros(&mesh, 0, grid.num_times());
        for v in f.data.iter_mut() {
            *v = next();
        }
        let v0: Vec<f64> = (0..mesh.num_nodes()).map(|_| next()).collect();
        let v = solve_heat(Medium::Static(&b), &f, &v0, &mesh, &grid).unwrap();
        for n in grid.n0()..=grid.n_t() {
            prop_assert!(v.at(n).iter().all(|x| *x >= lo - 1e-10 && *x <= lo + span + 1e-10));
        }
    }

    #[test]
    fn screened_solutions_shrink_as_tau_grows(tau in 0.5f64..20.0, step in 0.1f64..10.0, coeffs in prop::collection::vec(-1.0f64..1.0, 121)) {
        let mesh = BoxMesh::unit(2, 10).unwrap();
        let b: Vec<Tensor> = (0..mesh.num_cells()).map(|c| if mesh.centroid(c)[1] < 0.4 { Tensor::identity() } else { Tensor::scalar(3.0) }).collect();
        let p1 = solve_screened(&b, tau, &coeffs, &mesh).unwrap();
        let p2 = solve_screened(&b, tau + step, &coeffs, &mesh).unwrap();
        prop_assert!(mass_norm(&mesh, &p2) <= mass_norm(&mesh, &p1) * (1.0 + 1e-12));
    }

    #[test]
    fn scaled_product_matches_damped_product(u in 1e-30f64..1e30, w in 1e-30f64..1e30, tau in 0.5f64..8.0, t in -1.0f64..4.0) {
        let big = tau * tau * (t + 4.0);
        let (ud, wd) = (u * (-big).exp(), w * big.exp());
        let lhs = ud * wd;
        prop_assert!((lhs - u * w).abs() <= 1e-12 * (u * w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn forward_and_backward_damped_solves_are_adjoint(tau in 0.5f64..10.0, seed in 0u64..1000) {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let b: Vec<Tensor> = (0..mesh.num_cells()).map(|c| if mesh.centroid(c)[0] < 0.3 { Tensor::scalar(2.0) } else { Tensor::identity() }).collect();
        let (np, nt) = (mesh.num_nodes(), grid.num_times());
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(7);
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = SpaceTimeField::zeros(np, nt);
        let mut g = SpaceTimeField::zeros(np, nt);
        for n in 0..nt {
            for p in 0..np {
                if !mesh.is_boundary(p) {
                    f.at_mut(n)[p] = rnd();
                    g.at_mut(n)[p] = rnd();
                }
            }
        }
        let window = (0, grid.n_steps);
        let v = solve_damped(Medium::Static(&b), tau, Some(&f), None, None, Direction::Forward, window, &mesh, &grid).unwrap();
        let w = solve_damped(Medium::Static(&b), tau, Some(&g), None, None, Direction::Backward, window, &mesh, &grid).unwrap();
        let m = mesh.lumped_mass();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&m).map(|((x, y), w)| x * y * w).sum::<f64>();
        // The backward recursion is the transpose of the forward one shifted
        // by one step: sum_n <w_{n-1}, f_n> = sum_n <g_{n-1}, v_n>.
        let (mut lhs, mut rhs, mut scale) = (0.0, 0.0, 0.0);
        for n in 1..=grid.n_steps {
            let (a, b) = (dot(w.at(n - 1), f.at(n)), dot(g.at(n - 1), v.at(n)));
            lhs += a;
            rhs += b;
            scale += a.abs() + b.abs();
        }
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "gap {:e} vs scale {scale:e}", (lhs - rhs).abs());
    }
}
