use lipembed::embed::{bebutov, KernelShape};
use lipembed::flow::{FixedProfile, FlowSystem, State};
use lipembed::funcspace::{cr_dist, GridFn, LineFn, WindowFn};
use lipembed::genvec::{rank_check, sample_generic_u, witness_e_du, witness_shifted, DEFAULT_RANK_TOL};
use lipembed::perturb::{perturb_avoid_constants, MapOnNet, PerturbOptions};
use lipembed::ExperimentConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

const HW: f64 = 8.0;
const STEP: f64 = 0.1;

/// Clamped random walk with slope below one on `[-HW, HW]`.
fn line_strategy() -> impl Strategy<Value = LineFn> {
    let n = (2.0 * HW / STEP) as usize + 1;
    (0.0..1.0f64, prop::collection::vec(-0.99..0.99f64, n - 1)).prop_map(move |(start, steps)| {
        let mut v = vec![start];
        for s in steps {
            let prev: f64 = *v.last().unwrap();
            v.push((prev + s * STEP).clamp(0.0, 1.0));
        }
        LineFn::new(HW, STEP, v).unwrap()
    })
}

fn svd_rank(rows: &[Vec<f64>]) -> (usize, f64) {
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    let tol = max * 1e-10;
    let rank = sv.iter().filter(|s| **s > tol).count();
    let kth = sv.iter().copied().filter(|s| *s > tol).fold(f64::INFINITY, f64::min);
    (rank, kth / max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cr_dist_is_a_bounded_pseudometric(a in line_strategy(), b in line_strategy(), c in line_strategy()) {
        let n = HW as usize;
        let ab = cr_dist(&a, &b, n).unwrap();
        prop_assert_eq!(cr_dist(&a, &a, n).unwrap(), 0.0);
        prop_assert_eq!(ab, cr_dist(&b, &a, n).unwrap());
        prop_assert!(ab <= 1.0);
        let via = cr_dist(&a, &c, n).unwrap() + cr_dist(&c, &b, n).unwrap();
        prop_assert!(ab <= via + 1e-15);
    }

    #[test]
    fn cr_dist_truncation_error_is_geometric(a in line_strategy(), b in line_strategy(), k in 1usize..8) {
        let full = cr_dist(&a, &b, HW as usize).unwrap();
        let cut = cr_dist(&a, &b, k).unwrap();
        prop_assert!(cut <= full);
        prop_assert!(full - cut <= 2f64.powi(-(k as i32)) + 1e-15);
    }

    #[test]
    fn rank_agrees_with_svd_on_low_rank_products(
        r in 2usize..7, c in 2usize..9, k in 1usize..5,
        seed in prop::collection::vec(-1.0..1.0f64, 100),
    ) {
        let k = k.min(r).min(c);
        let b: Vec<f64> = seed.iter().take(r * k).copied().collect();
        let cc: Vec<f64> = seed.iter().skip(50).take(k * c).copied().collect();
        let rows: Vec<Vec<f64>> = (0..r)
            .map(|i| (0..c).map(|j| (0..k).map(|t| b[i * k + t] * cc[t * c + j]).sum()).collect())
            .collect();
        let (svd, ratio) = svd_rank(&rows);
        prop_assume!(ratio > 1e-5);
        let cert = rank_check(&rows, DEFAULT_RANK_TOL);
        prop_assert_eq!(cert.rank, svd);
    }

    #[test]
    fn rank_ignores_row_scaling_and_order(rows in prop::collection::vec(prop::collection::vec(-5i32..5, 6), 1..6), s in 0.001..1000.0f64) {
        let f: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
        let exact = rank_check(&f, DEFAULT_RANK_TOL);
        prop_assert!(exact.exact);
        let mut scaled: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|v| v * s * std::f64::consts::PI).collect()).collect();
        scaled.reverse();
        let float = rank_check(&scaled, DEFAULT_RANK_TOL);
        prop_assert!(!float.exact || s.fract() == 0.0);
        prop_assert_eq!(exact.rank, float.rank);
    }

    #[test]
    fn witnesses_have_full_rank(m in 1usize..6, extra in 0usize..4) {
        let l = m + 1 + extra;
        let fam = witness_e_du(l, m).unwrap();
        prop_assert!(fam.certificates[0].exact);
        prop_assert_eq!(fam.certificates[0].rank, m + 1);
        let l = 2 * m + extra;
        let n = l + 1 + extra;
        for alpha in 2..=n - l + 1 {
            let fam = witness_shifted(n, l, m, alpha).unwrap();
            prop_assert_eq!(fam.certificates[0].rank, 2 * m);
        }
    }

    #[test]
    fn sampled_families_respect_box_and_increments(level in 0.1..0.9f64, seed in any::<u64>()) {
        let targets = vec![vec![level; 20], vec![1.0 - level; 20]];
        let fam = sample_generic_u(&targets, 0.05, 0.04, 6, seed, 1000).unwrap();
        for (u, f) in fam.vectors.iter().zip(&targets) {
            prop_assert!(u.iter().zip(f).all(|(a, b)| (a - b).abs() < 0.05));
            prop_assert!(u.windows(2).all(|w| (w[1] - w[0]).abs() < 0.04));
            prop_assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(fam.certificates.iter().all(|c| c.full_row_rank()));
    }

    #[test]
    fn logistic_flow_composes(x in 0.0..=1.0f64, s in -4.0..4.0f64, t in -4.0..4.0f64) {
        let sys = FlowSystem::logistic();
        let x = State::scalar(x);
        let two = sys.evolve(&sys.evolve(&x, s).unwrap(), t).unwrap().coords()[0];
        let one = sys.evolve(&x, s + t).unwrap().coords()[0];
        prop_assert!((two - one).abs() < 1e-8);
        prop_assert!((0.0..=1.0).contains(&one));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotation_bebutov_is_equivariant(x in 0.0..6.28f64, s in -6.0..6.0f64, delta in 0.2..1.0f64) {
        let sys = FlowSystem::rotation(1.0);
        let f = bebutov(&sys, &FixedProfile::new(vec![]).unwrap(), delta, KernelShape::Triangular).unwrap();
        let ts: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
        let shifted: Vec<f64> = ts.iter().map(|t| t + s).collect();
        let a = f.eval(&State::scalar(x), &shifted).unwrap();
        let b = f.eval(&sys.evolve(&State::scalar(x), s).unwrap(), &ts).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-6);
        }
        let line = f.line(&State::scalar(x), 6.0, 0.02).unwrap();
        prop_assert!(lipembed::funcspace::lip_constant(&line) <= f.lip_bound + 1e-9);
    }

    #[test]
    fn avoiding_constants_keeps_postconditions(level in 0.05..0.95f64, delta in 0.04..0.5f64, seed in any::<u64>()) {
        let sys = FlowSystem::logistic();
        let states: Vec<State> = (0..12).map(|i| State::scalar(i as f64 / 11.0)).collect();
        let windows = vec![WindowFn::constant(1.0, 400, level).unwrap(); states.len()];
        let f = MapOnNet::new(states, windows, 0.0).unwrap();
        let p = perturb_avoid_constants(&sys, &f, delta, &PerturbOptions { seed, ..Default::default() }).unwrap();
        for w in &p.map.windows {
            let v = w.values();
            prop_assert_eq!(v[0].to_bits(), level.to_bits());
            prop_assert_eq!(v[v.len() - 1].to_bits(), level.to_bits());
            prop_assert!(v.iter().all(|x| (x - level).abs() < delta && (0.0..=1.0).contains(x)));
            prop_assert!(v.windows(2).all(|p| (p[1] - p[0]).abs() <= w.step()));
            prop_assert!(v.iter().any(|x| *x != level));
        }
    }

    #[test]
    fn configs_round_trip(seed in any::<u64>(), delta0 in 0.001..0.999f64, mesh in 0.01..0.5f64) {
        let mut c = ExperimentConfig::preset("logistic").unwrap();
        c.seed = seed;
        c.delta0 = delta0;
        c.net.mesh = mesh;
        prop_assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
