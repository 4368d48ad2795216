//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lipembed::embed::{bebutov, EquivariantMap, KernelShape};
use lipembed::flow::{detect_fixed, FixedProfile, FixedSet, FlowSystem, SampleNet, State, DEFAULT_TOL_FIX};

pub struct Logistic {
    pub sys: FlowSystem,
    pub h: FixedProfile,
    pub net: SampleNet,
    pub fixed: FixedSet,
}

pub fn logistic(mesh: f64) -> Logistic {
    let sys = FlowSystem::logistic();
    let net = sys.regular_net(mesh).expect("regular net");
    let fixed = detect_fixed(&sys, &net, DEFAULT_TOL_FIX).expect("fixed set");
    let h = FixedProfile::new(vec![(State::scalar(0.0), 0.0), (State::scalar(1.0), 1.0)]).expect("profile");
    Logistic { sys, h, net, fixed }
}

pub fn logistic_bebutov(l: &Logistic) -> EquivariantMap {
    bebutov(&l.sys, &l.h, 1.0, KernelShape::Triangular).expect("bebutov map")
}

/// A seeded random walk in `[0, 1]` with steps below `0.005`.
pub fn wiggle(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = 0.5f64;
    (0..n)
        .map(|_| {
            v = (v + rng.gen_range(-0.005..0.005)).clamp(0.0, 1.0);
            v
        })
        .collect()
}
