//! Convolution kernels and the smoothed Bebutov layer
//! `f(x)(t) = ∫ φ(t − s) h₀(T_s x) ds`.

use serde::{Deserialize, Serialize};

use crate::flow::{Extension, FlowSystem, Orbit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    Triangular,
    Smoothstep,
}

/// A symmetric mollifier supported on `[−w/2, w/2]` with unit mass.
///
/// Both shapes have `∫|φ′| = 4/w`, so `w = 4/min(1, δ)` gives
/// `∫|φ′| ≤ min(1, δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub width: f64,
}

impl KernelSpec {
    pub fn for_lipschitz(shape: KernelShape, delta: f64) -> Self {
        Self { shape, width: 4.0 / delta.min(1.0) }
    }

    pub fn half_width(&self) -> f64 {
        self.width / 2.0
    }

    pub fn total_variation(&self) -> f64 {
        4.0 / self.width
    }

    /// Bound on the slope of `φ * g` for any `g` with values in `[0, 1]`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.total_variation() / 2.0
    }

    pub fn eval(&self, u: f64) -> f64 {
        let h = self.half_width();
        let z = 1.0 - u.abs() / h;
        if z <= 0.0 {
            return 0.0;
        }
        match self.shape {
            KernelShape::Triangular => z / h,
            KernelShape::Smoothstep => z * z * (3.0 - 2.0 * z) / h,
        }
    }
}

/// The Bebutov layer: a kernel applied to the continuous extension `h₀`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseSpec {
    pub kernel: KernelSpec,
    pub extension: Extension,
}

/// Evaluator of one base layer along a sampled orbit.
///
/// Uses the normalized discrete convolution
/// `Σ φ(t − t_k) h₀(x_k) / Σ φ(t − t_k)` over the orbit samples, which is
/// exact on constant profiles. Triangular kernels are evaluated in O(1) from
/// prefix sums of `g_k` and `k·g_k`.
pub struct BaseEval {
    kernel: KernelSpec,
    dt: f64,
    k_lo: i64,
    g: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl BaseEval {
    pub fn new(sys: &FlowSystem, spec: &BaseSpec, orbit: &Orbit) -> Self {
        let g: Vec<f64> = orbit.states.iter().map(|s| spec.extension.eval(sys, s)).collect();
        let (mut p0, mut p1) = (Vec::new(), Vec::new());
        if spec.kernel.shape == KernelShape::Triangular {
            p0.reserve(g.len() + 1);
            p1.reserve(g.len() + 1);
            p0.push(0.0);
            p1.push(0.0);
            let (mut s0, mut s1) = (0.0, 0.0);
            for (j, v) in g.iter().enumerate() {
                s0 += v;
                s1 += j as f64 * v;
                p0.push(s0);
                p1.push(s1);
            }
        }
        Self { kernel: spec.kernel, dt: orbit.dt, k_lo: orbit.k_lo, g, p0, p1 }
    }

    /// Local index range `[lo, hi]` of samples strictly inside the support at `t`.
    fn support(&self, t: f64) -> Option<(usize, usize)> {
        let h = self.kernel.half_width();
        let lo = ((t - h) / self.dt).floor() as i64 + 1 - self.k_lo;
        let hi = ((t + h) / self.dt).ceil() as i64 - 1 - self.k_lo;
        if lo < 0 || hi >= self.g.len() as i64 || lo > hi {
            return None;
        }
        Some((lo as usize, hi as usize))
    }

    pub fn eval(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.support(t)?;
        let v = match self.kernel.shape {
            KernelShape::Triangular => self.eval_triangular(t, lo, hi),
            KernelShape::Smoothstep => self.eval_direct(t, lo, hi),
        };
        Some(v.clamp(0.0, 1.0))
    }

    fn eval_direct(&self, t: f64, lo: usize, hi: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for j in lo..=hi {
            let w = self.kernel.eval(t - (j as i64 + self.k_lo) as f64 * self.dt);
            num += w * self.g[j];
            den += w;
        }
        num / den
    }

    fn eval_triangular(&self, t: f64, lo: usize, hi: usize) -> f64 {
        // φ(t − t_j) is affine in j on each side of t: A + B·j left, C − B·j right.
        let h = self.kernel.half_width();
        let dt = self.dt;
        let t0 = self.k_lo as f64 * dt;
        let mid = (((t / dt).floor() as i64 - self.k_lo).clamp(lo as i64 - 1, hi as i64)) as isize;
        let b = dt / (h * h);
        let a_left = (1.0 - (t - t0) / h) / h;
        let c_right = (1.0 + (t - t0) / h) / h;
        let sum = |p: &[f64], from: isize, to: isize| -> f64 {
            if to < from { 0.0 } else { p[(to + 1) as usize] - p[from as usize] }
        };
        let ar = |from: isize, to: isize| -> (f64, f64) {
            if to < from {
                (0.0, 0.0)
            } else {
                let n = (to - from + 1) as f64;
                (n, (from + to) as f64 * n / 2.0)
            }
        };
        let (lo, hi) = (lo as isize, hi as isize);
        let num = a_left * sum(&self.p0, lo, mid) + b * sum(&self.p1, lo, mid) + c_right * sum(&self.p0, mid + 1, hi)
            - b * sum(&self.p1, mid + 1, hi);
        let (n_l, s_l) = ar(lo, mid);
        let (n_r, s_r) = ar(mid + 1, hi);
        let den = a_left * n_l + b * s_l + c_right * n_r - b * s_r;
        num / den
    }

    /// Direct normalized sum; used as an oracle for the prefix-sum path.
    pub fn eval_reference(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.support(t)?;
        Some(self.eval_direct(t, lo, hi).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FixedProfile, State};

    #[test]
    fn unit_mass_and_total_variation() {
        for shape in [KernelShape::Triangular, KernelShape::Smoothstep] {
            let k = KernelSpec::for_lipschitz(shape, 0.5);
            let h = k.half_width();
            let n = 200_000;
            let du = 2.0 * h / n as f64;
            let mass: f64 = (0..=n).map(|i| k.eval(-h + i as f64 * du) * du).sum();
            let tv: f64 = (0..n).map(|i| (k.eval(-h + (i + 1) as f64 * du) - k.eval(-h + i as f64 * du)).abs()).sum();
            assert!((mass - 1.0).abs() < 1e-6, "{shape:?} mass {mass}");
            assert!((tv - 0.5).abs() < 1e-6, "{shape:?} tv {tv}");
        }
    }

    #[test]
    fn prefix_sums_match_direct_summation() {
        let sys = FlowSystem::logistic();
        let ext = Extension::new(FixedProfile::new(vec![(State::scalar(0.0), 0.0), (State::scalar(1.0), 1.0)]).unwrap(), &sys);
        let spec = BaseSpec { kernel: KernelSpec::for_lipschitz(KernelShape::Triangular, 0.5), extension: ext };
        let orbit = Orbit::compute(&sys, &State::scalar(0.3), -20.0, 20.0).unwrap();
        let base = BaseEval::new(&sys, &spec, &orbit);
        for i in 0..200 {
            let t = -14.0 + i as f64 * 0.1403;
            let fast = base.eval(t).unwrap();
            let slow = base.eval_reference(t).unwrap();
            assert!((fast - slow).abs() < 1e-12, "t = {t}: {fast} vs {slow}");
        }
        assert!(base.eval(19.0).is_none());
    }
}
