//! Compact metric flows `(X, d, T)`, sample nets, fixed points and the
//! constructive extension of the fixed-point embedding.

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default fixed integrator step (time units).
pub const DEFAULT_DT: f64 = 1e-3;
/// Default fixedness tolerance.
pub const DEFAULT_TOL_FIX: f64 = 1e-6;
/// Largest admissible `|t|` for a single `evolve` call.
pub const DEFAULT_HORIZON: f64 = 1000.0;
/// Largest state dimension handled by the built-in flows.
pub const MAX_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("time {t} exceeds the configured horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown flow `{0}`")]
    UnknownFlow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// A point of the state space. Coordinates beyond the system dimension are zero.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct State {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl State {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            !coords.is_empty() && coords.len() <= MAX_DIM,
            "state dimension must be in 1..={MAX_DIM}"
        );
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Self { coords: c, dim: coords.len() as u8 }
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(&[x])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Bit pattern key for caches.
    pub fn key(&self) -> [u64; MAX_DIM] {
        let mut k = [0u64; MAX_DIM];
        for (slot, c) in k.iter_mut().zip(self.coords.iter()) {
            *slot = c.to_bits();
        }
        k
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = *self;
        for c in out.coords.iter_mut().take(self.dim()) {
            *c = f(*c);
        }
        out
    }

    fn axpy(&self, h: f64, v: &State) -> Self {
        let mut out = *self;
        for i in 0..self.dim() {
            out.coords[i] += h * v.coords[i];
        }
        out
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl From<State> for Vec<f64> {
    fn from(s: State) -> Self {
        s.coords().to_vec()
    }
}

impl TryFrom<Vec<f64>> for State {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(format!("state must have 1..={MAX_DIM} coordinates"));
        }
        Ok(State::new(&v))
    }
}

/// Distance on the state space.
pub trait Metric {
    fn dist(&self, x: &State, y: &State) -> f64;
}

/// Euclidean distance, used for nets that are not attached to a flow.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Metric for Euclidean {
    fn dist(&self, x: &State, y: &State) -> f64 {
        x.coords().iter().zip(y.coords()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// The built-in flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FlowKind {
    /// `θ ↦ θ + ωt` on the circle `ℝ/2πℤ` with arc-length metric.
    Rotation { omega: f64 },
    /// `ẋ = x(1 − x)` on `[0, 1]`; equilibria `0` and `1`.
    Logistic,
    /// Linear flow `θ ↦ θ + ωt` on the flat torus.
    Torus { omega: [f64; 2] },
    /// Gradient flow `θ̇ = sin θ` of the height function on the unit circle
    /// embedded in the plane; equilibria `(1, 0)` and `(−1, 0)`.
    CircleGradient,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Rotation { .. } => "rotation",
            FlowKind::Logistic => "logistic",
            FlowKind::Torus { .. } => "torus",
            FlowKind::CircleGradient => "circle_gradient",
        }
    }
}

/// A compact metric flow with a fixed-step evolution rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSystem {
    pub kind: FlowKind,
    /// Integrator step (time units).
    pub dt: f64,
    pub horizon: f64,
    /// Slack allowed when checking that states stay in the declared domain.
    pub domain_tol: f64,
}

impl FlowSystem {
    pub fn new(kind: FlowKind) -> Self {
        Self { kind, dt: DEFAULT_DT, horizon: DEFAULT_HORIZON, domain_tol: 1e-7 }
    }

    pub fn rotation(omega: f64) -> Self {
        Self::new(FlowKind::Rotation { omega })
    }

    pub fn logistic() -> Self {
        Self::new(FlowKind::Logistic)
    }

    pub fn torus(omega: [f64; 2]) -> Self {
        Self::new(FlowKind::Torus { omega })
    }

    pub fn circle_gradient() -> Self {
        Self::new(FlowKind::CircleGradient)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Registry lookup by name; `params` holds the rate(s) for rotations and tori.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self, FlowError> {
        let kind = match name {
            "rotation" => FlowKind::Rotation { omega: params.first().copied().unwrap_or(1.0) },
            "logistic" => FlowKind::Logistic,
            "torus" => {
                let w0 = params.first().copied().unwrap_or(1.0);
                let w1 = params.get(1).copied().unwrap_or(2f64.sqrt());
                FlowKind::Torus { omega: [w0, w1] }
            }
            "circle_gradient" => FlowKind::CircleGradient,
            other => return Err(FlowError::UnknownFlow(other.to_string())),
        };
        let sys = Self::new(kind);
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(FlowError::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        match &self.kind {
            FlowKind::Rotation { omega } if *omega == 0.0 || !omega.is_finite() => {
                Err(FlowError::InvalidParameter("rotation rate must be nonzero".into()))
            }
            FlowKind::Torus { omega } if omega.iter().all(|w| *w == 0.0) => {
                Err(FlowError::InvalidParameter("torus rates must not both vanish".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FlowKind::Rotation { .. } | FlowKind::Logistic => 1,
            FlowKind::Torus { .. } | FlowKind::CircleGradient => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Upper bound on `d(T_t x, x)/|t|` over the domain.
    pub fn max_speed(&self) -> f64 {
        match &self.kind {
            FlowKind::Rotation { omega } => omega.abs(),
            FlowKind::Logistic => 0.25,
            FlowKind::Torus { omega } => (omega[0] * omega[0] + omega[1] * omega[1]).sqrt(),
            FlowKind::CircleGradient => 1.0,
        }
    }

    /// Whether `evolve` uses a closed form rather than RK4.
    pub fn has_closed_form_evolution(&self) -> bool {
        matches!(self.kind, FlowKind::Rotation { .. } | FlowKind::Torus { .. })
    }

    fn vector_field(&self, x: &State) -> State {
        match &self.kind {
            FlowKind::Logistic => {
                let v = x.coords[0];
                State::scalar(v * (1.0 - v))
            }
            FlowKind::CircleGradient => {
                let (u, w) = (x.coords[0], x.coords[1]);
                State::new(&[-w * w, u * w])
            }
            FlowKind::Rotation { omega } => State::scalar(*omega),
            FlowKind::Torus { omega } => State::new(omega),
        }
    }

    /// One classical RK4 step of size `h` (negative `h` integrates backward).
    pub fn rk4_step(&self, x: &State, h: f64) -> State {
        let k1 = self.vector_field(x);
        let k2 = self.vector_field(&x.axpy(h / 2.0, &k1));
        let k3 = self.vector_field(&x.axpy(h / 2.0, &k2));
        let k4 = self.vector_field(&x.axpy(h, &k3));
        let mut out = *x;
        for i in 0..x.dim() {
            out.coords[i] += h / 6.0 * (k1.coords[i] + 2.0 * k2.coords[i] + 2.0 * k3.coords[i] + k4.coords[i]);
        }
        self.normalize(out)
    }

    fn normalize(&self, x: State) -> State {
        match self.kind {
            FlowKind::Rotation { .. } | FlowKind::Torus { .. } => x.map(|c| c.rem_euclid(TAU)),
            _ => x,
        }
    }

    /// Closed-form trajectory, when known. Used directly by `evolve` for the
    /// linear flows and as a reference oracle for the integrated ones.
    pub fn reference(&self, x: &State, t: f64) -> Option<State> {
        match &self.kind {
            FlowKind::Rotation { omega } => Some(State::scalar((x.coords[0] + omega * t).rem_euclid(TAU))),
            FlowKind::Torus { omega } => Some(State::new(&[
                (x.coords[0] + omega[0] * t).rem_euclid(TAU),
                (x.coords[1] + omega[1] * t).rem_euclid(TAU),
            ])),
            FlowKind::Logistic => {
                let x0 = x.coords[0];
                let e = t.exp();
                Some(State::scalar(x0 * e / (1.0 - x0 + x0 * e)))
            }
            FlowKind::CircleGradient => {
                let theta = x.coords[1].atan2(x.coords[0]);
                let half = (theta / 2.0).tan();
                let th = if (theta.abs() - PI).abs() < 1e-15 { theta } else { 2.0 * (half * t.exp()).atan() };
                Some(State::new(&[th.cos(), th.sin()]))
            }
        }
    }

    /// `T_t x`: closed form for linear flows, fixed-step RK4 otherwise.
    pub fn evolve(&self, x: &State, t: f64) -> Result<State, FlowError> {
        if !t.is_finite() || t.abs() > self.horizon {
            return Err(FlowError::HorizonExceeded { t, horizon: self.horizon });
        }
        if t == 0.0 {
            return Ok(*x);
        }
        let out = if self.has_closed_form_evolution() {
            self.reference(x, t).expect("linear flows have closed forms")
        } else {
            let steps = (t.abs() / self.dt).floor() as usize;
            let h = self.dt.copysign(t);
            let mut y = *x;
            for _ in 0..steps {
                y = self.rk4_step(&y, h);
            }
            let rest = t - steps as f64 * h;
            if rest != 0.0 {
                y = self.rk4_step(&y, rest);
            }
            y
        };
        self.check_domain(&out)?;
        Ok(out)
    }

    /// Integrity check that a state lies in the declared compact domain.
    pub fn check_domain(&self, x: &State) -> Result<(), FlowError> {
        let tol = self.domain_tol;
        let ok = match self.kind {
            FlowKind::Rotation { .. } | FlowKind::Torus { .. } => x.coords().iter().all(|c| c.is_finite()),
            FlowKind::Logistic => (-tol..=1.0 + tol).contains(&x.coords[0]),
            FlowKind::CircleGradient => {
                let r = x.coords[0].hypot(x.coords[1]);
                (r - 1.0).abs() <= tol.max(1e-6)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(FlowError::Integrity(format!("state {x:?} escaped the declared domain")))
        }
    }

    /// Profile used as the continuous extension when the fixed set is empty.
    pub fn default_profile(&self, x: &State) -> f64 {
        match self.kind {
            FlowKind::Rotation { .. } | FlowKind::Torus { .. } => (1.0 + x.coords[0].cos()) / 2.0,
            FlowKind::Logistic => x.coords[0].clamp(0.0, 1.0),
            FlowKind::CircleGradient => ((x.coords[0] + 1.0) / 2.0).clamp(0.0, 1.0),
        }
    }

    /// Uniformly random state of the domain.
    pub fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self.kind {
            FlowKind::Rotation { .. } => State::scalar(rng.gen_range(0.0..TAU)),
            FlowKind::Logistic => State::scalar(rng.gen_range(0.0..=1.0)),
            FlowKind::Torus { .. } => State::new(&[rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)]),
            FlowKind::CircleGradient => {
                let th: f64 = rng.gen_range(-PI..PI);
                State::new(&[th.cos(), th.sin()])
            }
        }
    }

    /// Regular net with spacing `mesh` (arc length on circles, coordinate
    /// spacing on the interval and the torus).
    pub fn regular_net(&self, mesh: f64) -> Result<SampleNet, FlowError> {
        if !(mesh > 0.0) {
            return Err(FlowError::InvalidParameter("mesh must be positive".into()));
        }
        let points = match self.kind {
            FlowKind::Logistic => {
                let n = (1.0 / mesh).round().max(1.0) as usize;
                (0..=n).map(|i| State::scalar(i as f64 / n as f64)).collect()
            }
            FlowKind::Rotation { .. } => {
                let n = (TAU / mesh).ceil() as usize;
                (0..n).map(|i| State::scalar(i as f64 * TAU / n as f64)).collect()
            }
            FlowKind::CircleGradient => {
                let n = (TAU / mesh).ceil() as usize;
                (0..n)
                    .map(|i| {
                        let th = -PI + i as f64 * TAU / n as f64;
                        State::new(&[th.cos(), th.sin()])
                    })
                    .collect()
            }
            FlowKind::Torus { .. } => {
                let n = (TAU / mesh).ceil() as usize;
                let s = TAU / n as f64;
                (0..n)
                    .flat_map(|i| (0..n).map(move |j| State::new(&[i as f64 * s, j as f64 * s])))
                    .collect()
            }
        };
        SampleNet::new(points, mesh, self)
    }
}

impl Metric for FlowSystem {
    fn dist(&self, x: &State, y: &State) -> f64 {
        match self.kind {
            FlowKind::Rotation { .. } => arc(x.coords[0], y.coords[0]),
            FlowKind::Torus { .. } => arc(x.coords[0], y.coords[0]).hypot(arc(x.coords[1], y.coords[1])),
            FlowKind::Logistic | FlowKind::CircleGradient => Euclidean.dist(x, y),
        }
    }
}

/// Finite stand-in for the compact state space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleNet {
    pub points: Vec<State>,
    /// Every domain point lies within `mesh` of some net point.
    pub mesh: f64,
}

impl SampleNet {
    pub fn new<M: Metric + ?Sized>(points: Vec<State>, mesh: f64, metric: &M) -> Result<Self, FlowError> {
        if points.is_empty() {
            return Err(FlowError::InvalidParameter("sample net is empty".into()));
        }
        if !(mesh > 0.0) {
            return Err(FlowError::InvalidParameter("net mesh must be positive".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if metric.dist(&points[i], &points[j]) <= 0.0 {
                    return Err(FlowError::InvalidParameter(format!("net points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { points, mesh })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let dim = self.points[0].dim();
        let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        wr.write_record(&header)?;
        for p in &self.points {
            wr.write_record(p.coords().iter().map(|c| format!("{c:.17e}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Probe times used to decide fixedness: 32 equispaced times in `[−8, 8]`.
pub fn fixed_probe_times() -> Vec<f64> {
    (0..32).map(|i| -8.0 + 16.0 * i as f64 / 31.0).collect()
}

/// Net points whose orbits stay within `tol_fix` over the probe grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedSet {
    pub points: Vec<State>,
    pub tol_fix: f64,
}

impl FixedSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `x` to the nearest flagged point (`∞` when empty).
    pub fn dist_to<M: Metric + ?Sized>(&self, metric: &M, x: &State) -> f64 {
        self.points.iter().map(|y| metric.dist(x, y)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains<M: Metric + ?Sized>(&self, metric: &M, x: &State) -> bool {
        self.dist_to(metric, x) <= self.tol_fix
    }
}

/// Largest displacement of `x` over the fixedness probe grid.
pub fn max_displacement(sys: &FlowSystem, x: &State) -> Result<f64, FlowError> {
    let mut worst = 0.0f64;
    for t in fixed_probe_times() {
        let y = sys.evolve(x, t)?;
        worst = worst.max(sys.dist(&y, x));
    }
    Ok(worst)
}

pub fn detect_fixed(sys: &FlowSystem, net: &SampleNet, tol_fix: f64) -> Result<FixedSet, FlowError> {
    let mut points = Vec::new();
    for x in &net.points {
        if max_displacement(sys, x)? <= tol_fix {
            points.push(*x);
        }
    }
    Ok(FixedSet { points, tol_fix })
}

/// Prescribed values of the fixed-point embedding `h : F → [0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedProfile {
    pub pairs: Vec<(State, f64)>,
}

impl FixedProfile {
    pub fn new(pairs: Vec<(State, f64)>) -> Result<Self, FlowError> {
        for (y, v) in &pairs {
            if !(0.0..=1.0).contains(v) {
                return Err(FlowError::Contract(format!("h({y:?}) = {v} outside [0,1]")));
            }
        }
        Ok(Self { pairs })
    }

    /// Lipschitz constant of `h` on its finite domain (0 for at most one point).
    pub fn lipschitz<M: Metric + ?Sized>(&self, metric: &M) -> f64 {
        let mut k = 0.0f64;
        for i in 0..self.pairs.len() {
            for j in 0..i {
                let d = metric.dist(&self.pairs[i].0, &self.pairs[j].0);
                if d > 0.0 {
                    k = k.max((self.pairs[i].1 - self.pairs[j].1).abs() / d);
                }
            }
        }
        k
    }

    /// Whether distinct points of `F` receive distinct values.
    pub fn is_injective(&self) -> bool {
        for i in 0..self.pairs.len() {
            for j in 0..i {
                if self.pairs[i].1 == self.pairs[j].1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Continuous extension `h₀ : X → [0, 1]` of `h`, built from the McShane
/// formula `h₀(x) = clamp(min_y h(y) + K·d(x, y))`. Falls back to the flow's
/// default profile when `F` is empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Extension {
    pub profile: FixedProfile,
    pub lipschitz: f64,
}

impl Extension {
    pub fn new<M: Metric + ?Sized>(profile: FixedProfile, metric: &M) -> Self {
        let lipschitz = profile.lipschitz(metric);
        Self { profile, lipschitz }
    }

    pub fn eval(&self, sys: &FlowSystem, x: &State) -> f64 {
        if self.profile.pairs.is_empty() {
            return sys.default_profile(x);
        }
        let mut best = f64::INFINITY;
        for (y, v) in &self.profile.pairs {
            let d = sys.dist(x, y);
            if d == 0.0 {
                return *v;
            }
            best = best.min(v + self.lipschitz * d);
        }
        best.clamp(0.0, 1.0)
    }
}

/// One-shot evaluation of the extension at `x`.
pub fn mcshane_extend(h: &FixedProfile, sys: &FlowSystem, x: &State) -> Result<f64, FlowError> {
    let checked = FixedProfile::new(h.pairs.clone())?;
    Ok(Extension::new(checked, sys).eval(sys, x))
}

/// States of one orbit sampled at `k·dt`, `k_lo ≤ k ≤ k_hi`.
#[derive(Debug, Clone)]
pub struct Orbit {
    pub origin: State,
    pub dt: f64,
    pub k_lo: i64,
    pub states: Vec<State>,
}

impl Orbit {
    /// Samples the orbit of `x` on `[t_lo, t_hi]` (widened to grid points).
    pub fn compute(sys: &FlowSystem, x: &State, t_lo: f64, t_hi: f64) -> Result<Self, FlowError> {
        let dt = sys.dt;
        let k_lo = (t_lo.min(0.0) / dt).floor() as i64;
        let k_hi = (t_hi.max(0.0) / dt).ceil() as i64;
        if (k_lo as f64 * dt).abs() > sys.horizon || (k_hi as f64 * dt).abs() > sys.horizon {
            return Err(FlowError::HorizonExceeded { t: t_lo.abs().max(t_hi.abs()), horizon: sys.horizon });
        }
        let len = (k_hi - k_lo + 1) as usize;
        let zero = (-k_lo) as usize;
        let mut states = vec![*x; len];
        if sys.has_closed_form_evolution() {
            for (i, s) in states.iter_mut().enumerate() {
                let k = i as i64 + k_lo;
                *s = sys.reference(x, k as f64 * dt).expect("closed form");
            }
        } else {
            for i in zero + 1..len {
                states[i] = sys.rk4_step(&states[i - 1], dt);
            }
            for i in (0..zero).rev() {
                states[i] = sys.rk4_step(&states[i + 1], -dt);
            }
            for s in [states[0], states[len - 1]] {
                sys.check_domain(&s)?;
            }
        }
        Ok(Self { origin: *x, dt, k_lo, states })
    }

    pub fn time(&self, idx: usize) -> f64 {
        (idx as i64 + self.k_lo) as f64 * self.dt
    }

    pub fn t_min(&self) -> f64 {
        self.time(0)
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.states.len() - 1)
    }

    /// Index of the grid sample nearest to `t`, clamped to the stored range.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = (t / self.dt).round() as i64 - self.k_lo;
        k.clamp(0, self.states.len() as i64 - 1) as usize
    }

    /// `T_t x` from the nearest stored sample plus one partial step.
    pub fn state_at(&self, sys: &FlowSystem, t: f64) -> State {
        if sys.has_closed_form_evolution() {
            return sys.reference(&self.origin, t).expect("closed form");
        }
        let i = self.nearest_index(t);
        let rest = t - self.time(i);
        if rest == 0.0 {
            self.states[i]
        } else if rest.abs() <= self.dt {
            sys.rk4_step(&self.states[i], rest)
        } else {
            sys.evolve(&self.states[i], rest).unwrap_or(self.states[i])
        }
    }
}
