//! End-to-end acceptance run. Every criterion is measured with an oracle that
//! lives in this file (modular exact rank, SVD, naive distance sums, an
//! exhaustive shift scan) rather than with the library's own checkers.
//! Prints one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::f64::consts::{E, TAU};
use std::process::ExitCode;
use std::time::Instant;

use lipembed::embed::{bebutov, KernelShape};
use lipembed::experiment::{self, ExperimentConfig, Status};
use lipembed::flow::{FixedProfile, FlowSystem, Metric, State};
use lipembed::funcspace::{cr_dist, GridFn, LineFn, WindowFn};
use lipembed::genvec::{sample_generic_u, witness_e_du, witness_shifted};
use lipembed::perturb::{perturb_avoid_constants, perturb_separating, MapOnNet, PerturbOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
    /// Deterministic record of everything the criterion computed.
    body: String,
}

fn outcome(passed: bool, detail: String, body: String) -> Outcome {
    Outcome { passed, detail, body }
}

// ---------- oracles ----------

const P: u128 = (1 << 61) - 1;

fn inv_mod(a: u128) -> u128 {
    let (mut r, mut b, mut e) = (1u128, a % P, P - 2);
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % P;
        }
        b = b * b % P;
        e >>= 1;
    }
    r
}

/// Rank over GF(p). For integer matrices this is a lower bound on the rank
/// over Q, so `rank_mod_p == rows` proves full row rank.
fn rank_mod_p(rows: &[Vec<f64>]) -> usize {
    let mut a: Vec<Vec<u128>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| {
                    assert!(v.fract() == 0.0, "non-integer entry {v}");
                    (*v as i128).rem_euclid(P as i128) as u128
                })
                .collect()
        })
        .collect();
    let cols = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..a.len()).find(|&i| a[i][c] != 0) else { continue };
        a.swap(rank, p);
        let inv = inv_mod(a[rank][c]);
        for i in 0..a.len() {
            if i != rank && a[i][c] != 0 {
                let f = a[i][c] * inv % P;
                for j in 0..cols {
                    a[i][j] = (a[i][j] + P - f * a[rank][j] % P) % P;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Numerical rank and `σ_min / σ_max` of the max-norm equilibrated rows.
fn svd_rank(rows: &[Vec<f64>]) -> (usize, f64) {
    let r = rows.len();
    let c = rows[0].len();
    let m = DMatrix::from_fn(r, c, |i, j| {
        let s = rows[i].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        rows[i][j] / s
    });
    let sv = m.singular_values();
    let max = sv.max();
    let tol = max * (r.max(c) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|s| **s > tol).count();
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (rank, min / max)
}

/// `Σ_{n=1}^{n_max} 2^{-n} sup_{|t| ≤ n} |φ − ψ|` straight from the definition.
fn naive_cr(a: &[f64], b: &[f64], half_width: f64, step: f64, n_max: usize) -> f64 {
    (1..=n_max)
        .map(|n| {
            let sup = a
                .iter()
                .zip(b)
                .enumerate()
                .filter(|(i, _)| (-half_width + *i as f64 * step).abs() <= n as f64 + 1e-9)
                .map(|(_, (x, y))| (x - y).abs())
                .fold(0.0, f64::max);
            sup / 2f64.powi(n as i32)
        })
        .sum()
}

fn slope(values: &[f64], step: f64) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs() / step).fold(0.0, f64::max)
}

fn osc(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn logistic_closed_form(x: f64, t: f64) -> f64 {
    x * t.exp() / (1.0 - x + x * t.exp())
}

fn logistic_h() -> FixedProfile {
    FixedProfile::new(vec![(State::scalar(0.0), 0.0), (State::scalar(1.0), 1.0)]).unwrap()
}

fn constant_net(n: usize) -> (FlowSystem, MapOnNet) {
    let states: Vec<State> = (0..n).map(|i| State::scalar(i as f64 / (n - 1) as f64)).collect();
    let windows = vec![WindowFn::constant(1.0, 400, 0.5).unwrap(); n];
    (FlowSystem::logistic(), MapOnNet::new(states, windows, 0.0).unwrap())
}

// ---------- criteria ----------

fn witnesses() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for m in 1..=6 {
        let l = m + 1;
        let fam = witness_e_du(l, m).unwrap();
        let mut rows = vec![vec![1.0; l]];
        rows.extend(fam.vectors.iter().map(|u| (0..l).map(|j| u[j + 1] - u[j]).collect::<Vec<_>>()));
        let r = rank_mod_p(&rows);
        checked += 1;
        if r != m + 1 || rows.len() != m + 1 || fam.certificates[0].rank != m + 1 {
            bad.push(format!("e_du l={l} m={m}: rank {r}"));
        }
    }
    for (n, l, m) in [(5, 4, 2), (9, 6, 3), (12, 8, 4)] {
        for alpha in 2..=n - l + 1 {
            let fam = witness_shifted(n, l, m, alpha).unwrap();
            assert_eq!(fam.vectors.len(), m);
            let rows: Vec<Vec<f64>> = fam
                .vectors
                .iter()
                .flat_map(|u| [u[..l].to_vec(), u[alpha - 1..alpha - 1 + l].to_vec()])
                .collect();
            let r = rank_mod_p(&rows);
            checked += 1;
            if r != 2 * m || fam.certificates[0].rank != 2 * m {
                bad.push(format!("shifted n={n} l={l} m={m} alpha={alpha}: rank {r}"));
            }
        }
    }
    let detail = if bad.is_empty() { format!("{checked} families at exact full rank") } else { bad.join("; ") };
    outcome(bad.is_empty(), detail.clone(), detail)
}

fn sampled_family() -> Outcome {
    let (m, n, l) = (2, 40, 8);
    let (box_r, inc) = (0.025, 0.05);
    let f_vals: Vec<Vec<f64>> = vec![vec![0.5; n], (0..n).map(|i| 0.3 + 0.01 * i as f64).collect()];
    let fam = sample_generic_u(&f_vals, box_r, inc, l, 42, 1000).unwrap();
    let u = &fam.vectors;
    assert_eq!(u.len(), m);
    let in_box = u.iter().zip(&f_vals).all(|(v, f)| v.iter().zip(f).all(|(a, b)| (a - b).abs() < box_r));
    let small_steps = u.iter().all(|v| v.windows(2).all(|w| (w[1] - w[0]).abs() < inc));
    let mut rows = vec![vec![1.0; l]];
    rows.extend(u.iter().map(|v| (0..l).map(|j| v[j + 1] - v[j]).collect::<Vec<_>>()));
    let (r3, mut margin) = svd_rank(&rows);
    let mut shifts_ok = true;
    let mut shifts = 0;
    for eps in 1..=n - l {
        let rows: Vec<Vec<f64>> = u.iter().flat_map(|v| [v[..l].to_vec(), v[eps..eps + l].to_vec()]).collect();
        let (r, g) = svd_rank(&rows);
        shifts += 1;
        shifts_ok &= r == 2 * m;
        margin = margin.min(g);
    }
    let lib_margin = fam.certificates.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    let passed = in_box && small_steps && r3 == m + 1 && shifts_ok && margin >= 1e-6 && lib_margin >= 1e-6;
    let detail = format!(
        "box={in_box} increments={small_steps} e/Du rank={r3} shifts={shifts} all full={shifts_ok} \
         svd margin={margin:.3e} pivot margin={lib_margin:.3e}"
    );
    outcome(passed, detail.clone(), format!("{detail}\n{}", fam.to_json()))
}

fn avoid_constants() -> Outcome {
    let (_, f) = constant_net(200);
    let p = perturb_avoid_constants(&FlowSystem::logistic(), &f, 0.1, &PerturbOptions { seed: 42, ..Default::default() })
        .unwrap();
    let w = &p.map.windows;
    let min_osc = w.iter().map(|g| osc(g.values())).fold(f64::INFINITY, f64::min);
    let sup = w.iter().flat_map(|g| g.values().iter().map(|v| (v - 0.5).abs())).fold(0.0, f64::max);
    let ends = w.iter().all(|g| {
        let v = g.values();
        v[0].to_bits() == 0.5f64.to_bits() && v[v.len() - 1].to_bits() == 0.5f64.to_bits()
    });
    let lip = w.iter().map(|g| slope(g.values(), g.step())).fold(0.0, f64::max);
    let passed = w.len() == 200 && min_osc > 0.0 && sup < 0.1 && ends && lip <= 1.0;
    let detail = format!("min oscillation={min_osc:.3e} sup distance={sup:.3e} endpoints bitwise={ends} slope={lip:.4}");
    let mut body = detail.clone();
    for g in w {
        body.push_str(&format!("\n{:?}", g.values()));
    }
    outcome(passed, detail, body)
}

fn separating() -> Outcome {
    let (sys, f) = constant_net(200);
    let delta = 0.1;
    let (p, _) = perturb_separating(&sys, &f, delta, &PerturbOptions { seed: 42, ..Default::default() }).unwrap();
    let g: Vec<&[f64]> = p.map.windows.iter().map(|w| w.values()).collect();
    let len = g[0].len();
    let half = (len - 1) / 2;
    let tol = 1e-9;
    let mut violations = Vec::new();
    let mut min_other = f64::INFINITY;
    let mut exempt = 0usize;
    for i in 0..g.len() {
        for j in 0..g.len() {
            let d = sys.dist(&p.map.states[i], &p.map.states[j]);
            for k in 0..=half {
                let allowed = k <= 1 && d < delta;
                let cap = if allowed { tol } else { min_other.max(tol) };
                let mut mm = 0.0f64;
                for t in 0..len - k {
                    mm = mm.max((g[i][t + k] - g[j][t]).abs());
                    if mm > cap {
                        break;
                    }
                }
                if mm <= tol {
                    if allowed {
                        exempt += 1;
                    } else {
                        violations.push((i, j, k));
                    }
                } else if !allowed {
                    min_other = min_other.min(mm);
                }
            }
        }
    }
    let sup = g.iter().flat_map(|v| v.iter().map(|x| (x - 0.5).abs())).fold(0.0, f64::max);
    let passed = violations.is_empty() && sup < delta;
    let detail = format!(
        "{} pairs x {} shifts: violations={} exempt matches={exempt} min non-exempt mismatch={min_other:.3e} sup distance={sup:.3e}{}",
        g.len() * g.len(),
        half + 1,
        violations.len(),
        violations.first().map_or(String::new(), |v| format!(" first=(i={}, j={}, shift={})", v.0, v.1, v.2))
    );
    let mut body = detail.clone();
    for v in &g {
        body.push_str(&format!("\n{v:?}"));
    }
    outcome(passed, detail, body)
}

fn bebutov_map() -> Outcome {
    let rot = FlowSystem::rotation(1.0);
    let f = bebutov(&rot, &FixedProfile::new(vec![]).unwrap(), 0.5, KernelShape::Triangular).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ts: Vec<f64> = (0..=40).map(|i| -4.0 + 0.2 * i as f64).collect();
    let (mut lip, mut equiv) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(0.0..TAU);
        let s: f64 = rng.gen_range(-5.0..5.0);
        let y = State::scalar((x + s).rem_euclid(TAU));
        let shifted: Vec<f64> = ts.iter().map(|t| t + s).collect();
        let a = f.eval(&State::scalar(x), &shifted).unwrap();
        let b = f.eval(&y, &ts).unwrap();
        equiv = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(equiv, f64::max);
        let line = f.line(&State::scalar(x), 10.0, 0.01).unwrap();
        lip = lip.max(slope(line.values(), 0.01));
    }
    let log = bebutov(&FlowSystem::logistic(), &logistic_h(), 0.5, KernelShape::Triangular).unwrap();
    let mut fixed = 0.0f64;
    for (x, level) in [(0.0, 0.0), (1.0, 1.0)] {
        let line = log.line(&State::scalar(x), 20.0, 0.05).unwrap();
        fixed = line.values().iter().map(|v| (v - level).abs()).fold(fixed, f64::max);
    }
    let passed = lip <= 0.5 + 1e-3 && equiv <= 1e-6 && fixed <= 1e-8;
    let detail = format!("rotation slope={lip:.6} equivariance={equiv:.3e} logistic |f(F) - h|={fixed:.3e}");
    outcome(passed, detail.clone(), format!("{detail} {lip:?} {equiv:?} {fixed:?}"))
}

fn closed_form_oracles() -> Outcome {
    let sys = FlowSystem::logistic();
    let got = sys.evolve(&State::scalar(0.5), 1.0).unwrap().coords()[0];
    let want = E / (1.0 + E);
    assert!((want - logistic_closed_form(0.5, 1.0)).abs() < 1e-15);
    let flow_err = (got - want).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (hw, step) = (40.0, 0.05);
    let n = (2.0 * hw / step) as usize + 1;
    let walk = |rng: &mut ChaCha8Rng| {
        let mut v = vec![rng.gen_range(0.0..1.0)];
        for _ in 1..n {
            let prev: f64 = *v.last().unwrap();
            v.push((prev + rng.gen_range(-step..step)).clamp(0.0, 1.0));
        }
        LineFn::new(hw, step, v).unwrap()
    };
    let (mut trunc, mut naive) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = walk(&mut rng);
        let b = walk(&mut rng);
        let d20 = cr_dist(&a, &b, 20).unwrap();
        let d40 = cr_dist(&a, &b, 40).unwrap();
        trunc = trunc.max((d20 - d40).abs());
        naive = naive.max((d20 - naive_cr(a.values(), b.values(), hw, step, 20)).abs());
    }
    let passed = flow_err <= 1e-8 && trunc <= 2f64.powi(-20) && naive <= 1e-12;
    let detail = format!("evolve error={flow_err:.3e} truncation gap={trunc:.3e} vs 2^-20 naive sum gap={naive:.3e}");
    outcome(passed, detail.clone(), format!("{detail} {got:?} {trunc:?} {naive:?}"))
}

fn pipeline() -> Outcome {
    let config = ExperimentConfig::preset("logistic").unwrap();
    assert_eq!(config.net.mesh, 0.05);
    assert_eq!(config.delta0, 0.1);
    let run = experiment::run(&config).unwrap();
    let Some(out) = run.pipeline.as_ref() else {
        let detail = run.report.failures().map(|c| c.line()).collect::<Vec<_>>().join("; ");
        return outcome(false, format!("construction failed: {detail}"), run.report.body_json());
    };
    let s = &out.samples;
    let sys = FlowSystem::logistic();

    let mut lip = s.lines.iter().map(|v| slope(v, s.line_step)).fold(0.0, f64::max);
    lip = s.windows.iter().map(|w| slope(&w.values, w.step)).fold(lip, f64::max);

    let mut equiv = s
        .equivariance
        .iter()
        .flat_map(|e| e.direct.iter().zip(&e.shifted).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ts: Vec<f64> = (0..=40).map(|i| -5.0 + 0.25 * i as f64).collect();
    for _ in 0..20 {
        let x: f64 = rng.gen_range(0.02..0.98);
        let sh: f64 = rng.gen_range(-3.0..3.0);
        let y = State::scalar(logistic_closed_form(x, sh));
        let shifted: Vec<f64> = ts.iter().map(|t| t + sh).collect();
        let a = out.map.eval(&State::scalar(x), &shifted).unwrap();
        let b = out.map.eval(&y, &ts).unwrap();
        equiv = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(equiv, f64::max);
    }

    let mut fixed = 0.0f64;
    let mut fixed_seen = 0;
    for (i, p) in s.points.iter().enumerate() {
        let level = match p.coords()[0] {
            x if x == 0.0 => 0.0,
            x if x == 1.0 => 1.0,
            _ => continue,
        };
        fixed_seen += 1;
        fixed = s.lines[i].iter().map(|v| (v - level).abs()).fold(fixed, f64::max);
    }

    let hw = s.n_max as f64;
    let far = 4.0 * s.mesh;
    let mut inj = f64::INFINITY;
    let mut far_pairs = 0;
    for i in 0..s.points.len() {
        for j in 0..i {
            if sys.dist(&s.points[i], &s.points[j]) > far + 1e-12 {
                far_pairs += 1;
                inj = inj.min(naive_cr(&s.lines[i], &s.lines[j], hw, s.line_step, s.n_max));
            }
        }
    }

    let certs = s.certificate_margins().unwrap();
    let min_cert = certs.iter().copied().fold(f64::INFINITY, f64::min);
    let stages = run.report.check("stages_completed").is_some_and(|c| c.status == Status::Pass);
    let survive = stages && !certs.is_empty() && min_cert > 0.0;

    let passed =
        lip <= 1.0 && equiv <= 1e-5 && fixed_seen == 2 && fixed <= 1e-6 && inj > 0.0 && survive && run.report.passed();
    let detail = format!(
        "stages={} slope={lip:.4} equivariance={equiv:.3e} |f(F) - h|={fixed:.3e} \
         injectivity margin={inj:.6e} over {far_pairs} far pairs, certificates={} min={min_cert:.3e}",
        out.report.stages.len(),
        certs.len()
    );
    outcome(passed, detail, run.report.body_json())
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, f64);
    let criteria: [Criterion; 7] = [
        ("witness certification", witnesses, 1.0),
        ("sampled family post-hoc check", sampled_family, 5.0),
        ("constancy avoidance", avoid_constants, 10.0),
        ("shift separation", separating, 60.0),
        ("bebutov map", bebutov_map, f64::INFINITY),
        ("closed-form oracles", closed_form_oracles, f64::INFINITY),
        ("end-to-end pipeline", pipeline, 600.0),
    ];
    let mut all = true;
    let mut bodies = Vec::new();
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let ok = o.passed && secs < *budget;
        all &= ok;
        let limit = if budget.is_finite() { format!(" (limit {budget}s)") } else { String::new() };
        println!("{} criterion {} {name}: {} [{secs:.2}s{limit}]", if ok { "PASS" } else { "FAIL" }, k + 1, o.detail);
        bodies.push(o.body);
    }

    let start = Instant::now();
    let mut differing = Vec::new();
    for (k, (_, run, _)) in criteria.iter().enumerate().skip(1) {
        if run().body != bodies[k] {
            differing.push((k + 1).to_string());
        }
    }
    let ok = differing.is_empty();
    all &= ok;
    println!(
        "{} criterion 8 determinism: criteria 2-7 repeated, {} [{:.2}s]",
        if ok { "PASS" } else { "FAIL" },
        if ok { "report bodies byte-identical".to_string() } else { format!("bodies differ for {}", differing.join(", ")) },
        start.elapsed().as_secs_f64()
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
