//! Generic vector families: integer witnesses for the two independence
//! conditions, rank certificates, and seeded rejection sampling of perturbation
//! node values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Minimum certificate margin demanded from sampled families.
pub const DEFAULT_MIN_MARGIN: f64 = 1e-6;
pub const DEFAULT_MAX_TRIES: usize = 1000;

/// Entries up to this magnitude take the exact integer elimination path.
const EXACT_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GenvecError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling failed after {stats}")]
    SamplingFailed { stats: SamplingStats },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub tries: usize,
    /// Draws rejected because `e, D u_1, …` were not independent.
    pub diff_rank_failures: usize,
    /// Draws rejected because some shifted restriction family was dependent.
    pub shift_rank_failures: usize,
    /// Draws that were full rank but below the required margin.
    pub margin_failures: usize,
}

impl std::fmt::Display for SamplingStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} tries (diff-rank failures {}, shift-rank failures {}, margin failures {})",
            self.tries, self.diff_rank_failures, self.shift_rank_failures, self.margin_failures
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Witness { construction: String },
    Sampled { seed: u64, tries: usize },
}

/// Outcome of a rank computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCert {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Smallest retained pivot relative to the largest one.
    pub margin: f64,
    /// Rank obtained by exact integer elimination.
    pub exact: bool,
}

impl RankCert {
    /// All rows independent.
    pub fn full_row_rank(&self) -> bool {
        self.rank == self.rows
    }

    pub fn deficiency(&self) -> usize {
        self.rows - self.rank
    }

    pub fn passes(&self, rank_tol: f64) -> bool {
        self.full_row_rank() && (self.exact || self.margin > rank_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecFamily {
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
    pub certificates: Vec<RankCert>,
}

impl VecFamily {
    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family serializes")
    }
}

/// Adjacent differences `(x₂ − x₁, …, x_{n+1} − x_n)`.
pub fn diff(u: &[f64]) -> Vec<f64> {
    u.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Staircase family `u_i = (−1 × i, 0 × (l+1−i))`, for which
/// `e, Du₁, …, Du_m` are the first `m + 1` rows of an upper-triangular matrix.
pub fn witness_e_du(l: usize, m: usize) -> Result<VecFamily, GenvecError> {
    if l < m + 1 {
        return Err(GenvecError::Precondition(format!("need l ≥ m + 1, got l = {l}, m = {m}")));
    }
    let vectors: Vec<Vec<f64>> = (1..=m)
        .map(|i| (0..=l).map(|j| if j < i { -1.0 } else { 0.0 }).collect())
        .collect();
    let mut rows = vec![vec![1.0; l]];
    rows.extend(vectors.iter().map(|u| diff(u)));
    let mut cert = rank_check(&rows, DEFAULT_RANK_TOL);
    cert.label = "e_du".into();
    Ok(VecFamily {
        vectors,
        provenance: Provenance::Witness { construction: format!("staircase l={l} m={m}") },
        certificates: vec![cert],
    })
}

/// Restriction of `u` (1-based, inclusive) to positions `from..from+len−1`.
fn restrict(u: &[f64], from: usize, len: usize) -> Vec<f64> {
    u[from - 1..from - 1 + len].to_vec()
}

/// Two-spike family `x_ij = 1` for `j ∈ {i, α + l − i}`, independent after
/// restriction to `[1, l]` and `[α, α + l − 1]`.
pub fn witness_shifted(n: usize, l: usize, m: usize, alpha: usize) -> Result<VecFamily, GenvecError> {
    if !(n > l && l >= 2 * m) {
        return Err(GenvecError::Precondition(format!("need n > l ≥ 2m, got n={n}, l={l}, m={m}")));
    }
    if m == 0 {
        return Err(GenvecError::Precondition("need m ≥ 1".into()));
    }
    if alpha < 2 || alpha > n - l + 1 {
        return Err(GenvecError::Precondition(format!("α = {alpha} outside [2, {}]", n - l + 1)));
    }
    let vectors: Vec<Vec<f64>> = (1..=m)
        .map(|i| {
            (1..=n)
                .map(|j| if j == i || j == alpha + l - i { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let rows = shifted_rows(&vectors, l, alpha);
    let mut cert = rank_check(&rows, DEFAULT_RANK_TOL);
    cert.label = format!("shifted alpha={alpha}");
    Ok(VecFamily {
        vectors,
        provenance: Provenance::Witness { construction: format!("two-spike n={n} l={l} m={m} alpha={alpha}") },
        certificates: vec![cert],
    })
}

/// Rows `u₁|₁^l, u₁|_α^{α+l−1}, u₂|₁^l, …`.
pub fn shifted_rows(vectors: &[Vec<f64>], l: usize, alpha: usize) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .flat_map(|u| [restrict(u, 1, l), restrict(u, alpha, l)])
        .collect()
}

/// Rows `e, D_L u₁, …, D_L u_M` in `ℝ^L`.
pub fn e_diff_rows(vectors: &[Vec<f64>], l: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0; l]];
    rows.extend(vectors.iter().map(|u| diff(&u[..=l])));
    rows
}

/// Rank via exact integer elimination when all entries are small integers,
/// otherwise via fully pivoted Gaussian elimination. The margin is always the
/// floating-point pivot ratio.
pub fn rank_check(rows: &[Vec<f64>], rank_tol: f64) -> RankCert {
    let cols = rows.first().map_or(0, Vec::len);
    assert!(rows.iter().all(|r| r.len() == cols), "rank_check: ragged rows");
    let (float_rank, margin) = pivoted_rank(rows, rank_tol);
    let integral = !rows.is_empty()
        && rows.iter().flatten().all(|v| v.fract() == 0.0 && v.abs() <= EXACT_LIMIT);
    let (rank, exact) = if integral {
        let ints: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|v| *v as i128).collect()).collect();
        (exact_rank(&ints), true)
    } else {
        (float_rank, false)
    };
    RankCert { label: String::new(), rows: rows.len(), cols, rank, margin, exact }
}

/// Fully pivoted elimination on max-norm equilibrated rows. Returns the rank
/// at relative tolerance `rank_tol` and the smallest retained pivot over the
/// largest. Row scaling leaves the rank unchanged and keeps the margin
/// independent of the magnitude of each vector.
fn pivoted_rank(rows: &[Vec<f64>], rank_tol: f64) -> (usize, f64) {
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let m = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if m > 0.0 { r.iter().map(|v| v / m).collect() } else { r.clone() }
        })
        .collect();
    let r = a.len();
    let c = a.first().map_or(0, Vec::len);
    let mut largest = 0.0f64;
    let mut smallest_kept = f64::INFINITY;
    let mut rank = 0;
    for k in 0..r.min(c) {
        let (mut pi, mut pj, mut best) = (k, k, 0.0f64);
        for (i, row) in a.iter().enumerate().skip(k) {
            for (j, v) in row.iter().enumerate().skip(k) {
                if v.abs() > best {
                    best = v.abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        if k == 0 {
            largest = best;
        }
        if best == 0.0 || best <= rank_tol * largest {
            break;
        }
        a.swap(k, pi);
        for row in a.iter_mut() {
            row.swap(k, pj);
        }
        let pivot = a[k][k];
        let (head, tail) = a.split_at_mut(k + 1);
        let prow = &head[k];
        for row in tail.iter_mut() {
            let factor = row[k] / pivot;
            if factor != 0.0 {
                for j in k..c {
                    row[j] -= factor * prow[j];
                }
            }
        }
        smallest_kept = smallest_kept.min(best);
        rank += 1;
    }
    let margin = if rank == 0 { 0.0 } else { smallest_kept / largest };
    (rank, margin)
}

/// Fraction-free (Bareiss) elimination over the integers.
pub fn exact_rank(rows: &[Vec<i128>]) -> usize {
    let mut a: Vec<Vec<i128>> = rows.to_vec();
    let r = a.len();
    let c = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    let mut prev = 1i128;
    let mut col = 0;
    while rank < r && col < c {
        let Some(p) = (rank..r).find(|&i| a[i][col] != 0) else {
            col += 1;
            continue;
        };
        a.swap(rank, p);
        for i in rank + 1..r {
            for j in col + 1..c {
                a[i][j] = (a[i][j] * a[rank][col] - a[i][col] * a[rank][j]) / prev;
            }
            a[i][col] = 0;
        }
        prev = a[rank][col];
        rank += 1;
        col += 1;
    }
    rank
}

/// What a sampled family must satisfy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// `|f_vals[m][n] − u_m[n]| < box_radius`.
    pub box_radius: f64,
    /// `|u_m[n+1] − u_m[n]| < max_increment`.
    pub max_increment: f64,
    /// Number of leading differences `L` in the `e, D_L u` condition.
    pub diff_len: usize,
    /// Window length for the shifted-restriction condition; `None` skips it.
    pub shift_len: Option<usize>,
    pub rank_tol: f64,
    pub min_margin: f64,
    pub max_tries: usize,
}

impl SamplingSpec {
    /// All four properties with window `l` for both rank conditions.
    pub fn separating(box_radius: f64, max_increment: f64, l: usize, max_tries: usize) -> Self {
        Self {
            box_radius,
            max_increment,
            diff_len: l,
            shift_len: Some(l),
            rank_tol: DEFAULT_RANK_TOL,
            min_margin: DEFAULT_MIN_MARGIN,
            max_tries,
        }
    }

    /// Box, increment and `e, Du` independence over all `n − 1` differences.
    pub fn non_constant(box_radius: f64, max_increment: f64, n: usize, max_tries: usize) -> Self {
        Self {
            box_radius,
            max_increment,
            diff_len: n.saturating_sub(1),
            shift_len: None,
            rank_tol: DEFAULT_RANK_TOL,
            min_margin: DEFAULT_MIN_MARGIN,
            max_tries,
        }
    }
}

fn validate_sampling(f_vals: &[Vec<f64>], spec: &SamplingSpec) -> Result<usize, GenvecError> {
    if f_vals.is_empty() {
        return Err(GenvecError::Precondition("no target vectors".into()));
    }
    let n = f_vals[0].len();
    if f_vals.iter().any(|v| v.len() != n) {
        return Err(GenvecError::Precondition("target vectors differ in length".into()));
    }
    if !(spec.box_radius > 0.0) {
        return Err(GenvecError::Precondition(format!("box radius must be positive, got {}", spec.box_radius)));
    }
    if !(spec.max_increment > 0.0) {
        return Err(GenvecError::Precondition(format!("increment bound must be positive, got {}", spec.max_increment)));
    }
    let m = f_vals.len();
    if spec.diff_len + 1 > n || spec.diff_len < m + 1 {
        return Err(GenvecError::Precondition(format!(
            "difference window L = {} needs M + 1 ≤ L ≤ N − 1 (M = {m}, N = {n})",
            spec.diff_len
        )));
    }
    if let Some(l) = spec.shift_len {
        if !(n > l && l >= 2 * m) {
            return Err(GenvecError::Precondition(format!("need N > L ≥ 2M, got N={n}, L={l}, M={m}")));
        }
    }
    for (mi, v) in f_vals.iter().enumerate() {
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(GenvecError::Precondition(format!("target {mi} leaves [0,1]")));
        }
        if let Some(i) = v.windows(2).position(|w| (w[1] - w[0]).abs() > spec.max_increment) {
            return Err(GenvecError::Precondition(format!(
                "infeasible box/increment combination: target {mi} jumps by more than {} at node {i}",
                spec.max_increment
            )));
        }
    }
    Ok(n)
}

/// Seeded sampling of `u₁, …, u_M` (`M = f_vals.len()`) with window `L`,
/// satisfying the box, increment, `e, D_L u` and shifted-restriction
/// conditions.
pub fn sample_generic_u(
    f_vals: &[Vec<f64>],
    box_radius: f64,
    max_increment: f64,
    l: usize,
    seed: u64,
    max_tries: usize,
) -> Result<VecFamily, GenvecError> {
    sample_family(f_vals, &SamplingSpec::separating(box_radius, max_increment, l, max_tries), seed)
}

pub fn sample_family(f_vals: &[Vec<f64>], spec: &SamplingSpec, seed: u64) -> Result<VecFamily, GenvecError> {
    let n = validate_sampling(f_vals, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SamplingStats::default();
    // strict inequalities: stay a hair inside the open constraints
    let shrink = 1.0 - 1e-9;
    let radius = spec.box_radius * shrink;
    let inc = spec.max_increment * shrink;
    while stats.tries < spec.max_tries {
        stats.tries += 1;
        let vectors: Vec<Vec<f64>> = f_vals
            .iter()
            .map(|target| {
                let mut u = Vec::with_capacity(n);
                for (i, f) in target.iter().enumerate() {
                    let mut lo = (f - radius).max(0.0);
                    let mut hi = (f + radius).min(1.0);
                    if let Some(prev) = u.last() {
                        lo = lo.max(prev - inc);
                        hi = hi.min(prev + inc);
                    }
                    debug_assert!(lo <= hi, "feasibility was validated (node {i})");
                    u.push(if hi > lo { rng.gen_range(lo..hi) } else { lo });
                }
                u
            })
            .collect();
        match certify_family(&vectors, spec) {
            Ok(certificates) => {
                return Ok(VecFamily {
                    vectors,
                    provenance: Provenance::Sampled { seed, tries: stats.tries },
                    certificates,
                })
            }
            Err(Rejection::DiffRank) => stats.diff_rank_failures += 1,
            Err(Rejection::ShiftRank) => stats.shift_rank_failures += 1,
            Err(Rejection::Margin) => stats.margin_failures += 1,
        }
    }
    Err(GenvecError::SamplingFailed { stats })
}

enum Rejection {
    DiffRank,
    ShiftRank,
    Margin,
}

fn certify_family(vectors: &[Vec<f64>], spec: &SamplingSpec) -> Result<Vec<RankCert>, Rejection> {
    let mut certs = Vec::new();
    let mut cert = rank_check(&e_diff_rows(vectors, spec.diff_len), spec.rank_tol);
    cert.label = format!("e_diff L={}", spec.diff_len);
    if !cert.full_row_rank() {
        return Err(Rejection::DiffRank);
    }
    if cert.margin < spec.min_margin {
        return Err(Rejection::Margin);
    }
    certs.push(cert);
    if let Some(l) = spec.shift_len {
        let n = vectors[0].len();
        // a shift of j nodes is the window starting at 1-based position j + 1
        let mut worst: Option<RankCert> = None;
        for j in 1..=n - l {
            let cert = rank_check(&shifted_rows(vectors, l, j + 1), spec.rank_tol);
            if !cert.full_row_rank() {
                return Err(Rejection::ShiftRank);
            }
            if cert.margin < spec.min_margin {
                return Err(Rejection::Margin);
            }
            if worst.as_ref().is_none_or(|w| cert.margin < w.margin) {
                worst = Some(RankCert { label: format!("shift j={j} (worst)"), ..cert });
            }
        }
        certs.extend(worst);
    }
    Ok(certs)
}
