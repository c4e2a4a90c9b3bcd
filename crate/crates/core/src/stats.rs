//! Bootstrap intervals, rank tests and small density summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("input is empty")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("need at least two non-empty groups and three values in total")]
    TooFewGroups,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

// ---------------------------------------------------------------------------
// Special functions

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cf(a, x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// P(X > x) for a chi-square variable with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(df / 2.0, x / 2.0)
}

/// Two-sided P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    beta_inc(df / 2.0, 0.5, df / (df + t * t))
}

/// P(T > t) for Student's t.
pub fn t_sf(t: f64, df: f64) -> f64 {
    let half = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        gamma_q(0.5, x * x)
    } else {
        2.0 - gamma_q(0.5, x * x)
    }
}

/// P(Z > z) for a standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------
// Descriptive helpers

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Quantile of sorted data, interpolating linearly at h = (n - 1) p.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mid-ranks (1-based) and the tie sizes found.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

// ---------------------------------------------------------------------------
// Bootstrap

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub samples: usize,
    pub sample_size: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            samples: 1000,
            sample_size: 17,
            ci_level: 0.80,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub observed_mean: f64,
    pub samples: usize,
    pub sample_size: usize,
    pub ci_level: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resample_median: f64,
    pub seed: u64,
}

impl BootstrapResult {
    pub fn overlaps(&self, other: &BootstrapResult) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Percentile bootstrap CI of the mean. Resample `i` draws from its own
/// ChaCha stream, so the result does not depend on the worker count.
pub fn bootstrap_mean_ci(values: &[f64], params: &BootstrapParams) -> Result<BootstrapResult, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if params.samples == 0 || params.sample_size == 0 {
        return Err(StatsError::InvalidParameter("samples and sample_size must be at least 1".into()));
    }
    if !(params.ci_level > 0.0 && params.ci_level < 1.0) {
        return Err(StatsError::InvalidParameter(format!("ci_level {} not in (0, 1)", params.ci_level)));
    }
    let n = values.len();
    let means = par::map_range(params.samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(i as u64);
        let mut sum = 0.0;
        for _ in 0..params.sample_size {
            sum += values[rng.random_range(0..n)];
        }
        sum / params.sample_size as f64
    });
    let sorted = sorted_copy(&means);
    let alpha = (1.0 - params.ci_level) / 2.0;
    Ok(BootstrapResult {
        observed_mean: mean(values),
        samples: params.samples,
        sample_size: params.sample_size,
        ci_level: params.ci_level,
        ci_low: quantile_sorted(&sorted, alpha),
        ci_high: quantile_sorted(&sorted, 1.0 - alpha),
        resample_median: quantile_sorted(&sorted, 0.5),
        seed: params.seed,
    })
}

// ---------------------------------------------------------------------------
// Rank tests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub tie_correction: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation. The p-value is exact (full permutation) for
/// n < 10 and uses the t approximation otherwise.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<RankTestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewValues { needed: 3, got: n });
    }
    let (rx, tx) = midranks(x);
    let (ry, ty) = midranks(y);
    for (name, r) in [("x", &rx), ("y", &ry)] {
        if r.iter().all(|&v| v == r[0]) {
            return Err(StatsError::DegenerateInput(format!("{name} is constant")));
        }
    }
    let rho = pearson(&rx, &ry).clamp(-1.0, 1.0);
    let tie_correction = 1.0 - (tie_sum(&tx) + tie_sum(&ty)) / (2.0 * ((n as f64).powi(3) - n as f64));
    let (p_value, df) = if n < 10 {
        (spearman_exact_p(&rx, &ry, rho), None)
    } else {
        let df = (n - 2) as f64;
        let p = if rho.abs() >= 1.0 {
            0.0
        } else {
            t_two_sided_p(rho * (df / (1.0 - rho * rho)).sqrt(), df)
        };
        (p, Some(df))
    };
    Ok(RankTestResult {
        statistic: rho,
        p_value: p_value.clamp(0.0, 1.0),
        n,
        df,
        tie_correction,
    })
}

/// Fraction of all permutations of `ry` whose |rho| reaches the observed one.
fn spearman_exact_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let n = ry.len();
    let target = rho.abs() - 1e-12;
    let mut perm = ry.to_vec();
    let mut c = vec![0usize; n];
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut visit = |p: &[f64]| {
        total += 1;
        if pearson(rx, p).abs() >= target {
            hits += 1;
        }
    };
    // Heap's algorithm
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

struct PooledRanks {
    mean_ranks: Vec<f64>,
    sizes: Vec<usize>,
    n: usize,
    ties: f64,
}

fn pool_ranks(groups: &[Vec<f64>]) -> Result<PooledRanks, StatsError> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if groups.len() < 2 || groups.iter().any(Vec::is_empty) || n < 3 {
        return Err(StatsError::TooFewGroups);
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let mut mean_ranks = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        mean_ranks.push(ranks[offset..offset + g.len()].iter().sum::<f64>() / g.len() as f64);
        offset += g.len();
    }
    Ok(PooledRanks {
        mean_ranks,
        sizes: groups.iter().map(Vec::len).collect(),
        n,
        ties: tie_sum(&ties),
    })
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<RankTestResult, StatsError> {
    let pr = pool_ranks(groups)?;
    let nf = pr.n as f64;
    let c = 1.0 - pr.ties / (nf.powi(3) - nf);
    let df = (groups.len() - 1) as f64;
    if c <= 0.0 {
        return Ok(RankTestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: pr.n,
            df: Some(df),
            tie_correction: c,
        });
    }
    let s: f64 = pr
        .mean_ranks
        .iter()
        .zip(&pr.sizes)
        .map(|(r, &ni)| {
            let ri = r * ni as f64;
            ri * ri / ni as f64
        })
        .sum();
    let h = ((12.0 / (nf * (nf + 1.0))) * s - 3.0 * (nf + 1.0)).max(0.0) / c;
    Ok(RankTestResult {
        statistic: h,
        p_value: chi2_sf(h, df).clamp(0.0, 1.0),
        n: pr.n,
        df: Some(df),
        tie_correction: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    None,
    Bonferroni,
    #[default]
    Holm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnMatrix {
    pub labels: Vec<String>,
    pub adjustment: Adjustment,
    pub z: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    pub p_adjusted: Vec<Vec<f64>>,
}

impl DunnMatrix {
    pub fn with_labels(mut self, labels: &[String]) -> Self {
        self.labels = labels.to_vec();
        self
    }
}

/// Dunn pairwise comparisons on pooled mid-ranks. z[i][j] is positive when
/// group i ranks higher than group j.
pub fn dunn_posthoc(groups: &[Vec<f64>], adjustment: Adjustment) -> Result<DunnMatrix, StatsError> {
    let pr = pool_ranks(groups)?;
    let k = groups.len();
    let nf = pr.n as f64;
    let var_base = nf * (nf + 1.0) / 12.0 - pr.ties / (12.0 * (nf - 1.0));
    let mut z = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let se = (var_base * (1.0 / pr.sizes[i] as f64 + 1.0 / pr.sizes[j] as f64)).sqrt();
            let (zij, p) = if se > 0.0 {
                let zij = (pr.mean_ranks[i] - pr.mean_ranks[j]) / se;
                (zij, (2.0 * normal_sf(zij.abs())).min(1.0))
            } else {
                (0.0, 1.0)
            };
            z[i][j] = zij;
            z[j][i] = -zij;
            p_raw[i][j] = p;
            p_raw[j][i] = p;
            pairs.push((i, j, p));
        }
    }
    let m = pairs.len() as f64;
    let mut p_adjusted = p_raw.clone();
    match adjustment {
        Adjustment::None => {}
        Adjustment::Bonferroni => {
            for &(i, j, p) in &pairs {
                let a = (p * m).min(1.0);
                p_adjusted[i][j] = a;
                p_adjusted[j][i] = a;
            }
        }
        Adjustment::Holm => {
            let mut sorted = pairs.clone();
            sorted.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
            let mut running: f64 = 0.0;
            for (rank, &(i, j, p)) in sorted.iter().enumerate() {
                running = running.max(((m - rank as f64) * p).min(1.0));
                p_adjusted[i][j] = running;
                p_adjusted[j][i] = running;
            }
        }
    }
    Ok(DunnMatrix {
        labels: (0..k).map(|i| i.to_string()).collect(),
        adjustment,
        z,
        p_raw,
        p_adjusted,
    })
}

// ---------------------------------------------------------------------------
// Outliers and densities

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqrFilter {
    pub kept: Vec<f64>,
    pub removed: usize,
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Keeps values inside [Q1 - k IQR, Q3 + k IQR], preserving input order.
pub fn iqr_filter(values: &[f64], k: f64) -> Result<IqrFilter, StatsError> {
    if values.len() < 4 {
        return Err(StatsError::TooFewValues {
            needed: 4,
            got: values.len(),
        });
    }
    let sorted = sorted_copy(values);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lower, upper) = (q1 - k * iqr, q3 + k * iqr);
    let kept: Vec<f64> = values.iter().copied().filter(|v| (lower..=upper).contains(v)).collect();
    Ok(IqrFilter {
        removed: values.len() - kept.len(),
        kept,
        q1,
        q3,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeEstimate {
    pub bandwidth: f64,
    pub densities: Vec<f64>,
}

/// Gaussian kernel density at `eval_points`. Without an explicit bandwidth,
/// Scott's rule n^(-1/5) times the sample SD is used.
pub fn gaussian_kde(values: &[f64], eval_points: &[f64], bandwidth: Option<f64>) -> Result<KdeEstimate, StatsError> {
    let n = values.len();
    let h = match bandwidth {
        Some(h) if !(h > 0.0 && h.is_finite()) => {
            return Err(StatsError::InvalidParameter(format!("bandwidth {h} must be positive")))
        }
        Some(h) => {
            if n == 0 {
                return Err(StatsError::EmptyInput);
            }
            h
        }
        None => {
            if n < 2 {
                return Err(StatsError::TooFewValues { needed: 2, got: n });
            }
            let sd = sample_sd(values);
            if sd == 0.0 {
                return Err(StatsError::DegenerateInput("zero variance and no bandwidth".into()));
            }
            (n as f64).powf(-0.2) * sd
        }
    };
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let densities = par::map_slice(eval_points, |&x| {
        values
            .iter()
            .map(|v| {
                let u = (x - v) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
            * norm
    });
    Ok(KdeEstimate { bandwidth: h, densities })
}

/// Five-number summary plus mean, used for box charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let s = sorted_copy(values);
    Some(Summary {
        n: s.len(),
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
        mean: mean(&s),
    })
}
