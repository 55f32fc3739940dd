//! Aggregates over result rows and the tests used to compare methods.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::Method;
use crate::runner::{ResultRow, Study};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided paired t-test of `mean(a - b) > 0`; returns the p-value.
/// Pairs that do not differ at all give `p = 0` when the mean difference is
/// positive and `p = 1` otherwise.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Some(if m > 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some(1.0 - dist.cdf(t))
}

/// Ranks with ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

pub fn is_nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}

/// Means of one `(method, x)` group, where `x` is `σ` or the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub method: Method,
    pub x: f64,
    pub n: usize,
    pub failed: usize,
    pub mean_ile: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_wall_time: f64,
}

fn x_of(row: &ResultRow) -> f64 {
    match row.study {
        Study::Convergence => row.threshold.unwrap_or(f64::NAN),
        _ => row.sigma,
    }
}

/// Group means of successful rows, ordered by method then `x`.
pub fn summarize(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(Method, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        // Nonnegative floats order like their bit patterns.
        groups.entry((r.method, x_of(r).to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, x), rs)| {
            let ok: Vec<&&ResultRow> = rs.iter().filter(|r| r.is_ok()).collect();
            let iles: Vec<f64> = ok.iter().filter_map(|r| r.ile).collect();
            let outcomes: Vec<bool> = ok
                .iter()
                .filter_map(|r| r.outcome.map(|o| o == robust_irl::world::TrialOutcome::Success))
                .collect();
            GroupSummary {
                method,
                x: f64::from_bits(x),
                n: rs.len(),
                failed: rs.len() - ok.len(),
                mean_ile: (!iles.is_empty()).then(|| mean(&iles)),
                success_rate: (!outcomes.is_empty())
                    .then(|| outcomes.iter().filter(|&&s| s).count() as f64 / outcomes.len() as f64),
                mean_wall_time: mean(&ok.iter().map(|r| r.wall_time_seconds).collect::<Vec<_>>()),
            }
        })
        .collect()
}

/// ILE of `method` at `x` keyed by seed, successful rows only.
pub fn ile_by_seed(rows: &[ResultRow], method: Method, x: f64) -> BTreeMap<u64, f64> {
    rows.iter()
        .filter(|r| r.method == method && x_of(r) == x && r.is_ok())
        .filter_map(|r| r.ile.map(|v| (r.seed, v)))
        .collect()
}

/// Seed-paired ILEs of two methods at `x`.
pub fn paired_ile(rows: &[ResultRow], a: Method, b: Method, x: f64) -> (Vec<f64>, Vec<f64>) {
    let ia = ile_by_seed(rows, a, x);
    let ib = ile_by_seed(rows, b, x);
    ia.iter()
        .filter_map(|(seed, va)| ib.get(seed).map(|vb| (*va, *vb)))
        .unzip()
}
