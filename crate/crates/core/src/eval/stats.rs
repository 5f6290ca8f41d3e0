use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{Condition, ResultRow};
use crate::error::{Error, Result};

/// Largest non-zero difference count that gets the exact null distribution.
pub const EXACT_WILCOXON_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Friedman,
    WilcoxonExact,
    WilcoxonNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    /// Rows for Friedman; non-zero differences for Wilcoxon.
    pub n: usize,
    /// Set when the input was degenerate (all ties / all zero differences).
    pub degenerate: bool,
}

/// Ranks 1..=n with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over `rows` (blocks) × `k` conditions.
pub fn friedman_test(rows: &[Vec<f64>]) -> Result<StatTestResult> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < 2 || k < 3 {
        return Err(Error::InvalidArgument(format!("Friedman needs n >= 2 and k >= 3, got n={n}, k={k}")));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::ShapeMismatch("Friedman rows differ in length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Friedman scores".into()));
    }
    let mut rank_sums = vec![0.0; k];
    for r in rows {
        for (s, rank) in rank_sums.iter_mut().zip(average_ranks(r)) {
            *s += rank;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let statistic = (12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)).max(0.0);
    let degenerate = rows.iter().all(|r| r.iter().all(|&v| v == r[0]));
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        chi.sf(statistic).clamp(0.0, 1.0)
    };
    Ok(StatTestResult {
        kind: TestKind::Friedman,
        statistic,
        p_value,
        n,
        degenerate,
    })
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; the statistic is `min(W+, W-)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("paired samples of {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon samples".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(StatTestResult {
            kind: TestKind::WilcoxonExact,
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            degenerate: true,
        });
    }
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= EXACT_WILCOXON_MAX_N {
        // Doubled ranks are integers even with ties.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let top: usize = doubled.iter().sum();
        let mut counts = vec![0u64; top + 1];
        counts[0] = 1;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let observed = (statistic * 2.0).round() as usize;
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|&(s, _)| s.min(top - s) <= observed)
            .map(|(_, c)| c)
            .sum();
        return Ok(StatTestResult {
            kind: TestKind::WilcoxonExact,
            statistic,
            p_value: extreme as f64 / (1u64 << n) as f64,
            n,
            degenerate: false,
        });
    }

    let nf = n as f64;
    let mut tie_term = 0.0;
    let mut sorted: Vec<f64> = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - total / 2.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(StatTestResult {
        kind: TestKind::WilcoxonNormal,
        statistic,
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
        n,
        degenerate: false,
    })
}

/// `min(1, p * m)` for each p; `m` must cover every comparison.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "Bonferroni m={m} for {} comparisons",
            p_values.len()
        )));
    }
    Ok(p_values.iter().map(|p| (p * m as f64).min(1.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub test: StatTestResult,
    pub p_adjusted: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub metric: String,
    pub conditions: Vec<String>,
    /// (subject, fold) blocks in row order.
    pub blocks: Vec<(String, u32)>,
    pub medians: Vec<f64>,
    pub friedman: StatTestResult,
    pub pairwise: Vec<PairwiseResult>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Friedman across `conditions`, then every pairwise Wilcoxon with a
/// Bonferroni correction over the number of pairs. Blocks are the
/// (subject, fold) scores pooled over subjects.
pub fn compare_conditions(rows: &[ResultRow], metric: &str, conditions: &[Condition]) -> Result<StatsReport> {
    if conditions.len() < 3 {
        return Err(Error::InvalidArgument("statistics need at least 3 conditions".into()));
    }
    let mut table: BTreeMap<(String, u32), Vec<Option<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        for (j, c) in conditions.iter().enumerate() {
            let n_match = match r.n_windows {
                Some(n) => n == c.n_windows,
                None => metric == "accuracy",
            };
            if r.method == c.method.name() && n_match {
                let cell = table
                    .entry((r.subject.clone(), r.fold))
                    .or_insert_with(|| vec![None; conditions.len()]);
                cell[j] = Some(r.value);
            }
        }
    }
    let mut blocks = Vec::new();
    let mut matrix = Vec::new();
    for (key, cells) in table {
        let row: Option<Vec<f64>> = cells.into_iter().collect();
        let row = row.ok_or_else(|| {
            Error::InvalidArgument(format!("block {} fold {} lacks a {metric} score for some condition", key.0, key.1))
        })?;
        blocks.push(key);
        matrix.push(row);
    }
    let friedman = friedman_test(&matrix)?;
    let column = |j: usize| matrix.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mut pairs = Vec::new();
    for i in 0..conditions.len() {
        for j in i + 1..conditions.len() {
            pairs.push((i, j, wilcoxon_signed_rank(&column(i), &column(j))?));
        }
    }
    let m = pairs.len();
    let adjusted = bonferroni(&pairs.iter().map(|p| p.2.p_value).collect::<Vec<_>>(), m)?;
    Ok(StatsReport {
        metric: metric.into(),
        conditions: conditions.iter().map(|c| c.to_string()).collect(),
        medians: (0..conditions.len()).map(|j| median(&column(j))).collect(),
        blocks,
        friedman,
        pairwise: pairs
            .into_iter()
            .zip(adjusted)
            .map(|((i, j, test), p_adjusted)| PairwiseResult {
                a: conditions[i].to_string(),
                b: conditions[j].to_string(),
                test,
                p_adjusted,
                m,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn friedman_hand_case() {
        let r = friedman_test(&[vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 4.0);
        assert!((r.p_value - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn friedman_identical_columns() {
        let r = friedman_test(&[vec![0.5; 3], vec![0.7; 3], vec![0.1; 3]]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(r.degenerate);
        assert!(friedman_test(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn wilcoxon_three_positive() {
        let r = wilcoxon_signed_rank(&[2.0, 3.0, 4.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.25);
    }

    #[test]
    fn wilcoxon_all_zero_is_flagged() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn wilcoxon_normal_branch_matches_reference() {
        // 25 strictly increasing positive differences except the 5 smallest:
        // W- = 1+2+3+4+5 = 15, mean 162.5, var 1381.25.
        let a: Vec<f64> = (1..=25).map(|i| if i <= 5 { -(i as f64) } else { i as f64 }).collect();
        let b = vec![0.0; 25];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.kind, TestKind::WilcoxonNormal);
        assert_eq!(r.statistic, 15.0);
        let z = (310.0f64 - 162.5) / 1381.25f64.sqrt();
        let expected = 2.0 * Normal::new(0.0, 1.0).unwrap().sf(z);
        assert!((r.p_value - expected).abs() < 1e-15);
    }

    #[test]
    fn bonferroni_cases() {
        assert!((bonferroni(&[0.01], 3).unwrap()[0] - 0.03).abs() < 1e-15);
        assert_eq!(bonferroni(&[0.5], 3).unwrap(), vec![1.0]);
        assert_eq!(bonferroni(&[0.2, 0.04], 2).unwrap(), vec![0.4, 0.08]);
        assert_eq!(bonferroni(&[0.123], 1).unwrap(), vec![0.123]);
        assert!(bonferroni(&[0.1, 0.2], 1).is_err());
    }

    proptest! {
        #[test]
        fn wilcoxon_swap_symmetric(pairs in proptest::collection::vec((0u8..6, 0u8..6), 1..30)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let x = wilcoxon_signed_rank(&a, &b).unwrap();
            let y = wilcoxon_signed_rank(&b, &a).unwrap();
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }

        #[test]
        fn friedman_column_permutation(rows in proptest::collection::vec(proptest::collection::vec(0u8..5, 4), 2..10)) {
            let m: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let p: Vec<Vec<f64>> = m.iter().map(|r| vec![r[2], r[0], r[3], r[1]]).collect();
            let x = friedman_test(&m).unwrap();
            let y = friedman_test(&p).unwrap();
            prop_assert!((x.statistic - y.statistic).abs() < 1e-9);
        }
    }
}
