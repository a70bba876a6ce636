//! Evaluation metrics: variable-selection accuracy, coefficient L1 error
//! under optimal cluster matching, NMI and Harrell's concordance index.

use serde::{Deserialize, Serialize};

use crate::survival::ModelIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fdr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// Set when the true model is empty and sensitivity is vacuously 1.
    pub vacuous_sensitivity: bool,
}

pub fn selection_metrics(truth: &ModelIndex, estimate: &ModelIndex, p: usize) -> SelectionReport {
    let tp = estimate.indices().iter().filter(|j| truth.contains(**j)).count();
    let fp = estimate.len() - tp;
    let fn_ = truth.len() - tp;
    let tn = p - truth.len() - fp;
    let vacuous = truth.is_empty();
    let negatives = p - truth.len();
    SelectionReport {
        sensitivity: if vacuous { 1.0 } else { tp as f64 / truth.len() as f64 },
        specificity: if negatives == 0 { 1.0 } else { tn as f64 / negatives as f64 },
        fdr: fp as f64 / estimate.len().max(1) as f64,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        vacuous_sensitivity: vacuous,
    }
}

/// Contingency counts `table[a][b]` of label pairs; labels are compacted to
/// `0..` in order of first appearance.
fn contingency(a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<Vec<usize>>) {
    let compact = |labels: &[usize]| {
        let mut seen: Vec<usize> = Vec::new();
        let ids = labels
            .iter()
            .map(|l| match seen.iter().position(|s| s == l) {
                Some(i) => i,
                None => {
                    seen.push(*l);
                    seen.len() - 1
                }
            })
            .collect::<Vec<_>>();
        (seen, ids)
    };
    let (la, ia) = compact(a);
    let (lb, ib) = compact(b);
    let mut table = vec![vec![0; lb.len()]; la.len()];
    for (x, y) in ia.iter().zip(&ib) {
        table[*x][*y] += 1;
    }
    (la, lb, table)
}

/// (score, tiebreak) totals and the row-to-column assignment achieving them.
type Matched = ((f64, f64), Vec<Option<usize>>);

/// Maximum-weight matching between rows and columns of a small score
/// matrix. Returns `row -> Some(col)`; ties resolved by `tiebreak`, lower is
/// better.
fn best_matching(score: &[Vec<f64>], tiebreak: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = score.len();
    let cols = score.first().map_or(0, |r| r.len());
    // exhaustive search over injective assignments with a memo on the column mask
    let mut memo = std::collections::HashMap::new();
    fn go(
        r: usize,
        used: u64,
        score: &[Vec<f64>],
        tiebreak: &[Vec<f64>],
        cols: usize,
        memo: &mut std::collections::HashMap<(usize, u64), Matched>,
    ) -> Matched {
        if r == score.len() {
            return ((0.0, 0.0), Vec::new());
        }
        if let Some(v) = memo.get(&(r, used)) {
            return v.clone();
        }
        // leave row r unmatched
        let (mut best_val, rest) = go(r + 1, used, score, tiebreak, cols, memo);
        let mut best_assign = vec![None];
        best_assign.extend(rest);
        for c in 0..cols {
            if used & (1 << c) != 0 {
                continue;
            }
            let (v, rest) = go(r + 1, used | (1 << c), score, tiebreak, cols, memo);
            let cand = (v.0 + score[r][c], v.1 + tiebreak[r][c]);
            if cand.0 > best_val.0 + 1e-12 || ((cand.0 - best_val.0).abs() <= 1e-12 && cand.1 < best_val.1) {
                best_val = cand;
                best_assign = vec![Some(c)];
                best_assign.extend(rest);
            }
        }
        memo.insert((r, used), (best_val, best_assign.clone()));
        (best_val, best_assign)
    }
    assert!(cols <= 63, "matching supports at most 63 columns");
    go(0, 0, score, tiebreak, cols, &mut memo).1.into_iter().take(rows).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Matches estimated clusters to true groups by maximizing the total label
/// overlap (ties: smaller L1), then sums `|beta_hat - beta|` over matched
/// pairs plus the full `|beta|` mass of every unmatched group or cluster.
///
/// `est` is indexed by the labels in `est_labels`; clusters absent from
/// `est_labels` are ignored.
pub fn l1_error(
    truth: &[Vec<f64>],
    est: &[Vec<f64>],
    true_labels: &[usize],
    est_labels: &[usize],
) -> f64 {
    let (tl, el, table) = contingency(true_labels, est_labels);
    let overlap: Vec<Vec<f64>> = table
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    let dist: Vec<Vec<f64>> = tl
        .iter()
        .map(|&g| el.iter().map(|&k| l1(&truth[g], &est[k])).collect())
        .collect();
    let matching = best_matching(&overlap, &dist);
    let mass = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut total = 0.0;
    let mut est_used = vec![false; el.len()];
    for (row, m) in matching.iter().enumerate() {
        match m {
            Some(c) => {
                total += dist[row][*c];
                est_used[*c] = true;
            }
            None => total += mass(&truth[tl[row]]),
        }
    }
    // true groups absent from the labels have nothing to match against
    for (g, beta) in truth.iter().enumerate() {
        if !tl.contains(&g) {
            total += mass(beta);
        }
    }
    for (c, used) in est_used.iter().enumerate() {
        if !used {
            total += mass(&est[el[c]]);
        }
    }
    total
}

/// For each true group, the estimated label holding most of its members
/// (ties: lower label). Used to pick the model compared against each group.
pub fn majority_labels(true_labels: &[usize], est_labels: &[usize], groups: usize) -> Vec<Option<usize>> {
    (0..groups)
        .map(|g| {
            let mut counts: Vec<(usize, usize)> = Vec::new();
            for (&t, &e) in true_labels.iter().zip(est_labels) {
                if t == g {
                    match counts.iter_mut().find(|(l, _)| *l == e) {
                        Some(c) => c.1 += 1,
                        None => counts.push((e, 1)),
                    }
                }
            }
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(l, _)| l)
        })
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let q = c as f64 / n;
            -q * q.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A;B) / sqrt(H(A) H(B))`.
///
/// When either partition is a single block: 1 if both are, else 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must have equal length");
    assert!(!a.is_empty(), "partitions must be nonempty");
    let n = a.len() as f64;
    let (_, _, table) = contingency(a, b);
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c]).sum())
        .collect();
    let ha = entropy(rows.iter().copied(), n);
    let hb = entropy(cols.iter().copied(), n);
    if rows.len() == 1 || cols.len() == 1 {
        return if rows.len() == 1 && cols.len() == 1 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[r] as f64 * cols[c] as f64)).ln();
            }
        }
    }
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

/// Harrell's C. A pair is comparable when the shorter time is an event;
/// it is concordant when that subject has the higher risk, and tied risks
/// count one half. `None` when no pair is comparable.
pub fn concordance_index(times: &[f64], events: &[bool], risk: &[f64]) -> Option<f64> {
    assert!(times.len() == events.len() && times.len() == risk.len());
    let n = times.len();
    let mut comparable = 0.0;
    let mut concordant = 0.0;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                comparable += 1.0;
                if risk[i] > risk[j] {
                    concordant += 1.0;
                } else if risk[i] == risk[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    (comparable > 0.0).then(|| concordant / comparable)
}
