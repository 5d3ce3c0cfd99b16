//! Top-N ranking evaluation: Recall@N and NDCG@N with binary relevance.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::RelevanceSet;

pub const DEFAULT_CUTOFFS: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score for item {item} is not finite")]
    NonFiniteScore { item: usize },
    #[error("expected {expected} item scores, got {found}")]
    ScoreCount { expected: usize, found: usize },
    #[error("no evaluable users")]
    NoEvaluableUsers,
    #[error("cutoffs must be positive and non-empty")]
    BadCutoffs,
    #[error("runs disagree on cutoffs")]
    CutoffMismatch,
}

/// Items not in `exclude` ordered by descending score, ties by ascending index.
pub fn rank_items(scores: &[f64], exclude: &[usize]) -> Result<Vec<usize>, MetricsError> {
    if let Some(item) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore { item });
    }
    let mut keep = vec![true; scores.len()];
    for &i in exclude {
        if i < keep.len() {
            keep[i] = false;
        }
    }
    let mut ranked: Vec<usize> = (0..scores.len()).filter(|&i| keep[i]).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(ranked)
}

/// Fraction of `relevant` (ascending) found in the first `n` ranked items.
pub fn recall_at(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(n).filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// DCG of the first `n` ranked items with binary gains.
pub fn dcg_at(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(j, _)| discount(j + 1))
        .sum()
}

/// Best achievable DCG: all of the first `min(|relevant|, n)` slots relevant.
pub fn ideal_dcg_at(n_relevant: usize, n: usize) -> f64 {
    (1..=n_relevant.min(n)).map(discount).sum()
}

pub fn ndcg_at(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    let ideal = ideal_dcg_at(relevant.len(), n);
    if ideal == 0.0 {
        0.0
    } else {
        dcg_at(ranked, relevant, n) / ideal
    }
}

/// Per-user means of one run, indexed like `cutoffs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users: usize,
}

impl RunMetrics {
    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|i| self.ndcg[i])
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|i| self.recall[i])
    }
}

/// Ranks every evaluable user's candidates and averages the metrics.
///
/// `score(u)` returns scores for all items of the domain for local user `u`;
/// `exclude(u)` lists that user's train-observed items.
pub fn evaluate_run<S, E>(
    relevance: &RelevanceSet,
    n_items: usize,
    cutoffs: &[usize],
    mut score: S,
    exclude: E,
) -> Result<RunMetrics, MetricsError>
where
    S: FnMut(usize) -> Vec<f64>,
    E: Fn(usize) -> Vec<usize>,
{
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(MetricsError::BadCutoffs);
    }
    let mut recall = vec![0.0; cutoffs.len()];
    let mut ndcg = vec![0.0; cutoffs.len()];
    let mut n_users = 0;
    for user in relevance.evaluable() {
        let scores = score(user.user);
        if scores.len() != n_items {
            return Err(MetricsError::ScoreCount {
                expected: n_items,
                found: scores.len(),
            });
        }
        let ranked = rank_items(&scores, &exclude(user.user))?;
        for (c, &n) in cutoffs.iter().enumerate() {
            recall[c] += recall_at(&ranked, &user.relevant, n);
            ndcg[c] += ndcg_at(&ranked, &user.relevant, n);
        }
        n_users += 1;
    }
    if n_users == 0 {
        return Err(MetricsError::NoEvaluableUsers);
    }
    let scale = 1.0 / n_users as f64;
    recall.iter_mut().chain(ndcg.iter_mut()).for_each(|v| *v *= scale);
    Ok(RunMetrics {
        cutoffs: cutoffs.to_vec(),
        recall,
        ndcg,
        n_users,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub cutoff: usize,
    pub metric: Metric,
    pub value: f64,
    pub stderr: f64,
}

/// Metrics averaged over runs, with the standard error of the run means.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub recall_stderr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub ndcg_stderr: Vec<f64>,
    /// Evaluated users per run.
    pub n_users_evaluated: Vec<usize>,
    pub seeds: Vec<u64>,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl RankingReport {
    pub fn from_runs(runs: &[RunMetrics], seeds: Vec<u64>) -> Result<Self, MetricsError> {
        let first = runs.first().ok_or(MetricsError::NoEvaluableUsers)?;
        if runs.iter().any(|r| r.cutoffs != first.cutoffs) {
            return Err(MetricsError::CutoffMismatch);
        }
        let column = |f: &dyn Fn(&RunMetrics) -> f64| mean_and_stderr(&runs.iter().map(f).collect::<Vec<_>>());
        let (mut recall, mut recall_stderr, mut ndcg, mut ndcg_stderr) = (vec![], vec![], vec![], vec![]);
        for c in 0..first.cutoffs.len() {
            let (m, s) = column(&|r| r.recall[c]);
            recall.push(m);
            recall_stderr.push(s);
            let (m, s) = column(&|r| r.ndcg[c]);
            ndcg.push(m);
            ndcg_stderr.push(s);
        }
        Ok(RankingReport {
            cutoffs: first.cutoffs.clone(),
            recall,
            recall_stderr,
            ndcg,
            ndcg_stderr,
            n_users_evaluated: runs.iter().map(|r| r.n_users).collect(),
            seeds,
        })
    }

    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|i| self.ndcg[i])
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|i| self.recall[i])
    }

    /// One row per (cutoff, metric), recall rows first.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::with_capacity(2 * self.cutoffs.len());
        for (metric, values, errs) in [
            (Metric::Recall, &self.recall, &self.recall_stderr),
            (Metric::Ndcg, &self.ndcg, &self.ndcg_stderr),
        ] {
            for (i, &cutoff) in self.cutoffs.iter().enumerate() {
                rows.push(ReportRow {
                    cutoff,
                    metric,
                    value: values[i],
                    stderr: errs[i],
                });
            }
        }
        rows
    }

    /// Tab-separated `cutoff metric value stderr` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cutoff\tmetric\tvalue\tstderr\n");
        for r in self.rows() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.cutoff, r.metric.name(), r.value, r.stderr);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "runs: {}  users per run: {:?}\n{:>6}  {:>16}  {:>16}\n",
            self.seeds.len(),
            self.n_users_evaluated,
            "N",
            "recall",
            "ndcg"
        );
        for (i, n) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>6}  {:>8.4} ±{:<7.4}  {:>8.4} ±{:<7.4}",
                n, self.recall[i], self.recall_stderr[i], self.ndcg[i], self.ndcg_stderr[i]
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EvalUser, SplitTag};
    use crate::rng::{stream, Purpose};
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::Rng;

    /// Naive evaluator: explicit candidate list, selection of the best item
    /// one slot at a time, gains summed with a fresh log.
    fn brute_force(scores: &[f64], exclude: &[usize], relevant: &[usize], n: usize) -> (f64, f64) {
        let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
        let mut top = Vec::new();
        while top.len() < n && !candidates.is_empty() {
            let mut best = 0;
            for j in 1..candidates.len() {
                let (a, b) = (candidates[j], candidates[best]);
                if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                    best = j;
                }
            }
            top.push(candidates.remove(best));
        }
        let hits = top.iter().filter(|i| relevant.contains(i)).count();
        let recall = hits as f64 / relevant.len() as f64;
        let mut dcg = 0.0;
        for (pos, item) in top.iter().enumerate() {
            if relevant.contains(item) {
                dcg += (2f64.powi(1) - 1.0) / (pos as f64 + 2.0).log2();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..relevant.len().min(n) {
            idcg += 1.0 / (pos as f64 + 2.0).log2();
        }
        (recall, dcg / idcg)
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[]).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.3; 5], &[]).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[1]).unwrap(), vec![2, 0]);
        assert_eq!(
            rank_items(&[0.1, f64::NAN], &[]),
            Err(MetricsError::NonFiniteScore { item: 1 })
        );
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&[0, 5, 1, 7], &[0, 1, 2, 3], 2), 0.25);
        assert_eq!(recall_at(&[0, 1, 9, 2, 3], &[0, 1, 2, 3], 5), 1.0);
        assert_eq!(recall_at(&[0, 2, 1, 3], &[0, 1, 2, 3], 2), 0.5);
        assert!((recall_at(&[0, 9], &[0, 1, 2], 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_examples() {
        let dcg = dcg_at(&[4, 7, 1], &[4, 7], 10);
        assert!((dcg - 1.6309).abs() < 5e-5);
        assert!((dcg - (1.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
        assert_eq!(ndcg_at(&[4, 7, 1], &[4, 7], 10), 1.0);
        assert_eq!(dcg_at(&[0, 1, 2, 3], &[2], 10), 0.5);
        assert_eq!(ideal_dcg_at(1, 10), 1.0);
        assert_eq!(ndcg_at(&[0, 1, 2, 3], &[2], 10), 0.5);
        assert_eq!(ndcg_at(&[0, 1, 2, 3], &[3], 2), 0.0);
    }

    fn relevance_of(users: Vec<(usize, Vec<usize>)>) -> RelevanceSet {
        RelevanceSet {
            domain: 0,
            tag: SplitTag::Test,
            users: users
                .into_iter()
                .map(|(user, relevant)| EvalUser {
                    user,
                    mean_train: 3.0,
                    held_out: relevant.clone(),
                    relevant,
                })
                .collect(),
        }
    }

    #[test]
    fn single_user_report_equals_user_metrics() {
        let rel = relevance_of(vec![(0, vec![1, 3])]);
        let scores = vec![0.2, 0.1, 0.9, 0.5, 0.0];
        let run = evaluate_run(&rel, 5, &[1, 2, 3], |_| scores.clone(), |_| vec![2]).unwrap();
        let ranked = rank_items(&scores, &[2]).unwrap();
        for (i, n) in [1, 2, 3].into_iter().enumerate() {
            assert_eq!(run.recall[i], recall_at(&ranked, &[1, 3], n));
            assert_eq!(run.ndcg[i], ndcg_at(&ranked, &[1, 3], n));
        }
        let report = RankingReport::from_runs(std::slice::from_ref(&run), vec![7]).unwrap();
        assert_eq!(report.ndcg, run.ndcg);
        assert_eq!(report.ndcg_stderr, vec![0.0; 3]);
        assert_eq!(report.n_users_evaluated, vec![1]);
    }

    #[test]
    fn perfect_scores_give_unit_ndcg() {
        let rel = relevance_of(vec![(0, vec![2, 5]), (1, vec![0]), (2, vec![1, 3, 4])]);
        let run = evaluate_run(
            &rel,
            8,
            &DEFAULT_CUTOFFS,
            |u| {
                let relevant = &rel.users[u].relevant;
                (0..8).map(|i| relevant.contains(&i) as u8 as f64).collect()
            },
            |_| vec![],
        )
        .unwrap();
        assert!(run.ndcg.iter().all(|&v| v == 1.0));
        assert!(run.recall.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn evaluate_rejects_empty_and_bad_input() {
        let rel = relevance_of(vec![]);
        assert_eq!(
            evaluate_run(&rel, 3, &[1], |_| vec![0.0; 3], |_| vec![]),
            Err(MetricsError::NoEvaluableUsers)
        );
        let rel = relevance_of(vec![(0, vec![1])]);
        assert_eq!(evaluate_run(&rel, 3, &[0], |_| vec![0.0; 3], |_| vec![]), Err(MetricsError::BadCutoffs));
        assert!(evaluate_run(&rel, 3, &[1], |_| vec![0.0; 2], |_| vec![]).is_err());
    }

    #[test]
    fn runs_average_with_stderr() {
        let a = RunMetrics {
            cutoffs: vec![10],
            recall: vec![0.2],
            ndcg: vec![0.1],
            n_users: 3,
        };
        let b = RunMetrics {
            recall: vec![0.4],
            ndcg: vec![0.3],
            ..a.clone()
        };
        let r = RankingReport::from_runs(&[a, b], vec![1, 2]).unwrap();
        assert!((r.recall[0] - 0.3).abs() < 1e-15);
        assert!((r.ndcg_stderr[0] - 0.1).abs() < 1e-12);
        assert_eq!(r.rows().len(), 2);
        assert_eq!(r.to_tsv().lines().count(), 3);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = stream(11, Purpose::Synthetic, 0, 0);
        for _ in 0..200 {
            let n_items = rng.random_range(2..=30);
            let scores: Vec<f64> = (0..n_items).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
            let mut items: Vec<usize> = (0..n_items).collect();
            items.shuffle(&mut rng);
            let n_ex = rng.random_range(0..n_items / 2 + 1);
            let exclude: Vec<usize> = items[..n_ex].to_vec();
            let rest = &items[n_ex..];
            let n_rel = rng.random_range(1..=rest.len().min(10));
            let mut relevant: Vec<usize> = rest[..n_rel].to_vec();
            relevant.sort_unstable();
            let ranked = rank_items(&scores, &exclude).unwrap();
            for n in 1..=n_items {
                let (r, g) = brute_force(&scores, &exclude, &relevant, n);
                assert_eq!(recall_at(&ranked, &relevant, n), r);
                assert!((ndcg_at(&ranked, &relevant, n) - g).abs() <= 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn recall_is_monotone_and_bounded(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..30),
            picks in proptest::collection::vec(0usize..30, 1..10),
        ) {
            let n = scores.len();
            let mut relevant: Vec<usize> = picks.into_iter().map(|p| p % n).collect();
            relevant.sort_unstable();
            relevant.dedup();
            let ranked = rank_items(&scores, &[]).unwrap();
            let mut prev = 0.0;
            for cut in 1..=n + 2 {
                let r = recall_at(&ranked, &relevant, cut);
                let g = ndcg_at(&ranked, &relevant, cut);
                prop_assert!(r >= prev && r <= 1.0);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&g));
                prev = r;
            }
        }

        #[test]
        fn ndcg_ignores_irrelevant_order_below_last_hit(
            seed in 0u64..1000,
            n_items in 4usize..25,
        ) {
            let mut rng = stream(seed, Purpose::Synthetic, 1, 0);
            let mut ranked: Vec<usize> = (0..n_items).collect();
            ranked.shuffle(&mut rng);
            let cutoff = rng.random_range(2..=n_items);
            let n_rel = rng.random_range(1..=cutoff.min(4));
            let mut relevant: Vec<usize> = ranked[..cutoff].choose_multiple(&mut rng, n_rel).copied().collect();
            relevant.sort_unstable();
            let last_hit = ranked.iter().rposition(|i| relevant.contains(i)).unwrap();
            let before = ndcg_at(&ranked, &relevant, cutoff);
            let mut permuted = ranked.clone();
            permuted[last_hit + 1..].shuffle(&mut rng);
            prop_assert_eq!(before, ndcg_at(&permuted, &relevant, cutoff));
        }
    }
}
