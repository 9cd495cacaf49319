//! Ranking and screening metrics (Hits@K, AUROC, BEDROC, enrichment
//! factor) plus the evaluation drivers for link prediction and virtual
//! screening. Ties are always broken deterministically by ascending
//! original index.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Split};
use crate::kge::{rank_candidates, Direction, KgModelParams, RankQuery};
use crate::scalar::Real;

/// Rank of the true answer for one query, 1-based, after filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    pub query: String,
    pub rank_of_truth: usize,
}

/// Scored items with binary activity labels.
#[derive(Debug, Clone)]
pub struct LabeledScores<R> {
    pub scores: Vec<R>,
    pub labels: Vec<bool>,
}

impl<R: Real> LabeledScores<R> {
    pub fn new(scores: Vec<R>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("scores must be finite".into()));
        }
        Ok(Self { scores, labels })
    }

    fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    fn check_two_classes(&self) -> Result<()> {
        let p = self.n_pos();
        if p == 0 || p == self.labels.len() {
            return Err(Error::DegenerateMetric(
                "need at least one active and one inactive".into(),
            ));
        }
        Ok(())
    }

    /// Indices sorted by descending score, ties by ascending original index.
    fn ranked_indices(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b].partial_cmp(&self.scores[a]).unwrap().then(a.cmp(&b))
        });
        order
    }
}

/// Fraction of queries whose true answer ranks in the top `k`.
pub fn hits_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::DegenerateMetric("hits@k over an empty result set".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let hits = results.iter().filter(|r| r.rank_of_truth <= k).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mann-Whitney AUROC: `P(score_pos > score_neg) + 0.5 P(tie)`. Exact pair
/// counting up to 10^4 items, rank-sum with tie correction beyond; the two
/// paths agree to high precision.
pub fn auroc<R: Real>(d: &LabeledScores<R>) -> Result<f64> {
    d.check_two_classes()?;
    if d.scores.len() <= 10_000 {
        Ok(auroc_pair_count(d))
    } else {
        Ok(auroc_rank_sum(d))
    }
}

fn auroc_pair_count<R: Real>(d: &LabeledScores<R>) -> f64 {
    let mut concordant = 0.0f64;
    let mut total = 0.0f64;
    for (i, &li) in d.labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in d.labels.iter().enumerate() {
            if lj {
                continue;
            }
            total += 1.0;
            if d.scores[i] > d.scores[j] {
                concordant += 1.0;
            } else if d.scores[i] == d.scores[j] {
                concordant += 0.5;
            }
        }
    }
    concordant / total
}

fn auroc_rank_sum<R: Real>(d: &LabeledScores<R>) -> f64 {
    // Average ranks over tie groups (midranks), ascending scores.
    let n = d.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d.scores[a].partial_cmp(&d.scores[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d.scores[order[j + 1]] == d.scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let n_pos = d.n_pos() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 =
        (0..n).filter(|&i| d.labels[i]).map(|i| ranks[i]).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Truchon-Bayly BEDROC in [0,1]: exponentially weighted early recognition
/// with parameter `alpha`.
pub fn bedroc<R: Real>(d: &LabeledScores<R>, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::Config("BEDROC alpha must be positive".into()));
    }
    d.check_two_classes()?;
    let n = d.scores.len() as f64;
    let order = d.ranked_indices();
    let n_act = d.n_pos() as f64;
    let ra = n_act / n;

    let mut weighted_sum = 0.0f64;
    for (pos, &idx) in order.iter().enumerate() {
        if d.labels[idx] {
            let rank = (pos + 1) as f64;
            weighted_sum += (-alpha * rank / n).exp();
        }
    }
    let rie_denom = ra * (1.0 - (-alpha).exp()) / ((alpha / n).exp() - 1.0);
    let rie = weighted_sum / rie_denom;
    let value = rie * ra * (alpha / 2.0).sinh() / ((alpha / 2.0).cosh() - (alpha / 2.0 - alpha * ra).cosh())
        + 1.0 / (1.0 - (alpha * (1.0 - ra)).exp());
    Ok(value.clamp(0.0, 1.0))
}

/// Enrichment factor at a top fraction:
/// `(actives in top ceil(f N) / ceil(f N)) / (actives / N)`.
pub fn enrichment_factor<R: Real>(d: &LabeledScores<R>, fraction: f64) -> Result<f64> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Config("EF fraction must lie in (0, 1]".into()));
    }
    d.check_two_classes()?;
    let n = d.scores.len();
    let top = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let order = d.ranked_indices();
    let hits = order[..top].iter().filter(|&&i| d.labels[i]).count();
    let n_act = d.n_pos();
    Ok((hits as f64 / top as f64) / (n_act as f64 / n as f64))
}

/// Metric values keyed by name, with optional per-target breakdown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub values: BTreeMap<String, f64>,
    pub per_target: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: BTreeMap<String, serde_json::Value>,
    pub seed: Option<u64>,
}

impl MetricsReport {
    /// Single JSON object: metric names at the top level plus `per_target`,
    /// `config`, and `seed`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.values {
            obj.insert(k.clone(), serde_json::json!(v));
        }
        if !self.per_target.is_empty() {
            obj.insert("per_target".into(), serde_json::json!(self.per_target));
        }
        if !self.config.is_empty() {
            obj.insert("config".into(), serde_json::Value::Object(self.config.clone().into_iter().collect()));
        }
        if let Some(s) = self.seed {
            obj.insert("seed".into(), serde_json::json!(s));
        }
        serde_json::Value::Object(obj)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Filtered both-direction link prediction: each test triple queries the
/// true tail among all same-namespace entities and the true head likewise;
/// other known true triples are removed from the candidate list. Hits@K is
/// averaged over both directions of every query.
pub fn evaluate_link_prediction<R: Real>(
    model: &KgModelParams<R>,
    split: &Split<R>,
    full_kg: &KnowledgeGraph<R>,
    ks: &[usize],
) -> Result<(MetricsReport, Vec<RankingResult>)> {
    if split.test.is_empty() {
        return Err(Error::DegenerateMetric("empty test set".into()));
    }
    let mut filter: HashSet<[usize; 3]> = full_kg.triple_set().clone();
    // Test triples may have been split off the graph the filter came from.
    for t in &split.test {
        if let Some(idx) = resolve(full_kg, t) {
            filter.insert(idx);
        }
    }
    let mut results = Vec::with_capacity(split.test.len() * 2);
    for t in &split.test {
        let Some(idx) = resolve(full_kg, t) else {
            return Err(Error::Config(format!(
                "test triple {}\t{}\t{} not resolvable in the graph vocabulary",
                t.head, t.relation, t.tail
            )));
        };
        for (direction, target, known) in
            [(Direction::Tail, idx[2], idx[0]), (Direction::Head, idx[0], idx[2])]
        {
            let ns = &full_kg.entity(target).namespace;
            let candidates = full_kg.namespace_entities(ns);
            filter.remove(&idx);
            let ranked = rank_candidates(
                model,
                RankQuery { known, relation: idx[1], direction },
                &candidates,
                &filter,
            )?;
            filter.insert(idx);
            let rank = ranked
                .iter()
                .position(|&(e, _)| e == target)
                .map(|p| p + 1)
                .ok_or_else(|| Error::Config("target missing from candidate ranking".into()))?;
            let tag = match direction {
                Direction::Tail => "tail",
                Direction::Head => "head",
            };
            results.push(RankingResult {
                query: format!("{}:{}:{}", tag, t.head, t.tail),
                rank_of_truth: rank,
            });
        }
    }
    let mut report = MetricsReport::default();
    for &k in ks {
        report.values.insert(format!("hits@{k}"), hits_at_k(&results, k)?);
    }
    Ok((report, results))
}

fn resolve<R: Real>(kg: &KnowledgeGraph<R>, t: &crate::kg::Triple) -> Option<[usize; 3]> {
    Some([
        kg.entity_idx(&t.head)?,
        kg.relation_idx(t.relation.name())?,
        kg.entity_idx(&t.tail)?,
    ])
}

/// Per-target AUROC / BEDROC(alpha) / EF@fraction, macro-averaged across
/// targets.
pub fn evaluate_screening<R: Real>(
    per_target: &[(String, LabeledScores<R>)],
    fractions: &[f64],
    alpha: f64,
) -> Result<MetricsReport> {
    if per_target.is_empty() {
        return Err(Error::DegenerateMetric("no screening targets".into()));
    }
    let mut report = MetricsReport::default();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for (name, data) in per_target {
        let mut row = BTreeMap::new();
        row.insert("auroc".to_string(), auroc(data)?);
        row.insert(format!("bedroc@{alpha}"), bedroc(data, alpha)?);
        for &f in fractions {
            row.insert(format!("ef@{f}"), enrichment_factor(data, f)?);
        }
        for (k, v) in &row {
            *sums.entry(k.clone()).or_insert(0.0) += v;
        }
        report.per_target.insert(name.clone(), row);
    }
    let n = per_target.len() as f64;
    for (k, s) in sums {
        report.values.insert(k, s / n);
    }
    Ok(report)
}
