//! End-to-end orchestration of the four-stage workflow: synthesize (or
//! load) data, train the scorer, generate pseudo-labels under a chosen
//! strategy, train a KG embedding with the injected edges, and evaluate
//! held-out links. The ablation driver runs the strategy grid across seeds
//! with shared data and a shared scorer per seed.

use std::collections::BTreeMap;

use crate::embeddings::{cosine_similarity_matrix, l2_normalize, EmbeddingMatrix, EntityId};
use crate::error::{Error, Result};
use crate::kg::{inject_pseudo_edges, KnowledgeGraph, Split, Triple};
use crate::kge::{train_kg, Family, KgTrainConfig, KgTrainResult};
use crate::metrics::{evaluate_link_prediction, MetricsReport};
use crate::ot::MarginalPair;
use crate::pseudo::{
    baseline_pseudo, extract_pseudo_labels, generate_plan, PseudoConfig, PseudoLabelSet, Strategy,
};
use crate::rng::stage_rng;
use crate::scalar::Real;
use crate::score::{score_matrix, train_score_model, ScoreModelParams, ScoreTrainConfig, ScoreTrainResult};
use crate::synth::{gen_embeddings, gen_planted_kg, SynthConfig, INTERACTS_RELATION};

/// Normalized embeddings, the planted graph, and the supervision pairs.
#[derive(Debug, Clone)]
pub struct PreparedData<R> {
    pub mols: EmbeddingMatrix<R>,
    pub prots: EmbeddingMatrix<R>,
    pub kg: KnowledgeGraph<R>,
    pub hidden: Vec<(EntityId, EntityId)>,
    pub labeled_pairs: Vec<(usize, usize)>,
}

/// Generates synthetic data and wires it into pipeline-ready form.
pub fn prepare_synth_data<R: Real>(
    synth: &SynthConfig,
    extra_relations: usize,
) -> Result<PreparedData<R>> {
    let emb = gen_embeddings::<R>(synth)?;
    let planted = gen_planted_kg::<R>(synth, extra_relations)?;
    let mols = l2_normalize(&emb.mols)?;
    let prots = l2_normalize(&emb.prots)?;
    let labeled_pairs = labeled_pairs_from(&planted.kg, INTERACTS_RELATION, &mols, &prots)?;
    Ok(PreparedData {
        mols,
        prots,
        kg: planted.kg,
        hidden: planted.hidden_true_pairs,
        labeled_pairs,
    })
}

/// Maps a relation's triples onto (molecule row, protein row) index pairs
/// in the given embedding tables.
pub fn labeled_pairs_from<R: Real>(
    kg: &KnowledgeGraph<R>,
    relation: &str,
    mols: &EmbeddingMatrix<R>,
    prots: &EmbeddingMatrix<R>,
) -> Result<Vec<(usize, usize)>> {
    let Some(rel) = kg.relation_idx(relation) else {
        return Ok(Vec::new());
    };
    let mol_idx: std::collections::HashMap<&EntityId, usize> =
        mols.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let prot_idx: std::collections::HashMap<&EntityId, usize> =
        prots.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut pairs = Vec::new();
    for t in kg.triples() {
        if t[1] != rel {
            continue;
        }
        let head = kg.entity(t[0]);
        let tail = kg.entity(t[2]);
        match (mol_idx.get(head), prot_idx.get(tail)) {
            (Some(&mi), Some(&pi)) => pairs.push((mi, pi)),
            _ => {
                return Err(Error::Config(format!(
                    "triple {head} -{relation}-> {tail} does not match the embedding tables"
                )))
            }
        }
    }
    Ok(pairs)
}

/// Trains the pairwise scorer on the prepared supervision pairs.
pub fn train_scorer<R: Real>(
    data: &PreparedData<R>,
    cfg: &ScoreTrainConfig<R>,
    seed: u64,
) -> Result<ScoreTrainResult<R>> {
    train_score_model(&data.labeled_pairs, &data.mols, &data.prots, cfg, seed)
}

/// Ablation strategies: the pseudo-labeler strategies plus the
/// high-entropy OT variant (plain OT at epsilon = 0.1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationStrategy {
    None,
    Random,
    TopK,
    OtPlain,
    OtHighEntropy,
    OtSim,
}

impl AblationStrategy {
    pub const ALL: [AblationStrategy; 6] = [
        AblationStrategy::None,
        AblationStrategy::Random,
        AblationStrategy::TopK,
        AblationStrategy::OtPlain,
        AblationStrategy::OtHighEntropy,
        AblationStrategy::OtSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationStrategy::None => "none",
            AblationStrategy::Random => "random",
            AblationStrategy::TopK => "topk",
            AblationStrategy::OtPlain => "ot_plain",
            AblationStrategy::OtHighEntropy => "ot_high_entropy",
            AblationStrategy::OtSim => "ot_sim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AblationStrategy::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }

    /// Specializes the base pseudo config for this strategy.
    pub fn pseudo_config<R: Real>(self, base: &PseudoConfig<R>) -> PseudoConfig<R> {
        let mut cfg = base.clone();
        cfg.strategy = match self {
            AblationStrategy::None => Strategy::None,
            AblationStrategy::Random => Strategy::Random,
            AblationStrategy::TopK => Strategy::TopK,
            AblationStrategy::OtPlain => Strategy::OtPlain,
            AblationStrategy::OtSim => Strategy::OtSim,
            AblationStrategy::OtHighEntropy => {
                cfg.epsilon = R::of(0.1);
                Strategy::OtPlain
            }
        };
        cfg
    }
}

/// Pseudo-label stage output.
#[derive(Debug, Clone)]
pub struct LabelRun<R> {
    pub labels: PseudoLabelSet<R>,
    /// Combined objective per outer round (OT strategies only).
    pub objective: Vec<f64>,
}

/// Runs the configured strategy over the full score matrix.
/// `matched_count` feeds the random baseline (pair count of a reference
/// run); it is ignored by every other strategy.
pub fn make_labels<R: Real>(
    scorer: &ScoreModelParams<R>,
    data: &PreparedData<R>,
    cfg: &PseudoConfig<R>,
    matched_count: usize,
    seed: u64,
) -> Result<LabelRun<R>> {
    let scores = score_matrix(scorer, &data.mols, &data.prots)?;
    match cfg.strategy {
        Strategy::OtSim | Strategy::OtPlain => {
            let sim = cosine_similarity_matrix(&data.mols)?;
            let marginals = MarginalPair::uniform(data.mols.len(), data.prots.len());
            let run = generate_plan(&scores, &sim, cfg, &marginals)?;
            let labels = extract_pseudo_labels(&scores, &run.plan, cfg)?;
            Ok(LabelRun {
                labels,
                objective: run.objective.iter().map(|x| x.to64()).collect(),
            })
        }
        Strategy::TopK | Strategy::Random | Strategy::None => {
            let labels = baseline_pseudo(&scores, cfg, matched_count, seed)?;
            Ok(LabelRun { labels, objective: Vec::new() })
        }
    }
}

/// Injects labels, trains the configured family, and returns the model
/// along with the graph it was trained on.
pub fn train_kg_stage<R: Real>(
    data: &PreparedData<R>,
    labels: &PseudoLabelSet<R>,
    family: Family,
    cfg: &KgTrainConfig<R>,
) -> Result<(KgTrainResult<R>, KnowledgeGraph<R>)> {
    let (kg, _stats) = inject_pseudo_edges(&data.kg, labels);
    let result = train_kg(&kg, family, cfg)?;
    Ok((result, kg))
}

/// Builds the held-out split from hidden pairs and evaluates Hits@K over
/// both directions. The whole hidden set enters the filter (they are all
/// known truths of the split); `max_queries > 0` only subsamples which
/// queries are scored, with a seeded shuffle, to bound evaluation cost.
pub fn eval_hidden_pairs<R: Real>(
    model: &crate::kge::KgModelParams<R>,
    trained_kg: &KnowledgeGraph<R>,
    hidden: &[(EntityId, EntityId)],
    ks: &[usize],
    max_queries: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if hidden.is_empty() {
        return Err(Error::DegenerateMetric("no hidden pairs to evaluate".into()));
    }
    let mut filter_kg = trained_kg.clone();
    for (m, p) in hidden {
        filter_kg.add_triple(m.clone(), INTERACTS_RELATION, p.clone());
    }
    let mut picked: Vec<&(EntityId, EntityId)> = hidden.iter().collect();
    if max_queries > 0 && max_queries < picked.len() {
        let mut rng = stage_rng(seed, "eval-subsample");
        crate::rng::seeded_shuffle(&mut picked, &mut rng);
        picked.truncate(max_queries);
    }
    let test: Vec<Triple> = picked
        .into_iter()
        .map(|(m, p)| Triple {
            head: m.clone(),
            relation: crate::kg::RelationId::new(INTERACTS_RELATION),
            tail: p.clone(),
        })
        .collect();
    let split = Split { train: trained_kg.clone(), test };
    let (report, _ranks) = evaluate_link_prediction(model, &split, &filter_kg, ks)?;
    Ok(report)
}

/// One full strategy run: labels -> injection -> KG training -> held-out
/// evaluation. Returns the metrics and the label count.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy_pipeline<R: Real>(
    data: &PreparedData<R>,
    scorer: &ScoreModelParams<R>,
    strategy: AblationStrategy,
    base_pseudo: &PseudoConfig<R>,
    kg_cfg: &KgTrainConfig<R>,
    family: Family,
    ks: &[usize],
    max_eval_queries: usize,
    matched_count: usize,
    seed: u64,
) -> Result<(MetricsReport, usize)> {
    let cfg = strategy.pseudo_config(base_pseudo);
    let run = make_labels(scorer, data, &cfg, matched_count, seed)?;
    let (trained, kg) = train_kg_stage(data, &run.labels, family, kg_cfg)?;
    let report = eval_hidden_pairs(&trained.params, &kg, &data.hidden, ks, max_eval_queries, seed)?;
    Ok((report, run.labels.len()))
}

/// Per-strategy aggregate over seeds.
#[derive(Debug, Clone, Default)]
pub struct StrategySummary {
    pub mean: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    pub per_seed: Vec<BTreeMap<String, f64>>,
    pub pair_counts: Vec<usize>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub strategies: BTreeMap<String, StrategySummary>,
    pub seeds: Vec<u64>,
}

impl AblationReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut strategies = serde_json::Map::new();
        for (name, s) in &self.strategies {
            strategies.insert(
                name.clone(),
                serde_json::json!({
                    "mean": s.mean,
                    "stderr": s.stderr,
                    "per_seed": s.per_seed,
                    "pair_counts": s.pair_counts,
                    "errors": s.errors,
                }),
            );
        }
        serde_json::json!({ "seeds": self.seeds, "strategies": strategies })
    }
}

/// Settings for the strategy-grid ablation.
#[derive(Debug, Clone)]
pub struct AblationSpec<R> {
    pub synth: SynthConfig,
    pub extra_relations: usize,
    pub score: ScoreTrainConfig<R>,
    pub pseudo: PseudoConfig<R>,
    pub kg: KgTrainConfig<R>,
    pub family: Family,
    pub strategies: Vec<AblationStrategy>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub max_eval_queries: usize,
}

/// Runs every strategy over every seed with shared synthetic data and a
/// shared scorer per seed. Per-strategy failures are recorded and do not
/// abort the remaining grid.
pub fn run_ablation<R: Real>(spec: &AblationSpec<R>) -> Result<AblationReport> {
    let mut report = AblationReport { seeds: spec.seeds.clone(), ..Default::default() };
    for name in spec.strategies.iter().map(|s| s.name()) {
        report.strategies.insert(name.to_string(), StrategySummary::default());
    }
    let need_matched = spec.strategies.contains(&AblationStrategy::Random);

    for &seed in &spec.seeds {
        let synth = SynthConfig { seed, ..spec.synth.clone() };
        let data = prepare_synth_data::<R>(&synth, spec.extra_relations)?;
        let kg_cfg = KgTrainConfig { seed, ..spec.kg.clone() };
        let scorer = train_scorer(&data, &spec.score, seed)?.params;

        // The random baseline matches the count of the full method's run.
        let mut matched_count = 0usize;
        if need_matched {
            let cfg = AblationStrategy::OtSim.pseudo_config(&spec.pseudo);
            matched_count = make_labels(&scorer, &data, &cfg, 0, seed)?.labels.len();
        }

        for &strategy in &spec.strategies {
            let outcome = run_strategy_pipeline(
                &data,
                &scorer,
                strategy,
                &spec.pseudo,
                &kg_cfg,
                spec.family,
                &spec.ks,
                spec.max_eval_queries,
                matched_count,
                seed,
            );
            let summary = report.strategies.get_mut(strategy.name()).expect("pre-registered");
            match outcome {
                Ok((metrics, pair_count)) => {
                    summary.per_seed.push(metrics.values.clone());
                    summary.pair_counts.push(pair_count);
                }
                Err(e) => summary.errors.push(format!("seed {seed}: {e}")),
            }
        }
    }

    for summary in report.strategies.values_mut() {
        summarize(summary);
    }
    Ok(report)
}

fn summarize(summary: &mut StrategySummary) {
    let n = summary.per_seed.len();
    if n == 0 {
        return;
    }
    let keys: Vec<String> = summary.per_seed[0].keys().cloned().collect();
    for key in keys {
        let vals: Vec<f64> = summary.per_seed.iter().filter_map(|m| m.get(&key)).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        } else {
            0.0
        };
        summary.mean.insert(key.clone(), mean);
        summary.stderr.insert(key, (var / vals.len() as f64).sqrt());
    }
}
