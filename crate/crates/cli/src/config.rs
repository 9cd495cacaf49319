//! Run configuration: a sectioned TOML file with one table per stage.
//! Every key is optional; desk-scale defaults documented in the README
//! fill the gaps. Unknown keys are rejected so typos surface early.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use otpl_core::kge::Family;
use otpl_core::pipeline::AblationStrategy;
use otpl_core::pseudo::{PseudoConfig, Strategy, ThresholdSource};
use otpl_core::score::{LossKind, ScoreTrainConfig};
use otpl_core::synth::SynthConfig;
use otpl_core::KgTrainConfig64;

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub synth: Option<SynthSection>,
    pub score_train: Option<ScoreTrainSection>,
    pub pseudo: Option<PseudoSection>,
    pub kg_train: Option<KgTrainSection>,
    pub eval: Option<EvalSection>,
    pub ablate: Option<AblateSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_mols: Option<usize>,
    pub n_prots: Option<usize>,
    pub dim: Option<usize>,
    pub n_clusters: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub label_fraction: Option<f64>,
    pub extra_relations: Option<usize>,
}

impl SynthSection {
    pub fn resolve(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_mols: self.n_mols.unwrap_or(300),
            n_prots: self.n_prots.unwrap_or(150),
            dim: self.dim.unwrap_or(32),
            n_clusters: self.n_clusters.unwrap_or(4),
            noise_sigma: self.noise_sigma.unwrap_or(0.3),
            label_fraction: self.label_fraction.unwrap_or(0.1),
            seed,
        }
    }

    pub fn extra_relations(&self) -> usize {
        self.extra_relations.unwrap_or(2)
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct ScoreTrainSection {
    pub embeddings: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub relation: Option<String>,
    pub mol_namespace: Option<String>,
    pub prot_namespace: Option<String>,
    pub hidden_dims: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub loss: Option<String>,
    pub ot_epsilon: Option<f64>,
    pub temperature: Option<f64>,
}

impl ScoreTrainSection {
    pub fn resolve(&self) -> Result<ScoreTrainConfig<f64>> {
        let loss = match self.loss.as_deref().unwrap_or("ot_kl") {
            "ot_kl" => LossKind::OtKl,
            "infonce" => LossKind::InfoNce,
            other => bail!("score_train.loss must be `ot_kl` or `infonce`, got `{other}`"),
        };
        Ok(ScoreTrainConfig {
            hidden_dims: self.hidden_dims.clone().unwrap_or_else(|| vec![64, 32]),
            batch_size: self.batch_size.unwrap_or(64),
            learning_rate: self.learning_rate.unwrap_or(1e-3),
            weight_decay: self.weight_decay.unwrap_or(0.01),
            max_epochs: self.max_epochs.unwrap_or(12),
            early_stop_patience: self.early_stop_patience.unwrap_or(3),
            loss,
            ot_epsilon: self.ot_epsilon.unwrap_or(0.1),
            temperature: self.temperature.unwrap_or(0.1),
            val_fraction: 0.1,
        })
    }

    pub fn namespaces(&self) -> (String, String) {
        (
            self.mol_namespace.clone().unwrap_or_else(|| "MOL".into()),
            self.prot_namespace.clone().unwrap_or_else(|| "PROT".into()),
        )
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct PseudoSection {
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub mol_namespace: Option<String>,
    pub prot_namespace: Option<String>,
    pub strategy: Option<String>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub outer_max_iter: Option<usize>,
    pub delta: Option<f64>,
    pub threshold_source: Option<String>,
    pub topk_k: Option<usize>,
    pub projection_rounds: Option<usize>,
    pub random_matched_count: Option<usize>,
    pub sinkhorn_tol: Option<f64>,
    pub sinkhorn_max_iter: Option<usize>,
}

impl PseudoSection {
    pub fn resolve(&self) -> Result<PseudoConfig<f64>> {
        let strategy = match self.strategy.as_deref().unwrap_or("ot_sim") {
            "ot_sim" => Strategy::OtSim,
            "ot_plain" => Strategy::OtPlain,
            "topk" => Strategy::TopK,
            "random" => Strategy::Random,
            "none" => Strategy::None,
            other => bail!("pseudo.strategy `{other}` is not one of ot_sim|ot_plain|topk|random|none"),
        };
        let threshold_source = match self.threshold_source.as_deref().unwrap_or("score") {
            "score" => ThresholdSource::Score,
            "normalized_plan" => ThresholdSource::NormalizedPlan,
            other => bail!("pseudo.threshold_source `{other}` is not `score` or `normalized_plan`"),
        };
        Ok(PseudoConfig {
            lambda: self.lambda.unwrap_or(0.1),
            eta: self.eta.unwrap_or(1.0),
            epsilon: self.epsilon.unwrap_or(0.01),
            outer_max_iter: self.outer_max_iter.unwrap_or(50),
            delta: self.delta.unwrap_or(0.5),
            threshold_source,
            strategy,
            topk_k: self.topk_k.unwrap_or(5),
            projection_rounds: self.projection_rounds.unwrap_or(20),
            sinkhorn_tol: self.sinkhorn_tol.unwrap_or(1e-6),
            sinkhorn_max_iter: self.sinkhorn_max_iter.unwrap_or(20_000),
        })
    }

    pub fn namespaces(&self) -> (String, String) {
        (
            self.mol_namespace.clone().unwrap_or_else(|| "MOL".into()),
            self.prot_namespace.clone().unwrap_or_else(|| "PROT".into()),
        )
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct KgTrainSection {
    pub triples: Option<PathBuf>,
    pub pseudo_labels: Option<PathBuf>,
    pub family: Option<String>,
    pub alpha: Option<f64>,
    pub dim: Option<usize>,
    pub gamma: Option<f64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub negatives_per_positive: Option<usize>,
    pub squash_pseudo: Option<bool>,
    pub include_pseudo_in_kg: Option<bool>,
}

impl KgTrainSection {
    pub fn resolve(&self, seed: u64) -> Result<(Family, KgTrainConfig64)> {
        let family = Family::parse(self.family.as_deref().unwrap_or("toruse"))
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let cfg = KgTrainConfig64 {
            alpha: self.alpha.unwrap_or(0.1),
            dim: self.dim.unwrap_or(32),
            gamma: self.gamma.unwrap_or(6.0),
            batch_size: self.batch_size.unwrap_or(256),
            learning_rate: self.learning_rate.unwrap_or(0.02),
            epochs: self.epochs.unwrap_or(60),
            negatives_per_positive: self.negatives_per_positive.unwrap_or(1),
            squash_pseudo: self.squash_pseudo.unwrap_or(true),
            include_pseudo_in_kg: self.include_pseudo_in_kg.unwrap_or(true),
            seed,
        };
        Ok((family, cfg))
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub mode: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub pseudo_labels: Option<PathBuf>,
    pub test_triples: Option<PathBuf>,
    pub ks: Option<Vec<usize>>,
    pub max_queries: Option<usize>,
    pub scores: Option<PathBuf>,
    pub fractions: Option<Vec<f64>>,
    pub bedroc_alpha: Option<f64>,
}

impl EvalSection {
    pub fn ks(&self) -> Vec<usize> {
        self.ks.clone().unwrap_or_else(|| vec![1, 3, 5])
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.fractions.clone().unwrap_or_else(|| vec![0.01, 0.05])
    }

    pub fn bedroc_alpha(&self) -> f64 {
        self.bedroc_alpha.unwrap_or(20.0)
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub strategies: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub family: Option<String>,
    pub ks: Option<Vec<usize>>,
    pub max_eval_queries: Option<usize>,
}

impl AblateSection {
    pub fn strategies(&self) -> Result<Vec<AblationStrategy>> {
        match &self.strategies {
            None => Ok(AblationStrategy::ALL.to_vec()),
            Some(names) => names
                .iter()
                .map(|n| AblationStrategy::parse(n).map_err(|e| anyhow::anyhow!("{e}")))
                .collect(),
        }
    }

    pub fn seeds(&self, global: u64) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (1..=5).map(|i| global.wrapping_add(i)).collect())
    }
}

/// Requires a path-valued key, naming it in the error.
pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| format!("config key `{key}` is required for this command"))
}
