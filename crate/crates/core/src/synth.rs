//! Seeded synthetic data with planted ground truth: molecules and proteins
//! drawn around shared cluster centers (so cosine similarity is informative
//! by construction), plus a knowledge graph that reveals a fraction of the
//! true pairs and wires cluster-context relations around the rest.

use rand::Rng;

use crate::embeddings::{EmbeddingMatrix, EntityId};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::linalg::Mat;
use crate::rng::stage_rng;
use crate::scalar::Real;

pub const INTERACTS_RELATION: &str = "interacts";

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_mols: usize,
    pub n_prots: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub noise_sigma: f64,
    /// Fraction of true pairs revealed as supervision edges.
    pub label_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mols == 0 || self.n_prots == 0 {
            return Err(Error::Config("need at least one molecule and one protein".into()));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_mols.min(self.n_prots) {
            return Err(Error::Config(
                "n_clusters must be in 1..=min(n_mols, n_prots)".into(),
            ));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if self.noise_sigma < 0.0 || !(0.0..=1.0).contains(&self.label_fraction) {
            return Err(Error::Config(
                "noise_sigma must be nonnegative and label_fraction in [0,1]".into(),
            ));
        }
        Ok(())
    }

    fn mol_cluster(&self, i: usize) -> usize {
        i % self.n_clusters
    }

    fn prot_cluster(&self, j: usize) -> usize {
        j % self.n_clusters
    }

    /// All same-cluster (molecule, protein) index pairs, row-major.
    pub fn true_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n_mols {
            for j in 0..self.n_prots {
                if self.mol_cluster(i) == self.prot_cluster(j) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone)]
pub struct SynthEmbeddings<R> {
    pub mols: EmbeddingMatrix<R>,
    pub prots: EmbeddingMatrix<R>,
    pub true_pairs: Vec<(usize, usize)>,
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; the second draw is discarded for sequencing simplicity.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Cluster centers on the unit sphere plus isotropic noise per entity.
pub fn gen_embeddings<R: Real>(cfg: &SynthConfig) -> Result<SynthEmbeddings<R>> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, "synth-embeddings");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_clusters);
    for _ in 0..cfg.n_clusters {
        let mut c: Vec<f64> = (0..cfg.dim).map(|_| standard_normal(&mut rng)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut c {
            *x /= norm;
        }
        centers.push(c);
    }
    let draw = |cluster: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<R> {
        centers[cluster]
            .iter()
            .map(|&c| R::of(c + cfg.noise_sigma * standard_normal(rng)))
            .collect()
    };
    let mut mol_rows = Vec::with_capacity(cfg.n_mols);
    for i in 0..cfg.n_mols {
        mol_rows.push(draw(cfg.mol_cluster(i), &mut rng));
    }
    let mut prot_rows = Vec::with_capacity(cfg.n_prots);
    for j in 0..cfg.n_prots {
        prot_rows.push(draw(cfg.prot_cluster(j), &mut rng));
    }
    let mols = EmbeddingMatrix::new(
        (0..cfg.n_mols).map(|i| EntityId::new("MOL", format!("m{i}"))).collect(),
        cfg.dim,
        Mat::from_rows(&mol_rows),
    );
    let prots = EmbeddingMatrix::new(
        (0..cfg.n_prots).map(|j| EntityId::new("PROT", format!("p{j}"))).collect(),
        cfg.dim,
        Mat::from_rows(&prot_rows),
    );
    Ok(SynthEmbeddings { mols, prots, true_pairs: cfg.true_pairs() })
}

#[derive(Debug, Clone)]
pub struct PlantedKg<R> {
    pub kg: KnowledgeGraph<R>,
    /// True pairs withheld from the graph; the evaluation targets.
    pub hidden_true_pairs: Vec<(EntityId, EntityId)>,
}

/// Emits a graph with `label_fraction` of the true pairs as `interacts`
/// edges, the rest returned as hidden evaluation targets, plus
/// `extra_relations` cluster-context relation types that keep every entity
/// attached to the graph.
pub fn gen_planted_kg<R: Real>(cfg: &SynthConfig, extra_relations: usize) -> Result<PlantedKg<R>> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, "synth-kg");
    let mut pairs = cfg.true_pairs();
    crate::rng::seeded_shuffle(&mut pairs, &mut rng);
    let n_visible = (cfg.label_fraction * pairs.len() as f64).round() as usize;
    let (visible, hidden) = pairs.split_at(n_visible.min(pairs.len()));

    let mol_id = |i: usize| EntityId::new("MOL", format!("m{i}"));
    let prot_id = |j: usize| EntityId::new("PROT", format!("p{j}"));

    let mut kg = KnowledgeGraph::new();
    let mut visible = visible.to_vec();
    visible.sort_unstable();
    for &(i, j) in &visible {
        kg.add_triple(mol_id(i), INTERACTS_RELATION, prot_id(j));
    }
    // Context hubs are within-cluster but modality-local and sharded, the
    // way functional annotations group a handful of related entities at a
    // time: they keep every entity attached and carry cluster signal
    // without by themselves tying molecules to proteins.
    const CTX_SHARD: usize = 15;
    for a in 0..extra_relations {
        let rel = format!("ctx_{a}");
        let mut mol_rank = vec![0usize; cfg.n_clusters];
        for i in 0..cfg.n_mols {
            let c = cfg.mol_cluster(i);
            let shard = mol_rank[c] / CTX_SHARD;
            mol_rank[c] += 1;
            kg.add_triple(mol_id(i), &rel, EntityId::new("CTX", format!("r{a}_m_c{c}_s{shard}")));
        }
        let mut prot_rank = vec![0usize; cfg.n_clusters];
        for j in 0..cfg.n_prots {
            let c = cfg.prot_cluster(j);
            let shard = prot_rank[c] / CTX_SHARD;
            prot_rank[c] += 1;
            kg.add_triple(prot_id(j), &rel, EntityId::new("CTX", format!("r{a}_p_c{c}_s{shard}")));
        }
    }
    kg.ensure_pseudo_relation();

    let mut hidden: Vec<(EntityId, EntityId)> =
        hidden.iter().map(|&(i, j)| (mol_id(i), prot_id(j))).collect();
    hidden.sort();
    Ok(PlantedKg { kg, hidden_true_pairs: hidden })
}
