//! Pseudo-label generation over the full unlabeled score matrix.
//!
//! The main path solves a similarity-constrained transport problem: an
//! entropic OT solve on `C = 1 - S`, a gradient step that pulls similar
//! molecules toward similar protein assignments, and a feasibility
//! projection, repeated for a fixed number of outer rounds. Threshold
//! extraction and the ablation baselines (top-k, random, none) live here
//! too.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::embeddings::{EntityId, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ot::{
    feasibility_project, transport_cost, warm_start, CostMatrix, MarginalPair, OtConfig,
    SinkhornState, TransportPlan,
};
use crate::rng::stage_rng;
use crate::scalar::Real;
use crate::score::ScoreMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Similarity-constrained OT (the full method).
    OtSim,
    /// Plain entropic OT, no similarity term.
    OtPlain,
    /// Top-k molecules per protein by score.
    TopK,
    /// Uniformly random pairs, count matched to a reference run.
    Random,
    /// No pseudo-labels.
    None,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::OtSim => "ot_sim",
            Strategy::OtPlain => "ot_plain",
            Strategy::TopK => "topk",
            Strategy::Random => "random",
            Strategy::None => "none",
        }
    }
}

/// Which matrix the confidence threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSource {
    /// Threshold raw scores `S_ij > delta`; weight is the score.
    Score,
    /// Threshold the plan after dividing each row by its maximum; weight is
    /// the normalized value.
    NormalizedPlan,
}

#[derive(Debug, Clone)]
pub struct PseudoConfig<R> {
    /// Similarity-term weight.
    pub lambda: R,
    /// Gradient step size.
    pub eta: R,
    /// Entropic regularization of the inner solves.
    pub epsilon: R,
    pub outer_max_iter: usize,
    /// Confidence threshold, strict.
    pub delta: R,
    pub threshold_source: ThresholdSource,
    pub strategy: Strategy,
    pub topk_k: usize,
    pub projection_rounds: usize,
    /// Inner-solver convergence settings.
    pub sinkhorn_tol: R,
    pub sinkhorn_max_iter: usize,
}

impl<R: Real> Default for PseudoConfig<R> {
    fn default() -> Self {
        Self {
            lambda: R::of(0.1),
            eta: R::of(1.0),
            epsilon: R::of(0.01),
            outer_max_iter: 50,
            delta: R::of(0.5),
            threshold_source: ThresholdSource::Score,
            strategy: Strategy::OtSim,
            topk_k: 5,
            projection_rounds: 20,
            sinkhorn_tol: R::of(1e-6),
            sinkhorn_max_iter: 20_000,
        }
    }
}

impl<R: Real> PseudoConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < R::zero()
            || self.eta <= R::zero()
            || self.epsilon <= R::zero()
            || self.outer_max_iter == 0
            || self.topk_k == 0
            || self.projection_rounds == 0
            || self.sinkhorn_tol <= R::zero()
            || self.sinkhorn_max_iter == 0
        {
            return Err(Error::Config("pseudo-label scalars must be positive".into()));
        }
        if self.delta <= R::zero() || self.delta >= R::one() {
            return Err(Error::Config("delta must lie strictly inside (0,1)".into()));
        }
        Ok(())
    }
}

/// High-confidence pseudo-labeled pairs with positive weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet<R> {
    pub pairs: Vec<(EntityId, EntityId, R)>,
    /// Rows that produced no candidates under normalized-plan extraction
    /// (all-zero plan rows); informational.
    pub skipped_rows: usize,
}

impl<R: Real> PseudoLabelSet<R> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Outcome of [`generate_plan`]: the final plan plus the per-round value of
/// the combined objective (transport cost + lambda * similarity penalty).
#[derive(Debug, Clone)]
pub struct PseudoPlan<R> {
    pub plan: TransportPlan<R>,
    pub objective: Vec<R>,
}

fn clamp_unit<R: Real>(x: R) -> R {
    x.max(R::zero()).min(R::one())
}

fn check_sim_shape<R: Real>(t: &Mat<R>, sim: &SimilarityMatrix<R>) -> Result<()> {
    let (m, _) = t.shape();
    if sim.values.shape() != (m, m) {
        return Err(Error::Shape(format!(
            "similarity is {:?} but plan has {m} rows",
            sim.values.shape()
        )));
    }
    Ok(())
}

/// `sum_ik (Sim_ik - (T T^T)_ik)^2` with the similarity clamped to [0,1].
pub fn similarity_penalty<R: Real>(plan: &TransportPlan<R>, sim: &SimilarityMatrix<R>) -> Result<R> {
    penalty_of(&plan.values, sim)
}

fn penalty_of<R: Real>(t: &Mat<R>, sim: &SimilarityMatrix<R>) -> Result<R> {
    check_sim_shape(t, sim)?;
    let sim_t = t.matmul_nt(t);
    let mut total = R::zero();
    for i in 0..sim_t.rows() {
        for k in 0..sim_t.cols() {
            let d = clamp_unit(sim.values[(i, k)]) - sim_t[(i, k)];
            total = total + d * d;
        }
    }
    Ok(total)
}

/// Analytic gradient of `lambda * similarity_penalty` w.r.t. the plan:
/// `G_ij = -4 lambda sum_k (Sim_ik - (T T^T)_ik) T_kj`, using the symmetry
/// of both matrices.
pub fn similarity_gradient<R: Real>(
    plan: &TransportPlan<R>,
    sim: &SimilarityMatrix<R>,
    lambda: R,
) -> Result<Mat<R>> {
    gradient_of(&plan.values, sim, lambda)
}

fn gradient_of<R: Real>(t: &Mat<R>, sim: &SimilarityMatrix<R>, lambda: R) -> Result<Mat<R>> {
    check_sim_shape(t, sim)?;
    let sim_t = t.matmul_nt(t);
    let diff = Mat::from_fn(sim_t.rows(), sim_t.cols(), |i, k| {
        clamp_unit(sim.values[(i, k)]) - sim_t[(i, k)]
    });
    let scale = -R::of(4.0) * lambda;
    Ok(diff.matmul(t).map(|x| x * scale))
}

/// Sign-flipped, half-magnitude variant of the similarity gradient:
/// `+2 lambda sum_k (Sim_ik - Sim^T_ik) T_kj`. Under the descent update
/// `T <- T - eta * grad` this variant ascends the penalty; it is kept so
/// tests can pin the analytic version against it and catch an accidental
/// "correction" back to the wrong sign.
pub fn similarity_gradient_uncorrected<R: Real>(
    plan: &TransportPlan<R>,
    sim: &SimilarityMatrix<R>,
    lambda: R,
) -> Result<Mat<R>> {
    check_sim_shape(&plan.values, sim)?;
    let t = &plan.values;
    let sim_t = t.matmul_nt(t);
    let diff = Mat::from_fn(sim_t.rows(), sim_t.cols(), |i, k| {
        clamp_unit(sim.values[(i, k)]) - sim_t[(i, k)]
    });
    let scale = R::of(2.0) * lambda;
    Ok(diff.matmul(t).map(|x| x * scale))
}

/// Runs the configured number of outer rounds of: entropic solve on
/// `C = 1 - S`, similarity gradient step (strategy `ot_sim` only), and
/// feasibility projection. Records the combined objective per round.
///
/// The solver state persists across rounds, so after the first solve the
/// inner loop is already converged and later rounds only pay for the
/// gradient step and projection, mirroring the once-initialized scaling
/// vectors of the outer iteration.
pub fn generate_plan<R: Real>(
    scores: &ScoreMatrix<R>,
    sim: &SimilarityMatrix<R>,
    cfg: &PseudoConfig<R>,
    marginals: &MarginalPair<R>,
) -> Result<PseudoPlan<R>> {
    cfg.validate()?;
    if !matches!(cfg.strategy, Strategy::OtSim | Strategy::OtPlain) {
        return Err(Error::Config(format!(
            "generate_plan needs an OT strategy, got {}",
            cfg.strategy.name()
        )));
    }
    let (m, n) = scores.values.shape();
    if marginals.shape() != (m, n) {
        return Err(Error::Shape(format!(
            "scores are {m}x{n} but marginals are {:?}",
            marginals.shape()
        )));
    }
    check_sim_shape(&scores.values, sim)?;

    let cost = CostMatrix::from_scores(&scores.values)?;
    let ot_cfg = OtConfig {
        epsilon: cfg.epsilon,
        tol: cfg.sinkhorn_tol,
        max_inner_iter: cfg.sinkhorn_max_iter,
    };
    let mut state = SinkhornState::init(&cost, cfg.epsilon);
    warm_start(&mut state, &cost, marginals, cfg.epsilon);

    let mut objective = Vec::with_capacity(cfg.outer_max_iter);
    let mut final_plan: Option<TransportPlan<R>> = None;
    for round in 1..=cfg.outer_max_iter {
        let wrap = |e: Error| Error::PseudoRound { round, source: Box::new(e) };
        state.run(marginals, &ot_cfg).map_err(wrap)?;
        let mut t = state.plan_values();
        if cfg.strategy == Strategy::OtSim && cfg.lambda > R::zero() {
            let grad = gradient_of(&t, sim, cfg.lambda)?;
            for (x, g) in t.data_mut().iter_mut().zip(grad.data()) {
                *x = *x - cfg.eta * *g;
            }
        }
        let (projected, _violation) =
            feasibility_project(&t, marginals, cfg.projection_rounds).map_err(wrap)?;
        let obj = transport_cost(&projected, &cost)?
            + cfg.lambda * penalty_of(&projected.values, sim)?;
        objective.push(obj);
        final_plan = Some(projected);
    }
    Ok(PseudoPlan { plan: final_plan.expect("outer_max_iter >= 1"), objective })
}

/// Thresholded extraction per the configured source; pairs come out in
/// row-major order.
pub fn extract_pseudo_labels<R: Real>(
    scores: &ScoreMatrix<R>,
    plan: &TransportPlan<R>,
    cfg: &PseudoConfig<R>,
) -> Result<PseudoLabelSet<R>> {
    let (m, n) = scores.values.shape();
    if plan.values.shape() != (m, n) {
        return Err(Error::Shape(format!(
            "scores are {m}x{n} but plan is {:?}",
            plan.values.shape()
        )));
    }
    let mut pairs = Vec::new();
    let mut skipped_rows = 0usize;
    match cfg.threshold_source {
        ThresholdSource::Score => {
            for i in 0..m {
                for j in 0..n {
                    let s = scores.values[(i, j)];
                    if s > cfg.delta {
                        pairs.push((scores.mol_ids[i].clone(), scores.prot_ids[j].clone(), s));
                    }
                }
            }
        }
        ThresholdSource::NormalizedPlan => {
            for i in 0..m {
                let row = plan.values.row(i);
                let row_max = row.iter().copied().fold(R::zero(), R::max);
                if row_max <= R::zero() {
                    skipped_rows += 1;
                    continue;
                }
                for j in 0..n {
                    let w = row[j] / row_max;
                    if w > cfg.delta {
                        pairs.push((scores.mol_ids[i].clone(), scores.prot_ids[j].clone(), w));
                    }
                }
            }
        }
    }
    Ok(PseudoLabelSet { pairs, skipped_rows })
}

/// Baseline strategies: `none` (empty), `topk` (per-protein top scores),
/// and `random` (seeded, without replacement, `matched_count` pairs).
pub fn baseline_pseudo<R: Real>(
    scores: &ScoreMatrix<R>,
    cfg: &PseudoConfig<R>,
    matched_count: usize,
    seed: u64,
) -> Result<PseudoLabelSet<R>> {
    let (m, n) = scores.values.shape();
    match cfg.strategy {
        Strategy::None => Ok(PseudoLabelSet::default()),
        Strategy::TopK => {
            let mut cells: Vec<(usize, usize)> = Vec::new();
            for j in 0..n {
                let mut order: Vec<usize> = (0..m).collect();
                // Descending score, ties to the lower molecule index.
                order.sort_by(|&a, &b| {
                    scores.values[(b, j)]
                        .partial_cmp(&scores.values[(a, j)])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                cells.extend(order.into_iter().take(cfg.topk_k).map(|i| (i, j)));
            }
            cells.sort_unstable();
            Ok(PseudoLabelSet {
                pairs: cells
                    .into_iter()
                    .map(|(i, j)| {
                        (
                            scores.mol_ids[i].clone(),
                            scores.prot_ids[j].clone(),
                            scores.values[(i, j)],
                        )
                    })
                    .collect(),
                skipped_rows: 0,
            })
        }
        Strategy::Random => {
            if matched_count > m * n {
                return Err(Error::Config(format!(
                    "requested {matched_count} random pairs from a {m}x{n} grid"
                )));
            }
            let mut rng = stage_rng(seed, "pseudo-random");
            let mut cells: Vec<usize> = (0..m * n).collect();
            // Partial Fisher-Yates: the first `matched_count` slots.
            for i in 0..matched_count {
                let j = rng.random_range(i..cells.len());
                cells.swap(i, j);
            }
            let mut chosen: Vec<usize> = cells[..matched_count].to_vec();
            chosen.sort_unstable();
            Ok(PseudoLabelSet {
                pairs: chosen
                    .into_iter()
                    .map(|flat| {
                        let (i, j) = (flat / n, flat % n);
                        (scores.mol_ids[i].clone(), scores.prot_ids[j].clone(), R::one())
                    })
                    .collect(),
                skipped_rows: 0,
            })
        }
        other => Err(Error::Config(format!(
            "baseline_pseudo does not handle strategy {}",
            other.name()
        ))),
    }
}

/// Writes the pseudo-label TSV: `<mol_id>\t<prot_id>\t<weight>` per line.
pub fn save_labels<R: Real>(labels: &PseudoLabelSet<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for (mol, prot, w) in &labels.pairs {
        writeln!(f, "{mol}\t{prot}\t{}", w.to64())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads the pseudo-label TSV.
pub fn load_labels<R: Real>(path: impl AsRef<Path>) -> Result<PseudoLabelSet<R>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |msg: String| Error::Parse { path: pstr.clone(), line: idx + 1, msg };
        let mut fields = line.split('\t');
        let (Some(m), Some(p), Some(w)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(perr("expected `<mol>\\t<prot>\\t<weight>`".into()));
        };
        let mol = EntityId::parse(m).ok_or_else(|| perr(format!("bad entity id `{m}`")))?;
        let prot = EntityId::parse(p).ok_or_else(|| perr(format!("bad entity id `{p}`")))?;
        let weight: f64 = w.parse().map_err(|_| perr(format!("bad weight `{w}`")))?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(perr(format!("weight must be positive and finite, got `{w}`")));
        }
        pairs.push((mol, prot, R::of(weight)));
    }
    Ok(PseudoLabelSet { pairs, skipped_rows: 0 })
}
