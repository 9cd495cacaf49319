//! Trainable pairwise score function `S(x, y)` over concatenated embeddings,
//! with two training objectives: the inverse-OT loss (KL divergence between
//! the transport plan induced by predicted costs and the plan induced by the
//! in-batch ground-truth cost) and the InfoNCE contrastive baseline.
//!
//! Gradients for the OT objective flow through the unrolled Sinkhorn
//! iterations via [`crate::ot::sinkhorn_vjp`].

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, sigmoid, Mat};
use crate::ot::{
    sinkhorn, sinkhorn_traced, sinkhorn_vjp, CostMatrix, CostProvenance, MarginalPair, OtConfig,
};
use crate::embeddings::EmbeddingMatrix;
use crate::opt::Adam;
use crate::rng::{seeded_shuffle, stage_rng};
use crate::scalar::Real;

/// Pre-squash logits are clamped here; keeps scores strictly inside (0,1).
const LOGIT_CLAMP: f64 = 30.0;

/// Inner solver settings for the training-time Sinkhorn solves.
const LOSS_SOLVER_TOL: f64 = 1e-10;
const LOSS_SOLVER_MAX_ITER: usize = 50_000;

/// Plan entries at or below this threshold contribute zero KL mass.
const KL_SUPPORT_FLOOR: f64 = 1e-30;

/// Feed-forward scorer: rectifier hidden layers, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModelParams<R> {
    /// `[2 * emb_dim, hidden..., 1]`.
    pub layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(layer_dims[l+1], layer_dims[l])`.
    pub weights: Vec<Mat<R>>,
    pub biases: Vec<Vec<R>>,
}

impl<R: Real> ScoreModelParams<R> {
    /// Zero-initialized network of the given shape.
    pub fn zeros(layer_dims: Vec<usize>) -> Self {
        assert!(layer_dims.len() >= 2, "need input and output layers");
        assert_eq!(*layer_dims.last().unwrap(), 1, "scorer output is scalar");
        let weights = (0..layer_dims.len() - 1)
            .map(|l| Mat::zeros(layer_dims[l + 1], layer_dims[l]))
            .collect();
        let biases = (0..layer_dims.len() - 1).map(|l| vec![R::zero(); layer_dims[l + 1]]).collect();
        Self { layer_dims, weights, biases }
    }

    /// Uniform fan-in initialization, seeded.
    pub fn init(layer_dims: Vec<usize>, seed: u64) -> Self {
        let mut p = Self::zeros(layer_dims);
        let mut rng = stage_rng(seed, "score-init");
        for (l, w) in p.weights.iter_mut().enumerate() {
            let bound = 1.0 / (p.layer_dims[l] as f64).sqrt();
            for x in w.data_mut() {
                *x = R::of(rng.random_range(-bound..bound));
            }
        }
        p
    }

    pub fn emb_dim(&self) -> usize {
        self.layer_dims[0] / 2
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[R]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.data().len();
            w.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let nb = b.len();
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        assert_eq!(at, flat.len());
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct ScoreGrads<R> {
    pub weights: Vec<Mat<R>>,
    pub biases: Vec<Vec<R>>,
}

impl<R: Real> ScoreGrads<R> {
    pub fn zeros_like(p: &ScoreModelParams<R>) -> Self {
        Self {
            weights: p.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            biases: p.biases.iter().map(|b| vec![R::zero(); b.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Dense pairwise score matrix with its row/column identities.
#[derive(Debug, Clone)]
pub struct ScoreMatrix<R> {
    pub mol_ids: Vec<crate::embeddings::EntityId>,
    pub prot_ids: Vec<crate::embeddings::EntityId>,
    pub values: Mat<R>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    OtKl,
    InfoNce,
}

/// Training configuration. Library defaults carry the reference values;
/// desk-scale runs shrink them through run configs.
#[derive(Debug, Clone)]
pub struct ScoreTrainConfig<R> {
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: R,
    pub weight_decay: R,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub loss: LossKind,
    /// Entropic regularization used inside the OT loss.
    pub ot_epsilon: R,
    /// InfoNCE temperature.
    pub temperature: R,
    /// Fraction of pairs carved off as the validation split.
    pub val_fraction: f64,
}

impl<R: Real> Default for ScoreTrainConfig<R> {
    fn default() -> Self {
        Self {
            hidden_dims: vec![512, 256],
            batch_size: 128,
            learning_rate: R::of(1e-4),
            weight_decay: R::of(0.01),
            max_epochs: 50,
            early_stop_patience: 5,
            loss: LossKind::OtKl,
            ot_epsilon: R::of(0.1),
            temperature: R::of(0.1),
            val_fraction: 0.1,
        }
    }
}

impl<R: Real> ScoreTrainConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.learning_rate <= R::zero()
            || self.weight_decay < R::zero()
            || self.max_epochs == 0
            || self.ot_epsilon <= R::zero()
            || self.temperature <= R::zero()
            || !(0.0..1.0).contains(&self.val_fraction)
        {
            return Err(Error::Config("score training scalars must be positive".into()));
        }
        Ok(())
    }
}

fn clamp_logit<R: Real>(x: R) -> R {
    x.min(R::of(LOGIT_CLAMP)).max(R::of(-LOGIT_CLAMP))
}

/// Forward pass for one concatenated input; returns the squashed score and,
/// when `acts` is given, fills per-layer activations for backprop.
fn forward<R: Real>(p: &ScoreModelParams<R>, input: &[R], mut acts: Option<&mut Vec<Vec<R>>>) -> R {
    let n_layers = p.weights.len();
    let mut cur = input.to_vec();
    if let Some(a) = acts.as_deref_mut() {
        a.clear();
        a.push(cur.clone());
    }
    for l in 0..n_layers {
        let w = &p.weights[l];
        let mut next = vec![R::zero(); w.rows()];
        for (o, out) in next.iter_mut().enumerate() {
            *out = p.biases[l][o] + crate::linalg::dot(w.row(o), &cur);
        }
        if l + 1 < n_layers {
            for x in &mut next {
                *x = x.max(R::zero());
            }
        }
        if let Some(a) = acts.as_deref_mut() {
            a.push(next.clone());
        }
        cur = next;
    }
    sigmoid(clamp_logit(cur[0]))
}

/// `S(x, y)` for one molecule/protein embedding pair; strictly in (0,1).
pub fn score_pair<R: Real>(p: &ScoreModelParams<R>, mol: &[R], prot: &[R]) -> Result<R> {
    if mol.len() + prot.len() != p.layer_dims[0] {
        return Err(Error::Shape(format!(
            "concatenated input has {} dims, model expects {}",
            mol.len() + prot.len(),
            p.layer_dims[0]
        )));
    }
    let mut input = Vec::with_capacity(p.layer_dims[0]);
    input.extend_from_slice(mol);
    input.extend_from_slice(prot);
    Ok(forward(p, &input, None))
}

/// Dense M x N score matrix over all molecule/protein pairs.
pub fn score_matrix<R: Real>(
    p: &ScoreModelParams<R>,
    mols: &EmbeddingMatrix<R>,
    prots: &EmbeddingMatrix<R>,
) -> Result<ScoreMatrix<R>> {
    if mols.dim + prots.dim != p.layer_dims[0] {
        return Err(Error::Shape(format!(
            "embedding dims {}+{} do not match model input {}",
            mols.dim,
            prots.dim,
            p.layer_dims[0]
        )));
    }
    let mut values = Mat::zeros(mols.len(), prots.len());
    let mut input = vec![R::zero(); p.layer_dims[0]];
    for i in 0..mols.len() {
        input[..mols.dim].copy_from_slice(mols.row(i));
        for j in 0..prots.len() {
            input[mols.dim..].copy_from_slice(prots.row(j));
            values[(i, j)] = forward(p, &input, None);
        }
    }
    Ok(ScoreMatrix { mol_ids: mols.ids.clone(), prot_ids: prots.ids.clone(), values })
}

/// In-batch ground-truth cost: zero on the diagonal, one elsewhere.
pub fn build_gt_cost<R: Real>(batch_size: usize) -> CostMatrix<R> {
    let values = Mat::from_fn(batch_size, batch_size, |i, j| {
        if i == j {
            R::zero()
        } else {
            R::one()
        }
    });
    CostMatrix::new(values, CostProvenance::GroundTruth).expect("finite 0/1 matrix")
}

fn loss_solver_cfg<R: Real>(epsilon: R) -> OtConfig<R> {
    OtConfig {
        epsilon,
        tol: R::of(LOSS_SOLVER_TOL).max(R::epsilon() * R::of(16.0)),
        max_inner_iter: LOSS_SOLVER_MAX_ITER,
    }
}

fn check_square_pair<R: Real>(a: &CostMatrix<R>, b: &CostMatrix<R>) -> Result<usize> {
    let (m, n) = a.shape();
    if m != n || a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "KL loss needs matching square costs, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(m)
}

/// Inverse-OT objective: `KL(T_pred || T_gt)` with both plans solved at the
/// same epsilon under uniform marginals. Zero when the costs coincide;
/// nonnegative up to solver tolerance.
pub fn ot_kl_loss<R: Real>(c_pred: &CostMatrix<R>, c_gt: &CostMatrix<R>, epsilon: R) -> Result<R> {
    let b = check_square_pair(c_pred, c_gt)?;
    let m = MarginalPair::uniform(b, b);
    let cfg = loss_solver_cfg(epsilon);
    let t_pred = sinkhorn(c_pred, &m, &cfg)?.plan;
    let t_gt = sinkhorn(c_gt, &m, &cfg)?.plan;
    Ok(kl_value(&t_pred.values, &t_gt.values))
}

fn kl_value<R: Real>(t_pred: &Mat<R>, t_gt: &Mat<R>) -> R {
    let floor = R::of(KL_SUPPORT_FLOOR);
    t_pred
        .data()
        .iter()
        .zip(t_gt.data())
        .map(|(&tp, &tg)| if tp <= floor { R::zero() } else { tp * (tp.ln() - tg.ln()) })
        .sum()
}

/// OT loss value plus its gradient w.r.t. the predicted cost matrix,
/// obtained by reverse-mode differentiation of the unrolled solve.
pub fn ot_kl_loss_grad<R: Real>(
    c_pred: &CostMatrix<R>,
    c_gt: &CostMatrix<R>,
    epsilon: R,
) -> Result<(R, Mat<R>)> {
    let b = check_square_pair(c_pred, c_gt)?;
    let m = MarginalPair::uniform(b, b);
    let cfg = loss_solver_cfg(epsilon);
    let trace = sinkhorn_traced(c_pred, &m, &cfg)?;
    let t_gt = sinkhorn(c_gt, &m, &cfg)?.plan;
    let loss = kl_value(&trace.plan, &t_gt.values);
    let floor = R::of(KL_SUPPORT_FLOOR);
    let grad_plan = Mat::from_fn(b, b, |i, j| {
        let tp = trace.plan[(i, j)];
        if tp <= floor {
            R::zero()
        } else {
            tp.ln() - t_gt.values[(i, j)].ln() + R::one()
        }
    });
    Ok((loss, sinkhorn_vjp(&trace, &grad_plan)))
}

/// Symmetric InfoNCE over an in-batch score matrix: row-wise cross-entropy
/// of the diagonal averaged with the column-wise analogue.
pub fn infonce_loss<R: Real>(scores: &Mat<R>, temperature: R) -> Result<R> {
    Ok(infonce_loss_grad_impl(scores, temperature, false)?.0)
}

/// InfoNCE value and gradient w.r.t. the score matrix.
pub fn infonce_loss_grad<R: Real>(scores: &Mat<R>, temperature: R) -> Result<(R, Mat<R>)> {
    let (loss, grad) = infonce_loss_grad_impl(scores, temperature, true)?;
    Ok((loss, grad.expect("grad requested")))
}

fn infonce_loss_grad_impl<R: Real>(
    scores: &Mat<R>,
    temperature: R,
    want_grad: bool,
) -> Result<(R, Option<Mat<R>>)> {
    let (m, n) = scores.shape();
    if m != n || m < 2 {
        return Err(Error::Shape(format!("InfoNCE needs a square batch of size >= 2, got {m}x{n}")));
    }
    if temperature <= R::zero() {
        return Err(Error::Config("InfoNCE temperature must be positive".into()));
    }
    let b = m;
    let bf = R::of(b as f64);
    let scaled = scores.map(|s| s / temperature);
    let mut loss = R::zero();
    let mut grad = want_grad.then(|| Mat::zeros(b, b));
    let half = R::of(0.5);

    // Row direction.
    for i in 0..b {
        let lse = log_sum_exp(scaled.row(i));
        loss = loss + (lse - scaled[(i, i)]) / bf * half;
        if let Some(g) = grad.as_mut() {
            for j in 0..b {
                let soft = (scaled[(i, j)] - lse).exp();
                let delta = if i == j { R::one() } else { R::zero() };
                g[(i, j)] = g[(i, j)] + half * (soft - delta) / (bf * temperature);
            }
        }
    }
    // Column direction.
    let scaled_t = scaled.transpose();
    for j in 0..b {
        let lse = log_sum_exp(scaled_t.row(j));
        loss = loss + (lse - scaled[(j, j)]) / bf * half;
        if let Some(g) = grad.as_mut() {
            for i in 0..b {
                let soft = (scaled[(i, j)] - lse).exp();
                let delta = if i == j { R::one() } else { R::zero() };
                g[(i, j)] = g[(i, j)] + half * (soft - delta) / (bf * temperature);
            }
        }
    }
    Ok((loss, grad))
}

/// Loss selection for a training batch.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<R> {
    pub kind: LossKind,
    pub ot_epsilon: R,
    pub temperature: R,
}

/// Computes the configured batch loss and its gradient w.r.t. every model
/// parameter. Row `i` of `mol_embs`/`prot_embs` is the i-th positive pair;
/// off-diagonal combinations act as in-batch negatives.
pub fn batch_loss_and_grad<R: Real>(
    p: &ScoreModelParams<R>,
    mol_embs: &Mat<R>,
    prot_embs: &Mat<R>,
    spec: &LossSpec<R>,
) -> Result<(R, ScoreGrads<R>)> {
    let b = mol_embs.rows();
    if b < 2 || prot_embs.rows() != b {
        return Err(Error::Shape(format!(
            "batch needs matching mol/prot rows >= 2, got {b} and {}",
            prot_embs.rows()
        )));
    }
    if mol_embs.cols() + prot_embs.cols() != p.layer_dims[0] {
        return Err(Error::Shape("embedding dims do not match model input".into()));
    }

    // Pass 1: scores.
    let d_mol = mol_embs.cols();
    let mut scores = Mat::zeros(b, b);
    let mut input = vec![R::zero(); p.layer_dims[0]];
    for i in 0..b {
        input[..d_mol].copy_from_slice(mol_embs.row(i));
        for j in 0..b {
            input[d_mol..].copy_from_slice(prot_embs.row(j));
            scores[(i, j)] = forward(p, &input, None);
        }
    }

    // Loss gradient w.r.t. the score matrix.
    let (loss, grad_scores) = match spec.kind {
        LossKind::OtKl => {
            let c_pred = CostMatrix::from_scores(&scores)?;
            let c_gt = build_gt_cost(b);
            let (loss, grad_cost) = ot_kl_loss_grad(&c_pred, &c_gt, spec.ot_epsilon)?;
            // C = 1 - S.
            (loss, grad_cost.map(|g| -g))
        }
        LossKind::InfoNce => infonce_loss_grad(&scores, spec.temperature)?,
    };

    // Pass 2: backprop through the MLP for every pair with nonzero signal.
    let mut grads = ScoreGrads::zeros_like(p);
    let n_layers = p.weights.len();
    let mut acts: Vec<Vec<R>> = Vec::new();
    for i in 0..b {
        input[..d_mol].copy_from_slice(mol_embs.row(i));
        for j in 0..b {
            let gs = grad_scores[(i, j)];
            if gs == R::zero() {
                continue;
            }
            input[d_mol..].copy_from_slice(prot_embs.row(j));
            let s = forward(p, &input, Some(&mut acts));
            // d loss / d logit; zero outside the clamp window.
            let logit = acts[n_layers][0];
            let mut delta = if logit.abs() >= R::of(LOGIT_CLAMP) {
                vec![R::zero()]
            } else {
                vec![gs * s * (R::one() - s)]
            };
            for l in (0..n_layers).rev() {
                let upstream = &acts[l];
                for (o, &dv) in delta.iter().enumerate() {
                    if dv == R::zero() {
                        continue;
                    }
                    grads.biases[l][o] = grads.biases[l][o] + dv;
                    let wrow = grads.weights[l].row_mut(o);
                    for (wi, &a) in wrow.iter_mut().zip(upstream) {
                        *wi = *wi + dv * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut next_delta = vec![R::zero(); p.layer_dims[l]];
                for (o, &dv) in delta.iter().enumerate() {
                    if dv == R::zero() {
                        continue;
                    }
                    let wrow = p.weights[l].row(o);
                    for (nd, &w) in next_delta.iter_mut().zip(wrow) {
                        *nd = *nd + dv * w;
                    }
                }
                // Rectifier gate on the hidden activation.
                for (nd, &a) in next_delta.iter_mut().zip(&acts[l]) {
                    if a <= R::zero() {
                        *nd = R::zero();
                    }
                }
                delta = next_delta;
            }
        }
    }
    Ok((loss, grads))
}

/// Result of [`train_score_model`]: best-validation parameters plus traces.
#[derive(Debug, Clone)]
pub struct ScoreTrainResult<R> {
    pub params: ScoreModelParams<R>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Minibatch AdamW training of the scorer on labeled positive pairs, with a
/// seeded 10% validation split and early stopping on validation loss.
pub fn train_score_model<R: Real>(
    pairs: &[(usize, usize)],
    mols: &EmbeddingMatrix<R>,
    prots: &EmbeddingMatrix<R>,
    cfg: &ScoreTrainConfig<R>,
    seed: u64,
) -> Result<ScoreTrainResult<R>> {
    cfg.validate()?;
    if pairs.len() < 2 * cfg.batch_size {
        return Err(Error::TooFewPairs { needed: 2 * cfg.batch_size, got: pairs.len() });
    }
    for &(mi, pi) in pairs {
        if mi >= mols.len() || pi >= prots.len() {
            return Err(Error::Config(format!("pair ({mi},{pi}) outside embedding tables")));
        }
    }

    let mut layer_dims = vec![mols.dim + prots.dim];
    layer_dims.extend_from_slice(&cfg.hidden_dims);
    layer_dims.push(1);
    let mut params = ScoreModelParams::init(layer_dims, seed);

    let mut rng = stage_rng(seed, "score-train");
    let mut shuffled: Vec<(usize, usize)> = pairs.to_vec();
    seeded_shuffle(&mut shuffled, &mut rng);
    let n_val = ((pairs.len() as f64 * cfg.val_fraction).round() as usize).max(2);
    let (val_pairs, train_pairs) = shuffled.split_at(n_val);
    let val_pairs = val_pairs.to_vec();
    let mut train_pairs = train_pairs.to_vec();

    let spec = LossSpec { kind: cfg.loss, ot_epsilon: cfg.ot_epsilon, temperature: cfg.temperature };
    let mut adam = Adam::new(params.n_params(), cfg.learning_rate, cfg.weight_decay);

    let gather = |sel: &[(usize, usize)]| -> (Mat<R>, Mat<R>) {
        let mut me = Mat::zeros(sel.len(), mols.dim);
        let mut pe = Mat::zeros(sel.len(), prots.dim);
        for (k, &(mi, pi)) in sel.iter().enumerate() {
            me.row_mut(k).copy_from_slice(mols.row(mi));
            pe.row_mut(k).copy_from_slice(prots.row(pi));
        }
        (me, pe)
    };

    let eval_val = |p: &ScoreModelParams<R>| -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in val_pairs.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (me, pe) = gather(chunk);
            let scores = batch_scores(p, &me, &pe)?;
            let loss = match spec.kind {
                LossKind::OtKl => {
                    let c_pred = CostMatrix::from_scores(&scores)?;
                    ot_kl_loss(&c_pred, &build_gt_cost(chunk.len()), spec.ot_epsilon)?
                }
                LossKind::InfoNce => infonce_loss(&scores, spec.temperature)?,
            };
            total += loss.to64() * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(total / count as f64)
    };

    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = eval_val(&params)?;
    let mut best_epoch = 0usize;
    val_trace.push(best_val);

    for epoch in 1..=cfg.max_epochs {
        seeded_shuffle(&mut train_pairs, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_pairs.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (me, pe) = gather(chunk);
            let (loss, grads) = batch_loss_and_grad(&params, &me, &pe, &spec)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { at: format!("score epoch {epoch}") });
            }
            let mut flat = params.flatten();
            adam.step(&mut flat, &grads.flatten());
            params.assign_from_flat(&flat);
            epoch_loss += loss.to64();
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = eval_val(&params)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { at: format!("score validation, epoch {epoch}") });
        }
        train_trace.push(train_loss);
        val_trace.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }

    Ok(ScoreTrainResult {
        params: best_params,
        train_loss: train_trace,
        val_loss: val_trace,
        best_epoch,
    })
}

fn batch_scores<R: Real>(
    p: &ScoreModelParams<R>,
    mol_embs: &Mat<R>,
    prot_embs: &Mat<R>,
) -> Result<Mat<R>> {
    let b = mol_embs.rows();
    let d_mol = mol_embs.cols();
    let mut scores = Mat::zeros(b, b);
    let mut input = vec![R::zero(); p.layer_dims[0]];
    for i in 0..b {
        input[..d_mol].copy_from_slice(mol_embs.row(i));
        for j in 0..b {
            input[d_mol..].copy_from_slice(prot_embs.row(j));
            scores[(i, j)] = forward(p, &input, None);
        }
    }
    Ok(scores)
}

const SCORE_MAGIC: &[u8; 4] = b"SMP1";

/// Writes the `SMP1` checkpoint: magic, length-prefixed u32 layer dims,
/// then per layer the row-major weights and biases as little-endian f64.
pub fn save_checkpoint<R: Real>(p: &ScoreModelParams<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(SCORE_MAGIC);
    buf.extend_from_slice(&(p.layer_dims.len() as u32).to_le_bytes());
    for &d in &p.layer_dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (w, b) in p.weights.iter().zip(&p.biases) {
        for x in w.data() {
            buf.extend_from_slice(&x.to64().to_le_bytes());
        }
        for x in b {
            buf.extend_from_slice(&x.to64().to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads an `SMP1` checkpoint.
pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<ScoreModelParams<R>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Checkpoint("truncated score checkpoint".into()));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != SCORE_MAGIC {
        return Err(Error::Checkpoint("bad magic; expected SMP1".into()));
    }
    let n_dims = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if n_dims < 2 {
        return Err(Error::Checkpoint("layer_dims must have at least 2 entries".into()));
    }
    let mut layer_dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        layer_dims.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::Checkpoint("final layer size must be 1".into()));
    }
    let mut p = ScoreModelParams::<R>::zeros(layer_dims);
    for l in 0..p.weights.len() {
        let n = p.weights[l].data().len();
        for k in 0..n {
            let x = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
            p.weights[l].data_mut()[k] = R::of(x);
        }
        for k in 0..p.biases[l].len() {
            let x = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
            p.biases[l][k] = R::of(x);
        }
    }
    if at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes in score checkpoint".into()));
    }
    Ok(p)
}
