//! Knowledge-graph embedding families (PairRE, RotatE, MuRE, TorusE,
//! ComplEx) with a shared multi-objective loss: a log-sigmoid likelihood
//! over real and negative triples plus a weighted alignment term that fits
//! the pseudo-relation scores to the pseudo-label weights.

use std::collections::HashSet;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{BatchItem, BatchLabel, KnowledgeGraph};
use crate::linalg::{sigmoid, Mat};
use crate::opt::Adam;
use crate::rng::stage_rng;
use crate::scalar::Real;

const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    PairRe,
    RotatE,
    MuRe,
    TorusE,
    ComplEx,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::PairRe, Family::RotatE, Family::MuRe, Family::TorusE, Family::ComplEx];

    pub fn name(self) -> &'static str {
        match self {
            Family::PairRe => "pairre",
            Family::RotatE => "rotate",
            Family::MuRe => "mure",
            Family::TorusE => "toruse",
            Family::ComplEx => "complex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        // Table labels like "complex-ff" map onto the standard scoring form.
        match s.to_ascii_lowercase().as_str() {
            "pairre" => Ok(Family::PairRe),
            "rotate" => Ok(Family::RotatE),
            "mure" => Ok(Family::MuRe),
            "toruse" => Ok(Family::TorusE),
            "complex" | "complex-ff" | "complex_ff" => Ok(Family::ComplEx),
            other => Err(Error::Config(format!("unknown embedding family `{other}`"))),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Family::PairRe => 0,
            Family::RotatE => 1,
            Family::MuRe => 2,
            Family::TorusE => 3,
            Family::ComplEx => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag() == tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown family tag {tag}")))
    }

    /// Width of one relation row for entity dimension `d`.
    pub fn relation_width(self, d: usize) -> usize {
        match self {
            Family::PairRe | Family::MuRe => 2 * d,
            Family::RotatE => d / 2,
            Family::TorusE => d,
            Family::ComplEx => d,
        }
    }

    fn needs_even_dim(self) -> bool {
        matches!(self, Family::RotatE | Family::ComplEx)
    }
}

/// Entity and relation parameter tables for one family.
///
/// RotatE and ComplEx read entity rows as `d/2` interleaved (re, im) pairs;
/// TorusE keeps all coordinates in `[0, 1)`; MuRE additionally carries one
/// scalar bias per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct KgModelParams<R> {
    pub family: Family,
    pub dim: usize,
    pub gamma: R,
    pub entity_table: Mat<R>,
    pub entity_bias: Vec<R>,
    pub relation_table: Mat<R>,
}

impl<R: Real> KgModelParams<R> {
    pub fn init(
        family: Family,
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        gamma: R,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || (family.needs_even_dim() && !dim.is_multiple_of(2)) {
            return Err(Error::Config(format!(
                "dim {dim} invalid for family {}",
                family.name()
            )));
        }
        let mut rng = stage_rng(seed, "kge-init");
        let bound = 6.0 / (dim as f64).sqrt();
        let mut uniform = |lo: f64, hi: f64| R::of(rng.random_range(lo..hi));

        let entity_table = match family {
            Family::TorusE => Mat::from_fn(n_entities, dim, |_, _| uniform(0.0, 1.0)),
            _ => Mat::from_fn(n_entities, dim, |_, _| uniform(-bound, bound)),
        };
        let rel_w = family.relation_width(dim);
        let relation_table = match family {
            Family::RotatE => {
                Mat::from_fn(n_relations, rel_w, |_, _| uniform(0.0, std::f64::consts::TAU))
            }
            Family::TorusE => Mat::from_fn(n_relations, rel_w, |_, _| uniform(0.0, 1.0)),
            _ => Mat::from_fn(n_relations, rel_w, |_, _| uniform(-bound, bound)),
        };
        Ok(Self {
            family,
            dim,
            gamma,
            entity_table,
            entity_bias: vec![R::zero(); n_entities],
            relation_table,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.entity_table.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_table.rows()
    }

    pub fn n_params(&self) -> usize {
        self.entity_table.data().len() + self.entity_bias.len() + self.relation_table.data().len()
    }

    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(self.entity_table.data());
        out.extend_from_slice(&self.entity_bias);
        out.extend_from_slice(self.relation_table.data());
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[R]) {
        let ne = self.entity_table.data().len();
        let nb = self.entity_bias.len();
        self.entity_table.data_mut().copy_from_slice(&flat[..ne]);
        self.entity_bias.copy_from_slice(&flat[ne..ne + nb]);
        self.relation_table.data_mut().copy_from_slice(&flat[ne + nb..]);
    }

    /// Re-wraps periodic parameters into their canonical ranges.
    pub fn canonicalize(&mut self) {
        match self.family {
            Family::TorusE => {
                for x in self.entity_table.data_mut() {
                    *x = frac(*x);
                }
                for x in self.relation_table.data_mut() {
                    *x = frac(*x);
                }
            }
            Family::RotatE => {
                let tau = R::of(std::f64::consts::TAU);
                for x in self.relation_table.data_mut() {
                    *x = *x - (*x / tau).floor() * tau;
                }
            }
            _ => {}
        }
    }
}

/// Fractional part mapped into `[0, 1)`.
fn frac<R: Real>(x: R) -> R {
    let f = x - x.floor();
    if f >= R::one() {
        R::zero()
    } else {
        f
    }
}

/// Wrap-around distance on the unit circle coordinate.
fn torus_wrap<R: Real>(x: R) -> R {
    let f = frac(x);
    f.min(R::one() - f)
}

fn check_triple<R: Real>(p: &KgModelParams<R>, t: &[usize; 3]) -> Result<()> {
    if t[0] >= p.n_entities() || t[2] >= p.n_entities() || t[1] >= p.n_relations() {
        return Err(Error::Config(format!(
            "triple {t:?} outside tables ({} entities, {} relations)",
            p.n_entities(),
            p.n_relations()
        )));
    }
    Ok(())
}

/// Family scoring function; higher is more plausible.
pub fn score_triple<R: Real>(p: &KgModelParams<R>, h: usize, r: usize, t: usize) -> Result<R> {
    check_triple(p, &[h, r, t])?;
    Ok(score_raw(p, h, r, t))
}

fn score_raw<R: Real>(p: &KgModelParams<R>, h: usize, r: usize, t: usize) -> R {
    let hv = p.entity_table.row(h);
    let tv = p.entity_table.row(t);
    let rv = p.relation_table.row(r);
    let d = p.dim;
    match p.family {
        Family::PairRe => {
            let mut dist = R::zero();
            for k in 0..d {
                dist = dist + (hv[k] * rv[k] - tv[k] * rv[d + k]).abs();
            }
            p.gamma - dist
        }
        Family::RotatE => {
            let mut dist = R::zero();
            for c in 0..d / 2 {
                let (hre, him) = (hv[2 * c], hv[2 * c + 1]);
                let (cos, sin) = (rv[c].cos(), rv[c].sin());
                let dre = hre * cos - him * sin - tv[2 * c];
                let dim_ = hre * sin + him * cos - tv[2 * c + 1];
                dist = dist + (dre * dre + dim_ * dim_).sqrt();
            }
            p.gamma - dist
        }
        Family::MuRe => {
            let mut dist = R::zero();
            for k in 0..d {
                let delta = rv[k] * hv[k] + rv[d + k] - tv[k];
                dist = dist + delta * delta;
            }
            -dist + p.entity_bias[h] + p.entity_bias[t]
        }
        Family::TorusE => {
            let mut dist = R::zero();
            for k in 0..d {
                dist = dist + torus_wrap(hv[k] + rv[k] - tv[k]);
            }
            p.gamma - R::of(2.0) * dist
        }
        Family::ComplEx => {
            let mut s = R::zero();
            for c in 0..d / 2 {
                let (hre, him) = (hv[2 * c], hv[2 * c + 1]);
                let (rre, rim) = (rv[2 * c], rv[2 * c + 1]);
                let (tre, tim) = (tv[2 * c], tv[2 * c + 1]);
                s = s + (hre * rre - him * rim) * tre + (hre * rim + him * rre) * tim;
            }
            s
        }
    }
}

/// Per-triple score gradient w.r.t. head row, tail row, relation row, and
/// the two MuRE biases.
struct TripleGrad<R> {
    d_head: Vec<R>,
    d_tail: Vec<R>,
    d_rel: Vec<R>,
    d_bias: R,
}

fn score_grad<R: Real>(p: &KgModelParams<R>, h: usize, r: usize, t: usize) -> (R, TripleGrad<R>) {
    let hv = p.entity_table.row(h);
    let tv = p.entity_table.row(t);
    let rv = p.relation_table.row(r);
    let d = p.dim;
    let mut g = TripleGrad {
        d_head: vec![R::zero(); d],
        d_tail: vec![R::zero(); d],
        d_rel: vec![R::zero(); p.family.relation_width(d)],
        d_bias: R::zero(),
    };
    let score = match p.family {
        Family::PairRe => {
            let mut dist = R::zero();
            for k in 0..d {
                let delta = hv[k] * rv[k] - tv[k] * rv[d + k];
                dist = dist + delta.abs();
                let s = if delta > R::zero() {
                    R::one()
                } else if delta < R::zero() {
                    -R::one()
                } else {
                    R::zero()
                };
                g.d_head[k] = -s * rv[k];
                g.d_tail[k] = s * rv[d + k];
                g.d_rel[k] = -s * hv[k];
                g.d_rel[d + k] = s * tv[k];
            }
            p.gamma - dist
        }
        Family::RotatE => {
            let mut dist = R::zero();
            for c in 0..d / 2 {
                let (hre, him) = (hv[2 * c], hv[2 * c + 1]);
                let (cos, sin) = (rv[c].cos(), rv[c].sin());
                let rot_re = hre * cos - him * sin;
                let rot_im = hre * sin + him * cos;
                let dre = rot_re - tv[2 * c];
                let dim_ = rot_im - tv[2 * c + 1];
                let m = (dre * dre + dim_ * dim_).sqrt();
                dist = dist + m;
                if m > R::zero() {
                    let (ure, uim) = (dre / m, dim_ / m);
                    g.d_head[2 * c] = -(ure * cos + uim * sin);
                    g.d_head[2 * c + 1] = -(-ure * sin + uim * cos);
                    g.d_tail[2 * c] = ure;
                    g.d_tail[2 * c + 1] = uim;
                    g.d_rel[c] = -(ure * (-rot_im) + uim * rot_re);
                }
            }
            p.gamma - dist
        }
        Family::MuRe => {
            let mut dist = R::zero();
            let two = R::of(2.0);
            for k in 0..d {
                let delta = rv[k] * hv[k] + rv[d + k] - tv[k];
                dist = dist + delta * delta;
                g.d_head[k] = -two * delta * rv[k];
                g.d_tail[k] = two * delta;
                g.d_rel[k] = -two * delta * hv[k];
                g.d_rel[d + k] = -two * delta;
            }
            g.d_bias = R::one();
            -dist + p.entity_bias[h] + p.entity_bias[t]
        }
        Family::TorusE => {
            let mut dist = R::zero();
            let two = R::of(2.0);
            let half = R::of(0.5);
            for k in 0..d {
                let f = frac(hv[k] + rv[k] - tv[k]);
                dist = dist + f.min(R::one() - f);
                // d wrap / d delta: +1 on [0, 0.5), -1 on (0.5, 1).
                let s = if f < half { R::one() } else { -R::one() };
                g.d_head[k] = -two * s;
                g.d_tail[k] = two * s;
                g.d_rel[k] = -two * s;
            }
            p.gamma - two * dist
        }
        Family::ComplEx => {
            let mut s = R::zero();
            for c in 0..d / 2 {
                let (hre, him) = (hv[2 * c], hv[2 * c + 1]);
                let (rre, rim) = (rv[2 * c], rv[2 * c + 1]);
                let (tre, tim) = (tv[2 * c], tv[2 * c + 1]);
                s = s + (hre * rre - him * rim) * tre + (hre * rim + him * rre) * tim;
                g.d_head[2 * c] = rre * tre + rim * tim;
                g.d_head[2 * c + 1] = -rim * tre + rre * tim;
                g.d_tail[2 * c] = hre * rre - him * rim;
                g.d_tail[2 * c + 1] = hre * rim + him * rre;
                g.d_rel[2 * c] = hre * tre + him * tim;
                g.d_rel[2 * c + 1] = -him * tre + hre * tim;
            }
            s
        }
    };
    (score, g)
}

fn clamp_logit<R: Real>(x: R) -> R {
    x.min(R::of(LOGIT_CLAMP)).max(R::of(-LOGIT_CLAMP))
}

/// `softplus(x) = ln(1 + e^x)`, stable for large |x|.
fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-(x.abs())).exp().ln_1p()
}

/// Negative log-likelihood over clamped logits:
/// `-mean[log sigma(f_pos)] - mean[log sigma(-f_neg)]`, averaged over the
/// total count.
pub fn l_kg_from_scores<R: Real>(pos: &[R], neg: &[R]) -> Result<R> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Config("l_kg needs nonempty positive and negative sets".into()));
    }
    let mut total = R::zero();
    for &f in pos {
        total = total + softplus(-clamp_logit(f));
    }
    for &f in neg {
        total = total + softplus(clamp_logit(f));
    }
    Ok(total / R::of((pos.len() + neg.len()) as f64))
}

/// Graph-embedding likelihood loss over positive and negative triples.
pub fn l_kg<R: Real>(
    p: &KgModelParams<R>,
    positives: &[[usize; 3]],
    negatives: &[[usize; 3]],
) -> Result<R> {
    for t in positives.iter().chain(negatives) {
        check_triple(p, t)?;
    }
    let pos: Vec<R> = positives.iter().map(|t| score_raw(p, t[0], t[1], t[2])).collect();
    let neg: Vec<R> = negatives.iter().map(|t| score_raw(p, t[0], t[1], t[2])).collect();
    l_kg_from_scores(&pos, &neg)
}

/// Alignment loss between pseudo-relation scores and label weights:
/// mean of `(sigma(f) - w)^2`, or `(f - w)^2` when `squash` is off.
pub fn l_pseudo_from_scores<R: Real>(scores: &[R], weights: &[R], squash: bool) -> Result<R> {
    if scores.is_empty() {
        return Err(Error::Config("l_pseudo needs a nonempty pair list".into()));
    }
    debug_assert_eq!(scores.len(), weights.len());
    let mut total = R::zero();
    for (&f, &w) in scores.iter().zip(weights) {
        let pred = if squash { sigmoid(clamp_logit(f)) } else { f };
        let d = pred - w;
        total = total + d * d;
    }
    Ok(total / R::of(scores.len() as f64))
}

/// Alignment loss for weighted (molecule, protein) pairs scored through the
/// pseudo relation.
pub fn l_pseudo<R: Real>(
    p: &KgModelParams<R>,
    pseudo_rel: usize,
    pairs: &[(usize, usize, R)],
    squash: bool,
) -> Result<R> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut weights = Vec::with_capacity(pairs.len());
    for &(h, t, w) in pairs {
        check_triple(p, &[h, pseudo_rel, t])?;
        scores.push(score_raw(p, h, pseudo_rel, t));
        weights.push(w);
    }
    l_pseudo_from_scores(&scores, &weights, squash)
}

/// Dense parameter-shaped gradient buffers.
#[derive(Debug, Clone)]
pub struct KgGrads<R> {
    pub entity: Mat<R>,
    pub entity_bias: Vec<R>,
    pub relation: Mat<R>,
}

impl<R: Real> KgGrads<R> {
    pub fn zeros_like(p: &KgModelParams<R>) -> Self {
        Self {
            entity: Mat::zeros(p.entity_table.rows(), p.entity_table.cols()),
            entity_bias: vec![R::zero(); p.entity_bias.len()],
            relation: Mat::zeros(p.relation_table.rows(), p.relation_table.cols()),
        }
    }

    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::new();
        out.extend_from_slice(self.entity.data());
        out.extend_from_slice(&self.entity_bias);
        out.extend_from_slice(self.relation.data());
        out
    }

    fn accumulate(&mut self, t: &[usize; 3], g: &TripleGrad<R>, scale: R) {
        for (x, &v) in self.entity.row_mut(t[0]).iter_mut().zip(&g.d_head) {
            *x = *x + scale * v;
        }
        for (x, &v) in self.entity.row_mut(t[2]).iter_mut().zip(&g.d_tail) {
            *x = *x + scale * v;
        }
        for (x, &v) in self.relation.row_mut(t[1]).iter_mut().zip(&g.d_rel) {
            *x = *x + scale * v;
        }
        if g.d_bias != R::zero() {
            self.entity_bias[t[0]] = self.entity_bias[t[0]] + scale * g.d_bias;
            self.entity_bias[t[2]] = self.entity_bias[t[2]] + scale * g.d_bias;
        }
    }
}

/// Options controlling how a batch turns into the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct TotalLossOpts<R> {
    pub alpha: R,
    /// Squash pseudo-relation scores with the logistic before the squared
    /// error (the commensurable default); off exposes the raw-score variant.
    pub squash_pseudo: bool,
    /// When set, pseudo triples also enter the likelihood term as positives.
    pub include_pseudo_in_kg: bool,
}

impl<R: Real> Default for TotalLossOpts<R> {
    fn default() -> Self {
        Self { alpha: R::of(0.1), squash_pseudo: true, include_pseudo_in_kg: false }
    }
}

/// `l_kg(real, negative) + alpha * l_pseudo(pseudo)`; the pseudo term is
/// zero on an empty pseudo partition.
pub fn l_total<R: Real>(
    p: &KgModelParams<R>,
    batch: &[BatchItem<R>],
    pseudo_rel: Option<usize>,
    opts: &TotalLossOpts<R>,
) -> Result<R> {
    Ok(l_total_grad_impl(p, batch, pseudo_rel, opts, false)?.0)
}

/// Loss plus dense gradients over all parameter tables.
pub fn l_total_grad<R: Real>(
    p: &KgModelParams<R>,
    batch: &[BatchItem<R>],
    pseudo_rel: Option<usize>,
    opts: &TotalLossOpts<R>,
) -> Result<(R, KgGrads<R>)> {
    let (loss, grads) = l_total_grad_impl(p, batch, pseudo_rel, opts, true)?;
    Ok((loss, grads.expect("grads requested")))
}

fn l_total_grad_impl<R: Real>(
    p: &KgModelParams<R>,
    batch: &[BatchItem<R>],
    pseudo_rel: Option<usize>,
    opts: &TotalLossOpts<R>,
    want_grads: bool,
) -> Result<(R, Option<KgGrads<R>>)> {
    let mut positives: Vec<[usize; 3]> = Vec::new();
    let mut negatives: Vec<[usize; 3]> = Vec::new();
    let mut pseudo: Vec<([usize; 3], R)> = Vec::new();
    for item in batch {
        check_triple(p, &item.triple)?;
        match item.label {
            BatchLabel::Real => positives.push(item.triple),
            BatchLabel::Negative => negatives.push(item.triple),
            BatchLabel::Pseudo => {
                if pseudo_rel != Some(item.triple[1]) {
                    return Err(Error::Config(
                        "pseudo batch item does not use the pseudo relation".into(),
                    ));
                }
                pseudo.push((item.triple, item.weight));
                if opts.include_pseudo_in_kg {
                    positives.push(item.triple);
                }
            }
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Config("batch must carry real and negative triples".into()));
    }

    let mut grads = want_grads.then(|| KgGrads::zeros_like(p));
    let n_kg = R::of((positives.len() + negatives.len()) as f64);
    let mut loss = R::zero();

    for t in &positives {
        let (f, g) = score_grad(p, t[0], t[1], t[2]);
        let fc = clamp_logit(f);
        loss = loss + softplus(-fc) / n_kg;
        if let Some(gr) = grads.as_mut() {
            if f.abs() < R::of(LOGIT_CLAMP) {
                // d/df of -log sigma(f) = sigma(f) - 1.
                gr.accumulate(t, &g, (sigmoid(fc) - R::one()) / n_kg);
            }
        }
    }
    for t in &negatives {
        let (f, g) = score_grad(p, t[0], t[1], t[2]);
        let fc = clamp_logit(f);
        loss = loss + softplus(fc) / n_kg;
        if let Some(gr) = grads.as_mut() {
            if f.abs() < R::of(LOGIT_CLAMP) {
                gr.accumulate(t, &g, sigmoid(fc) / n_kg);
            }
        }
    }

    if !pseudo.is_empty() && opts.alpha > R::zero() {
        let n_ps = R::of(pseudo.len() as f64);
        let two = R::of(2.0);
        for (t, w) in &pseudo {
            let (f, g) = score_grad(p, t[0], t[1], t[2]);
            let fc = clamp_logit(f);
            if opts.squash_pseudo {
                let s = sigmoid(fc);
                let d = s - *w;
                loss = loss + opts.alpha * d * d / n_ps;
                if let Some(gr) = grads.as_mut() {
                    if f.abs() < R::of(LOGIT_CLAMP) {
                        gr.accumulate(t, &g, opts.alpha * two * d * s * (R::one() - s) / n_ps);
                    }
                }
            } else {
                let d = f - *w;
                loss = loss + opts.alpha * d * d / n_ps;
                if let Some(gr) = grads.as_mut() {
                    gr.accumulate(t, &g, opts.alpha * two * d / n_ps);
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Training configuration; `dim`/`gamma` size the model the trainer builds.
#[derive(Debug, Clone)]
pub struct KgTrainConfig<R> {
    pub alpha: R,
    pub dim: usize,
    pub gamma: R,
    pub batch_size: usize,
    pub learning_rate: R,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub squash_pseudo: bool,
    pub include_pseudo_in_kg: bool,
    pub seed: u64,
}

impl<R: Real> Default for KgTrainConfig<R> {
    fn default() -> Self {
        Self {
            alpha: R::of(0.1),
            dim: 256,
            gamma: R::of(6.0),
            batch_size: 1024,
            learning_rate: R::of(1e-3),
            epochs: 100,
            negatives_per_positive: 1,
            squash_pseudo: true,
            include_pseudo_in_kg: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgTrainResult<R> {
    pub params: KgModelParams<R>,
    /// Mean batch loss per epoch.
    pub trace: Vec<f64>,
}

/// Adam training of `l_total` over batches drawn by
/// [`crate::kg::sample_batch`]; deterministic under `cfg.seed`.
pub fn train_kg<R: Real>(
    kg: &KnowledgeGraph<R>,
    family: Family,
    cfg: &KgTrainConfig<R>,
) -> Result<KgTrainResult<R>> {
    if kg.n_triples() == 0 {
        return Err(Error::Config("cannot train on an empty graph".into()));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 || cfg.learning_rate <= R::zero() {
        return Err(Error::Config("kg training scalars must be positive".into()));
    }
    let pseudo_rel = kg.relation_idx(crate::kg::PSEUDO_RELATION);
    let use_pseudo =
        cfg.alpha > R::zero() && pseudo_rel.is_some() && kg.n_pseudo() > 0;
    let proportions = if use_pseudo { (1.0, 1.0, 1.0) } else { (1.0, 0.0, 1.0) };

    let mut params =
        KgModelParams::init(family, kg.n_entities(), kg.n_relations(), cfg.dim, cfg.gamma, cfg.seed)?;
    let opts = TotalLossOpts {
        alpha: cfg.alpha,
        squash_pseudo: cfg.squash_pseudo,
        include_pseudo_in_kg: cfg.include_pseudo_in_kg,
    };
    let mut adam = Adam::new(params.n_params(), cfg.learning_rate, R::zero());
    let mut rng = stage_rng(cfg.seed, "kg-train");

    let n_real = kg
        .triples()
        .iter()
        .filter(|t| Some(t[1]) != pseudo_rel)
        .count();
    let steps_per_epoch = (n_real / cfg.batch_size).max(1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let batch =
                crate::kg::sample_batch(kg, cfg.batch_size, cfg.negatives_per_positive, proportions, &mut rng)?;
            let (loss, grads) = l_total_grad(&params, &batch, pseudo_rel, &opts)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { at: format!("kg epoch {epoch}") });
            }
            let mut flat = params.flatten();
            adam.step(&mut flat, &grads.flatten());
            params.assign_from_flat(&flat);
            params.canonicalize();
            epoch_loss += loss.to64();
        }
        trace.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(KgTrainResult { params, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Tail,
    Head,
}

/// A ranking query: the known entity, the relation, and which slot the
/// candidates fill.
#[derive(Debug, Clone, Copy)]
pub struct RankQuery {
    pub known: usize,
    pub relation: usize,
    pub direction: Direction,
}

/// Scores every candidate in the queried slot, drops candidates whose
/// completed triple appears in `filter`, and returns (entity, score) sorted
/// by descending score with ties broken by ascending entity index.
pub fn rank_candidates<R: Real>(
    p: &KgModelParams<R>,
    query: RankQuery,
    candidates: &[usize],
    filter: &HashSet<[usize; 3]>,
) -> Result<Vec<(usize, R)>> {
    let mut out = Vec::with_capacity(candidates.len());
    for &e in candidates {
        let triple = match query.direction {
            Direction::Tail => [query.known, query.relation, e],
            Direction::Head => [e, query.relation, query.known],
        };
        if filter.contains(&triple) {
            continue;
        }
        let s = score_triple(p, triple[0], triple[1], triple[2])?;
        out.push((e, s));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(out)
}

const KGE_MAGIC: &[u8; 4] = b"KGE1";

/// Writes the `KGE1` checkpoint: magic, family tag byte, dim, vocabulary
/// sizes, margin, then the entity table, entity biases, and relation table
/// as little-endian f64.
pub fn save_checkpoint<R: Real>(p: &KgModelParams<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(KGE_MAGIC);
    buf.push(p.family.tag());
    buf.extend_from_slice(&(p.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(p.n_entities() as u32).to_le_bytes());
    buf.extend_from_slice(&(p.n_relations() as u32).to_le_bytes());
    buf.extend_from_slice(&p.gamma.to64().to_le_bytes());
    for x in p.entity_table.data() {
        buf.extend_from_slice(&x.to64().to_le_bytes());
    }
    for x in &p.entity_bias {
        buf.extend_from_slice(&x.to64().to_le_bytes());
    }
    for x in p.relation_table.data() {
        buf.extend_from_slice(&x.to64().to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a `KGE1` checkpoint.
pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<KgModelParams<R>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Checkpoint("truncated kg checkpoint".into()));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != KGE_MAGIC {
        return Err(Error::Checkpoint("bad magic; expected KGE1".into()));
    }
    let family = Family::from_tag(take(&mut at, 1)?[0])?;
    let dim = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let n_ent = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let n_rel = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let gamma = R::of(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
    let read_f64 = |at: &mut usize| -> Result<R> {
        Ok(R::of(f64::from_le_bytes(take(at, 8)?.try_into().unwrap())))
    };
    let mut entity = Vec::with_capacity(n_ent * dim);
    for _ in 0..n_ent * dim {
        entity.push(read_f64(&mut at)?);
    }
    let mut bias = Vec::with_capacity(n_ent);
    for _ in 0..n_ent {
        bias.push(read_f64(&mut at)?);
    }
    let rel_w = family.relation_width(dim);
    let mut rel = Vec::with_capacity(n_rel * rel_w);
    for _ in 0..n_rel * rel_w {
        rel.push(read_f64(&mut at)?);
    }
    if at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes in kg checkpoint".into()));
    }
    Ok(KgModelParams {
        family,
        dim,
        gamma,
        entity_table: Mat::from_vec(n_ent, dim, entity),
        entity_bias: bias,
        relation_table: Mat::from_vec(n_rel, rel_w, rel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EntityId;

    fn random_params(family: Family, seed: u64) -> KgModelParams<f64> {
        KgModelParams::init(family, 5, 2, 4, 6.0, seed).unwrap()
    }

    #[test]
    fn rotate_identity_rotation_scores_gamma() {
        let mut p = random_params(Family::RotatE, 1);
        for x in p.relation_table.row_mut(0) {
            *x = 0.0;
        }
        let row: Vec<f64> = p.entity_table.row(0).to_vec();
        p.entity_table.row_mut(1).copy_from_slice(&row);
        let s = score_triple(&p, 0, 0, 1).unwrap();
        assert!((s - p.gamma).abs() < 1e-12);
    }

    #[test]
    fn complex_zero_relation_scores_zero() {
        let mut p = random_params(Family::ComplEx, 2);
        for x in p.relation_table.row_mut(0) {
            *x = 0.0;
        }
        let s = score_triple(&p, 0, 0, 3).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn toruse_wraparound_hand_case() {
        // 0.9 + 0.2 lands on 0.1 modulo 1: zero wrap distance.
        let mut p = KgModelParams::<f64>::init(Family::TorusE, 2, 1, 1, 6.0, 3).unwrap();
        p.entity_table[(0, 0)] = 0.9;
        p.entity_table[(1, 0)] = 0.1;
        p.relation_table[(0, 0)] = 0.2;
        let s = score_triple(&p, 0, 0, 1).unwrap();
        assert!((s - p.gamma).abs() < 1e-12);
    }

    #[test]
    fn scores_finite_and_deterministic_across_families() {
        for family in Family::ALL {
            let p = random_params(family, 11);
            for h in 0..5 {
                for t in 0..5 {
                    let a = score_triple(&p, h, 0, t).unwrap();
                    let b = score_triple(&p, h, 0, t).unwrap();
                    assert!(a.is_finite());
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn l_kg_saturated_zero_uniform_log2_and_hand_value() {
        let near_zero = l_kg_from_scores(&[30.0], &[-30.0]).unwrap();
        assert!(near_zero < 1e-9);

        let log2 = l_kg_from_scores(&[0.0], &[0.0]).unwrap();
        assert!((log2 - std::f64::consts::LN_2).abs() < 1e-12);

        let hand = l_kg_from_scores(&[1.0f64, -1.0], &[1.0]).unwrap();
        assert!((hand - 0.979928354184890).abs() < 1e-9, "hand {hand}");

        assert!(l_kg_from_scores::<f64>(&[], &[0.0]).is_err());
    }

    #[test]
    fn l_pseudo_alignment_cases() {
        // sigma(f) = w exactly: zero contribution.
        let w = sigmoid(1.3f64);
        assert!(l_pseudo_from_scores(&[1.3], &[w], true).unwrap() < 1e-30);
        // sigma(30) vs 0: contribution ~1.
        let one = l_pseudo_from_scores(&[30.0f64], &[0.0], true).unwrap();
        assert!((one - 1.0).abs() < 1e-9);
        // sigma(f) = 0.8 against 0.5: (0.3)^2.
        let f = (0.8f64 / 0.2).ln();
        let v = l_pseudo_from_scores(&[f], &[0.5], true).unwrap();
        assert!((v - 0.09).abs() < 1e-12);
        // Raw variant.
        let raw = l_pseudo_from_scores(&[2.0f64], &[0.5], false).unwrap();
        assert!((raw - 2.25).abs() < 1e-12);
    }

    fn toy_batch(p: &KgModelParams<f64>, pseudo_rel: usize) -> Vec<BatchItem<f64>> {
        let _ = p;
        vec![
            BatchItem { triple: [0, 0, 1], label: BatchLabel::Real, weight: 1.0 },
            BatchItem { triple: [2, 0, 3], label: BatchLabel::Real, weight: 1.0 },
            BatchItem { triple: [0, 0, 4], label: BatchLabel::Negative, weight: 1.0 },
            BatchItem { triple: [1, 0, 3], label: BatchLabel::Negative, weight: 1.0 },
            BatchItem { triple: [0, pseudo_rel, 3], label: BatchLabel::Pseudo, weight: 0.7 },
            BatchItem { triple: [2, pseudo_rel, 4], label: BatchLabel::Pseudo, weight: 0.4 },
        ]
    }

    #[test]
    fn l_total_composition() {
        let p = random_params(Family::MuRe, 17);
        let batch = toy_batch(&p, 1);
        let opts = TotalLossOpts { alpha: 0.1, ..TotalLossOpts::default() };
        let total = l_total(&p, &batch, Some(1), &opts).unwrap();

        let kg_part = l_kg(&p, &[[0, 0, 1], [2, 0, 3]], &[[0, 0, 4], [1, 0, 3]]).unwrap();
        let ps_part = l_pseudo(&p, 1, &[(0, 3, 0.7), (2, 4, 0.4)], true).unwrap();
        assert!((total - (kg_part + 0.1 * ps_part)).abs() < 1e-12);

        // alpha = 0 reduces exactly to l_kg.
        let opts0 = TotalLossOpts { alpha: 0.0, ..TotalLossOpts::default() };
        let t0 = l_total(&p, &batch, Some(1), &opts0).unwrap();
        assert_eq!(t0, kg_part);

        // Empty pseudo partition: equals l_kg even with alpha > 0.
        let no_pseudo: Vec<BatchItem<f64>> =
            batch.iter().filter(|b| b.label != BatchLabel::Pseudo).cloned().collect();
        let t_np = l_total(&p, &no_pseudo, Some(1), &opts).unwrap();
        assert_eq!(t_np, kg_part);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_family() {
        for family in Family::ALL {
            for seed in [5u64, 6] {
                let p = random_params(family, seed);
                let batch = toy_batch(&p, 1);
                let opts = TotalLossOpts { alpha: 0.1, ..TotalLossOpts::default() };
                let (_, grads) = l_total_grad(&p, &batch, Some(1), &opts).unwrap();
                let analytic = grads.flatten();
                let flat = p.flatten();
                let h = 1e-5;
                for k in 0..flat.len() {
                    let mut pp = p.clone();
                    let mut f = flat.clone();
                    f[k] += h;
                    pp.assign_from_flat(&f);
                    let lp = l_total(&pp, &batch, Some(1), &opts).unwrap();
                    f[k] -= 2.0 * h;
                    pp.assign_from_flat(&f);
                    let lm = l_total(&pp, &batch, Some(1), &opts).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let a = analytic[k];
                    assert!(
                        (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-9,
                        "{} seed {seed} param {k}: analytic {a} vs fd {fd}",
                        family.name()
                    );
                }
            }
        }
    }

    #[test]
    fn torus_periodicity_and_rotate_zero_shift() {
        let p = random_params(Family::TorusE, 23);
        let mut shifted = p.clone();
        for (i, x) in shifted.entity_table.data_mut().iter_mut().enumerate() {
            *x += ((i % 5) as f64) - 2.0;
        }
        for h in 0..5 {
            for t in 0..5 {
                let a = score_triple(&p, h, 0, t).unwrap();
                let b = score_triple(&shifted, h, 0, t).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }

        let p = random_params(Family::RotatE, 29);
        let mut same = p.clone();
        for x in same.relation_table.data_mut() {
            *x += 0.0;
        }
        for h in 0..5 {
            let a = score_triple(&p, h, 1, (h + 1) % 5).unwrap();
            let b = score_triple(&same, h, 1, (h + 1) % 5).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn complex_conjugation_swaps_head_and_tail() {
        let p = random_params(Family::ComplEx, 31);
        let mut conj = p.clone();
        for r in 0..conj.relation_table.rows() {
            let row = conj.relation_table.row_mut(r);
            for c in 0..row.len() / 2 {
                row[2 * c + 1] = -row[2 * c + 1];
            }
        }
        for h in 0..5 {
            for t in 0..5 {
                let a = score_triple(&conj, h, 0, t).unwrap();
                let b = score_triple(&p, t, 0, h).unwrap();
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gamma_shift_preserves_rankings() {
        for family in [Family::PairRe, Family::RotatE, Family::TorusE] {
            let p = random_params(family, 37);
            let mut shifted = p.clone();
            shifted.gamma += 3.5;
            let candidates: Vec<usize> = (0..5).collect();
            let query = RankQuery { known: 0, relation: 0, direction: Direction::Tail };
            let base = rank_candidates(&p, query, &candidates, &HashSet::new()).unwrap();
            let moved = rank_candidates(&shifted, query, &candidates, &HashSet::new()).unwrap();
            let order_a: Vec<usize> = base.iter().map(|x| x.0).collect();
            let order_b: Vec<usize> = moved.iter().map(|x| x.0).collect();
            assert_eq!(order_a, order_b, "{}", family.name());
            for (a, b) in base.iter().zip(&moved) {
                assert!((b.1 - a.1 - 3.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_candidates_filters_and_orders() {
        let p = random_params(Family::RotatE, 41);
        let query = RankQuery { known: 0, relation: 0, direction: Direction::Tail };
        let single = rank_candidates(&p, query, &[3], &HashSet::new()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].0, 3);

        let mut filter = HashSet::new();
        filter.insert([0usize, 0, 2]);
        let ranked = rank_candidates(&p, query, &[1, 2, 3], &filter).unwrap();
        assert_eq!(ranked.len(), 2);
        assert!(ranked.iter().all(|x| x.0 != 2));

        // Hand-built zero-distance candidate ranks first.
        let mut p = random_params(Family::RotatE, 43);
        for x in p.relation_table.row_mut(0) {
            *x = 0.0;
        }
        let head_row: Vec<f64> = p.entity_table.row(0).to_vec();
        p.entity_table.row_mut(4).copy_from_slice(&head_row);
        let ranked = rank_candidates(&p, query, &[1, 2, 3, 4], &HashSet::new()).unwrap();
        assert_eq!(ranked[0].0, 4);
    }

    fn mapping_graph(n: usize) -> KnowledgeGraph<f64> {
        let mut kg = KnowledgeGraph::new();
        for i in 0..n {
            kg.add_triple(
                EntityId::new("A", format!("a{i}")),
                "maps",
                EntityId::new("B", format!("b{i}")),
            );
            // Extra context edges so every entity has degree >= 2.
            kg.add_triple(
                EntityId::new("A", format!("a{i}")),
                "near",
                EntityId::new("B", format!("b{}", (i + 1) % n)),
            );
        }
        kg
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let kg = mapping_graph(25);
        let cfg = KgTrainConfig {
            alpha: 0.0,
            dim: 8,
            gamma: 6.0,
            batch_size: 16,
            learning_rate: 0.05,
            epochs: 60,
            negatives_per_positive: 1,
            squash_pseudo: true,
            include_pseudo_in_kg: false,
            seed: 3,
        };
        let a = train_kg(&kg, Family::RotatE, &cfg).unwrap();
        assert!(
            a.trace.last().unwrap() < &(a.trace[0] * 0.5),
            "loss {} -> {}",
            a.trace[0],
            a.trace.last().unwrap()
        );
        let b = train_kg(&kg, Family::RotatE, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn checkpoint_round_trip_all_families() {
        let dir = tempfile::tempdir().unwrap();
        for family in Family::ALL {
            let path = dir.path().join(format!("{}.kge1", family.name()));
            let p = random_params(family, 51);
            save_checkpoint(&p, &path).unwrap();
            let q: KgModelParams<f64> = load_checkpoint(&path).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.kge1");
        std::fs::write(&path, b"KGE9xxxx").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint(_))));
    }
}
