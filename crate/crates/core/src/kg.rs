//! Knowledge-graph triple store: vocabularies, ingestion, held-out
//! splitting, pseudo-edge injection, and mixed batch sampling with
//! namespace-preserving filtered negatives.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::embeddings::EntityId;
use crate::error::{Error, Result};
use crate::pseudo::PseudoLabelSet;
use crate::scalar::Real;

/// Reserved relation name for injected pseudo-labels.
pub const PSEUDO_RELATION: &str = "pseudo_interaction";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub String);

impl RelationId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for RelationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Typed entity/relation vocabularies plus a deduplicated triple set.
/// Triples are stored index-based; `pseudo_weights` carries the confidence
/// of injected pseudo edges.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph<R> {
    entities: Vec<EntityId>,
    entity_index: HashMap<EntityId, usize>,
    relations: Vec<RelationId>,
    relation_index: HashMap<String, usize>,
    triples: Vec<[usize; 3]>,
    triple_set: HashSet<[usize; 3]>,
    pseudo_weights: HashMap<[usize; 3], R>,
}

impl<R: Real> Default for KnowledgeGraph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> KnowledgeGraph<R> {
    pub fn new() -> Self {
        Self {
            entities: Vec::new(),
            entity_index: HashMap::new(),
            relations: Vec::new(),
            relation_index: HashMap::new(),
            triples: Vec::new(),
            triple_set: HashSet::new(),
            pseudo_weights: HashMap::new(),
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn entity(&self, idx: usize) -> &EntityId {
        &self.entities[idx]
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn entity_idx(&self, id: &EntityId) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    pub fn relation(&self, idx: usize) -> &RelationId {
        &self.relations[idx]
    }

    pub fn relation_idx(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn triples(&self) -> &[[usize; 3]] {
        &self.triples
    }

    pub fn contains(&self, t: &[usize; 3]) -> bool {
        self.triple_set.contains(t)
    }

    pub fn triple_set(&self) -> &HashSet<[usize; 3]> {
        &self.triple_set
    }

    pub fn pseudo_weight(&self, t: &[usize; 3]) -> Option<R> {
        self.pseudo_weights.get(t).copied()
    }

    pub fn n_pseudo(&self) -> usize {
        self.pseudo_weights.len()
    }

    pub fn materialize(&self, t: &[usize; 3]) -> Triple {
        Triple {
            head: self.entities[t[0]].clone(),
            relation: self.relations[t[1]].clone(),
            tail: self.entities[t[2]].clone(),
        }
    }

    pub fn add_entity(&mut self, id: EntityId) -> usize {
        if let Some(&i) = self.entity_index.get(&id) {
            return i;
        }
        let i = self.entities.len();
        self.entity_index.insert(id.clone(), i);
        self.entities.push(id);
        i
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        if let Some(&i) = self.relation_index.get(name) {
            return i;
        }
        let i = self.relations.len();
        self.relation_index.insert(name.to_string(), i);
        self.relations.push(RelationId::new(name));
        i
    }

    /// Registers the reserved pseudo relation on first use.
    pub fn ensure_pseudo_relation(&mut self) -> usize {
        self.add_relation(PSEUDO_RELATION)
    }

    /// Inserts a triple, deduplicating; returns true if newly added.
    pub fn add_triple(&mut self, head: EntityId, relation: &str, tail: EntityId) -> bool {
        let h = self.add_entity(head);
        let r = self.add_relation(relation);
        let t = self.add_entity(tail);
        self.add_triple_idx([h, r, t])
    }

    fn add_triple_idx(&mut self, t: [usize; 3]) -> bool {
        if self.triple_set.insert(t) {
            self.triples.push(t);
            true
        } else {
            false
        }
    }

    /// Triple count per relation, in vocabulary order.
    pub fn relation_counts(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.relations.len()];
        for t in &self.triples {
            counts[t[1]] += 1;
        }
        self.relations
            .iter()
            .zip(counts)
            .map(|(r, c)| (r.name().to_string(), c))
            .collect()
    }

    /// Entity indices sharing a namespace, ascending.
    pub fn namespace_entities(&self, namespace: &str) -> Vec<usize> {
        (0..self.entities.len())
            .filter(|&i| self.entities[i].namespace == namespace)
            .collect()
    }
}

/// Loads the triple TSV: `<head_ns>:<head_id>\t<relation>\t<tail_ns>:<tail_id>`
/// per line, `#` comments, duplicates collapsed, vocabularies in
/// first-appearance order.
pub fn load_triples<R: Real>(path: impl AsRef<Path>) -> Result<KnowledgeGraph<R>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let mut kg = KnowledgeGraph::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |msg: String| Error::Parse { path: pstr.clone(), line: idx + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let head = EntityId::parse(fields[0])
            .ok_or_else(|| perr(format!("bad head entity `{}`", fields[0])))?;
        if fields[1].is_empty() {
            return Err(perr("empty relation name".into()));
        }
        let tail = EntityId::parse(fields[2])
            .ok_or_else(|| perr(format!("bad tail entity `{}`", fields[2])))?;
        kg.add_triple(head, fields[1], tail);
    }
    Ok(kg)
}

/// Writes the triple TSV in canonical sorted order.
pub fn save_triples<R: Real>(kg: &KnowledgeGraph<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut lines: Vec<String> = kg
        .triples
        .iter()
        .map(|t| {
            format!("{}\t{}\t{}", kg.entities[t[0]], kg.relations[t[1]], kg.entities[t[2]])
        })
        .collect();
    lines.sort_unstable();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

/// Held-out split: `test` triples removed from `train`, with every entity
/// of a test triple still covered by at least one training triple.
#[derive(Debug, Clone)]
pub struct Split<R> {
    pub train: KnowledgeGraph<R>,
    pub test: Vec<Triple>,
}

/// Uniformly samples `n` triples of `relation` whose removal keeps every
/// involved entity attached to at least one remaining triple. Draws are
/// uniform over the currently qualifying candidates, seeded.
pub fn holdout_split<R: Real>(
    kg: &KnowledgeGraph<R>,
    relation: &str,
    n: usize,
    seed: u64,
) -> Result<Split<R>> {
    let Some(rel_idx) = kg.relation_idx(relation) else {
        if n == 0 {
            return Ok(Split { train: kg.clone(), test: Vec::new() });
        }
        return Err(Error::Config(format!("relation `{relation}` not in graph")));
    };

    let mut degree = vec![0usize; kg.n_entities()];
    for t in kg.triples() {
        degree[t[0]] += 1;
        degree[t[2]] += 1;
    }
    let mut candidates: Vec<usize> = (0..kg.n_triples())
        .filter(|&i| kg.triples()[i][1] == rel_idx)
        .collect();
    let mut removed: HashSet<usize> = HashSet::new();
    let mut rng = crate::rng::stage_rng(seed, "holdout-split");

    while removed.len() < n {
        let qualifying: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| {
                let t = kg.triples()[i];
                degree[t[0]] >= 2 && degree[t[2]] >= 2
            })
            .collect();
        if qualifying.is_empty() {
            return Err(Error::InfeasibleSplit { requested: n, max_feasible: removed.len() });
        }
        let pick = qualifying[rng.random_range(0..qualifying.len())];
        let t = kg.triples()[pick];
        degree[t[0]] -= 1;
        degree[t[2]] -= 1;
        removed.insert(pick);
        candidates.retain(|&i| i != pick);
    }

    let mut train = KnowledgeGraph::new();
    // Keep the vocabularies (and index assignments) of the full graph.
    for e in &kg.entities {
        train.add_entity(e.clone());
    }
    for r in &kg.relations {
        train.add_relation(r.name());
    }
    let mut test = Vec::with_capacity(n);
    for (i, t) in kg.triples().iter().enumerate() {
        if removed.contains(&i) {
            test.push(kg.materialize(t));
        } else {
            train.add_triple_idx(*t);
            if let Some(w) = kg.pseudo_weights.get(t) {
                train.pseudo_weights.insert(*t, *w);
            }
        }
    }
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InjectStats {
    pub added_entities: usize,
    pub added_triples: usize,
    pub merged_duplicates: usize,
}

/// Adds one `pseudo_interaction` triple per label, carrying its weight.
/// Unknown entities are added under their declared namespace; existing
/// triples of other relations are untouched; duplicate labels keep the
/// maximum weight. Idempotent for a fixed label set.
pub fn inject_pseudo_edges<R: Real>(
    kg: &KnowledgeGraph<R>,
    labels: &PseudoLabelSet<R>,
) -> (KnowledgeGraph<R>, InjectStats) {
    let mut out = kg.clone();
    let mut stats = InjectStats::default();
    if labels.is_empty() {
        return (out, stats);
    }
    let rel = out.ensure_pseudo_relation();
    for (mol, prot, w) in &labels.pairs {
        let before = out.n_entities();
        let h = out.add_entity(mol.clone());
        let t = out.add_entity(prot.clone());
        stats.added_entities += out.n_entities() - before;
        let key = [h, rel, t];
        if out.add_triple_idx(key) {
            stats.added_triples += 1;
            out.pseudo_weights.insert(key, *w);
        } else {
            stats.merged_duplicates += 1;
            let entry = out.pseudo_weights.entry(key).or_insert(*w);
            if *w > *entry {
                *entry = *w;
            }
        }
    }
    (out, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLabel {
    Real,
    Pseudo,
    Negative,
}

#[derive(Debug, Clone)]
pub struct BatchItem<R> {
    pub triple: [usize; 3],
    pub label: BatchLabel,
    pub weight: R,
}

/// Mixed training batch: real triples drawn uniformly, pseudo triples drawn
/// from the pseudo relation, and filtered negatives built by corrupting the
/// head or tail of a real triple with a same-namespace entity.
///
/// `proportions` is `(real, pseudo, negative)`; the negative share is
/// additionally scaled by `negatives_per_positive`. Counts are apportioned
/// by largest remainder, so each part is within one of its exact share.
pub fn sample_batch<R: Real>(
    kg: &KnowledgeGraph<R>,
    batch_size: usize,
    negatives_per_positive: usize,
    proportions: (f64, f64, f64),
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem<R>>> {
    let (w_real, w_pseudo, w_neg) = proportions;
    if w_real < 0.0 || w_pseudo < 0.0 || w_neg < 0.0 || w_real + w_pseudo + w_neg <= 0.0 {
        return Err(Error::Config("batch proportions must be nonnegative and nonzero".into()));
    }
    let weights = [w_real, w_pseudo, w_neg * negatives_per_positive.max(1) as f64];
    let counts = apportion(batch_size, &weights);

    let pseudo_rel = kg.relation_idx(PSEUDO_RELATION);
    let real_pool: Vec<[usize; 3]> = kg
        .triples()
        .iter()
        .copied()
        .filter(|t| Some(t[1]) != pseudo_rel)
        .collect();
    let pseudo_pool: Vec<[usize; 3]> = kg
        .triples()
        .iter()
        .copied()
        .filter(|t| Some(t[1]) == pseudo_rel)
        .collect();

    if counts[1] > 0 && pseudo_pool.is_empty() {
        return Err(Error::NoPseudoEdges { requested: counts[1] });
    }
    if (counts[0] > 0 || counts[2] > 0) && real_pool.is_empty() {
        return Err(Error::Config("no real triples to sample".into()));
    }

    let mut ns_pool: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in kg.entities.iter().enumerate() {
        ns_pool.entry(e.namespace.as_str()).or_default().push(i);
    }

    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..counts[0] {
        let t = real_pool[rng.random_range(0..real_pool.len())];
        batch.push(BatchItem { triple: t, label: BatchLabel::Real, weight: R::one() });
    }
    for _ in 0..counts[1] {
        let t = pseudo_pool[rng.random_range(0..pseudo_pool.len())];
        let w = kg.pseudo_weight(&t).unwrap_or_else(R::one);
        batch.push(BatchItem { triple: t, label: BatchLabel::Pseudo, weight: w });
    }
    for _ in 0..counts[2] {
        let t = real_pool[rng.random_range(0..real_pool.len())];
        let corrupted = corrupt(kg, t, &ns_pool, rng)?;
        batch.push(BatchItem { triple: corrupted, label: BatchLabel::Negative, weight: R::one() });
    }
    Ok(batch)
}

/// Largest-remainder apportionment of `total` into `weights.len()` parts.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            leftover -= 1;
        }
    }
    counts
}

/// Corrupts head or tail (coin flip) with a same-namespace entity, rejecting
/// corruptions that already exist in the graph. Falls back to exhaustive
/// enumeration when rejection sampling stalls, and to the other slot when a
/// side has no valid corruption at all.
fn corrupt<R: Real>(
    kg: &KnowledgeGraph<R>,
    t: [usize; 3],
    ns_pool: &HashMap<&str, Vec<usize>>,
    rng: &mut impl Rng,
) -> Result<[usize; 3]> {
    let first_head = rng.random_bool(0.5);
    for &corrupt_head in &[first_head, !first_head] {
        let slot = if corrupt_head { 0 } else { 2 };
        let ns = kg.entities[t[slot]].namespace.as_str();
        let pool = &ns_pool[ns];
        if pool.len() > 1 {
            for _ in 0..64 {
                let cand = pool[rng.random_range(0..pool.len())];
                let mut nt = t;
                nt[slot] = cand;
                if !kg.contains(&nt) {
                    return Ok(nt);
                }
            }
            let valid: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&cand| {
                    let mut nt = t;
                    nt[slot] = cand;
                    !kg.contains(&nt)
                })
                .collect();
            if !valid.is_empty() {
                let cand = valid[rng.random_range(0..valid.len())];
                let mut nt = t;
                nt[slot] = cand;
                return Ok(nt);
            }
        }
    }
    Err(Error::Config(
        "no valid negative corruption exists for a sampled triple".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eid(ns: &str, l: &str) -> EntityId {
        EntityId::new(ns, l)
    }

    fn chain_graph(n: usize) -> KnowledgeGraph<f64> {
        // a_i -r-> b_i plus a_i -s-> b_{(i+1) % n}
        let mut kg = KnowledgeGraph::new();
        for i in 0..n {
            kg.add_triple(eid("A", &format!("a{i}")), "r", eid("B", &format!("b{i}")));
            kg.add_triple(eid("A", &format!("a{i}")), "s", eid("B", &format!("b{}", (i + 1) % n)));
        }
        kg
    }

    #[test]
    fn load_counts_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(
            &p,
            "# comment\nMOL:a\tinteracts\tPROT:x\nMOL:a\tinteracts\tPROT:x\nMOL:b\tbinds\tPROT:x\nMOL:a\tbinds\tPROT:y\n",
        )
        .unwrap();
        let kg: KnowledgeGraph<f64> = load_triples(&p).unwrap();
        assert_eq!(kg.n_triples(), 3);
        assert_eq!(kg.n_entities(), 4);
        assert_eq!(kg.n_relations(), 2);
        assert_eq!(
            kg.relation_counts(),
            vec![("interacts".to_string(), 1), ("binds".to_string(), 2)]
        );
    }

    #[test]
    fn load_empty_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(&p, "").unwrap();
        let kg: KnowledgeGraph<f64> = load_triples(&p).unwrap();
        assert_eq!(kg.n_triples(), 0);

        std::fs::write(&p, "MOL:a\tinteracts\n").unwrap();
        let err = load_triples::<f64>(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn round_trip_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(&p, "# c\nB:2\tr\tC:3\nA:1\tr\tB:2\nB:2\tr\tC:3\n").unwrap();
        let kg: KnowledgeGraph<f64> = load_triples(&p).unwrap();
        let q = dir.path().join("kg2.tsv");
        save_triples(&kg, &q).unwrap();
        let text = std::fs::read_to_string(&q).unwrap();
        assert_eq!(text, "A:1\tr\tB:2\nB:2\tr\tC:3\n");
        let kg2: KnowledgeGraph<f64> = load_triples(&q).unwrap();
        assert_eq!(kg2.n_triples(), kg.n_triples());
    }

    #[test]
    fn holdout_zero_is_identity() {
        let kg = chain_graph(5);
        let split = holdout_split(&kg, "r", 0, 1).unwrap();
        assert!(split.test.is_empty());
        assert_eq!(split.train.n_triples(), kg.n_triples());
    }

    #[test]
    fn holdout_respects_entity_coverage() {
        // Star: hub connects to leaves; each leaf has exactly one triple, so
        // no leaf triple can ever be withheld.
        let mut kg = KnowledgeGraph::<f64>::new();
        for i in 0..4 {
            kg.add_triple(eid("H", "hub"), "r", eid("L", &format!("leaf{i}")));
        }
        let err = holdout_split(&kg, "r", 1, 3).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSplit { max_feasible: 0, .. }));
    }

    #[test]
    fn holdout_partitions_and_is_deterministic() {
        let kg = chain_graph(50);
        let a = holdout_split(&kg, "r", 20, 9).unwrap();
        let b = holdout_split(&kg, "r", 20, 9).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a.train.n_triples() + a.test.len(), kg.n_triples());
        // Every test entity still appears in training.
        for t in &a.test {
            let h = a.train.entity_idx(&t.head).unwrap();
            let tl = a.train.entity_idx(&t.tail).unwrap();
            let seen_h = a.train.triples().iter().any(|x| x[0] == h || x[2] == h);
            let seen_t = a.train.triples().iter().any(|x| x[0] == tl || x[2] == tl);
            assert!(seen_h && seen_t);
        }
        // Test triples are gone from train.
        for t in &a.test {
            let h = a.train.entity_idx(&t.head).unwrap();
            let r = a.train.relation_idx(t.relation.name()).unwrap();
            let tl = a.train.entity_idx(&t.tail).unwrap();
            assert!(!a.train.contains(&[h, r, tl]));
        }
    }

    #[test]
    fn inject_adds_triples_and_weights() {
        let kg = chain_graph(3);
        let empty = PseudoLabelSet::<f64>::default();
        let (same, stats) = inject_pseudo_edges(&kg, &empty);
        assert_eq!(same.n_triples(), kg.n_triples());
        assert_eq!(stats, InjectStats::default());

        let labels = PseudoLabelSet {
            pairs: vec![(eid("A", "a0"), eid("B", "b1"), 0.7)],
            skipped_rows: 0,
        };
        let (out, stats) = inject_pseudo_edges(&kg, &labels);
        assert_eq!(out.n_triples(), kg.n_triples() + 1);
        assert_eq!(stats.added_triples, 1);
        let h = out.entity_idx(&eid("A", "a0")).unwrap();
        let r = out.relation_idx(PSEUDO_RELATION).unwrap();
        let t = out.entity_idx(&eid("B", "b1")).unwrap();
        assert_eq!(out.pseudo_weight(&[h, r, t]), Some(0.7));
    }

    #[test]
    fn inject_merges_by_max_weight_and_is_idempotent() {
        let kg = chain_graph(3);
        let labels = PseudoLabelSet {
            pairs: vec![
                (eid("A", "a0"), eid("B", "b1"), 0.6),
                (eid("A", "a0"), eid("B", "b1"), 0.9),
            ],
            skipped_rows: 0,
        };
        let (out, _) = inject_pseudo_edges(&kg, &labels);
        assert_eq!(out.n_triples(), kg.n_triples() + 1);
        let h = out.entity_idx(&eid("A", "a0")).unwrap();
        let r = out.relation_idx(PSEUDO_RELATION).unwrap();
        let t = out.entity_idx(&eid("B", "b1")).unwrap();
        assert_eq!(out.pseudo_weight(&[h, r, t]), Some(0.9));

        let (again, stats) = inject_pseudo_edges(&out, &labels);
        assert_eq!(again.n_triples(), out.n_triples());
        assert_eq!(stats.added_triples, 0);
        assert_eq!(again.pseudo_weight(&[h, r, t]), Some(0.9));
    }

    #[test]
    fn inject_registers_unknown_entities() {
        let kg = chain_graph(2);
        let labels = PseudoLabelSet {
            pairs: vec![(eid("A", "new"), eid("B", "b0"), 0.5)],
            skipped_rows: 0,
        };
        let (out, stats) = inject_pseudo_edges(&kg, &labels);
        assert_eq!(stats.added_entities, 1);
        assert!(out.entity_idx(&eid("A", "new")).is_some());
    }

    #[test]
    fn batch_proportions_match() {
        let kg = chain_graph(10);
        let mut rng = crate::rng::stage_rng(4, "kg-batch");
        let batch = sample_batch(&kg, 10, 1, (1.0, 0.0, 1.0), &mut rng).unwrap();
        let reals = batch.iter().filter(|b| b.label == BatchLabel::Real).count();
        let negs = batch.iter().filter(|b| b.label == BatchLabel::Negative).count();
        assert_eq!((reals, negs), (5, 5));

        let labels = PseudoLabelSet {
            pairs: vec![(eid("A", "a0"), eid("B", "b1"), 0.8)],
            skipped_rows: 0,
        };
        let (kg2, _) = inject_pseudo_edges(&kg, &labels);
        let batch = sample_batch(&kg2, 9, 1, (1.0, 1.0, 1.0), &mut rng).unwrap();
        let count = |l: BatchLabel| batch.iter().filter(|b| b.label == l).count();
        assert_eq!(count(BatchLabel::Real), 3);
        assert_eq!(count(BatchLabel::Pseudo), 3);
        assert_eq!(count(BatchLabel::Negative), 3);
        assert!(batch
            .iter()
            .filter(|b| b.label == BatchLabel::Pseudo)
            .all(|b| b.weight == 0.8));
    }

    #[test]
    fn pseudo_requested_without_pseudo_edges_fails() {
        let kg = chain_graph(5);
        let mut rng = crate::rng::stage_rng(4, "kg-nopseudo");
        assert!(matches!(
            sample_batch(&kg, 9, 1, (1.0, 1.0, 1.0), &mut rng),
            Err(Error::NoPseudoEdges { requested: 3 })
        ));
    }

    #[test]
    fn negatives_never_collide_with_known_triples() {
        let kg = chain_graph(20);
        let mut rng = crate::rng::stage_rng(8, "kg-negcheck");
        for _ in 0..200 {
            let batch = sample_batch(&kg, 8, 1, (1.0, 0.0, 1.0), &mut rng).unwrap();
            for item in batch.iter().filter(|b| b.label == BatchLabel::Negative) {
                assert!(!kg.contains(&item.triple));
                // Namespace preserved on both slots.
                let h = kg.entity(item.triple[0]);
                let t = kg.entity(item.triple[2]);
                assert_eq!(h.namespace, "A");
                assert_eq!(t.namespace, "B");
            }
        }
    }

    #[test]
    fn forced_negative_is_the_missing_triple() {
        // Entities: single head h (namespace H, alone -> head corruption
        // impossible), tails t0..t3 with all (h, r, t_i) present except t2.
        let mut kg = KnowledgeGraph::<f64>::new();
        for i in 0..4 {
            if i != 2 {
                kg.add_triple(eid("H", "h"), "r", eid("T", &format!("t{i}")));
            }
        }
        kg.add_entity(eid("T", "t2"));
        let mut rng = crate::rng::stage_rng(2, "kg-forced");
        for _ in 0..20 {
            let batch = sample_batch(&kg, 2, 1, (1.0, 0.0, 1.0), &mut rng).unwrap();
            let neg = batch.iter().find(|b| b.label == BatchLabel::Negative).unwrap();
            assert_eq!(kg.entity(neg.triple[2]), &eid("T", "t2"));
        }
    }
}
