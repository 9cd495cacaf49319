//! Entity embeddings: TSV loading, Euclidean normalization, and the dense
//! cosine similarity matrix consumed by the pseudo-labeler.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Mat};
use crate::scalar::Real;

/// Namespaced entity identifier, rendered as `NS:local_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub namespace: String,
    pub local_id: String,
}

impl EntityId {
    pub fn new(namespace: impl Into<String>, local_id: impl Into<String>) -> Self {
        Self { namespace: namespace.into(), local_id: local_id.into() }
    }

    /// Parses `NS:local_id`; the local id may itself contain ':'.
    pub fn parse(s: &str) -> Option<Self> {
        let (ns, local) = s.split_once(':')?;
        if ns.is_empty() || local.is_empty() {
            return None;
        }
        Some(Self::new(ns, local))
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.local_id)
    }
}

/// Dense row-per-entity embedding matrix.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<R> {
    pub ids: Vec<EntityId>,
    pub dim: usize,
    pub values: Mat<R>,
}

impl<R: Real> EmbeddingMatrix<R> {
    pub fn new(ids: Vec<EntityId>, dim: usize, values: Mat<R>) -> Self {
        assert_eq!(ids.len(), values.rows(), "one row per id");
        assert_eq!(dim, values.cols());
        Self { ids, dim, values }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[R] {
        self.values.row(i)
    }

    /// Rows whose id carries the given namespace, in original order.
    pub fn filter_namespace(&self, namespace: &str) -> EmbeddingMatrix<R> {
        let keep: Vec<usize> =
            (0..self.len()).filter(|&i| self.ids[i].namespace == namespace).collect();
        let mut values = Mat::zeros(keep.len(), self.dim);
        let mut ids = Vec::with_capacity(keep.len());
        for (out_i, &i) in keep.iter().enumerate() {
            values.row_mut(out_i).copy_from_slice(self.values.row(i));
            ids.push(self.ids[i].clone());
        }
        EmbeddingMatrix { ids, dim: self.dim, values }
    }
}

/// Square cosine-similarity matrix over one embedding set.
///
/// Raw cosine values are kept, including negatives; consumers that need the
/// nonnegative variant clamp at the point of use.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix<R> {
    pub ids: Vec<EntityId>,
    pub values: Mat<R>,
}

/// Loads the embedding TSV format: first line `dim <d>`, then
/// `<ns>:<local_id>\t<f1> <f2> ... <fd>` rows; `#` lines are comments.
pub fn load_embeddings<R: Real>(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<R>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse { path: pstr.clone(), line, msg };

    let mut dim: Option<usize> = None;
    let mut ids: Vec<EntityId> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut rows: Vec<Vec<R>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(d) = dim else {
            let rest = line
                .strip_prefix("dim")
                .ok_or_else(|| perr(lineno, format!("expected header `dim <d>`, got `{line}`")))?;
            let d: usize = rest
                .trim()
                .parse()
                .map_err(|_| perr(lineno, format!("bad dimension in header `{line}`")))?;
            if d == 0 {
                return Err(perr(lineno, "dimension must be positive".into()));
            }
            dim = Some(d);
            continue;
        };
        let (id_part, vec_part) = line
            .split_once('\t')
            .ok_or_else(|| perr(lineno, "expected `<ns>:<id>\\t<floats>`".into()))?;
        let id = EntityId::parse(id_part)
            .ok_or_else(|| perr(lineno, format!("malformed entity id `{id_part}`")))?;
        if !seen.insert(id.clone()) {
            return Err(perr(lineno, format!("duplicate id `{id}`")));
        }
        let mut row = Vec::with_capacity(d);
        for tok in vec_part.split_whitespace() {
            let x: f64 =
                tok.parse().map_err(|_| perr(lineno, format!("bad float `{tok}`")))?;
            if !x.is_finite() {
                return Err(perr(lineno, format!("non-finite value `{tok}`")));
            }
            row.push(R::of(x));
        }
        if row.len() != d {
            return Err(perr(lineno, format!("expected {d} values, got {}", row.len())));
        }
        ids.push(id);
        rows.push(row);
    }

    let dim = dim.ok_or_else(|| perr(text.lines().count().max(1), "missing `dim <d>` header".into()))?;
    let values =
        if rows.is_empty() { Mat::zeros(0, dim) } else { Mat::from_rows(&rows) };
    Ok(EmbeddingMatrix { ids, dim, values })
}

/// Writes the embedding TSV format (inverse of [`load_embeddings`]).
pub fn save_embeddings<R: Real>(m: &EmbeddingMatrix<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "dim {}", m.dim)?;
    for (i, id) in m.ids.iter().enumerate() {
        let vals: Vec<String> = m.row(i).iter().map(|x| format!("{}", x.to64())).collect();
        writeln!(f, "{}\t{}", id, vals.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

/// Rescales every row to unit Euclidean norm. Zero rows are an error.
pub fn l2_normalize<R: Real>(m: &EmbeddingMatrix<R>) -> Result<EmbeddingMatrix<R>> {
    let mut values = m.values.clone();
    for i in 0..m.len() {
        let norm = l2_norm(m.row(i));
        if norm <= R::zero() || !norm.is_finite() {
            return Err(Error::ZeroRow { id: m.ids[i].to_string() });
        }
        for x in values.row_mut(i) {
            *x = *x / norm;
        }
    }
    Ok(EmbeddingMatrix { ids: m.ids.clone(), dim: m.dim, values })
}

/// Dense cosine-similarity matrix: `values[i][k] = <row_i, row_k> / (|row_i| |row_k|)`.
pub fn cosine_similarity_matrix<R: Real>(m: &EmbeddingMatrix<R>) -> Result<SimilarityMatrix<R>> {
    let n = m.len();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let norm = l2_norm(m.row(i));
        if norm <= R::zero() || !norm.is_finite() {
            return Err(Error::ZeroRow { id: m.ids[i].to_string() });
        }
        norms.push(norm);
    }
    let mut values = Mat::zeros(n, n);
    for i in 0..n {
        values[(i, i)] = R::one();
        for k in (i + 1)..n {
            let s = dot(m.row(i), m.row(k)) / (norms[i] * norms[k]);
            values[(i, k)] = s;
            values[(k, i)] = s;
        }
    }
    Ok(SimilarityMatrix { ids: m.ids.clone(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> EmbeddingMatrix<f64> {
        let ids = (0..rows.len()).map(|i| EntityId::new("MOL", format!("m{i}"))).collect();
        EmbeddingMatrix::new(ids, rows[0].len(), Mat::from_rows(rows))
    }

    #[test]
    fn normalize_three_four_five() {
        let m = mat(&[vec![3.0, 4.0]]);
        let n = l2_normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let m = mat(&[vec![1.0, 0.0]]);
        let n = l2_normalize(&m).unwrap();
        assert_eq!(n.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = mat(&[vec![0.0, 0.0]]);
        let err = l2_normalize(&m).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { ref id } if id == "MOL:m0"));
    }

    #[test]
    fn normalize_idempotent() {
        let m = mat(&[vec![3.0, -4.0], vec![0.2, 0.9]]);
        let n1 = l2_normalize(&m).unwrap();
        let n2 = l2_normalize(&n1).unwrap();
        assert!(n1.values.max_abs_diff(&n2.values) < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_and_identical() {
        let m = mat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let s = cosine_similarity_matrix(&m).unwrap();
        assert!((s.values[(0, 1)]).abs() < 1e-12);
        assert!((s.values[(0, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_value() {
        // (1,0) vs (1,1): dot 1, norms 1 and sqrt(2)
        let m = mat(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let s = cosine_similarity_matrix(&m).unwrap();
        assert!((s.values[(0, 1)] - 0.7071067811865475).abs() < 1e-12);
    }

    #[test]
    fn cosine_scale_invariant_and_symmetric() {
        let m = mat(&[vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.7], vec![-0.4, 0.4, 0.4]]);
        let scaled = EmbeddingMatrix::new(
            m.ids.clone(),
            m.dim,
            Mat::from_fn(3, 3, |i, j| m.values[(i, j)] * (1.0 + i as f64 * 3.0)),
        );
        let s1 = cosine_similarity_matrix(&m).unwrap();
        let s2 = cosine_similarity_matrix(&l2_normalize(&scaled).unwrap()).unwrap();
        assert!(s1.values.max_abs_diff(&s2.values) < 1e-9);
        for i in 0..3 {
            assert!((s1.values[(i, i)] - 1.0).abs() < 1e-9);
            for k in 0..3 {
                assert!((s1.values[(i, k)] - s1.values[(k, i)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn load_basic_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        std::fs::write(&p, "# comment\ndim 3\nMOL:a\t1 0 0\nMOL:b\t0 1 0\n").unwrap();
        let m: EmbeddingMatrix<f64> = load_embeddings(&p).unwrap();
        assert_eq!(m.dim, 3);
        assert_eq!(m.ids.len(), 2);
        assert_eq!(m.ids[0], EntityId::new("MOL", "a"));
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn load_reports_dimension_mismatch_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        std::fs::write(&p, "dim 3\nMOL:a\t1 0\n").unwrap();
        let err = load_embeddings::<f64>(&p).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("expected 3 values"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_rejects_duplicates_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        std::fs::write(&p, "dim 2\nMOL:a\t1 0\nMOL:a\t0 1\n").unwrap();
        assert!(matches!(load_embeddings::<f64>(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "dim 2\nMOL:a\tNaN 0\n").unwrap();
        assert!(matches!(load_embeddings::<f64>(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn load_empty_after_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        std::fs::write(&p, "dim 3\n").unwrap();
        let m: EmbeddingMatrix<f64> = load_embeddings(&p).unwrap();
        assert_eq!(m.len(), 0);
        assert_eq!(m.dim, 3);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        let m = mat(&[vec![0.25, -1.5], vec![3.0, 0.125]]);
        save_embeddings(&m, &p).unwrap();
        let back: EmbeddingMatrix<f64> = load_embeddings(&p).unwrap();
        assert_eq!(back.ids, m.ids);
        assert!(back.values.max_abs_diff(&m.values) < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (2usize..6, 2usize..5).prop_flat_map(|(rows, cols)| {
                proptest::collection::vec(
                    proptest::collection::vec(-10.0f64..10.0, cols..=cols),
                    rows..=rows,
                )
            })
        }

        proptest! {
            /// Similarity values stay inside [-1, 1] up to rounding.
            #[test]
            fn cosine_bounded(rows in arb_matrix()) {
                let m = mat(&rows);
                if let Ok(s) = cosine_similarity_matrix(&m) {
                    for &x in s.values.data() {
                        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&x), "{x}");
                    }
                }
            }

            /// Normalizing first never changes the similarity matrix.
            #[test]
            fn cosine_scale_invariance(rows in arb_matrix()) {
                let m = mat(&rows);
                if let (Ok(a), Ok(n)) = (cosine_similarity_matrix(&m), l2_normalize(&m)) {
                    let b = cosine_similarity_matrix(&n).unwrap();
                    prop_assert!(a.values.max_abs_diff(&b.values) < 1e-9);
                }
            }

            /// Normalization is idempotent.
            #[test]
            fn normalize_idempotent(rows in arb_matrix()) {
                let m = mat(&rows);
                if let Ok(once) = l2_normalize(&m) {
                    let twice = l2_normalize(&once).unwrap();
                    prop_assert!(once.values.max_abs_diff(&twice.values) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn works_at_f32_too() {
        let ids = vec![EntityId::new("MOL", "a"), EntityId::new("MOL", "b")];
        let m: EmbeddingMatrix<f32> =
            EmbeddingMatrix::new(ids, 2, Mat::from_rows(&[vec![3.0f32, 4.0], vec![1.0, 0.0]]));
        let n = l2_normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-6);
        let s = cosine_similarity_matrix(&n).unwrap();
        assert!((s.values[(0, 0)] - 1.0).abs() < 1e-6);
    }
}
