//! Retrieval-based classification: an exact cosine-similarity index over
//! pooled proposal vectors, label voting over the nearest neighbors, and the
//! classifier ensemble.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::checkpoint;
use crate::nncore::{InitSpec, Parameter, Tensor};

/// Neighbors consulted per query (shrinks when the index is smaller).
pub const RETRIEVAL_K: usize = 10;

/// Which classifier feeds the final category score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Sigmoid classifier head only.
    Cls,
    /// Retrieval voting only.
    Ret,
    /// Elementwise mean of both.
    Ensemble,
}

/// One stored proposal: pooled vector, binary label vector, provenance.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub vector: Vec<f64>,
    pub labels: Vec<f64>,
    pub video_id: String,
    pub start_clip: usize,
    pub end_clip: usize,
}

/// Immutable brute-force cosine index.
pub struct RetrievalIndex {
    pub dim: usize,
    pub n_categories: usize,
    entries: Vec<IndexEntry>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

impl RetrievalIndex {
    /// Builds the index, skipping zero or non-finite vectors; the second
    /// return value counts skipped entries.
    pub fn build(dim: usize, n_categories: usize, entries: Vec<IndexEntry>) -> (RetrievalIndex, usize) {
        let mut kept = Vec::with_capacity(entries.len());
        let mut skipped = 0;
        for e in entries {
            let usable = e.vector.len() == dim
                && e.labels.len() == n_categories
                && e.vector.iter().all(|v| v.is_finite())
                && e.vector.iter().any(|&v| v != 0.0);
            if usable {
                kept.push(e);
            } else {
                skipped += 1;
            }
        }
        (
            RetrievalIndex {
                dim,
                n_categories,
                entries: kept,
            },
            skipped,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Top-k entries by cosine similarity, descending; `exclude_video`
    /// drops same-video entries to avoid self-matching on training folds.
    pub fn retrieve(
        &self,
        query: &[f64],
        k: usize,
        exclude_video: Option<&str>,
    ) -> Result<Vec<(usize, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::Retrieval("retrieval index is empty".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Input(format!(
                "query has {} dimensions, index stores {}",
                query.len(),
                self.dim
            )));
        }
        if query.iter().all(|&v| v == 0.0) {
            return Err(Error::Input("cosine similarity of a zero query".into()));
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| exclude_video.map_or(true, |ex| e.video_id != ex))
            .map(|(i, e)| (i, cosine(query, &e.vector)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Similarity-weighted label vote over the top-k neighbors. Negative
    /// similarities are clamped to zero before weighting; if every weight
    /// clamps away the result is the zero vector.
    pub fn classify(
        &self,
        query: &[f64],
        k: usize,
        exclude_video: Option<&str>,
    ) -> Result<Vec<f64>> {
        let neighbors = self.retrieve(query, k, exclude_video)?;
        let mut acc = vec![0.0; self.n_categories];
        let mut wsum = 0.0;
        for (idx, sim) in neighbors {
            let w = sim.max(0.0);
            if w == 0.0 {
                continue;
            }
            wsum += w;
            for (a, l) in acc.iter_mut().zip(&self.entries[idx].labels) {
                *a += w * l;
            }
        }
        if wsum > 0.0 {
            for a in acc.iter_mut() {
                *a /= wsum;
            }
        }
        Ok(acc)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let k = self.entries.len();
        if k == 0 {
            return Err(Error::Retrieval("refusing to save an empty index".into()));
        }
        let vectors: Vec<f64> = self.entries.iter().flat_map(|e| e.vector.clone()).collect();
        let labels: Vec<f64> = self.entries.iter().flat_map(|e| e.labels.clone()).collect();
        let pv = Parameter::new(
            "index.vectors",
            Tensor::var(&[k, self.dim], vectors)?,
            InitSpec::Zeros,
        );
        let pl = Parameter::new(
            "index.labels",
            Tensor::var(&[k, self.n_categories], labels)?,
            InitSpec::Zeros,
        );
        let meta = serde_json::json!({
            "kind": "retrieval_index",
            "video_ids": self.entries.iter().map(|e| e.video_id.clone()).collect::<Vec<_>>(),
            "spans": self.entries.iter().map(|e| [e.start_clip, e.end_clip]).collect::<Vec<_>>(),
        });
        checkpoint::save_params(stem, &[&pv, &pl], &meta)
    }

    pub fn load(stem: &Path) -> Result<RetrievalIndex> {
        let ckpt = checkpoint::load(stem)?;
        let (vshape, vectors) = ckpt
            .tensors
            .get("index.vectors")
            .ok_or_else(|| Error::Checkpoint("index.vectors missing".into()))?;
        let (lshape, labels) = ckpt
            .tensors
            .get("index.labels")
            .ok_or_else(|| Error::Checkpoint("index.labels missing".into()))?;
        let k = vshape[0];
        if lshape[0] != k {
            return Err(Error::Checkpoint("index vector/label count mismatch".into()));
        }
        let dim = vshape[1];
        let n_categories = lshape[1];
        let ids: Vec<String> =
            serde_json::from_value(ckpt.meta["video_ids"].clone()).unwrap_or_default();
        let spans: Vec<[usize; 2]> =
            serde_json::from_value(ckpt.meta["spans"].clone()).unwrap_or_default();
        let mut entries = Vec::with_capacity(k);
        for i in 0..k {
            entries.push(IndexEntry {
                vector: vectors[i * dim..(i + 1) * dim].to_vec(),
                labels: labels[i * n_categories..(i + 1) * n_categories].to_vec(),
                video_id: ids.get(i).cloned().unwrap_or_default(),
                start_clip: spans.get(i).map(|s| s[0]).unwrap_or(0),
                end_clip: spans.get(i).map(|s| s[1]).unwrap_or(0),
            });
        }
        Ok(RetrievalIndex {
            dim,
            n_categories,
            entries,
        })
    }
}

/// Combines the classifier and retrieval distributions according to the mode.
pub fn ensemble(p_cls: &[f64], p_ret: &[f64], mode: ClassifierMode) -> Result<Vec<f64>> {
    if p_cls.len() != p_ret.len() {
        return Err(Error::Input(format!(
            "ensemble: {} classifier scores vs {} retrieval scores",
            p_cls.len(),
            p_ret.len()
        )));
    }
    Ok(match mode {
        ClassifierMode::Cls => p_cls.to_vec(),
        ClassifierMode::Ret => p_ret.to_vec(),
        ClassifierMode::Ensemble => p_cls
            .iter()
            .zip(p_ret)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: Vec<f64>, labels: Vec<f64>, id: &str) -> IndexEntry {
        IndexEntry {
            vector: v,
            labels,
            video_id: id.to_string(),
            start_clip: 0,
            end_clip: 1,
        }
    }

    #[test]
    fn single_entry_index_returns_it() {
        let (idx, skipped) = RetrievalIndex::build(
            2,
            2,
            vec![entry(vec![1.0, 0.0], vec![1.0, 0.0], "a")],
        );
        assert_eq!(skipped, 0);
        let p = idx.classify(&[0.5, 0.5], 10, None).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_vectors_are_skipped() {
        let (idx, skipped) = RetrievalIndex::build(
            2,
            2,
            vec![
                entry(vec![0.0, 0.0], vec![1.0, 0.0], "a"),
                entry(vec![1.0, 1.0], vec![0.0, 1.0], "b"),
            ],
        );
        assert_eq!(skipped, 1);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn duplicate_vectors_are_both_retrievable() {
        let (idx, _) = RetrievalIndex::build(
            2,
            2,
            vec![
                entry(vec![1.0, 0.0], vec![1.0, 0.0], "a"),
                entry(vec![1.0, 0.0], vec![0.0, 1.0], "b"),
            ],
        );
        let hits = idx.retrieve(&[1.0, 0.0], 10, None).unwrap();
        assert_eq!(hits.len(), 2);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert!((hits[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_vote_hand_case() {
        // Unit query at cosine 0.8 / 0.2 against two orthonormal entries
        // with labels (1,0) and (0,1): the vote is exactly (0.8, 0.2).
        let (idx, _) = RetrievalIndex::build(
            3,
            2,
            vec![
                entry(vec![1.0, 0.0, 0.0], vec![1.0, 0.0], "a"),
                entry(vec![0.0, 1.0, 0.0], vec![0.0, 1.0], "b"),
            ],
        );
        let q = [0.8, 0.2, (0.32f64).sqrt()];
        let p = idx.classify(&q, 2, None).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12, "{p:?}");
        assert!((p[1] - 0.2).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn shared_label_vector_is_returned_exactly() {
        let (idx, _) = RetrievalIndex::build(
            3,
            2,
            vec![
                entry(vec![1.0, 0.1, 0.0], vec![1.0, 1.0], "a"),
                entry(vec![0.9, 0.2, 0.1], vec![1.0, 1.0], "b"),
                entry(vec![0.8, 0.0, 0.2], vec![1.0, 1.0], "c"),
            ],
        );
        let p = idx.classify(&[1.0, 0.0, 0.0], 3, None).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance_of_the_query() {
        let (idx, _) = RetrievalIndex::build(
            3,
            2,
            vec![
                entry(vec![1.0, 0.5, -0.2], vec![1.0, 0.0], "a"),
                entry(vec![-0.3, 0.8, 0.4], vec![0.0, 1.0], "b"),
                entry(vec![0.2, -0.6, 0.9], vec![1.0, 1.0], "c"),
            ],
        );
        let q = [0.4, -0.2, 0.7];
        let q3: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
        let a = idx.classify(&q, 2, None).unwrap();
        let b = idx.classify(&q3, 2, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_index_is_a_retrieval_error() {
        let (idx, _) = RetrievalIndex::build(2, 2, vec![]);
        assert!(matches!(
            idx.classify(&[1.0, 0.0], 5, None),
            Err(Error::Retrieval(_))
        ));
    }

    #[test]
    fn zero_query_is_an_input_error() {
        let (idx, _) = RetrievalIndex::build(
            2,
            2,
            vec![entry(vec![1.0, 0.0], vec![1.0, 0.0], "a")],
        );
        assert!(matches!(
            idx.classify(&[0.0, 0.0], 5, None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn same_video_exclusion() {
        let (idx, _) = RetrievalIndex::build(
            2,
            2,
            vec![
                entry(vec![1.0, 0.0], vec![1.0, 0.0], "a"),
                entry(vec![0.9, 0.1], vec![0.0, 1.0], "b"),
            ],
        );
        let p = idx.classify(&[1.0, 0.0], 1, Some("a")).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn ensemble_modes() {
        let cls = vec![1.0, 0.0];
        let ret = vec![0.0, 1.0];
        assert_eq!(ensemble(&cls, &ret, ClassifierMode::Cls).unwrap(), cls);
        assert_eq!(ensemble(&cls, &ret, ClassifierMode::Ret).unwrap(), ret);
        assert_eq!(
            ensemble(&cls, &ret, ClassifierMode::Ensemble).unwrap(),
            vec![0.5, 0.5]
        );
        let same = ensemble(&cls, &cls, ClassifierMode::Ensemble).unwrap();
        assert_eq!(same, cls);
        assert!(ensemble(&cls, &[0.1], ClassifierMode::Ensemble).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("index");
        let (idx, _) = RetrievalIndex::build(
            2,
            3,
            vec![
                entry(vec![1.0, 0.25], vec![1.0, 0.0, 1.0], "vid-1"),
                entry(vec![-0.5, 2.0], vec![0.0, 1.0, 0.0], "vid-2"),
            ],
        );
        idx.save(&stem).unwrap();
        let back = RetrievalIndex::load(&stem).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim, 2);
        assert_eq!(back.n_categories, 3);
        assert_eq!(back.entries()[1].video_id, "vid-2");
        assert_eq!(back.entries()[0].vector, vec![1.0, 0.25]);
    }

    proptest::proptest! {
        #[test]
        fn vote_components_stay_in_unit_interval(
            vecs in proptest::collection::vec(
                proptest::collection::vec(-1.0f64..1.0, 3), 1..20),
            q in proptest::collection::vec(-1.0f64..1.0, 3)
        ) {
            proptest::prop_assume!(q.iter().any(|&v| v != 0.0));
            let entries: Vec<IndexEntry> = vecs
                .iter()
                .enumerate()
                .map(|(i, v)| entry(v.clone(), vec![(i % 2) as f64, 1.0], &format!("v{i}")))
                .collect();
            let (idx, _) = RetrievalIndex::build(3, 2, entries);
            proptest::prop_assume!(!idx.is_empty());
            let p = idx.classify(&q, RETRIEVAL_K, None).unwrap();
            for v in p {
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
