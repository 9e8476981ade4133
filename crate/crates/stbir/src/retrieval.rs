//! Composite-query fusion, exhaustive cosine scoring over an image gallery,
//! deterministic top-K ranking, and Recall@K.

use ndarray::{Array2, Axis};

use crate::encoders::{FeatureBatch, Modality};
use crate::error::{Result, StbirError};

/// Unit-normalized gallery embeddings with their instance ids.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    pub embeddings: Array2<f64>,
    pub ids: Vec<u64>,
}

impl GalleryIndex {
    /// Builds an index from raw image embeddings; rows are normalized once
    /// here so scoring reduces to a dot product with normalized queries.
    pub fn build(embeddings: &Array2<f64>, ids: Vec<u64>) -> Result<Self> {
        if embeddings.nrows() != ids.len() {
            return Err(StbirError::Shape {
                expected: format!("{} ids", embeddings.nrows()),
                got: format!("{}", ids.len()),
            });
        }
        let mut unique = std::collections::HashSet::new();
        for &id in &ids {
            if !unique.insert(id) {
                return Err(StbirError::Data(format!("duplicate gallery id {id}")));
            }
        }
        let mut normalized = embeddings.clone();
        for (i, mut row) in normalized.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(StbirError::Degenerate(format!("zero gallery row {i}")));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(GalleryIndex {
            embeddings: normalized,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Ranked gallery ids per query, scores non-increasing.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub ranked_ids: Vec<Vec<u64>>,
    pub scores: Vec<Vec<f64>>,
}

/// Element-wise addition of sketch and text features into a composite query.
pub fn fuse(f_sketch: &FeatureBatch, f_text: &FeatureBatch) -> Result<FeatureBatch> {
    if f_sketch.values.dim() != f_text.values.dim() {
        return Err(StbirError::Shape {
            expected: format!("{:?}", f_sketch.values.dim()),
            got: format!("{:?}", f_text.values.dim()),
        });
    }
    Ok(FeatureBatch::new(
        &f_sketch.values + &f_text.values,
        Modality::Sketch,
    ))
}

/// Cosine similarity of every query row against every gallery row.
pub fn score(queries: &FeatureBatch, index: &GalleryIndex) -> Result<Array2<f64>> {
    if queries.dim() != index.embeddings.ncols() {
        return Err(StbirError::Shape {
            expected: format!("dim {}", index.embeddings.ncols()),
            got: format!("dim {}", queries.dim()),
        });
    }
    let norms = queries.values.map_axis(Axis(1), |row| row.dot(&row).sqrt());
    for (i, &n) in norms.iter().enumerate() {
        if n == 0.0 {
            return Err(StbirError::Degenerate(format!("zero-norm query row {i}")));
        }
    }
    let mut sims = queries.values.dot(&index.embeddings.t());
    for (i, mut row) in sims.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v / norms[i]);
    }
    Ok(sims)
}

/// Top-k gallery ids per query by descending score; ties broken by lower
/// gallery index.
pub fn top_k(scores: &Array2<f64>, index: &GalleryIndex, k: usize) -> Result<RetrievalResult> {
    let g = index.len();
    if k < 1 || k > g {
        return Err(StbirError::Range(format!("k={k} outside [1, {g}]")));
    }
    let mut ranked_ids = Vec::with_capacity(scores.nrows());
    let mut out_scores = Vec::with_capacity(scores.nrows());
    for row in scores.rows() {
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(k);
        out_scores.push(order.iter().map(|&j| row[j]).collect());
        ranked_ids.push(order.iter().map(|&j| index.ids[j]).collect());
    }
    Ok(RetrievalResult {
        ranked_ids,
        scores: out_scores,
    })
}

/// Fraction of queries whose single ground-truth id appears in their top-k.
/// Results must hold at least k entries per query.
pub fn recall_at_k(results: &RetrievalResult, ground_truth: &[u64], k: usize) -> Result<f64> {
    if results.ranked_ids.len() != ground_truth.len() {
        return Err(StbirError::Shape {
            expected: format!("{} truths", results.ranked_ids.len()),
            got: format!("{}", ground_truth.len()),
        });
    }
    let mut hits = 0usize;
    for (ranked, &truth) in results.ranked_ids.iter().zip(ground_truth) {
        if k > ranked.len() {
            return Err(StbirError::Range(format!(
                "k={k} exceeds ranked list length {}",
                ranked.len()
            )));
        }
        if ranked[..k].contains(&truth) {
            hits += 1;
        }
    }
    Ok(hits as f64 / ground_truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fb(values: Array2<f64>) -> FeatureBatch {
        FeatureBatch::new(values, Modality::Sketch)
    }

    #[test]
    fn fuse_basics() {
        let a = fb(array![[1.0, 2.0]]);
        let b = fb(array![[3.0, 4.0]]);
        let z = fb(array![[0.0, 0.0]]);
        assert_eq!(fuse(&a, &b).unwrap().values, array![[4.0, 6.0]]);
        assert_eq!(
            fuse(&a, &b).unwrap().values,
            fuse(&b, &a).unwrap().values
        );
        assert_eq!(fuse(&a, &z).unwrap().values, a.values);
    }

    #[test]
    fn score_matches_oracle() {
        let gallery = array![[1.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0], [3.0, 0.0, 0.0]];
        let ids = vec![10, 11, 12, 13];
        let index = GalleryIndex::build(&gallery, ids).unwrap();
        let queries = array![[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 2.0], [1.0, 1.0, 1.0]];
        let sims = score(&fb(queries.clone()), &index).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let q = queries.row(i);
                let g = gallery.row(j);
                let oracle = q.dot(&g) / (q.dot(&q).sqrt() * g.dot(&g).sqrt());
                assert!((sims[[i, j]] - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_exact_and_orthogonal() {
        let index = GalleryIndex::build(&array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]).unwrap();
        let sims = score(&fb(array![[2.0, 0.0]]), &index).unwrap();
        assert!((sims[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(sims[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn top_k_ordering_and_ties() {
        let index =
            GalleryIndex::build(&array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], vec![0, 1, 2])
                .unwrap();
        let scores = array![[0.1, 0.9, 0.5]];
        let res = top_k(&scores, &index, 2).unwrap();
        assert_eq!(res.ranked_ids[0], vec![1, 2]);
        // full permutation at k = G
        let res = top_k(&scores, &index, 3).unwrap();
        assert_eq!(res.ranked_ids[0], vec![1, 2, 0]);
        // tie broken by lower gallery index
        let index2 = GalleryIndex::build(&array![[1.0, 0.0], [0.0, 1.0]], vec![7, 8]).unwrap();
        let res = top_k(&array![[0.5, 0.5]], &index2, 1).unwrap();
        assert_eq!(res.ranked_ids[0], vec![7]);
    }

    #[test]
    fn recall_ranks() {
        // truth at ranks 1, 3, 6, 11 (1-based) of 12-item rankings
        let g = 12;
        let mut ranked_ids = Vec::new();
        for rank in [1usize, 3, 6, 11] {
            let mut row: Vec<u64> = (0..g as u64).map(|j| 100 + j).collect();
            row[rank - 1] = 42;
            ranked_ids.push(row);
        }
        let res = RetrievalResult {
            scores: vec![vec![0.0; g]; 4],
            ranked_ids,
        };
        let truth = vec![42; 4];
        assert_eq!(recall_at_k(&res, &truth, 1).unwrap(), 0.25);
        assert_eq!(recall_at_k(&res, &truth, 5).unwrap(), 0.50);
        assert_eq!(recall_at_k(&res, &truth, 10).unwrap(), 0.75);
        assert_eq!(recall_at_k(&res, &truth, 12).unwrap(), 1.0);
    }

    #[test]
    fn ranking_invariant_to_positive_scaling() {
        let gallery = array![[1.0, 0.2], [0.3, 1.0], [0.7, 0.7]];
        let index_a = GalleryIndex::build(&gallery, vec![0, 1, 2]).unwrap();
        let index_b = GalleryIndex::build(&gallery.mapv(|v| v * 4.2), vec![0, 1, 2]).unwrap();
        let q = fb(array![[0.9, 0.4]]);
        let q_scaled = fb(array![[0.9 * 7.0, 0.4 * 7.0]]);
        let ra = top_k(&score(&q, &index_a).unwrap(), &index_a, 3).unwrap();
        let rb = top_k(&score(&q_scaled, &index_b).unwrap(), &index_b, 3).unwrap();
        assert_eq!(ra.ranked_ids, rb.ranked_ids);
    }

    #[test]
    fn self_retrieval_is_rank_one() {
        let gallery = array![[0.3, 0.8], [1.0, -0.2], [-0.5, 0.5]];
        let index = GalleryIndex::build(&gallery, vec![0, 1, 2]).unwrap();
        let q = fb(array![[1.0, -0.2]]);
        let res = top_k(&score(&q, &index).unwrap(), &index, 1).unwrap();
        assert_eq!(res.ranked_ids[0], vec![1]);
    }

    #[test]
    fn invalid_k_rejected() {
        let index = GalleryIndex::build(&array![[1.0, 0.0]], vec![0]).unwrap();
        assert!(top_k(&array![[0.5]], &index, 0).is_err());
        assert!(top_k(&array![[0.5]], &index, 2).is_err());
    }
}
