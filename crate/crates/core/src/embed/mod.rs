//! Vector recommender: product embeddings from skip-gram with hierarchical
//! softmax, trained on sessions as sentences, and cosine top-k retrieval.
//!
//! Training is a pure function of (dataset, hyperparameters). Vectors are
//! rounded to `rounding_digits` decimals before any similarity is computed.

mod train;
mod vocab;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cor::{rank, RecommendationList, TopK};
use crate::corpus::ProductId;
use crate::error::{Error, Result};

pub use train::train;
pub use vocab::{build_vocab, VocabEntry, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub dimensions: usize,
    pub iterations: usize,
    /// Context positions on each side; fixed, never sampled.
    pub window: usize,
    pub min_count: u64,
    pub initial_learning_rate: f64,
    pub rounding_digits: u32,
    pub rng_seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dimensions: 200,
            iterations: 5,
            window: 5,
            min_count: 5,
            initial_learning_rate: 0.025,
            rounding_digits: 4,
            rng_seed: 1,
        }
    }
}

impl Hyperparams {
    pub fn with_seed(rng_seed: u64) -> Self {
        Hyperparams {
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dimensions == 0 {
            return bad("embed.dimensions must be at least 1");
        }
        if self.window == 0 {
            return bad("embed.window must be at least 1");
        }
        if self.min_count == 0 {
            return bad("embed.min_count must be at least 1");
        }
        if self.iterations == 0 {
            return bad("embed.iterations must be at least 1");
        }
        if self.initial_learning_rate.is_nan() || self.initial_learning_rate <= 0.0 {
            return bad("embed.initial_learning_rate must be positive");
        }
        if self.rounding_digits > 15 {
            return bad("embed.rounding_digits must be at most 15");
        }
        Ok(())
    }
}

/// Round to `digits` decimals; negative zero is normalised to zero.
pub fn round_to(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (x * scale).round() / scale + 0.0
}

/// Trained product vectors, one per vocabulary entry, already rounded.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocabulary: Vocabulary,
    vectors: Vec<f64>,
    norms: Vec<f64>,
    hyper: Hyperparams,
}

impl EmbeddingModel {
    pub(crate) fn from_raw(vocabulary: Vocabulary, mut vectors: Vec<f64>, hyper: Hyperparams) -> Self {
        for v in vectors.iter_mut() {
            *v = round_to(*v, hyper.rounding_digits);
        }
        let norms = vectors
            .chunks_exact(hyper.dimensions)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        EmbeddingModel {
            vocabulary,
            vectors,
            norms,
            hyper,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn dimensions(&self) -> usize {
        self.hyper.dimensions
    }

    pub fn vector(&self, product: &ProductId) -> Option<&[f64]> {
        self.vocabulary.index_of(product).map(|i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        let d = self.hyper.dimensions;
        &self.vectors[i * d..(i + 1) * d]
    }

    fn cosine_at(&self, i: usize, j: usize) -> f64 {
        let denom = self.norms[i] * self.norms[j];
        if denom == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
        dot / denom
    }

    /// Cosine similarity of two vocabulary products.
    pub fn cosine(&self, a: &ProductId, b: &ProductId) -> Option<f64> {
        Some(self.cosine_at(self.vocabulary.index_of(a)?, self.vocabulary.index_of(b)?))
    }

    pub fn top_k_similar(&self, seed: &ProductId, k: usize) -> RecommendationList {
        let Some(i) = self.vocabulary.index_of(seed) else {
            return RecommendationList::unknown(seed.clone());
        };
        let candidates = self
            .vocabulary
            .entries()
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, e)| (e.product.clone(), self.cosine_at(i, j)))
            .collect();
        RecommendationList {
            seed: seed.clone(),
            items: rank(candidates, k),
            unknown_seed: false,
        }
    }

    /// Top-k lists for `seeds`, or for the whole vocabulary when `None`.
    /// Seeds outside the vocabulary get an unknown-seed list.
    pub fn all_top_k_similar(&self, k: usize, seeds: Option<&BTreeSet<ProductId>>) -> TopK {
        match seeds {
            Some(seeds) => seeds.iter().map(|p| (p.clone(), self.top_k_similar(p, k))).collect(),
            None => self
                .vocabulary
                .products()
                .map(|p| (p.clone(), self.top_k_similar(p, k)))
                .collect(),
        }
    }

    /// Text dump: `n_entries dimensions`, then `product v1 .. vd` per entry in
    /// vocabulary order, values at exactly `rounding_digits` decimals.
    pub fn dump(&self) -> String {
        let digits = self.hyper.rounding_digits as usize;
        let mut out = String::new();
        writeln!(out, "{} {}", self.vocabulary.len(), self.hyper.dimensions).unwrap();
        for (i, e) in self.vocabulary.entries().iter().enumerate() {
            out.push_str(e.product.as_str());
            for v in self.row(i) {
                write!(out, " {v:.digits$}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn top_k_similar(model: &EmbeddingModel, seed: &ProductId, k: usize) -> RecommendationList {
    model.top_k_similar(seed, k)
}

pub fn all_top_k_similar(model: &EmbeddingModel, k: usize, seeds: Option<&BTreeSet<ProductId>>) -> TopK {
    model.all_top_k_similar(k, seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::pid;

    /// Model with hand-set vectors; `rows` are rounded like trained ones.
    pub(crate) fn model_from_rows(rows: &[(&str, Vec<f64>)]) -> EmbeddingModel {
        let counts = rows.iter().map(|(p, _)| (pid(p), 10)).collect();
        let vocab = Vocabulary::from_counts(counts).unwrap();
        let dims = rows[0].1.len();
        let mut vectors = vec![0.0; rows.len() * dims];
        for (p, v) in rows {
            let i = vocab.index_of(&pid(p)).unwrap();
            vectors[i * dims..(i + 1) * dims].copy_from_slice(v);
        }
        let hyper = Hyperparams {
            dimensions: dims,
            ..Hyperparams::default()
        };
        EmbeddingModel::from_raw(vocab, vectors, hyper)
    }

    #[test]
    fn rounding_is_idempotent() {
        for x in [0.123456, -0.00004, 1.99995, -3.33337777, 0.0] {
            let r = round_to(x, 4);
            assert_eq!(round_to(r, 4), r);
        }
        assert_eq!(format!("{:.4}", round_to(-0.00004, 4)), "0.0000");
    }

    #[test]
    fn two_entry_vocabulary() {
        let m = model_from_rows(&[("A", vec![1.0, 0.0]), ("B", vec![1.0, 1.0])]);
        let list = m.top_k_similar(&pid("A"), 5);
        assert_eq!(list.items.len(), 1);
        assert_eq!(list.items[0].0, pid("B"));
        assert!((list.items[0].1 - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((m.cosine(&pid("A"), &pid("A")).unwrap() - 1.0).abs() < 1e-12);
        let unknown = m.top_k_similar(&pid("Z"), 5);
        assert!(unknown.unknown_seed && unknown.is_empty());
    }

    #[test]
    fn ranking_matches_brute_force_sort() {
        // 20 products on a circle-ish layout with deliberate ties.
        let rows: Vec<(String, Vec<f64>)> = (0..20)
            .map(|i| {
                let a = (i % 10) as f64 * 0.3;
                (
                    format!("p{i:02}"),
                    vec![round_to(a.cos(), 4), round_to(a.sin(), 4), 0.5],
                )
            })
            .collect();
        let borrowed: Vec<(&str, Vec<f64>)> = rows.iter().map(|(p, v)| (p.as_str(), v.clone())).collect();
        let m = model_from_rows(&borrowed);
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        for (seed, v) in &rows {
            let mut expected: Vec<(String, f64)> = rows
                .iter()
                .filter(|(p, _)| p != seed)
                .map(|(p, w)| (p.clone(), cos(v, w)))
                .collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            expected.truncate(5);
            let got: Vec<String> = m
                .top_k_similar(&pid(seed), 5)
                .product_ids()
                .map(|p| p.to_string())
                .collect();
            let want: Vec<String> = expected.into_iter().map(|(p, _)| p).collect();
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn all_top_k_similar_restricts_seeds() {
        let rows: Vec<(String, Vec<f64>)> = (0..10).map(|i| (format!("p{i}"), vec![1.0, i as f64])).collect();
        let borrowed: Vec<(&str, Vec<f64>)> = rows.iter().map(|(p, v)| (p.as_str(), v.clone())).collect();
        let m = model_from_rows(&borrowed);
        let all = m.all_top_k_similar(5, None);
        assert_eq!(all.len(), 10);
        for (seed, list) in &all {
            assert_eq!(list, &m.top_k_similar(seed, 5));
        }
        let seeds: BTreeSet<_> = ["p1", "p2", "zz"].iter().map(|p| pid(p)).collect();
        let some = m.all_top_k_similar(5, Some(&seeds));
        assert_eq!(some.len(), 3);
        assert!(some[&pid("zz")].unknown_seed);
    }

    #[test]
    fn dump_format() {
        let m = model_from_rows(&[("A", vec![0.12344, -0.5]), ("B", vec![1.0, 0.0])]);
        assert_eq!(m.dump(), "2 2\nA 0.1234 -0.5000\nB 1.0000 0.0000\n");
    }
}
