//! Single-threaded skip-gram training with a hierarchical softmax output layer.

use crate::corpus::Dataset;
use crate::error::Result;

use super::vocab::Vocabulary;
use super::{EmbeddingModel, Hyperparams};

/// Logits outside ±MAX_LOGIT are skipped, as in the reference algorithm.
const MAX_LOGIT: f64 = 6.0;
const MIN_RATE_FRACTION: f64 = 1e-4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Initial input weight for (entry, dimension): uniform in
/// `[-0.5/dims, 0.5/dims)`, keyed only by (seed, entry, dimension).
pub(crate) fn initial_weight(seed: u64, entry: usize, dim: usize, dims: usize) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ entry as u64) ^ dim as u64);
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    (unit - 0.5) / dims as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct Trainer<'v> {
    vocab: &'v Vocabulary,
    dims: usize,
    /// Input (product) vectors, row-major by vocabulary index.
    pub(crate) input: Vec<f64>,
    /// Inner-node vectors of the Huffman tree.
    pub(crate) nodes: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'v> Trainer<'v> {
    pub(crate) fn new(vocab: &'v Vocabulary, dims: usize, seed: u64) -> Self {
        let v = vocab.len();
        let mut input = vec![0.0; v * dims];
        for (entry, row) in input.chunks_exact_mut(dims).enumerate() {
            for (dim, w) in row.iter_mut().enumerate() {
                *w = initial_weight(seed, entry, dim, dims);
            }
        }
        Trainer {
            vocab,
            dims,
            input,
            nodes: vec![0.0; v.saturating_sub(1) * dims],
            scratch: vec![0.0; dims],
        }
    }

    /// One gradient step: input vector of `context` predicting the Huffman
    /// path of `target`.
    pub(crate) fn update_pair(&mut self, context: usize, target: usize, rate: f64) {
        let d = self.dims;
        let entry = &self.vocab.entries()[target];
        let l1 = context * d;
        self.scratch.fill(0.0);
        for (&node, &code) in entry.point.iter().zip(&entry.code) {
            let l2 = node as usize * d;
            let x = &self.input[l1..l1 + d];
            let y = &mut self.nodes[l2..l2 + d];
            let f: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            if f <= -MAX_LOGIT || f >= MAX_LOGIT {
                continue;
            }
            let g = (1.0 - f64::from(code) - sigmoid(f)) * rate;
            for ((e, yv), xv) in self.scratch.iter_mut().zip(y.iter_mut()).zip(x) {
                *e += g * *yv;
                *yv += g * xv;
            }
        }
        for (w, e) in self.input[l1..l1 + d].iter_mut().zip(&self.scratch) {
            *w += e;
        }
    }

    /// Negative log-likelihood of `target`'s path given `context`.
    #[cfg(test)]
    pub(crate) fn pair_loss(&self, context: usize, target: usize) -> f64 {
        let d = self.dims;
        let entry = &self.vocab.entries()[target];
        let x = &self.input[context * d..(context + 1) * d];
        entry
            .point
            .iter()
            .zip(&entry.code)
            .map(|(&node, &code)| {
                let y = &self.nodes[node as usize * d..(node as usize + 1) * d];
                let f: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let p = sigmoid(f);
                if code == 0 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum()
    }
}

pub fn train(dataset: &Dataset, hyper: &Hyperparams) -> Result<EmbeddingModel> {
    hyper.validate()?;
    let vocab = Vocabulary::build(dataset, hyper.min_count)?;
    let sentences: Vec<Vec<usize>> = dataset
        .sessions()
        .iter()
        .map(|s| s.products().filter_map(|p| vocab.index_of(p)).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();

    let mut trainer = Trainer::new(&vocab, hyper.dimensions, hyper.rng_seed);
    let budget = (hyper.iterations as f64) * vocab.train_words() as f64 + 1.0;
    let window = hyper.window;
    let mut processed = 0u64;
    for _ in 0..hyper.iterations {
        for sentence in &sentences {
            for (pos, &word) in sentence.iter().enumerate() {
                let progress = processed as f64 / budget;
                let rate = hyper.initial_learning_rate * (1.0 - progress).max(MIN_RATE_FRACTION);
                processed += 1;
                let lo = pos.saturating_sub(window);
                let hi = (pos + window).min(sentence.len() - 1);
                for (c, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if c != pos {
                        trainer.update_pair(context, word, rate);
                    }
                }
            }
        }
    }
    let input = std::mem::take(&mut trainer.input);
    Ok(EmbeddingModel::from_raw(vocab, input, hyper.clone()))
}
