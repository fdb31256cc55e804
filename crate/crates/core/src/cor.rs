//! Co-occurrence recommender.
//!
//! Counts, for every unordered product pair, the number of sessions whose
//! unique-product set contains both products. Alternatives for a seed are
//! ranked by raw count, ties by ascending product id.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{Dataset, ProductId, Session};
use crate::error::{Error, Result};

/// Ranked alternatives for one seed product.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub seed: ProductId,
    pub items: Vec<(ProductId, f64)>,
    /// The seed is not known to the model; `items` is empty.
    pub unknown_seed: bool,
}

impl RecommendationList {
    pub fn unknown(seed: ProductId) -> Self {
        RecommendationList {
            seed,
            items: Vec::new(),
            unknown_seed: true,
        }
    }

    pub fn product_ids(&self) -> impl Iterator<Item = &ProductId> {
        self.items.iter().map(|(p, _)| p)
    }

    pub fn contains(&self, product: &ProductId) -> bool {
        self.items.iter().any(|(p, _)| p == product)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Top-k lists keyed by seed.
pub type TopK = BTreeMap<ProductId, RecommendationList>;

/// Sort candidates by descending score, then ascending id, and keep `k`.
pub(crate) fn rank(mut candidates: Vec<(ProductId, f64)>, k: usize) -> Vec<(ProductId, f64)> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    candidates.truncate(k);
    candidates
}

/// Sparse symmetric co-occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoocMatrix {
    // Both directions are stored; every write goes through `bump`, which
    // keeps them equal.
    neighbors: BTreeMap<ProductId, BTreeMap<ProductId, u32>>,
    // Number of sessions containing each product.
    occurrences: BTreeMap<ProductId, u32>,
}

impl CoocMatrix {
    pub fn build(dataset: &Dataset) -> Self {
        Self::from_sessions(dataset.sessions())
    }

    pub fn from_sessions<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> Self {
        let mut matrix = CoocMatrix::default();
        for s in sessions {
            matrix.add_session(s);
        }
        matrix
    }

    pub fn add_session(&mut self, session: &Session) {
        let products: Vec<&ProductId> = session.unique_products().into_iter().collect();
        for p in &products {
            *self.occurrences.entry((*p).clone()).or_insert(0) += 1;
        }
        for (i, a) in products.iter().enumerate() {
            for b in &products[i + 1..] {
                self.bump(a, b, 1);
                self.bump(b, a, 1);
            }
        }
    }

    fn bump(&mut self, a: &ProductId, b: &ProductId, delta: u32) {
        *self
            .neighbors
            .entry(a.clone())
            .or_default()
            .entry(b.clone())
            .or_insert(0) += delta;
    }

    fn decrement(&mut self, a: &ProductId, b: &ProductId) -> Result<()> {
        let corrupted = || Error::CorruptedMatrix(a.to_string(), b.to_string());
        let row = self.neighbors.get_mut(a).ok_or_else(corrupted)?;
        let count = row.get_mut(b).ok_or_else(corrupted)?;
        *count -= 1;
        if *count == 0 {
            row.remove(b);
            if row.is_empty() {
                self.neighbors.remove(a);
            }
        }
        Ok(())
    }

    /// Subtracts one session's contribution in place.
    pub fn subtract_session(&mut self, session: &Session) -> Result<()> {
        let products: Vec<&ProductId> = session.unique_products().into_iter().collect();
        for p in &products {
            let Some(n) = self.occurrences.get_mut(*p) else {
                return Err(Error::CorruptedMatrix(p.to_string(), p.to_string()));
            };
            *n -= 1;
            if *n == 0 {
                self.occurrences.remove(*p);
            }
        }
        for (i, a) in products.iter().enumerate() {
            for b in &products[i + 1..] {
                self.decrement(a, b)?;
                self.decrement(b, a)?;
            }
        }
        Ok(())
    }

    /// The matrix that a rebuild without `session` would produce. `self` is
    /// left untouched.
    pub fn remove_session(&self, session: &Session) -> Result<CoocMatrix> {
        let mut out = self.clone();
        out.subtract_session(session)?;
        Ok(out)
    }

    pub fn count(&self, a: &ProductId, b: &ProductId) -> u32 {
        self.neighbors.get(a).and_then(|row| row.get(b)).copied().unwrap_or(0)
    }

    pub fn contains_product(&self, product: &ProductId) -> bool {
        self.occurrences.contains_key(product)
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductId> {
        self.occurrences.keys()
    }

    pub fn n_products(&self) -> usize {
        self.occurrences.len()
    }

    pub fn neighbors(&self, product: &ProductId) -> impl Iterator<Item = (&ProductId, u32)> {
        self.neighbors
            .get(product)
            .into_iter()
            .flat_map(|row| row.iter().map(|(p, c)| (p, *c)))
    }

    /// Number of stored unordered pairs.
    pub fn n_pairs(&self) -> usize {
        self.neighbors.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn top_k(&self, seed: &ProductId, k: usize) -> RecommendationList {
        if !self.contains_product(seed) {
            return RecommendationList::unknown(seed.clone());
        }
        let candidates = self.neighbors(seed).map(|(p, c)| (p.clone(), f64::from(c))).collect();
        RecommendationList {
            seed: seed.clone(),
            items: rank(candidates, k),
            unknown_seed: false,
        }
    }

    /// One list per known product.
    pub fn all_top_k(&self, k: usize) -> TopK {
        self.products().map(|p| (p.clone(), self.top_k(p, k))).collect()
    }

    /// Lists for the given seeds only; pointwise equal to [`Self::top_k`].
    pub fn top_k_for<'a>(&self, seeds: impl IntoIterator<Item = &'a ProductId>, k: usize) -> TopK {
        seeds.into_iter().map(|p| (p.clone(), self.top_k(p, k))).collect()
    }

    /// `a<TAB>b<TAB>count` lines with `a < b`, sorted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (a, row) in &self.neighbors {
            for (b, c) in row.range::<ProductId, _>((std::ops::Bound::Excluded(a), std::ops::Bound::Unbounded)) {
                writeln!(out, "{a}\t{b}\t{c}").unwrap();
            }
        }
        out
    }
}

pub fn build_matrix(dataset: &Dataset) -> CoocMatrix {
    CoocMatrix::build(dataset)
}

pub fn remove_session(matrix: &CoocMatrix, session: &Session) -> Result<CoocMatrix> {
    matrix.remove_session(session)
}

pub fn top_k(matrix: &CoocMatrix, seed: &ProductId, k: usize) -> RecommendationList {
    matrix.top_k(seed, k)
}

pub fn all_top_k(matrix: &CoocMatrix, k: usize) -> TopK {
    matrix.all_top_k(k)
}
