use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Dataset, ProductId};
use crate::error::{Error, Result};

/// One vocabulary entry with its Huffman path. `code[d]` is the branch taken
/// at inner node `point[d]`, listed root first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub product: ProductId,
    pub count: u64,
    pub code: Vec<u8>,
    pub point: Vec<u32>,
}

/// Products kept for training, sorted by descending token count, ties by
/// ascending product id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<ProductId, usize>,
}

impl Vocabulary {
    pub fn build(dataset: &Dataset, min_count: u64) -> Result<Self> {
        let mut counts: BTreeMap<&ProductId, u64> = BTreeMap::new();
        for s in dataset.sessions() {
            for p in s.products() {
                *counts.entry(p).or_insert(0) += 1;
            }
        }
        let kept = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .map(|(p, c)| (p.clone(), c))
            .collect();
        Self::from_counts(kept).ok_or(Error::EmptyVocabulary(min_count))
    }

    /// Builds from explicit counts; `None` if empty.
    pub fn from_counts(mut counts: Vec<(ProductId, u64)>) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let freqs: Vec<u64> = counts.iter().map(|(_, c)| *c).collect();
        let paths = huffman_paths(&freqs);
        let entries: Vec<VocabEntry> = counts
            .into_iter()
            .zip(paths)
            .map(|((product, count), (code, point))| VocabEntry {
                product,
                count,
                code,
                point,
            })
            .collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.product.clone(), i))
            .collect();
        Some(Vocabulary { entries, index })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, product: &ProductId) -> Option<usize> {
        self.index.get(product).copied()
    }

    pub fn contains(&self, product: &ProductId) -> bool {
        self.index.contains_key(product)
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductId> {
        self.entries.iter().map(|e| &e.product)
    }

    /// Total count of in-vocabulary tokens.
    pub fn train_words(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }
}

pub fn build_vocab(dataset: &Dataset, min_count: u64) -> Result<Vocabulary> {
    Vocabulary::build(dataset, min_count)
}

/// Huffman codes over leaves given in descending frequency order.
///
/// Two-queue construction: leaves are consumed from the tail of the sorted
/// list, merged nodes in creation order. On equal weight the leaf is taken
/// first, so the tree is a deterministic function of the frequency list.
/// Inner nodes are numbered 0..n-1 in creation order; the root is n-2.
fn huffman_paths(freqs: &[u64]) -> Vec<(Vec<u8>, Vec<u32>)> {
    let n = freqs.len();
    if n == 1 {
        return vec![(Vec::new(), Vec::new())];
    }
    let total = 2 * n - 1;
    let mut weight = vec![u64::MAX; total];
    weight[..n].copy_from_slice(freqs);
    let mut parent = vec![0usize; total];
    let mut bit = vec![0u8; total];

    let mut leaf = n as isize - 1;
    let mut inner = n;
    let mut take = |weight: &[u64]| -> usize {
        if leaf >= 0 && weight[leaf as usize] <= weight[inner] {
            leaf -= 1;
            (leaf + 1) as usize
        } else {
            inner += 1;
            inner - 1
        }
    };
    for node in n..total {
        let first = take(&weight);
        let second = take(&weight);
        weight[node] = weight[first].saturating_add(weight[second]);
        parent[first] = node;
        parent[second] = node;
        bit[second] = 1;
    }

    let root = total - 1;
    (0..n)
        .map(|leaf| {
            let mut code = Vec::new();
            let mut point = Vec::new();
            let mut node = leaf;
            while node != root {
                code.push(bit[node]);
                point.push((parent[node] - n) as u32);
                node = parent[node];
            }
            code.reverse();
            point.reverse();
            (code, point)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{flat_catalog, pid, session};

    fn tokens(spec: &[(&str, usize)]) -> Dataset {
        let cat = flat_catalog(&spec.iter().map(|(p, _)| (*p, "c")).collect::<Vec<_>>());
        let clicks: Vec<&str> = spec.iter().flat_map(|(p, n)| std::iter::repeat_n(*p, *n)).collect();
        Dataset::new(vec![session("s", 0, &clicks)], cat).unwrap()
    }

    #[test]
    fn min_count_and_order() {
        let v = build_vocab(&tokens(&[("C", 4), ("B", 5), ("A", 7)]), 5).unwrap();
        let got: Vec<_> = v.entries().iter().map(|e| (e.product.clone(), e.count)).collect();
        assert_eq!(got, vec![(pid("A"), 7), (pid("B"), 5)]);
        assert!(v.entries().iter().all(|e| e.code.len() == 1));
        assert_ne!(v.entries()[0].code, v.entries()[1].code);

        let tie = build_vocab(&tokens(&[("B", 5), ("A", 5)]), 5).unwrap();
        assert_eq!(tie.products().cloned().collect::<Vec<_>>(), vec![pid("A"), pid("B")]);

        assert!(matches!(
            build_vocab(&tokens(&[("A", 2)]), 5),
            Err(Error::EmptyVocabulary(5))
        ));
    }

    #[test]
    fn huffman_is_prefix_free_and_optimal_shape() {
        let freqs = [40, 30, 10, 10, 5, 3, 1, 1];
        let paths = huffman_paths(&freqs);
        for (i, (a, pa)) in paths.iter().enumerate() {
            assert_eq!(a.len(), pa.len());
            assert_eq!(pa[0], (freqs.len() - 2) as u32, "paths start at the root");
            for (j, (b, _)) in paths.iter().enumerate() {
                if i != j {
                    assert!(!b.starts_with(a), "{a:?} prefixes {b:?}");
                }
            }
        }
        // Kraft equality for a full binary tree.
        let kraft: f64 = paths.iter().map(|(c, _)| 0.5f64.powi(c.len() as i32)).sum();
        assert!((kraft - 1.0).abs() < 1e-12);
        // More frequent leaves never get longer codes.
        for w in paths.windows(2) {
            assert!(w[0].0.len() <= w[1].0.len());
        }
        assert_eq!(huffman_paths(&[3]), vec![(vec![], vec![])]);
    }
}
