//! Performance indicators: hypothetic conversion rate, revenue
//! approximations, sessions with new products and feature scaling.

use std::collections::{BTreeMap, BTreeSet};

use crate::cor::TopK;
use crate::corpus::{ProductId, Session};
use crate::error::{Error, Result};
use crate::synthgen::EvalLog;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_CORRECTION: f64 = 1.0;

/// Views and orders for one (seed, alternative) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairStat {
    pub n_views: u64,
    pub n_ordered: u64,
}

/// Per-pair session counts over an evaluation log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCounts {
    pairs: BTreeMap<(ProductId, ProductId), PairStat>,
}

impl PairCounts {
    pub fn get(&self, seed: &ProductId, alt: &ProductId) -> Option<PairStat> {
        self.pairs.get(&(seed.clone(), alt.clone())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ProductId, ProductId), &PairStat)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_views(&self) -> u64 {
        self.pairs.values().map(|s| s.n_views).sum()
    }

    pub fn total_orders(&self) -> u64 {
        self.pairs.values().map(|s| s.n_ordered).sum()
    }
}

/// Each eval session counts once per (seed, alternative) pair, however often
/// the seed was viewed in it.
pub fn aggregate_pairs(recs: &TopK, eval_log: &EvalLog) -> PairCounts {
    let mut pairs: BTreeMap<(ProductId, ProductId), PairStat> = BTreeMap::new();
    for session in eval_log.sessions() {
        for seed in &session.viewed {
            let Some(list) = recs.get(seed) else { continue };
            for alt in list.product_ids() {
                let stat = pairs.entry((seed.clone(), alt.clone())).or_default();
                stat.n_views += 1;
                if session.ordered.contains(alt) {
                    stat.n_ordered += 1;
                }
            }
        }
    }
    PairCounts { pairs }
}

/// Hypothetic conversion rate with its raw totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionRate {
    pub value: f64,
    pub views: u64,
    pub orders: u64,
}

impl ConversionRate {
    /// False when no views were recorded and `value` is a placeholder 0.
    pub fn is_defined(&self) -> bool {
        self.views > 0
    }
}

/// `sum(n_ordered) / sum(n_views) * c`, 0 (flagged) without views.
pub fn conversion_rate(pairs: &PairCounts, c: f64) -> ConversionRate {
    conversion_rate_from_totals(pairs.total_orders(), pairs.total_views(), c)
}

pub(crate) fn conversion_rate_from_totals(orders: u64, views: u64, c: f64) -> ConversionRate {
    let value = if views == 0 {
        0.0
    } else {
        orders as f64 / views as f64 * c
    };
    ConversionRate { value, views, orders }
}

/// Conversion rate of a model given only its top-k lists.
pub fn conversion_rate_of(recs: &TopK, eval_log: &EvalLog, c: f64) -> ConversionRate {
    conversion_rate(&aggregate_pairs(recs, eval_log), c)
}

/// Revenue approximation under constant visits and price per product.
pub fn revenue(n_products: usize, cr: f64, unit_value: f64) -> f64 {
    n_products as f64 * cr * unit_value
}

pub fn revenue_per_session(revenue: f64, n_sessions: usize) -> Result<f64> {
    if n_sessions == 0 {
        return Err(Error::ZeroSessions);
    }
    Ok(revenue / n_sessions as f64)
}

/// A fraction together with a flag for the empty-denominator case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fraction {
    pub value: f64,
    pub empty: bool,
}

/// Share of `added` sessions that click at least one product outside `prev`.
pub fn snp(prev: &BTreeSet<ProductId>, added: &[&Session]) -> Fraction {
    if added.is_empty() {
        return Fraction {
            value: 0.0,
            empty: true,
        };
    }
    let new = added.iter().filter(|s| s.products().any(|p| !prev.contains(p))).count();
    Fraction {
        value: new as f64 / added.len() as f64,
        empty: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub values: Vec<f64>,
    /// The input was constant (all outputs 0) or empty.
    pub degenerate: bool,
}

/// Min-max scaling into `[0, 1]`.
pub fn feature_scale(series: &[f64]) -> Scaled {
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if series.is_empty() || max <= min {
        return Scaled {
            values: vec![0.0; series.len()],
            degenerate: true,
        };
    }
    let span = max - min;
    Scaled {
        values: series.iter().map(|x| (x - min) / span).collect(),
        degenerate: false,
    }
}

/// One model's indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiReport {
    pub days: u32,
    pub n_sessions: usize,
    pub n_products: usize,
    pub snp: f64,
    pub cr: f64,
    pub revenue: f64,
    pub revenue_per_session: f64,
    pub cpu_seconds: f64,
    pub correction_c: f64,
}

impl KpiReport {
    pub const CSV_HEADER: &'static str = "days,n_sessions,n_products,snp,cr,revenue,revenue_per_session,cpu_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.days,
            self.n_sessions,
            self.n_products,
            self.snp,
            self.cr,
            self.revenue,
            self.revenue_per_session,
            self.cpu_seconds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cor::RecommendationList;
    use crate::corpus::tests::{pid, session};
    use crate::synthgen::EvalSession;

    fn recs(seed: &str, alts: &[&str]) -> TopK {
        let list = RecommendationList {
            seed: pid(seed),
            items: alts.iter().map(|a| (pid(a), 1.0)).collect(),
            unknown_seed: false,
        };
        [(pid(seed), list)].into_iter().collect()
    }

    fn eval(sessions: &[(&[&str], &[&str])]) -> EvalLog {
        EvalLog::new(
            sessions
                .iter()
                .enumerate()
                .map(|(i, (v, o))| EvalSession {
                    session_id: format!("e{i}"),
                    viewed: v.iter().map(|p| pid(p)).collect(),
                    ordered: o.iter().map(|p| pid(p)).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn aggregation_definition() {
        let r = recs("A", &["B", "C"]);
        let p = aggregate_pairs(&r, &eval(&[(&["A"], &["B"])]));
        assert_eq!(
            p.get(&pid("A"), &pid("B")),
            Some(PairStat {
                n_views: 1,
                n_ordered: 1
            })
        );
        assert_eq!(
            p.get(&pid("A"), &pid("C")),
            Some(PairStat {
                n_views: 1,
                n_ordered: 0
            })
        );

        let p = aggregate_pairs(&r, &eval(&[(&["A"], &[])]));
        assert_eq!(p.total_views(), 2);
        assert_eq!(p.total_orders(), 0);

        assert!(aggregate_pairs(&r, &eval(&[(&["Z"], &["B"])])).is_empty());
    }

    #[test]
    fn conversion_rate_formula() {
        let r = recs("A", &["B", "C"]);
        // Three log lines: views 2+2+2 = 6, orders 1+2+0 = 3.
        let log = eval(&[(&["A"], &["B"]), (&["A", "X"], &["B", "C"]), (&["A"], &["X"])]);
        let cr = conversion_rate(&aggregate_pairs(&r, &log), 1.0);
        assert_eq!(cr.value, 0.5);
        assert_eq!((cr.orders, cr.views), (3, 6));
        let doubled = conversion_rate(&aggregate_pairs(&r, &log), 2.0);
        assert_eq!(doubled.value, 2.0 * cr.value);

        assert_eq!(conversion_rate_from_totals(5, 100, 1.0).value, 0.05);
        assert_eq!(conversion_rate_from_totals(0, 100, 1.0).value, 0.0);
        let none = conversion_rate(&PairCounts::default(), 1.0);
        assert_eq!(none.value, 0.0);
        assert!(!none.is_defined());
    }

    #[test]
    fn revenue_helpers() {
        assert_eq!(revenue(100, 0.05, 10.0), 50.0);
        assert_eq!(revenue(100, 0.0, 10.0), 0.0);
        assert_eq!(revenue(200, 0.05, 10.0), 2.0 * revenue(100, 0.05, 10.0));
        assert_eq!(revenue_per_session(50.0, 10).unwrap(), 5.0);
        assert_eq!(revenue_per_session(0.0, 10).unwrap(), 0.0);
        assert!(matches!(revenue_per_session(50.0, 0), Err(Error::ZeroSessions)));
    }

    #[test]
    fn snp_examples() {
        let prev: BTreeSet<_> = [pid("A")].into_iter().collect();
        let ab = session("s1", 0, &["A", "B"]);
        let a = session("s2", 0, &["A"]);
        assert_eq!(snp(&prev, &[&ab, &a]).value, 0.5);
        assert_eq!(snp(&BTreeSet::new(), &[&ab, &a]).value, 1.0);
        assert_eq!(snp(&prev, &[&a]).value, 0.0);
        assert!(snp(&prev, &[]).empty);
    }

    #[test]
    fn scaling() {
        assert_eq!(feature_scale(&[2.0, 4.0, 6.0]).values, vec![0.0, 0.5, 1.0]);
        let flat = feature_scale(&[5.0, 5.0]);
        assert_eq!(flat.values, vec![0.0, 0.0]);
        assert!(flat.degenerate);
        let s = feature_scale(&[3.0, -1.0, 10.0, 7.5]);
        assert_eq!(s.values[1], 0.0);
        assert_eq!(s.values[2], 1.0);
    }
}
