//! Leave-one-out sensitivity harness: a Δ model per omitted session, output
//! change detection against the baseline, the conversion-rate delta turned
//! into a per-session value, and the four constellations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cor::{CoocMatrix, RecommendationList, TopK};
use crate::corpus::{Dataset, ProductId};
use crate::embed::{self, EmbeddingModel, Hyperparams};
use crate::error::{Error, Result};
use crate::kpi;
use crate::synthgen::EvalLog;

pub const DEFAULT_NEUTRAL_BAND: f64 = 0.0005;
pub const DEFAULT_BIN_WIDTH: f64 = 0.001;

/// Serialized model plus its top-k lists.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltModel {
    pub serialized: String,
    pub top_k: TopK,
}

pub trait ModelBuilder: Sync {
    fn name(&self) -> &'static str;
    fn build(&self, dataset: &Dataset, k: usize) -> Result<BuiltModel>;
}

pub struct CorBuilder;

impl ModelBuilder for CorBuilder {
    fn name(&self) -> &'static str {
        "cor"
    }

    fn build(&self, dataset: &Dataset, k: usize) -> Result<BuiltModel> {
        let m = CoocMatrix::build(dataset);
        Ok(BuiltModel {
            serialized: m.dump(),
            top_k: m.all_top_k(k),
        })
    }
}

pub struct VrBuilder {
    pub hyper: Hyperparams,
}

impl ModelBuilder for VrBuilder {
    fn name(&self) -> &'static str {
        "vr"
    }

    fn build(&self, dataset: &Dataset, k: usize) -> Result<BuiltModel> {
        let m = embed::train(dataset, &self.hyper)?;
        Ok(BuiltModel {
            serialized: m.dump(),
            top_k: m.all_top_k_similar(k, None),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityReport {
    pub engine: String,
    pub stable: bool,
    /// First difference found, serialized model before top-k lists.
    pub divergence: Option<String>,
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.divergence {
            None => writeln!(f, "{}: PASS (serialized models and top-k lists identical)", self.engine),
            Some(d) => writeln!(f, "{}: FAIL\nfirst divergence: {d}", self.engine),
        }
    }
}

fn first_divergence(a: &BuiltModel, b: &BuiltModel) -> Option<String> {
    if a.serialized != b.serialized {
        let mut la = a.serialized.lines();
        let mut lb = b.serialized.lines();
        for line in 1.. {
            match (la.next(), lb.next()) {
                (Some(x), Some(y)) if x == y => continue,
                (x, y) => {
                    let show = |s: Option<&str>| s.map_or("<end>".to_owned(), |s| truncate(s, 120));
                    return Some(format!("model line {line}: {:?} vs {:?}", show(x), show(y)));
                }
            }
        }
    }
    let seeds: BTreeSet<&ProductId> = a.top_k.keys().chain(b.top_k.keys()).collect();
    for seed in seeds {
        let ids = |t: &TopK| {
            t.get(seed)
                .map(|l| l.product_ids().map(|p| p.to_string()).collect::<Vec<_>>())
        };
        let (x, y) = (ids(&a.top_k), ids(&b.top_k));
        if x != y {
            return Some(format!("top-k of {seed}: {x:?} vs {y:?}"));
        }
    }
    None
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}

/// Builds twice on identical input and compares the results.
pub fn verify_stability(dataset: &Dataset, builder: &dyn ModelBuilder, k: usize) -> Result<StabilityReport> {
    verify_stability_pair(dataset, builder, builder, k)
}

/// Same check with two builders that are supposed to be equivalent.
pub fn verify_stability_pair(
    dataset: &Dataset,
    first: &dyn ModelBuilder,
    second: &dyn ModelBuilder,
    k: usize,
) -> Result<StabilityReport> {
    let a = first.build(dataset, k)?;
    let b = second.build(dataset, k)?;
    let divergence = first_divergence(&a, &b);
    Ok(StabilityReport {
        engine: first.name().to_owned(),
        stable: divergence.is_none(),
        divergence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    SameList,
    ReorderedOnly,
    MembershipChanged,
    SeedMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OutputDiff {
    pub changed: bool,
    pub n_changed_seeds: usize,
    pub n_compared_seeds: usize,
    pub change_kinds: BTreeMap<ProductId, ChangeKind>,
}

impl OutputDiff {
    pub fn count(&self, kind: ChangeKind) -> usize {
        self.change_kinds.values().filter(|k| **k == kind).count()
    }
}

fn compare_lists(base: Option<&RecommendationList>, delta: Option<&RecommendationList>, k: usize) -> ChangeKind {
    fn known(l: Option<&RecommendationList>) -> Option<&RecommendationList> {
        l.filter(|l| !l.unknown_seed)
    }
    match (known(base), known(delta)) {
        (None, None) => ChangeKind::SameList,
        (Some(_), None) => ChangeKind::SeedMissing,
        (None, Some(_)) => ChangeKind::MembershipChanged,
        (Some(a), Some(b)) => {
            let a: Vec<&ProductId> = a.product_ids().take(k).collect();
            let b: Vec<&ProductId> = b.product_ids().take(k).collect();
            if a == b {
                ChangeKind::SameList
            } else if a.iter().collect::<BTreeSet<_>>() == b.iter().collect::<BTreeSet<_>>() {
                ChangeKind::ReorderedOnly
            } else {
                ChangeKind::MembershipChanged
            }
        }
    }
}

/// Compares the ordered product-id sequences per seed; scores are ignored.
pub fn diff_topk(base: &TopK, delta: &TopK, k: usize) -> OutputDiff {
    let seeds: BTreeSet<&ProductId> = base.keys().chain(delta.keys()).collect();
    let change_kinds: BTreeMap<ProductId, ChangeKind> = seeds
        .into_iter()
        .map(|s| (s.clone(), compare_lists(base.get(s), delta.get(s), k)))
        .collect();
    let n_changed_seeds = change_kinds.values().filter(|k| **k != ChangeKind::SameList).count();
    OutputDiff {
        changed: n_changed_seeds > 0,
        n_changed_seeds,
        n_compared_seeds: change_kinds.len(),
        change_kinds,
    }
}

pub fn relative_cr_change(cr_base: f64, cr_delta: f64) -> Result<f64> {
    if cr_base <= 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok((cr_delta - cr_base) / cr_base)
}

pub fn session_value(rel_cr_change: f64, revenue_base: f64) -> f64 {
    -rel_cr_change * revenue_base + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constellation {
    NoOutputChange,
    ChangeNoKpi,
    Toxic,
    Valuable,
}

impl Constellation {
    pub const ALL: [Constellation; 4] = [
        Constellation::NoOutputChange,
        Constellation::ChangeNoKpi,
        Constellation::Toxic,
        Constellation::Valuable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Constellation::NoOutputChange => "NoOutputChange",
            Constellation::ChangeNoKpi => "ChangeNoKpi",
            Constellation::Toxic => "Toxic",
            Constellation::Valuable => "Valuable",
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Toxic means the system does better without the session.
pub fn classify(diff: &OutputDiff, rel_cr_change: f64, neutral_band: f64) -> Constellation {
    if !diff.changed {
        Constellation::NoOutputChange
    } else if rel_cr_change.abs() <= neutral_band {
        Constellation::ChangeNoKpi
    } else if rel_cr_change > neutral_band {
        Constellation::Toxic
    } else {
        Constellation::Valuable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub k: usize,
    pub neutral_band: f64,
    /// Sessions to leave out; `None` means every session.
    pub sample: Option<Vec<String>>,
    /// Revenue the value is proportional to. Defaults to the baseline
    /// revenue approximation over the baseline seeds at unit price.
    pub revenue_base: Option<f64>,
    pub correction_c: f64,
    /// Largest dataset on which the vector recommender may run exhaustively.
    pub max_exhaustive_vr: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            k: kpi::DEFAULT_K,
            neutral_band: DEFAULT_NEUTRAL_BAND,
            sample: None,
            revenue_base: None,
            correction_c: kpi::DEFAULT_CORRECTION,
            max_exhaustive_vr: 0,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("harness.k must be at least 1".into()));
        }
        if self.neutral_band.is_nan() || self.neutral_band < 0.0 {
            return Err(Error::Config("harness.neutral_band must be non-negative".into()));
        }
        Ok(())
    }

    fn revenue_for(&self, baseline: &TopK, cr_base: f64) -> f64 {
        self.revenue_base
            .unwrap_or_else(|| kpi::revenue(baseline.values().filter(|l| !l.unknown_seed).count(), cr_base, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    pub session_id: String,
    pub diff: OutputDiff,
    pub cr_base: f64,
    pub cr_delta: f64,
    pub rel_cr_change: f64,
    pub value: f64,
    pub constellation: Constellation,
}

struct Baseline {
    top_k: TopK,
    cr: f64,
    revenue: f64,
}

impl Baseline {
    fn new(top_k: TopK, eval_log: &EvalLog, cfg: &HarnessConfig) -> Result<Self> {
        let cr = kpi::conversion_rate_of(&top_k, eval_log, cfg.correction_c).value;
        if cr <= 0.0 {
            return Err(Error::UndefinedBaseline);
        }
        let revenue = cfg.revenue_for(&top_k, cr);
        Ok(Baseline { top_k, cr, revenue })
    }

    fn record(
        &self,
        session_id: &str,
        delta: &TopK,
        eval_log: &EvalLog,
        cfg: &HarnessConfig,
    ) -> Result<SensitivityRecord> {
        let diff = diff_topk(&self.top_k, delta, cfg.k);
        let cr_delta = kpi::conversion_rate_of(delta, eval_log, cfg.correction_c).value;
        let rel = relative_cr_change(self.cr, cr_delta)?;
        Ok(SensitivityRecord {
            session_id: session_id.to_owned(),
            constellation: classify(&diff, rel, cfg.neutral_band),
            value: session_value(rel, self.revenue),
            diff,
            cr_base: self.cr,
            cr_delta,
            rel_cr_change: rel,
        })
    }
}

fn resolve_sample(dataset: &Dataset, sample: Option<&[String]>) -> Result<Vec<String>> {
    let mut ids: Vec<String> = match sample {
        None => dataset.session_ids().map(str::to_owned).collect(),
        Some(ids) => {
            for id in ids {
                if dataset.get(id).is_none() {
                    return Err(Error::SessionNotFound(id.clone()));
                }
            }
            ids.to_vec()
        }
    };
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn collect_sorted(results: Vec<Result<SensitivityRecord>>) -> Result<Vec<SensitivityRecord>> {
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(records)
}

/// Exhaustive (or sampled) leave-one-out for the co-occurrence recommender.
///
/// Only products of the omitted session can change their lists, so each Δ
/// model patches the baseline top-k for those seeds from a matrix with the
/// session subtracted, then restores the matrix.
pub fn run_cor_loo(dataset: &Dataset, eval_log: &EvalLog, cfg: &HarnessConfig) -> Result<Vec<SensitivityRecord>> {
    cfg.validate()?;
    let matrix = CoocMatrix::build(dataset);
    let base = Baseline::new(matrix.all_top_k(cfg.k), eval_log, cfg)?;
    let ids = resolve_sample(dataset, cfg.sample.as_deref())?;
    let results: Vec<Result<SensitivityRecord>> = ids
        .par_iter()
        .map_init(
            || matrix.clone(),
            |m, id| {
                let session = dataset.get(id).expect("resolved id");
                m.subtract_session(session)?;
                let mut delta = base.top_k.clone();
                for p in session.unique_products() {
                    if m.contains_product(p) {
                        delta.insert(p.clone(), m.top_k(p, cfg.k));
                    } else {
                        delta.remove(p);
                    }
                }
                m.add_session(session);
                base.record(id, &delta, eval_log, cfg)
            },
        )
        .collect();
    collect_sorted(results)
}

fn vr_top_k(dataset: &Dataset, hyper: &Hyperparams, k: usize, seeds: &BTreeSet<ProductId>) -> Result<TopK> {
    match embed::train(dataset, hyper) {
        Ok(model) => Ok(model.all_top_k_similar(k, Some(seeds))),
        Err(Error::EmptyVocabulary(_)) => Ok(seeds
            .iter()
            .map(|s| (s.clone(), RecommendationList::unknown(s.clone())))
            .collect()),
        Err(e) => Err(e),
    }
}

/// Leave-one-out for the vector recommender: a full retrain per omitted
/// session with the baseline seed, diffed over the baseline vocabulary.
pub fn run_vr_loo(
    dataset: &Dataset,
    eval_log: &EvalLog,
    cfg: &HarnessConfig,
    hyper: &Hyperparams,
) -> Result<Vec<SensitivityRecord>> {
    cfg.validate()?;
    match &cfg.sample {
        Some(s) if s.is_empty() => return Err(Error::Precondition("sample must not be empty".into())),
        None if dataset.len() > cfg.max_exhaustive_vr => {
            return Err(Error::Intractable {
                n_sessions: dataset.len(),
                limit: cfg.max_exhaustive_vr,
            })
        }
        _ => {}
    }
    let ids = resolve_sample(dataset, cfg.sample.as_deref())?;
    let model: EmbeddingModel = embed::train(dataset, hyper)?;
    let seeds: BTreeSet<ProductId> = model.vocabulary().products().cloned().collect();
    let base = Baseline::new(model.all_top_k_similar(cfg.k, None), eval_log, cfg)?;
    let results: Vec<Result<SensitivityRecord>> = ids
        .par_iter()
        .map(|id| {
            let delta = dataset.leave_one_out(id)?.materialize();
            let top_k = vr_top_k(&delta, hyper, cfg.k, &seeds)?;
            base.record(id, &top_k, eval_log, cfg)
        })
        .collect();
    collect_sorted(results)
}

/// `n` distinct session ids drawn with a seeded generator, sorted.
pub fn sample_sessions(dataset: &Dataset, n: usize, rng_seed: u64) -> Vec<String> {
    let ids: Vec<&str> = dataset.session_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out: Vec<String> = sample(&mut rng, ids.len(), n.min(ids.len()))
        .into_iter()
        .map(|i| ids[i].to_owned())
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    /// Records with `|ΔCR| <= neutral_band`, the baseline included.
    pub neutral: usize,
    /// Non-empty half-open bins `[lo, hi)` in ascending order.
    pub bins: Vec<Bin>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.neutral + self.bins.iter().map(|b| b.count).sum::<usize>()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        writeln!(out, "neutral,neutral,{}", self.neutral).unwrap();
        for b in &self.bins {
            writeln!(out, "{},{},{}", b.lo, b.hi, b.count).unwrap();
        }
        out
    }
}

fn bin_index(x: f64, width: f64) -> i64 {
    let mut i = (x / width).floor() as i64;
    if (i + 1) as f64 * width <= x {
        i += 1;
    } else if i as f64 * width > x {
        i -= 1;
    }
    i
}

pub fn histogram(records: &[SensitivityRecord], bin_width: f64, neutral_band: f64) -> Result<Histogram> {
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(Error::Precondition("bin_width must be positive".into()));
    }
    let mut neutral = 0;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for r in records {
        if r.rel_cr_change.abs() <= neutral_band {
            neutral += 1;
        } else {
            *counts.entry(bin_index(r.rel_cr_change, bin_width)).or_insert(0) += 1;
        }
    }
    let bins = counts
        .into_iter()
        .map(|(i, count)| Bin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            count,
        })
        .collect();
    Ok(Histogram { neutral, bins })
}

pub const RECORDS_CSV_HEADER: &str =
    "session_id,changed,n_changed_seeds,cr_base,cr_delta,rel_cr_change,value,constellation";

pub fn records_csv(records: &[SensitivityRecord]) -> String {
    let mut out = format!("{RECORDS_CSV_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.session_id,
            r.diff.changed,
            r.diff.n_changed_seeds,
            r.cr_base,
            r.cr_delta,
            r.rel_cr_change,
            r.value,
            r.constellation
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n_records: usize,
    pub counts: BTreeMap<Constellation, usize>,
    pub no_output_change_fraction: f64,
    pub min_rel_cr_change: f64,
    pub mean_rel_cr_change: f64,
    pub mean_abs_rel_cr_change: f64,
    pub max_rel_cr_change: f64,
}

pub fn summarize(records: &[SensitivityRecord]) -> Summary {
    let mut counts: BTreeMap<Constellation, usize> = Constellation::ALL.iter().map(|c| (*c, 0)).collect();
    for r in records {
        *counts.get_mut(&r.constellation).expect("all constellations present") += 1;
    }
    let n = records.len();
    let changes = records.iter().map(|r| r.rel_cr_change);
    let (min, max) = changes
        .clone()
        .fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Summary {
        n_records: n,
        no_output_change_fraction: mean(counts[&Constellation::NoOutputChange] as f64),
        counts,
        min_rel_cr_change: if n == 0 { 0.0 } else { min },
        mean_rel_cr_change: mean(changes.clone().sum()),
        mean_abs_rel_cr_change: mean(changes.map(f64::abs).sum()),
        max_rel_cr_change: if n == 0 { 0.0 } else { max },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{flat_catalog, pid, session};
    use crate::synthgen::{generate, EvalSession, GenConfig};

    fn list(seed: &str, alts: &[&str]) -> (ProductId, RecommendationList) {
        let l = RecommendationList {
            seed: pid(seed),
            items: alts.iter().map(|a| (pid(a), 1.0)).collect(),
            unknown_seed: false,
        };
        (pid(seed), l)
    }

    fn record(changed: bool, rel: f64) -> SensitivityRecord {
        let diff = OutputDiff {
            changed,
            n_changed_seeds: changed as usize,
            ..OutputDiff::default()
        };
        SensitivityRecord {
            session_id: "s".into(),
            constellation: classify(&diff, rel, DEFAULT_NEUTRAL_BAND),
            diff,
            cr_base: 0.1,
            cr_delta: 0.1 * (1.0 + rel),
            rel_cr_change: rel,
            value: session_value(rel, 1.0),
        }
    }

    #[test]
    fn diff_kinds() {
        let base: TopK = [list("A", &["B", "C"]), list("D", &["A"])].into_iter().collect();
        assert!(!diff_topk(&base, &base, 5).changed);

        let swapped: TopK = [list("A", &["C", "B"]), list("D", &["A"])].into_iter().collect();
        let d = diff_topk(&base, &swapped, 5);
        assert!(d.changed);
        assert_eq!(d.change_kinds[&pid("A")], ChangeKind::ReorderedOnly);
        assert_eq!(d.n_changed_seeds, 1);
        assert_eq!(d.n_compared_seeds, 2);

        let missing: TopK = [list("A", &["B", "C"])].into_iter().collect();
        assert_eq!(
            diff_topk(&base, &missing, 5).change_kinds[&pid("D")],
            ChangeKind::SeedMissing
        );

        let extra: TopK = [list("A", &["B", "C"]), list("D", &["A"]), list("E", &["A"])]
            .into_iter()
            .collect();
        assert_eq!(
            diff_topk(&base, &extra, 5).change_kinds[&pid("E")],
            ChangeKind::MembershipChanged
        );

        let other: TopK = [list("A", &["B", "E"]), list("D", &["A"])].into_iter().collect();
        assert_eq!(diff_topk(&base, &other, 5).count(ChangeKind::MembershipChanged), 1);
    }

    #[test]
    fn arithmetic_examples() {
        assert!((relative_cr_change(0.050, 0.0505).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(relative_cr_change(0.05, 0.05).unwrap(), 0.0);
        assert!(matches!(relative_cr_change(0.0, 0.1), Err(Error::UndefinedBaseline)));
        assert!((session_value(0.005, 1e8) + 500_000.0).abs() < 1e-6);
        assert!((session_value(-0.012, 1e8) - 1_200_000.0).abs() < 1e-6);
        assert_eq!(session_value(0.0, 1e8), 0.0);
    }

    #[test]
    fn classification_rules() {
        let same = OutputDiff::default();
        let changed = OutputDiff {
            changed: true,
            n_changed_seeds: 1,
            ..OutputDiff::default()
        };
        assert_eq!(classify(&same, 0.0, 0.0005), Constellation::NoOutputChange);
        assert_eq!(classify(&changed, 0.002, 0.0005), Constellation::Toxic);
        assert_eq!(classify(&changed, -0.0003, 0.0005), Constellation::ChangeNoKpi);
        assert_eq!(classify(&changed, 0.0005, 0.0005), Constellation::ChangeNoKpi);
        assert_eq!(classify(&changed, -0.002, 0.0005), Constellation::Valuable);
    }

    #[test]
    fn histogram_binning() {
        let h = histogram(&[record(true, 0.0051), record(true, 0.0052)], 0.001, 0.0005).unwrap();
        assert_eq!(h.neutral, 0);
        assert_eq!(h.bins.len(), 1);
        assert_eq!(h.bins[0].count, 2);
        assert!((h.bins[0].lo - 0.005).abs() < 1e-12);

        let h = histogram(&vec![record(false, 0.0); 4], 0.001, 0.0005).unwrap();
        assert_eq!((h.neutral, h.bins.len()), (4, 0));

        // Boundaries belong to the bin they open.
        let h = histogram(&[record(true, 0.003), record(true, -0.003)], 0.001, 0.0005).unwrap();
        assert_eq!(h.bins[0].lo, -3.0 * 0.001);
        assert_eq!(h.bins[1].lo, 3.0 * 0.001);
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\nneutral,neutral,0\n"));
        assert!(histogram(&[], 0.0, 0.0005).is_err());
    }

    #[test]
    fn stability_reports_divergence() {
        let s = generate(&GenConfig {
            n_products: 40,
            n_train_sessions: 150,
            ..GenConfig::with_seed(2)
        })
        .unwrap();
        assert!(verify_stability(&s.dataset, &CorBuilder, 5).unwrap().stable);
        let hyper = Hyperparams {
            dimensions: 16,
            ..Hyperparams::with_seed(1)
        };
        let a = VrBuilder { hyper: hyper.clone() };
        assert!(verify_stability(&s.dataset, &a, 5).unwrap().stable);
        let b = VrBuilder {
            hyper: Hyperparams { rng_seed: 2, ..hyper },
        };
        let report = verify_stability_pair(&s.dataset, &a, &b, 5).unwrap();
        assert!(!report.stable);
        assert!(report.divergence.unwrap().starts_with("model line 2"));
    }

    #[test]
    fn cor_loo_matches_rebuilds() {
        let s = generate(&GenConfig {
            n_products: 40,
            n_train_sessions: 120,
            n_eval_sessions: 80,
            ..GenConfig::with_seed(8)
        })
        .unwrap();
        let cfg = HarnessConfig::default();
        let records = run_cor_loo(&s.dataset, &s.eval_log, &cfg).unwrap();
        assert_eq!(records.len(), s.dataset.len());
        let base = CoocMatrix::build(&s.dataset).all_top_k(5);
        for r in &records {
            let rebuilt =
                CoocMatrix::build(&s.dataset.leave_one_out(&r.session_id).unwrap().materialize()).all_top_k(5);
            assert_eq!(r.diff, diff_topk(&base, &rebuilt, 5), "{}", r.session_id);
            let cr = kpi::conversion_rate_of(&rebuilt, &s.eval_log, 1.0).value;
            assert_eq!(r.cr_delta, cr);
            assert!(r.value * r.rel_cr_change <= 0.0);
        }
    }

    #[test]
    fn vr_loo_requires_sample_and_keeps_universe() {
        let cat = flat_catalog(&[("A", "c"), ("B", "c"), ("C", "c"), ("R", "c")]);
        let mut sessions: Vec<_> = (0..12)
            .map(|i| session(&format!("s{i:02}"), i * 100, &["A", "B", "C", "A"]))
            .collect();
        sessions.push(session("rare", 5000, &["R", "A"]));
        let d = Dataset::new(sessions, cat).unwrap();
        let eval = EvalLog::new(vec![EvalSession {
            session_id: "e".into(),
            viewed: [pid("A")].into_iter().collect(),
            ordered: [pid("B")].into_iter().collect(),
        }])
        .unwrap();
        let hyper = Hyperparams {
            dimensions: 8,
            ..Hyperparams::default()
        };
        let cfg = HarnessConfig::default();
        assert!(matches!(
            run_vr_loo(&d, &eval, &cfg, &hyper),
            Err(Error::Intractable { .. })
        ));
        let cfg = HarnessConfig {
            sample: Some(vec!["rare".into()]),
            ..cfg
        };
        let records = run_vr_loo(&d, &eval, &cfg, &hyper).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.diff.count(ChangeKind::SeedMissing), 0);
        assert_eq!(r.diff.n_compared_seeds, 3);
        assert_eq!(records, run_vr_loo(&d, &eval, &cfg, &hyper).unwrap());
    }

    #[test]
    fn summary_and_csv() {
        let recs = vec![record(false, 0.0), record(true, 0.002), record(true, -0.004)];
        let s = summarize(&recs);
        assert_eq!(s.counts[&Constellation::Toxic], 1);
        assert_eq!(s.counts[&Constellation::ChangeNoKpi], 0);
        assert!((s.min_rel_cr_change + 0.004).abs() < 1e-15);
        assert!((s.mean_abs_rel_cr_change - 0.002).abs() < 1e-15);
        let csv = records_csv(&recs);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(2).unwrap().ends_with(",Toxic"));
    }
}
