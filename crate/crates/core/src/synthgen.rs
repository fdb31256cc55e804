//! Seeded synthetic clickstreams, evaluation logs and planted ground truth.
//!
//! Training sessions are category-sticky random walks over a Zipf popularity
//! distribution. Orders in the evaluation log come from sparse pairwise
//! affinities, so the conversion rate depends on which alternatives a model
//! recommends. Everything is a pure function of the config and its seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};

use crate::cor::CoocMatrix;
use crate::corpus::{Catalog, CategoryPath, ClickEvent, Dataset, ProductId, Session, SECONDS_PER_DAY};
use crate::embed::{self, Hyperparams};
use crate::error::{Error, Result};
use crate::kpi;

fn d_n_products() -> usize {
    200
}
fn d_n_top() -> usize {
    5
}
fn d_n_fine() -> usize {
    20
}
fn d_n_train() -> usize {
    500
}
fn d_n_eval() -> usize {
    300
}
fn d_days() -> u32 {
    10
}
fn d_exponent() -> f64 {
    1.0
}
fn d_stickiness() -> f64 {
    0.8
}
fn d_geometric_p() -> f64 {
    0.2
}
fn d_order_rate() -> f64 {
    0.05
}
fn d_partners() -> usize {
    2
}
fn d_max_len() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "d_n_products")]
    pub n_products: usize,
    #[serde(default = "d_n_top")]
    pub n_categories_top: usize,
    #[serde(default = "d_n_fine")]
    pub n_categories_fine: usize,
    #[serde(default = "d_n_train")]
    pub n_train_sessions: usize,
    #[serde(default = "d_n_eval")]
    pub n_eval_sessions: usize,
    #[serde(default = "d_days")]
    pub days: u32,
    /// Zipf exponent of product popularity.
    #[serde(default = "d_exponent")]
    pub popularity_exponent: f64,
    /// Probability that the next click stays in the current fine category.
    #[serde(default = "d_stickiness")]
    pub intent_stickiness: f64,
    /// Success probability of the geometric session-length distribution
    /// (mean length is `1 / p`).
    #[serde(default = "d_geometric_p")]
    pub session_length_geometric_p: f64,
    /// Per eval session, probability of one extra order of a viewed product.
    #[serde(default = "d_order_rate")]
    pub order_base_rate: f64,
    /// Affinity partners drawn per product within its fine category.
    #[serde(default = "d_partners")]
    pub partners_per_product: usize,
    #[serde(default = "d_max_len")]
    pub max_session_length: usize,
    pub rng_seed: u64,
}

impl GenConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        GenConfig {
            n_products: d_n_products(),
            n_categories_top: d_n_top(),
            n_categories_fine: d_n_fine(),
            n_train_sessions: d_n_train(),
            n_eval_sessions: d_n_eval(),
            days: d_days(),
            popularity_exponent: d_exponent(),
            intent_stickiness: d_stickiness(),
            session_length_geometric_p: d_geometric_p(),
            order_base_rate: d_order_rate(),
            partners_per_product: d_partners(),
            max_session_length: d_max_len(),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_products", self.n_products),
            ("n_categories_top", self.n_categories_top),
            ("n_categories_fine", self.n_categories_fine),
            ("n_train_sessions", self.n_train_sessions),
            ("n_eval_sessions", self.n_eval_sessions),
            ("days", self.days as usize),
            ("max_session_length", self.max_session_length),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("synth.{key} must be at least 1")));
            }
        }
        let probabilities = [
            ("intent_stickiness", self.intent_stickiness),
            ("order_base_rate", self.order_base_rate),
            ("session_length_geometric_p", self.session_length_geometric_p),
        ];
        for (key, value) in probabilities {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("synth.{key} must lie in [0, 1], got {value}")));
            }
        }
        if self.session_length_geometric_p == 0.0 {
            return Err(Error::Config(
                "synth.session_length_geometric_p must be positive".into(),
            ));
        }
        if self.popularity_exponent.is_nan() || self.popularity_exponent < 0.0 {
            return Err(Error::Config("synth.popularity_exponent must be non-negative".into()));
        }
        Ok(())
    }
}

/// Held-out session: seed pages viewed and products ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSession {
    pub session_id: String,
    pub viewed: BTreeSet<ProductId>,
    pub ordered: BTreeSet<ProductId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalLog {
    sessions: Vec<EvalSession>,
}

impl EvalLog {
    pub fn new(sessions: Vec<EvalSession>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sessions {
            crate::corpus::validate_session_id(&s.session_id)?;
            if !seen.insert(s.session_id.as_str()) {
                return Err(Error::DuplicateSessionId(s.session_id.clone()));
            }
            if s.viewed.is_empty() {
                return Err(Error::InvalidSession {
                    session_id: s.session_id.clone(),
                    reason: "no viewed products".into(),
                });
            }
        }
        Ok(EvalLog { sessions })
    }

    pub fn sessions(&self) -> &[EvalSession] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        for s in &self.sessions {
            if let Some(p) = s.viewed.iter().chain(&s.ordered).find(|p| !catalog.contains(p)) {
                return Err(Error::MissingCatalogEntry {
                    session_id: s.session_id.clone(),
                    product: p.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = crate::corpus::io::read_jsonl::<EvalSession>(path)?;
        EvalLog::new(rows.into_iter().map(|(_, s)| s).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        crate::corpus::io::write_jsonl(out, &self.sessions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Toxic,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affinity {
    pub a: ProductId,
    pub b: ProductId,
    pub propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    pub session_id: String,
    pub kind: PlantKind,
}

/// Generator oracle. Affinities are symmetric and stored once with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub affinity: Vec<Affinity>,
    pub planted: Vec<Plant>,
}

impl GroundTruth {
    pub fn affinity(&self, x: &ProductId, y: &ProductId) -> f64 {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        self.affinity
            .iter()
            .find(|e| &e.a == a && &e.b == b)
            .map_or(0.0, |e| e.propensity)
    }

    pub fn planted_of(&self, kind: PlantKind) -> impl Iterator<Item = &str> {
        self.planted
            .iter()
            .filter(move |p| p.kind == kind)
            .map(|p| p.session_id.as_str())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub eval_log: EvalLog,
    pub truth: GroundTruth,
}

struct World {
    popularity: WeightedIndex<f64>,
    category_of: Vec<usize>,
    categories: Vec<Option<(Vec<usize>, WeightedIndex<f64>)>>,
    partners: Vec<Vec<(usize, f64)>>,
    geometric: Geometric,
    stickiness: f64,
    max_len: usize,
}

impl World {
    fn session_length(&self, rng: &mut ChaCha8Rng) -> usize {
        let extra = self.geometric.sample(rng).min(self.max_len as u64 - 1);
        1 + extra as usize
    }

    fn walk(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        let mut current = self.popularity.sample(rng);
        let mut out = vec![current];
        while out.len() < len {
            if rng.random::<f64>() < self.stickiness {
                let partners = &self.partners[current];
                if !partners.is_empty() && rng.random::<f64>() < 0.5 {
                    current = partners[rng.random_range(0..partners.len())].0;
                } else if let Some((members, weights)) = &self.categories[self.category_of[current]] {
                    current = members[weights.sample(rng)];
                }
            } else {
                current = self.popularity.sample(rng);
            }
            out.push(current);
        }
        out
    }
}

pub fn generate(config: &GenConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n = config.n_products;
    let width = (n - 1).to_string().len().max(4);
    let ids: Vec<ProductId> = (0..n)
        .map(|i| ProductId::new(format!("p{i:0width$}")))
        .collect::<Result<_>>()?;

    let category_of: Vec<usize> = (0..n).map(|i| i % config.n_categories_fine).collect();
    let catalog: Catalog = ids
        .iter()
        .zip(&category_of)
        .map(|(id, &fine)| {
            let top = fine % config.n_categories_top;
            let path = CategoryPath::new(vec![format!("t{top:02}"), format!("f{fine:03}")])
                .expect("generated category path is valid");
            (id.clone(), path)
        })
        .collect();

    let weights: Vec<f64> = (0..n)
        .map(|i| ((i + 1) as f64).powf(-config.popularity_exponent))
        .collect();
    let popularity = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let categories = (0..config.n_categories_fine)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| category_of[i] == c).collect();
            if members.is_empty() {
                return None;
            }
            let w = WeightedIndex::new(members.iter().map(|&i| weights[i])).ok()?;
            Some((members, w))
        })
        .collect::<Vec<_>>();

    let mut affinity: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..n {
        let Some((members, _)) = &categories[category_of[i]] else {
            continue;
        };
        let others: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
        let amount = config.partners_per_product.min(others.len());
        for pick in sample(&mut rng, others.len(), amount).into_vec() {
            let j = others[pick];
            let propensity = rng.random_range(0.3..0.9);
            affinity.entry((i.min(j), i.max(j))).or_insert(propensity);
        }
    }
    let mut partners = vec![Vec::new(); n];
    for (&(a, b), &p) in &affinity {
        partners[a].push((b, p));
        partners[b].push((a, p));
    }
    for list in partners.iter_mut() {
        list.sort_by_key(|(j, _)| *j);
    }

    let world = World {
        popularity,
        category_of,
        categories,
        partners,
        geometric: Geometric::new(config.session_length_geometric_p).map_err(|e| Error::Config(e.to_string()))?,
        stickiness: config.intent_stickiness,
        max_len: config.max_session_length,
    };

    let n_train = config.n_train_sessions;
    let mut sessions = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let day = (i as u64 * u64::from(config.days) / n_train as u64) as i64;
        let len = world.session_length(&mut rng);
        let walk = world.walk(&mut rng, len);
        let mut t = day * SECONDS_PER_DAY + rng.random_range(0..SECONDS_PER_DAY / 2);
        let mut clicks = Vec::with_capacity(len);
        for (step, &p) in walk.iter().enumerate() {
            if step > 0 {
                t += rng.random_range(5..=120);
            }
            clicks.push(ClickEvent::new(t, ids[p].clone()));
        }
        sessions.push(Session::new(format!("s{i:06}"), clicks)?);
    }

    let mut eval = Vec::with_capacity(config.n_eval_sessions);
    for i in 0..config.n_eval_sessions {
        let len = world.session_length(&mut rng);
        let viewed: BTreeSet<usize> = world.walk(&mut rng, len).into_iter().collect();
        let mut ordered = BTreeSet::new();
        for &p in &viewed {
            for &(q, propensity) in &world.partners[p] {
                if rng.random::<f64>() < propensity {
                    ordered.insert(q);
                }
            }
        }
        if rng.random::<f64>() < config.order_base_rate {
            let pick = rng.random_range(0..viewed.len());
            ordered.insert(*viewed.iter().nth(pick).expect("index in range"));
        }
        eval.push(EvalSession {
            session_id: format!("e{i:06}"),
            viewed: viewed.into_iter().map(|p| ids[p].clone()).collect(),
            ordered: ordered.into_iter().map(|p| ids[p].clone()).collect(),
        });
    }

    let truth = GroundTruth {
        affinity: affinity
            .into_iter()
            .map(|((a, b), propensity)| Affinity {
                a: ids[a].clone(),
                b: ids[b].clone(),
                propensity,
            })
            .collect(),
        planted: Vec::new(),
    };
    Ok(Synthetic {
        dataset: Dataset::new(sessions, Arc::new(catalog))?,
        eval_log: EvalLog::new(eval)?,
        truth,
    })
}

/// Settings for [`plant_toxic_session`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToxicPlan {
    pub max_retries: usize,
    pub k: usize,
    /// Clicks in the planted session, alternating seed and alternative.
    pub clicks: usize,
    /// Required relative CR gain from removing the plant, per verified engine.
    pub min_rel_gain: f64,
    /// Mapped to the session-level correction constant.
    pub c: f64,
    /// Also require the plant to be toxic for the vector recommender.
    pub verify_vr: Option<Hyperparams>,
}

impl Default for ToxicPlan {
    fn default() -> Self {
        ToxicPlan {
            max_retries: 100,
            k: kpi::DEFAULT_K,
            clicks: 20,
            min_rel_gain: 0.0005,
            c: kpi::DEFAULT_CORRECTION,
            verify_vr: None,
        }
    }
}

/// An accepted plant with the brute-force CRs it was verified against.
#[derive(Debug, Clone, PartialEq)]
pub struct ToxicPlant {
    pub session_id: String,
    pub seed: ProductId,
    pub alternative: ProductId,
    pub attempts: usize,
    pub cor_cr: (f64, f64),
    pub vr_cr: Option<(f64, f64)>,
}

fn cor_cr(dataset: &Dataset, eval_log: &EvalLog, k: usize, c: f64) -> f64 {
    let recs = CoocMatrix::build(dataset).all_top_k(k);
    kpi::conversion_rate_of(&recs, eval_log, c).value
}

fn vr_cr(dataset: &Dataset, eval_log: &EvalLog, hyper: &Hyperparams, k: usize, c: f64) -> Result<f64> {
    let model = embed::train(dataset, hyper)?;
    Ok(kpi::conversion_rate_of(&model.all_top_k_similar(k, None), eval_log, c).value)
}

/// True when removing the plant raises CR from `with` to `without` by more
/// than `margin`, relative to `with`.
fn gains(with: f64, without: f64, margin: f64) -> bool {
    with > 0.0 && (without - with) / with > margin
}

/// Appends one session whose co-click pair pushes an alternative without
/// any order support into a seed's top-k, displacing an existing entry.
/// Each candidate is accepted only after rebuilding the models with and
/// without it shows a CR drop.
pub fn plant_toxic_session(
    dataset: &Dataset,
    eval_log: &EvalLog,
    truth: &GroundTruth,
    rng_seed: u64,
    plan: &ToxicPlan,
) -> Result<(Dataset, GroundTruth, ToxicPlant)> {
    let k = plan.k.max(1);
    let matrix = CoocMatrix::build(dataset);
    let recs = matrix.all_top_k(k);
    let base_cor = kpi::conversion_rate_of(&recs, eval_log, plan.c).value;
    let base_vr = match &plan.verify_vr {
        Some(h) => Some(vr_cr(dataset, eval_log, h, k, plan.c)?),
        None => None,
    };

    let mut views: BTreeMap<&ProductId, usize> = BTreeMap::new();
    let mut support: BTreeMap<&ProductId, BTreeSet<&ProductId>> = BTreeMap::new();
    for s in eval_log.sessions() {
        for p in &s.viewed {
            *views.entry(p).or_insert(0) += 1;
            support.entry(p).or_default().extend(s.ordered.iter());
        }
    }
    let products = dataset.products();
    let candidates_for = |seed: &ProductId| -> Vec<ProductId> {
        let list = &recs[seed];
        if list.len() < k {
            return Vec::new();
        }
        let (last_id, last_score) = list.items.last().expect("list has k items");
        let last = *last_score as u32;
        let supported = support.get(seed);
        products
            .iter()
            .filter(|r| *r != seed && !list.contains(r))
            .filter(|r| supported.is_none_or(|s| !s.contains(r)))
            .filter(|r| {
                let bumped = matrix.count(seed, r) + 1;
                bumped > last || (bumped == last && *r < last_id)
            })
            .cloned()
            .collect()
    };
    let mut seeds: Vec<(&ProductId, usize)> = views
        .iter()
        .filter(|(p, _)| recs.get(**p).is_some_and(|l| l.len() >= k))
        .map(|(p, v)| (*p, *v))
        .collect();
    seeds.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    seeds.truncate(20);

    let (_, last_day) = dataset.day_range().unwrap_or((0, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for attempt in 0..plan.max_retries {
        if seeds.is_empty() {
            break;
        }
        let seed = seeds[rng.random_range(0..seeds.len())].0;
        let alternatives = candidates_for(seed);
        if alternatives.is_empty() {
            continue;
        }
        let alt = &alternatives[rng.random_range(0..alternatives.len())];
        let id = format!("toxic-{attempt:03}");
        if dataset.get(&id).is_some() {
            continue;
        }
        let t0 = last_day * SECONDS_PER_DAY;
        let clicks = (0..plan.clicks.max(2))
            .map(|i| ClickEvent::new(t0 + i as i64 * 10, if i % 2 == 0 { seed.clone() } else { alt.clone() }))
            .collect();
        let planted = dataset.insert(Session::new(id.clone(), clicks)?)?;

        let with_cor = cor_cr(&planted, eval_log, k, plan.c);
        if !gains(with_cor, base_cor, plan.min_rel_gain) {
            continue;
        }
        let vr = match (&plan.verify_vr, base_vr) {
            (Some(h), Some(without)) => {
                let with = vr_cr(&planted, eval_log, h, k, plan.c)?;
                if !gains(with, without, plan.min_rel_gain) {
                    continue;
                }
                Some((with, without))
            }
            _ => None,
        };
        let mut truth = truth.clone();
        truth.planted.push(Plant {
            session_id: id.clone(),
            kind: PlantKind::Toxic,
        });
        let plant = ToxicPlant {
            session_id: id,
            seed: seed.clone(),
            alternative: alt.clone(),
            attempts: attempt + 1,
            cor_cr: (with_cor, base_cor),
            vr_cr: vr,
        };
        return Ok((planted, truth, plant));
    }
    Err(Error::PlantFailed(plan.max_retries))
}

/// Appends `copies` clones of `session_id` named `{session_id}-dup{n}`.
pub fn plant_duplicate_sessions(dataset: &Dataset, session_id: &str, copies: usize) -> Result<(Dataset, Vec<String>)> {
    if copies == 0 {
        return Err(Error::Precondition("copies must be at least 1".into()));
    }
    let original = dataset
        .get(session_id)
        .ok_or_else(|| Error::SessionNotFound(session_id.to_owned()))?;
    let mut sessions = dataset.sessions().to_vec();
    let mut ids = Vec::with_capacity(copies);
    for n in 1..=copies {
        let id = format!("{session_id}-dup{n}");
        sessions.push(original.with_id(id.clone())?);
        ids.push(id);
    }
    Ok((Dataset::new(sessions, dataset.shared_catalog())?, ids))
}

/// Records duplicate plants in the ground truth.
pub fn record_duplicates(truth: &mut GroundTruth, ids: &[String]) {
    truth.planted.extend(ids.iter().map(|id| Plant {
        session_id: id.clone(),
        kind: PlantKind::Duplicate,
    }));
}

/// Whether every pair count touched by `session` differs by at least `gap`
/// from every untouched neighbour count of the same product. With `gap >= 2`
/// removing one copy of the session cannot reorder any top-k list.
pub fn count_gaps_at_least(matrix: &CoocMatrix, session: &Session, gap: u32) -> bool {
    let products = session.unique_products();
    if products.iter().any(|p| {
        // A product seen only in this session would vanish on removal.
        matrix.neighbors(p).next().is_none() && products.len() > 1
    }) {
        return false;
    }
    products.iter().all(|x| {
        products.iter().filter(|y| *y != x).all(|y| {
            let touched = matrix.count(x, y);
            matrix
                .neighbors(x)
                .filter(|(z, _)| !products.contains(z))
                .all(|(_, other)| touched.abs_diff(other) >= gap)
        })
    })
}

/// Searches for a session and clone count whose duplicates satisfy the
/// gap-2 condition; returns the planted dataset, the original id and the
/// clone ids.
pub fn find_redundant_plant(dataset: &Dataset, max_copies: usize) -> Option<(Dataset, String, Vec<String>)> {
    for s in dataset.sessions() {
        if s.unique_products().len() < 2 {
            continue;
        }
        for copies in 2..=max_copies {
            let (planted, ids) = plant_duplicate_sessions(dataset, s.id(), copies).ok()?;
            let matrix = CoocMatrix::build(&planted);
            if count_gaps_at_least(&matrix, s, 2) {
                return Some((planted, s.id().to_owned(), ids));
            }
        }
    }
    None
}
