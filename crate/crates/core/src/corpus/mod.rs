//! Clickstream data model: products, categories, sessions and datasets.
//!
//! A [`Dataset`] keeps its sessions in canonical order (ascending day, then
//! session id) and shares its [`Catalog`] between slices, so slicing and
//! leave-one-out views are cheap.

pub(crate) mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use io::{load_catalog, load_dataset, read_catalog, read_sessions, write_catalog, write_sessions};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_SESSION_GAP: i64 = 1_800;
pub const MAX_PRODUCT_ID_LEN: usize = 64;
pub const MAX_CATEGORY_DEPTH: usize = 6;

fn forbidden_char(c: char) -> bool {
    c.is_control() || c.is_whitespace() || c == ',' || c == '"'
}

/// Opaque product token. Ordering is lexicographic over the UTF-8 bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProductId(Arc<str>);

impl ProductId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() {
            return Err(Error::InvalidProductId(id.to_owned(), "empty"));
        }
        if id.chars().count() > MAX_PRODUCT_ID_LEN {
            return Err(Error::InvalidProductId(id.to_owned(), "longer than 64 characters"));
        }
        if id.chars().any(forbidden_char) {
            return Err(Error::InvalidProductId(
                id.to_owned(),
                "contains whitespace, control, comma or quote characters",
            ));
        }
        Ok(ProductId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ProductId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ProductId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        ProductId::new(raw).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn validate_session_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::InvalidSessionId(id.to_owned(), "empty"));
    }
    if id.chars().any(forbidden_char) {
        return Err(Error::InvalidSessionId(
            id.to_owned(),
            "contains whitespace, control, comma or quote characters",
        ));
    }
    Ok(())
}

/// Category hierarchy of one product, index 0 being the top level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct CategoryPath(Vec<String>);

impl CategoryPath {
    pub fn new(levels: Vec<String>) -> std::result::Result<Self, String> {
        if levels.is_empty() || levels.len() > MAX_CATEGORY_DEPTH {
            return Err(format!("depth must be within 1..=6, got {}", levels.len()));
        }
        if levels.iter().any(|l| l.is_empty()) {
            return Err("category tokens must be non-empty".to_owned());
        }
        Ok(CategoryPath(levels))
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn level(&self, level: usize) -> Option<&str> {
        self.0.get(level).map(String::as_str)
    }

    pub fn levels(&self) -> &[String] {
        &self.0
    }
}

/// A single product-page click.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickEvent {
    #[serde(rename = "t")]
    pub timestamp: i64,
    #[serde(rename = "p")]
    pub product: ProductId,
}

impl ClickEvent {
    pub fn new(timestamp: i64, product: ProductId) -> Self {
        ClickEvent { timestamp, product }
    }
}

/// Chronologically ordered clicks of one user. `day` is derived from the
/// first click and never changes, even when clicks cross midnight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    id: String,
    clicks: Vec<ClickEvent>,
    day: i64,
}

impl Session {
    pub fn new(id: impl Into<String>, clicks: Vec<ClickEvent>) -> Result<Self> {
        let id = id.into();
        validate_session_id(&id)?;
        let invalid = |reason: &str| Error::InvalidSession {
            session_id: id.clone(),
            reason: reason.to_owned(),
        };
        let Some(first) = clicks.first() else {
            return Err(invalid("no clicks"));
        };
        if clicks.iter().any(|c| c.timestamp < 0) {
            return Err(invalid("negative timestamp"));
        }
        if clicks.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(invalid("clicks out of chronological order"));
        }
        let day = first.timestamp.div_euclid(SECONDS_PER_DAY);
        Ok(Session { id, clicks, day })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn clicks(&self) -> &[ClickEvent] {
        &self.clicks
    }

    pub fn day(&self) -> i64 {
        self.day
    }

    /// Session length: the number of clicks.
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductId> {
        self.clicks.iter().map(|c| &c.product)
    }

    pub fn unique_products(&self) -> BTreeSet<&ProductId> {
        self.products().collect()
    }

    /// Same clicks under a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Result<Self> {
        Session::new(id, self.clicks.clone())
    }
}

/// Split one user's time-ordered click stream into sessions. A gap of at
/// least `gap` seconds between consecutive clicks starts a new session.
/// Session ids are `{user}-{n}` with `n` counting from 0.
pub fn sessionize(user: &str, events: &[ClickEvent], gap: i64) -> Result<Vec<Session>> {
    if gap <= 0 {
        return Err(Error::NonPositiveGap(gap));
    }
    if let Some(i) = events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::UnsortedEvents { index: i + 1 });
    }
    let mut sessions = Vec::new();
    let mut current: Vec<ClickEvent> = Vec::new();
    for event in events {
        if let Some(last) = current.last() {
            if event.timestamp - last.timestamp >= gap {
                let id = format!("{user}-{}", sessions.len());
                sessions.push(Session::new(id, std::mem::take(&mut current))?);
            }
        }
        current.push(event.clone());
    }
    if !current.is_empty() {
        let id = format!("{user}-{}", sessions.len());
        sessions.push(Session::new(id, current)?);
    }
    Ok(sessions)
}

/// Product → category path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    entries: BTreeMap<ProductId, CategoryPath>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product: ProductId, path: CategoryPath) -> Option<CategoryPath> {
        self.entries.insert(product, path)
    }

    pub fn get(&self, product: &ProductId) -> Option<&CategoryPath> {
        self.entries.get(product)
    }

    pub fn contains(&self, product: &ProductId) -> bool {
        self.entries.contains_key(product)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ProductId, &CategoryPath)> {
        self.entries.iter()
    }

    /// Deepest level available for every product, or `None` for an empty catalog.
    pub fn deepest_common_level(&self) -> Option<usize> {
        self.entries.values().map(CategoryPath::depth).min().map(|d| d - 1)
    }
}

impl FromIterator<(ProductId, CategoryPath)> for Catalog {
    fn from_iter<I: IntoIterator<Item = (ProductId, CategoryPath)>>(iter: I) -> Self {
        Catalog {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Ordered, validated collection of sessions plus the catalog they reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    sessions: Vec<Session>,
    catalog: Arc<Catalog>,
}

impl Dataset {
    /// Validates unique ids and catalog coverage, then sorts into canonical
    /// (day, session id) order.
    pub fn new(mut sessions: Vec<Session>, catalog: Arc<Catalog>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sessions {
            if !seen.insert(s.id()) {
                return Err(Error::DuplicateSessionId(s.id().to_owned()));
            }
            if let Some(p) = s.products().find(|p| !catalog.contains(p)) {
                return Err(Error::MissingCatalogEntry {
                    session_id: s.id().to_owned(),
                    product: p.to_string(),
                });
            }
        }
        sessions.sort_by(|a, b| a.day.cmp(&b.day).then_with(|| a.id.cmp(&b.id)));
        Ok(Dataset { sessions, catalog })
    }

    /// Builds from a subset of an already-validated dataset, preserving order.
    fn from_ordered(sessions: Vec<Session>, catalog: Arc<Catalog>) -> Self {
        Dataset { sessions, catalog }
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn shared_catalog(&self) -> Arc<Catalog> {
        Arc::clone(&self.catalog)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn get(&self, session_id: &str) -> Option<&Session> {
        self.position(session_id).map(|i| &self.sessions[i])
    }

    fn position(&self, session_id: &str) -> Option<usize> {
        self.sessions.iter().position(|s| s.id == session_id)
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.iter().map(|s| s.id.as_str())
    }

    /// Every product clicked in at least one session.
    pub fn products(&self) -> BTreeSet<ProductId> {
        self.sessions.iter().flat_map(|s| s.products().cloned()).collect()
    }

    pub fn day_range(&self) -> Option<(i64, i64)> {
        Some((self.sessions.first()?.day, self.sessions.last()?.day))
    }

    pub fn mean_session_length(&self) -> f64 {
        if self.sessions.is_empty() {
            return 0.0;
        }
        let tokens: usize = self.sessions.iter().map(Session::len).sum();
        tokens as f64 / self.sessions.len() as f64
    }

    /// A new dataset with `session` inserted at its canonical position.
    pub fn insert(&self, session: Session) -> Result<Dataset> {
        let mut sessions = self.sessions.clone();
        sessions.push(session);
        Dataset::new(sessions, Arc::clone(&self.catalog))
    }

    /// Sessions whose day lies in `[end_day - n_days + 1, end_day]`.
    pub fn slice_days(&self, end_day: i64, n_days: u32) -> Result<Dataset> {
        if n_days == 0 {
            return Err(Error::Precondition("n_days must be at least 1".into()));
        }
        let start = end_day - i64::from(n_days) + 1;
        let sessions = self
            .sessions
            .iter()
            .filter(|s| (start..=end_day).contains(&s.day))
            .cloned()
            .collect();
        Ok(Dataset::from_ordered(sessions, Arc::clone(&self.catalog)))
    }

    pub fn leave_one_out(&self, session_id: &str) -> Result<DeltaDataset<'_>> {
        let index = self
            .position(session_id)
            .ok_or_else(|| Error::SessionNotFound(session_id.to_owned()))?;
        Ok(DeltaDataset { base: self, index })
    }
}

/// Free-function form of [`Dataset::slice_days`].
pub fn slice_days(dataset: &Dataset, end_day: i64, n_days: u32) -> Result<Dataset> {
    dataset.slice_days(end_day, n_days)
}

/// Free-function form of [`Dataset::leave_one_out`].
pub fn leave_one_out<'a>(dataset: &'a Dataset, session_id: &str) -> Result<DeltaDataset<'a>> {
    dataset.leave_one_out(session_id)
}

/// View of a dataset with exactly one session omitted.
#[derive(Debug, Clone, Copy)]
pub struct DeltaDataset<'a> {
    base: &'a Dataset,
    index: usize,
}

impl<'a> DeltaDataset<'a> {
    pub fn base(&self) -> &'a Dataset {
        self.base
    }

    pub fn omitted(&self) -> &'a Session {
        &self.base.sessions[self.index]
    }

    pub fn omitted_id(&self) -> &'a str {
        self.omitted().id()
    }

    pub fn len(&self) -> usize {
        self.base.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sessions(&self) -> impl Iterator<Item = &'a Session> + 'a {
        let index = self.index;
        self.base
            .sessions
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != index)
            .map(|(_, s)| s)
    }

    pub fn materialize(&self) -> Dataset {
        Dataset::from_ordered(self.sessions().cloned().collect(), self.base.shared_catalog())
    }
}

/// Unique categories at `level` over unique products.
pub fn heterogeneity_ratio(session: &Session, catalog: &Catalog, level: usize) -> Result<f64> {
    let products = session.unique_products();
    let mut categories = BTreeSet::new();
    for p in &products {
        let category =
            catalog
                .get(p)
                .and_then(|path| path.level(level))
                .ok_or_else(|| Error::MissingCategoryLevel {
                    product: p.to_string(),
                    level,
                })?;
        categories.insert(category);
    }
    Ok(categories.len() as f64 / products.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn pid(s: &str) -> ProductId {
        ProductId::new(s).unwrap()
    }

    pub(crate) fn session(id: &str, t0: i64, products: &[&str]) -> Session {
        let clicks = products
            .iter()
            .enumerate()
            .map(|(i, p)| ClickEvent::new(t0 + i as i64 * 10, pid(p)))
            .collect();
        Session::new(id, clicks).unwrap()
    }

    pub(crate) fn flat_catalog(products: &[(&str, &str)]) -> Arc<Catalog> {
        Arc::new(
            products
                .iter()
                .map(|(p, c)| (pid(p), CategoryPath::new(vec!["top".into(), c.to_string()]).unwrap()))
                .collect(),
        )
    }

    fn events(ts: &[i64]) -> Vec<ClickEvent> {
        ts.iter().map(|&t| ClickEvent::new(t, pid("A"))).collect()
    }

    #[test]
    fn product_id_validation() {
        assert!(ProductId::new("p-001").is_ok());
        assert!(ProductId::new("").is_err());
        assert!(ProductId::new("a b").is_err());
        assert!(ProductId::new("a\tb").is_err());
        assert!(ProductId::new("x".repeat(64)).is_ok());
        assert!(ProductId::new("x".repeat(65)).is_err());
        assert!(pid("B") > pid("AZ"));
    }

    #[test]
    fn sessionize_splits_on_gap() {
        let one = sessionize("u", &events(&[0, 100, 200]), 1800).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 3);

        let two = sessionize("u", &events(&[0, 100, 2000]), 1800).unwrap();
        assert_eq!(two.iter().map(Session::len).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(two[1].id(), "u-1");

        // Exactly the gap splits.
        let edge = sessionize("u", &events(&[0, 1800]), 1800).unwrap();
        assert_eq!(edge.len(), 2);

        assert!(sessionize("u", &[], 1800).unwrap().is_empty());
    }

    #[test]
    fn sessionize_rejects_bad_input() {
        match sessionize("u", &events(&[0, 50, 10]), 1800) {
            Err(Error::UnsortedEvents { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            sessionize("u", &events(&[0]), 0),
            Err(Error::NonPositiveGap(0))
        ));
    }

    #[test]
    fn session_day_comes_from_first_click() {
        let s = session("s", SECONDS_PER_DAY - 5, &["A", "B", "C"]);
        assert_eq!(s.day(), 0);
        assert_eq!(s.clicks().last().unwrap().timestamp / SECONDS_PER_DAY, 1);
    }

    fn three_sessions() -> Dataset {
        let cat = flat_catalog(&[("A", "c1"), ("B", "c1"), ("C", "c2")]);
        Dataset::new(
            vec![
                session("s3", 2 * SECONDS_PER_DAY, &["C"]),
                session("s1", 0, &["A", "B"]),
                session("s2", SECONDS_PER_DAY, &["B", "C"]),
            ],
            cat,
        )
        .unwrap()
    }

    #[test]
    fn dataset_sorted_and_validated() {
        let d = three_sessions();
        assert_eq!(d.session_ids().collect::<Vec<_>>(), vec!["s1", "s2", "s3"]);

        let cat = flat_catalog(&[("A", "c1")]);
        let dup = Dataset::new(vec![session("x", 0, &["A"]), session("x", 5, &["A"])], cat.clone());
        assert!(matches!(dup, Err(Error::DuplicateSessionId(id)) if id == "x"));

        let missing = Dataset::new(vec![session("x", 0, &["A", "Q"])], cat);
        assert!(matches!(missing, Err(Error::MissingCatalogEntry { product, .. }) if product == "Q"));
    }

    #[test]
    fn leave_one_out_and_reinsert() {
        let d = three_sessions();
        let delta = d.leave_one_out("s2").unwrap();
        let m = delta.materialize();
        assert_eq!(m.session_ids().collect::<Vec<_>>(), vec!["s1", "s3"]);
        assert_eq!(delta.omitted_id(), "s2");
        assert_eq!(d.len(), 3);
        assert_eq!(m.sessions()[0], d.sessions()[0]);

        let back = m.insert(delta.omitted().clone()).unwrap();
        assert_eq!(back, d);

        assert!(matches!(d.leave_one_out("zzz"), Err(Error::SessionNotFound(_))));
    }

    #[test]
    fn slicing_by_days() {
        let cat = flat_catalog(&[("A", "c1")]);
        let sessions = (1..=4)
            .map(|day| session(&format!("s{day}"), day * SECONDS_PER_DAY, &["A"]))
            .collect();
        let d = Dataset::new(sessions, cat).unwrap();
        let days = |x: &Dataset| x.sessions().iter().map(Session::day).collect::<Vec<_>>();
        assert_eq!(days(&d.slice_days(4, 2).unwrap()), vec![3, 4]);
        assert_eq!(days(&d.slice_days(4, 10).unwrap()), vec![1, 2, 3, 4]);
        assert!(d.slice_days(0, 1).unwrap().is_empty());
        assert!(d.slice_days(4, 0).is_err());
    }

    #[test]
    fn heterogeneity_examples() {
        let cat = flat_catalog(&[("A", "cat1"), ("B", "cat1"), ("C", "cat2")]);
        let hr = |products: &[&str]| heterogeneity_ratio(&session("s", 0, products), &cat, 1).unwrap();
        assert!((hr(&["A", "B", "C"]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(hr(&["A"]), 1.0);
        assert_eq!(hr(&["A", "A", "C"]), 1.0);
        assert_eq!(hr(&["A", "B"]), 0.5);
        // Top level is shared by everything.
        let top = heterogeneity_ratio(&session("s", 0, &["A", "B", "C"]), &cat, 0).unwrap();
        assert!((top - 1.0 / 3.0).abs() < 1e-12);
        let err = heterogeneity_ratio(&session("s", 0, &["A"]), &cat, 2).unwrap_err();
        assert!(matches!(err, Error::MissingCategoryLevel { product, level: 2 } if product == "A"));
    }
}
