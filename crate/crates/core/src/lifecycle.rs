//! Rolling-window impact of a cohort of sessions: contribution-to-visibility
//! scores over consecutive frames, a linear fit per session and the four
//! impact classes with their aggregates.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cor::{CoocMatrix, TopK};
use crate::corpus::{heterogeneity_ratio, Catalog, Dataset, ProductId, Session};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramePlan {
    pub window_days: u32,
    pub n_frames: u32,
    /// Day of the cohort; the first day of the data when unset.
    pub cohort_day: Option<i64>,
}

impl Default for FramePlan {
    fn default() -> Self {
        FramePlan {
            window_days: 51,
            n_frames: 50,
            cohort_day: None,
        }
    }
}

impl FramePlan {
    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 || self.n_frames == 0 {
            return Err(Error::Config(
                "lifecycle.window_days and lifecycle.n_frames must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Impact {
    NoImpact,
    Stable,
    Increasing,
    Decreasing,
}

impl Impact {
    pub const ALL: [Impact; 4] = [Impact::NoImpact, Impact::Stable, Impact::Increasing, Impact::Decreasing];

    pub fn as_str(self) -> &'static str {
        match self {
            Impact::NoImpact => "NoImpact",
            Impact::Stable => "Stable",
            Impact::Increasing => "Increasing",
            Impact::Decreasing => "Decreasing",
        }
    }
}

impl fmt::Display for Impact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTrajectory {
    pub session_id: String,
    pub scores: Vec<u64>,
    pub slope: f64,
    pub intercept: f64,
    pub impact: Impact,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LifecycleRun {
    pub cohort_day: i64,
    pub trajectories: Vec<CvTrajectory>,
    /// Frames requested but not computed because the data ends earlier.
    pub clipped_frames: u32,
    pub empty_cohort: bool,
}

/// Ordered pairs `(p, r)` of distinct session products with `r` in `p`'s list.
pub fn cv_score(session: &Session, top_k: &TopK) -> u64 {
    let products = session.unique_products();
    products
        .iter()
        .filter_map(|p| top_k.get(*p))
        .map(|list| {
            list.product_ids()
                .filter(|r| r != &&list.seed && products.contains(r))
                .count() as u64
        })
        .sum()
}

/// Least squares over `x = 0..n-1`. One point gives slope 0.
pub fn ols(scores: &[f64]) -> Result<(f64, f64)> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::Precondition("ols needs at least one point".into()));
    }
    if n == 1 {
        return Ok((0.0, scores[0]));
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = scores.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in scores.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// A flat fit with a negative intercept cannot arise from CV scores and is
/// mapped to `NoImpact`.
pub fn classify_impact(slope: f64, intercept: f64, eps: f64) -> Impact {
    if slope > eps {
        Impact::Increasing
    } else if slope < -eps {
        Impact::Decreasing
    } else if intercept > eps {
        Impact::Stable
    } else {
        Impact::NoImpact
    }
}

/// CV trajectories for the sessions of the cohort day. Frame `f` (from 1)
/// uses a co-occurrence model of the `window_days` days ending at
/// `cohort_day + f - 1`.
pub fn trajectories(dataset: &Dataset, plan: &FramePlan, k: usize) -> Result<LifecycleRun> {
    plan.validate()?;
    let Some((first_day, last_day)) = dataset.day_range() else {
        return Ok(LifecycleRun {
            empty_cohort: true,
            ..LifecycleRun::default()
        });
    };
    let cohort_day = plan.cohort_day.unwrap_or(first_day);
    let cohort: Vec<&Session> = dataset.sessions().iter().filter(|s| s.day() == cohort_day).collect();
    if cohort.is_empty() {
        return Ok(LifecycleRun {
            cohort_day,
            empty_cohort: true,
            ..LifecycleRun::default()
        });
    }
    let available = (last_day - cohort_day + 1).clamp(0, i64::from(plan.n_frames)) as u32;
    let seeds: BTreeSet<ProductId> = cohort.iter().flat_map(|s| s.products().cloned()).collect();

    let frame_scores: Vec<Vec<u64>> = (0..available)
        .into_par_iter()
        .map(|f| {
            let end = cohort_day + i64::from(f);
            let start = end - i64::from(plan.window_days) + 1;
            let matrix =
                CoocMatrix::from_sessions(dataset.sessions().iter().filter(|s| (start..=end).contains(&s.day())));
            let top_k = matrix.top_k_for(&seeds, k);
            cohort.iter().map(|s| cv_score(s, &top_k)).collect()
        })
        .collect();

    let mut out = Vec::with_capacity(cohort.len());
    for (i, s) in cohort.iter().enumerate() {
        let scores: Vec<u64> = frame_scores.iter().map(|frame| frame[i]).collect();
        let (slope, intercept) = if scores.is_empty() {
            (0.0, 0.0)
        } else {
            ols(&scores.iter().map(|&x| x as f64).collect::<Vec<_>>())?
        };
        out.push(CvTrajectory {
            session_id: s.id().to_owned(),
            impact: classify_impact(slope, intercept, DEFAULT_EPS),
            scores,
            slope,
            intercept,
        });
    }
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(LifecycleRun {
        cohort_day,
        trajectories: out,
        clipped_frames: plan.n_frames - available,
        empty_cohort: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub impact: Impact,
    pub n_sessions: usize,
    pub percentage: f64,
    pub mean_hr: f64,
    pub mean_unique_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    /// One row per impact class, empty classes included.
    pub rows: Vec<ClassRow>,
}

impl ClassStats {
    pub fn row(&self, impact: Impact) -> &ClassRow {
        self.rows
            .iter()
            .find(|r| r.impact == impact)
            .expect("every class has a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("impact,n_sessions,percentage,mean_hr,mean_unique_len\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.impact, r.n_sessions, r.percentage, r.mean_hr, r.mean_unique_len
            )
            .unwrap();
        }
        out
    }
}

pub fn class_stats(
    trajectories: &[CvTrajectory],
    dataset: &Dataset,
    catalog: &Catalog,
    hr_level: usize,
) -> Result<ClassStats> {
    let total = trajectories.len();
    let mut rows = Vec::with_capacity(4);
    for impact in Impact::ALL {
        let mut n = 0usize;
        let mut hr = 0.0;
        let mut unique = 0usize;
        for t in trajectories.iter().filter(|t| t.impact == impact) {
            let s = dataset
                .get(&t.session_id)
                .ok_or_else(|| Error::SessionNotFound(t.session_id.clone()))?;
            n += 1;
            hr += heterogeneity_ratio(s, catalog, hr_level)?;
            unique += s.unique_products().len();
        }
        let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        rows.push(ClassRow {
            impact,
            n_sessions: n,
            percentage: if total == 0 {
                0.0
            } else {
                100.0 * n as f64 / total as f64
            },
            mean_hr: mean(hr),
            mean_unique_len: mean(unique as f64),
        });
    }
    Ok(ClassStats { rows })
}

/// `session_id,f1,...,fN,slope,intercept,impact`.
pub fn trajectories_csv(trajectories: &[CvTrajectory]) -> String {
    let n = trajectories.iter().map(|t| t.scores.len()).max().unwrap_or(0);
    let mut out = String::from("session_id");
    for f in 1..=n {
        write!(out, ",f{f}").unwrap();
    }
    out.push_str(",slope,intercept,impact\n");
    for t in trajectories {
        out.push_str(&t.session_id);
        for s in &t.scores {
            write!(out, ",{s}").unwrap();
        }
        writeln!(out, ",{},{},{}", t.slope, t.intercept, t.impact).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cor::RecommendationList;
    use crate::corpus::tests::{flat_catalog, pid, session};
    use crate::corpus::SECONDS_PER_DAY;

    fn lists(entries: &[(&str, &[&str])]) -> TopK {
        entries
            .iter()
            .map(|(seed, alts)| {
                let l = RecommendationList {
                    seed: pid(seed),
                    items: alts.iter().map(|a| (pid(a), 1.0)).collect(),
                    unknown_seed: false,
                };
                (pid(seed), l)
            })
            .collect()
    }

    #[test]
    fn cv_examples() {
        let ab = session("s", 0, &["A", "B"]);
        assert_eq!(cv_score(&ab, &lists(&[("A", &["B", "X"]), ("B", &["C"])])), 1);
        assert_eq!(cv_score(&ab, &lists(&[("A", &["B"]), ("B", &["A"])])), 2);
        assert_eq!(cv_score(&session("s", 0, &["A"]), &lists(&[("A", &["B"])])), 0);
    }

    #[test]
    fn ols_examples() {
        assert_eq!(ols(&[1.0, 2.0, 3.0]).unwrap(), (1.0, 1.0));
        assert_eq!(ols(&[4.0, 4.0, 4.0]).unwrap(), (0.0, 4.0));
        let y: Vec<f64> = (0..50).map(|x| 2.0 * x as f64 + 3.0).collect();
        let (s, i) = ols(&y).unwrap();
        assert!((s - 2.0).abs() < 1e-9 && (i - 3.0).abs() < 1e-9);
        assert_eq!(ols(&[7.0]).unwrap(), (0.0, 7.0));
        assert!(ols(&[]).is_err());
    }

    #[test]
    fn impact_rules() {
        assert_eq!(classify_impact(0.0, 0.0, DEFAULT_EPS), Impact::NoImpact);
        assert_eq!(classify_impact(0.0, 3.0, DEFAULT_EPS), Impact::Stable);
        assert_eq!(classify_impact(-0.2, 5.0, DEFAULT_EPS), Impact::Decreasing);
        assert_eq!(classify_impact(0.2, 0.0, DEFAULT_EPS), Impact::Increasing);
        assert_eq!(classify_impact(0.0, -1.0, DEFAULT_EPS), Impact::NoImpact);
    }

    fn daily(id: &str, day: i64, products: &[&str]) -> Session {
        session(id, day * SECONDS_PER_DAY, products)
    }

    #[test]
    fn static_data_gives_constant_series() {
        let cat = flat_catalog(&[("A", "c"), ("B", "c"), ("C", "c")]);
        let sessions = (0..10).map(|d| daily(&format!("s{d:02}"), d, &["A", "B"])).collect();
        let d = Dataset::new(sessions, cat).unwrap();
        let plan = FramePlan {
            window_days: 6,
            n_frames: 5,
            cohort_day: Some(0),
        };
        let run = trajectories(&d, &plan, 5).unwrap();
        assert_eq!(run.trajectories.len(), 1);
        let t = &run.trajectories[0];
        assert_eq!(t.scores, vec![2; 5]);
        assert_eq!((t.slope, t.impact), (0.0, Impact::Stable));
        assert_eq!(run.clipped_frames, 0);

        let clipped = trajectories(
            &d,
            &FramePlan {
                n_frames: 20,
                ..plan.clone()
            },
            5,
        )
        .unwrap();
        assert_eq!(clipped.clipped_frames, 10);
        assert!(
            trajectories(
                &d,
                &FramePlan {
                    cohort_day: Some(50),
                    ..plan
                },
                5
            )
            .unwrap()
            .empty_cohort
        );
    }

    #[test]
    fn displaced_pair_lowers_the_series() {
        // From day 3 on, heavy sessions push B out of A's top-1.
        let cat = flat_catalog(&[("A", "c"), ("B", "c"), ("C", "c")]);
        let mut sessions = vec![daily("cohort", 0, &["A", "B"])];
        for d in 3..6 {
            for j in 0..3 {
                sessions.push(daily(&format!("h{d}{j}"), d, &["A", "C"]));
            }
        }
        let d = Dataset::new(sessions, cat).unwrap();
        let plan = FramePlan {
            window_days: 6,
            n_frames: 6,
            cohort_day: Some(0),
        };
        let run = trajectories(&d, &plan, 1).unwrap();
        let t = &run.trajectories[0];
        assert_eq!(t.scores, vec![2, 2, 2, 1, 1, 1]);
        assert!(t.slope < 0.0);
        assert_eq!(t.impact, Impact::Decreasing);
    }

    #[test]
    fn single_frame_classifies_by_intercept() {
        let cat = flat_catalog(&[("A", "c"), ("B", "c")]);
        let d = Dataset::new(vec![daily("s", 0, &["A", "B"]), daily("t", 0, &["A"])], cat).unwrap();
        let plan = FramePlan {
            window_days: 1,
            n_frames: 1,
            cohort_day: None,
        };
        let run = trajectories(&d, &plan, 5).unwrap();
        let impacts: Vec<_> = run.trajectories.iter().map(|t| (t.slope, t.impact)).collect();
        assert_eq!(impacts, vec![(0.0, Impact::Stable), (0.0, Impact::NoImpact)]);
    }

    #[test]
    fn stats_percentages_and_means() {
        let cat = Catalog::from_iter(["A", "B", "C", "D"].iter().enumerate().map(|(i, p)| {
            let path = crate::corpus::CategoryPath::new(vec!["top".into(), format!("c{}", i / 2)]).unwrap();
            (pid(p), path)
        }));
        let cat = std::sync::Arc::new(cat);
        let sessions = vec![
            daily("s1", 0, &["A", "B"]),
            daily("s2", 0, &["A", "C"]),
            daily("s3", 0, &["A", "B", "C", "D"]),
            daily("s4", 0, &["D"]),
        ];
        let d = Dataset::new(sessions, cat.clone()).unwrap();
        let traj = |id: &str, impact| CvTrajectory {
            session_id: id.into(),
            scores: vec![],
            slope: 0.0,
            intercept: 0.0,
            impact,
        };
        let all = [
            traj("s1", Impact::Stable),
            traj("s2", Impact::Stable),
            traj("s3", Impact::Stable),
            traj("s4", Impact::NoImpact),
        ];
        let stats = class_stats(&all, &d, &cat, 1).unwrap();
        let stable = stats.row(Impact::Stable);
        assert_eq!(stable.n_sessions, 3);
        assert_eq!(stable.percentage, 75.0);
        // HR: {A,B} -> 1/2, {A,C} -> 2/2, {A,B,C,D} -> 2/4.
        assert!((stable.mean_hr - (0.5 + 1.0 + 0.5) / 3.0).abs() < 1e-12);
        assert!((stable.mean_unique_len - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(stats.row(Impact::Increasing).n_sessions, 0);
        let sum: f64 = stats.rows.iter().map(|r| r.percentage).sum();
        assert!((sum - 100.0).abs() < 1e-9);

        let each: Vec<_> = Impact::ALL
            .iter()
            .zip(["s1", "s2", "s3", "s4"])
            .map(|(i, s)| traj(s, *i))
            .collect();
        assert!(class_stats(&each, &d, &cat, 1)
            .unwrap()
            .rows
            .iter()
            .all(|r| r.percentage == 25.0));
    }

    #[test]
    fn trajectory_csv_layout() {
        let t = CvTrajectory {
            session_id: "s".into(),
            scores: vec![1, 2],
            slope: 1.0,
            intercept: 1.0,
            impact: Impact::Increasing,
        };
        assert_eq!(
            trajectories_csv(&[t]),
            "session_id,f1,f2,slope,intercept,impact\ns,1,2,1,1,Increasing\n"
        );
    }
}
