//! Learning curves: vector models trained on nested slices that grow
//! backwards from a shared end day, with the KPI table and scaled series.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, ProductId, Session};
use crate::embed::{self, Hyperparams};
use crate::error::{Error, Result};
use crate::kpi::{self, KpiReport};
use crate::synthgen::EvalLog;

pub const DEFAULT_DAY_GRID: [u32; 12] = [2, 10, 30, 60, 90, 120, 150, 180, 210, 240, 270, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvePlan {
    /// Shared last day; the last day of the data when unset.
    pub end_day: Option<i64>,
    pub day_grid: Vec<u32>,
    pub hyper: Hyperparams,
    pub k: usize,
    pub correction_c: f64,
    pub unit_value: f64,
    /// Train grid entries one after another so timings do not contend.
    pub serial_timing: bool,
}

impl Default for CurvePlan {
    fn default() -> Self {
        CurvePlan {
            end_day: None,
            day_grid: DEFAULT_DAY_GRID.to_vec(),
            hyper: Hyperparams::default(),
            k: kpi::DEFAULT_K,
            correction_c: kpi::DEFAULT_CORRECTION,
            unit_value: 1.0,
            serial_timing: false,
        }
    }
}

impl CurvePlan {
    pub fn validate(&self) -> Result<()> {
        if self.day_grid.is_empty() {
            return Err(Error::Config("curve.day_grid must not be empty".into()));
        }
        if self.day_grid[0] == 0 || self.day_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "curve.day_grid must be strictly ascending and positive".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("curve.k must be at least 1".into()));
        }
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub report: KpiReport,
    /// Mean clicks per session.
    pub avg_session_length: f64,
    /// The smallest model; its SNP is measured against the empty set.
    pub baseline: bool,
    /// The slice started before the first day of data.
    pub clipped: bool,
}

struct Trained {
    sessions: Vec<Session>,
    vocabulary: BTreeSet<ProductId>,
    cr: f64,
    seconds: f64,
    mean_len: f64,
    clipped: bool,
}

fn train_slice(
    dataset: &Dataset,
    eval_log: &EvalLog,
    plan: &CurvePlan,
    end_day: i64,
    first_day: i64,
    n: u32,
) -> Result<Trained> {
    let slice = dataset.slice_days(end_day, n)?;
    if slice.is_empty() {
        return Err(Error::EmptySlice(n));
    }
    let started = Instant::now();
    let model = embed::train(&slice, &plan.hyper)?;
    let seconds = started.elapsed().as_secs_f64();
    let recs = model.all_top_k_similar(plan.k, None);
    Ok(Trained {
        cr: kpi::conversion_rate_of(&recs, eval_log, plan.correction_c).value,
        vocabulary: model.vocabulary().products().cloned().collect(),
        mean_len: slice.mean_session_length(),
        clipped: end_day - i64::from(n) + 1 < first_day,
        sessions: slice.sessions().to_vec(),
        seconds,
    })
}

pub fn run_curve(dataset: &Dataset, eval_log: &EvalLog, plan: &CurvePlan) -> Result<Vec<CurveRow>> {
    plan.validate()?;
    let Some((first_day, last_day)) = dataset.day_range() else {
        return Err(Error::EmptySlice(plan.day_grid[0]));
    };
    let end_day = plan.end_day.unwrap_or(last_day);
    let job = |&n: &u32| train_slice(dataset, eval_log, plan, end_day, first_day, n);
    let trained: Vec<Trained> = if plan.serial_timing {
        plan.day_grid.iter().map(job).collect::<Result<_>>()?
    } else {
        plan.day_grid.par_iter().map(job).collect::<Result<_>>()?
    };

    let mut rows = Vec::with_capacity(trained.len());
    let empty = BTreeSet::new();
    for (i, t) in trained.iter().enumerate() {
        let (prev_vocab, prev_ids): (&BTreeSet<ProductId>, BTreeSet<&str>) = match i {
            0 => (&empty, BTreeSet::new()),
            _ => (
                &trained[i - 1].vocabulary,
                trained[i - 1].sessions.iter().map(Session::id).collect(),
            ),
        };
        let added: Vec<&Session> = t.sessions.iter().filter(|s| !prev_ids.contains(s.id())).collect();
        let snp = kpi::snp(prev_vocab, &added);
        let n_products = t.vocabulary.len();
        let revenue = kpi::revenue(n_products, t.cr, plan.unit_value);
        rows.push(CurveRow {
            report: KpiReport {
                days: plan.day_grid[i],
                n_sessions: t.sessions.len(),
                n_products,
                snp: snp.value,
                cr: t.cr,
                revenue,
                revenue_per_session: kpi::revenue_per_session(revenue, t.sessions.len())?,
                cpu_seconds: t.seconds,
                correction_c: plan.correction_c,
            },
            avg_session_length: t.mean_len,
            baseline: i == 0,
            clipped: t.clipped,
        });
    }
    Ok(rows)
}

pub const TABLE_CSV_HEADER: &str =
    "days,n_sessions,n_products,snp,length,cr,revenue,revenue_per_session,cpu_seconds,baseline,clipped";

pub fn table_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{TABLE_CSV_HEADER}\n");
    for row in rows {
        let r = &row.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.days,
            r.n_sessions,
            r.n_products,
            r.snp,
            row.avg_session_length,
            r.cr,
            r.revenue,
            r.revenue_per_session,
            r.cpu_seconds,
            row.baseline,
            row.clipped
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSeries {
    pub kpi_name: &'static str,
    pub days: Vec<u32>,
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub degenerate: bool,
}

pub const CURVE_KPIS: [&str; 8] = [
    "n_sessions",
    "n_products",
    "snp",
    "length",
    "cr",
    "revenue",
    "revenue_per_session",
    "cpu_seconds",
];

fn column(row: &CurveRow, name: &str) -> f64 {
    let r = &row.report;
    match name {
        "n_sessions" => r.n_sessions as f64,
        "n_products" => r.n_products as f64,
        "snp" => r.snp,
        "length" => row.avg_session_length,
        "cr" => r.cr,
        "revenue" => r.revenue,
        "revenue_per_session" => r.revenue_per_session,
        "cpu_seconds" => r.cpu_seconds,
        _ => unreachable!("unknown KPI column {name}"),
    }
}

/// Min-max scaled series per KPI; fewer than two rows are degenerate.
pub fn emit_curves(rows: &[CurveRow]) -> Vec<ScaledSeries> {
    let days: Vec<u32> = rows.iter().map(|r| r.report.days).collect();
    CURVE_KPIS
        .iter()
        .map(|&name| {
            let raw: Vec<f64> = rows.iter().map(|r| column(r, name)).collect();
            let scaled = kpi::feature_scale(&raw);
            ScaledSeries {
                kpi_name: name,
                days: days.clone(),
                degenerate: scaled.degenerate || rows.len() < 2,
                scaled: scaled.values,
                raw,
            }
        })
        .collect()
}

/// `n_days,kpi_name,raw,scaled`.
pub fn curves_csv(series: &[ScaledSeries]) -> String {
    let mut out = String::from("n_days,kpi_name,raw,scaled\n");
    for s in series {
        for ((d, raw), scaled) in s.days.iter().zip(&s.raw).zip(&s.scaled) {
            writeln!(out, "{d},{},{raw},{scaled}", s.kpi_name).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, GenConfig};

    fn data() -> crate::synthgen::Synthetic {
        generate(&GenConfig {
            n_products: 60,
            n_train_sessions: 300,
            n_eval_sessions: 100,
            days: 12,
            ..GenConfig::with_seed(5)
        })
        .unwrap()
    }

    fn plan(grid: &[u32]) -> CurvePlan {
        CurvePlan {
            day_grid: grid.to_vec(),
            hyper: Hyperparams {
                dimensions: 16,
                min_count: 2,
                ..Hyperparams::default()
            },
            ..CurvePlan::default()
        }
    }

    #[test]
    fn nested_rows_grow() {
        let s = data();
        let rows = run_curve(&s.dataset, &s.eval_log, &plan(&[2, 4, 8, 12])).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].report.snp, 1.0);
        assert!(rows[0].baseline);
        for w in rows.windows(2) {
            assert!(w[1].report.n_sessions > w[0].report.n_sessions);
            assert!(w[1].report.n_products >= w[0].report.n_products);
            assert!((0.0..=1.0).contains(&w[1].report.snp));
        }
        assert!(!rows[3].clipped);
        let serial = run_curve(
            &s.dataset,
            &s.eval_log,
            &CurvePlan {
                serial_timing: true,
                ..plan(&[2, 4, 8, 12])
            },
        )
        .unwrap();
        let strip = |rows: &[CurveRow]| {
            rows.iter()
                .map(|r| KpiReport {
                    cpu_seconds: 0.0,
                    ..r.report.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&rows), strip(&serial));
    }

    #[test]
    fn grid_validation_and_empty_slices() {
        let s = data();
        assert!(run_curve(&s.dataset, &s.eval_log, &plan(&[4, 2])).is_err());
        assert!(run_curve(&s.dataset, &s.eval_log, &plan(&[])).is_err());
        let far = CurvePlan {
            end_day: Some(100),
            ..plan(&[2, 4])
        };
        assert!(matches!(
            run_curve(&s.dataset, &s.eval_log, &far),
            Err(Error::EmptySlice(2))
        ));
    }

    #[test]
    fn scaled_series() {
        let s = data();
        let rows = run_curve(&s.dataset, &s.eval_log, &plan(&[3, 12])).unwrap();
        let series = emit_curves(&rows);
        for c in &series {
            assert!(c.degenerate || c.scaled.iter().all(|x| (0.0..=1.0).contains(x)));
            if !c.degenerate {
                assert!(c.scaled.contains(&0.0) && c.scaled.contains(&1.0));
            }
        }
        let products = series.iter().find(|c| c.kpi_name == "n_products").unwrap();
        assert!(products.degenerate || products.scaled == vec![0.0, 1.0]);
        assert!(emit_curves(&rows[..1]).iter().all(|c| c.degenerate));
        assert_eq!(curves_csv(&series).lines().count(), 1 + 2 * CURVE_KPIS.len());
    }
}
