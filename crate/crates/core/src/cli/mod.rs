//! The `datamin` command line.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::cor::{CoocMatrix, TopK};
use crate::corpus::{load_dataset, write_catalog, write_sessions, Dataset};
use crate::curve;
use crate::embed;
use crate::error::{Error, Result};
use crate::lifecycle;
use crate::sensitivity::{self, CorBuilder, ModelBuilder, SensitivityRecord, VrBuilder};
use crate::synthgen::{self, EvalLog, Synthetic};

pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Cor,
    Vr,
}

impl Engine {
    fn name(self) -> &'static str {
        match self {
            Engine::Cor => "cor",
            Engine::Vr => "vr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SummaryFormat {
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `paths.out_dir` (`paths.data_dir` for synth).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent model builds. Never changes outputs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print a machine-readable run summary.
    #[arg(long, value_enum)]
    summary: Option<SummaryFormat>,
}

#[derive(Debug, Parser)]
#[command(
    name = "datamin",
    version,
    about = "Leave-one-out data valuation for session-based recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus, evaluation log and ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one recommender and write its serialized model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cor")]
        engine: Engine,
    },
    /// Write top-k recommendations for every known product.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cor")]
        engine: Engine,
    },
    /// Train twice and compare; exits with 2 if any engine diverges.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Only check this engine (default: both).
        #[arg(long, value_enum)]
        engine: Option<Engine>,
    },
    /// Leave-one-out session values and constellations.
    Value {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cor")]
        engine: Engine,
    },
    /// Contribution-to-visibility trajectories and impact classes.
    Lifecycle {
        #[command(flatten)]
        common: Common,
    },
    /// KPI table and scaled curves over growing data volumes.
    Curve {
        #[command(flatten)]
        common: Common,
        /// Train grid entries one at a time for contention-free timings.
        #[arg(long)]
        serial_timing: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Train { common, .. }
            | Command::Recommend { common, .. }
            | Command::Stability { common, .. }
            | Command::Value { common, .. }
            | Command::Lifecycle { common }
            | Command::Curve { common, .. } => common,
        }
    }
}

/// Outcome of a command: a summary plus whether it counts as success.
struct Outcome {
    summary: Value,
    text: String,
    ok: bool,
}

impl Outcome {
    fn ok(summary: Value, text: String) -> Self {
        Outcome {
            summary,
            text,
            ok: true,
        }
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    let result = match common.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))
            .and_then(|pool| pool.install(|| dispatch(&cli.command))),
        None => dispatch(&cli.command),
    };
    match result {
        Ok(outcome) => {
            match common.summary {
                Some(SummaryFormat::Json) => println!("{}", outcome.summary),
                None => print!("{}", outcome.text),
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: &Command) -> Result<Outcome> {
    let common = command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    match command {
        Command::Synth { .. } => {
            if let Some(out) = &common.out {
                cfg.paths.data_dir = out.clone();
            }
            cmd_synth(&cfg)
        }
        _ => {
            if let Some(out) = &common.out {
                cfg.paths.out_dir = out.clone();
            }
            match command {
                Command::Train { engine, .. } => cmd_train(&cfg, *engine),
                Command::Recommend { engine, .. } => cmd_recommend(&cfg, *engine),
                Command::Stability { engine, .. } => cmd_stability(&cfg, *engine),
                Command::Value { engine, .. } => cmd_value(&cfg, *engine),
                Command::Lifecycle { .. } => cmd_lifecycle(&cfg),
                Command::Curve { serial_timing, .. } => cmd_curve(&cfg, *serial_timing),
                Command::Synth { .. } => unreachable!(),
            }
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generated corpus with the configured plants applied.
pub fn synthesize(cfg: &RunConfig) -> Result<Synthetic> {
    let gen = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("missing [synth] section (synth.rng_seed is required)".into()))?;
    let mut s = synthgen::generate(gen)?;
    if let Some(id) = &cfg.plant.duplicate_of {
        let (dataset, ids) = synthgen::plant_duplicate_sessions(&s.dataset, id, cfg.plant.duplicate_copies)?;
        synthgen::record_duplicates(&mut s.truth, &ids);
        s.dataset = dataset;
    }
    if let Some(max_copies) = cfg.plant.redundant_search_copies {
        let (dataset, _, ids) = synthgen::find_redundant_plant(&s.dataset, max_copies)
            .ok_or_else(|| Error::Precondition(format!("no session admits {max_copies} gap-safe clones")))?;
        synthgen::record_duplicates(&mut s.truth, &ids);
        s.dataset = dataset;
    }
    if cfg.plant.toxic {
        let (dataset, truth, _) = synthgen::plant_toxic_session(
            &s.dataset,
            &s.eval_log,
            &s.truth,
            cfg.plant.toxic_seed,
            &cfg.toxic_plan(),
        )?;
        s.dataset = dataset;
        s.truth = truth;
    }
    Ok(s)
}

pub fn load_inputs(cfg: &RunConfig) -> Result<(Dataset, EvalLog)> {
    let dataset = load_dataset(&cfg.sessions_path(), &cfg.catalog_path())?;
    let eval = EvalLog::load(&cfg.eval_path())?;
    eval.check_catalog(dataset.catalog())?;
    Ok((dataset, eval))
}

fn cmd_synth(cfg: &RunConfig) -> Result<Outcome> {
    let s = synthesize(cfg)?;
    let mut sessions = Vec::new();
    write_sessions(&mut sessions, s.dataset.sessions())?;
    let mut catalog = Vec::new();
    write_catalog(&mut catalog, s.dataset.catalog())?;
    let mut eval = Vec::new();
    s.eval_log.write(&mut eval)?;
    write_file(&cfg.sessions_path(), &sessions)?;
    write_file(&cfg.catalog_path(), &catalog)?;
    write_file(&cfg.eval_path(), &eval)?;
    write_file(&cfg.truth_path(), s.truth.to_json()?.as_bytes())?;
    let summary = json!({
        "n_sessions": s.dataset.len(),
        "n_products": s.dataset.products().len(),
        "mean_length": s.dataset.mean_session_length(),
        "n_eval_sessions": s.eval_log.len(),
        "planted": s.truth.planted.iter().map(|p| json!({"session_id": p.session_id, "kind": p.kind})).collect::<Vec<_>>(),
    });
    let text = format!(
        "n_sessions={} n_products={} mean_length={:.3} n_eval_sessions={} planted={}\n",
        s.dataset.len(),
        s.dataset.products().len(),
        s.dataset.mean_session_length(),
        s.eval_log.len(),
        s.truth.planted.len()
    );
    Ok(Outcome::ok(summary, text))
}

fn builder(cfg: &RunConfig, engine: Engine) -> Box<dyn ModelBuilder> {
    match engine {
        Engine::Cor => Box::new(CorBuilder),
        Engine::Vr => Box::new(VrBuilder {
            hyper: cfg.embed.clone(),
        }),
    }
}

fn cmd_train(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    let dataset = load_dataset(&cfg.sessions_path(), &cfg.catalog_path())?;
    let model = builder(cfg, engine).build(&dataset, cfg.harness.k)?;
    let path = cfg.paths.out_dir.join(format!("model_{}.txt", engine.name()));
    write_file(&path, model.serialized.as_bytes())?;
    let text = format!(
        "{}: {} seeds written to {}\n",
        engine.name(),
        model.top_k.len(),
        path.display()
    );
    Ok(Outcome::ok(
        json!({"engine": engine.name(), "n_seeds": model.top_k.len()}),
        text,
    ))
}

fn recommendations_csv(top_k: &TopK) -> String {
    let mut out = String::from("seed,rank,product,score\n");
    for (seed, list) in top_k {
        for (rank, (p, score)) in list.items.iter().enumerate() {
            out.push_str(&format!("{seed},{},{p},{score}\n", rank + 1));
        }
    }
    out
}

fn cmd_recommend(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    let dataset = load_dataset(&cfg.sessions_path(), &cfg.catalog_path())?;
    let k = cfg.harness.k;
    let top_k = match engine {
        Engine::Cor => CoocMatrix::build(&dataset).all_top_k(k),
        Engine::Vr => embed::train(&dataset, &cfg.embed)?.all_top_k_similar(k, None),
    };
    let path = cfg.paths.out_dir.join(format!("recommendations_{}.csv", engine.name()));
    write_file(&path, recommendations_csv(&top_k).as_bytes())?;
    let text = format!(
        "{}: {} seeds written to {}\n",
        engine.name(),
        top_k.len(),
        path.display()
    );
    Ok(Outcome::ok(
        json!({"engine": engine.name(), "n_seeds": top_k.len()}),
        text,
    ))
}

fn cmd_stability(cfg: &RunConfig, engine: Option<Engine>) -> Result<Outcome> {
    let dataset = load_dataset(&cfg.sessions_path(), &cfg.catalog_path())?;
    let engines = match engine {
        Some(e) => vec![e],
        None => vec![Engine::Cor, Engine::Vr],
    };
    let mut text = String::new();
    let mut results = serde_json::Map::new();
    let mut ok = true;
    for e in engines {
        let report = sensitivity::verify_stability(&dataset, builder(cfg, e).as_ref(), cfg.harness.k)?;
        ok &= report.stable;
        text.push_str(&report.to_string());
        results.insert(
            e.name().into(),
            json!({"stable": report.stable, "divergence": report.divergence}),
        );
    }
    write_file(&cfg.paths.out_dir.join("stability.txt"), text.as_bytes())?;
    Ok(Outcome {
        summary: json!({"passed": ok, "engines": results}),
        text,
        ok,
    })
}

/// Leave-one-out records for one engine, with the configured sample.
pub fn value_records(
    cfg: &RunConfig,
    dataset: &Dataset,
    eval: &EvalLog,
    engine: Engine,
) -> Result<Vec<SensitivityRecord>> {
    let h = &cfg.harness;
    match engine {
        Engine::Cor => sensitivity::run_cor_loo(dataset, eval, &h.harness(h.sample.clone())),
        Engine::Vr => {
            let sample = h.sample.clone().or_else(|| {
                h.vr_sample_size
                    .map(|n| sensitivity::sample_sessions(dataset, n, h.sample_seed))
            });
            sensitivity::run_vr_loo(dataset, eval, &h.harness(sample), &cfg.embed)
        }
    }
}

fn cmd_value(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    let (dataset, eval) = load_inputs(cfg)?;
    let records = value_records(cfg, &dataset, &eval, engine)?;
    let hist = sensitivity::histogram(&records, cfg.harness.bin_width, cfg.harness.neutral_band)?;
    let summary = sensitivity::summarize(&records);
    let name = engine.name();
    let out = &cfg.paths.out_dir;
    write_file(
        &out.join(format!("records_{name}.csv")),
        sensitivity::records_csv(&records).as_bytes(),
    )?;
    write_file(&out.join(format!("histogram_{name}.csv")), hist.to_csv().as_bytes())?;
    let json = serde_json::to_value(&summary)?;
    write_file(
        &out.join(format!("summary_{name}.json")),
        format!("{json}\n").as_bytes(),
    )?;
    let mut text = format!("{name}: {} records\n", summary.n_records);
    for (c, n) in &summary.counts {
        text.push_str(&format!("  {c}: {n}\n"));
    }
    text.push_str(&format!(
        "  rel CR change min/mean/max: {} / {} / {}\n",
        summary.min_rel_cr_change, summary.mean_rel_cr_change, summary.max_rel_cr_change
    ));
    Ok(Outcome::ok(json, text))
}

fn cmd_lifecycle(cfg: &RunConfig) -> Result<Outcome> {
    let dataset = load_dataset(&cfg.sessions_path(), &cfg.catalog_path())?;
    let run = lifecycle::trajectories(&dataset, &cfg.lifecycle.plan(), cfg.lifecycle.k)?;
    let level = cfg
        .lifecycle
        .hr_level
        .or_else(|| dataset.catalog().deepest_common_level())
        .unwrap_or(0);
    let stats = lifecycle::class_stats(&run.trajectories, &dataset, dataset.catalog(), level)?;
    let out = &cfg.paths.out_dir;
    write_file(
        &out.join("trajectories.csv"),
        lifecycle::trajectories_csv(&run.trajectories).as_bytes(),
    )?;
    write_file(&out.join("lifecycle_stats.csv"), stats.to_csv().as_bytes())?;
    let summary = json!({
        "cohort_day": run.cohort_day,
        "cohort_size": run.trajectories.len(),
        "clipped_frames": run.clipped_frames,
        "empty_cohort": run.empty_cohort,
        "classes": serde_json::to_value(&stats.rows)?,
    });
    let mut text = format!(
        "cohort day {}: {} sessions, {} frames clipped\n",
        run.cohort_day,
        run.trajectories.len(),
        run.clipped_frames
    );
    for r in &stats.rows {
        text.push_str(&format!("  {}: {} ({:.2}%)\n", r.impact, r.n_sessions, r.percentage));
    }
    Ok(Outcome::ok(summary, text))
}

fn cmd_curve(cfg: &RunConfig, serial_timing: bool) -> Result<Outcome> {
    let (dataset, eval) = load_inputs(cfg)?;
    let rows = curve::run_curve(&dataset, &eval, &cfg.curve_plan(serial_timing))?;
    let series = curve::emit_curves(&rows);
    let out = &cfg.paths.out_dir;
    write_file(&out.join("curve_table.csv"), curve::table_csv(&rows).as_bytes())?;
    write_file(&out.join("curve_points.csv"), curve::curves_csv(&series).as_bytes())?;
    let text = curve::table_csv(&rows);
    let summary = json!({
        "rows": rows.iter().map(|r| json!({
            "days": r.report.days,
            "n_sessions": r.report.n_sessions,
            "n_products": r.report.n_products,
            "snp": r.report.snp,
            "cr": r.report.cr,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome::ok(summary, text))
}
