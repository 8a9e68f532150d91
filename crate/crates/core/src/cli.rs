//! Command-line front end.
//!
//! Flag names follow the original experiment harness, underscores included:
//!
//! ```text
//! customs-select --data synthetic --semi_supervised 0 --batch_size 512 \
//!     --sampling hybrid --subsamplings DATE/bATE --weights 0.9/0.1 \
//!     --mode scratch --train_from 20130101 --test_from 20130201 \
//!     --test_length 7 --valid_length 28 --initial_inspection_rate 100 \
//!     --final_inspection_rate 10 --epoch 10 --closs bce --rloss full \
//!     --save 0 --numweeks 100 --inspection_plan fast_linear_decay
//! ```
//!
//! Results go to `<root>/results/performances/`, where `<root>` is `--output`,
//! else `$CUSTOMS_RESULTS_ROOT`, else the working directory.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::Parser;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::{parse_declarations, write_rejects, ColumnMap, LabeledDeclaration};
use crate::metrics::{write_plot_data, write_reports, PlotMetric};
use crate::model::TrainConfig;
use crate::selection::StrategySpec;
use crate::simulate::{self, PlanPolicy, PlanSpec, RunSummary, SimulationConfig};
use crate::synthgen::{self, GeneratorConfig};

pub const RESULTS_ROOT_ENV: &str = "CUSTOMS_RESULTS_ROOT";
pub const MOVING_AVERAGE_WEEKS: usize = 13;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Generator(#[from] synthgen::GeneratorError),
    #[error(transparent)]
    Simulation(#[from] simulate::SimulationError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "customs-select", version, about = "Weekly customs inspection selection simulator")]
pub struct CliArgs {
    /// `synthetic` or a path to a declarations CSV with label columns.
    #[arg(long = "data", default_value = "synthetic")]
    pub data: String,
    /// Accepted for compatibility; only 0 is supported.
    #[arg(long = "semi_supervised", default_value_t = 0)]
    pub semi_supervised: u8,
    #[arg(long = "batch_size", default_value_t = 512)]
    pub batch_size: usize,
    /// random, DATE, badge, bATE, gATE or hybrid.
    #[arg(long = "sampling", default_value = "hybrid")]
    pub sampling: String,
    #[arg(long = "subsamplings", default_value = "DATE/gATE")]
    pub subsamplings: String,
    #[arg(long = "weights", default_value = "0.9/0.1")]
    pub weights: String,
    /// Only `scratch`: the model is retrained from scratch every week.
    #[arg(long = "mode", default_value = "scratch")]
    pub mode: String,
    /// YYYYMMDD.
    #[arg(long = "train_from", default_value = "20130101")]
    pub train_from: String,
    /// YYYYMMDD.
    #[arg(long = "test_from", default_value = "20130201")]
    pub test_from: String,
    #[arg(long = "test_length", default_value_t = 7)]
    pub test_length: u32,
    #[arg(long = "valid_length", default_value_t = 28)]
    pub valid_length: u32,
    /// Percent.
    #[arg(long = "initial_inspection_rate", default_value_t = 100.0)]
    pub initial_inspection_rate: f64,
    /// Percent.
    #[arg(long = "final_inspection_rate", default_value_t = 10.0)]
    pub final_inspection_rate: f64,
    #[arg(long = "epoch", default_value_t = 10)]
    pub epoch: usize,
    #[arg(long = "closs", default_value = "bce")]
    pub closs: String,
    #[arg(long = "rloss", default_value = "full")]
    pub rloss: String,
    /// 1 writes the last weekly model and its loss trace.
    #[arg(long = "save", default_value_t = 0)]
    pub save: u8,
    #[arg(long = "numweeks", default_value_t = 100)]
    pub numweeks: usize,
    /// fast_linear_decay or constant.
    #[arg(long = "inspection_plan", default_value = "fast_linear_decay")]
    pub inspection_plan: String,
    /// Master seed.
    #[arg(long = "seed", default_value_t = 0)]
    pub seed: u64,
    /// Runs seeds seed, seed+1, … one after another.
    #[arg(long = "repeat", default_value_t = 1)]
    pub repeat: usize,
    /// gATE threshold on validation Rev@n%.
    #[arg(long = "theta", default_value_t = crate::selection::DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long = "lr", default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long = "hidden", default_value_t = 16)]
    pub hidden: usize,
    /// Weight of the revenue loss.
    #[arg(long = "revenue_weight", default_value_t = 1.0)]
    pub revenue_weight: f64,
    #[arg(long = "risk_percentile", default_value_t = 0.9)]
    pub risk_percentile: f64,
    /// First week counted in the headline averages; defaults to the end of
    /// the decay.
    #[arg(long = "headline_from")]
    pub headline_from: Option<usize>,
    /// Generator settings as a key=value file.
    #[arg(long = "gen_config")]
    pub gen_config: Option<PathBuf>,
    /// Generator override, e.g. `--gen num_items=20000`. Repeatable.
    #[arg(long = "gen")]
    pub gen: Vec<String>,
    /// Output root directory.
    #[arg(long = "output")]
    pub output: Option<PathBuf>,
    /// Base name for result files.
    #[arg(long = "run_name")]
    pub run_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum DataSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct CliConfig {
    pub data: DataSource,
    /// Used only for synthetic data.
    pub generator: GeneratorConfig,
    pub simulation: SimulationConfig,
    pub repeat: usize,
    pub save: bool,
    pub output_root: PathBuf,
    pub run_name: String,
}

fn parse_ymd(flag: &str, raw: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(raw, "%Y%m%d")
        .ok()
        .filter(|_| raw.len() == 8)
        .ok_or_else(|| CliError::Usage(format!("--{flag} expects YYYYMMDD, got '{raw}'")))
}

fn percent(flag: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v <= 100.0 {
        Ok(v / 100.0)
    } else {
        Err(CliError::Usage(format!("--{flag} must lie in (0, 100], got {v}")))
    }
}

fn default_run_name(a: &CliArgs) -> String {
    let strategy = if a.sampling.eq_ignore_ascii_case("hybrid") {
        format!("hybrid-{}-{}", a.subsamplings, a.weights)
    } else {
        a.sampling.clone()
    };
    let data = if a.data == "synthetic" {
        "synthetic".to_string()
    } else {
        Path::new(&a.data)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    };
    let raw = format!(
        "{data}-{strategy}-{}-{}to{}",
        a.inspection_plan, a.initial_inspection_rate, a.final_inspection_rate
    );
    raw.chars()
        .map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '-' | '_' | '.' => c,
            '/' => '+',
            _ => '_',
        })
        .collect()
}

impl CliConfig {
    pub fn from_args(a: CliArgs) -> Result<Self, CliError> {
        if a.semi_supervised != 0 {
            return Err(CliError::Usage(
                "--semi_supervised is not supported; use 0".into(),
            ));
        }
        if a.mode != "scratch" {
            return Err(CliError::Usage(format!(
                "--mode '{}' is not supported; use scratch",
                a.mode
            )));
        }
        if a.closs != "bce" {
            return Err(CliError::Usage(format!("--closs '{}' is not supported; use bce", a.closs)));
        }
        if a.rloss != "full" {
            return Err(CliError::Usage(format!("--rloss '{}' is not supported; use full", a.rloss)));
        }
        if a.save > 1 {
            return Err(CliError::Usage("--save takes 0 or 1".into()));
        }
        if a.repeat == 0 {
            return Err(CliError::Usage("--repeat must be ≥ 1".into()));
        }
        let strategy = StrategySpec::parse(
            &a.sampling,
            Some(&a.subsamplings),
            Some(&a.weights),
            a.theta,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let policy: PlanPolicy = a
            .inspection_plan
            .parse()
            .map_err(|e: simulate::SimulationError| CliError::Usage(e.to_string()))?;
        let train_from = parse_ymd("train_from", &a.train_from)?;
        let test_from = parse_ymd("test_from", &a.test_from)?;

        let simulation = SimulationConfig {
            train_from,
            test_from,
            test_length: a.test_length,
            valid_length: a.valid_length,
            plan: PlanSpec {
                policy,
                initial_rate: percent("initial_inspection_rate", a.initial_inspection_rate)?,
                final_rate: percent("final_inspection_rate", a.final_inspection_rate)?,
            },
            strategy,
            train: TrainConfig {
                epochs: a.epoch,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                revenue_weight: a.revenue_weight,
                hidden: a.hidden,
                seed: 0,
            },
            num_weeks: a.numweeks,
            seed: a.seed,
            risk_percentile: a.risk_percentile,
            headline_from_week: a.headline_from,
            ..SimulationConfig::default()
        };
        simulation
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;

        // The synthetic stream starts at train_from and spans the test
        // horizon unless the generator settings say otherwise.
        let span_days = (test_from - train_from).num_days()
            + i64::from(a.test_length) * a.numweeks as i64;
        let mut generator = GeneratorConfig {
            start_date: train_from,
            num_weeks: usize::try_from((span_days + 6) / 7).unwrap_or(1).max(1),
            ..GeneratorConfig::default()
        };
        if let Some(path) = &a.gen_config {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            generator.apply_kv_str(&text)?;
        }
        for kv in &a.gen {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--gen expects key=value, got '{kv}'")))?;
            generator.set(k.trim(), v.trim())?;
        }

        let data = if a.data == "synthetic" {
            generator.validate()?;
            DataSource::Synthetic
        } else {
            DataSource::File(PathBuf::from(&a.data))
        };
        let output_root = a
            .output
            .clone()
            .or_else(|| std::env::var_os(RESULTS_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        let run_name = a.run_name.clone().unwrap_or_else(|| default_run_name(&a));

        Ok(Self {
            data,
            generator,
            simulation,
            repeat: a.repeat,
            save: a.save == 1,
            output_root,
            run_name,
        })
    }

    pub fn performances_dir(&self) -> PathBuf {
        self.output_root.join("results").join("performances")
    }
}

/// Parses an argument vector, program name first.
pub fn parse_cli<I, T>(argv: I) -> Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    CliConfig::from_args(CliArgs::try_parse_from(argv)?)
}

/// Files written for one seed.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub results_csv: PathBuf,
    pub config_json: PathBuf,
    pub plot_csvs: Vec<PathBuf>,
    pub rejects_csv: Option<PathBuf>,
    pub model_json: Option<PathBuf>,
    pub summary: RunSummary,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn finish(path: &Path, w: BufWriter<File>) -> Result<(), CliError> {
    w.into_inner()
        .map_err(|e| e.into_error())
        .and_then(|f| f.sync_all())
        .map_err(io_err(path))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

struct Loaded {
    items: Vec<LabeledDeclaration>,
    rejects: Vec<crate::ingest::Reject>,
}

fn load(cfg: &CliConfig) -> Result<Loaded, CliError> {
    match &cfg.data {
        DataSource::Synthetic => Ok(Loaded {
            items: synthgen::generate(&cfg.generator)?,
            rejects: Vec::new(),
        }),
        DataSource::File(path) => {
            let file = File::open(path).map_err(io_err(path))?;
            let outcome = parse_declarations(BufReader::new(file), &ColumnMap::default())
                .map_err(|e| CliError::Data {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            if !outcome.labeled {
                return Err(CliError::Data {
                    path: path.clone(),
                    message: "no illicit/revenue columns; the simulation needs labels".into(),
                });
            }
            Ok(Loaded {
                items: outcome.items,
                rejects: outcome.rejects,
            })
        }
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    run_name: &'a str,
    seed: u64,
    data: &'a DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<&'a GeneratorConfig>,
    simulation: &'a SimulationConfig,
    items_loaded: usize,
    rows_rejected: usize,
}

/// Loads the data once and runs every requested seed, writing result files
/// and a summary to `out`.
pub fn execute<W: Write>(cfg: &CliConfig, out: &mut W) -> Result<Vec<RunArtifacts>, CliError> {
    let loaded = load(cfg)?;
    let dir = cfg.performances_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut artifacts = Vec::with_capacity(cfg.repeat);
    for r in 0..cfg.repeat {
        let seed = cfg.simulation.seed.wrapping_add(r as u64);
        let sim_cfg = SimulationConfig {
            seed,
            ..cfg.simulation.clone()
        };
        let stem = if cfg.repeat == 1 {
            cfg.run_name.clone()
        } else {
            format!("{}-seed{seed}", cfg.run_name)
        };
        let outcome = simulate::run(&sim_cfg, loaded.items.clone())?;

        let results_csv = dir.join(format!("{stem}.csv"));
        let mut w = create(&results_csv)?;
        write_reports(&outcome.reports, &mut w).map_err(csv_err(&results_csv))?;
        finish(&results_csv, w)?;

        let mut plot_csvs = Vec::new();
        for metric in [PlotMetric::Precision, PlotMetric::Revenue] {
            let path = dir.join(format!("{stem}.{}.csv", metric.name()));
            let mut w = create(&path)?;
            write_plot_data(&outcome.reports, metric, MOVING_AVERAGE_WEEKS, &mut w).map_err(
                |e| CliError::Data {
                    path: path.clone(),
                    message: e.to_string(),
                },
            )?;
            finish(&path, w)?;
            plot_csvs.push(path);
        }

        let config_json = dir.join(format!("{stem}.config.json"));
        let echo = ConfigEcho {
            run_name: &stem,
            seed,
            data: &cfg.data,
            generator: matches!(cfg.data, DataSource::Synthetic).then_some(&cfg.generator),
            simulation: &sim_cfg,
            items_loaded: loaded.items.len(),
            rows_rejected: loaded.rejects.len(),
        };
        let mut w = create(&config_json)?;
        serde_json::to_writer_pretty(&mut w, &echo)
            .map_err(|e| io_err(&config_json)(io::Error::other(e)))?;
        writeln!(w).map_err(io_err(&config_json))?;
        finish(&config_json, w)?;

        let rejects_csv = if loaded.rejects.is_empty() {
            None
        } else {
            let path = dir.join(format!("{stem}.rejects.csv"));
            let mut w = create(&path)?;
            write_rejects(&loaded.rejects, &mut w).map_err(|e| CliError::Data {
                path: path.clone(),
                message: e.to_string(),
            })?;
            finish(&path, w)?;
            Some(path)
        };

        let model_json = match (&outcome.last_model, cfg.save) {
            (Some(model), true) => {
                let mdir = cfg.output_root.join("results").join("models");
                fs::create_dir_all(&mdir).map_err(io_err(&mdir))?;
                let path = mdir.join(format!("{stem}.json"));
                let mut w = create(&path)?;
                model.save_json(&mut w).map_err(|e| CliError::Data {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                finish(&path, w)?;
                let trace = mdir.join(format!("{stem}.loss.csv"));
                let mut w = create(&trace)?;
                model.write_loss_trace(&mut w).map_err(io_err(&trace))?;
                finish(&trace, w)?;
                Some(path)
            }
            _ => None,
        };

        let summary = outcome.summary(sim_cfg.headline_from_week);
        print_summary(out, &stem, &summary, &outcome, &results_csv)
            .map_err(io_err(Path::new("<stdout>")))?;
        artifacts.push(RunArtifacts {
            seed,
            results_csv,
            config_json,
            plot_csvs,
            rejects_csv,
            model_json,
            summary,
        });
    }
    Ok(artifacts)
}

fn print_summary<W: Write, M>(
    out: &mut W,
    name: &str,
    s: &RunSummary,
    outcome: &simulate::SimulationOutcome<M>,
    path: &Path,
) -> io::Result<()> {
    writeln!(out, "run {name}")?;
    writeln!(
        out,
        "  whole run    ({:>3} weeks)  Norm-Pre {:.4}  Norm-Rev {:.4}",
        s.weeks, s.mean_norm_pre, s.mean_norm_rev
    )?;
    writeln!(
        out,
        "  from week {:<3}({:>3} weeks)  Norm-Pre {:.4}  Norm-Rev {:.4}",
        s.post_decay_from, s.post_decay_weeks, s.post_decay_norm_pre, s.post_decay_norm_rev
    )?;
    let prov: Vec<String> = outcome
        .provenance_totals
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    writeln!(out, "  inspected    {} ({})", outcome.inspected_ids.len(), prov.join(", "))?;
    writeln!(out, "  results      {}", path.display())
}

/// Entry point used by the binary. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_cli(argv) {
        Ok(cfg) => cfg,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let stdout = io::stdout();
    match execute(&cfg, &mut stdout.lock()) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE_COMMAND: &str = "main.py --data synthetic --semi_supervised 0 --batch_size 512 \
        --sampling hybrid --subsamplings DATE/bATE --weights 0.9/0.1 --mode scratch \
        --train_from 20130101 --test_from 20130201 --test_length 7 --valid_length 28 \
        --initial_inspection_rate 100 --final_inspection_rate 10 --epoch 10 --closs bce \
        --rloss full --save 0 --numweeks 100 --inspection_plan fast_linear_decay";

    fn argv(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn reproduced_command_parses() {
        let cfg = parse_cli(argv(REFERENCE_COMMAND)).unwrap();
        assert_eq!(cfg.data, DataSource::Synthetic);
        let names: Vec<(&str, f64)> = match &cfg.simulation.strategy {
            StrategySpec::Hybrid { children } => children
                .iter()
                .map(|c| (c.strategy.name(), c.weight))
                .collect(),
            other => panic!("expected hybrid, got {other:?}"),
        };
        assert_eq!(names, vec![("DATE", 0.9), ("bATE", 0.1)]);
        let s = &cfg.simulation;
        assert_eq!(s.train.batch_size, 512);
        assert_eq!(s.train.epochs, 10);
        assert_eq!(s.num_weeks, 100);
        assert_eq!((s.test_length, s.valid_length), (7, 28));
        assert_eq!(s.plan.policy, PlanPolicy::FastLinearDecay);
        assert_eq!((s.plan.initial_rate, s.plan.final_rate), (1.0, 0.1));
        assert_eq!(s.test_from, NaiveDate::from_ymd_opt(2013, 2, 1).unwrap());
        assert!(!cfg.save);
    }

    #[test]
    fn no_flags_gives_defaults() {
        let cfg = parse_cli(["customs-select"]).unwrap();
        assert_eq!(cfg.data, DataSource::Synthetic);
        assert_eq!(cfg.simulation.train.batch_size, 512);
        assert_eq!(cfg.simulation.train.epochs, 10);
        assert_eq!(cfg.simulation.test_length, 7);
        assert_eq!(cfg.simulation.valid_length, 28);
        assert_eq!(cfg.simulation.plan, PlanSpec::default());
        assert_eq!(cfg.simulation.strategy, StrategySpec::default());
        assert_eq!(cfg.repeat, 1);
    }

    #[test]
    fn bad_weights_are_a_usage_error() {
        let err = parse_cli(argv("x --sampling hybrid --subsamplings DATE/bATE --weights 0.5/0.6"))
            .unwrap_err();
        match err {
            CliError::Usage(msg) => assert!(msg.contains("sum"), "{msg}"),
            other => panic!("expected usage error, got {other:?}"),
        }
        assert!(matches!(
            parse_cli(argv("x --weights 0.9/abc")),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn unsupported_options_are_rejected() {
        for bad in [
            "x --semi_supervised 1",
            "x --mode finetune",
            "x --closs mse",
            "x --rloss none",
            "x --inspection_plan weekly",
            "x --train_from 2013-01-01",
            "x --final_inspection_rate 0",
            "x --initial_inspection_rate 10 --final_inspection_rate 20",
        ] {
            assert!(matches!(parse_cli(argv(bad)), Err(CliError::Usage(_))), "{bad}");
        }
        assert!(matches!(parse_cli(argv("x --unknown 1")), Err(CliError::Clap(_))));
    }

    #[test]
    fn synthetic_span_covers_the_test_horizon() {
        let cfg = parse_cli(argv("x --numweeks 20")).unwrap();
        assert_eq!(cfg.generator.start_date, cfg.simulation.train_from);
        // 31 days of history plus 140 test days.
        assert_eq!(cfg.generator.num_weeks, 25);
        let cfg = parse_cli(argv("x --numweeks 20 --gen num_weeks=60 --gen num_items=5000")).unwrap();
        assert_eq!((cfg.generator.num_weeks, cfg.generator.num_items), (60, 5000));
    }
}
