//! Command-line front end: `run`, `sweep` and `check`.

pub mod check;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::federation::Simulator;
use crate::metrics::{improvement_ratio, MetricsLog};

pub use check::{run_suite, CheckResult, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.fsfr";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Parser)]
#[command(name = "fedsfr", version, about = "Federated JSCC training with server-side feature reconstruction")]
pub struct Cli {
    /// Run configuration (TOML). Defaults to the bundled desk-scale config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "FEDSFR_OUT", default_value = "fedsfr-out")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write metrics, the final model and the resolved config.
    Run,
    /// Train once per setting along one axis and summarise.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Settings: server rates for `eta-s0`, `KM:KO` pairs for `split`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// Run the oracle self-checks.
    Check {
        #[arg(long, value_enum)]
        only: Option<Suite>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    /// Initial server learning rate.
    EtaS0,
    /// Model-sender / feature-sender counts.
    Split,
}

/// One setting of a sweep, applied on top of the base config.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    EtaS0(f64),
    Split(usize, usize),
}

impl SweepPoint {
    pub fn label(&self) -> String {
        match self {
            SweepPoint::EtaS0(v) => format!("eta_s0_{v}"),
            SweepPoint::Split(m, o) => format!("split_{m}_{o}"),
        }
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            SweepPoint::EtaS0(v) => cfg.schedule.eta_s0 = v,
            SweepPoint::Split(m, o) => {
                cfg.federation.model_clients = m;
                cfg.federation.feature_clients = o;
            }
        }
    }
}

/// Default sweep points: server rates at 10, 1, 0.1 and 0.01 times the client
/// rate, and three splits of equal uplink volume `S_m·K_m + S_o·K_o` from
/// feature-heavy to model-heavy.
pub fn default_points(axis: SweepAxis, cfg: &RunConfig) -> Vec<SweepPoint> {
    match axis {
        SweepAxis::EtaS0 => [10.0, 1.0, 0.1, 0.01]
            .iter()
            .map(|r| SweepPoint::EtaS0(r * cfg.schedule.eta_c0))
            .collect(),
        SweepAxis::Split => vec![SweepPoint::Split(1, 9), SweepPoint::Split(2, 5), SweepPoint::Split(3, 1)],
    }
}

pub fn parse_points(axis: SweepAxis, values: &[String]) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|v| match axis {
            SweepAxis::EtaS0 => v
                .trim()
                .parse()
                .map(SweepPoint::EtaS0)
                .map_err(|_| Error::Config(format!("bad eta_s0 value {v:?}"))),
            SweepAxis::Split => {
                let (m, o) = v
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("split value {v:?} is not KM:KO")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad split value {v:?}")))
                };
                Ok(SweepPoint::Split(parse(m)?, parse(o)?))
            }
        })
        .collect()
}

/// Trains `config` and writes `metrics.csv`, `model.fsfr` and `config.toml`
/// into `out`. A failing run still leaves the rounds completed so far in
/// `metrics.csv`.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<MetricsLog> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), config.to_toml_string()?)?;
    let mut sim = Simulator::new(config.clone())?;
    if config.output.dump_updates {
        sim.set_dump_dir(Some(out.join("updates")));
    }
    while !sim.is_finished() {
        if let Err(e) = sim.step() {
            sim.log().write_csv(out.join(METRICS_FILE))?;
            return Err(e);
        }
    }
    sim.log().write_csv(out.join(METRICS_FILE))?;
    let file = std::fs::File::create(out.join(MODEL_FILE))?;
    sim.model().save(std::io::BufWriter::new(file))?;
    Ok(sim.log().clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub final_psnr: f64,
    pub improvement_ratio: f64,
}

/// One `cmd_run` per point under `out/<label>/`, plus `out/summary.csv`.
pub fn cmd_sweep(config: &RunConfig, points: &[SweepPoint], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for point in points {
        let mut cfg = config.clone();
        point.apply(&mut cfg);
        let label = point.label();
        log::info!("sweep: {label}");
        let log = cmd_run(&cfg, &out.join(&label))?;
        rows.push(SweepRow {
            label,
            final_psnr: log.last().map_or(f64::NAN, |r| r.test_psnr_post_fr),
            improvement_ratio: improvement_ratio(&log, None),
        });
    }
    let mut w = csv::Writer::from_path(out.join(SUMMARY_FILE))?;
    w.write_record(["setting", "final_psnr", "improvement_ratio"])?;
    for r in &rows {
        w.write_record([r.label.clone(), r.final_psnr.to_string(), r.improvement_ratio.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Runs the selected suites, printing one line per check. True if all pass.
pub fn cmd_check<W: Write>(config: &RunConfig, only: Option<Suite>, out: &mut W) -> Result<bool> {
    let suites: Vec<Suite> = only.map_or_else(|| Suite::ALL.to_vec(), |s| vec![s]);
    let mut ok = true;
    for suite in suites {
        for result in run_suite(suite, config) {
            writeln!(out, "{result}")?;
            ok &= result.passed;
        }
    }
    Ok(ok)
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` and executes the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Run => cmd_run(&config, &cli.out).map(|log| {
            if let Some(r) = log.last() {
                println!(
                    "{} rounds, final test PSNR {:.3} dB, improvement ratio {:.3}",
                    log.len(),
                    r.test_psnr_post_fr,
                    improvement_ratio(&log, None)
                );
            }
            println!("artifacts in {}", cli.out.display());
            EXIT_OK
        }),
        Command::Sweep { axis, values } => {
            let points = match values {
                Some(v) => parse_points(*axis, v),
                None => Ok(default_points(*axis, &config)),
            };
            points.and_then(|p| cmd_sweep(&config, &p, &cli.out)).map(|rows| {
                for r in rows {
                    println!("{}: final PSNR {:.3} dB, improvement ratio {:.3}", r.label, r.final_psnr, r.improvement_ratio);
                }
                EXIT_OK
            })
        }
        Command::Check { only } => cmd_check(&config, *only, &mut std::io::stdout().lock())
            .map(|ok| if ok { EXIT_OK } else { EXIT_FAILURE }),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
