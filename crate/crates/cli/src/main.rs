use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dpsgd::engine::{serve_master, serve_worker};
use dpsgd::hsa2c::RlRow;
use dpsgd::metrics::write_rows;
use dpsgd::svi_lda::topic_recovery;
use dpsgd::{
    run, run_experiment, run_hsa2c, run_svi, Error, ExperimentSpec, Hsa2cConfig, OracleObserver, RunConfig,
    SviConfig, TransportKind,
};

#[derive(Parser)]
#[command(name = "dpsgd", version, about = "Distributed and parallel asynchronous SGD")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One DPSGD run of a built-in problem.
    Run {
        #[command(flatten)]
        common: Common,
        /// Act as the master of a multi-process run, listening here.
        #[arg(long, conflicts_with = "master_addr")]
        listen: Option<SocketAddr>,
        /// Act as a worker of a multi-process run, connecting here.
        #[arg(long)]
        master_addr: Option<SocketAddr>,
        #[arg(long, default_value_t = 0, requires = "master_addr")]
        worker_id: u32,
        /// Record per-step overwrite masks (slow).
        #[arg(long)]
        trace_overwrites: bool,
    },
    /// A sweep described by an experiment spec.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Stochastic variational inference for LDA.
    Svi {
        #[command(flatten)]
        common: Common,
    },
    /// Advantage actor-critic on the toy gridworld.
    Rl {
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        /// Config flavour; guessed from the keys when absent.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    transport: Option<Transport>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Inproc,
    Tcp,
}

impl From<Transport> for TransportKind {
    fn from(t: Transport) -> Self {
        match t {
            Transport::Inproc => TransportKind::Inproc,
            Transport::Tcp => TransportKind::Tcp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Kind {
    Run,
    Sweep,
    Svi,
    Rl,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn runtime<T>(r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    runtime(fs::write(path, serde_json::to_string_pretty(value).expect("json value")))
}

fn apply_common(cfg: &mut RunConfig, common: &Common) -> TransportKind {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    common.transport.map(Into::into).unwrap_or_default()
}

fn report_warnings(cfg: &RunConfig) {
    for w in cfg.theory_warnings() {
        eprintln!("warning: {w}");
    }
}

fn cmd_run(
    common: &Common,
    listen: Option<SocketAddr>,
    master_addr: Option<SocketAddr>,
    worker_id: u32,
    trace: bool,
) -> CliResult<()> {
    let mut cfg: RunConfig = load(&common.config)?;
    let transport = apply_common(&mut cfg, common);
    cfg.trace_overwrites |= trace;
    cfg.validate()?;
    let spec = cfg
        .problem
        .clone()
        .ok_or_else(|| Failure::Config("a run needs a problem".into()))?;
    let oracle = spec.build()?;
    runtime(fs::create_dir_all(&common.out_dir))?;

    if let Some(addr) = master_addr {
        let report = serve_worker(&cfg, oracle.as_ref(), addr, worker_id)?;
        println!("worker {worker_id}: {} passes, {} local steps", report.passes, report.local_steps);
        return Ok(());
    }
    report_warnings(&cfg);
    let (v, metrics, lost) = match listen {
        Some(addr) => {
            let out = serve_master(&cfg, oracle.dim(), addr, &mut OracleObserver(oracle.as_ref()))?;
            (out.v, out.metrics, None)
        }
        None => {
            let out = run(&cfg, oracle.as_ref(), &mut OracleObserver(oracle.as_ref()), transport)?;
            let lost = cfg.trace_overwrites.then(|| {
                out.workers
                    .iter()
                    .flat_map(|w| w.traces.iter().map(|(_, t)| t.lost_writes()))
                    .sum::<usize>()
            });
            (out.v, out.metrics, lost)
        }
    };
    metrics.write_csv(&common.out_dir.join("metrics.csv"))?;
    write_json(
        &common.out_dir.join("outcome.json"),
        &json!({
            "config": cfg,
            "v": v.as_slice(),
            "pushes_received": metrics.pushes_received,
            "pushes_applied": metrics.pushes_applied,
            "dropped_stale": metrics.dropped_stale,
            "staleness_violations": metrics.staleness_violations,
            "staleness_hist": metrics.staleness_hist,
            "malformed_frames": metrics.malformed_frames,
            "lost_writes": lost,
        }),
    )?;
    if let Some(last) = metrics.last() {
        println!(
            "t={} loss={:.6e} grad_norm_sq={:.6e} messages={} effective_gradients={} elapsed={:.3}s",
            last.t, last.loss, last.grad_norm_sq, last.messages_sent, last.effective_gradients, last.wall_clock_s
        );
    }
    Ok(())
}

fn cmd_sweep(common: &Common) -> CliResult<()> {
    let mut spec: ExperimentSpec = load(&common.config)?;
    if let Some(seed) = common.seed {
        spec.base.seed = seed;
    }
    if let Some(t) = common.transport {
        spec.transport = t.into();
    }
    spec.points()?;
    report_warnings(&spec.base);
    let summary = run_experiment(&spec, &common.out_dir)?;
    for r in &summary.runs {
        let c = &r.config;
        match &r.error {
            None => println!(
                "nW={} p={} B={} M={} T={}: {:.1} grads/s, tsp {}",
                c.workers,
                c.threads,
                c.local_steps,
                c.master_batch,
                c.iterations,
                r.gradients_per_s,
                r.tsp.map_or("n/a".into(), |x| format!("{x:.3}"))
            ),
            Some(e) => println!("point {} failed: {e}", r.index),
        }
    }
    if let Some(fit) = summary.slope {
        println!("slope {:.4} (R^2 {:.4})", fit.slope, fit.r2);
    }
    if summary.runs.iter().any(|r| r.error.is_some()) {
        return Err(Failure::Runtime("some sweep points failed".into()));
    }
    Ok(())
}

fn cmd_svi(common: &Common) -> CliResult<()> {
    let mut cfg: SviConfig = load(&common.config)?;
    let transport = apply_common(&mut cfg.run, common);
    report_warnings(&cfg.run);
    let (out, truth) = run_svi(&cfg, transport)?;
    runtime(fs::create_dir_all(&common.out_dir))?;
    write_rows(&common.out_dir.join("svi.csv"), &out.rows)?;
    let recovery = truth.map(|t| topic_recovery(&out.model.topics(), &t));
    write_json(
        &common.out_dir.join("model.json"),
        &json!({ "config": cfg, "model": out.model, "topic_recovery": recovery }),
    )?;
    if let Some(last) = out.rows.last() {
        println!(
            "docs seen {} held-out perplexity {:.3}{}",
            last.effective_docs_seen,
            last.heldout_perplexity,
            recovery.map_or(String::new(), |r| format!(" topic recovery {r:.3}"))
        );
    }
    Ok(())
}

fn cmd_rl(common: &Common) -> CliResult<()> {
    let mut cfg: Hsa2cConfig = load(&common.config)?;
    let transport = apply_common(&mut cfg.run, common);
    report_warnings(&cfg.run);
    let out = run_hsa2c(&cfg, transport)?;
    runtime(fs::create_dir_all(&common.out_dir))?;
    write_rows::<RlRow>(&common.out_dir.join("rl.csv"), &out.rows)?;
    write_json(
        &common.out_dir.join("params.json"),
        &json!({ "config": cfg, "params": out.params, "episodes": out.episodes, "env_steps": out.env_steps }),
    )?;
    if let Some(last) = out.rows.last() {
        println!(
            "env steps {} episodes {} mean return (last 100) {:.4}",
            last.env_steps, out.episodes, last.mean_return_last_100_episodes
        );
    }
    Ok(())
}

fn guess_kind(v: &Value) -> Kind {
    if v.get("base").is_some() {
        Kind::Sweep
    } else if v.get("corpus").is_some() || v.get("lda").is_some() {
        Kind::Svi
    } else if v.get("rl").is_some() {
        Kind::Rl
    } else {
        Kind::Run
    }
}

fn cmd_validate(config: &Path, kind: Option<Kind>) -> CliResult<()> {
    let value: Value = load(config)?;
    let kind = kind.unwrap_or_else(|| guess_kind(&value));
    let parse = |e: serde_json::Error| Failure::Config(format!("{}: {e}", config.display()));
    let run = match kind {
        Kind::Run => {
            let cfg: RunConfig = serde_json::from_value(value).map_err(parse)?;
            cfg.validate()?;
            if cfg.problem.is_none() {
                return Err(Failure::Config("a run needs a problem".into()));
            }
            cfg
        }
        Kind::Sweep => {
            let spec: ExperimentSpec = serde_json::from_value(value).map_err(parse)?;
            spec.points()?;
            spec.base
        }
        Kind::Svi => {
            let cfg: SviConfig = serde_json::from_value(value).map_err(parse)?;
            cfg.run.validate()?;
            cfg.run
        }
        Kind::Rl => {
            let cfg: Hsa2cConfig = serde_json::from_value(value).map_err(parse)?;
            cfg.rl.validate()?;
            cfg.run.validate()?;
            cfg.run
        }
    };
    report_warnings(&run);
    println!("{} config ok", format!("{kind:?}").to_lowercase());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { common, listen, master_addr, worker_id, trace_overwrites } => {
            cmd_run(common, *listen, *master_addr, *worker_id, *trace_overwrites)
        }
        Cmd::Sweep { common } => cmd_sweep(common),
        Cmd::Svi { common } => cmd_svi(common),
        Cmd::Rl { common } => cmd_rl(common),
        Cmd::ValidateConfig { config, kind } => cmd_validate(config, *kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
