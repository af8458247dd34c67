use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use faas_sim::config::{self, ExperimentConfig};
use faas_sim::harness::{self, RunOptions};
use faas_sim::trace::{gen_synthetic_trace, write_trace, SyntheticSpec, TracePaths};

#[derive(Parser)]
#[command(name = "faas-sim", version, about = "Discrete-event simulator for serverless autoscaling policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment.
    Run(Common),
    /// Run every point of the config's `[sweep]` cross product.
    Sweep(Common),
    /// Run the 50-node / 2000-function large-scale mode.
    Scale(Common),
    /// Write a synthetic trace (three CSV files) from a spec file.
    GenTrace(Common),
    /// Parse and validate a config, then print it with defaults filled in.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to the config's `output_dir`, then to
    /// `FAAS_SIM_OUT`, then to `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set policy.keepalive_ms=120000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Maximum concurrent sweep points.
    #[arg(long)]
    parallel: Option<usize>,
    /// Also write the processed-event log as CSV.
    #[arg(long)]
    event_log: bool,
    /// Run the full consistency check after every event (slow).
    #[arg(long)]
    check_invariants: bool,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(("seed".to_owned(), toml::Value::Integer(i64::try_from(seed).context("seed too large")?)));
        }
        for s in &self.overrides {
            out.push(config::parse_override(s)?);
        }
        Ok(out)
    }

    fn config_path(&self) -> Result<&Path> {
        self.config.as_deref().context("--config is required")
    }

    fn out_dir(&self, config_dir: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config_dir.map(Path::to_path_buf))
            .or_else(|| std::env::var_os("FAAS_SIM_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }

    fn options(&self) -> RunOptions {
        RunOptions { event_log: self.event_log, usage_trace: false, check_every_event: self.check_invariants }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn print_summary(report: &faas_sim::metrics::ExperimentReport) {
    let f = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.4}"));
    println!(
        "{}: slowdown={} norm_mem={} creation_rate={} cpu_overhead={} worker_share={}",
        report.policy,
        f(report.slowdown_geomean_p99),
        f(report.normalized_memory),
        f(report.creation_rate_per_s),
        f(report.cpu_overhead_total),
        f(report.cpu_overhead_worker_share)
    );
}

fn cmd_run(args: &Common) -> Result<()> {
    let path = args.config_path()?;
    let cfg = config::load_config_with(path, &args.overrides()?)?;
    let out = args.out_dir(cfg.output_dir.as_deref());
    let (run, paths) = harness::run_experiment(&cfg, &base_dir(path), &out, args.options())?;
    print_summary(&run.report);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_sweep(args: &Common) -> Result<bool> {
    let path = args.config_path()?;
    let spec = config::load_sweep(path, &args.overrides()?)?;
    println!("sweep over {} points", spec.size());
    let out = args.out_dir(spec.base_config.output_dir.as_deref());
    let result = harness::run_sweep(&spec, &out, args.parallel, args.options())?;
    for p in &result.points {
        match &p.outcome {
            Ok(run) => {
                print!("[{}] {} ", p.index, p.label);
                print_summary(&run.report);
            }
            Err(e) => println!("[{}] {} FAILED: {e}", p.index, p.label),
        }
    }
    println!("wrote {}", result.summary_path.display());
    Ok(result.failures() == 0)
}

fn cmd_scale(args: &Common) -> Result<()> {
    let cfg: ExperimentConfig = match &args.config {
        Some(path) => config::load_config_with(path, &args.overrides()?)?,
        None => {
            let mut tree = toml::Table::try_from(harness::scale_config(args.seed.unwrap_or(42)))?;
            for (k, v) in args.overrides()? {
                config::set_path(&mut tree, &k, v)?;
            }
            config::config_from_table(tree)?
        }
    };
    if cfg.cluster.nodes < 50 {
        bail!("scale mode needs at least 50 nodes, config has {}", cfg.cluster.nodes);
    }
    let base = args.config.as_deref().map(base_dir).unwrap_or_default();
    let out = args.out_dir(cfg.output_dir.as_deref());
    let (run, paths) = harness::scale_mode(&cfg, &base, &out, args.options())?;
    print_summary(&run.report);
    println!(
        "{} invocations, {} events, peak node utilization {:.3}, wall clock {:.1?}",
        run.report.total_invocations, run.report.events_processed, run.report.peak_node_utilization, run.wall_clock
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_gen_trace(args: &Common) -> Result<()> {
    let path = args.config_path()?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut tree: toml::Table = text.parse()?;
    for (k, v) in args.overrides()? {
        if k != "seed" {
            config::set_path(&mut tree, &k, v)?;
        }
    }
    let seed = args.seed.unwrap_or(42);
    tree.remove("seed");
    let spec: SyntheticSpec = tree.try_into()?;
    let profiles = gen_synthetic_trace(&spec, seed)?;
    let out = args.out_dir(None);
    std::fs::create_dir_all(&out)?;
    let paths = TracePaths::in_dir(&out);
    write_trace(&profiles, &paths)?;
    let total: u64 = profiles.iter().map(|p| p.total_invocations()).sum();
    println!("wrote {} functions, {} invocations to {}", profiles.len(), total, out.display());
    Ok(())
}

fn cmd_validate(args: &Common) -> Result<()> {
    let path = args.config_path()?;
    let spec = config::load_sweep(path, &args.overrides()?)?;
    print!("{}", spec.base_config.to_toml());
    if !spec.axes.is_empty() {
        println!("# sweep: {} points", spec.size());
        spec.points()?;
    }
    println!("# ok");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Scale(a) => cmd_scale(a).map(|_| true),
        Command::GenTrace(a) => cmd_gen_trace(a).map(|_| true),
        Command::ValidateConfig(a) => cmd_validate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
