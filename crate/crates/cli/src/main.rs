use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use tourgen::config::PipelineConfig;
use tourgen::pipeline::{self, FixtureOptions, PipelineError};
use tourgen::synthetic::GpsOptions;

/// Synthetic tourist itineraries and activity chains.
#[derive(Debug, Parser)]
#[command(name = "tourgen", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(short, long, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Override a config key, e.g. `--set route.gamma=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tourist cohort and monthly ward priors from staypoints.
    Extract,
    /// Base population from survey marginals.
    Synth {
        /// Number of agents.
        #[arg(short, long)]
        agents: Option<usize>,
    },
    /// Trip scope (nights, locations) per agent.
    Scope,
    /// Daily ward itineraries.
    Route,
    /// Quarter-hour activity chains.
    Chains(ChainArgs),
    /// Share, transition and consistency reports.
    Eval,
    /// All stages in order.
    Pipeline(ChainArgs),
    /// Write a synthetic input set and config.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// `fallback` or `remote`.
    #[arg(long)]
    backend: Option<String>,
    /// Chat-completion endpoint for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Target directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    agents: usize,
    #[arg(long, default_value_t = 1200)]
    tourists: usize,
    #[arg(long, default_value_t = 200)]
    residents: usize,
    #[arg(long, default_value_t = 100)]
    business: usize,
    #[arg(long, default_value_t = 2000)]
    training: usize,
}

/// Applies `section.key=value` pairs to a TOML table. Values parse as TOML,
/// falling back to a plain string.
fn apply_overrides(table: &mut toml::Table, overrides: &[(String, String)]) -> Result<(), String> {
    for (key, raw) in overrides {
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.clone()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(|| format!("empty key in override `{key}`"))?;
        let mut at = &mut *table;
        for p in path {
            at = at
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| format!("`{p}` in `{key}` is not a section"))?;
        }
        at.insert(last.to_string(), value);
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|source| PipelineError::Fs { path: cli.config.clone(), source })?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| PipelineError::Invalid(format!("{}: {e}", cli.config.display())))?;

    let mut pairs: Vec<(String, String)> = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| PipelineError::Invalid(format!("override `{o}` is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = cli.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if let Some(d) = &cli.output_dir {
        pairs.push(("paths.output_dir".into(), format!("{:?}", d.display().to_string())));
    }
    let quoted = |s: &str| format!("{s:?}");
    match &cli.command {
        Command::Synth { agents: Some(n) } => pairs.push(("synth.agents".into(), n.to_string())),
        Command::Chains(a) | Command::Pipeline(a) => {
            if let Some(b) = &a.backend {
                pairs.push(("chains.backend".into(), quoted(b)));
            }
            if let Some(e) = &a.endpoint {
                pairs.push(("chains.remote.endpoint".into(), quoted(e)));
            }
            if let Some(m) = &a.model {
                pairs.push(("chains.remote.model".into(), quoted(m)));
            }
            if let Some(c) = a.concurrency {
                pairs.push(("chains.concurrency".into(), c.to_string()));
            }
        }
        _ => {}
    }
    apply_overrides(&mut table, &pairs).map_err(PipelineError::Invalid)?;

    let merged = toml::to_string(&table).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let cfg = PipelineConfig::from_toml(&merged, base).map_err(|e| PipelineError::Invalid(format!("{}: {e}", cli.config.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Fixture(f) = &cli.command {
        let opts = FixtureOptions {
            agents: f.agents,
            gps: GpsOptions { tourists: f.tourists, residents: f.residents, business: f.business, seed: cli.seed.unwrap_or(1) },
            training: f.training,
            seed: cli.seed.unwrap_or(7),
        };
        let path = pipeline::write_fixture(&f.out, &opts)?;
        println!("{}", path.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Extract => {
            let r = pipeline::extract(&cfg)?;
            println!("{} tourists of {} agents", r.cohort.tourists.len(), r.agents_in);
        }
        Command::Synth { agents } => {
            let pop = pipeline::synth(&cfg, *agents)?;
            println!("{} agents", pop.len());
        }
        Command::Scope => {
            let s = pipeline::scope(&cfg)?;
            println!("{} scopes", s.len());
        }
        Command::Route => {
            let r = pipeline::route(&cfg)?;
            println!("{} itineraries", r.itineraries.len());
        }
        Command::Chains(_) => {
            let c = pipeline::chains(&cfg)?;
            println!("{} chains", c.len());
        }
        Command::Eval => print_report(&pipeline::eval(&cfg)?),
        Command::Pipeline(_) => print_report(&pipeline::run_all(&cfg)?),
        Command::Fixture(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn print_report(r: &pipeline::EvalReport) {
    let t = &r.transition;
    let c = &r.consistency;
    println!("annual max |gap|   {:.4}", r.annual.max_abs_gap());
    println!("row-JSD            {:.4}", t.row_jsd);
    match t.flow_spearman {
        Some(s) => println!("flow Spearman      {s:.4}"),
        None => println!("flow Spearman      undefined"),
    }
    println!("distance W1 (km)   {:.4}", t.distance_w1_km);
    println!("top-{} recall      {:.4}", t.topk, t.topk_recall);
    println!("mass coverage      {:.4}", t.mass_coverage);
    println!("day coverage       {:.4}", c.day_coverage);
    println!("ward adherence     {:.4}", c.ward_adherence);
    println!("night alignment    {:.4}", c.night_alignment);
    println!("hallucination      {:.4}", c.hallucination);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
