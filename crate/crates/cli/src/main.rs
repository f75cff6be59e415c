use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voterlab_cli::config::QinfMode;
use voterlab_cli::{execute, CliError, Command, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "voterlab", version, about = "Noisy voter model and arrow percolation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward dynamics from an initial row; CSV of every site, optional image
    Simulate(Flags),
    /// Survival probability of the genealogy cluster
    Theta(Flags),
    /// Critical noise of the finite-depth survival surrogate
    Critical(Flags),
    /// Box crossing events, normal bound and renormalization certificate
    Box(Flags),
    /// Enhanced survival, Russo check, pivotal inequality, gamma
    Enhance(Flags),
    /// Coupled discrepancy processes, transition tables, ergodicity threshold
    Couple(Flags),
    /// Decay of G, permutation test, infinite-color coupling
    Qinf(Flags),
}

#[derive(Args)]
struct Flags {
    /// key=value file with defaults; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of colors, or `inf`
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// periodic or free
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// constant:C, iid, blocks:N or explicit:A;B;...
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    init_b: Option<String>,
    /// Comma-separated epsilon values
    #[arg(long)]
    eps_grid: Option<String>,
    /// Comma-separated s values
    #[arg(long)]
    s_grid: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    exact: bool,
    /// Independent activation bits with probability s
    #[arg(long)]
    independent: bool,
    #[arg(long)]
    bisect: bool,
    #[arg(long)]
    positive_search: bool,
    #[arg(long, value_enum)]
    mode: Option<QinfMode>,
    #[arg(long)]
    radius: Option<i64>,
}

fn build(command: Command, f: &Flags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &f.config {
        Some(p) => {
            let cfg = ExperimentConfig::parse(&std::fs::read_to_string(p)?)?;
            if cfg.command != command {
                return Err(CliError::Usage(format!("config is for {}, not {command}", cfg.command)));
            }
            cfg
        }
        None => ExperimentConfig::defaults(command),
    };
    let text: [(&str, Option<String>); 19] = [
        ("delta", f.delta.map(|x| x.to_string())),
        ("epsilon", f.epsilon.map(|x| x.to_string())),
        ("q", f.q.clone()),
        ("width", f.width.map(|x| x.to_string())),
        ("height", f.height.map(|x| x.to_string())),
        ("boundary", f.boundary.clone()),
        ("seed", f.seed.map(|x| x.to_string())),
        ("replicas", f.replicas.map(|x| x.to_string())),
        ("depth", f.depth.map(|x| x.to_string())),
        ("s", f.s.map(|x| x.to_string())),
        ("k", f.k.map(|x| x.to_string())),
        ("h", f.h.map(|x| x.to_string())),
        ("threshold", f.threshold.map(|x| x.to_string())),
        ("init", f.init.clone()),
        ("init_b", f.init_b.clone()),
        ("eps_grid", f.eps_grid.clone()),
        ("s_grid", f.s_grid.clone()),
        ("radius", f.radius.map(|x| x.to_string())),
        ("qinf_mode", f.mode.map(|m| m.to_string())),
    ];
    for (key, value) in text {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    if let Some(fmt) = f.format {
        cfg.format = fmt;
    }
    if f.out.is_some() {
        cfg.out = f.out.clone();
    }
    if f.image.is_some() {
        cfg.image = f.image.clone();
    }
    cfg.exact |= f.exact;
    cfg.standard_coupling &= !f.independent;
    cfg.bisect |= f.bisect;
    cfg.positive_search |= f.positive_search;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.cmd {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Theta(f) => (Command::Theta, f),
        Cmd::Critical(f) => (Command::Critical, f),
        Cmd::Box(f) => (Command::Box, f),
        Cmd::Enhance(f) => (Command::Enhance, f),
        Cmd::Couple(f) => (Command::Couple, f),
        Cmd::Qinf(f) => (Command::Qinf, f),
    };
    if let Some(n) = flags.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("voterlab: {e}");
            return ExitCode::from(2);
        }
    }
    let result = build(command, flags).and_then(|cfg| execute(&cfg, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voterlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
