use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dunkl_sparse::dyadic::verify_dyadic_properties;
use dunkl_sparse::harness::{emit, run, Fixture, Format, RunConfig, RunReport};

/// Sparse domination experiments for Dunkl-Calderon-Zygmund operators.
#[derive(Parser, Debug)]
#[command(name = "dunkl-sparse", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated experiment names (used by `run`).
    #[arg(long, global = true, value_delimiter = ',')]
    exp: Option<Vec<String>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Directory for report.json and trials.csv.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiments listed by --exp or the config.
    Run,
    /// Build or verify the dyadic cube systems.
    Dyadic {
        #[command(subcommand)]
        action: DyadicAction,
    },
    /// Weight experiments: A_p, reverse Holder, BMO, extrapolation.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
    /// Sparse domination of the operator and its commutators.
    Sparse {
        #[command(subcommand)]
        action: SparseAction,
    },
    /// Weighted, two-weight, lower-bound and transfer checks.
    Bounds {
        #[command(subcommand)]
        action: BoundsAction,
    },
    /// Size and smoothness of the kernel.
    Kernel {
        #[command(subcommand)]
        action: KernelAction,
    },
}

#[derive(Subcommand, Debug)]
enum DyadicAction {
    /// Build (or load from the cache) the dyadic bundle and write it out.
    Build,
    /// Check the cube properties without writing files.
    Verify,
}

#[derive(Subcommand, Debug)]
enum WeightsAction {
    Ap,
    Rh,
    Bmo,
    Rdf,
}

#[derive(Subcommand, Debug)]
enum SparseAction {
    Dominate,
    Commutator,
}

#[derive(Subcommand, Debug)]
enum BoundsAction {
    Weighted,
    TwoWeight,
    Lower,
    RdfTransfer,
}

#[derive(Subcommand, Debug)]
enum KernelAction {
    Check,
}

fn load_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(e) = &o.exp {
        cfg.experiments = e.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = o.resolution {
        cfg.resolution = r;
    }
    if let Some(d) = &o.out {
        cfg.output_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single(command: &Command) -> Option<&'static str> {
    Some(match command {
        Command::Run | Command::Dyadic { action: DyadicAction::Build } => return None,
        Command::Dyadic { action: DyadicAction::Verify } => "dyadic",
        Command::Weights { action } => match action {
            WeightsAction::Ap => "ap",
            WeightsAction::Rh => "rh",
            WeightsAction::Bmo => "bmo",
            WeightsAction::Rdf => "rdf",
        },
        Command::Sparse { action } => match action {
            SparseAction::Dominate => "sparse",
            SparseAction::Commutator => "commutator",
        },
        Command::Bounds { action } => match action {
            BoundsAction::Weighted => "weighted",
            BoundsAction::TwoWeight => "two_weight",
            BoundsAction::Lower => "lower",
            BoundsAction::RdfTransfer => "rdf_transfer",
        },
        Command::Kernel { action: KernelAction::Check } => "kernel",
    })
}

fn report(cfg: &RunConfig, rep: &RunReport) -> Result<()> {
    for b in &rep.blocks {
        let status = if b.pass { "pass" } else { "FAIL" };
        match &b.error {
            Some(e) => eprintln!("{status} {} ({e})", b.name),
            None => eprintln!("{status} {}", b.name),
        }
    }
    match &cfg.output_dir {
        Some(dir) => {
            for format in [Format::Json, Format::Csv] {
                let path = emit(rep, dir, format)?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => println!("{}", rep.to_json()?),
    }
    Ok(())
}

fn dyadic_build(cfg: &RunConfig) -> Result<bool> {
    let fx = Fixture::build(cfg, cfg.resolution)?;
    let mut pass = true;
    for (t, s) in fx.bundle.systems.iter().enumerate() {
        let rep = verify_dyadic_properties(s, &fx.grid);
        pass &= rep.all_pass();
        eprintln!(
            "system {t}: levels {:?}, inner constant {:.4}, properties {}",
            rep.cubes_per_level,
            rep.inner_constant,
            if rep.all_pass() { "pass" } else { "FAIL" }
        );
    }
    eprintln!("cache {}", if fx.cache_hit { "hit" } else { "miss" });
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("dyadic.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&fx.bundle.systems)?)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> Result<bool> {
        let mut cfg = load_config(&cli.overrides)?;
        if let Command::Dyadic { action: DyadicAction::Build } = cli.command {
            return dyadic_build(&cfg);
        }
        if let Some(name) = single(&cli.command) {
            cfg.experiments = vec![name.to_string()];
        }
        let rep = run(&cfg)?;
        report(&cfg, &rep)?;
        Ok(rep.pass)
    })();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
