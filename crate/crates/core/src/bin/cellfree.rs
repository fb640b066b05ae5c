//! Command-line front end.
//!
//! Any configuration key can be overridden as `--key=value` (dashes or
//! underscores), e.g. `--fronthaul_bw_hz=480e6` or `--num-aps=50`.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use cellfree::beamforming::{beam_gain_map, multicast_beam_heuristic, square_grid, write_gain_map_csv, PhaseCodebook};
use cellfree::channel::{access_large_scale, build_fronthaul_channels};
use cellfree::grouping::top_g_groups;
use cellfree::pipeline::{run_realization, sweep_and_emit, Mode, SweepAxes, Tdma};
use cellfree::scenario::{generate_placement, normalize_powers, realization_seed, SystemConfig};
use cellfree::{Error, Result};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO with wireless fronthaul")]
struct Cli {
    /// TOML file with configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one realization and print it as JSON.
    Run(RunArgs),
    /// Monte Carlo sweep; writes rates.csv and summary.json.
    Sweep(SweepArgs),
    /// Beam gain over the deployment area for one user's fronthaul group.
    Beammap(BeammapArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "separate")]
    mode: Mode,
    #[arg(long, default_value = "approach2")]
    tdma: Tdma,
    /// Realization index whose derived seed is used.
    #[arg(long, default_value_t = 0)]
    realization: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "separate,fiber")]
    mode: Vec<Mode>,
    #[arg(long, default_value = "approach2")]
    tdma: Tdma,
    /// Fixed group sizes `a:b` (inclusive); omitted means per-realization search.
    #[arg(long, value_parser = parse_range)]
    sweep_g: Option<(usize, usize)>,
    /// Comma-separated fronthaul bandwidths in Hz.
    #[arg(long, value_delimiter = ',')]
    sweep_bw: Vec<f64>,
    /// Comma-separated AP counts.
    #[arg(long, value_delimiter = ',')]
    sweep_m: Vec<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BeammapArgs {
    #[arg(long, default_value_t = 0)]
    realization: usize,
    /// APs in the multicast group.
    #[arg(long, default_value_t = 12)]
    group_size: usize,
    #[arg(long, default_value_t = 0)]
    user: usize,
    /// Grid points per side.
    #[arg(long, default_value_t = 101)]
    resolution: usize,
    #[arg(long, default_value = "beammap.csv")]
    out: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a == 0 || a > b {
        return Err(format!("invalid range {a}:{b}"));
    }
    Ok((a, b))
}

/// Splits `--key=value` overrides of configuration keys from the other arguments.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let keys = SystemConfig::keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        if let Some((key, value)) = arg.strip_prefix("--").and_then(|a| a.split_once('=')) {
            let key = key.replace('-', "_");
            if keys.contains(&key) {
                overrides.push((key, value.to_string()));
                continue;
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SystemConfig::from_file(path)?,
        None => SystemConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&cli, &overrides)?;
    match cli.command {
        Command::Run(args) => {
            let seed = realization_seed(cfg.master_seed, args.realization);
            let result = run_realization(&cfg, seed, args.mode, args.tdma)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &result)?;
            writeln!(lock).map_err(|e| Error::io("stdout", e))?;
        }
        Command::Sweep(args) => {
            if let Some(r) = args.realizations {
                cfg.realizations = r;
            }
            let axes = SweepAxes {
                modes: args.mode,
                tdma: args.tdma,
                group_sizes: args.sweep_g.map_or_else(Vec::new, |(a, b)| (a..=b).collect()),
                fronthaul_bws_hz: args.sweep_bw,
                num_aps: args.sweep_m,
            };
            let (summary, csv, json) = sweep_and_emit(&cfg, &axes, &args.out)?;
            eprintln!(
                "{} points written to {} and {}",
                summary.points.len(),
                csv.display(),
                json.display()
            );
        }
        Command::Beammap(args) => {
            let seed = realization_seed(cfg.master_seed, args.realization);
            let placement = generate_placement(&cfg, seed);
            let channels = build_fronthaul_channels(&placement, &cfg)?;
            let beta = access_large_scale(&placement, &cfg)?;
            let grouping = top_g_groups(&beta, args.group_size)?;
            let group = grouping
                .groups()
                .get(args.user)
                .ok_or_else(|| Error::Config(format!("user {} out of range", args.user)))?;
            let codebook = PhaseCodebook::new(cfg.cpu_antennas, cfg.phase_bits)?;
            let sol = multicast_beam_heuristic(group, &channels, &codebook, normalize_powers(&cfg).rho_fh)?;
            let grid = square_grid(cfg.area_side_m, args.resolution);
            let gains = beam_gain_map(&sol.beam, &grid, &placement.cpu_position, cfg.cpu_antennas);
            let file = std::fs::File::create(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
            write_gain_map_csv(std::io::BufWriter::new(file), &grid, &gains)?;
            eprintln!("group {:?}, group rate {:.4} bit/s/Hz", group, sol.group_rate);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
