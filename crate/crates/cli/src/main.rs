use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use starv2x_autodiff::gradcheck;
use starv2x_core::beamformer::{grid_oracle, sca_solve, BeamformingProblem, ScaOptions};
use starv2x_core::channel::{effective_channels, ChannelSet};
use starv2x_core::env::Env;
use starv2x_core::harness::{
    brute_force_oracle, export, greedy_vs_oracle, held_out_draws, run_algorithm1, run_many,
    Manifest, Scheme, Trainer,
};
use starv2x_core::metrics::{check_constraints, link_report, AllocationState};
use starv2x_core::par::Execution;
use starv2x_core::rng::{rng_for, tags, SimRng};
use starv2x_core::scenario::drop_scenario;
use starv2x_core::star_ris::StarRisConfig;
use starv2x_core::{Profile, SimParams};

#[derive(Parser, Debug)]
#[command(
    name = "starv2x",
    version,
    about = "STAR-RIS assisted V2X resource allocation"
)]
struct Cli {
    /// Flat `key = value` config file applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one parameter; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value = "paper")]
    profile: Profile,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output root for run artifacts.
    #[arg(long, global = true, env = "STARV2X_OUT", default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "parallel")]
    exec: Execution,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one scheme over consecutive seeds and export metrics.
    Train(TrainArgs),
    /// Greedy evaluation of a trained agent on held-out channel draws.
    Eval(EvalArgs),
    /// Train several schemes side by side.
    Benchmark(BenchArgs),
    /// Exhaustive one-step optimum on the drop at `--seed`.
    Bruteforce,
    /// Print the effective parameters as a config file.
    Config,
    /// Finite-difference check of every network layer.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    Channel {
        #[command(subcommand)]
        cmd: ChannelCmd,
    },
    Metrics {
        #[command(subcommand)]
        cmd: MetricsCmd,
    },
    Beamform {
        #[command(subcommand)]
        cmd: BeamformCmd,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "STAR_PROPOSED")]
    scheme: Scheme,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, default_value = "STAR_PROPOSED")]
    scheme: Scheme,
    /// Checkpoint stem written by `train`, e.g. `star_proposed_seed0_ep300`.
    /// Without it the agent is trained first.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    draws: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = Scheme::ALL.to_vec())]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum ScenarioCmd {
    /// Print the drop at `--seed` as JSON.
    Dump,
}

#[derive(Subcommand, Debug)]
enum ChannelCmd {
    /// Print one channel draw for the drop at `--seed` as JSON.
    Probe,
}

#[derive(Subcommand, Debug)]
enum MetricsCmd {
    /// Read `{channels, allocation, surface}` JSON, print the link report.
    Eval {
        /// Input file; stdin when omitted.
        input: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum BeamformCmd {
    /// Read a beamforming problem JSON, print the solution with its trace.
    Solve {
        input: Option<PathBuf>,
        /// Also run the grid oracle (one VUE, one antenna only).
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 400)]
        radii: usize,
        #[arg(long, default_value_t = 720)]
        phases: usize,
    },
}

#[derive(Deserialize)]
struct MetricsInput {
    channels: ChannelSet,
    allocation: AllocationState,
    surface: StarRisConfig,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let params = load_params(&cli)?;
    match &cli.cmd {
        Command::Train(a) => train(&cli, params, a),
        Command::Eval(a) => eval(&cli, params, a),
        Command::Benchmark(a) => benchmark(&cli, params, a),
        Command::Bruteforce => bruteforce(&cli, params),
        Command::Config => {
            print!("{}", params.to_config_text());
            Ok(())
        }
        Command::Gradcheck { seeds, tol } => run_gradcheck(cli.seed, *seeds, *tol),
        Command::Scenario {
            cmd: ScenarioCmd::Dump,
        } => print_json(&drop_scenario(&params, cli.seed)?),
        Command::Channel {
            cmd: ChannelCmd::Probe,
        } => {
            let scn = drop_scenario(&params, cli.seed)?;
            let mut rng = rng_for(cli.seed, tags::CHANNEL);
            print_json(&ChannelSet::draw(&scn, &params, &mut rng)?)
        }
        Command::Metrics {
            cmd: MetricsCmd::Eval { input },
        } => {
            let m: MetricsInput = serde_json::from_str(&read_input(input.as_deref())?)?;
            let h_eff = effective_channels(&m.channels, &m.surface);
            let mut report = link_report(&m.channels, &h_eff, &m.allocation, &params)?;
            check_constraints(&mut report, &params)?;
            print_json(&report)
        }
        Command::Beamform {
            cmd:
                BeamformCmd::Solve {
                    input,
                    oracle,
                    radii,
                    phases,
                },
        } => {
            let prob: BeamformingProblem = serde_json::from_str(&read_input(input.as_deref())?)?;
            let sol = sca_solve(&prob, None, &ScaOptions::from_params(&params))?;
            let grid = if *oracle {
                Some(grid_oracle(&prob, *radii, *phases)?)
            } else {
                None
            };
            print_json(&json!({ "solution": sol, "objective": sol.objective(), "oracle": grid }))
        }
    }
}

fn load_params(cli: &Cli) -> Result<SimParams> {
    let mut p = cli.profile.params();
    if let Some(path) = &cli.config {
        p.apply_config_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
    }
    for kv in &cli.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        p.set(k.trim(), v.trim())?;
    }
    p.validate()?;
    Ok(p)
}

fn manifest(
    scheme: Scheme,
    params: &SimParams,
    seed: u64,
    seeds: u64,
    episodes: Option<usize>,
) -> Manifest {
    let mut m = Manifest::new(
        scheme,
        params.clone(),
        (seed..seed + seeds.max(1)).collect(),
    );
    if let Some(e) = episodes {
        m.episodes = e;
    }
    m
}

fn run_dir(root: &Path, label: &str, hash: &str) -> Result<PathBuf> {
    let dir = root.join(format!("{label}_{}", &hash[..12]));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn train(cli: &Cli, params: SimParams, a: &TrainArgs) -> Result<()> {
    let mut m = manifest(a.scheme, &params, cli.seed, a.seeds, a.episodes);
    m.checkpoint_every = a.checkpoint_every;
    let dir = run_dir(&cli.out, &a.scheme.name().to_ascii_lowercase(), &m.hash())?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    let ckpt = (a.checkpoint_every > 0).then(|| dir.join("checkpoints"));
    if let Some(c) = &ckpt {
        fs::create_dir_all(c)?;
    }
    let runs = run_algorithm1(&m, cli.exec, ckpt)?;
    let summary = export::export_all(&dir, &runs, m.cdf_window.min(m.episodes))?;
    eprintln!("wrote {}", dir.display());
    print_json(&summary)
}

fn eval(cli: &Cli, params: SimParams, a: &EvalArgs) -> Result<()> {
    let mut t = Trainer::new(a.scheme, &params, cli.seed)?;
    match (&a.checkpoint, &a.checkpoint_dir) {
        (Some(stem), Some(dir)) => t.load_checkpoint(dir, stem)?,
        (Some(_), None) => bail!("--checkpoint needs --checkpoint-dir"),
        _ => {
            let total = params.episodes;
            for ep in 0..total {
                t.run_episode(ep, total, None)?;
            }
        }
    }
    let draws = held_out_draws(cli.seed, a.draws);
    let rows = greedy_vs_oracle(&mut t, &draws, cli.exec)?;
    let ratio: Vec<f64> = rows.iter().map(|r| ratio(r.agent, r.oracle)).collect();
    let mean = ratio.iter().sum::<f64>() / ratio.len().max(1) as f64;
    print_json(&json!({ "scheme": a.scheme, "draws": rows, "mean_ratio": mean }))
}

/// Agent value as a fraction of the optimum, 1 when both are zero.
fn ratio(agent: f64, oracle: f64) -> f64 {
    if oracle.abs() < 1e-12 {
        if agent.abs() < 1e-12 {
            1.0
        } else {
            f64::NAN
        }
    } else {
        agent / oracle
    }
}

fn benchmark(cli: &Cli, params: SimParams, a: &BenchArgs) -> Result<()> {
    let ms: Vec<Manifest> = a
        .schemes
        .iter()
        .map(|&s| manifest(s, &params, cli.seed, a.seeds, a.episodes))
        .collect();
    #[derive(Serialize)]
    struct Key<'a> {
        manifests: Vec<&'a str>,
    }
    let hashes: Vec<String> = ms.iter().map(Manifest::hash).collect();
    let joint = serde_json::to_string(&Key {
        manifests: hashes.iter().map(String::as_str).collect(),
    })?;
    let dir = run_dir(
        &cli.out,
        "benchmark",
        &format!("{:016x}", fnv(joint.as_bytes())),
    )?;
    fs::write(
        dir.join("manifests.json"),
        serde_json::to_string_pretty(&ms)?,
    )?;
    let runs: Vec<_> = run_many(&ms, cli.exec)?.into_iter().flatten().collect();
    let window = ms[0].cdf_window.min(ms[0].episodes);
    let summary = export::export_all(&dir, &runs, window)?;
    eprintln!("wrote {}", dir.display());
    print_json(&summary)
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn bruteforce(cli: &Cli, params: SimParams) -> Result<()> {
    let scn = drop_scenario(&params, cli.seed)?;
    let mut env = Env::new(params, scn, Scheme::StarProposed.mode())?;
    env.reset(cli.seed)?;
    let r = brute_force_oracle(&env, cli.exec)?;
    let action = env.catalog().decode(&r.action)?;
    print_json(&json!({
        "value": r.value,
        "action_index": r.action,
        "action": action,
        "optima": r.optima.len(),
        "distinct_controls": r.distinct,
    }))
}

fn run_gradcheck(seed: u64, seeds: u64, tol: f64) -> Result<()> {
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for s in seed..seed + seeds.max(1) {
        let mut rng = SimRng::seed_from_u64(s);
        for r in gradcheck::layer_suite(&mut rng)? {
            worst = worst.max(r.max_rel_err);
            rows.push(json!({ "seed": s, "report": r }));
        }
    }
    print_json(&json!({ "max_rel_err": worst, "tol": tol, "layers": rows }))?;
    if worst > tol {
        bail!("gradient check failed: {worst:.3e} > {tol:.1e}");
    }
    Ok(())
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, v)
        .map_err(io::Error::from)
        .and_then(|()| writeln!(out));
    match written {
        // a closed reader (e.g. `| head`) is not a failure
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
