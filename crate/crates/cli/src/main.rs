use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use drcc::scenario::{parse_tracks, PedestrianTrack, ScenarioConfig};
use drcc::sim::{aggregate, run_batch, Aggregate, EpisodeJob, EpisodeOptions, EpisodeOutcome, MeanStd};
use drcc::verify::{self, VerifyOptions};
use drcc::Execution;
use serde_json::json;

#[derive(Parser)]
#[command(name = "drcc", version, about = "Chance-constrained crowd navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run closed-loop episodes and write logs, metrics and aggregates.
    Run(RunArgs),
    /// Run the Monte Carlo checks of the risk bound and the safe-set geometry.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario TOML file. Keys may be overridden with DRCC_<KEY> variables.
    #[arg(long)]
    scenario: PathBuf,
    /// Pedestrian track file (`frame ped_id x y` rows). Omit for an empty scene.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Base seed; episode i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Collision probability. Repeat for a sweep.
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,
    /// Episodes per epsilon.
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Reuse an existing output directory.
    #[arg(long)]
    force: bool,
    /// Include moment fields in the episode logs.
    #[arg(long)]
    verbose: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 10_000)]
    geometries: usize,
    #[arg(long, hide = true, default_value_t = 1.0)]
    inject_sigma_scale: f64,
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("cannot read scenario {}", args.scenario.display()))?;
    let mut config = ScenarioConfig::from_toml_str_with_overrides(&text, std::env::vars())
        .with_context(|| format!("invalid scenario {}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_tracks(path: Option<&Path>, frame_rate: f64) -> Result<Vec<PedestrianTrack>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read tracks {}", path.display()))?;
    parse_tracks(&text, frame_rate).with_context(|| format!("invalid tracks {}", path.display()))
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !force {
            bail!("output directory {} already exists (pass --force to reuse it)", out.display());
        }
        let episodes = out.join("episodes");
        if episodes.exists() {
            fs::remove_dir_all(&episodes)
                .with_context(|| format!("cannot clear {}", episodes.display()))?;
        }
    }
    fs::create_dir_all(out.join("episodes"))
        .with_context(|| format!("cannot create {}", out.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

fn mean_std(v: Option<MeanStd>) -> [String; 2] {
    [opt(v.map(|m| m.mean)), opt(v.map(|m| m.std))]
}

fn metrics_tsv(outcomes: &[EpisodeOutcome]) -> String {
    let mut out = String::from(
        "id\tepsilon\tseed\tstatus\tcollision_norm\tcollision_steps\tcollision_events\tmin_distance\tsuccess\treached_goal\tpositional_cost\tepisode_length\tsteps\tinitial_collision\terror\n",
    );
    for o in outcomes {
        let _ = write!(out, "{}\t{}\t{}\t", o.id, o.epsilon, o.seed);
        match &o.result {
            Ok(ep) => {
                let m = &ep.metrics;
                let min_d = if m.min_distance.is_finite() { format!("{}", m.min_distance) } else { "NA".into() };
                let _ = writeln!(
                    out,
                    "ok\t{}\t{}\t{}\t{min_d}\t{}\t{}\t{}\t{}\t{}\t{}\t",
                    m.collision_norm,
                    m.collision_steps,
                    m.collision_events,
                    m.success,
                    m.reached_goal,
                    m.positional_cost,
                    m.episode_length,
                    m.steps,
                    m.initial_collision
                );
            }
            Err(e) => {
                let _ = writeln!(out, "error\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\t{}", e.replace(['\t', '\n'], " "));
            }
        }
    }
    out
}

fn aggregate_tsv(rows: &[(f64, Aggregate)]) -> String {
    let mut out = String::from(
        "epsilon\tepisodes\tincluded\texcluded_initial_collision\tfailed\tcollision_norm_mean\tcollision_norm_std\tmin_distance_mean\tmin_distance_std\tsuccess_rate\tpositional_cost_mean\tpositional_cost_std\tepisode_length_mean\tepisode_length_std\n",
    );
    for (eps, a) in rows {
        let fields: Vec<String> = [
            vec![eps.to_string(), a.episodes.to_string(), a.included.to_string()],
            vec![a.excluded_initial_collision.to_string(), a.failed.to_string()],
            mean_std(a.collision_norm).to_vec(),
            mean_std(a.min_distance).to_vec(),
            vec![opt(a.success_rate)],
            mean_std(a.positional_cost).to_vec(),
            mean_std(a.episode_length).to_vec(),
        ]
        .concat();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

fn timing_tsv(outcomes: &[EpisodeOutcome]) -> String {
    let mut out = String::from("id\tmean_step_wall_time_ms\n");
    for o in outcomes {
        let t = o.result.as_ref().map(|e| e.metrics.mean_step_wall_time_ms).ok();
        let _ = writeln!(out, "{}\t{}", o.id, opt(t));
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let base = load_config(&args)?;
    let tracks = load_tracks(args.tracks.as_deref(), base.frame_rate)?;
    let epsilons = if args.epsilons.is_empty() { vec![base.epsilon] } else { args.epsilons.clone() };
    let mut jobs = Vec::new();
    for &epsilon in &epsilons {
        for i in 0..args.episodes {
            let config = ScenarioConfig { epsilon, seed: base.seed.wrapping_add(i as u64), ..base.clone() };
            config.validate().context("invalid --epsilon")?;
            jobs.push(EpisodeJob { id: format!("eps{epsilon}_ep{i:03}"), config, tracks: &tracks });
        }
    }
    prepare_out(&args.out, args.force)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().context("cannot start worker pool")?;
    let options = EpisodeOptions { verbose: args.verbose };
    log::info!("running {} episodes", jobs.len());
    let outcomes = pool.install(|| run_batch(&jobs, Execution::Parallel, options));

    for o in &outcomes {
        match &o.result {
            Ok(ep) => write(args.out.join("episodes").join(format!("{}.jsonl", o.id)), &ep.log_jsonl())?,
            Err(e) => log::error!("episode {} failed: {e}", o.id),
        }
    }
    let rows: Vec<(f64, Aggregate)> = epsilons
        .iter()
        .map(|&eps| {
            let group: Vec<EpisodeOutcome> =
                outcomes.iter().filter(|o| o.epsilon == eps).cloned().collect();
            (eps, aggregate(&group))
        })
        .collect();
    write(args.out.join("metrics.tsv"), &metrics_tsv(&outcomes))?;
    write(args.out.join("aggregate.tsv"), &aggregate_tsv(&rows))?;
    write(args.out.join("timing.tsv"), &timing_tsv(&outcomes))?;
    let episodes: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(ep) => json!({"id": o.id, "epsilon": o.epsilon, "seed": o.seed, "metrics": ep.metrics}),
            Err(e) => json!({"id": o.id, "epsilon": o.epsilon, "seed": o.seed, "error": e}),
        })
        .collect();
    let aggregates: Vec<serde_json::Value> =
        rows.iter().map(|(eps, a)| json!({"epsilon": eps, "summary": a})).collect();
    let doc = json!({"episodes": episodes, "aggregate": aggregates});
    write(args.out.join("metrics.json"), &serde_json::to_string_pretty(&doc)?)?;

    print!("{}", aggregate_tsv(&rows));
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} episodes failed", outcomes.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let report = verify::run(&VerifyOptions {
        seed: args.seed,
        cases: args.cases,
        samples: args.samples,
        geometries: args.geometries,
        sigma_scale: args.inject_sigma_scale,
        execution: Execution::Parallel,
    });
    print!("{}", report.transcript());
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args).unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }),
        Command::Verify(args) => cmd_verify(args),
    }
}
