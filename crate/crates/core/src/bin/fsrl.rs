use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsrl::checkpoint::{load_checkpoint, save_checkpoint};
use fsrl::config::TrainConfig;
use fsrl::reward::RewardVariant;
use fsrl::scripted::{RandomPolicy, ScriptedPusher};
use fsrl::train::{emit_csv, evaluate, parallel_map, train_with, ActorPolicy, EvalRow, RunLog};
use fsrl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fsrl",
    version,
    about = "Force-sensing safe DDPG+HER for planar pushing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its log, config and checkpoint to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a reference policy) on seeded episodes.
    Eval(EvalArgs),
    /// Train every reward variant over several seeds and summarize.
    Compare(CompareArgs),
}

/// Options shared by every subcommand. Each maps onto a config-file key of
/// the same name; flags win over the file.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "r1|r2|r3|r4")]
    reward_config: Option<String>,
    #[arg(long, value_name = "on|off")]
    safety: Option<String>,
    #[arg(long, value_name = "K")]
    her_k: Option<String>,
    #[arg(long, value_name = "final|future")]
    her_strategy: Option<String>,
    #[arg(long, value_name = "STD")]
    pose_noise: Option<String>,
    /// Any other configuration key, e.g. `--set gamma=0.95`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, required_unless_present = "policy")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a reference policy instead of a checkpoint.
    #[arg(long, value_name = "scripted|random", conflicts_with = "checkpoint")]
    policy: Option<String>,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<String>,
}

fn build_config(common: &Overrides, extra: &[(&str, Option<String>)]) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &common.config {
        config.apply_text(&fs::read_to_string(path)?)?;
    }
    let flags = [
        ("reward-config", &common.reward_config),
        ("safety", &common.safety),
        ("her-k", &common.her_k),
        ("her-strategy", &common.her_strategy),
        ("pose-noise", &common.pose_noise),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    for (key, value) in extra {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn run_training(config: &TrainConfig, quiet: bool) -> Result<RunLog> {
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), config.to_text())?;
    let csv = out.join("log.csv");
    let label = format!("{} seed {}", config.reward.variant, config.seed);
    let (log, agent) = train_with(config, |log| {
        if let (false, Some(row)) = (quiet, log.last()) {
            print_row(&label, row);
        }
        emit_csv(log, &csv)
    })?;
    save_checkpoint(&out.join("checkpoint.fsrl"), &agent, config.hash()).map_err(Error::from)?;
    Ok(log)
}

fn print_row(label: &str, row: &EvalRow) {
    eprintln!(
        "[{label}] episode {:>4}  success {:.2}  reward {:>8.2}  collisions {:>2}  max force {:>6.1} N",
        row.episode, row.success_rate, row.mean_reward, row.collisions, row.mean_max_force
    );
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = build_config(
        &args.common,
        &[
            ("episodes", args.episodes),
            ("seed", args.seed),
            ("out", args.out.map(|p| p.display().to_string())),
        ],
    )?;
    let log = run_training(&config, false)?;
    if let Some(row) = log.last() {
        println!(
            "final success rate {} with {} collisions; outputs in {}",
            row.success_rate,
            row.collisions,
            config.output_dir.display()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut config = build_config(&args.common, &[])?;
    let trained_hash = config.hash();
    config.eval_episodes = args.episodes;
    config.validate()?;
    let result = match (&args.checkpoint, args.policy.as_deref()) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config_hash != trained_hash {
                eprintln!("warning: checkpoint was trained under a different configuration (pass --config to match)");
            }
            let agent = ckpt.into_agent(config.agent.clone());
            evaluate(&mut ActorPolicy(&agent.actor), &config, args.seed)?
        }
        (None, Some("scripted")) => {
            evaluate(&mut ScriptedPusher::new(&config.sim), &config, args.seed)?
        }
        (None, Some("random")) => evaluate(&mut RandomPolicy::new(args.seed), &config, args.seed)?,
        (None, other) => {
            return Err(Error::Config(format!("unknown reference policy {other:?}")));
        }
    };
    println!(
        "success_rate={} collisions={} mean_reward={} mean_max_force={}",
        result.success_rate, result.collision_count, result.mean_reward, result.mean_max_force
    );
    Ok(())
}

/// Row-wise mean of logs that share an evaluation schedule.
fn mean_log(logs: &[RunLog]) -> RunLog {
    let n = logs.len() as f64;
    let rows = logs[0]
        .rows
        .iter()
        .enumerate()
        .map(|(i, first)| {
            let mean =
                |f: &dyn Fn(&EvalRow) -> f64| logs.iter().map(|l| f(&l.rows[i])).sum::<f64>() / n;
            EvalRow {
                episode: first.episode,
                success_rate: mean(&|r| r.success_rate),
                mean_reward: mean(&|r| r.mean_reward),
                // Collisions are summed so the column stays integral.
                collisions: logs.iter().map(|l| l.rows[i].collisions).sum(),
                mean_max_force: mean(&|r| r.mean_max_force),
                wall_time: mean(&|r| r.wall_time),
            }
        })
        .collect();
    RunLog { rows }
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let base = build_config(&args.common, &[("episodes", args.episodes)])?;
    if args.seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    // The four reward variants under the configured safety setting, plus the
    // plain sparse reward with every safety mechanism off.
    let mut arms: Vec<(String, TrainConfig)> = RewardVariant::ALL
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.reward.variant = v;
            (v.to_string(), c)
        })
        .collect();
    let mut unsafe_baseline = base.clone();
    unsafe_baseline.reward.variant = RewardVariant::R4;
    unsafe_baseline.safety.set_all(false);
    arms.push(("r4-unsafe".into(), unsafe_baseline));

    let out = &args.out;
    let jobs: Vec<(usize, u64, TrainConfig)> = arms
        .iter()
        .enumerate()
        .flat_map(|(a, (label, c))| {
            let seeds = &args.seeds;
            seeds.iter().map(move |&s| {
                let mut c = c.clone();
                c.seed = s;
                c.output_dir = out.join(label).join(format!("seed-{s}"));
                (a, s, c)
            })
        })
        .collect();
    let results = parallel_map(jobs, |(a, s, c)| {
        eprintln!("training {} seed {s}", arms[a].0);
        run_training(&c, true).map(|log| (a, log))
    });

    let mut per_arm: Vec<Vec<RunLog>> = vec![Vec::new(); arms.len()];
    for r in results {
        let (a, log) = r?;
        per_arm[a].push(log);
    }

    let mut summary = String::from(
        "arm,variant,safety,seeds,final_success_rate,collisions_per_eval,final_mean_max_force\n",
    );
    for ((label, c), logs) in arms.iter().zip(&per_arm) {
        let mean = mean_log(logs);
        emit_csv(&mean, &args.out.join(format!("{label}.csv")))?;
        let last = mean.last().cloned().unwrap_or(EvalRow {
            episode: 0,
            success_rate: 0.0,
            mean_reward: 0.0,
            collisions: 0,
            mean_max_force: 0.0,
            wall_time: 0.0,
        });
        summary.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            c.reward.variant,
            c.get("safety").unwrap_or_default(),
            logs.len(),
            last.success_rate,
            last.collisions as f64 / logs.len() as f64,
            last.mean_max_force
        ));
    }
    write_and_echo(&args.out.join("summary.csv"), &summary)
}

fn write_and_echo(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
