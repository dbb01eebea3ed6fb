use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vischeck::history::load_corpus;
use vischeck::measure::{
    instances, measure_corpus, pruning_ratio_report, MeasureOptions, RoundProtocol,
};
use vischeck::parallel::{check_parallel, ParallelOptions, DEFAULT_SELF_CHECK_INTERVAL};
use vischeck::pruning::{PruneOptions, Pruner};
use vischeck::search::{Outcome, SearchOptions, VisMode, DEFAULT_BUDGET};
use vischeck::sim::{simulate_random, DeliveryMode, Resolution, SimConfig, WorkloadConfig};
use vischeck::{DataType, Instance, Level};

#[derive(Parser)]
#[command(
    name = "vischeck",
    version,
    about = "Measure the visibility consistency level of replicated data type histories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check one history against one level.
    Check(CheckArgs),
    /// Simulate histories with ground-truth visibility.
    Gen(GenArgs),
    /// Measure a corpus across all levels.
    Measure(MeasureArgs),
    /// Report pruning ratios for a corpus at one level.
    PruneRatio(PruneRatioArgs),
}

#[derive(Args)]
struct SearchFlags {
    /// Disable semantic pruning.
    #[arg(long)]
    no_prune: bool,
    /// Explored-state cap per check.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Search threads per check [default: available parallelism].
    #[arg(long)]
    workers: Option<usize>,
    /// States a worker explores between check-ins.
    #[arg(long, default_value_t = DEFAULT_SELF_CHECK_INTERVAL)]
    self_check_interval: u64,
    /// Enumerate every visibility subset instead of the reduced set.
    #[arg(long)]
    exhaustive_vis: bool,
    /// Expand states even when an equivalent one was already expanded.
    #[arg(long)]
    no_dedup: bool,
}

impl SearchFlags {
    fn search(&self) -> SearchOptions {
        SearchOptions {
            budget: self.budget,
            vis_mode: if self.exhaustive_vis {
                VisMode::Exhaustive
            } else {
                VisMode::Minimal
            },
            dedup: !self.no_dedup,
        }
    }

    fn parallel(&self) -> ParallelOptions {
        ParallelOptions {
            workers: self
                .workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1),
            self_check_interval: self.self_check_interval,
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long = "type", value_enum)]
    data_type: DataType,
    #[arg(long)]
    level: Level,
    #[command(flatten)]
    flags: SearchFlags,
    /// Print search statistics.
    #[arg(long)]
    stats: bool,
    /// Write extracted predicates as JSON.
    #[arg(long)]
    dump_predicates: Option<PathBuf>,
    /// History file (JSON lines).
    file: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sync,
    Causal,
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "type", value_enum)]
    data_type: DataType,
    #[arg(long, value_enum, default_value = "causal")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "add-win")]
    resolution: Resolution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Undelivered-update bound for random delivery.
    #[arg(long, default_value_t = 15)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    replicas: usize,
    /// Per-step delivery probability.
    #[arg(long, default_value_t = 0.3)]
    deliver_prob: f64,
    /// Operations per history (fixes both bounds of the default 15 to 17).
    #[arg(long)]
    ops: Option<usize>,
    /// Sessions per history (fixes both bounds of the default 3 to 5).
    #[arg(long)]
    sessions: Option<usize>,
    out_dir: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long = "type", value_enum)]
    data_type: DataType,
    #[command(flatten)]
    flags: SearchFlags,
    /// Histories measured concurrently (0 = one per core).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Consecutive agreeing rounds before stopping.
    #[arg(long, default_value_t = 3)]
    rounds_protocol: usize,
    #[arg(long, default_value_t = 1000)]
    round_size: usize,
    /// Check every level even after one is satisfied.
    #[arg(long)]
    no_shortcut: bool,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Include wall time in JSON output.
    #[arg(long)]
    timing: bool,
    /// Directory of .hist files, or one file of `---`-separated histories.
    corpus: PathBuf,
}

#[derive(Args)]
struct PruneRatioArgs {
    #[arg(long = "type", value_enum)]
    data_type: DataType,
    #[arg(long)]
    level: Level,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long)]
    exhaustive_vis: bool,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    json: bool,
    corpus: PathBuf,
}

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::Satisfied => 0,
        Outcome::Violated => 1,
        Outcome::BudgetExceeded => 2,
    }
}

fn run_check(args: &CheckArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.file)
        .with_context(|| format!("reading {}", args.file.display()))?;
    let history = vischeck::parse_history(&text)
        .with_context(|| format!("parsing {}", args.file.display()))?;
    let inst = Instance::new(&history, args.data_type)?;
    let pruner =
        (!args.flags.no_prune).then(|| Pruner::build(&inst, args.level, &PruneOptions::default()));
    if let Some(path) = &args.dump_predicates {
        let records = pruner
            .as_ref()
            .map(|p| p.records(&history))
            .unwrap_or_default();
        fs::write(path, serde_json::to_string_pretty(&records)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let res = check_parallel(
        &inst,
        args.level,
        pruner.as_ref(),
        &args.flags.search(),
        &args.flags.parallel(),
    );
    println!("{}", res.outcome);
    if let Some(cert) = &res.certificate {
        if args.stats {
            print!("{}", cert.describe(|e| history.event(e).id));
        }
    }
    if args.stats {
        println!("{}", serde_json::to_string(&res.stats)?);
        if let Some(p) = &pruner {
            println!("{}", serde_json::to_string(&p.stats())?);
        }
    }
    Ok(outcome_code(res.outcome))
}

fn run_gen(args: &GenArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mode = match args.mode {
        Mode::Sync => DeliveryMode::Sync,
        Mode::Causal => DeliveryMode::CausalBroadcast,
        Mode::Random => DeliveryMode::RandomDelay {
            max_in_flight: args.max_in_flight,
        },
    };
    if !(0.0..=1.0).contains(&args.deliver_prob) {
        bail!("--deliver-prob must be within [0, 1]");
    }
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let mut wl = WorkloadConfig::new(args.data_type, seed);
        if let Some(n) = args.ops {
            (wl.min_ops, wl.max_ops) = (n, n);
        }
        if let Some(s) = args.sessions {
            (wl.min_sessions, wl.max_sessions) = (s, s);
        }
        let mut sim = SimConfig::new(mode, args.resolution, seed);
        sim.replicas = args.replicas;
        sim.deliver_prob = args.deliver_prob;
        let (history, truth) = simulate_random(&wl, &sim)?;
        let stem = args.out_dir.join(format!("{i:05}"));
        write(&stem.with_extension("hist"), &history.to_jsonl())?;
        write(
            &stem.with_extension("truth"),
            &serde_json::to_string_pretty(&truth)?,
        )?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_measure(args: &MeasureArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    if corpus.is_empty() {
        bail!("no histories in {}", args.corpus.display());
    }
    let entries = instances(&corpus, args.data_type)?;
    let opts = MeasureOptions {
        search: args.flags.search(),
        parallel: args.flags.parallel(),
        prune: !args.flags.no_prune,
        prune_opts: PruneOptions::default(),
        shortcut: !args.no_shortcut,
    };
    let protocol = RoundProtocol {
        round_size: args.round_size,
        stable_rounds: args.rounds_protocol,
    };
    let report = measure_corpus(args.data_type, &entries, &opts, &protocol, args.jobs);
    if args.json {
        println!("{}", report.to_json(args.timing));
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn run_prune_ratio(args: &PruneRatioArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let entries = instances(&corpus, args.data_type)?;
    let search = SearchOptions {
        budget: args.budget,
        vis_mode: if args.exhaustive_vis {
            VisMode::Exhaustive
        } else {
            VisMode::Minimal
        },
        dedup: !args.no_dedup,
    };
    let report = pruning_ratio_report(
        &entries,
        args.level,
        &search,
        &PruneOptions::default(),
        args.jobs,
    );
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("{:>10}{:>8}{:>10}", "bucket", "#hist", "median");
    for b in &report.buckets {
        let median = b.median.map_or("-".to_string(), |m| format!("{m:.3}"));
        println!("{:>10}{:>8}{:>10}", b.name, b.histories, median);
    }
    if !report.skipped.is_empty() {
        println!("budget exceeded: {}", report.skipped.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 3 } else { 0 };
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Check(args) => run_check(args),
        Command::Gen(args) => run_gen(args).map(|()| 0),
        Command::Measure(args) => run_measure(args).map(|()| 0),
        Command::PruneRatio(args) => run_prune_ratio(args).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
