use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlonsim::config::{CostNormalizer, DatasetSpec, SimConfig, SyncMode};
use mlonsim::experiment::{compare_modes, run_experiment, ExperimentReport};
use mlonsim::Error;

/// Distributed logistic-regression training over a simulated slotted-ALOHA uplink.
///
/// Runs `--runs` seeded repetitions and writes per-run traces plus summary and
/// aggregate CSVs to the output directory. Flags override values from
/// `--config`, which override built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "mlonsim", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Paired-seed runs of two synchronisation modes with aligned G and cost columns.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Mode of the first arm.
    #[arg(long, value_parser = parse_mode)]
    a_mode: SyncMode,
    /// Window length of the first arm, if mini-batch.
    #[arg(long)]
    a_ts: Option<u64>,
    /// Mode of the second arm.
    #[arg(long, value_parser = parse_mode)]
    b_mode: SyncMode,
    /// Window length of the second arm, if mini-batch.
    #[arg(long)]
    b_ts: Option<u64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of workers M.
    #[arg(long)]
    workers: Option<usize>,
    /// Per-slot background packet probability at each worker.
    #[arg(long)]
    pb: Option<f64>,
    /// batch or minibatch.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SyncMode>,
    /// Mini-batch window in slots [default: 4 x workers].
    #[arg(long)]
    ts: Option<u64>,
    /// Weight of cumulative cost in G, in [0, 1] [default: 0.5].
    #[arg(long)]
    beta: Option<f64>,
    /// Step size [default: 1/L with L = max ||x||^2 / 4].
    #[arg(long)]
    alpha: Option<f64>,
    /// Iteration horizon K [default: 100].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Number of seeded repetitions [default: 1].
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses seed + r [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Slot duration in microseconds [default: 1].
    #[arg(long)]
    slot_us: Option<f64>,
    /// Gradient payload size in bits [default: 25088, assumed: 784 entries x 32 bits].
    #[arg(long)]
    payload_bits: Option<u64>,
    /// Downlink broadcast rate C in bits/s [default: 1e6, assumed].
    #[arg(long)]
    rate: Option<f64>,
    /// Initial backoff window b in slots [default: 2, assumed].
    #[arg(long)]
    backoff_base: Option<u64>,
    /// Local gradient computation time in microseconds [default: 50, assumed].
    #[arg(long)]
    l2_us: Option<f64>,
    /// Master update time in microseconds [default: 10, assumed].
    #[arg(long)]
    l4_us: Option<f64>,
    /// Cost scale: none, horizon, or a positive number of seconds [default: horizon].
    #[arg(long, value_parser = parse_normalizer)]
    normalizer: Option<CostNormalizer>,
    /// Directory holding train-images-idx3-ubyte and train-labels-idx1-ubyte (optionally .gz).
    #[arg(long, conflicts_with = "synth")]
    mnist_dir: Option<PathBuf>,
    /// MNIST sample count after seeded truncation, or "all" [default: 12600].
    #[arg(long, value_parser = parse_count)]
    mnist_count: Option<Count>,
    /// Synthetic blobs instead of MNIST, e.g. d=2,n=100[,margin=2,seed=0].
    #[arg(long, value_parser = parse_synth)]
    synth: Option<DatasetSpec>,
    /// Stop each run when the causal rule fires instead of recording the full horizon.
    #[arg(long)]
    stop_at_causal: bool,
    /// Also write a per-slot event trace for every run.
    #[arg(long)]
    trace_slots: bool,
    /// Output directory.
    #[arg(long, env = "MLONSIM_OUT", default_value = "out")]
    out_dir: PathBuf,
    /// Concurrent runs [default: available cores].
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Count(Option<usize>);

fn parse_mode(s: &str) -> Result<SyncMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_normalizer(s: &str) -> Result<CostNormalizer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_synth(s: &str) -> Result<DatasetSpec, String> {
    DatasetSpec::parse_synth(s).map_err(|e| e.to_string())
}

fn parse_count(s: &str) -> Result<Count, String> {
    if s == "all" {
        return Ok(Count(None));
    }
    s.parse()
        .map(|n| Count(Some(n)))
        .map_err(|_| format!("expected a count or \"all\", got {s:?}"))
}

fn load_config_file(path: &Path) -> Result<SimConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl SimArgs {
    fn resolve(&self) -> Result<SimConfig, Error> {
        let mut c = match &self.config {
            Some(path) => load_config_file(path)?,
            None => SimConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    c.$field = v;
                }
            };
        }
        set!(workers => workers);
        set!(pb => background_prob);
        set!(mode => mode);
        set!(beta => beta);
        set!(max_iters => max_iters);
        set!(runs => runs);
        set!(seed => seed);
        set!(payload_bits => payload_bits);
        set!(rate => downlink_rate_bps);
        set!(backoff_base => backoff_base);
        set!(normalizer => cost_normalizer);
        if let Some(ts) = self.ts {
            c.window_slots = Some(ts);
        }
        if let Some(a) = self.alpha {
            c.alpha = Some(a);
        }
        if let Some(us) = self.slot_us {
            c.slot_seconds = us * 1e-6;
        }
        if let Some(us) = self.l2_us {
            c.l2_seconds = us * 1e-6;
        }
        if let Some(us) = self.l4_us {
            c.l4_seconds = us * 1e-6;
        }
        if let Some(spec) = &self.synth {
            c.dataset = spec.clone();
        }
        if let Some(dir) = &self.mnist_dir {
            let count = match &c.dataset {
                DatasetSpec::Mnist { count, .. } => *count,
                DatasetSpec::Synth { .. } => Some(mlonsim::data::DEFAULT_SAMPLE_COUNT),
            };
            c.dataset = DatasetSpec::Mnist {
                dir: dir.clone(),
                count,
            };
        }
        if let Some(Count(n)) = self.mnist_count {
            match &mut c.dataset {
                DatasetSpec::Mnist { count, .. } => *count = n,
                DatasetSpec::Synth { .. } => return Err(Error::Config("--mnist-count needs an MNIST dataset".into())),
            }
        }
        c.stop_at_causal |= self.stop_at_causal;
        c.trace_slots |= self.trace_slots;
        c.validate()?;
        Ok(c)
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn describe(label: &str, report: &ExperimentReport) {
    let incomplete = report.incomplete_runs();
    println!(
        "{label}: {} runs written to {}{}",
        report.runs.len(),
        report.out_dir.display(),
        if incomplete > 0 {
            format!(" ({incomplete} hit the slot cap)")
        } else {
            String::new()
        }
    );
    if let [only] = report.runs.as_slice() {
        let s = &only.summary;
        println!(
            "  k* = {}, k_c* = {}, G(k*) = {:.6}, G(k_c*) = {:.6}",
            s.k_star, s.k_star_c, s.g_at_kstar, s.g_at_kstarc
        );
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        None => {
            let config = cli.sim.resolve()?;
            let report = run_experiment(&config, &cli.sim.out_dir, cli.sim.jobs())?;
            describe(&config.mode.to_string(), &report);
        }
        Some(Command::Compare(args)) => {
            let base = args.sim.resolve()?;
            let arm = |mode, ts: Option<u64>| {
                let mut c = base.clone();
                c.mode = mode;
                if ts.is_some() {
                    c.window_slots = ts;
                }
                c.validate().map(|_| c)
            };
            let a = arm(args.a_mode, args.a_ts)?;
            let b = arm(args.b_mode, args.b_ts)?;
            let cmp = compare_modes(&a, &b, &args.sim.out_dir, args.sim.jobs())?;
            describe(&cmp.labels.0, &cmp.a);
            describe(&cmp.labels.1, &cmp.b);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::MissingDataset(_) => 3,
                ref e if e.is_config() => 2,
                _ => 1,
            })
        }
    }
}
