//! Repeated seeded runs, per-run CSV traces and aggregate summaries.
//!
//! Output layout of [`run_experiment`] in the output directory:
//!
//! - `trace_run{id}.csv`: one row per iteration, [`TRACE_HEADER`]
//! - `summary.csv`: one row per run, [`SUMMARY_HEADER`]
//! - `aggregate.csv`: per-`k` mean, median and quartiles across runs
//! - `runs.csv`: per-run iteration count and slot-cap flag
//! - `slots_run{id}.csv`: per-slot events, only with `trace_slots`

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, SimConfig, SyncMode};
use crate::data::{load_mnist_binary, synth_dataset};
use crate::error::{Error, Result};
use crate::model::{partition_dataset, LabeledSample};
use crate::netsim::write_slot_trace;
use crate::solver::{self, RunOutput};

pub const TRACE_HEADER: &str = "run_id,k,f,l1,l2,l3,l4,c_k,cum_cost,G,grads_received,mean_queue_len";
pub const SUMMARY_HEADER: &str =
    "run_id,k_star,k_star_c,G_at_kstar,G_at_kstarc,f_at_kstar,f_at_kstarc,prop2_holds,convex_G";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run_id: usize,
    pub k: usize,
    pub f: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub c_k: f64,
    pub cum_cost: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub grads_received: usize,
    pub mean_queue_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: usize,
    pub k_star: usize,
    pub k_star_c: usize,
    #[serde(rename = "G_at_kstar")]
    pub g_at_kstar: f64,
    #[serde(rename = "G_at_kstarc")]
    pub g_at_kstarc: f64,
    pub f_at_kstar: f64,
    pub f_at_kstarc: f64,
    pub prop2_holds: bool,
    #[serde(rename = "convex_G")]
    pub convex_g: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunFlags {
    run_id: usize,
    seed: u64,
    iterations: usize,
    incomplete: bool,
}

/// Everything one finished run contributes to the experiment outputs.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub trace: Vec<TraceRow>,
    pub summary: SummaryRow,
    pub incomplete: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub runs: Vec<RunResult>,
}

impl ExperimentReport {
    pub fn incomplete_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.incomplete).count()
    }
}

pub fn load_dataset(config: &SimConfig) -> Result<Vec<LabeledSample<f64>>> {
    match &config.dataset {
        DatasetSpec::Mnist { dir, count } => load_mnist_binary(dir, *count, config.seed),
        DatasetSpec::Synth { d, n, margin, seed } => Ok(synth_dataset(*d, *n, *margin, *seed)),
    }
}

/// Seed of the channel simulator, decorrelated from the partition seed.
fn network_seed(run_seed: u64) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5851_F42D_4C95_7F2D
}

pub fn trace_rows(run_id: usize, out: &RunOutput<f64>) -> Vec<TraceRow> {
    out.records
        .iter()
        .map(|r| TraceRow {
            run_id,
            k: r.k,
            f: r.loss,
            l1: r.latency.l1_broadcast,
            l2: r.latency.l2_compute,
            l3: r.latency.l3_uplink,
            l4: r.latency.l4_update,
            c_k: r.latency.total(),
            cum_cost: r.cum_cost,
            g: r.objective,
            grads_received: r.grads_received,
            mean_queue_len: r.mean_queue_len,
        })
        .collect()
}

pub fn summary_row(run_id: usize, out: &RunOutput<f64>, beta: f64) -> Result<SummaryRow> {
    let report = out.prop2(beta)?;
    debug_assert_eq!(report.k_star_c, out.causal.k);
    Ok(SummaryRow {
        run_id,
        k_star: report.k_star,
        k_star_c: out.causal.k,
        g_at_kstar: report.g_at_kstar,
        g_at_kstarc: out.causal.objective,
        f_at_kstar: report.f_at_kstar,
        f_at_kstarc: out.causal.loss,
        prop2_holds: report.bounds_hold,
        convex_g: report.convex_g,
    })
}

/// One seeded run on already-loaded samples.
pub fn run_single(
    config: &SimConfig,
    samples: &[LabeledSample<f64>],
    run_id: usize,
) -> Result<(RunResult, RunOutput<f64>)> {
    let seed = config.run_seed(run_id);
    let shards = partition_dataset(samples, config.workers, seed)?;
    let out = solver::run(config, &shards, network_seed(seed))?;
    let result = RunResult {
        run_id,
        seed,
        trace: trace_rows(run_id, &out),
        summary: summary_row(run_id, &out, config.beta)?,
        incomplete: out.incomplete,
    };
    Ok((result, out))
}

/// Writes `bytes` via a temporary file in the same directory and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(buf)
}

/// Serialises rows under a fixed header line.
pub fn to_csv<R: Serialize>(header: &str, rows: &[R]) -> Result<Vec<u8>> {
    let mut buf = format!("{header}\n").into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    to_csv(TRACE_HEADER, rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    to_csv(SUMMARY_HEADER, rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
    Ok(rows)
}

pub fn trace_file_name(run_id: usize) -> String {
    format!("trace_run{run_id:04}.csv")
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Spread {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q25: quantile(&v, 0.25),
            q75: quantile(&v, 0.75),
        }
    }
}

const METRICS: [&str; 5] = ["f", "cum_cost", "G", "grads_received", "mean_queue_len"];

fn metric(row: &TraceRow, i: usize) -> f64 {
    match i {
        0 => row.f,
        1 => row.cum_cost,
        2 => row.g,
        3 => row.grads_received as f64,
        _ => row.mean_queue_len,
    }
}

pub fn aggregate_header() -> String {
    let mut cols = vec!["k".to_string(), "n_runs".to_string()];
    for m in METRICS {
        for s in ["mean", "median", "q25", "q75"] {
            cols.push(format!("{m}_{s}"));
        }
    }
    cols.join(",")
}

/// Per-`k` statistics across all runs that reached iteration `k`.
pub fn aggregate_csv(traces: &[&[TraceRow]]) -> Result<Vec<u8>> {
    let max_k = traces.iter().filter_map(|t| t.last()).map(|t| t.k).max().unwrap_or(0);
    let mut buf = format!("{}\n", aggregate_header()).into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        for k in 0..=max_k {
            let rows: Vec<&TraceRow> = traces.iter().filter_map(|t| t.get(k)).collect();
            if rows.is_empty() {
                continue;
            }
            let mut record = vec![k.to_string(), rows.len().to_string()];
            for i in 0..METRICS.len() {
                let values: Vec<f64> = rows.iter().map(|r| metric(r, i)).collect();
                let s = Spread::of(&values);
                record.extend([s.mean, s.median, s.q25, s.q75].iter().map(|v| v.to_string()));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Executes `config.runs` seeded runs and writes every output file.
pub fn run_experiment(config: &SimConfig, out_dir: &Path, jobs: usize) -> Result<ExperimentReport> {
    config.validate()?;
    let samples = load_dataset(config)?;
    if samples.len() < config.workers {
        return Err(Error::config(format!(
            "dataset has {} samples, fewer than {} workers",
            samples.len(),
            config.workers
        )));
    }
    fs::create_dir_all(out_dir)?;

    let pool = thread_pool(jobs)?;
    let mut runs = pool.install(|| {
        (0..config.runs)
            .into_par_iter()
            .map(|run_id| {
                let (result, out) = run_single(config, &samples, run_id)?;
                write_atomic(&out_dir.join(trace_file_name(run_id)), &trace_csv(&result.trace)?)?;
                if config.trace_slots {
                    let mut buf = Vec::new();
                    write_slot_trace(&mut buf, &out.slot_trace)?;
                    write_atomic(&out_dir.join(format!("slots_run{run_id:04}.csv")), &buf)?;
                }
                Ok(result)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    runs.sort_by_key(|r| r.run_id);

    let summaries: Vec<SummaryRow> = runs.iter().map(|r| r.summary.clone()).collect();
    write_atomic(&out_dir.join("summary.csv"), &summary_csv(&summaries)?)?;
    write_atomic(
        &out_dir.join("aggregate.csv"),
        &aggregate_csv(&runs.iter().map(|r| r.trace.as_slice()).collect::<Vec<_>>())?,
    )?;
    let flags: Vec<RunFlags> = runs
        .iter()
        .map(|r| RunFlags {
            run_id: r.run_id,
            seed: r.seed,
            iterations: r.trace.len() - 1,
            incomplete: r.incomplete,
        })
        .collect();
    write_atomic(
        &out_dir.join("runs.csv"),
        &to_csv("run_id,seed,iterations,incomplete", &flags)?,
    )?;

    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        runs,
    })
}

fn mode_label(config: &SimConfig) -> String {
    match config.mode {
        SyncMode::Batch => "batch".to_string(),
        SyncMode::Minibatch => format!("minibatch_ts{}", config.window()),
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub labels: (String, String),
    pub a: ExperimentReport,
    pub b: ExperimentReport,
}

/// Paired-seed runs of two configurations that differ only in mode or window.
/// Results go to `out_dir/<label>/` and the aligned `out_dir/compare.csv`.
pub fn compare_modes(a: &SimConfig, b: &SimConfig, out_dir: &Path, jobs: usize) -> Result<Comparison> {
    if !a.same_except_mode(b) {
        return Err(Error::config(
            "compared configurations differ in fields other than mode and T_s",
        ));
    }
    let (la, lb) = (mode_label(a), mode_label(b));
    if la == lb {
        return Err(Error::config(format!("both configurations run the same mode ({la})")));
    }
    let ra = run_experiment(a, &out_dir.join(&la), jobs)?;
    let rb = run_experiment(b, &out_dir.join(&lb), jobs)?;

    let header = format!("run_id,k,G_{la},cum_cost_{la},G_{lb},cum_cost_{lb}");
    let mut buf = format!("{header}\n").into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        let cell =
            |row: Option<&TraceRow>, pick: fn(&TraceRow) -> f64| row.map(|r| pick(r).to_string()).unwrap_or_default();
        for (x, y) in ra.runs.iter().zip(&rb.runs) {
            for k in 0..x.trace.len().max(y.trace.len()) {
                let (p, q) = (x.trace.get(k), y.trace.get(k));
                w.write_record([
                    x.run_id.to_string(),
                    k.to_string(),
                    cell(p, |r| r.g),
                    cell(p, |r| r.cum_cost),
                    cell(q, |r| r.g),
                    cell(q, |r| r.cum_cost),
                ])?;
            }
        }
        w.flush()?;
    }
    write_atomic(&out_dir.join("compare.csv"), &buf)?;
    Ok(Comparison {
        labels: (la, lb),
        a: ra,
        b: rb,
    })
}
