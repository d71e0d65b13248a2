use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{compute_tf, index_table, win_tie_table, Clock, IndexEntry, WinTieRow};
use super::run::{IterRecord, RunRecord, RunStatus};
use crate::error::{Error, Result};

pub const TRACE_FILE: &str = "traces.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_HEADER: [&str; 8] = [
    "task_id",
    "optimizer",
    "k",
    "f",
    "gnorm",
    "t_k",
    "seconds",
    "f_evals",
];

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    task_id: String,
    optimizer: String,
    k: usize,
    f: f64,
    gnorm: f64,
    t_k: f64,
    seconds: f64,
    f_evals: usize,
}

pub fn write_traces(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    w.write_record(TRACE_HEADER)?;
    for r in records {
        for it in &r.iterations {
            w.serialize(TraceRow {
                task_id: r.task_id.clone(),
                optimizer: r.optimizer.clone(),
                k: it.k,
                f: it.f,
                gnorm: it.gnorm,
                t_k: it.t_k,
                seconds: it.seconds,
                f_evals: it.f_evals,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Reads traces back into records, one per consecutive `(task_id, optimizer)`
/// block. Status and warm-up flags are not part of the CSV; they are
/// restored from `summary` when given, otherwise inferred as `MaxIter` and
/// not warm-up.
pub fn read_traces(path: impl AsRef<Path>, summary: Option<&Summary>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err(Error::Config(format!(
            "{}: unexpected trace header {header:?}",
            path.display()
        )));
    }
    let mut blocks: Vec<(String, String, Vec<IterRecord>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: TraceRow = row?;
        let it = IterRecord {
            k: row.k,
            f: row.f,
            gnorm: row.gnorm,
            t_k: row.t_k,
            seconds: row.seconds,
            f_evals: row.f_evals,
        };
        match blocks.last_mut() {
            Some((t, o, its)) if *t == row.task_id && *o == row.optimizer && row.k == its.len() => {
                its.push(it)
            }
            _ => blocks.push((row.task_id, row.optimizer, vec![it])),
        }
    }
    let meta: BTreeMap<(&str, &str), &RunSummary> = summary
        .map(|s| {
            s.runs
                .iter()
                .map(|r| ((r.task_id.as_str(), r.optimizer.as_str()), r))
                .collect()
        })
        .unwrap_or_default();
    Ok(blocks
        .into_iter()
        .map(|(task, opt, its)| {
            let m = meta.get(&(task.as_str(), opt.as_str())).copied();
            let status = m.map_or(RunStatus::MaxIter, |m| m.status);
            let warmup = m.is_some_and(|m| m.warmup);
            let mut rec = RunRecord::from_iterations(task, opt, its, status);
            rec.warmup = warmup;
            rec
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeToPrecision {
    pub eps: f64,
    /// `None` when the precision was never reached.
    pub t_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task_id: String,
    pub optimizer: String,
    pub status: RunStatus,
    pub warmup: bool,
    pub iterations: usize,
    pub f_star: f64,
    pub f_final: f64,
    pub t_f: Vec<TimeToPrecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reference: String,
    pub clock: Clock,
    pub eps_grid: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub win_tie: Vec<WinTieRow>,
    pub index: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub reference: String,
    pub eps_grid: Vec<f64>,
    pub clock: Clock,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            reference: "lbfgs_pi".into(),
            eps_grid: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            clock: Clock::Wall,
        }
    }
}

pub fn summarize(records: &[RunRecord], opts: &ReportOptions) -> Summary {
    let runs = records
        .iter()
        .map(|r| RunSummary {
            task_id: r.task_id.clone(),
            optimizer: r.optimizer.clone(),
            status: r.status,
            warmup: r.warmup,
            iterations: r.iterations.len(),
            f_star: r.f_star,
            f_final: r.f_final,
            t_f: opts
                .eps_grid
                .iter()
                .map(|&eps| {
                    let t = compute_tf(r, eps, opts.clock);
                    TimeToPrecision {
                        eps,
                        t_f: t.is_finite().then_some(t),
                    }
                })
                .collect(),
        })
        .collect();
    Summary {
        reference: opts.reference.clone(),
        clock: opts.clock,
        eps_grid: opts.eps_grid.clone(),
        runs,
        win_tie: win_tie_table(records, &opts.reference, &opts.eps_grid, opts.clock),
        index: index_table(records, &opts.reference),
    }
}

/// Writes `traces.csv` and `summary.json` into `dir` and returns their paths.
pub fn export_report(
    records: &[RunRecord],
    dir: impl AsRef<Path>,
    opts: &ReportOptions,
) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traces = dir.join(TRACE_FILE);
    write_traces(records, &traces)?;
    let summary = dir.join(SUMMARY_FILE);
    write_summary(&summarize(records, opts), &summary)?;
    Ok((traces, summary))
}

pub fn write_summary(summary: &Summary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
