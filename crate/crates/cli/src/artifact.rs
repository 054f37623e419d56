//! Files written to the output directory, and a reader for the trace CSV.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use blaircomp::solver::TraceRecord;
use serde::Serialize;

use crate::CliError;

const NODE_FIELDS: [&str; 5] = ["abs_alpha_h", "beta_h", "abs_alpha_x", "beta_x", "rmse_x"];
const BASE_FIELDS: [&str; 5] = ["trial", "t", "loss", "relative_error", "dist"];

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub trial: usize,
    pub t: usize,
    pub loss: f64,
    pub relative_error: f64,
    pub dist: f64,
    /// `[|α_h|, β_h, |α_x|, β_x, rmse_x]` per node.
    pub nodes: Vec<[f64; 5]>,
}

impl TraceRow {
    pub fn from_record(trial: usize, r: &TraceRecord) -> Self {
        TraceRow {
            trial,
            t: r.t,
            loss: r.loss,
            relative_error: r.relative_error,
            dist: r.dist,
            nodes: r
                .nodes
                .iter()
                .map(|c| [c.alpha_h.norm(), c.beta_h, c.alpha_x.norm(), c.beta_x, c.rmse_x])
                .collect(),
        }
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn trace_header(s: usize) -> Vec<String> {
    let mut h: Vec<String> = BASE_FIELDS.iter().map(|f| f.to_string()).collect();
    for i in 0..s {
        h.extend(NODE_FIELDS.iter().map(|f| format!("{f}_{i}")));
    }
    h
}

/// Writes rows sorted by `(trial, t)`.
pub fn write_trace<W: Write>(w: W, s: usize, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut sorted: Vec<&TraceRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.trial, r.t));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(s))?;
    for r in sorted {
        if r.nodes.len() != s {
            return Err(CliError::Trace(format!("row has {} nodes, header has {s}", r.nodes.len())));
        }
        let mut rec = vec![r.trial.to_string(), r.t.to_string(), fmt_f64(r.loss), fmt_f64(r.relative_error), fmt_f64(r.dist)];
        for n in &r.nodes {
            rec.extend(n.iter().map(|&v| fmt_f64(v)));
        }
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace CSV back, checking the header and the row order.
pub fn read_trace<R: Read>(r: R) -> Result<(usize, Vec<TraceRow>), CliError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header.len() < 5 || (header.len() - 5) % 5 != 0 {
        return Err(CliError::Trace(format!("{} columns is not 5 + 5s", header.len())));
    }
    let s = (header.len() - 5) / 5;
    if header != trace_header(s) {
        return Err(CliError::Trace("unexpected column names".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| CliError::Trace(format!("row {}: bad {what}", line + 1));
        let f = |i: usize| -> Result<f64, CliError> { rec[i].parse().map_err(|_| bad(&header[i])) };
        let row = TraceRow {
            trial: rec[0].parse().map_err(|_| bad("trial"))?,
            t: rec[1].parse().map_err(|_| bad("t"))?,
            loss: f(2)?,
            relative_error: f(3)?,
            dist: f(4)?,
            nodes: (0..s)
                .map(|i| {
                    let o = 5 + 5 * i;
                    Ok([f(o)?, f(o + 1)?, f(o + 2)?, f(o + 3)?, f(o + 4)?])
                })
                .collect::<Result<_, CliError>>()?,
        };
        if let Some(prev) = rows.last() {
            let prev: &TraceRow = prev;
            if (prev.trial, prev.t) >= (row.trial, row.t) {
                return Err(CliError::Trace(format!("row {} is out of (trial, t) order", line + 1)));
            }
        }
        rows.push(row);
    }
    Ok((s, rows))
}

pub fn write_trace_file(path: &Path, s: usize, rows: &[TraceRow]) -> Result<(), CliError> {
    write_trace(BufWriter::new(File::create(path)?), s, rows)
}

pub fn read_trace_file(path: &Path) -> Result<(usize, Vec<TraceRow>), CliError> {
    read_trace(File::open(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes a header and pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn opt_cell(v: Option<f64>) -> String {
    fmt_opt(v)
}

/// Minimal gnuplot script for the relative-error curves in `trace.csv`.
pub fn write_gnuplot_stub(path: &Path, trials: usize) -> Result<(), CliError> {
    let script = format!(
        "# gnuplot -p plot.gp\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set logscale y\n\
         set xlabel 'iteration t'\n\
         set ylabel 'relative error'\n\
         plot for [k=0:{last}] 'trace.csv' using (column('trial') == k ? column('t') : 1/0):'relative_error' \
         with lines notitle\n",
        last = trials.saturating_sub(1)
    );
    std::fs::write(path, script)?;
    Ok(())
}
