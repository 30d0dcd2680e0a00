//! CSV and JSON output, plus a reader for simulation traces.

use std::path::Path;

use serde::Serialize;

use crate::chain::KarmaChain;
use crate::error::{Error, Result};
use crate::landscape::LandscapePoint;
use crate::sim::SimTrace;

/// Shortest decimal text of `v` rounded to 10 significant digits.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.9e}").parse().expect("formatted float parses");
    // avoid "-0"
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn to_csv(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse {
        context: "csv output".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        context: "csv output".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Trace columns for `n` arcs.
pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["day".to_string()];
    h.extend((1..=n).map(|j| format!("x_{j}")));
    for c in [
        "k_mean",
        "k_std",
        "rel_cost",
        "dbar_literal",
        "dbar_interpreted",
        "sbar_dev",
        "converged_flag",
    ] {
        h.push(c.into());
    }
    h
}

pub fn trace_csv(trace: &SimTrace) -> Result<String> {
    let rows = trace.days.iter().map(|d| {
        let mut r = vec![d.day.to_string()];
        r.extend(d.flows.iter().map(|&x| fmt_sig(x)));
        r.extend(
            [d.k_mean, d.k_std, d.rel_cost, d.dbar_literal, d.dbar_interpreted, d.sbar_dev]
                .into_iter()
                .map(fmt_sig),
        );
        r.push(u8::from(d.converged).to_string());
        r
    });
    to_csv(&trace_header(trace.prices.len()), rows)
}

/// One parsed trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub day: usize,
    pub flows: Vec<f64>,
    pub k_mean: f64,
    pub k_std: f64,
    pub rel_cost: f64,
    pub dbar_literal: f64,
    pub dbar_interpreted: f64,
    pub sbar_dev: f64,
    pub converged: bool,
}

/// Reads a trace written by [`trace_csv`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let err = |line: usize, message: String| Error::Parse {
        context: format!("trace csv, record {line}"),
        message,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| err(0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 9 {
        return Err(err(0, format!("expected at least 9 columns, got {}", header.len())));
    }
    let n = header.len() - 8;
    if header != trace_header(n) {
        return Err(err(0, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            rec[c]
                .parse::<f64>()
                .map_err(|e| err(line, format!("column {}: {e}", header[c])))
        };
        let day = rec[0]
            .parse::<usize>()
            .map_err(|e| err(line, format!("column day: {e}")))?;
        let flows = (1..=n).map(num).collect::<Result<Vec<_>>>()?;
        let converged = match &rec[n + 7] {
            "1" => true,
            "0" => false,
            other => return Err(err(line, format!("converged_flag must be 0 or 1, got {other:?}"))),
        };
        rows.push(TraceRow {
            day,
            flows,
            k_mean: num(n + 1)?,
            k_std: num(n + 2)?,
            rel_cost: num(n + 3)?,
            dbar_literal: num(n + 4)?,
            dbar_interpreted: num(n + 5)?,
            sbar_dev: num(n + 6)?,
            converged,
        });
    }
    Ok(rows)
}

/// Arc choices as 1-based arc numbers.
pub fn landscape_csv(points: &[LandscapePoint]) -> Result<String> {
    let header = ["k", "s", "arc"].map(String::from);
    let rows = points
        .iter()
        .map(|g| vec![g.k.to_string(), fmt_sig(g.s), (g.arc + 1).to_string()]);
    to_csv(&header, rows)
}

/// One row per reachable state: Karma, stationary mass and `P_sel` column.
pub fn chain_csv(chain: &KarmaChain) -> Result<String> {
    let n = chain.selection.first().map_or(0, Vec::len);
    let mut header = vec!["k".to_string(), "pi_inf".to_string()];
    header.extend((1..=n).map(|j| format!("p_sel_{j}")));
    let rows = chain
        .states
        .iter()
        .zip(&chain.pi_inf)
        .zip(&chain.selection)
        .map(|((k, &pi), col)| {
            let mut r = vec![k.to_string(), fmt_sig(pi)];
            r.extend(col.iter().map(|&q| fmt_sig(q)));
            r
        });
    to_csv(&header, rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse {
            context: "json output".into(),
            message: e.to_string(),
        })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
