//! Whitespace-separated edge lists: `origin dest weight [timestamp]`.
//!
//! Blank lines and lines starting with `#` are skipped. Node ids are unsigned
//! decimal integers; ids of 2^32 or more are reduced modulo 2^32 and counted.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;

use crate::error::{CraneError, Result};
use crate::sketch::EdgeUpdate;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedStream {
    pub edges: Vec<EdgeUpdate>,
    /// Number of ids that needed modular reduction.
    pub reduced_ids: usize,
}

fn parse_id(tok: &str, line: usize, reduced: &mut usize) -> Result<u32> {
    let v: u128 = tok
        .parse()
        .map_err(|_| CraneError::Parse { line, msg: format!("invalid node id `{tok}`") })?;
    if v > u32::MAX as u128 {
        *reduced += 1;
    }
    Ok((v % (1u128 << 32)) as u32)
}

fn parse_weight(tok: &str, line: usize) -> Result<f64> {
    let w: f64 = tok
        .parse()
        .map_err(|_| CraneError::Parse { line, msg: format!("invalid weight `{tok}`") })?;
    if !w.is_finite() || w < 0.0 {
        return Err(CraneError::Parse { line, msg: format!("weight must be finite and non-negative, got {tok}") });
    }
    Ok(w)
}

/// Parses lines; `weight_required` is false for query lists, where a missing
/// weight defaults to 1.
fn parse_lines(reader: impl BufRead, weight_required: bool) -> Result<ParsedStream> {
    let mut out = ParsedStream::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = text.split_whitespace().collect();
        let min = if weight_required { 3 } else { 2 };
        if toks.len() < min || toks.len() > 4 {
            return Err(CraneError::Parse {
                line: line_no,
                msg: format!("expected {min} to 4 fields, found {}", toks.len()),
            });
        }
        let origin = parse_id(toks[0], line_no, &mut out.reduced_ids)?;
        let dest = parse_id(toks[1], line_no, &mut out.reduced_ids)?;
        let weight = match toks.get(2) {
            Some(t) => parse_weight(t, line_no)?,
            None => 1.0,
        };
        out.edges.push(EdgeUpdate::new(origin, dest, weight));
    }
    if out.reduced_ids > 0 {
        warn!("{} node ids reduced modulo 2^32", out.reduced_ids);
    }
    Ok(out)
}

pub fn parse_edge_list(reader: impl BufRead) -> Result<ParsedStream> {
    parse_lines(reader, true)
}

/// Like [`parse_edge_list`] but the weight column is optional.
pub fn parse_edge_keys(reader: impl BufRead) -> Result<ParsedStream> {
    parse_lines(reader, false)
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<ParsedStream> {
    parse_edge_list(BufReader::new(File::open(path)?))
}

pub fn read_edge_keys(path: impl AsRef<Path>) -> Result<ParsedStream> {
    parse_edge_keys(BufReader::new(File::open(path)?))
}

pub fn write_edge_list(mut w: impl Write, edges: &[EdgeUpdate]) -> Result<()> {
    for e in edges {
        writeln!(w, "{}\t{}\t{}", e.origin, e.dest, e.weight)?;
    }
    Ok(())
}
