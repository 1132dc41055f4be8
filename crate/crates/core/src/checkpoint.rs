//! Plain-text matrix serialization shared by encoder and reader checkpoints.
//!
//! Values are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub(crate) fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for r in 0..m.rows() {
        let line = m
            .row(r)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub(crate) struct LineReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    pub(crate) fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }

    pub(crate) fn next_line(&mut self, what: &str) -> Result<String> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Checkpoint(format!(
                "unexpected end of file at line {} while reading {what}",
                self.line
            ))),
        }
    }

    pub(crate) fn read_matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line(what)?;
            let before = data.len();
            for field in line.split_ascii_whitespace() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Checkpoint(format!("line {}: `{field}` is not a number", self.line))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{what} (line {})", self.line)));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Checkpoint(format!(
                    "line {}: {what} row has {} values, expected {cols}",
                    self.line,
                    data.len() - before
                )));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        for l in self.lines.by_ref() {
            if !l?.trim().is_empty() {
                return Err(Error::Checkpoint(
                    "trailing content after last matrix".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Parses `MAGIC v1 key=value ...` into its key/value fields.
pub(crate) fn parse_header(line: &str, magic: &str) -> Result<HashMap<String, usize>> {
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(magic) || parts.next() != Some("v1") {
        return Err(Error::Checkpoint(format!(
            "expected header `{magic} v1 ...`, found `{line}`"
        )));
    }
    parts
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header field `{kv}`")))?;
            let v = v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad header value `{kv}`")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

pub(crate) fn header_field(fields: &HashMap<String, usize>, key: &str) -> Result<usize> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("header is missing `{key}`")))
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
