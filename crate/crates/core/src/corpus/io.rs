//! Line-delimited JSON ingestion with line- and field-level diagnostics.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{Article, Claim, Passage, VerdictLabel};
use crate::error::{Error, Result};

pub(crate) trait JsonRecord: Sized {
    fn from_fields(fields: &Map<String, Value>, line: usize) -> Result<Self>;
    fn id(&self) -> &str;
}

fn required_str(fields: &Map<String, Value>, name: &str, line: usize) -> Result<String> {
    match fields.get(name) {
        None | Some(Value::Null) => Err(Error::record(line, name, "missing required field")),
        Some(Value::String(s)) if s.trim().is_empty() => {
            Err(Error::record(line, name, "must not be empty"))
        }
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::record(line, name, "expected a string")),
    }
}

fn optional_str(fields: &Map<String, Value>, name: &str, line: usize) -> Result<Option<String>> {
    match fields.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::record(line, name, "expected a string")),
    }
}

impl JsonRecord for Article {
    fn from_fields(fields: &Map<String, Value>, line: usize) -> Result<Self> {
        Ok(Article {
            id: required_str(fields, "id", line)?,
            title: required_str(fields, "title", line)?,
            body: optional_str(fields, "body", line)?
                .ok_or_else(|| Error::record(line, "body", "missing required field"))?,
            language: required_str(fields, "language", line)?,
            published: optional_str(fields, "published", line)?,
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

impl JsonRecord for Claim {
    fn from_fields(fields: &Map<String, Value>, line: usize) -> Result<Self> {
        let label = optional_str(fields, "label", line)?
            .map(|s| s.parse::<VerdictLabel>())
            .transpose()
            .map_err(|m| Error::record(line, "label", m))?;
        Ok(Claim {
            id: required_str(fields, "id", line)?,
            text: required_str(fields, "text", line)?,
            claimer: optional_str(fields, "claimer", line)?.unwrap_or_default(),
            claim_date: optional_str(fields, "claim_date", line)?.unwrap_or_default(),
            language: required_str(fields, "language", line)?,
            label,
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

impl JsonRecord for Passage {
    fn from_fields(fields: &Map<String, Value>, line: usize) -> Result<Self> {
        let seq = match fields.get("seq") {
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| Error::record(line, "seq", "expected a non-negative integer"))?
                as usize,
            None => return Err(Error::record(line, "seq", "missing required field")),
            Some(_) => {
                return Err(Error::record(
                    line,
                    "seq",
                    "expected a non-negative integer",
                ))
            }
        };
        let tokens = match fields.get("tokens") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::record(line, "tokens", "expected an array of strings"))?,
            None => return Err(Error::record(line, "tokens", "missing required field")),
            Some(_) => {
                return Err(Error::record(
                    line,
                    "tokens",
                    "expected an array of strings",
                ))
            }
        };
        if tokens.is_empty() {
            return Err(Error::record(line, "tokens", "must not be empty"));
        }
        Ok(Passage {
            id: required_str(fields, "id", line)?,
            article_id: required_str(fields, "article_id", line)?,
            seq,
            tokens,
            language: required_str(fields, "language", line)?,
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

/// Streaming reader over a line-delimited JSON file. Blank lines are skipped;
/// duplicate ids are reported at the line where they reappear.
pub struct JsonlRecords<R, T> {
    lines: std::io::Lines<R>,
    line: usize,
    seen: HashSet<String>,
    _record: PhantomData<T>,
}

#[allow(private_bounds)]
impl<R: BufRead, T: JsonRecord> JsonlRecords<R, T> {
    fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            seen: HashSet::new(),
            _record: PhantomData,
        }
    }

    fn parse(&mut self, text: &str) -> Result<T> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::record(self.line, "<line>", format!("invalid JSON: {e}")))?;
        let Value::Object(fields) = value else {
            return Err(Error::record(self.line, "<line>", "expected a JSON object"));
        };
        let record = T::from_fields(&fields, self.line)?;
        if !self.seen.insert(record.id().to_string()) {
            return Err(Error::DuplicateId {
                line: self.line,
                id: record.id().to_string(),
            });
        }
        Ok(record)
    }
}

#[allow(private_bounds)]
impl<R: BufRead, T: JsonRecord> Iterator for JsonlRecords<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

pub fn read_articles<R: BufRead>(reader: R) -> JsonlRecords<R, Article> {
    JsonlRecords::new(reader)
}

pub fn read_claims<R: BufRead>(reader: R) -> JsonlRecords<R, Claim> {
    JsonlRecords::new(reader)
}

pub fn read_passages<R: BufRead>(reader: R) -> JsonlRecords<R, Passage> {
    JsonlRecords::new(reader)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_articles(path: impl AsRef<Path>) -> Result<Vec<Article>> {
    read_articles(open(path.as_ref())?).collect()
}

pub fn load_claims(path: impl AsRef<Path>) -> Result<Vec<Claim>> {
    read_claims(open(path.as_ref())?).collect()
}

pub fn load_passages(path: impl AsRef<Path>) -> Result<Vec<Passage>> {
    read_passages(open(path.as_ref())?).collect()
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
