//! JSON Lines access traces.
//!
//! One event per line: `{"ts_ms":0,"path":"/d/a.jpg#0","offset":0,"length":4194304,"job":"j1"}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namespace::{BlockId, ItemPath, NamespaceCatalog};

/// One read request observed by the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    #[serde(rename = "ts_ms")]
    pub timestamp_ms: u64,
    pub path: ItemPath,
    #[serde(rename = "offset")]
    pub offset_bytes: u64,
    #[serde(rename = "length")]
    pub length_bytes: u64,
    #[serde(rename = "job")]
    pub job_id: String,
}

impl AccessEvent {
    /// Blocks touched by this event. An explicit `#block` suffix wins;
    /// otherwise the byte range is mapped onto blocks.
    pub fn blocks(&self, catalog: &NamespaceCatalog) -> Result<Vec<BlockId>> {
        let item = self.path.item_str();
        let file = catalog
            .file_id(&item)
            .ok_or_else(|| Error::Lookup(item.clone()))?;
        if self.path.block().is_some() {
            return Ok(vec![catalog.resolve_block(&self.path)?]);
        }
        let bs = catalog.block_size();
        let first = self.offset_bytes / bs;
        let last = (self.offset_bytes + self.length_bytes.max(1) - 1) / bs;
        let blocks = catalog.block_count(&item).unwrap_or(0).max(1);
        Ok((first..=last.min(blocks - 1))
            .map(|block| BlockId { file, block })
            .collect())
    }
}

/// Reads a trace, checking that every line parses and timestamps never
/// decrease. Blank lines are skipped.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<AccessEvent>> {
    let mut events = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: AccessEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if ev.length_bytes == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "length must be positive".into(),
            });
        }
        if let Some(p) = prev {
            if ev.timestamp_ms < p {
                return Err(Error::Ordering {
                    line: line_no,
                    ts_ms: ev.timestamp_ms,
                    prev_ms: p,
                });
            }
        }
        prev = Some(ev.timestamp_ms);
        events.push(ev);
    }
    Ok(events)
}

pub fn parse_trace_str(s: &str) -> Result<Vec<AccessEvent>> {
    parse_trace(s.as_bytes())
}

pub fn write_trace<W: Write>(mut w: W, events: &[AccessEvent]) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(events: &[AccessEvent]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, events).expect("in-memory write");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Checks that every event resolves in the catalog and stays within the file.
pub fn validate_trace(events: &[AccessEvent], catalog: &NamespaceCatalog) -> Result<()> {
    for ev in events {
        let item = ev.path.item_str();
        let size = catalog
            .file_size(&item)
            .ok_or_else(|| Error::Lookup(item.clone()))?;
        if ev.path.block().is_some() {
            catalog.resolve_block(&ev.path)?;
        }
        if ev.offset_bytes + ev.length_bytes > size {
            return Err(Error::Domain(format!(
                "{}: offset {} + length {} exceeds file size {size}",
                ev.path, ev.offset_bytes, ev.length_bytes
            )));
        }
    }
    Ok(())
}
