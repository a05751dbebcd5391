use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Initial broadcast of a node at time 0 (global index 0).
    Init,
    Activate,
    Deliver,
}

/// One line of a JSONL trace.
///
/// Activation and init records carry the post-update state and list the ids
/// of the messages they sent, in increasing destination order. Deliver
/// records name the receiving node and the delivered message id. `k` is the
/// global activation-instant index (deliveries carry the latest index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: u64,
    pub t: f64,
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub node: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_before: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_after: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumed: Option<usize>,
    pub msgs: Vec<u64>,
}

impl TraceRecord {
    pub fn deliver(k: u64, t: f64, node: NodeId, msg: u64) -> Self {
        Self {
            k,
            t,
            kind: EventKind::Deliver,
            node,
            l_before: None,
            l_after: None,
            alpha: None,
            y: None,
            z: None,
            x: None,
            consumed: None,
            msgs: vec![msg],
        }
    }

    pub fn is_activation(&self) -> bool {
        self.kind == EventKind::Activate
    }
}

/// Ordered event log of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn activations(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.is_activation())
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.kind == EventKind::Deliver)
    }

    /// Number of activation instants (the final global index).
    pub fn instants(&self) -> u64 {
        self.activations().map(|r| r.k).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        self.records.iter().map(|r| r.node + 1).max().unwrap_or(0)
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Trace> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Config {
                path: format!("trace line {}", i + 1),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Trace { records })
    }
}
