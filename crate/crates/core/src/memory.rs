//! Structured external memory: stored evidence, the phase trace, rejected
//! proposals and approved decisions.
//!
//! Every mutation is append-only. When a journal path is given, each record is
//! written as one JSON object per line and flushed before the call returns, so
//! replaying the file rebuilds an equal store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{canonical_evidence_key, make_evidence_ref, EvidenceKey, EvidenceRef, ToolCall};
use crate::tools::ToolResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub key: EvidenceKey,
    #[serde(rename = "ref")]
    pub reference: EvidenceRef,
    pub payload: Value,
    pub loop_index: u32,
    pub origin_tool: String,
    /// Category/slug pair the ref counter is keyed on.
    pub category: String,
    pub slug: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub plan_label: String,
    pub reason: String,
    pub loop_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    pub payload: Value,
}

/// An approved non-tool decision, e.g. a validated allocation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub label: String,
    pub justification: String,
    pub loop_index: u32,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Retrieval,
    Cognition,
    Control,
    Action,
    Memory,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Retrieval => "Retrieval",
            Phase::Cognition => "Cognition",
            Phase::Control => "Control",
            Phase::Action => "Action",
            Phase::Memory => "Memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub loop_index: u32,
    pub loop_label: String,
    pub phase: Phase,
    pub body: Value,
    /// Wall-clock side channel; never part of the deterministic audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<u64>,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("evidence already stored under {0}")]
    DuplicateKey(EvidenceKey),
    #[error("evidence ref {0} already in use")]
    DuplicateRef(EvidenceRef),
    #[error("trace seq {got} is not greater than last seq {last}")]
    NonMonotoneSeq { last: u64, got: u64 },
    #[error("memory journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("memory journal: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum JournalRecord {
    Evidence(Evidence),
    Trace(TraceEntry),
    Rejection(RejectionRecord),
    Decision(DecisionRecord),
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    evidence: Vec<Arc<Evidence>>,
    by_key: HashMap<EvidenceKey, usize>,
    by_ref: HashMap<EvidenceRef, usize>,
    ref_counters: HashMap<(String, String), u32>,
    trace: Vec<TraceEntry>,
    rejections: Vec<RejectionRecord>,
    decisions: Vec<DecisionRecord>,
    journal: Option<File>,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.evidence == other.evidence
            && self.trace == other.trace
            && self.rejections == other.rejections
            && self.decisions == other.decisions
    }
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal file, replaying whatever it already holds.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let mut store = Self::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord = serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                store.apply(record).map_err(|e| MemoryError::Corrupt {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            }
        }
        store.journal = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(store)
    }

    /// A detached, read-only copy for concurrent readers.
    pub fn snapshot(&self) -> MemoryStore {
        MemoryStore {
            evidence: self.evidence.clone(),
            by_key: self.by_key.clone(),
            by_ref: self.by_ref.clone(),
            ref_counters: self.ref_counters.clone(),
            trace: self.trace.clone(),
            rejections: self.rejections.clone(),
            decisions: self.decisions.clone(),
            journal: None,
        }
    }

    fn apply(&mut self, record: JournalRecord) -> Result<(), MemoryError> {
        match record {
            JournalRecord::Evidence(ev) => self.insert_evidence(ev),
            JournalRecord::Trace(t) => {
                self.check_seq(t.seq)?;
                self.trace.push(t);
                Ok(())
            }
            JournalRecord::Rejection(r) => {
                self.rejections.push(r);
                Ok(())
            }
            JournalRecord::Decision(d) => {
                self.decisions.push(d);
                Ok(())
            }
        }
    }

    fn persist(&mut self, record: &JournalRecord) -> Result<(), MemoryError> {
        if let Some(file) = self.journal.as_mut() {
            let mut line = serde_json::to_string(record).expect("journal records serialize");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Ok(())
    }

    fn insert_evidence(&mut self, ev: Evidence) -> Result<(), MemoryError> {
        if self.by_key.contains_key(&ev.key) {
            return Err(MemoryError::DuplicateKey(ev.key));
        }
        if self.by_ref.contains_key(&ev.reference) {
            return Err(MemoryError::DuplicateRef(ev.reference));
        }
        let counter = self
            .ref_counters
            .entry((ev.category.clone(), ev.slug.clone()))
            .or_default();
        *counter += 1;
        let idx = self.evidence.len();
        self.by_key.insert(ev.key.clone(), idx);
        self.by_ref.insert(ev.reference.clone(), idx);
        self.evidence.push(Arc::new(ev));
        Ok(())
    }

    fn check_seq(&self, seq: u64) -> Result<(), MemoryError> {
        match self.trace.last() {
            Some(last) if seq <= last.seq => Err(MemoryError::NonMonotoneSeq {
                last: last.seq,
                got: seq,
            }),
            _ => Ok(()),
        }
    }

    /// Stores a tool result under its canonical key with a fresh citable ref.
    /// The ref counter runs per (category, slug), so the first Miami reading is
    /// `wx-miami-001` regardless of how many other cities came before it.
    pub fn put_evidence(
        &mut self,
        call: &ToolCall,
        result: &ToolResult,
        loop_index: u32,
    ) -> Result<Evidence, MemoryError> {
        let key = canonical_evidence_key(call);
        if self.by_key.contains_key(&key) {
            return Err(MemoryError::DuplicateKey(key));
        }
        let slug = crate::domain::slugify(&result.slug_source);
        let category = crate::domain::slugify(&result.category);
        let seq = self
            .ref_counters
            .get(&(category.clone(), slug.clone()))
            .copied()
            .unwrap_or(0)
            + 1;
        let ev = Evidence {
            key,
            reference: make_evidence_ref(&category, &slug, seq),
            payload: result.payload.clone(),
            loop_index,
            origin_tool: call.tool().to_owned(),
            category,
            slug,
        };
        let record = JournalRecord::Evidence(ev.clone());
        self.insert_evidence(ev.clone())?;
        self.persist(&record)?;
        Ok(ev)
    }

    pub fn lookup(&self, key: &EvidenceKey) -> Option<&Evidence> {
        self.by_key.get(key).map(|&i| self.evidence[i].as_ref())
    }

    pub fn lookup_call(&self, call: &ToolCall) -> Option<&Evidence> {
        self.lookup(&canonical_evidence_key(call))
    }

    pub fn by_ref(&self, reference: &EvidenceRef) -> Option<&Evidence> {
        self.by_ref.get(reference).map(|&i| self.evidence[i].as_ref())
    }

    pub fn evidence(&self) -> impl DoubleEndedIterator<Item = &Evidence> {
        self.evidence.iter().map(Arc::as_ref)
    }

    pub fn evidence_len(&self) -> usize {
        self.evidence.len()
    }

    pub fn next_seq(&self) -> u64 {
        self.trace.last().map_or(1, |t| t.seq + 1)
    }

    pub fn record_trace(&mut self, entry: TraceEntry) -> Result<(), MemoryError> {
        self.check_seq(entry.seq)?;
        let record = JournalRecord::Trace(entry);
        self.persist(&record)?;
        let JournalRecord::Trace(entry) = record else {
            unreachable!()
        };
        self.trace.push(entry);
        Ok(())
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn record_rejection(&mut self, record: RejectionRecord) -> Result<(), MemoryError> {
        let record = JournalRecord::Rejection(record);
        self.persist(&record)?;
        let JournalRecord::Rejection(r) = record else {
            unreachable!()
        };
        self.rejections.push(r);
        Ok(())
    }

    pub fn rejections(&self) -> &[RejectionRecord] {
        &self.rejections
    }

    pub fn record_decision(&mut self, record: DecisionRecord) -> Result<(), MemoryError> {
        let record = JournalRecord::Decision(record);
        self.persist(&record)?;
        let JournalRecord::Decision(d) = record else {
            unreachable!()
        };
        self.decisions.push(d);
        Ok(())
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }
}
