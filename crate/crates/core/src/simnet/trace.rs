use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{NodeId, Time};
use crate::crypto::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Send,
    Deliver,
    State,
    Ledger,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: Time,
    pub kind: TraceKind,
    #[serde(with = "node_str")]
    pub from: Option<NodeId>,
    #[serde(with = "node_str")]
    pub to: Option<NodeId>,
    pub payload_digest: Option<Digest>,
    pub annotation: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the first record whose annotation contains `needle`.
    pub fn find(&self, needle: &str) -> Option<usize> {
        self.records.iter().position(|r| r.annotation.contains(needle))
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r).expect("trace records serialize");
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

mod node_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::crypto::CommitteeId;
    use crate::simnet::NodeId;

    pub fn serialize<S: Serializer>(n: &Option<NodeId>, s: S) -> Result<S::Ok, S::Error> {
        match n {
            Some(n) => s.serialize_str(&n.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NodeId>, D::Error> {
        let Some(s) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        parse(&s)
            .map(Some)
            .ok_or_else(|| serde::de::Error::custom(format!("bad node id {s}")))
    }

    fn parse(s: &str) -> Option<NodeId> {
        if s == "ledger" {
            return Some(NodeId::Ledger);
        }
        if let Some(rest) = s.strip_prefix('P') {
            return rest.parse().ok().map(NodeId::Party);
        }
        let (c, i) = s.strip_prefix('W')?.split_once('#')?;
        Some(NodeId::Member(CommitteeId(c.parse().ok()?), i.parse().ok()?))
    }
}
