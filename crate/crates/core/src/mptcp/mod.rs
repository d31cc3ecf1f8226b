//! Simulated multipath TCP: sessions, subflows, data-sequence mapping,
//! fullmesh path management, schedulers and receiver reassembly.

mod engine;
mod reassembly;
mod session;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::NetType;

pub use engine::{
    secs, to_secs, Coverage, Engine, EngineConfig, EngineEvent, LinkState, MigrationOutcome, SimTime, TraceRow,
};
pub use reassembly::{Delivery, Receiver};
pub use session::{fullmesh_pairs, DsmEntry, DsmLog, MptcpSession, Subflow};

/// The server side has a single interface.
pub const SERVER_IF: u32 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MptcpError {
    #[error("no interface of the client is in coverage of access point {0}")]
    NoCoverage(u32),
    #[error("unknown session {0}")]
    UnknownSession(u32),
    #[error("DSM entry for subflow {subflow_id} SSN {ssn} already exists")]
    ReKey { subflow_id: u32, ssn: u64 },
    #[error("DSN range {dsn}+{len} overlaps an earlier mapping on subflow {subflow_id}")]
    DsnOverlap { subflow_id: u32, dsn: u64, len: u64 },
    #[error("illegal {what} transition {from} -> {to}")]
    IllegalTransition { what: &'static str, from: String, to: String },
    #[error("session {0} is not established")]
    NotEstablished(u32),
    #[error("no established subflow; data stays queued")]
    Stall,
    #[error("a handover is already in flight")]
    HandoverInFlight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubflowState {
    Idle,
    SynSent,
    Established,
    Failed,
    Closed,
}

impl SubflowState {
    pub fn can_become(self, to: SubflowState) -> bool {
        use SubflowState::*;
        matches!((self, to), (Idle, SynSent) | (SynSent, Established) | (SynSent, Failed) | (Established, Closed))
    }

    pub fn is_live(self) -> bool {
        matches!(self, SubflowState::SynSent | SubflowState::Established)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubflowState::Idle => "idle",
            SubflowState::SynSent => "syn_sent",
            SubflowState::Established => "established",
            SubflowState::Failed => "failed",
            SubflowState::Closed => "closed",
        }
    }
}

impl fmt::Display for SubflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SubflowState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "idle" => SubflowState::Idle,
            "syn_sent" => SubflowState::SynSent,
            "established" => SubflowState::Established,
            "failed" => SubflowState::Failed,
            "closed" => SubflowState::Closed,
            other => return Err(format!("unknown subflow state '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Init,
    Established,
    Draining,
    Closed,
}

impl SessionState {
    /// `Draining -> Established` is the resume edge of an aborted migration.
    pub fn can_become(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Init, Established)
                | (Init, Closed)
                | (Established, Draining)
                | (Established, Closed)
                | (Draining, Established)
                | (Draining, Closed)
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    /// Lowest-RTT subflow first, spilling over in RTT order.
    #[default]
    Default,
    /// Every range on every established subflow.
    Redundant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Syn,
    SynAck,
    Ack,
    AddAddress,
    Data,
    Fin,
}

/// In-memory segment record; no wire encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub session_id: u32,
    pub subflow_id: u32,
    pub ssn: u64,
    pub dsn: u64,
    pub len: u64,
    pub kind: SegmentKind,
}

/// One network interface of a host; `attached` is the radio type, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub if_id: u32,
    pub attached: Option<NetType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub host_id: u32,
    pub interfaces: Vec<Interface>,
}

impl Endpoint {
    /// A mobile terminal with one interface per radio type, `if_id` = type index.
    pub fn terminal(host_id: u32, radios: &[NetType]) -> Self {
        let interfaces = radios.iter().map(|&t| Interface { if_id: t.index() as u32, attached: Some(t) }).collect();
        Self { host_id, interfaces }
    }

    pub fn server(host_id: u32) -> Self {
        Self { host_id, interfaces: vec![Interface { if_id: SERVER_IF, attached: None }] }
    }

    pub fn radios(&self) -> Vec<NetType> {
        self.interfaces.iter().filter_map(|i| i.attached).collect()
    }
}
