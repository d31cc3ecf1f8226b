use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::session::fullmesh_pairs;
use super::{
    MptcpError, MptcpSession, Receiver, SchedulerMode, Segment, SessionState, Subflow, SubflowState,
};
use crate::mobility::NetType;

/// Simulation time in microseconds.
pub type SimTime = u64;

pub fn secs(t: f64) -> SimTime {
    (t * 1e6).round() as SimTime
}

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / 1e6
}

fn ms(v: f64) -> SimTime {
    (v * 1e3).round() as SimTime
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub scheduler: SchedulerMode,
    pub syn_retry_s: f64,
    pub syn_timeout_s: f64,
    pub stall_grace_s: f64,
    /// Re-run the fullmesh probe when an interface gains coverage.
    pub reprobe_on_coverage_gain: bool,
    pub max_segment_bytes: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scheduler: SchedulerMode::Default,
            syn_retry_s: 1.0,
            syn_timeout_s: 2.0,
            stall_grace_s: 10.0,
            reprobe_on_coverage_gain: true,
            max_segment_bytes: 16_000,
        }
    }
}

/// Link offered to one interface by one access point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub ap_id: u32,
    pub rtt_ms: f64,
    pub bandwidth_kbps: f64,
}

/// Covering access points per interface, preferred first.
pub type Coverage = BTreeMap<NetType, Vec<LinkState>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub t: SimTime,
    pub session_id: u32,
    pub subflow_id: Option<u32>,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MigrationOutcome {
    /// Old session closed after draining.
    Completed { old: u32, new: u32, at: SimTime },
    /// New session never established a subflow; old kept.
    NewSessionFailed { new: u32, at: SimTime },
    /// New session lost every subflow before the old one drained.
    Aborted { old: u32, new: u32, at: SimTime },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub session_id: u32,
    pub subflow_id: u32,
    pub net_type: NetType,
    pub bytes: u64,
    pub state: SubflowState,
}

#[derive(Debug, Clone, PartialEq)]
enum Event {
    HandshakeDone { session: u32, subflow: u32, attempt: u32 },
    SynRetry { session: u32, subflow: u32 },
    SynTimeout { session: u32, subflow: u32 },
    DataArrive(Segment),
    Ack { session: u32, subflow: u32, ssn: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Scheduled {
    t: SimTime,
    seq: u64,
    ev: Event,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (t, seq)
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Migration {
    old: u32,
    new: u32,
    migrated: bool,
}

/// Per-user MPTCP world: client sessions, server receivers and the event queue.
#[derive(Debug, Clone)]
pub struct Engine {
    pub user_id: u32,
    pub config: EngineConfig,
    radios: Vec<NetType>,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    sessions: BTreeMap<u32, MptcpSession>,
    receivers: BTreeMap<u32, Receiver>,
    primary: Option<u32>,
    migration: Option<Migration>,
    coverage: Coverage,
    pending: u64,
    submitted: u64,
    lost: u64,
    next_session: u32,
    next_subflow: u32,
    tick_bytes: BTreeMap<(u32, u32), u64>,
    log: Vec<EngineEvent>,
    outcomes: Vec<MigrationOutcome>,
}

impl Engine {
    pub fn new(user_id: u32, radios: &[NetType], config: EngineConfig) -> Self {
        Self {
            user_id,
            config,
            radios: radios.to_vec(),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            sessions: BTreeMap::new(),
            receivers: BTreeMap::new(),
            primary: None,
            migration: None,
            coverage: Coverage::new(),
            pending: 0,
            submitted: 0,
            lost: 0,
            next_session: 0,
            next_subflow: 0,
            tick_bytes: BTreeMap::new(),
            log: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn primary(&self) -> Option<&MptcpSession> {
        self.primary.and_then(|id| self.sessions.get(&id))
    }

    pub fn session(&self, id: u32) -> Option<&MptcpSession> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &MptcpSession> {
        self.sessions.values()
    }

    pub fn receiver(&self, id: u32) -> Option<&Receiver> {
        self.receivers.get(&id)
    }

    pub fn migrating(&self) -> bool {
        self.migration.is_some()
    }

    pub fn submitted(&self) -> u64 {
        self.submitted
    }

    pub fn delivered(&self) -> u64 {
        self.receivers.values().map(Receiver::delivered).sum()
    }

    pub fn lost(&self) -> u64 {
        self.lost
    }

    pub fn pending(&self) -> u64 {
        self.pending
    }

    pub fn protocol_errors(&self) -> u64 {
        self.receivers.values().map(|r| r.protocol_errors).sum()
    }

    /// Bytes submitted but neither delivered in order nor written off.
    pub fn outstanding(&self) -> u64 {
        self.submitted - self.delivered() - self.lost
    }

    pub fn log(&self) -> &[EngineEvent] {
        &self.log
    }

    pub fn take_outcomes(&mut self) -> Vec<MigrationOutcome> {
        std::mem::take(&mut self.outcomes)
    }

    /// Established subflows summed over the primary and any migration partner.
    pub fn established_subflows(&self) -> usize {
        let mut ids: Vec<u32> = self.primary.into_iter().collect();
        if let Some(m) = self.migration {
            ids.extend([m.old, m.new]);
        }
        ids.sort_unstable();
        ids.dedup();
        ids.iter().filter_map(|id| self.sessions.get(id)).map(MptcpSession::established_count).sum()
    }

    fn note(&mut self, session_id: u32, subflow_id: Option<u32>, kind: &str, detail: String) {
        self.log.push(EngineEvent { t: self.now, session_id, subflow_id, kind: kind.to_string(), detail });
    }

    fn push(&mut self, t: SimTime, ev: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { t, seq: self.seq, ev });
    }

    fn link_for(&self, radio: NetType, ap_id: Option<u32>) -> Option<LinkState> {
        let links = self.coverage.get(&radio)?;
        match ap_id {
            Some(id) => links.iter().find(|l| l.ap_id == id).copied(),
            None => links.first().copied(),
        }
    }

    fn set_subflow_state(&mut self, session: u32, subflow: u32, to: SubflowState) {
        let s = self.sessions.get_mut(&session).expect("known session");
        let sf = s.subflow_mut(subflow).expect("known subflow");
        let from = sf.transition(to).expect("engine only walks legal subflow edges");
        self.note(session, Some(subflow), "subflow_state", format!("{from}->{to}"));
    }

    fn set_session_state(&mut self, session: u32, to: SessionState) {
        let s = self.sessions.get_mut(&session).expect("known session");
        let from = s.transition(to).expect("engine only walks legal session edges");
        self.note(session, None, "session_state", format!("{from}->{to}"));
    }

    /// Creates a subflow and sends its SYN. Without coverage the SYN goes
    /// nowhere and the attempt times out.
    fn open_subflow(&mut self, session: u32, radio: NetType, ap_id: Option<u32>) -> u32 {
        let link = self.link_for(radio, ap_id);
        let id = self.next_subflow;
        self.next_subflow += 1;
        let sf = Subflow::new(
            id,
            radio,
            link.map(|l| l.ap_id).or(ap_id),
            link.map_or(0.0, |l| l.rtt_ms),
            link.map_or(0.0, |l| l.bandwidth_kbps),
        );
        self.sessions.get_mut(&session).expect("known session").subflows.push(sf);
        self.note(session, Some(id), "subflow_open", format!("{radio} ap={}", ap_id.or(link.map(|l| l.ap_id)).map_or("-".into(), |a| a.to_string())));
        self.set_subflow_state(session, id, SubflowState::SynSent);
        self.send_syn(session, id);
        let now = self.now;
        self.push(now + secs(self.config.syn_retry_s), Event::SynRetry { session, subflow: id });
        self.push(now + secs(self.config.syn_timeout_s), Event::SynTimeout { session, subflow: id });
        id
    }

    fn send_syn(&mut self, session: u32, subflow: u32) {
        let s = self.sessions.get_mut(&session).expect("known session");
        let sf = s.subflow_mut(subflow).expect("known subflow");
        sf.syn_attempts += 1;
        let (radio, ap, attempt) = (sf.local_if, sf.ap_id, sf.syn_attempts);
        self.note(session, Some(subflow), "syn", format!("attempt {attempt}"));
        if let Some(link) = self.link_for(radio, ap) {
            let s = self.sessions.get_mut(&session).unwrap();
            let sf = s.subflow_mut(subflow).unwrap();
            sf.ap_id = Some(link.ap_id);
            sf.update_link(link.rtt_ms, link.bandwidth_kbps);
            // SYN, SYN/ACK and the final ACK take one and a half round trips
            let done = self.now + ms(1.5 * link.rtt_ms);
            self.push(done, Event::HandshakeDone { session, subflow, attempt });
        }
    }

    /// Opens a session whose first subflow runs over `radio` to `ap_id`.
    pub fn open_session(&mut self, radio: NetType, ap_id: u32) -> Result<u32, MptcpError> {
        if !self.radios.contains(&radio) || self.link_for(radio, Some(ap_id)).is_none() {
            return Err(MptcpError::NoCoverage(ap_id));
        }
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, MptcpSession::new(id, ap_id, self.config.scheduler));
        self.receivers.insert(id, Receiver::default());
        self.note(id, None, "session_open", format!("via {radio} ap={ap_id}"));
        self.open_subflow(id, radio, Some(ap_id));
        if self.primary.is_none() {
            self.primary = Some(id);
        }
        Ok(id)
    }

    /// Starts a make-before-break handover: a new session is opened toward
    /// `ap_id` and traffic moves over once it is established.
    pub fn begin_handover(&mut self, radio: NetType, ap_id: u32) -> Result<u32, MptcpError> {
        if self.migration.is_some() {
            return Err(MptcpError::HandoverInFlight);
        }
        let old = self.primary.ok_or(MptcpError::NotEstablished(u32::MAX))?;
        let new = self.open_session(radio, ap_id)?;
        self.migration = Some(Migration { old, new, migrated: false });
        self.note(new, None, "handover_begin", format!("from session {old}"));
        Ok(new)
    }

    fn fullmesh_probe(&mut self, session: u32, only: Option<&[NetType]>) {
        let Some(s) = self.sessions.get(&session) else { return };
        let radios: Vec<NetType> = match only {
            Some(r) => self.radios.iter().copied().filter(|t| r.contains(t)).collect(),
            None => self.radios.clone(),
        };
        for (radio, _) in fullmesh_pairs(s, &radios) {
            self.open_subflow(session, radio, None);
        }
    }

    fn on_established(&mut self, session: u32) {
        self.set_session_state(session, SessionState::Established);
        let extra: Vec<NetType> = {
            let s = &self.sessions[&session];
            self.radios.iter().copied().filter(|r| !s.subflows.iter().any(|f| f.local_if == *r)).collect()
        };
        for r in &extra {
            self.note(session, None, "add_address", r.to_string());
        }
        self.fullmesh_probe(session, None);
        if let Some(m) = self.migration.filter(|m| m.new == session && !m.migrated) {
            self.migrate(m.old, m.new);
        }
    }

    /// Moves traffic from `old` to `new`: `old` drains and closes once its
    /// unacknowledged bytes reach zero.
    fn migrate(&mut self, old: u32, new: u32) {
        if self.sessions[&old].state == SessionState::Established {
            self.set_session_state(old, SessionState::Draining);
        }
        self.primary = Some(new);
        if let Some(m) = self.migration.as_mut() {
            m.migrated = true;
        }
        self.note(new, None, "migrate", format!("session {old} draining"));
        self.check_drained(old);
    }

    fn check_drained(&mut self, session: u32) {
        let s = &self.sessions[&session];
        if s.state != SessionState::Draining || s.unacked_bytes() > 0 {
            return;
        }
        let live: Vec<u32> = s.established().map(|f| f.subflow_id).collect();
        for id in live {
            self.note(session, Some(id), "fin", String::new());
            self.set_subflow_state(session, id, SubflowState::Closed);
        }
        self.set_session_state(session, SessionState::Closed);
        if let Some(m) = self.migration.filter(|m| m.old == session) {
            self.outcomes.push(MigrationOutcome::Completed { old: m.old, new: m.new, at: self.now });
            self.note(m.new, None, "handover_complete", format!("session {} closed", m.old));
            self.migration = None;
        }
    }

    /// Writes off the undelivered part of a session's DSN space.
    fn close_with_loss(&mut self, session: u32, reason: &str) {
        let delivered = self.receivers[&session].delivered();
        let s = self.sessions.get_mut(&session).unwrap();
        let lost = s.dsn_next - delivered;
        s.reinject.clear();
        for sf in &mut s.subflows {
            sf.in_flight.clear();
        }
        self.lost += lost;
        let live: Vec<u32> = s.established().map(|f| f.subflow_id).collect();
        for id in live {
            self.set_subflow_state(session, id, SubflowState::Closed);
        }
        self.set_session_state(session, SessionState::Closed);
        self.note(session, None, "session_lost", format!("{reason}; {lost} bytes written off"));
        if self.primary == Some(session) {
            self.primary = None;
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::HandshakeDone { session, subflow, attempt } => {
                let s = &self.sessions[&session];
                if s.state == SessionState::Closed {
                    return;
                }
                let sf = s.subflow(subflow).unwrap();
                if sf.state != SubflowState::SynSent || sf.syn_attempts != attempt {
                    return;
                }
                if self.link_for(sf.local_if, sf.ap_id).is_none() {
                    return;
                }
                self.set_subflow_state(session, subflow, SubflowState::Established);
                let state = self.sessions[&session].state;
                if state == SessionState::Init {
                    self.on_established(session);
                }
                self.sessions.get_mut(&session).unwrap().stall_since = None;
            }
            Event::SynRetry { session, subflow } => {
                let s = &self.sessions[&session];
                if s.state != SessionState::Closed && s.subflow(subflow).unwrap().state == SubflowState::SynSent {
                    self.send_syn(session, subflow);
                }
            }
            Event::SynTimeout { session, subflow } => {
                let s = &self.sessions[&session];
                if s.state == SessionState::Closed || s.subflow(subflow).unwrap().state != SubflowState::SynSent {
                    return;
                }
                self.set_subflow_state(session, subflow, SubflowState::Failed);
                let s = &self.sessions[&session];
                if s.state == SessionState::Init && !s.has_live_subflow() {
                    self.set_session_state(session, SessionState::Closed);
                    if let Some(m) = self.migration.filter(|m| m.new == session) {
                        self.outcomes.push(MigrationOutcome::NewSessionFailed { new: session, at: self.now });
                        self.note(session, None, "handover_failed", "no subflow established".into());
                        self.migration = None;
                        self.primary = Some(m.old);
                    } else if self.primary == Some(session) {
                        self.primary = None;
                    }
                }
                self.check_stall(session);
            }
            Event::DataArrive(seg) => {
                let alive = self.sessions[&seg.session_id]
                    .subflow(seg.subflow_id)
                    .is_some_and(|f| f.state == SubflowState::Established);
                if !alive {
                    return;
                }
                let d = self.receivers.get_mut(&seg.session_id).unwrap().deliver(&seg);
                if !d.accepted {
                    self.note(seg.session_id, Some(seg.subflow_id), "protocol_error", format!("dsn {}", seg.dsn));
                }
            }
            Event::Ack { session, subflow, ssn } => {
                if self.sessions.get_mut(&session).unwrap().acknowledge(subflow, ssn) {
                    self.check_drained(session);
                }
            }
        }
    }

    /// Processes every queued event up to and including `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        while let Some(top) = self.queue.peek() {
            if top.t > t {
                break;
            }
            let Scheduled { t: at, ev, .. } = self.queue.pop().unwrap();
            self.now = self.now.max(at);
            self.handle(ev);
        }
        self.now = self.now.max(t);
        self.expire_stalls();
    }

    fn check_stall(&mut self, session: u32) {
        let now = self.now;
        let s = self.sessions.get_mut(&session).unwrap();
        if !matches!(s.state, SessionState::Established | SessionState::Draining) {
            return;
        }
        if s.established_count() == 0 {
            if s.stall_since.is_none() {
                s.stall_since = Some(now);
                self.note(session, None, "stall", String::new());
            }
            if let Some(m) = self.migration.filter(|m| m.new == session && m.migrated) {
                self.abort_migration(m);
            }
        } else {
            s.stall_since = None;
        }
    }

    fn abort_migration(&mut self, m: Migration) {
        self.migration = None;
        self.close_with_loss(m.new, "migration aborted");
        if self.sessions[&m.old].state == SessionState::Draining {
            self.set_session_state(m.old, SessionState::Established);
        }
        if self.sessions[&m.old].state == SessionState::Established {
            self.primary = Some(m.old);
        }
        self.outcomes.push(MigrationOutcome::Aborted { old: m.old, new: m.new, at: self.now });
        self.note(m.old, None, "handover_aborted", format!("session {} lost all subflows", m.new));
    }

    fn expire_stalls(&mut self) {
        let grace = secs(self.config.stall_grace_s);
        let expired: Vec<u32> = self
            .sessions
            .values()
            .filter(|s| matches!(s.state, SessionState::Established | SessionState::Draining))
            .filter(|s| s.stall_since.is_some_and(|t0| self.now >= t0 + grace))
            .map(|s| s.session_id)
            .collect();
        for id in expired {
            self.close_with_loss(id, "stall grace expired");
            if let Some(m) = self.migration.filter(|m| m.old == id) {
                self.outcomes.push(MigrationOutcome::Completed { old: m.old, new: m.new, at: self.now });
                self.migration = None;
            }
        }
    }

    /// Applies a coverage update: lost paths close their subflows and requeue
    /// in-flight data; gained interfaces may trigger a new fullmesh probe.
    pub fn on_link_change(&mut self, coverage: Coverage) {
        let gained: Vec<NetType> = coverage
            .iter()
            .filter(|(t, links)| !links.is_empty() && self.coverage.get(t).is_none_or(|l| l.is_empty()))
            .map(|(t, _)| *t)
            .collect();
        self.coverage = coverage;
        let ids: Vec<u32> = self.sessions.keys().copied().collect();
        for id in ids {
            if self.sessions[&id].state == SessionState::Closed {
                continue;
            }
            let subflows: Vec<(u32, NetType, Option<u32>, SubflowState)> = self.sessions[&id]
                .subflows
                .iter()
                .map(|f| (f.subflow_id, f.local_if, f.ap_id, f.state))
                .collect();
            for (sid, radio, ap, state) in subflows {
                if state != SubflowState::Established {
                    continue;
                }
                match self.link_for(radio, ap) {
                    Some(link) => {
                        self.sessions.get_mut(&id).unwrap().subflow_mut(sid).unwrap().update_link(link.rtt_ms, link.bandwidth_kbps)
                    }
                    None => {
                        self.set_subflow_state(id, sid, SubflowState::Closed);
                        let requeued = self.sessions.get_mut(&id).unwrap().requeue_in_flight(sid);
                        self.note(id, Some(sid), "link_loss", format!("{requeued} bytes requeued"));
                    }
                }
            }
            self.check_stall(id);
        }
        if gained.is_empty() {
            return;
        }
        let ids: Vec<u32> = self.sessions.keys().copied().collect();
        for id in ids {
            let s = &self.sessions[&id];
            let stalled = s.stall_since.is_some();
            let active = s.state == SessionState::Established;
            if active && (self.config.reprobe_on_coverage_gain || stalled) {
                self.fullmesh_probe(id, Some(&gained));
            }
        }
    }

    pub fn submit(&mut self, bytes: u64) {
        self.pending += bytes;
        self.submitted += bytes;
    }

    /// Runs the scheduler for one tick. `share` maps an AP to the bytes each
    /// attached subflow may carry this tick.
    pub fn schedule(&mut self, tick_s: f64, share: &BTreeMap<u32, f64>) {
        let mut order: Vec<u32> = Vec::new();
        if let Some(m) = self.migration {
            order.push(m.old);
        }
        if let Some(p) = self.primary {
            if !order.contains(&p) {
                order.push(p);
            }
        }
        for id in order {
            let s = &self.sessions[&id];
            if !matches!(s.state, SessionState::Established | SessionState::Draining) {
                continue;
            }
            let allowance: BTreeMap<u32, u64> = s
                .established()
                .map(|f| {
                    let cap = f.ap_id.and_then(|a| share.get(&a)).copied().unwrap_or(0.0);
                    (f.subflow_id, f.cwnd_allowance(tick_s).min(cap).max(0.0).floor() as u64)
                })
                .collect();
            let pending = if self.primary == Some(id) { self.pending } else { 0 };
            let max_seg = self.config.max_segment_bytes;
            let s = self.sessions.get_mut(&id).unwrap();
            let (segs, taken) = match s.schedule(pending, &allowance, max_seg) {
                Ok(v) => v,
                Err(MptcpError::Stall) => continue,
                Err(e) => panic!("scheduler invariant violated: {e}"),
            };
            self.pending -= taken;
            for seg in segs {
                let rtt = self.sessions[&id].subflow(seg.subflow_id).unwrap().rtt_ms;
                *self.tick_bytes.entry((id, seg.subflow_id)).or_default() += seg.len;
                self.push(self.now + ms(rtt / 2.0), Event::DataArrive(seg));
                self.push(self.now + ms(rtt), Event::Ack { session: id, subflow: seg.subflow_id, ssn: seg.ssn });
            }
            self.check_drained(id);
        }
    }

    /// Per-subflow bytes sent since the previous call, one row per subflow
    /// that is live or carried data.
    pub fn take_trace(&mut self, t: f64) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        for s in self.sessions.values() {
            for f in &s.subflows {
                let bytes = self.tick_bytes.get(&(s.session_id, f.subflow_id)).copied().unwrap_or(0);
                if bytes > 0 || f.state.is_live() {
                    rows.push(TraceRow {
                        t,
                        session_id: s.session_id,
                        subflow_id: f.subflow_id,
                        net_type: f.local_if,
                        bytes,
                        state: f.state,
                    });
                }
            }
        }
        self.tick_bytes.clear();
        rows
    }

    pub fn has_queued_events(&self) -> bool {
        !self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(ap_id: u32, rtt_ms: f64) -> LinkState {
        LinkState { ap_id, rtt_ms, bandwidth_kbps: 8000.0 }
    }

    fn cov(entries: &[(NetType, LinkState)]) -> Coverage {
        let mut c = Coverage::new();
        for &(t, l) in entries {
            c.entry(t).or_default().push(l);
        }
        c
    }

    fn share(aps: &[u32]) -> BTreeMap<u32, f64> {
        aps.iter().map(|&a| (a, 100_000.0)).collect()
    }

    #[test]
    fn single_path_handshake_timing() {
        let mut e = Engine::new(1, &[NetType::Lte, NetType::Wlan], EngineConfig::default());
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        let id = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(0.059));
        assert_eq!(e.session(id).unwrap().state, SessionState::Init);
        e.advance_to(secs(0.060));
        assert_eq!(e.session(id).unwrap().state, SessionState::Established);
        assert_eq!(e.session(id).unwrap().established_count(), 1);
        // the WLAN probe has no coverage and fails after the timeout
        e.advance_to(secs(2.1));
        let s = e.session(id).unwrap();
        assert_eq!(s.established_count(), 1);
        assert_eq!(s.subflows.iter().filter(|f| f.state == SubflowState::Failed).count(), 1);
        assert_eq!(s.state, SessionState::Established);
    }

    #[test]
    fn fullmesh_builds_two_subflows() {
        let mut e = Engine::new(1, &[NetType::Lte, NetType::Wlan], EngineConfig::default());
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0)), (NetType::Wlan, link(2, 20.0))]));
        let id = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(0.2));
        assert_eq!(e.session(id).unwrap().established_count(), 2);
    }

    #[test]
    fn open_without_coverage_fails() {
        let mut e = Engine::new(1, &[NetType::Lte], EngineConfig::default());
        assert_eq!(e.open_session(NetType::Lte, 1), Err(MptcpError::NoCoverage(1)));
    }

    #[test]
    fn link_loss_keeps_session_on_other_path() {
        let mut e = Engine::new(1, &[NetType::Lte, NetType::Wlan], EngineConfig::default());
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0)), (NetType::Wlan, link(2, 20.0))]));
        let id = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(0.5));
        e.submit(50_000);
        e.schedule(1.0, &share(&[1, 2]));
        e.on_link_change(cov(&[(NetType::Wlan, link(2, 20.0))]));
        let s = e.session(id).unwrap();
        assert_eq!(s.state, SessionState::Established);
        assert_eq!(s.established_count(), 1);
        for k in 1..5 {
            e.advance_to(secs(0.5 + k as f64));
            e.schedule(1.0, &share(&[2]));
        }
        e.advance_to(secs(10.0));
        assert_eq!(e.delivered(), 50_000);
    }

    #[test]
    fn total_loss_stalls_then_closes() {
        let mut e = Engine::new(1, &[NetType::Lte], EngineConfig::default());
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        let id = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(1.0));
        e.on_link_change(Coverage::new());
        assert_eq!(e.session(id).unwrap().state, SessionState::Established);
        assert!(e.session(id).unwrap().stall_since.is_some());
        e.advance_to(secs(5.0));
        assert_eq!(e.session(id).unwrap().state, SessionState::Established);
        e.advance_to(secs(11.0));
        assert_eq!(e.session(id).unwrap().state, SessionState::Closed);
        assert!(e.primary().is_none());
    }

    #[test]
    fn stall_recovers_on_recoverage() {
        let mut e = Engine::new(1, &[NetType::Lte], EngineConfig { reprobe_on_coverage_gain: false, ..Default::default() });
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        let id = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(1.0));
        e.on_link_change(Coverage::new());
        e.advance_to(secs(3.0));
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        e.advance_to(secs(3.5));
        let s = e.session(id).unwrap();
        assert_eq!(s.established_count(), 1);
        assert!(s.stall_since.is_none());
    }

    #[test]
    fn migration_drains_then_closes_old() {
        let mut e = Engine::new(1, &[NetType::Lte, NetType::Wlan], EngineConfig { reprobe_on_coverage_gain: false, ..Default::default() });
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        let old = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(3.0));
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0)), (NetType::Wlan, link(2, 20.0))]));
        // no reprobe: the old session stays single-path
        e.advance_to(secs(4.0));
        assert_eq!(e.session(old).unwrap().established_count(), 1);
        e.submit(10_000);
        e.schedule(1.0, &share(&[1, 2]));
        let new = e.begin_handover(NetType::Wlan, 2).unwrap();
        assert_eq!(e.begin_handover(NetType::Wlan, 2), Err(MptcpError::HandoverInFlight));
        // 10 kB in flight on the old session, new established at +30 ms
        e.advance_to(secs(4.035));
        assert_eq!(e.session(old).unwrap().state, SessionState::Draining);
        assert_eq!(e.session(new).unwrap().state, SessionState::Established);
        e.advance_to(secs(4.041));
        assert_eq!(e.session(old).unwrap().state, SessionState::Closed);
        let out = e.take_outcomes();
        assert!(matches!(out[..], [MigrationOutcome::Completed { .. }]));
        e.advance_to(secs(4.5));
        assert_eq!(e.session(new).unwrap().established_count(), 2);
        e.submit(5_000);
        e.schedule(1.0, &share(&[1, 2]));
        e.advance_to(secs(6.0));
        assert_eq!(e.delivered(), 15_000);
        assert_eq!(e.outstanding(), 0);
    }

    #[test]
    fn failed_new_session_keeps_old() {
        let mut e = Engine::new(1, &[NetType::Lte, NetType::Wlan], EngineConfig::default());
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0)), (NetType::Wlan, link(2, 20.0))]));
        let old = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(1.0));
        let new = e.begin_handover(NetType::Wlan, 2).unwrap();
        // coverage of the target vanishes before the handshake completes
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        e.advance_to(secs(3.5));
        assert_eq!(e.session(new).unwrap().state, SessionState::Closed);
        assert_eq!(e.primary().unwrap().session_id, old);
        assert!(matches!(e.take_outcomes()[..], [MigrationOutcome::NewSessionFailed { .. }]));
        assert!(!e.migrating());
    }

    #[test]
    fn new_session_losing_all_paths_aborts() {
        let mut e = Engine::new(1, &[NetType::Wlan, NetType::Lte], EngineConfig { reprobe_on_coverage_gain: false, ..Default::default() });
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        let old = e.open_session(NetType::Lte, 1).unwrap();
        e.advance_to(secs(3.0));
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0)), (NetType::Wlan, link(2, 20.0))]));
        // keep the old session busy so it cannot drain immediately
        e.submit(1_000_000);
        e.schedule(1.0, &share(&[1]));
        let new = e.begin_handover(NetType::Wlan, 2).unwrap();
        e.advance_to(secs(3.031));
        assert_eq!(e.primary().unwrap().session_id, new);
        e.on_link_change(cov(&[(NetType::Lte, link(1, 40.0))]));
        // the new session's LTE probe is still pending; drop that too
        let live_lte = e.session(new).unwrap().established().any(|f| f.local_if == NetType::Lte);
        assert!(!live_lte);
        assert!(matches!(e.take_outcomes()[..], [MigrationOutcome::Aborted { .. }]));
        assert_eq!(e.primary().unwrap().session_id, old);
        assert_eq!(e.session(old).unwrap().state, SessionState::Established);
    }
}
