use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{MptcpError, SchedulerMode, Segment, SegmentKind, SessionState, SubflowState, SERVER_IF};
use crate::mobility::NetType;

/// One SSN range mapped onto a DSN range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsmEntry {
    pub subflow_id: u32,
    pub ssn: u64,
    pub dsn: u64,
    pub len: u64,
}

/// Append-only data sequence map keyed by `(subflow_id, ssn)`.
///
/// DSN ranges are disjoint per subflow. Reinjection deliberately maps one
/// DSN range onto several subflows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DsmLog {
    entries: BTreeMap<(u32, u64), DsmEntry>,
    by_dsn: BTreeMap<(u32, u64), u64>,
}

impl DsmLog {
    pub fn append(&mut self, e: DsmEntry) -> Result<(), MptcpError> {
        if self.entries.contains_key(&(e.subflow_id, e.ssn)) {
            return Err(MptcpError::ReKey { subflow_id: e.subflow_id, ssn: e.ssn });
        }
        let end = e.dsn + e.len;
        let overlap = self
            .by_dsn
            .range((e.subflow_id, 0)..(e.subflow_id, end))
            .next_back()
            .is_some_and(|(&(_, start), &len)| start + len > e.dsn);
        if overlap {
            return Err(MptcpError::DsnOverlap { subflow_id: e.subflow_id, dsn: e.dsn, len: e.len });
        }
        self.entries.insert((e.subflow_id, e.ssn), e);
        self.by_dsn.insert((e.subflow_id, e.dsn), e.len);
        Ok(())
    }

    pub fn get(&self, subflow_id: u32, ssn: u64) -> Option<&DsmEntry> {
        self.entries.get(&(subflow_id, ssn))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DsmEntry> {
        self.entries.values()
    }

    /// True when `seg` carries exactly the mapping recorded for it.
    pub fn consistent(&self, seg: &Segment) -> bool {
        self.get(seg.subflow_id, seg.ssn).is_some_and(|e| e.dsn == seg.dsn && e.len == seg.len)
    }
}

/// Unacknowledged data segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct InFlight {
    pub ssn: u64,
    pub dsn: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subflow {
    pub subflow_id: u32,
    pub local_if: NetType,
    pub remote_if: u32,
    /// Access point carrying the path; `None` for a SYN sent without coverage.
    pub ap_id: Option<u32>,
    pub state: SubflowState,
    pub ssn_next: u64,
    pub rtt_ms: f64,
    pub cwnd_bytes: f64,
    pub syn_attempts: u32,
    pub(crate) in_flight: VecDeque<InFlight>,
}

impl Subflow {
    pub fn new(subflow_id: u32, local_if: NetType, ap_id: Option<u32>, rtt_ms: f64, bandwidth_kbps: f64) -> Self {
        Self {
            subflow_id,
            local_if,
            remote_if: SERVER_IF,
            ap_id,
            state: SubflowState::Idle,
            ssn_next: 0,
            rtt_ms,
            cwnd_bytes: bdp_bytes(bandwidth_kbps, rtt_ms),
            syn_attempts: 0,
            in_flight: VecDeque::new(),
        }
    }

    pub fn transition(&mut self, to: SubflowState) -> Result<SubflowState, MptcpError> {
        if !self.state.can_become(to) {
            return Err(MptcpError::IllegalTransition {
                what: "subflow",
                from: self.state.to_string(),
                to: to.to_string(),
            });
        }
        Ok(std::mem::replace(&mut self.state, to))
    }

    pub fn in_flight_bytes(&self) -> u64 {
        self.in_flight.iter().map(|f| f.len).sum()
    }

    /// Per-tick cwnd allowance `cwnd * tick / rtt`.
    pub fn cwnd_allowance(&self, tick_s: f64) -> f64 {
        if self.rtt_ms <= 0.0 {
            return 0.0;
        }
        self.cwnd_bytes * tick_s * 1000.0 / self.rtt_ms
    }

    pub fn update_link(&mut self, rtt_ms: f64, bandwidth_kbps: f64) {
        self.rtt_ms = rtt_ms;
        self.cwnd_bytes = bdp_bytes(bandwidth_kbps, rtt_ms);
    }
}

/// Bandwidth-delay product in bytes.
pub fn bdp_bytes(bandwidth_kbps: f64, rtt_ms: f64) -> f64 {
    bandwidth_kbps * 1000.0 / 8.0 * rtt_ms / 1000.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MptcpSession {
    pub session_id: u32,
    pub state: SessionState,
    pub scheduler: SchedulerMode,
    pub subflows: Vec<Subflow>,
    pub dsn_next: u64,
    pub dsm: DsmLog,
    pub via_ap: u32,
    pub stall_since: Option<u64>,
    pub(crate) reinject: VecDeque<(u64, u64)>,
}

impl MptcpSession {
    pub fn new(session_id: u32, via_ap: u32, scheduler: SchedulerMode) -> Self {
        Self {
            session_id,
            state: SessionState::Init,
            scheduler,
            subflows: Vec::new(),
            dsn_next: 0,
            dsm: DsmLog::default(),
            via_ap,
            stall_since: None,
            reinject: VecDeque::new(),
        }
    }

    pub fn transition(&mut self, to: SessionState) -> Result<SessionState, MptcpError> {
        if !self.state.can_become(to) {
            return Err(MptcpError::IllegalTransition {
                what: "session",
                from: self.state.to_string(),
                to: to.to_string(),
            });
        }
        Ok(std::mem::replace(&mut self.state, to))
    }

    pub fn subflow(&self, id: u32) -> Option<&Subflow> {
        self.subflows.iter().find(|s| s.subflow_id == id)
    }

    pub fn subflow_mut(&mut self, id: u32) -> Option<&mut Subflow> {
        self.subflows.iter_mut().find(|s| s.subflow_id == id)
    }

    pub fn established(&self) -> impl Iterator<Item = &Subflow> {
        self.subflows.iter().filter(|s| s.state == SubflowState::Established)
    }

    pub fn established_count(&self) -> usize {
        self.established().count()
    }

    pub fn has_live_subflow(&self) -> bool {
        self.subflows.iter().any(|s| s.state.is_live())
    }

    /// Bytes with an assigned DSN that are not yet acknowledged.
    pub fn unacked_bytes(&self) -> u64 {
        self.subflows.iter().map(Subflow::in_flight_bytes).sum::<u64>() + self.reinject.iter().map(|r| r.1).sum::<u64>()
    }

    /// Moves the unacknowledged data of a lost subflow to the reinjection queue.
    pub fn requeue_in_flight(&mut self, subflow_id: u32) -> u64 {
        let Some(idx) = self.subflows.iter().position(|s| s.subflow_id == subflow_id) else {
            return 0;
        };
        let drained: Vec<InFlight> = self.subflows[idx].in_flight.drain(..).collect();
        let mut bytes = 0;
        for f in drained {
            bytes += f.len;
            self.reinject.push_back((f.dsn, f.len));
        }
        bytes
    }

    pub fn acknowledge(&mut self, subflow_id: u32, ssn: u64) -> bool {
        let Some(sf) = self.subflow_mut(subflow_id) else { return false };
        match sf.in_flight.iter().position(|f| f.ssn == ssn) {
            Some(i) => {
                sf.in_flight.remove(i);
                true
            }
            None => false,
        }
    }

    fn emit(&mut self, subflow_id: u32, dsn: u64, len: u64) -> Result<Segment, MptcpError> {
        let sf = self.subflows.iter_mut().find(|s| s.subflow_id == subflow_id).expect("scheduled on a known subflow");
        let ssn = sf.ssn_next;
        self.dsm.append(DsmEntry { subflow_id, ssn, dsn, len })?;
        sf.ssn_next += len;
        sf.in_flight.push_back(InFlight { ssn, dsn, len });
        Ok(Segment { session_id: self.session_id, subflow_id, ssn, dsn, len, kind: SegmentKind::Data })
    }

    /// Assigns queued data to established subflows.
    ///
    /// `allowance` gives each subflow's byte budget for this call. Reinjected
    /// ranges go first; fresh DSNs are only assigned while the session is
    /// Established (never while Draining). Returns the segments and the
    /// number of fresh bytes taken from `pending`.
    pub fn schedule(
        &mut self,
        pending: u64,
        allowance: &BTreeMap<u32, u64>,
        max_segment: u64,
    ) -> Result<(Vec<Segment>, u64), MptcpError> {
        let mut order: Vec<(f64, u32)> = self.established().map(|s| (s.rtt_ms, s.subflow_id)).collect();
        if order.is_empty() {
            return if pending > 0 || !self.reinject.is_empty() { Err(MptcpError::Stall) } else { Ok((Vec::new(), 0)) };
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut budget: BTreeMap<u32, u64> =
            order.iter().map(|&(_, id)| (id, allowance.get(&id).copied().unwrap_or(0))).collect();
        let max_segment = max_segment.max(1);
        let mut out = Vec::new();

        // reinjected ranges keep their DSNs
        let mut leftover = VecDeque::new();
        while let Some((dsn, len)) = self.reinject.pop_front() {
            let mut off = 0;
            while off < len {
                let Some(&(_, id)) = order.iter().find(|(_, id)| budget[id] > 0) else { break };
                let n = (len - off).min(budget[&id]).min(max_segment);
                out.push(self.emit(id, dsn + off, n)?);
                *budget.get_mut(&id).unwrap() -= n;
                off += n;
            }
            if off < len {
                leftover.push_back((dsn + off, len - off));
            }
        }
        self.reinject = leftover;

        if self.state != SessionState::Established {
            return Ok((out, 0));
        }
        let mut remaining = pending;
        match self.scheduler {
            SchedulerMode::Default => {
                for &(_, id) in &order {
                    while remaining > 0 && budget[&id] > 0 {
                        let n = remaining.min(budget[&id]).min(max_segment);
                        let dsn = self.dsn_next;
                        self.dsn_next += n;
                        out.push(self.emit(id, dsn, n)?);
                        *budget.get_mut(&id).unwrap() -= n;
                        remaining -= n;
                    }
                }
            }
            SchedulerMode::Redundant => loop {
                let room = order.iter().map(|(_, id)| budget[id]).min().unwrap_or(0);
                let n = remaining.min(room).min(max_segment);
                if n == 0 {
                    break;
                }
                let dsn = self.dsn_next;
                self.dsn_next += n;
                for &(_, id) in &order {
                    out.push(self.emit(id, dsn, n)?);
                    *budget.get_mut(&id).unwrap() -= n;
                }
                remaining -= n;
            },
        }
        Ok((out, pending - remaining))
    }
}

/// Local interfaces lacking a live subflow in `session`, each paired with
/// the single server interface.
pub fn fullmesh_pairs(session: &MptcpSession, local: &[NetType]) -> Vec<(NetType, u32)> {
    local
        .iter()
        .filter(|&&t| !session.subflows.iter().any(|s| s.local_if == t && s.state.is_live()))
        .map(|&t| (t, SERVER_IF))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session_with(rtts: &[f64]) -> MptcpSession {
        let mut s = MptcpSession::new(1, 10, SchedulerMode::Default);
        for (i, &rtt) in rtts.iter().enumerate() {
            let mut sf = Subflow::new(i as u32, NetType::ALL[i], Some(i as u32), rtt, 1000.0);
            sf.transition(SubflowState::SynSent).unwrap();
            sf.transition(SubflowState::Established).unwrap();
            s.subflows.push(sf);
        }
        s.transition(SessionState::Established).unwrap();
        s
    }

    fn budgets(v: &[(u32, u64)]) -> BTreeMap<u32, u64> {
        v.iter().copied().collect()
    }

    #[test]
    fn lowest_rtt_first() {
        let mut s = session_with(&[50.0, 20.0]);
        let (segs, taken) = s.schedule(800, &budgets(&[(0, 1000), (1, 1000)]), 10_000).unwrap();
        assert_eq!(taken, 800);
        assert!(segs.iter().all(|g| g.subflow_id == 1));
    }

    #[test]
    fn overflow_spills_in_rtt_order() {
        let mut s = session_with(&[20.0, 50.0]);
        let (segs, taken) = s.schedule(1500, &budgets(&[(0, 1000), (1, 1000)]), 10_000).unwrap();
        assert_eq!(taken, 1500);
        assert_eq!(segs[0], Segment { session_id: 1, subflow_id: 0, ssn: 0, dsn: 0, len: 1000, kind: SegmentKind::Data });
        assert_eq!(segs[1], Segment { session_id: 1, subflow_id: 1, ssn: 0, dsn: 1000, len: 500, kind: SegmentKind::Data });
    }

    #[test]
    fn redundant_duplicates_ranges() {
        let mut s = session_with(&[20.0, 50.0]);
        s.scheduler = SchedulerMode::Redundant;
        let (segs, taken) = s.schedule(600, &budgets(&[(0, 1000), (1, 1000)]), 10_000).unwrap();
        assert_eq!(taken, 600);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].dsn, segs[1].dsn);
        assert_ne!(segs[0].subflow_id, segs[1].subflow_id);
    }

    #[test]
    fn stall_without_established_subflows() {
        let mut s = MptcpSession::new(1, 0, SchedulerMode::Default);
        s.state = SessionState::Established;
        assert_eq!(s.schedule(10, &BTreeMap::new(), 100), Err(MptcpError::Stall));
        assert_eq!(s.schedule(0, &BTreeMap::new(), 100).unwrap().0.len(), 0);
    }

    #[test]
    fn draining_sends_no_fresh_data() {
        let mut s = session_with(&[20.0]);
        s.transition(SessionState::Draining).unwrap();
        let (segs, taken) = s.schedule(500, &budgets(&[(0, 1000)]), 10_000).unwrap();
        assert!(segs.is_empty());
        assert_eq!(taken, 0);
    }

    #[test]
    fn reinjection_reuses_dsns() {
        let mut s = session_with(&[20.0, 50.0]);
        s.schedule(700, &budgets(&[(0, 1000), (1, 0)]), 10_000).unwrap();
        assert_eq!(s.unacked_bytes(), 700);
        s.subflows[0].transition(SubflowState::Closed).unwrap();
        assert_eq!(s.requeue_in_flight(0), 700);
        let (segs, taken) = s.schedule(0, &budgets(&[(1, 1000)]), 10_000).unwrap();
        assert_eq!(taken, 0);
        assert_eq!((segs[0].subflow_id, segs[0].dsn, segs[0].len), (1, 0, 700));
        assert_eq!(s.unacked_bytes(), 700);
        assert!(s.acknowledge(1, 0));
        assert_eq!(s.unacked_bytes(), 0);
    }

    #[test]
    fn dsm_is_append_only() {
        let mut log = DsmLog::default();
        log.append(DsmEntry { subflow_id: 0, ssn: 0, dsn: 0, len: 100 }).unwrap();
        let rekey = log.append(DsmEntry { subflow_id: 0, ssn: 0, dsn: 500, len: 100 });
        assert_eq!(rekey, Err(MptcpError::ReKey { subflow_id: 0, ssn: 0 }));
        assert_eq!(log.get(0, 0).unwrap().dsn, 0);
        assert!(log.append(DsmEntry { subflow_id: 0, ssn: 100, dsn: 50, len: 10 }).is_err());
        // the same DSN range on another subflow is a reinjection, not an overlap
        log.append(DsmEntry { subflow_id: 1, ssn: 0, dsn: 0, len: 100 }).unwrap();
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn transitions_follow_the_edges() {
        let mut sf = Subflow::new(0, NetType::Lte, None, 40.0, 1000.0);
        assert!(sf.transition(SubflowState::Established).is_err());
        sf.transition(SubflowState::SynSent).unwrap();
        sf.transition(SubflowState::Failed).unwrap();
        assert!(sf.transition(SubflowState::Closed).is_err());
        let mut s = MptcpSession::new(0, 0, SchedulerMode::Default);
        assert!(s.transition(SessionState::Draining).is_err());
    }

    #[test]
    fn fullmesh_arithmetic() {
        let mut s = session_with(&[20.0]);
        assert_eq!(fullmesh_pairs(&s, &[NetType::Umts, NetType::Wimax]), vec![(NetType::Wimax, SERVER_IF)]);
        s.subflows.push({
            let mut sf = Subflow::new(9, NetType::Wimax, None, 1.0, 1.0);
            sf.transition(SubflowState::SynSent).unwrap();
            sf
        });
        assert!(fullmesh_pairs(&s, &[NetType::Umts, NetType::Wimax]).is_empty());
    }

    #[test]
    fn cwnd_allowance_is_bandwidth_times_tick() {
        let sf = Subflow::new(0, NetType::Lte, Some(1), 40.0, 8000.0);
        assert!((sf.cwnd_bytes - 40_000.0).abs() < 1e-9);
        assert!((sf.cwnd_allowance(1.0) - 1_000_000.0).abs() < 1e-6);
    }
}
