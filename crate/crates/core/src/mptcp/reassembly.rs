use std::collections::BTreeMap;

use super::{Segment, SegmentKind};

/// Outcome of handing one segment to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    /// Cumulative data-level acknowledgment.
    pub data_ack: u64,
    /// Bytes that became deliverable in order because of this segment.
    pub in_order: u64,
    pub accepted: bool,
}

/// Server-side reassembly of one session's byte stream by DSN.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Receiver {
    next_dsn: u64,
    /// Buffered out-of-order ranges `start -> end`, disjoint, all above `next_dsn`.
    buffered: BTreeMap<u64, u64>,
    /// Mapping observed per `(subflow_id, ssn)`.
    seen: BTreeMap<(u32, u64), (u64, u64)>,
    pub duplicate_bytes: u64,
    pub protocol_errors: u64,
}

impl Receiver {
    pub fn delivered(&self) -> u64 {
        self.next_dsn
    }

    pub fn buffered_bytes(&self) -> u64 {
        self.buffered.iter().map(|(s, e)| e - s).sum()
    }

    pub fn deliver(&mut self, seg: &Segment) -> Delivery {
        let reject = |r: &Self| Delivery { data_ack: r.next_dsn, in_order: 0, accepted: false };
        if seg.kind != SegmentKind::Data || seg.len == 0 {
            return reject(self);
        }
        match self.seen.get(&(seg.subflow_id, seg.ssn)) {
            Some(&m) if m != (seg.dsn, seg.len) => {
                self.protocol_errors += 1;
                return reject(self);
            }
            Some(_) => {}
            None => {
                // an SSN range must not overlap another mapping on the same subflow
                let clash = self
                    .seen
                    .range((seg.subflow_id, 0)..(seg.subflow_id, seg.ssn + seg.len))
                    .next_back()
                    .is_some_and(|(&(_, ssn), &(_, len))| ssn + len > seg.ssn);
                if clash {
                    self.protocol_errors += 1;
                    return reject(self);
                }
                self.seen.insert((seg.subflow_id, seg.ssn), (seg.dsn, seg.len));
            }
        }

        let (mut start, mut end) = (seg.dsn, seg.dsn + seg.len);
        let before = self.next_dsn;
        let mut fresh = end - start;
        if start < self.next_dsn {
            let cut = self.next_dsn.min(end);
            fresh -= cut - start;
            start = cut;
        }
        // merge with overlapping or adjacent buffered ranges
        let overlapping: Vec<(u64, u64)> = self
            .buffered
            .range(..=end)
            .rev()
            .take_while(|(_, &e)| e >= start)
            .map(|(&s, &e)| (s, e))
            .collect();
        let (seg_start, seg_end) = (start, end);
        for (s, e) in overlapping {
            let ov = e.min(seg_end).saturating_sub(s.max(seg_start));
            fresh -= ov.min(fresh);
            self.buffered.remove(&s);
            start = start.min(s);
            end = end.max(e);
        }
        if end > start {
            self.buffered.insert(start, end);
        }
        self.duplicate_bytes += seg.len - fresh;
        while let Some((&s, &e)) = self.buffered.first_key_value() {
            if s > self.next_dsn {
                break;
            }
            self.buffered.remove(&s);
            self.next_dsn = self.next_dsn.max(e);
        }
        Delivery { data_ack: self.next_dsn, in_order: self.next_dsn - before, accepted: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(subflow_id: u32, ssn: u64, dsn: u64, len: u64) -> Segment {
        Segment { session_id: 0, subflow_id, ssn, dsn, len, kind: SegmentKind::Data }
    }

    #[test]
    fn in_order_stream() {
        let mut r = Receiver::default();
        assert_eq!(r.deliver(&data(0, 0, 0, 1000)).in_order, 1000);
        assert_eq!(r.deliver(&data(0, 1000, 1000, 1000)).in_order, 1000);
        assert_eq!(r.delivered(), 2000);
    }

    #[test]
    fn gap_then_fill() {
        let mut r = Receiver::default();
        assert_eq!(r.deliver(&data(1, 0, 1000, 1000)).in_order, 0);
        assert_eq!(r.delivered(), 0);
        assert_eq!(r.deliver(&data(0, 0, 0, 1000)).in_order, 2000);
        assert_eq!(r.buffered_bytes(), 0);
    }

    #[test]
    fn duplicates_count_once() {
        let mut r = Receiver::default();
        r.deliver(&data(0, 0, 0, 500));
        let d = r.deliver(&data(1, 0, 0, 500));
        assert!(d.accepted);
        assert_eq!(d.in_order, 0);
        assert_eq!(r.delivered(), 500);
        assert_eq!(r.duplicate_bytes, 500);
    }

    #[test]
    fn inconsistent_mapping_is_dropped() {
        let mut r = Receiver::default();
        r.deliver(&data(0, 0, 0, 500));
        let d = r.deliver(&data(0, 0, 700, 500));
        assert!(!d.accepted);
        assert_eq!(r.protocol_errors, 1);
        let d = r.deliver(&data(0, 100, 900, 50));
        assert!(!d.accepted);
        assert_eq!(r.protocol_errors, 2);
        assert_eq!(r.delivered(), 500);
    }

    #[test]
    fn partial_overlaps_merge() {
        let mut r = Receiver::default();
        r.deliver(&data(0, 0, 100, 100));
        r.deliver(&data(1, 0, 300, 100));
        r.deliver(&data(2, 0, 150, 200));
        assert_eq!(r.buffered_bytes(), 300);
        assert_eq!(r.duplicate_bytes, 100);
        r.deliver(&data(0, 100, 0, 120));
        assert_eq!(r.delivered(), 400);
        assert_eq!(r.duplicate_bytes, 120);
    }
}
