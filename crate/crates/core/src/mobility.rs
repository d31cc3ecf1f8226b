//! User locations, trajectory ingestion, ping-pong detection and candidate
//! access-point geometry.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("user {user_id}: timestamp {t} at line {line} does not increase")]
    NonMonotonic { user_id: u32, t: f64, line: u64 },
    #[error("invalid history window: {0}")]
    InvalidWindow(String),
    #[error("access point inventory is empty")]
    EmptyInventory,
    #[error("invalid resampling period {0}")]
    InvalidPeriod(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Radio access technology of an access point (and of an MMT interface).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetType {
    Umts,
    Wimax,
    Lte,
    Wlan,
}

impl NetType {
    pub const ALL: [NetType; 4] = [NetType::Umts, NetType::Wimax, NetType::Lte, NetType::Wlan];

    /// Macro cells use the Hata-style model, WLAN the free-space one.
    pub fn is_macro(self) -> bool {
        !matches!(self, NetType::Wlan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetType::Umts => "umts",
            NetType::Wimax => "wimax",
            NetType::Lte => "lte",
            NetType::Wlan => "wlan",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "umts" => Ok(NetType::Umts),
            "wimax" => Ok(NetType::Wimax),
            "lte" => Ok(NetType::Lte),
            "wlan" => Ok(NetType::Wlan),
            other => Err(format!("unknown network type '{other}'")),
        }
    }
}

/// Planar scenario coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Position, f: f64) -> Position {
        Position::new(self.x + (other.x - self.x) * f, self.y + (other.y - self.y) * f)
    }
}

impl From<(f64, f64)> for Position {
    fn from((x, y): (f64, f64)) -> Self {
        Position::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationFix {
    pub user_id: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl LocationFix {
    pub fn position(&self) -> Position {
        Position::new(self.x, self.y)
    }
}

/// Fixes of one user, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user_id: u32,
    fixes: Vec<LocationFix>,
}

impl Trajectory {
    pub fn new(user_id: u32, fixes: Vec<LocationFix>) -> Result<Self, MobilityError> {
        for (i, w) in fixes.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(MobilityError::NonMonotonic { user_id, t: w[1].t, line: i as u64 + 2 });
            }
        }
        if let Some(f) = fixes.iter().find(|f| f.user_id != user_id || f.t < 0.0) {
            return Err(MobilityError::InvalidWindow(format!(
                "fix at t={} does not belong to user {user_id} or has negative time",
                f.t
            )));
        }
        Ok(Self { user_id, fixes })
    }

    pub fn fixes(&self) -> &[LocationFix] {
        &self.fixes
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.fixes.first().map(|f| f.t)
    }

    pub fn end(&self) -> Option<f64> {
        self.fixes.last().map(|f| f.t)
    }

    /// Linearly interpolated position, held constant outside the recorded span.
    pub fn position_at(&self, t: f64) -> Option<Position> {
        let first = self.fixes.first()?;
        let last = self.fixes.last()?;
        if t <= first.t {
            return Some(first.position());
        }
        if t >= last.t {
            return Some(last.position());
        }
        let idx = self.fixes.partition_point(|f| f.t <= t);
        let (a, b) = (&self.fixes[idx - 1], &self.fixes[idx]);
        let f = (t - a.t) / (b.t - a.t);
        Some(a.position().lerp(b.position(), f))
    }

    /// Resamples onto the grid of multiples of `period` covered by the
    /// recorded span.
    pub fn resample(&self, period: f64) -> Result<Trajectory, MobilityError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(MobilityError::InvalidPeriod(period));
        }
        let (Some(start), Some(end)) = (self.start(), self.end()) else {
            return Ok(self.clone());
        };
        let mut k = (start / period - 1e-9).ceil().max(0.0) as u64;
        let mut out = Vec::new();
        loop {
            let t = k as f64 * period;
            if t > end + 1e-9 {
                break;
            }
            let p = self.position_at(t).expect("non-empty trajectory");
            out.push(LocationFix { user_id: self.user_id, t, x: p.x, y: p.y });
            k += 1;
        }
        Trajectory::new(self.user_id, out)
    }

    /// The `n_in` most recent grid fixes at or before `now`, newest first.
    pub fn window_at(&self, now: f64, n_in: usize) -> Option<HistoryWindow> {
        let upto = self.fixes.partition_point(|f| f.t <= now + 1e-9);
        if upto < n_in || n_in == 0 {
            return None;
        }
        let fixes: Vec<LocationFix> = self.fixes[upto - n_in..upto].iter().rev().copied().collect();
        HistoryWindow::new(fixes).ok()
    }
}

#[derive(Debug, Deserialize)]
struct TrajectoryRow {
    user_id: u32,
    t: f64,
    x: f64,
    y: f64,
}

/// Reads `user_id,t,x,y` rows and returns per-user trajectories resampled
/// onto the `period` grid.
pub fn ingest_trajectory<R: Read>(
    source: R,
    period: f64,
) -> Result<BTreeMap<u32, Trajectory>, MobilityError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut raw: BTreeMap<u32, Vec<LocationFix>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            MobilityError::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: TrajectoryRow = record
            .deserialize(None)
            .map_err(|e| MobilityError::Parse { line, msg: e.to_string() })?;
        if !(row.t >= 0.0) || !row.x.is_finite() || !row.y.is_finite() {
            return Err(MobilityError::Parse { line, msg: "non-finite or negative value".into() });
        }
        let fixes = raw.entry(row.user_id).or_default();
        if let Some(prev) = fixes.last() {
            if !(row.t > prev.t) {
                return Err(MobilityError::NonMonotonic { user_id: row.user_id, t: row.t, line });
            }
        }
        fixes.push(LocationFix { user_id: row.user_id, t: row.t, x: row.x, y: row.y });
    }
    raw.into_iter()
        .map(|(id, fixes)| Ok((id, Trajectory::new(id, fixes)?.resample(period)?)))
        .collect()
}

pub fn write_trajectory<W: Write>(
    out: W,
    trajectories: &BTreeMap<u32, Trajectory>,
) -> Result<(), MobilityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "t", "x", "y"])?;
    for traj in trajectories.values() {
        for f in traj.fixes() {
            w.write_record([f.user_id.to_string(), f.t.to_string(), f.x.to_string(), f.y.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// The last N_in fixes of one user, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    fixes: Vec<LocationFix>,
}

impl HistoryWindow {
    pub fn new(fixes: Vec<LocationFix>) -> Result<Self, MobilityError> {
        let Some(first) = fixes.first() else {
            return Err(MobilityError::InvalidWindow("window is empty".into()));
        };
        if fixes.iter().any(|f| f.user_id != first.user_id) {
            return Err(MobilityError::InvalidWindow("fixes from several users".into()));
        }
        if fixes.windows(2).any(|w| !(w[0].t > w[1].t)) {
            return Err(MobilityError::InvalidWindow("fixes must be newest first".into()));
        }
        Ok(Self { fixes })
    }

    /// Builds a window from positions given newest first, spaced by `period`.
    pub fn from_positions(user_id: u32, newest_t: f64, period: f64, positions: &[Position]) -> Result<Self, MobilityError> {
        let fixes = positions
            .iter()
            .enumerate()
            .map(|(i, p)| LocationFix { user_id, t: newest_t - i as f64 * period, x: p.x, y: p.y })
            .collect();
        Self::new(fixes)
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn user_id(&self) -> u32 {
        self.fixes[0].user_id
    }

    pub fn newest(&self) -> &LocationFix {
        &self.fixes[0]
    }

    pub fn fixes(&self) -> &[LocationFix] {
        &self.fixes
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.fixes.iter().map(LocationFix::position)
    }

    fn centroid(&self) -> Position {
        let n = self.fixes.len() as f64;
        let (sx, sy) = self.fixes.iter().fold((0.0, 0.0), |(sx, sy), f| (sx + f.x, sy + f.y));
        Position::new(sx / n, sy / n)
    }
}

/// How the scalar spread σ of a window is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadStatistic {
    /// sqrt(mean squared distance to the centroid).
    #[default]
    RadiusOfGyration,
    /// Standard deviation of the distances to the centroid.
    CentroidDistanceStd,
}

pub fn pingpong_sigma(window: &HistoryWindow, stat: SpreadStatistic) -> f64 {
    let c = window.centroid();
    let d: Vec<f64> = window.positions().map(|p| p.distance(c)).collect();
    let n = d.len() as f64;
    match stat {
        SpreadStatistic::RadiusOfGyration => (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        SpreadStatistic::CentroidDistanceStd => {
            let mean = d.iter().sum::<f64>() / n;
            (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        }
    }
}

/// A window whose spread does not exceed the threshold is a ping-pong pattern.
pub fn is_pingpong(window: &HistoryWindow, sigma_threshold: f64, stat: SpreadStatistic) -> bool {
    pingpong_sigma(window, stat) <= sigma_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub ap_id: u32,
    pub net_type: NetType,
    pub position: Position,
    pub coverage_radius: f64,
    pub tx_power_dbm: f64,
    /// Carrier frequency, only read for WLAN.
    #[serde(default)]
    pub carrier_freq_mhz: Option<f64>,
    /// Nominal link capacity in kb/s.
    #[serde(default)]
    pub capacity_kbps: f64,
}

impl AccessPoint {
    pub fn covers(&self, p: Position) -> bool {
        self.position.distance(p) <= self.coverage_radius
    }

    pub fn distance_to(&self, p: Position) -> f64 {
        self.position.distance(p)
    }
}

/// Nearest in-coverage AP per network type, in `NetType::ALL` order.
pub fn candidate_set(
    predicted: Position,
    aps: &[AccessPoint],
) -> Result<Vec<&AccessPoint>, MobilityError> {
    if aps.is_empty() {
        return Err(MobilityError::EmptyInventory);
    }
    let mut best: BTreeMap<NetType, (&AccessPoint, f64)> = BTreeMap::new();
    for ap in aps.iter().filter(|ap| ap.covers(predicted)) {
        let d = ap.distance_to(predicted);
        match best.get(&ap.net_type) {
            Some(&(cur, cd)) if cd < d || (cd == d && cur.ap_id < ap.ap_id) => {}
            _ => {
                best.insert(ap.net_type, (ap, d));
            }
        }
    }
    Ok(best.into_values().map(|(ap, _)| ap).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(points: &[(f64, f64)]) -> HistoryWindow {
        let pos: Vec<Position> = points.iter().map(|&p| p.into()).collect();
        HistoryWindow::from_positions(1, 90.0, 30.0, &pos).unwrap()
    }

    fn ap(id: u32, t: NetType, x: f64, r: f64) -> AccessPoint {
        AccessPoint {
            ap_id: id,
            net_type: t,
            position: Position::new(x, 0.0),
            coverage_radius: r,
            tx_power_dbm: 40.0,
            carrier_freq_mhz: None,
            capacity_kbps: 1000.0,
        }
    }

    #[test]
    fn ingest_passthrough() {
        let csv = "user_id,t,x,y\n1,0,0,0\n1,30,60,0\n";
        let t = ingest_trajectory(csv.as_bytes(), 30.0).unwrap();
        let f = t[&1].fixes();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].t - f[0].t, 30.0);
        assert_eq!(f[1].x, 60.0);
    }

    #[test]
    fn ingest_resamples_to_grid() {
        let csv = "user_id,t,x,y\n1,0,0,0\n1,15,30,0\n1,30,60,0\n";
        let t = ingest_trajectory(csv.as_bytes(), 30.0).unwrap();
        let ts: Vec<f64> = t[&1].fixes().iter().map(|f| f.t).collect();
        assert_eq!(ts, vec![0.0, 30.0]);
    }

    #[test]
    fn ingest_interpolates_off_grid_samples() {
        // raw samples at 10 and 50; grid points 30 lies between them
        let csv = "user_id,t,x,y\n2,10,0,0\n2,50,40,80\n";
        let t = ingest_trajectory(csv.as_bytes(), 30.0).unwrap();
        let f = t[&2].fixes();
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].t, f[0].x, f[0].y), (30.0, 20.0, 40.0));
    }

    #[test]
    fn ingest_rejects_decreasing_time() {
        let csv = "user_id,t,x,y\n1,30,0,0\n1,0,0,0\n";
        let err = ingest_trajectory(csv.as_bytes(), 30.0).unwrap_err();
        assert!(matches!(err, MobilityError::NonMonotonic { user_id: 1, line: 3, .. }), "{err}");
    }

    #[test]
    fn ingest_reports_line_of_malformed_row() {
        let csv = "user_id,t,x,y\n1,0,0,0\n1,abc,0,0\n";
        match ingest_trajectory(csv.as_bytes(), 30.0).unwrap_err() {
            MobilityError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sigma_examples() {
        let still = window(&[(3.0, 4.0); 4]);
        assert_eq!(pingpong_sigma(&still, SpreadStatistic::RadiusOfGyration), 0.0);
        assert_eq!(pingpong_sigma(&still, SpreadStatistic::CentroidDistanceStd), 0.0);

        let osc = window(&[(0.0, 0.0), (10.0, 0.0), (0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(pingpong_sigma(&osc, SpreadStatistic::CentroidDistanceStd), 0.0);
        assert!((pingpong_sigma(&osc, SpreadStatistic::RadiusOfGyration) - 5.0).abs() < 1e-12);

        // distances to centroid (300,0): 300,100,100,300
        let line = window(&[(0.0, 0.0), (200.0, 0.0), (400.0, 0.0), (600.0, 0.0)]);
        let rog = pingpong_sigma(&line, SpreadStatistic::RadiusOfGyration);
        assert!((rog - 50_000f64.sqrt()).abs() < 1e-9);
        assert!(rog > 50.0);
        assert!((pingpong_sigma(&line, SpreadStatistic::CentroidDistanceStd) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn pingpong_examples() {
        let still = window(&[(1.0, 1.0); 4]);
        assert!(is_pingpong(&still, 12.9, SpreadStatistic::RadiusOfGyration));
        let walk = window(&[(240.0, 0.0), (160.0, 0.0), (80.0, 0.0), (0.0, 0.0)]);
        assert!(!is_pingpong(&walk, 12.9, SpreadStatistic::RadiusOfGyration));
        assert!(!is_pingpong(&walk, 12.9, SpreadStatistic::CentroidDistanceStd));
        assert!(is_pingpong(&walk, f64::MAX, SpreadStatistic::RadiusOfGyration));
    }

    #[test]
    fn window_rejects_mixed_users_and_order() {
        let a = LocationFix { user_id: 1, t: 30.0, x: 0.0, y: 0.0 };
        let b = LocationFix { user_id: 2, t: 0.0, x: 0.0, y: 0.0 };
        assert!(HistoryWindow::new(vec![a, b]).is_err());
        let c = LocationFix { user_id: 1, t: 60.0, x: 0.0, y: 0.0 };
        assert!(HistoryWindow::new(vec![a, c]).is_err());
        assert!(HistoryWindow::new(vec![]).is_err());
    }

    #[test]
    fn window_at_picks_latest_fixes() {
        let fixes = (0..6)
            .map(|k| LocationFix { user_id: 1, t: 30.0 * k as f64, x: k as f64, y: 0.0 })
            .collect();
        let tr = Trajectory::new(1, fixes).unwrap();
        assert!(tr.window_at(60.0, 4).is_none());
        let w = tr.window_at(120.0, 4).unwrap();
        let ts: Vec<f64> = w.fixes().iter().map(|f| f.t).collect();
        assert_eq!(ts, vec![120.0, 90.0, 60.0, 30.0]);
    }

    #[test]
    fn candidates_nearest_per_type() {
        let aps = vec![
            ap(1, NetType::Lte, 0.0, 1000.0),
            ap(2, NetType::Wlan, 120.0, 150.0),
            ap(3, NetType::Wlan, 50.0, 150.0),
            ap(4, NetType::Umts, 10.0, 5000.0),
            ap(5, NetType::Wimax, -20.0, 400.0),
        ];
        let c = candidate_set(Position::new(0.0, 0.0), &aps).unwrap();
        let ids: Vec<u32> = c.iter().map(|a| a.ap_id).collect();
        assert_eq!(ids, vec![4, 5, 1, 3]);
    }

    #[test]
    fn candidates_drop_uncovered_types() {
        let aps = vec![ap(1, NetType::Lte, 0.0, 1000.0), ap(2, NetType::Wlan, 500.0, 150.0)];
        let c = candidate_set(Position::new(0.0, 0.0), &aps).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].net_type, NetType::Lte);
        assert!(matches!(candidate_set(Position::default(), &[]), Err(MobilityError::EmptyInventory)));
    }

    #[test]
    fn candidates_tie_break_lowest_id() {
        let aps = vec![ap(9, NetType::Wlan, 50.0, 150.0), ap(4, NetType::Wlan, -50.0, 150.0)];
        let c = candidate_set(Position::default(), &aps).unwrap();
        assert_eq!(c[0].ap_id, 4);
    }

    fn arb_window() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1000.0..1000.0f64, -1000.0..1000.0f64), 4)
    }

    proptest! {
        #[test]
        fn sigma_is_rigid_motion_invariant(pts in arb_window(), dx in -500.0..500.0f64, dy in -500.0..500.0f64, th in 0.0..std::f64::consts::TAU) {
            let moved: Vec<(f64, f64)> = pts
                .iter()
                .map(|&(x, y)| (x * th.cos() - y * th.sin() + dx, x * th.sin() + y * th.cos() + dy))
                .collect();
            for stat in [SpreadStatistic::RadiusOfGyration, SpreadStatistic::CentroidDistanceStd] {
                let a = pingpong_sigma(&window(&pts), stat);
                let b = pingpong_sigma(&window(&moved), stat);
                prop_assert!((a - b).abs() < 1e-6 * (1.0 + a));
            }
        }

        #[test]
        fn pingpong_monotone_in_threshold(pts in arb_window(), s1 in 0.1..500.0f64, extra in 0.0..500.0f64) {
            let w = window(&pts);
            if is_pingpong(&w, s1, SpreadStatistic::RadiusOfGyration) {
                prop_assert!(is_pingpong(&w, s1 + extra, SpreadStatistic::RadiusOfGyration));
            }
        }

        #[test]
        fn candidate_set_matches_brute_force(
            aps in prop::collection::vec((0..4usize, -500.0..500.0f64, -500.0..500.0f64, 10.0..600.0f64), 1..12),
            px in -500.0..500.0f64, py in -500.0..500.0f64,
        ) {
            let inventory: Vec<AccessPoint> = aps.iter().enumerate().map(|(i, &(t, x, y, r))| AccessPoint {
                ap_id: i as u32,
                net_type: NetType::ALL[t],
                position: Position::new(x, y),
                coverage_radius: r,
                tx_power_dbm: 30.0,
                carrier_freq_mhz: None,
                capacity_kbps: 0.0,
            }).collect();
            let p = Position::new(px, py);
            let got = candidate_set(p, &inventory).unwrap();
            for nt in NetType::ALL {
                let covering: Vec<&AccessPoint> = inventory.iter().filter(|a| a.net_type == nt && a.covers(p)).collect();
                let chosen: Vec<&&AccessPoint> = got.iter().filter(|a| a.net_type == nt).collect();
                prop_assert!(chosen.len() <= 1);
                match (covering.is_empty(), chosen.first()) {
                    (true, None) => {}
                    (false, Some(c)) => {
                        for other in &covering {
                            prop_assert!(c.distance_to(p) <= other.distance_to(p));
                        }
                    }
                    _ => prop_assert!(false, "coverage mismatch for {nt}"),
                }
            }
        }

        #[test]
        fn resampled_spacing_is_exact(steps in prop::collection::vec(1.0..50.0f64, 2..30), period in 5.0..60.0f64) {
            let mut t = 0.0;
            let fixes: Vec<LocationFix> = steps.iter().map(|dt| { t += dt; LocationFix { user_id: 3, t, x: t * 2.0, y: -t } }).collect();
            let tr = Trajectory::new(3, fixes).unwrap().resample(period).unwrap();
            for w in tr.fixes().windows(2) {
                prop_assert!(((w[1].t - w[0].t) - period).abs() < 1e-9);
            }
            for f in tr.fixes() {
                prop_assert!((f.x - 2.0 * f.t).abs() < 1e-6);
            }
        }
    }
}
