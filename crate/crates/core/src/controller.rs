//! Periodic controller loop: candidate construction from predicted
//! positions, QoE-based selection, trigger evaluation and handover tracking.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fahp::{select_target, should_trigger, AttributeSnapshot, FahpError, QoeModel, ServicePriority};
use crate::mobility::{candidate_set, is_pingpong, AccessPoint, HistoryWindow, Position, SpreadStatistic};
use crate::mptcp::{to_secs, Engine, MigrationOutcome, MptcpError};

/// Serving RSS assumed once the user has left the serving AP's coverage.
pub const RSS_FLOOR_DBM: f64 = -200.0;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error(transparent)]
    Fahp(#[from] FahpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Predicted-position candidates with ping-pong suppression.
    #[default]
    Fahp,
    /// Current-position candidates, no suppression.
    FahpNoLocation,
    /// Strongest signal with a hysteresis margin.
    Rss,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Fahp, Algorithm::FahpNoLocation, Algorithm::Rss];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fahp => "fahp",
            Algorithm::FahpNoLocation => "fahp_no_location",
            Algorithm::Rss => "rss",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fahp" => Ok(Algorithm::Fahp),
            "fahp_no_location" => Ok(Algorithm::FahpNoLocation),
            "rss" => Ok(Algorithm::Rss),
            other => Err(ControllerError::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub period_s: f64,
    pub delta: f64,
    pub sigma_threshold: f64,
    pub spread: SpreadStatistic,
    /// Ping-pong suppression for the `fahp` algorithm.
    pub suppression: bool,
    pub rss_hysteresis_db: f64,
    /// Default priority profile name; users may override.
    pub priority_profile: String,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            period_s: 30.0,
            delta: 1.08,
            sigma_threshold: 12.9,
            spread: SpreadStatistic::RadiusOfGyration,
            suppression: true,
            rss_hysteresis_db: 3.0,
            priority_profile: "p1".into(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.period_s > 0.0) || !self.period_s.is_finite() {
            return Err(ControllerError::Config(format!("period_s must be positive, got {}", self.period_s)));
        }
        if !(self.delta >= 1.0) {
            return Err(ControllerError::Config(format!("delta must be >= 1, got {}", self.delta)));
        }
        if !(self.sigma_threshold > 0.0) {
            return Err(ControllerError::Config(format!("sigma_threshold must be positive, got {}", self.sigma_threshold)));
        }
        if !(self.rss_hysteresis_db >= 0.0) {
            return Err(ControllerError::Config(format!("rss_hysteresis_db must be >= 0, got {}", self.rss_hysteresis_db)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverReason {
    QoeGain,
    RssGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverCommand {
    pub user_id: u32,
    pub from_ap: u32,
    pub to_ap: u32,
    pub issued_at: f64,
    pub reason: HandoverReason,
    /// Scores the decision was taken on (QoE, or RSS in dBm for the baseline).
    pub target_score: f64,
    pub current_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverOutcome {
    Completed,
    Failed,
    Aborted,
    /// Still migrating when the run ended.
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverRecord {
    pub command: HandoverCommand,
    pub completed_at: f64,
    pub seamless: bool,
    pub outcome: HandoverOutcome,
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub t: f64,
    pub user_id: u32,
    pub event: String,
    pub detail: String,
}

/// What the controller knows about one user at a control instant.
#[derive(Debug, Clone, Copy)]
pub struct UserView<'a> {
    pub user_id: u32,
    /// Actual position, used for current coverage.
    pub position: Position,
    /// The newest uploaded fixes; `None` while warming up.
    pub window: Option<&'a HistoryWindow>,
    /// Predicted position for the next period.
    pub predicted: Option<Position>,
    pub current_ap: Option<u32>,
    pub priority: &'a ServicePriority,
}

pub struct Controller {
    pub config: ControllerConfig,
    pub algorithm: Algorithm,
    model: QoeModel,
    log: Vec<ControlEvent>,
    pub suppression_count: u64,
    invocations: BTreeMap<u32, u64>,
}

impl Controller {
    pub fn new(config: ControllerConfig, algorithm: Algorithm, model: QoeModel) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self { config, algorithm, model, log: Vec::new(), suppression_count: 0, invocations: BTreeMap::new() })
    }

    pub fn model(&self) -> &QoeModel {
        &self.model
    }

    pub fn log(&self) -> &[ControlEvent] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<ControlEvent> {
        std::mem::take(&mut self.log)
    }

    pub fn invocations(&self) -> &BTreeMap<u32, u64> {
        &self.invocations
    }

    pub fn record(&mut self, t: f64, user_id: u32, event: &str, detail: String) {
        self.log.push(ControlEvent { t, user_id, event: event.to_string(), detail });
    }

    /// Runs the configured algorithm for one user.
    pub fn step(&mut self, view: &UserView, aps: &[AccessPoint], snapshot: &AttributeSnapshot, now: f64) -> Option<HandoverCommand> {
        *self.invocations.entry(view.user_id).or_default() += 1;
        match self.algorithm {
            Algorithm::Rss => self.rss_baseline_step(view, aps, snapshot, now),
            _ => self.control_step(view, aps, snapshot, now),
        }
    }

    fn ready<'a>(&mut self, view: &UserView<'a>, now: f64) -> Option<(&'a HistoryWindow, u32)> {
        let Some(window) = view.window else {
            self.record(now, view.user_id, "skipped", "warming up".into());
            return None;
        };
        let Some(current) = view.current_ap else {
            self.record(now, view.user_id, "skipped", "not attached".into());
            return None;
        };
        Some((window, current))
    }

    /// Prediction, candidate set, QoE scoring, selection and trigger test.
    pub fn control_step(&mut self, view: &UserView, aps: &[AccessPoint], snapshot: &AttributeSnapshot, now: f64) -> Option<HandoverCommand> {
        let (window, current) = self.ready(view, now)?;
        let uid = view.user_id;
        let located = self.algorithm == Algorithm::Fahp;
        let anchor = match (located, view.predicted) {
            (true, Some(p)) => {
                self.record(now, uid, "prediction", format!("{:.3} {:.3}", p.x, p.y));
                p
            }
            _ => window.newest().position(),
        };
        let candidates = candidate_set(anchor, aps).unwrap_or_default();
        if candidates.is_empty() {
            self.record(now, uid, "no_candidates", String::new());
            return None;
        }
        let ids: Vec<u32> = candidates.iter().map(|a| a.ap_id).collect();
        self.record(now, uid, "preallocate", join_ids(&ids));

        let mut scored = Vec::new();
        for ap in &candidates {
            if let Some(row) = snapshot.get(ap.ap_id) {
                match self.model.score(view.priority, row) {
                    Ok(s) => scored.push((ap.ap_id, s)),
                    Err(e) => self.record(now, uid, "score_error", format!("ap {}: {e}", ap.ap_id)),
                }
            }
        }
        let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let cur_idx = scored.iter().position(|s| s.0 == current);
        let Ok(t_idx) = select_target(&scores, cur_idx) else {
            self.record(now, uid, "no_candidates", "no scorable candidate".into());
            return None;
        };
        let (target, s_t) = scored[t_idx];
        self.record(now, uid, "selection", format!("ap {target} qoe {s_t:.6}"));
        if target == current {
            return None;
        }
        let s_i = self.current_qoe(view, aps, snapshot, current);
        let pingpong = located
            && self.config.suppression
            && is_pingpong(window, self.config.sigma_threshold, self.config.spread);
        if pingpong && should_trigger(s_t, s_i, self.config.delta, false, false) {
            self.suppression_count += 1;
            self.record(now, uid, "suppressed", format!("ping-pong toward ap {target}"));
            return None;
        }
        if !should_trigger(s_t, s_i, self.config.delta, pingpong, false) {
            self.record(now, uid, "no_trigger", format!("S_t {s_t:.6} S_i {s_i:.6}"));
            return None;
        }
        self.record(now, uid, "trigger", format!("ap {current} -> {target} S_t {s_t:.6} S_i {s_i:.6}"));
        Some(HandoverCommand {
            user_id: uid,
            from_ap: current,
            to_ap: target,
            issued_at: now,
            reason: HandoverReason::QoeGain,
            target_score: s_t,
            current_score: s_i,
        })
    }

    /// QoE of the serving AP; zero once the user has left its coverage.
    fn current_qoe(&self, view: &UserView, aps: &[AccessPoint], snapshot: &AttributeSnapshot, current: u32) -> f64 {
        let covered = aps.iter().any(|a| a.ap_id == current && a.covers(view.position));
        match (covered, snapshot.get(current)) {
            (true, Some(row)) => self.model.score(view.priority, row).unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Baseline: strongest covering network, switched to when it beats the
    /// serving network by the hysteresis margin.
    pub fn rss_baseline_step(&mut self, view: &UserView, aps: &[AccessPoint], snapshot: &AttributeSnapshot, now: f64) -> Option<HandoverCommand> {
        let (_, current) = self.ready(view, now)?;
        let uid = view.user_id;
        let candidates = candidate_set(view.position, aps).unwrap_or_default();
        let mut best: Option<(u32, f64)> = None;
        for ap in &candidates {
            let Some(row) = snapshot.get(ap.ap_id) else { continue };
            if best.is_none_or(|(_, r)| row.rss_dbm > r) {
                best = Some((ap.ap_id, row.rss_dbm));
            }
        }
        let Some((target, rss_t)) = best else {
            self.record(now, uid, "no_candidates", String::new());
            return None;
        };
        self.record(now, uid, "selection", format!("ap {target} rss {rss_t:.3}"));
        if target == current {
            return None;
        }
        let covered = aps.iter().any(|a| a.ap_id == current && a.covers(view.position));
        let rss_i = match (covered, snapshot.get(current)) {
            (true, Some(row)) => row.rss_dbm,
            _ => RSS_FLOOR_DBM,
        };
        if !(rss_t > rss_i + self.config.rss_hysteresis_db) {
            self.record(now, uid, "no_trigger", format!("rss {rss_t:.3} vs {rss_i:.3}"));
            return None;
        }
        self.record(now, uid, "trigger", format!("ap {current} -> {target} rss {rss_t:.3} vs {rss_i:.3}"));
        Some(HandoverCommand {
            user_id: uid,
            from_ap: current,
            to_ap: target,
            issued_at: now,
            reason: HandoverReason::RssGain,
            target_score: rss_t,
            current_score: rss_i,
        })
    }
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
struct Pending {
    command: HandoverCommand,
    seamless: bool,
}

/// Per-user handover execution: at most one migration in flight, with the
/// seamlessness of each one sampled every tick until the old session closes.
#[derive(Debug, Clone, Default)]
pub struct HandoverTracker {
    pending: Option<Pending>,
    records: Vec<HandoverRecord>,
}

impl HandoverTracker {
    pub fn in_flight(&self) -> bool {
        self.pending.is_some()
    }

    pub fn records(&self) -> &[HandoverRecord] {
        &self.records
    }

    /// Opens the new session toward `cmd.to_ap`. A command arriving while a
    /// migration is in flight is ignored.
    pub fn execute_handover(
        &mut self,
        engine: &mut Engine,
        cmd: HandoverCommand,
        aps: &[AccessPoint],
        log: &mut Vec<ControlEvent>,
    ) {
        let (t, uid) = (cmd.issued_at, cmd.user_id);
        if self.pending.is_some() || engine.migrating() {
            log.push(ControlEvent { t, user_id: uid, event: "ignored".into(), detail: "handover in flight".into() });
            return;
        }
        let radio = aps.iter().find(|a| a.ap_id == cmd.to_ap).map(|a| a.net_type);
        let res = match radio {
            Some(r) => engine.begin_handover(r, cmd.to_ap),
            None => Err(MptcpError::NoCoverage(cmd.to_ap)),
        };
        match res {
            Ok(session) => {
                log.push(ControlEvent { t, user_id: uid, event: "migration_start".into(), detail: format!("session {session}") });
                let seamless = engine.established_subflows() >= 1;
                self.pending = Some(Pending { command: cmd, seamless });
            }
            Err(e) => {
                log.push(ControlEvent { t, user_id: uid, event: "migration_failed".into(), detail: e.to_string() });
                let seamless = engine.established_subflows() >= 1;
                self.records.push(HandoverRecord { command: cmd, completed_at: t, seamless, outcome: HandoverOutcome::Failed });
            }
        }
    }

    /// Samples seamlessness and closes the record once the engine reports
    /// the migration's outcome.
    pub fn observe(&mut self, engine: &mut Engine, log: &mut Vec<ControlEvent>) {
        let outcomes = engine.take_outcomes();
        let Some(p) = self.pending.as_mut() else { return };
        if engine.established_subflows() == 0 {
            p.seamless = false;
        }
        let Some(&last) = outcomes.last() else { return };
        let (outcome, at, name) = match last {
            MigrationOutcome::Completed { at, .. } => (HandoverOutcome::Completed, at, "migration_complete"),
            MigrationOutcome::NewSessionFailed { at, .. } => (HandoverOutcome::Failed, at, "migration_failed"),
            MigrationOutcome::Aborted { at, .. } => (HandoverOutcome::Aborted, at, "migration_aborted"),
        };
        let p = self.pending.take().unwrap();
        let completed_at = to_secs(at).max(p.command.issued_at);
        log.push(ControlEvent { t: completed_at, user_id: p.command.user_id, event: name.into(), detail: format!("ap {}", p.command.to_ap) });
        self.records.push(HandoverRecord { command: p.command, completed_at, seamless: p.seamless, outcome });
    }

    /// Closes a migration still open at the end of a run.
    pub fn finish(&mut self, now: f64) {
        if let Some(p) = self.pending.take() {
            self.records.push(HandoverRecord { command: p.command, completed_at: now, seamless: p.seamless, outcome: HandoverOutcome::Unfinished });
        }
    }

    pub fn into_records(self) -> Vec<HandoverRecord> {
        self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fahp::{FahpConfig, NetworkAttributes, PossibilityRule};
    use crate::mobility::NetType;

    fn ap(id: u32, t: NetType, x: f64, r: f64) -> AccessPoint {
        AccessPoint {
            ap_id: id,
            net_type: t,
            position: Position::new(x, 0.0),
            coverage_radius: r,
            tx_power_dbm: 46.0,
            carrier_freq_mhz: None,
            capacity_kbps: 1000.0,
        }
    }

    fn controller(algorithm: Algorithm) -> Controller {
        let cfg = FahpConfig::builtin().unwrap();
        let model = QoeModel::new(&cfg, PossibilityRule::Extent).unwrap();
        Controller::new(ControllerConfig::default(), algorithm, model).unwrap()
    }

    fn attrs(rss: f64, bw: f64, cost: f64) -> NetworkAttributes {
        NetworkAttributes { rss_dbm: rss, bandwidth_kbps: bw, delay_ms: 60.0, jitter_ms: 20.0, loss_pct: 1.0, cost }
    }

    fn walk(dx: f64) -> HistoryWindow {
        let pos: Vec<Position> = (0..4).map(|k| Position::new(100.0 - k as f64 * dx, 0.0)).collect();
        HistoryWindow::from_positions(1, 90.0, 30.0, &pos).unwrap()
    }

    fn snapshot(rows: &[(u32, NetworkAttributes)]) -> AttributeSnapshot {
        AttributeSnapshot { rows: rows.iter().copied().collect() }
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig { delta: 0.9, ..Default::default() }.validate().is_err());
        assert!(ControllerConfig { period_s: 0.0, ..Default::default() }.validate().is_err());
        assert!(ControllerConfig::default().validate().is_ok());
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("fahp-no-location".parse::<Algorithm>().unwrap(), Algorithm::FahpNoLocation);
    }

    #[test]
    fn warm_up_is_skipped() {
        let mut c = controller(Algorithm::Fahp);
        let prio = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let view = UserView { user_id: 1, position: Position::new(0.0, 0.0), window: None, predicted: None, current_ap: Some(1), priority: &prio };
        assert!(c.step(&view, &[ap(1, NetType::Lte, 0.0, 500.0)], &AttributeSnapshot::default(), 0.0).is_none());
        assert_eq!(c.log()[0].event, "skipped");
        assert_eq!(c.invocations()[&1], 1);
    }

    #[test]
    fn better_wlan_triggers() {
        let mut c = controller(Algorithm::Fahp);
        let prio = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let aps = [ap(1, NetType::Lte, 0.0, 500.0), ap(2, NetType::Wlan, 120.0, 150.0)];
        let snap = snapshot(&[(1, attrs(-85.0, 1500.0, 40.0)), (2, attrs(-50.0, 8000.0, 5.0))]);
        let w = walk(40.0);
        let view = UserView { user_id: 1, position: Position::new(100.0, 0.0), window: Some(&w), predicted: Some(Position::new(140.0, 0.0)), current_ap: Some(1), priority: &prio };
        let cmd = c.step(&view, &aps, &snap, 90.0).expect("command");
        assert_eq!((cmd.from_ap, cmd.to_ap), (1, 2));
        assert!(cmd.target_score / cmd.current_score > 1.08);
    }

    #[test]
    fn stationary_single_ap_never_commands() {
        let mut c = controller(Algorithm::Fahp);
        let prio = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let aps = [ap(1, NetType::Lte, 0.0, 500.0)];
        let snap = snapshot(&[(1, attrs(-70.0, 3000.0, 20.0))]);
        let w = walk(0.0);
        let view = UserView { user_id: 1, position: Position::new(100.0, 0.0), window: Some(&w), predicted: Some(Position::new(100.0, 0.0)), current_ap: Some(1), priority: &prio };
        assert!(c.step(&view, &aps, &snap, 90.0).is_none());
    }

    #[test]
    fn pingpong_window_is_suppressed() {
        let mut c = controller(Algorithm::Fahp);
        let prio = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let aps = [ap(1, NetType::Lte, 0.0, 500.0), ap(2, NetType::Wlan, 120.0, 150.0)];
        let snap = snapshot(&[(1, attrs(-85.0, 1500.0, 40.0)), (2, attrs(-50.0, 8000.0, 5.0))]);
        let w = walk(3.0);
        let view = UserView { user_id: 1, position: Position::new(100.0, 0.0), window: Some(&w), predicted: Some(Position::new(100.0, 0.0)), current_ap: Some(1), priority: &prio };
        assert!(c.step(&view, &aps, &snap, 90.0).is_none());
        assert_eq!(c.suppression_count, 1);
        // the same view without suppression fires
        let mut off = controller(Algorithm::FahpNoLocation);
        assert!(off.step(&view, &aps, &snap, 90.0).is_some());
    }

    #[test]
    fn rss_baseline_hysteresis() {
        let mut c = controller(Algorithm::Rss);
        let prio = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let aps = [ap(1, NetType::Lte, 0.0, 500.0), ap(2, NetType::Wlan, 120.0, 150.0)];
        let w = walk(40.0);
        let view = UserView { user_id: 1, position: Position::new(100.0, 0.0), window: Some(&w), predicted: None, current_ap: Some(1), priority: &prio };
        let snap = snapshot(&[(1, attrs(-90.0, 1.0, 1.0)), (2, attrs(-60.0, 1.0, 1.0))]);
        assert_eq!(c.step(&view, &aps, &snap, 30.0).unwrap().to_ap, 2);
        let snap = snapshot(&[(1, attrs(-60.0, 1.0, 1.0)), (2, attrs(-60.0, 1.0, 1.0))]);
        assert!(c.step(&view, &aps, &snap, 60.0).is_none());
        let snap = snapshot(&[(1, attrs(-60.0, 1.0, 1.0)), (2, attrs(-58.0, 1.0, 1.0))]);
        assert!(c.step(&view, &aps, &snap, 90.0).is_none());
    }
}
