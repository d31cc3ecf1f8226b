//! Scenario runner: tick loop over mobility, coverage, controller and the
//! per-user MPTCP engines, plus metrics and file export.

mod export;
mod scenario;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    Algorithm, ControlEvent, Controller, ControllerError, HandoverOutcome, HandoverRecord, HandoverTracker, UserView,
};
use crate::esn::{build_reservoir, nrmse, padded_window, random_waypoint, EsnError, EsnModel, Normalizer, ReservoirState};
use crate::fahp::{AttributeSnapshot, FahpConfig, FahpError, PossibilityRule, QoeModel, ServicePriority};
use crate::mobility::{AccessPoint, HistoryWindow, LocationFix, MobilityError, NetType, Position};
use crate::mptcp::{secs, Coverage, Engine, LinkState, SubflowState};
use crate::radio::{rss_at, RadioError};
use crate::rng::{label, substream};

pub use export::{export, import};
pub use scenario::{
    base_rtt_ms, default_attribute_processes, preset, preset_campus, preset_fig8, preset_pingpong, synth_attributes,
    ApSpec, AttributeRanges, EsnTraining, Scenario, SynthAttributes, TrajectorySpec, UserSpec, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Esn(#[from] EsnError),
    #[error(transparent)]
    Fahp(#[from] FahpError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

/// Per-tick bytes carried by one subflow of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub t: f64,
    pub user_id: u32,
    pub session_id: u32,
    pub subflow_id: u32,
    pub net_type: NetType,
    pub bytes: u64,
    pub state: SubflowState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverCount {
    pub algorithm: Algorithm,
    pub user_id: u32,
    pub handovers: u64,
    pub completed: u64,
    pub failed: u64,
    pub suppressed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub duration_s: f64,
    /// Executed handover commands, failed ones included.
    pub handover_count: u64,
    pub handovers_completed: u64,
    pub handovers_failed: u64,
    /// Seamless handovers over all handovers; 1.0 when there were none.
    pub seamless_ratio: f64,
    pub suppression_count: u64,
    pub controller_invocations: BTreeMap<u32, u64>,
    /// One-period-ahead prediction error per user; null when undefined.
    pub nrmse: BTreeMap<u32, Option<f64>>,
    pub submitted_bytes: u64,
    pub delivered_bytes: u64,
    pub lost_bytes: u64,
    pub outstanding_bytes: u64,
    pub protocol_errors: u64,
    /// Ticks in which a user with an open session had no established subflow.
    pub interruption_ticks: u64,
    pub handovers: Vec<HandoverRecord>,
    #[serde(skip)]
    pub counts: Vec<HandoverCount>,
    #[serde(skip)]
    pub throughput: Vec<ThroughputRow>,
    #[serde(skip)]
    pub events: Vec<ControlEvent>,
}

struct UserRun {
    user_id: u32,
    radios: Vec<NetType>,
    priority: ServicePriority,
    positions: Vec<Position>,
    engine: Engine,
    tracker: HandoverTracker,
    esn: Option<EsnModel>,
    state: Option<ReservoirState>,
    uploads: Vec<LocationFix>,
    prediction: Option<Position>,
    pairs: Vec<(Position, Position)>,
}

impl UserRun {
    fn window(&self, n_in: usize) -> Option<HistoryWindow> {
        if self.uploads.len() < n_in || n_in == 0 {
            return None;
        }
        HistoryWindow::new(self.uploads.iter().rev().take(n_in).copied().collect()).ok()
    }

    fn current_ap(&self) -> Option<u32> {
        self.engine.primary().filter(|s| s.state == crate::mptcp::SessionState::Established).map(|s| s.via_ap)
    }
}

/// Trains one predictor per user on a synthetic walk inside the users'
/// bounding box. Reservoir and input weights are shared.
fn train_predictors(scenario: &Scenario, users: &mut [UserRun]) -> Result<(), HarnessError> {
    if users.is_empty() {
        return Ok(());
    }
    let mut config = scenario.esn.clone();
    config.seed = scenario.seed;
    let base = build_reservoir(&config)?;
    let (mut lo, mut hi) = (Position::new(f64::INFINITY, f64::INFINITY), Position::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in users.iter().flat_map(|u| &u.positions) {
        lo = Position::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Position::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let m = scenario.esn_training.margin_m;
    let (lo, hi) = (Position::new(lo.x - m, lo.y - m), Position::new(hi.x + m, hi.y + m));
    let normalizer = Normalizer::from_bounds(lo, hi);
    let tr = scenario.esn_training;
    for u in users.iter_mut() {
        let mut rng = substream(scenario.seed, &[label::ESN_TRAINING, u.user_id as u64]);
        let start = Position::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
        let local = random_waypoint(
            &mut rng,
            Position::new(start.x - lo.x, start.y - lo.y),
            hi.x - lo.x,
            hi.y - lo.y,
            (tr.speed[0], tr.speed[1]),
            scenario.controller.period_s,
            tr.samples,
        );
        let path: Vec<Position> = local.into_iter().map(|p| Position::new(p.x + lo.x, p.y + lo.y)).collect();
        let mut model = base.clone();
        model.fit(&[path], normalizer)?;
        u.esn = Some(model);
    }
    Ok(())
}

/// Shadowed RSS of every AP at `pos`, drawn from the stream of `(user, tick)`.
fn rss_map(scenario: &Scenario, aps: &[AccessPoint], user_id: u32, tick: u64, pos: Position) -> Result<BTreeMap<u32, f64>, HarnessError> {
    let mut rng = substream(scenario.seed, &[label::SHADOWING, user_id as u64, tick]);
    aps.iter().map(|ap| Ok((ap.ap_id, rss_at(ap, pos, &scenario.shadowing, &mut rng)?.rss_dbm))).collect()
}

fn draw_attributes(scenario: &Scenario, aps: &[AccessPoint], period: u64) -> BTreeMap<u32, SynthAttributes> {
    let mut rng = substream(scenario.seed, &[label::ATTRIBUTES, period]);
    aps.iter().map(|ap| (ap.ap_id, synth_attributes(&scenario.attribute_processes[&ap.net_type], &mut rng))).collect()
}

fn coverage_for(scenario: &Scenario, aps: &[AccessPoint], radios: &[NetType], attrs: &BTreeMap<u32, SynthAttributes>, pos: Position) -> Coverage {
    let mut cov: BTreeMap<NetType, Vec<(f64, LinkState)>> = BTreeMap::new();
    for ap in aps.iter().filter(|a| radios.contains(&a.net_type) && a.covers(pos)) {
        let d = ap.distance_to(pos);
        cov.entry(ap.net_type).or_default().push((
            d,
            LinkState {
                ap_id: ap.ap_id,
                rtt_ms: base_rtt_ms(ap.net_type) + scenario.rtt_ms_per_m * d,
                bandwidth_kbps: attrs[&ap.ap_id].bandwidth_kbps,
            },
        ));
    }
    cov.into_iter()
        .map(|(t, mut links)| {
            links.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.ap_id.cmp(&b.1.ap_id)));
            (t, links.into_iter().map(|l| l.1).collect())
        })
        .collect()
}

/// Runs `scenario` under `algorithm` with the built-in FAHP configuration.
pub fn run(scenario: &Scenario, algorithm: Algorithm) -> Result<RunMetrics, HarnessError> {
    run_with(scenario, algorithm, &FahpConfig::builtin()?)
}

pub fn run_with(scenario: &Scenario, algorithm: Algorithm, fahp: &FahpConfig) -> Result<RunMetrics, HarnessError> {
    scenario.validate()?;
    let aps = scenario.access_points()?;
    let model = QoeModel::new(fahp, PossibilityRule::Extent)?;
    let mut controller = Controller::new(scenario.controller.clone(), algorithm, model)?;
    let mut users = Vec::with_capacity(scenario.users.len());
    for spec in &scenario.users {
        let profile = spec.priority_profile.as_deref().unwrap_or(&scenario.controller.priority_profile);
        users.push(UserRun {
            user_id: spec.user_id,
            radios: spec.radios.clone(),
            priority: fahp.priority(profile)?,
            positions: scenario.positions(spec)?,
            engine: Engine::new(spec.user_id, &spec.radios, scenario.engine.clone()),
            tracker: HandoverTracker::default(),
            esn: None,
            state: None,
            uploads: Vec::new(),
            prediction: None,
            pairs: Vec::new(),
        });
    }
    users.sort_by_key(|u| u.user_id);
    train_predictors(scenario, &mut users)?;

    let tick = scenario.tick_s;
    let per = scenario.ticks_per_period();
    let n_ticks = scenario.n_ticks();
    let drain_ticks = (scenario.drain_s / tick).ceil() as u64;
    let n_in = scenario.esn.n_in;
    let cbr_bytes = scenario.cbr_kbps * 1000.0 / 8.0 * tick;
    let mut cbr_carry = 0.0;
    let mut events: Vec<ControlEvent> = Vec::new();
    let mut throughput = Vec::new();
    let mut interruption_ticks = 0;
    let mut attrs = BTreeMap::new();

    for k in 0..=n_ticks + drain_ticks {
        let draining = k > n_ticks;
        if draining && users.iter().all(|u| u.engine.outstanding() == 0 && !u.tracker.in_flight()) {
            break;
        }
        let t = k as f64 * tick;
        let pk = k.min(n_ticks) as usize;
        if k % per == 0 && !draining {
            attrs = draw_attributes(scenario, &aps, k / per);
        }
        for u in users.iter_mut() {
            let pos = u.positions[pk];
            u.engine.on_link_change(coverage_for(scenario, &aps, &u.radios, &attrs, pos));
            if u.engine.primary().is_none() {
                let rss = rss_map(scenario, &aps, u.user_id, k, pos)?;
                let best = aps
                    .iter()
                    .filter(|a| u.radios.contains(&a.net_type) && a.covers(pos))
                    .max_by(|a, b| rss[&a.ap_id].total_cmp(&rss[&b.ap_id]).then(b.ap_id.cmp(&a.ap_id)));
                if let Some(ap) = best {
                    if let Ok(id) = u.engine.open_session(ap.net_type, ap.ap_id) {
                        events.push(ControlEvent { t, user_id: u.user_id, event: "attach".into(), detail: format!("ap {} session {id}", ap.ap_id) });
                    }
                }
            }
            if k % per == 0 && !draining {
                upload_fix(u, t, pos, n_in, scenario.controller.period_s)?;
            }
        }

        if k > 0 && k % per == 0 && !draining {
            for u in users.iter_mut() {
                let pos = u.positions[pk];
                let rss = rss_map(scenario, &aps, u.user_id, k, pos)?;
                let snapshot = AttributeSnapshot {
                    rows: attrs.iter().map(|(&id, a)| (id, a.with_rss(rss[&id]))).collect(),
                };
                let window = u.window(n_in);
                let view = UserView {
                    user_id: u.user_id,
                    position: pos,
                    window: window.as_ref(),
                    predicted: u.prediction,
                    current_ap: u.current_ap(),
                    priority: &u.priority,
                };
                let cmd = controller.step(&view, &aps, &snapshot, t);
                events.append(&mut controller.take_log());
                if let Some(cmd) = cmd {
                    u.tracker.execute_handover(&mut u.engine, cmd, &aps, &mut events);
                }
            }
        }

        for u in users.iter_mut() {
            u.engine.advance_to(secs(t + tick / 2.0));
        }
        if !draining {
            cbr_carry += cbr_bytes;
            let whole = cbr_carry.floor();
            cbr_carry -= whole;
            for u in users.iter_mut() {
                u.engine.submit(whole as u64);
            }
        }
        // each AP's bandwidth is split evenly over every subflow attached to it
        let mut attached: BTreeMap<u32, usize> = BTreeMap::new();
        for u in &users {
            for s in u.engine.sessions() {
                for f in s.established() {
                    if let Some(ap) = f.ap_id {
                        *attached.entry(ap).or_default() += 1;
                    }
                }
            }
        }
        let shares: BTreeMap<u32, f64> = attached
            .iter()
            .map(|(&ap, &n)| (ap, attrs[&ap].bandwidth_kbps * 1000.0 / 8.0 * tick / n as f64))
            .collect();
        for u in users.iter_mut() {
            u.engine.schedule(tick, &shares);
            u.engine.advance_to(secs(t + tick));
            u.tracker.observe(&mut u.engine, &mut events);
            if u.engine.primary().is_some() && u.engine.established_subflows() == 0 {
                interruption_ticks += 1;
            }
            throughput.extend(u.engine.take_trace(t).into_iter().map(|r| ThroughputRow {
                t: r.t,
                user_id: u.user_id,
                session_id: r.session_id,
                subflow_id: r.subflow_id,
                net_type: r.net_type,
                bytes: r.bytes,
                state: r.state,
            }));
        }
    }

    let end = users.iter().map(|u| crate::mptcp::to_secs(u.engine.now())).fold(0.0, f64::max);
    let mut records = Vec::new();
    let mut counts = Vec::new();
    let mut metrics_nrmse = BTreeMap::new();
    let (mut submitted, mut delivered, mut lost, mut outstanding, mut perr) = (0, 0, 0, 0, 0);
    for u in users {
        for e in u.engine.log() {
            let sub = e.subflow_id.map(|s| format!(" subflow {s}")).unwrap_or_default();
            let detail = if e.detail.is_empty() { String::new() } else { format!(": {}", e.detail) };
            events.push(ControlEvent {
                t: crate::mptcp::to_secs(e.t),
                user_id: u.user_id,
                event: format!("mptcp_{}", e.kind),
                detail: format!("session {}{sub}{detail}", e.session_id),
            });
        }
        submitted += u.engine.submitted();
        delivered += u.engine.delivered();
        lost += u.engine.lost();
        outstanding += u.engine.outstanding();
        perr += u.engine.protocol_errors();
        let (pred, actual): (Vec<Position>, Vec<Position>) = u.pairs.iter().copied().unzip();
        metrics_nrmse.insert(u.user_id, nrmse(&pred, &actual).ok());
        let mut tracker = u.tracker;
        tracker.finish(end);
        let recs = tracker.into_records();
        let suppressed = events.iter().filter(|e| e.user_id == u.user_id && e.event == "suppressed").count() as u64;
        counts.push(HandoverCount {
            algorithm,
            user_id: u.user_id,
            handovers: recs.len() as u64,
            completed: recs.iter().filter(|r| r.outcome == HandoverOutcome::Completed).count() as u64,
            failed: recs.iter().filter(|r| r.outcome == HandoverOutcome::Failed).count() as u64,
            suppressed,
        });
        records.extend(recs);
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.user_id.cmp(&b.user_id)));
    let seamless = records.iter().filter(|r| r.seamless).count();
    Ok(RunMetrics {
        scenario: scenario.name.clone(),
        algorithm,
        seed: scenario.seed,
        duration_s: scenario.duration_s,
        handover_count: records.len() as u64,
        handovers_completed: counts.iter().map(|c| c.completed).sum(),
        handovers_failed: counts.iter().map(|c| c.failed).sum(),
        seamless_ratio: if records.is_empty() { 1.0 } else { seamless as f64 / records.len() as f64 },
        suppression_count: controller.suppression_count,
        controller_invocations: controller.invocations().clone(),
        nrmse: metrics_nrmse,
        submitted_bytes: submitted,
        delivered_bytes: delivered,
        lost_bytes: lost,
        outstanding_bytes: outstanding,
        protocol_errors: perr,
        interruption_ticks,
        handovers: records,
        counts,
        throughput,
        events,
    })
}

/// Stores the fix and steps the user's predictor on the newest window.
fn upload_fix(u: &mut UserRun, t: f64, pos: Position, n_in: usize, period: f64) -> Result<(), HarnessError> {
    if let Some(p) = u.prediction.take() {
        if u.uploads.len() >= n_in {
            u.pairs.push((p, pos));
        }
    }
    u.uploads.push(LocationFix { user_id: u.user_id, t, x: pos.x, y: pos.y });
    let Some(model) = &u.esn else { return Ok(()) };
    let path: Vec<Position> = u.uploads.iter().map(LocationFix::position).collect();
    let window = padded_window(u.user_id, &path, path.len() - 1, n_in, period)?;
    let state = match u.state.take() {
        Some(s) => s,
        None => model.prime(&ReservoirState::zeros(u.user_id, model.size()), &window)?,
    };
    let (pred, next) = model.predict(&state, &window)?;
    u.state = Some(next);
    u.prediction = pred.first().copied();
    Ok(())
}

/// Runs every `(algorithm, seed)` pair in parallel; results come back in
/// input order.
pub fn sweep(scenario: &Scenario, algorithms: &[Algorithm], seeds: &[u64]) -> Result<Vec<RunMetrics>, HarnessError> {
    let jobs: Vec<(Algorithm, u64)> = seeds.iter().flat_map(|&s| algorithms.iter().map(move |&a| (a, s))).collect();
    jobs.par_iter()
        .map(|&(a, seed)| {
            let mut s = scenario.clone();
            s.seed = seed;
            run(&s, a)
        })
        .collect()
}
