use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::ControllerConfig;
use crate::esn::{random_waypoint, EsnConfig};
use crate::fahp::NetworkAttributes;
use crate::mobility::{ingest_trajectory, AccessPoint, NetType, Position};
use crate::mptcp::EngineConfig;
use crate::radio::{watts_to_dbm, ShadowConfig};
use crate::rng::{label, substream};

pub const SCHEMA_VERSION: u32 = 1;

/// Uniform ranges `[lo, hi]` for the non-RSS attributes of one network type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRanges {
    pub bandwidth_kbps: [f64; 2],
    pub delay_ms: [f64; 2],
    pub jitter_ms: [f64; 2],
    pub loss_pct: [f64; 2],
    pub cost: [f64; 2],
}

impl AttributeRanges {
    fn all(&self) -> [(&'static str, [f64; 2]); 5] {
        [
            ("bandwidth_kbps", self.bandwidth_kbps),
            ("delay_ms", self.delay_ms),
            ("jitter_ms", self.jitter_ms),
            ("loss_pct", self.loss_pct),
            ("cost", self.cost),
        ]
    }
}

/// Default per-type ranges. These are modeling choices: WLAN is fast and
/// cheap but delay-prone, UMTS is slow with low jitter, WiMAX is lossy.
pub fn default_attribute_processes() -> BTreeMap<NetType, AttributeRanges> {
    BTreeMap::from([
        (
            NetType::Umts,
            AttributeRanges {
                bandwidth_kbps: [64.0, 512.0],
                delay_ms: [40.0, 90.0],
                jitter_ms: [5.0, 30.0],
                loss_pct: [0.0, 6.0],
                cost: [20.0, 45.0],
            },
        ),
        (
            NetType::Wimax,
            AttributeRanges {
                bandwidth_kbps: [512.0, 2500.0],
                delay_ms: [70.0, 150.0],
                jitter_ms: [20.0, 70.0],
                loss_pct: [1.0, 15.0],
                cost: [10.0, 40.0],
            },
        ),
        (
            NetType::Lte,
            AttributeRanges {
                bandwidth_kbps: [1000.0, 5000.0],
                delay_ms: [50.0, 120.0],
                jitter_ms: [10.0, 60.0],
                loss_pct: [0.0, 10.0],
                cost: [15.0, 45.0],
            },
        ),
        (
            NetType::Wlan,
            AttributeRanges {
                bandwidth_kbps: [2000.0, 10000.0],
                delay_ms: [80.0, 200.0],
                jitter_ms: [20.0, 100.0],
                loss_pct: [0.0, 8.0],
                cost: [0.0, 15.0],
            },
        ),
    ])
}

/// One draw of the non-RSS attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthAttributes {
    pub bandwidth_kbps: f64,
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_pct: f64,
    pub cost: f64,
}

impl SynthAttributes {
    pub fn with_rss(self, rss_dbm: f64) -> NetworkAttributes {
        NetworkAttributes {
            rss_dbm,
            bandwidth_kbps: self.bandwidth_kbps,
            delay_ms: self.delay_ms,
            jitter_ms: self.jitter_ms,
            loss_pct: self.loss_pct,
            cost: self.cost,
        }
    }
}

pub fn synth_attributes<R: Rng + ?Sized>(ranges: &AttributeRanges, rng: &mut R) -> SynthAttributes {
    let mut draw = |[lo, hi]: [f64; 2]| rng.random_range(lo..=hi);
    SynthAttributes {
        bandwidth_kbps: draw(ranges.bandwidth_kbps),
        delay_ms: draw(ranges.delay_ms),
        jitter_ms: draw(ranges.jitter_ms),
        loss_pct: draw(ranges.loss_pct),
        cost: draw(ranges.cost),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub ap_id: u32,
    pub net_type: NetType,
    pub x: f64,
    pub y: f64,
    pub coverage_radius: f64,
    pub tx_power_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_freq_mhz: Option<f64>,
}

impl ApSpec {
    pub fn to_access_point(&self) -> Result<AccessPoint, HarnessError> {
        let tx_power_dbm = watts_to_dbm(self.tx_power_w).map_err(|e| HarnessError::Config(format!("ap {}: {e}", self.ap_id)))?;
        Ok(AccessPoint {
            ap_id: self.ap_id,
            net_type: self.net_type,
            position: Position::new(self.x, self.y),
            coverage_radius: self.coverage_radius,
            tx_power_dbm,
            carrier_freq_mhz: self.carrier_freq_mhz,
            capacity_kbps: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Stationary { at: [f64; 2] },
    /// Straight line at constant speed, then stays at `to`.
    Linear { from: [f64; 2], to: [f64; 2], speed: f64 },
    /// Back and forth between `a` and `b`, one leg per `half_period_s`.
    Oscillate { a: [f64; 2], b: [f64; 2], half_period_s: f64 },
    RandomWaypoint { start: [f64; 2], area: [f64; 4], speed: [f64; 2] },
    /// `user_id,t,x,y` CSV; relative paths resolve against the scenario file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub user_id: u32,
    #[serde(default = "all_radios")]
    pub radios: Vec<NetType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_profile: Option<String>,
    pub trajectory: TrajectorySpec,
}

fn all_radios() -> Vec<NetType> {
    NetType::ALL.to_vec()
}

/// Synthetic training walks for the per-user location predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnTraining {
    pub samples: usize,
    pub speed: [f64; 2],
    /// Margin added around the users' bounding box, in meters.
    pub margin_m: f64,
}

impl Default for EsnTraining {
    fn default() -> Self {
        Self { samples: 400, speed: [0.5, 2.0], margin_m: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "one")]
    pub tick_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Constant bit rate offered by every user.
    #[serde(default = "default_cbr")]
    pub cbr_kbps: f64,
    /// Extra time after `duration_s` for in-flight data to drain.
    #[serde(default = "default_drain")]
    pub drain_s: f64,
    /// Base RTT per network type plus this many ms per meter of distance.
    #[serde(default = "default_rtt_slope")]
    pub rtt_ms_per_m: f64,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub shadowing: ShadowConfig,
    #[serde(default)]
    pub esn: EsnConfig,
    #[serde(default)]
    pub esn_training: EsnTraining,
    #[serde(default = "default_attribute_processes")]
    pub attribute_processes: BTreeMap<NetType, AttributeRanges>,
    pub aps: Vec<ApSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_cbr() -> f64 {
    400.0
}

fn default_drain() -> f64 {
    60.0
}

fn default_rtt_slope() -> f64 {
    0.01
}

/// Base round-trip time of each radio technology in ms.
pub fn base_rtt_ms(t: NetType) -> f64 {
    match t {
        NetType::Umts => 100.0,
        NetType::Wimax => 60.0,
        NetType::Lte => 40.0,
        NetType::Wlan => 20.0,
    }
}

fn ratio_is_integer(a: f64, b: f64) -> bool {
    let r = a / b;
    (r - r.round()).abs() < 1e-9 && r.round() >= 1.0
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut s = Self::from_toml(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.tick_s > 0.0) || !self.tick_s.is_finite() {
            return bad(format!("tick_s must be positive, got {}", self.tick_s));
        }
        self.controller.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !ratio_is_integer(self.controller.period_s, self.tick_s) {
            return bad(format!("tick_s {} does not divide period_s {}", self.tick_s, self.controller.period_s));
        }
        if !(self.cbr_kbps >= 0.0) || !(self.drain_s >= 0.0) || !(self.rtt_ms_per_m >= 0.0) {
            return bad("cbr_kbps, drain_s and rtt_ms_per_m must be non-negative".into());
        }
        self.esn.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let [lo, hi] = self.esn_training.speed;
        if !(lo > 0.0 && hi >= lo) || self.esn_training.samples <= self.esn.n_out {
            return bad("esn_training needs 0 < speed[0] <= speed[1] and samples > n_out".into());
        }
        for (t, r) in &self.attribute_processes {
            for (name, [lo, hi]) in r.all() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("{t} {name}: invalid range [{lo}, {hi}]"));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for ap in &self.aps {
            if !ids.insert(ap.ap_id) {
                return bad(format!("duplicate ap_id {}", ap.ap_id));
            }
            if !self.attribute_processes.contains_key(&ap.net_type) {
                return bad(format!("no attribute process for {}", ap.net_type));
            }
            if !(ap.coverage_radius > 0.0) {
                return bad(format!("ap {}: coverage_radius must be positive", ap.ap_id));
            }
            ap.to_access_point()?;
        }
        let mut uids = BTreeSet::new();
        for u in &self.users {
            if !uids.insert(u.user_id) {
                return bad(format!("duplicate user_id {}", u.user_id));
            }
            if u.radios.is_empty() {
                return bad(format!("user {} has no radios", u.user_id));
            }
            match &u.trajectory {
                TrajectorySpec::Linear { speed, .. } if !(*speed > 0.0) => {
                    return bad(format!("user {}: speed must be positive", u.user_id));
                }
                TrajectorySpec::Oscillate { half_period_s, .. } if !(*half_period_s > 0.0) => {
                    return bad(format!("user {}: half_period_s must be positive", u.user_id));
                }
                TrajectorySpec::RandomWaypoint { area, speed, .. }
                    if !(area[2] >= area[0] && area[3] >= area[1] && speed[0] > 0.0 && speed[1] >= speed[0]) =>
                {
                    return bad(format!("user {}: invalid random-waypoint area or speed", u.user_id));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn access_points(&self) -> Result<Vec<AccessPoint>, HarnessError> {
        self.aps.iter().map(ApSpec::to_access_point).collect()
    }

    pub fn n_ticks(&self) -> u64 {
        (self.duration_s / self.tick_s + 1e-9).floor() as u64
    }

    pub fn ticks_per_period(&self) -> u64 {
        (self.controller.period_s / self.tick_s).round() as u64
    }

    /// Positions of `user` at ticks `0..=n_ticks`.
    pub fn positions(&self, user: &UserSpec) -> Result<Vec<Position>, HarnessError> {
        let n = self.n_ticks() as usize + 1;
        let tick = self.tick_s;
        let p = |a: [f64; 2]| Position::new(a[0], a[1]);
        Ok(match &user.trajectory {
            TrajectorySpec::Stationary { at } => vec![p(*at); n],
            TrajectorySpec::Linear { from, to, speed } => {
                let (a, b) = (p(*from), p(*to));
                let len = a.distance(b);
                (0..n)
                    .map(|k| if len == 0.0 { a } else { a.lerp(b, (speed * k as f64 * tick / len).min(1.0)) })
                    .collect()
            }
            TrajectorySpec::Oscillate { a, b, half_period_s } => {
                let (a, b) = (p(*a), p(*b));
                (0..n)
                    .map(|k| {
                        let phase = (k as f64 * tick / half_period_s).rem_euclid(2.0);
                        a.lerp(b, if phase <= 1.0 { phase } else { 2.0 - phase })
                    })
                    .collect()
            }
            TrajectorySpec::RandomWaypoint { start, area, speed } => {
                let mut rng = substream(self.seed, &[label::MOBILITY, user.user_id as u64]);
                let (w, h) = (area[2] - area[0], area[3] - area[1]);
                let local = Position::new(start[0] - area[0], start[1] - area[1]);
                random_waypoint(&mut rng, local, w, h, (speed[0], speed[1]), tick, n)
                    .into_iter()
                    .map(|q| Position::new(q.x + area[0], q.y + area[1]))
                    .collect()
            }
            TrajectorySpec::File { path } => {
                let full = match &self.base_dir {
                    Some(d) if path.is_relative() => d.join(path),
                    _ => path.clone(),
                };
                let file = std::fs::File::open(&full)?;
                let all = ingest_trajectory(file, tick)?;
                let traj = all
                    .get(&user.user_id)
                    .ok_or_else(|| HarnessError::Config(format!("{}: no fixes for user {}", full.display(), user.user_id)))?;
                (0..n).map(|k| traj.position_at(k as f64 * tick).expect("non-empty trajectory")).collect()
            }
        })
    }
}

const LTE_W: f64 = 43.0;
const WLAN_W: f64 = 23.0;
const UMTS_W: f64 = 53.0;
const WIMAX_W: f64 = 30.0;

fn ap(ap_id: u32, net_type: NetType, x: f64, y: f64, coverage_radius: f64, tx_power_w: f64) -> ApSpec {
    let carrier_freq_mhz = (net_type == NetType::Wlan).then_some(2400.0);
    ApSpec { ap_id, net_type, x, y, coverage_radius, tx_power_w, carrier_freq_mhz }
}

fn base(name: &str, duration_s: f64, period_s: f64) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        duration_s,
        tick_s: 1.0,
        seed: 1,
        cbr_kbps: default_cbr(),
        drain_s: default_drain(),
        rtt_ms_per_m: default_rtt_slope(),
        controller: ControllerConfig { period_s, ..Default::default() },
        engine: EngineConfig::default(),
        shadowing: ShadowConfig::default(),
        esn: EsnConfig::default(),
        esn_training: EsnTraining::default(),
        attribute_processes: default_attribute_processes(),
        aps: Vec::new(),
        users: Vec::new(),
        base_dir: None,
    }
}

/// One user crossing from LTE-only coverage into a WLAN hotspot at 2 m/s.
pub fn preset_fig8() -> Scenario {
    let mut s = base("fig8", 70.0, 10.0);
    s.engine.reprobe_on_coverage_gain = false;
    s.aps = vec![ap(1, NetType::Lte, 1850.0, 0.0, 400.0, LTE_W), ap(2, NetType::Wlan, 1400.0, 0.0, 150.0, WLAN_W)];
    s.users = vec![UserSpec {
        user_id: 1,
        radios: vec![NetType::Lte, NetType::Wlan],
        priority_profile: None,
        trajectory: TrajectorySpec::Linear { from: [1570.0, 0.0], to: [1430.0, 0.0], speed: 2.0 },
    }];
    s
}

/// One user pacing 10 m back and forth across a WLAN edge inside a
/// distant LTE cell.
pub fn preset_pingpong() -> Scenario {
    let mut s = base("pingpong", 600.0, 30.0);
    s.aps = vec![ap(1, NetType::Lte, -900.0, 0.0, 1200.0, LTE_W), ap(2, NetType::Wlan, 225.0, 0.0, 150.0, WLAN_W)];
    s.users = vec![UserSpec {
        user_id: 1,
        radios: vec![NetType::Lte, NetType::Wlan],
        priority_profile: None,
        trajectory: TrajectorySpec::Oscillate { a: [72.0, 0.0], b: [82.0, 0.0], half_period_s: 30.0 },
    }];
    s
}

/// A 1 km square with a grid of each network type at its own spacing and
/// ten random-waypoint users.
pub fn preset_campus() -> Scenario {
    let mut s = base("campus", 600.0, 30.0);
    let side = 1000.0;
    let mut id = 1;
    let mut grid = |t: NetType, spacing: f64, radius: f64, power: f64, aps: &mut Vec<ApSpec>| {
        let n = (side / spacing).ceil().max(1.0) as u32;
        for i in 0..n {
            for j in 0..n {
                let c = |k: u32| if spacing >= side { side / 2.0 } else { (k as f64 + 0.5) * spacing };
                aps.push(ap(id, t, c(i), c(j), radius, power));
                id += 1;
            }
        }
    };
    let mut aps = Vec::new();
    grid(NetType::Umts, 35_000.0, 20_000.0, UMTS_W, &mut aps);
    grid(NetType::Lte, 1000.0, 800.0, LTE_W, &mut aps);
    grid(NetType::Wlan, 500.0, 150.0, WLAN_W, &mut aps);
    grid(NetType::Wimax, 100.0, 70.0, WIMAX_W, &mut aps);
    s.aps = aps;
    let profiles = ["p1", "p2", "p3"];
    s.users = (0..10)
        .map(|u| UserSpec {
            user_id: u + 1,
            radios: NetType::ALL.to_vec(),
            priority_profile: Some(profiles[u as usize % 3].into()),
            trajectory: TrajectorySpec::RandomWaypoint {
                start: [100.0 + 80.0 * u as f64, 500.0],
                area: [0.0, 0.0, side, side],
                speed: [0.5, 1.5],
            },
        })
        .collect();
    s
}

pub fn preset(name: &str) -> Result<Scenario, HarnessError> {
    match name {
        "fig8" => Ok(preset_fig8()),
        "pingpong" => Ok(preset_pingpong()),
        "campus" => Ok(preset_campus()),
        other => Err(HarnessError::Config(format!("unknown preset '{other}' (fig8, pingpong, campus)"))),
    }
}
