//! Fuzzy AHP network selection.
//!
//! Attribute weights come from per-service triangular-fuzzy pairwise
//! matrices; raw network attributes are mapped to utilities; the QoE score
//! of a network is the priority-weighted sum of weight/utility products.

mod matrix;
mod tfn;
mod utility;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{
    comprehensive_fuzzy_values, degree_of_possibility, extract_weights, FuzzyDecisionMatrix, MatrixSpec,
    PossibilityRule, RECIPROCAL_TOLERANCE,
};
pub use tfn::{tfn_add, tfn_mul, tfn_recip, Tfn};
pub use utility::{ServiceUtilities, UtilityFn, UtilityTable};

pub const N_ATTRIBUTES: usize = 6;
pub const N_SERVICES: usize = 3;

const BUILTIN_CONFIG: &str = include_str!("../../config/fahp.toml");

#[derive(Debug, Error)]
pub enum FahpError {
    #[error("invalid triangular fuzzy number {0}")]
    InvalidTfn(Tfn),
    #[error("operand {0} must be strictly positive")]
    NonPositive(Tfn),
    #[error("{service} decision matrix: {msg}")]
    InvalidMatrix { service: Service, msg: String },
    #[error("{0} decision matrix yields all-zero primary weights")]
    DegenerateWeights(Service),
    #[error("no utility function configured for {service}{}", attribute.map(|a| format!("/{a:?}")).unwrap_or_default())]
    UnknownUtility { service: Service, attribute: Option<Attribute> },
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
    #[error("invalid service priority: {0}")]
    InvalidPriority(String),
    #[error("no candidate networks to select from")]
    EmptySelection,
    #[error("unknown priority profile '{0}'")]
    UnknownProfile(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Voice,
    Video,
    Web,
}

impl Service {
    pub const ALL: [Service; N_SERVICES] = [Service::Voice, Service::Video, Service::Web];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Service::Voice => "voice",
            Service::Video => "video",
            Service::Web => "web",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Service {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "voice" => Ok(Service::Voice),
            "video" => Ok(Service::Video),
            "web" | "web_browsing" => Ok(Service::Web),
            other => Err(format!("unknown service '{other}'")),
        }
    }
}

/// Selection criteria, in matrix row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Rss,
    Bandwidth,
    Delay,
    Jitter,
    LossRate,
    Cost,
}

impl Attribute {
    pub const ALL: [Attribute; N_ATTRIBUTES] =
        [Attribute::Rss, Attribute::Bandwidth, Attribute::Delay, Attribute::Jitter, Attribute::LossRate, Attribute::Cost];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_benefit(self) -> bool {
        matches!(self, Attribute::Rss | Attribute::Bandwidth)
    }

    pub fn label(self) -> &'static str {
        match self {
            Attribute::Rss => "RSS",
            Attribute::Bandwidth => "Bandwidth",
            Attribute::Delay => "Delay",
            Attribute::Jitter => "Jitter",
            Attribute::LossRate => "Loss Rate",
            Attribute::Cost => "Cost",
        }
    }
}

/// Attribute weights of one service; non-negative, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector([f64; N_ATTRIBUTES]);

impl WeightVector {
    pub fn new(w: [f64; N_ATTRIBUTES]) -> Result<Self, FahpError> {
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(FahpError::InvalidWeights(format!("negative or NaN component in {w:?}")));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(FahpError::InvalidWeights(format!("components sum to {s}")));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64; N_ATTRIBUTES] {
        &self.0
    }

    pub fn dot(&self, u: &UtilityVector) -> f64 {
        self.0.iter().zip(&u.0).map(|(w, u)| w * u).sum()
    }
}

/// Normalized attribute utilities of one network for one service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector(pub [f64; N_ATTRIBUTES]);

/// User preference over services; non-negative, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; N_SERVICES]", into = "[f64; N_SERVICES]")]
pub struct ServicePriority([f64; N_SERVICES]);

impl ServicePriority {
    pub fn new(p: [f64; N_SERVICES]) -> Result<Self, FahpError> {
        if p.iter().any(|v| !(*v >= 0.0)) {
            return Err(FahpError::InvalidPriority(format!("negative or NaN component in {p:?}")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(FahpError::InvalidPriority(format!("components sum to {s}")));
        }
        Ok(Self(p))
    }

    pub fn get(&self, s: Service) -> f64 {
        self.0[s.index()]
    }

    pub fn as_slice(&self) -> &[f64; N_SERVICES] {
        &self.0
    }
}

impl TryFrom<[f64; N_SERVICES]> for ServicePriority {
    type Error = FahpError;

    fn try_from(p: [f64; N_SERVICES]) -> Result<Self, Self::Error> {
        ServicePriority::new(p)
    }
}

impl From<ServicePriority> for [f64; N_SERVICES] {
    fn from(p: ServicePriority) -> Self {
        p.0
    }
}

/// Raw attribute values of one candidate network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkAttributes {
    pub rss_dbm: f64,
    pub bandwidth_kbps: f64,
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_pct: f64,
    pub cost: f64,
}

impl NetworkAttributes {
    pub fn as_array(&self) -> [f64; N_ATTRIBUTES] {
        [self.rss_dbm, self.bandwidth_kbps, self.delay_ms, self.jitter_ms, self.loss_pct, self.cost]
    }
}

/// Real-time attribute matrix: one row per candidate access point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeSnapshot {
    pub rows: BTreeMap<u32, NetworkAttributes>,
}

impl AttributeSnapshot {
    pub fn get(&self, ap_id: u32) -> Option<&NetworkAttributes> {
        self.rows.get(&ap_id)
    }
}

/// `S = sum_l p_l (W_l . U_l)`.
pub fn qoe(
    priorities: &ServicePriority,
    weights: &[WeightVector; N_SERVICES],
    utilities: &[UtilityVector; N_SERVICES],
) -> f64 {
    Service::ALL
        .iter()
        .map(|&s| priorities.get(s) * weights[s.index()].dot(&utilities[s.index()]))
        .sum()
}

/// Index of the best score. Ties keep the incumbent, then the lowest index.
pub fn select_target(scores: &[f64], current: Option<usize>) -> Result<usize, FahpError> {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() || best.is_nan() {
        return Err(FahpError::EmptySelection);
    }
    if let Some(c) = current {
        if scores.get(c) == Some(&best) {
            return Ok(c);
        }
    }
    Ok(scores.iter().position(|&s| s == best).expect("maximum is attained"))
}

/// Handover fires only toward a different network whose score beats the
/// current one by the strict ratio `delta`, and never on a ping-pong pattern.
/// A non-positive current score counts as an infinite ratio.
pub fn should_trigger(target_score: f64, current_score: f64, delta: f64, pingpong: bool, target_is_current: bool) -> bool {
    if target_is_current || pingpong {
        return false;
    }
    if current_score <= 0.0 {
        return target_score > 0.0;
    }
    target_score / current_score > delta
}

/// Decision matrices, utility table and named priority profiles.
#[derive(Debug, Clone)]
pub struct FahpConfig {
    matrices: [FuzzyDecisionMatrix; N_SERVICES],
    pub utilities: UtilityTable,
    pub priorities: BTreeMap<String, ServicePriority>,
}

#[derive(Debug, Deserialize, Serialize)]
struct FahpConfigFile {
    schema_version: u32,
    matrices: BTreeMap<Service, MatrixSpec>,
    utilities: UtilityTable,
    #[serde(default)]
    priorities: BTreeMap<String, ServicePriority>,
}

impl FahpConfig {
    /// The configuration shipped with the crate.
    pub fn builtin() -> Result<Self, FahpError> {
        Self::from_toml(BUILTIN_CONFIG)
    }

    pub fn from_path(path: &Path) -> Result<Self, FahpError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, FahpError> {
        let file: FahpConfigFile = toml::from_str(text).map_err(|e| FahpError::Config(e.to_string()))?;
        if file.schema_version != 1 {
            return Err(FahpError::Config(format!("unsupported schema_version {}", file.schema_version)));
        }
        let load = |s: Service| -> Result<FuzzyDecisionMatrix, FahpError> {
            let spec = file.matrices.get(&s).ok_or_else(|| FahpError::Config(format!("missing {s} matrix")))?;
            FuzzyDecisionMatrix::from_spec(s, spec)
        };
        let matrices = [load(Service::Voice)?, load(Service::Video)?, load(Service::Web)?];
        for s in Service::ALL {
            file.utilities.service(s)?;
        }
        Ok(Self { matrices, utilities: file.utilities, priorities: file.priorities })
    }

    pub fn matrix(&self, s: Service) -> &FuzzyDecisionMatrix {
        &self.matrices[s.index()]
    }

    pub fn priority(&self, name: &str) -> Result<ServicePriority, FahpError> {
        self.priorities.get(name).copied().ok_or_else(|| FahpError::UnknownProfile(name.to_string()))
    }

    pub fn weights(&self, rule: PossibilityRule) -> Result<[WeightVector; N_SERVICES], FahpError> {
        Ok([
            extract_weights(self.matrix(Service::Voice), rule)?,
            extract_weights(self.matrix(Service::Video), rule)?,
            extract_weights(self.matrix(Service::Web), rule)?,
        ])
    }
}

/// Weights computed once and shared read-only, plus the utility table.
#[derive(Debug, Clone)]
pub struct QoeModel {
    pub weights: [WeightVector; N_SERVICES],
    pub utilities: UtilityTable,
}

impl QoeModel {
    pub fn new(config: &FahpConfig, rule: PossibilityRule) -> Result<Self, FahpError> {
        Ok(Self { weights: config.weights(rule)?, utilities: config.utilities.clone() })
    }

    pub fn utilities_for(&self, attrs: &NetworkAttributes) -> Result<[UtilityVector; N_SERVICES], FahpError> {
        let raw = attrs.as_array();
        Ok([
            self.utilities.service(Service::Voice)?.vector(&raw),
            self.utilities.service(Service::Video)?.vector(&raw),
            self.utilities.service(Service::Web)?.vector(&raw),
        ])
    }

    pub fn score(&self, priority: &ServicePriority, attrs: &NetworkAttributes) -> Result<f64, FahpError> {
        Ok(qoe(priority, &self.weights, &self.utilities_for(attrs)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_weights() -> [WeightVector; 3] {
        [WeightVector::new([1.0 / 6.0; 6]).unwrap(); 3]
    }

    #[test]
    fn qoe_bounds() {
        let p = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        let cfg = FahpConfig::builtin().unwrap();
        let w = cfg.weights(PossibilityRule::Extent).unwrap();
        let ones = [UtilityVector([1.0; 6]); 3];
        let zeros = [UtilityVector([0.0; 6]); 3];
        assert!((qoe(&p, &w, &ones) - 1.0).abs() < 1e-12);
        assert_eq!(qoe(&p, &w, &zeros), 0.0);
        assert!((qoe(&p, &uniform_weights(), &ones) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qoe_hand_computed_toy() {
        // two active attributes per service, the rest weighted zero
        let w = [
            WeightVector::new([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            WeightVector::new([0.2, 0.8, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            WeightVector::new([0.9, 0.1, 0.0, 0.0, 0.0, 0.0]).unwrap(),
        ];
        let u = [
            UtilityVector([1.0, 0.0, 0.3, 0.3, 0.3, 0.3]),
            UtilityVector([0.5, 0.25, 0.0, 0.0, 0.0, 0.0]),
            UtilityVector([0.4, 1.0, 1.0, 1.0, 1.0, 1.0]),
        ];
        let p = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
        // 0.1*0.5 + 0.3*(0.1+0.2) + 0.6*(0.36+0.1)
        let want = 0.05 + 0.09 + 0.276;
        assert!((qoe(&p, &w, &u) - want).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_target(&[0.2, 0.9, 0.5], None).unwrap(), 1);
        assert_eq!(select_target(&[0.4], None).unwrap(), 0);
        assert_eq!(select_target(&[0.7, 0.7, 0.1], Some(1)).unwrap(), 1);
        assert_eq!(select_target(&[0.7, 0.7, 0.1], None).unwrap(), 0);
        assert_eq!(select_target(&[0.7, 0.7, 0.1], Some(2)).unwrap(), 0);
        assert!(matches!(select_target(&[], None), Err(FahpError::EmptySelection)));
    }

    #[test]
    fn trigger_examples() {
        assert!(!should_trigger(1.05, 1.0, 1.08, false, false));
        assert!(should_trigger(1.2, 1.0, 1.08, false, false));
        assert!(!should_trigger(1.2, 1.0, 1.08, true, false));
        assert!(!should_trigger(1.2, 1.0, 1.08, false, true));
        // strict comparison at the threshold itself
        assert!(!should_trigger(1.08, 1.0, 1.08, false, false));
        assert!(should_trigger(0.3, 0.0, 1.08, false, false));
    }

    #[test]
    fn priorities_validate() {
        assert!(ServicePriority::new([0.5, 0.5, 0.1]).is_err());
        assert!(ServicePriority::new([-0.1, 0.6, 0.5]).is_err());
        let cfg = FahpConfig::builtin().unwrap();
        assert_eq!(cfg.priority("p1").unwrap().as_slice(), &[0.1, 0.3, 0.6]);
        assert_eq!(cfg.priority("p2").unwrap().as_slice(), &[0.1, 0.6, 0.3]);
        assert_eq!(cfg.priority("p3").unwrap().as_slice(), &[0.6, 0.3, 0.1]);
        assert!(cfg.priority("p9").is_err());
    }

    #[test]
    fn builtin_matrices_are_the_published_tables() {
        let cfg = FahpConfig::builtin().unwrap();
        let v = cfg.matrix(Service::Voice);
        assert_eq!(v.entry(0, 1), Tfn { l: 3.0, m: 5.0, u: 7.0 });
        assert_eq!(v.entry(4, 5), Tfn { l: 0.11, m: 0.14, u: 2.0 });
        assert_eq!(cfg.matrix(Service::Video).entry(3, 0), Tfn { l: 0.14, m: 0.2, u: 0.33 });
        assert_eq!(cfg.matrix(Service::Web).entry(5, 0), Tfn { l: 3.0, m: 5.0, u: 7.0 });
    }

    #[test]
    fn config_rejects_missing_pieces() {
        assert!(FahpConfig::from_toml("schema_version = 2").is_err());
        let text = BUILTIN_CONFIG.replace("schema_version = 1", "schema_version = 3");
        assert!(FahpConfig::from_toml(&text).is_err());
    }

    proptest! {
        #[test]
        fn qoe_monotone_in_each_utility(base in prop::collection::vec(0.0..1.0f64, 18), k in 0..18usize, bump in 0.0..1.0f64) {
            let cfg = FahpConfig::builtin().unwrap();
            let w = cfg.weights(PossibilityRule::Extent).unwrap();
            let p = ServicePriority::new([0.1, 0.3, 0.6]).unwrap();
            let mk = |v: &[f64]| -> [UtilityVector; 3] {
                let mut out = [UtilityVector([0.0; 6]); 3];
                for s in 0..3 { out[s].0.copy_from_slice(&v[s * 6..s * 6 + 6]); }
                out
            };
            let lo = qoe(&p, &w, &mk(&base));
            let mut raised = base.clone();
            raised[k] = (raised[k] + bump).min(1.0);
            prop_assert!(qoe(&p, &w, &mk(&raised)) >= lo - 1e-15);
        }

        #[test]
        fn selection_invariant_under_increasing_maps(scores in prop::collection::vec(-10.0..10.0f64, 1..8), cur in 0..8usize) {
            let current = (cur < scores.len()).then_some(cur);
            let a = select_target(&scores, current).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            let b = select_target(&mapped, current).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
