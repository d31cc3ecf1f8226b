//! Received signal strength for macro cells and WLAN access points.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{AccessPoint, Position};

/// Distances below 1 m are clamped; both path-loss laws diverge at zero.
pub const D_MIN_KM: f64 = 0.001;

/// WLAN carrier used when an access point does not name one.
pub const DEFAULT_WLAN_FREQ_MHZ: f64 = 2400.0;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("distance must be positive, got {0} km")]
    Distance(f64),
    #[error("frequency must be positive, got {0} MHz")]
    Frequency(f64),
    #[error("power must be positive, got {0} W")]
    Power(f64),
    #[error("shadowing deviation must be non-negative, got {0} dB")]
    Shadow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssSample {
    pub ap_id: u32,
    pub rss_dbm: f64,
    pub distance_km: f64,
    pub shadowed: bool,
}

pub fn watts_to_dbm(p_watts: f64) -> Result<f64, RadioError> {
    if !(p_watts > 0.0) || !p_watts.is_finite() {
        return Err(RadioError::Power(p_watts));
    }
    Ok(10.0 * (p_watts * 1000.0).log10())
}

fn check_distance(distance_km: f64) -> Result<f64, RadioError> {
    if !(distance_km > 0.0) || !distance_km.is_finite() {
        return Err(RadioError::Distance(distance_km));
    }
    Ok(distance_km.max(D_MIN_KM))
}

fn shadow<R: Rng + ?Sized>(shadow_sigma: f64, rng: &mut R) -> Result<f64, RadioError> {
    if !(shadow_sigma >= 0.0) || !shadow_sigma.is_finite() {
        return Err(RadioError::Shadow(shadow_sigma));
    }
    if shadow_sigma == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, shadow_sigma).map_err(|_| RadioError::Shadow(shadow_sigma))?;
    Ok(normal.sample(rng))
}

/// Macro cell RSS: `P_t - 127.5 - 35.2 log10(d) - x_sigma`.
pub fn rss_macro<R: Rng + ?Sized>(
    tx_power_dbm: f64,
    distance_km: f64,
    shadow_sigma: f64,
    rng: &mut R,
) -> Result<f64, RadioError> {
    let d = check_distance(distance_km)?;
    Ok(tx_power_dbm - 127.5 - 35.2 * d.log10() - shadow(shadow_sigma, rng)?)
}

/// WLAN RSS under free-space loss: `P_t - 35.2 - 20 log10(f) - 20 log10(d) - x_sigma`.
pub fn rss_wlan<R: Rng + ?Sized>(
    tx_power_dbm: f64,
    freq_mhz: f64,
    distance_km: f64,
    shadow_sigma: f64,
    rng: &mut R,
) -> Result<f64, RadioError> {
    if !(freq_mhz > 0.0) || !freq_mhz.is_finite() {
        return Err(RadioError::Frequency(freq_mhz));
    }
    let d = check_distance(distance_km)?;
    Ok(tx_power_dbm - 35.2 - 20.0 * freq_mhz.log10() - 20.0 * d.log10() - shadow(shadow_sigma, rng)?)
}

/// Shadow-fading deviations per model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub macro_sigma_db: f64,
    pub wlan_sigma_db: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { macro_sigma_db: 2.296, wlan_sigma_db: 2.303 }
    }
}

impl ShadowConfig {
    pub fn off() -> Self {
        Self { macro_sigma_db: 0.0, wlan_sigma_db: 0.0 }
    }
}

/// RSS of `ap` at `at`, dispatching on network type. The distance is
/// clamped to `D_MIN_KM` so positions on top of an AP are legal.
pub fn rss_at<R: Rng + ?Sized>(
    ap: &AccessPoint,
    at: Position,
    shadowing: &ShadowConfig,
    rng: &mut R,
) -> Result<RssSample, RadioError> {
    let distance_km = (ap.distance_to(at) / 1000.0).max(D_MIN_KM);
    let (rss_dbm, sigma) = if ap.net_type.is_macro() {
        let s = shadowing.macro_sigma_db;
        (rss_macro(ap.tx_power_dbm, distance_km, s, rng)?, s)
    } else {
        let s = shadowing.wlan_sigma_db;
        let f = ap.carrier_freq_mhz.unwrap_or(DEFAULT_WLAN_FREQ_MHZ);
        (rss_wlan(ap.tx_power_dbm, f, distance_km, s, rng)?, s)
    };
    Ok(RssSample { ap_id: ap.ap_id, rss_dbm, distance_km, shadowed: sigma > 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn power_conversion() {
        assert_eq!(watts_to_dbm(1.0).unwrap(), 30.0);
        assert!((watts_to_dbm(53.0).unwrap() - 47.24).abs() < 0.01);
        assert!(watts_to_dbm(0.001).unwrap().abs() < 1e-12);
        assert_eq!(watts_to_dbm(0.0), Err(RadioError::Power(0.0)));
        assert!(watts_to_dbm(-3.0).is_err());
    }

    #[test]
    fn macro_point_values() {
        let mut rng = seeded(1);
        let tx = watts_to_dbm(43.0).unwrap();
        // 10 log10(43000) - 127.5
        let v = rss_macro(tx, 1.0, 0.0, &mut rng).unwrap();
        assert!((v - (-81.17)).abs() < 0.01, "{v}");
        let far = rss_macro(tx, 10.0, 0.0, &mut rng).unwrap();
        assert!((v - far - 35.2).abs() < 1e-9);
    }

    #[test]
    fn wlan_point_values() {
        let mut rng = seeded(1);
        let tx = watts_to_dbm(23.0).unwrap();
        let v = rss_wlan(tx, 2400.0, 0.05, 0.0, &mut rng).unwrap();
        assert!((v - (-33.16)).abs() < 0.01, "{v}");
        let v2 = rss_wlan(tx, 2400.0, 0.1, 0.0, &mut rng).unwrap();
        assert!((v - v2 - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((v - v2 - 6.02).abs() < 0.001);
        let edge = rss_wlan(43.62, 2400.0, 0.15, 0.0, &mut rng).unwrap();
        assert!((edge - (-42.70)).abs() < 0.01, "{edge}");
        let decade = rss_wlan(tx, 2400.0, 0.5, 0.0, &mut rng).unwrap();
        assert!((v - decade - 20.0).abs() < 1e-9);
    }

    #[test]
    fn domain_errors() {
        let mut rng = seeded(1);
        assert_eq!(rss_macro(40.0, 0.0, 0.0, &mut rng), Err(RadioError::Distance(0.0)));
        assert_eq!(rss_wlan(40.0, 2400.0, -1.0, 0.0, &mut rng), Err(RadioError::Distance(-1.0)));
        assert_eq!(rss_wlan(40.0, 0.0, 1.0, 0.0, &mut rng), Err(RadioError::Frequency(0.0)));
        assert!(rss_macro(40.0, 1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn tiny_distances_clamp() {
        let mut rng = seeded(1);
        let a = rss_macro(40.0, 1e-6, 0.0, &mut rng).unwrap();
        let b = rss_macro(40.0, D_MIN_KM, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shadowing_is_reproducible() {
        let a = rss_macro(46.33, 1.0, 2.296, &mut seeded(42)).unwrap();
        let b = rss_macro(46.33, 1.0, 2.296, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, rss_macro(46.33, 1.0, 0.0, &mut seeded(42)).unwrap());
    }

    #[test]
    fn shadowing_moments() {
        let mut rng = seeded(9);
        let n = 100_000;
        let base = rss_wlan(43.62, 2400.0, 0.1, 0.0, &mut rng).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| rss_wlan(43.62, 2400.0, 0.1, 2.303, &mut rng).unwrap() - base).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((sd / 2.303 - 1.0).abs() < 0.02, "{sd}");
    }

    proptest! {
        #[test]
        fn strictly_decreasing_in_distance(d in 0.001..50.0f64, k in 1.0001..10.0f64, tx in 0.0..60.0f64) {
            let mut rng = seeded(0);
            prop_assert!(rss_macro(tx, d * k, 0.0, &mut rng).unwrap() < rss_macro(tx, d, 0.0, &mut rng).unwrap());
            prop_assert!(rss_wlan(tx, 2400.0, d * k, 0.0, &mut rng).unwrap() < rss_wlan(tx, 2400.0, d, 0.0, &mut rng).unwrap());
        }
    }
}
