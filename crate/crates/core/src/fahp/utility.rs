use serde::{Deserialize, Serialize};

use super::{Attribute, FahpError, Service, UtilityVector, N_ATTRIBUTES};

/// Attribute-to-utility normalization, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityFn {
    /// `f(x) = 1 / (1 + exp(-a (x - b)))`
    SigmoidBenefit { a: f64, b: f64 },
    /// `g(x) = 1 - f(x)`
    SigmoidCost { a: f64, b: f64 },
    /// `u(x) = 1 - g / x`
    UnilateralBenefit { g: f64 },
    /// `h(x) = 1 - g x`
    UnilateralCost { g: f64 },
}

fn sigmoid(a: f64, b: f64, x: f64) -> f64 {
    1.0 / (1.0 + (-a * (x - b)).exp())
}

impl UtilityFn {
    pub fn eval(&self, x: f64) -> f64 {
        let raw = match *self {
            UtilityFn::SigmoidBenefit { a, b } => sigmoid(a, b, x),
            UtilityFn::SigmoidCost { a, b } => 1.0 - sigmoid(a, b, x),
            UtilityFn::UnilateralBenefit { g } => {
                if x > 0.0 {
                    1.0 - g / x
                } else {
                    0.0
                }
            }
            UtilityFn::UnilateralCost { g } => 1.0 - g * x,
        };
        if raw.is_nan() {
            0.0
        } else {
            raw.clamp(0.0, 1.0)
        }
    }

    pub fn is_benefit(&self) -> bool {
        matches!(self, UtilityFn::SigmoidBenefit { .. } | UtilityFn::UnilateralBenefit { .. })
    }
}

/// Per-service utility functions, one per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceUtilities {
    pub rss: UtilityFn,
    pub bandwidth: UtilityFn,
    pub delay: UtilityFn,
    pub jitter: UtilityFn,
    pub loss_rate: UtilityFn,
    pub cost: UtilityFn,
}

impl ServiceUtilities {
    pub fn get(&self, attribute: Attribute) -> &UtilityFn {
        match attribute {
            Attribute::Rss => &self.rss,
            Attribute::Bandwidth => &self.bandwidth,
            Attribute::Delay => &self.delay,
            Attribute::Jitter => &self.jitter,
            Attribute::LossRate => &self.loss_rate,
            Attribute::Cost => &self.cost,
        }
    }

    pub fn vector(&self, raw: &[f64; N_ATTRIBUTES]) -> UtilityVector {
        let mut u = [0.0; N_ATTRIBUTES];
        for a in Attribute::ALL {
            u[a.index()] = self.get(a).eval(raw[a.index()]);
        }
        UtilityVector(u)
    }
}

/// Utility table keyed by service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub voice: Option<ServiceUtilities>,
    pub video: Option<ServiceUtilities>,
    pub web: Option<ServiceUtilities>,
}

impl UtilityTable {
    pub fn service(&self, service: Service) -> Result<&ServiceUtilities, FahpError> {
        match service {
            Service::Voice => self.voice.as_ref(),
            Service::Video => self.video.as_ref(),
            Service::Web => self.web.as_ref(),
        }
        .ok_or(FahpError::UnknownUtility { service, attribute: None })
    }

    pub fn utility(&self, service: Service, attribute: Attribute, raw: f64) -> Result<f64, FahpError> {
        Ok(self.service(service)?.get(attribute).eval(raw))
    }
}
