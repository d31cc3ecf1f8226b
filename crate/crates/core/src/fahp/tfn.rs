use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::FahpError;

/// Triangular fuzzy number `(l, m, u)` with `l <= m <= u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Tfn {
    pub l: f64,
    pub m: f64,
    pub u: f64,
}

impl From<[f64; 3]> for Tfn {
    fn from([l, m, u]: [f64; 3]) -> Self {
        Tfn { l, m, u }
    }
}

impl From<Tfn> for [f64; 3] {
    fn from(t: Tfn) -> Self {
        [t.l, t.m, t.u]
    }
}

impl fmt::Display for Tfn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.l, self.m, self.u)
    }
}

impl Tfn {
    pub const ZERO: Tfn = Tfn { l: 0.0, m: 0.0, u: 0.0 };
    pub const ONE: Tfn = Tfn { l: 1.0, m: 1.0, u: 1.0 };
    /// Diagonal entry of every decision matrix.
    pub const EQUAL: Tfn = Tfn { l: 1.0, m: 1.0, u: 3.0 };

    pub fn new(l: f64, m: f64, u: f64) -> Result<Self, FahpError> {
        let t = Tfn { l, m, u };
        if t.is_ordered() && [l, m, u].iter().all(|v| v.is_finite()) {
            Ok(t)
        } else {
            Err(FahpError::InvalidTfn(t))
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.l <= self.m && self.m <= self.u
    }

    pub fn is_positive(&self) -> bool {
        self.l > 0.0
    }

    pub fn scale(&self, k: f64) -> Tfn {
        Tfn { l: self.l * k, m: self.m * k, u: self.u * k }
    }

    pub fn max_abs_diff(&self, other: &Tfn) -> f64 {
        (self.l - other.l).abs().max((self.m - other.m).abs()).max((self.u - other.u).abs())
    }
}

pub fn tfn_add(a: Tfn, b: Tfn) -> Tfn {
    Tfn { l: a.l + b.l, m: a.m + b.m, u: a.u + b.u }
}

impl Add for Tfn {
    type Output = Tfn;

    fn add(self, rhs: Tfn) -> Tfn {
        tfn_add(self, rhs)
    }
}

pub fn tfn_mul(a: Tfn, b: Tfn) -> Result<Tfn, FahpError> {
    if !a.is_positive() {
        return Err(FahpError::NonPositive(a));
    }
    if !b.is_positive() {
        return Err(FahpError::NonPositive(b));
    }
    Ok(Tfn { l: a.l * b.l, m: a.m * b.m, u: a.u * b.u })
}

pub fn tfn_recip(a: Tfn) -> Result<Tfn, FahpError> {
    if !a.is_positive() {
        return Err(FahpError::NonPositive(a));
    }
    Ok(Tfn { l: 1.0 / a.u, m: 1.0 / a.m, u: 1.0 / a.l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(l: f64, m: f64, u: f64) -> Tfn {
        Tfn::new(l, m, u).unwrap()
    }

    #[test]
    fn addition() {
        assert_eq!(t(1.0, 2.0, 4.0) + Tfn::ZERO, t(1.0, 2.0, 4.0));
        assert_eq!(tfn_add(Tfn::EQUAL, t(1.0, 2.0, 4.0)), t(2.0, 3.0, 7.0));
    }

    #[test]
    fn multiplication() {
        assert_eq!(tfn_mul(t(1.0, 2.0, 4.0), Tfn::ONE).unwrap(), t(1.0, 2.0, 4.0));
        let p = tfn_mul(t(1.0, 3.0, 5.0), t(0.2, 0.33, 1.0)).unwrap();
        assert!(p.max_abs_diff(&t(0.2, 0.99, 5.0)) < 1e-12);
        assert!(matches!(tfn_mul(Tfn::ZERO, Tfn::ONE), Err(FahpError::NonPositive(_))));
    }

    #[test]
    fn reciprocal_matches_importance_scale() {
        assert_eq!(tfn_recip(t(1.0, 2.0, 4.0)).unwrap(), t(0.25, 0.5, 1.0));
        let r = tfn_recip(t(3.0, 5.0, 7.0)).unwrap();
        assert!(r.max_abs_diff(&t(0.14, 0.2, 0.33)) < 0.005, "{r}");
        assert!(tfn_recip(t(0.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn rejects_unordered() {
        assert!(Tfn::new(2.0, 1.0, 3.0).is_err());
        assert!(Tfn::new(1.0, f64::NAN, 3.0).is_err());
    }

    fn arb_tfn() -> impl Strategy<Value = Tfn> {
        (0.01..10.0f64, 0.0..5.0f64, 0.0..5.0f64).prop_map(|(l, dm, du)| Tfn { l, m: l + dm, u: l + dm + du })
    }

    proptest! {
        #[test]
        fn operations_preserve_order(a in arb_tfn(), b in arb_tfn()) {
            prop_assert!(tfn_add(a, b).is_ordered());
            prop_assert!(tfn_mul(a, b).unwrap().is_ordered());
            prop_assert!(tfn_recip(a).unwrap().is_ordered());
        }

        #[test]
        fn reciprocal_is_involution(a in arb_tfn()) {
            let back = tfn_recip(tfn_recip(a).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&a) < 1e-9 * (1.0 + a.u));
        }
    }
}
