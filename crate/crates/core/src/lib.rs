//! Discrete-event simulator of mobility-aware vertical handover across
//! UMTS, WiMAX, LTE and WLAN access networks.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod esn;
pub mod fahp;
pub mod harness;
pub mod mobility;
pub mod mptcp;
pub mod radio;
pub mod rng;
