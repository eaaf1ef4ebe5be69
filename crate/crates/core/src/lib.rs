//! Reactive coded cooperation over carrier-sense MAC: channel model,
//! outage and cooperator-availability analysis, and a discrete-event
//! network simulator.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dharq;
pub mod mac;
pub mod channel;
pub mod config;
pub mod error;
pub mod quadrature;
pub mod sim;
pub mod units;

pub use channel::{PropagationParams, RateParams, SinrSegment};
pub use error::{Error, Result};
pub use units::{Position, SimTime};
