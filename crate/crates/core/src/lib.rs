//! Fixed-confidence best-arm identification under Entropic Value-at-Risk
//! for reward laws with finite support on `[0, 1]`.

pub mod config;
pub mod error;
pub mod evar;
pub mod klinf;
pub mod measures;
pub mod numeric;
pub mod oracle;
pub mod oracles;
pub mod sim;
pub mod tas;

pub use error::{Error, Result};
pub use evar::{evar, EvarResult, Regime};
pub use klinf::{kl_inf_lower, kl_inf_upper, Threshold};
pub use measures::{DiscreteDistribution, RiskLevel};
