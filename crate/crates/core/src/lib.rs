//! Time-reversal asymmetry (the Zumbach effect) under the rough Heston model.
//!
//! * [`special`]: Mittag-Leffler density and CDF of the variance kernel.
//! * [`model`]: closed-form quadrature expressions for the Zumbach covariance,
//!   its small-δ asymptotic and the variance / fourth-moment formulas.
//! * [`simulate`]: Monte Carlo oracle for the Volterra variance dynamics.
//! * [`empirical`]: the forward/backward correlation statistics on daily
//!   return and realized-variance series.
//! * [`cli`]: command-line orchestration.

pub mod cli;
pub mod empirical;
pub mod model;
mod par;
pub mod quad;
pub mod simulate;
pub mod special;

pub use par::PARALLEL;
