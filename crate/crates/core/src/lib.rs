//! Exact steady state of the boundary-driven multiparticle asymmetric
//! diffusion model (MADM).
//!
//! The MADM is a zero-range lattice gas on `N` sites where `k` particles jump
//! together to the right at rate `1/[k]` and to the left at rate `γ^k/[k]`,
//! with `[k] = (1-γ^k)/(1-γ)`. Reservoirs at both ends inject and extract
//! particles. The stationary measure is a nested Jackson q-integral
//!
//! ```text
//! μ(m) ∝ ∫_{β_L}^{γβ_R} d_γt_1 ∫_{t_1}^{γβ_R} d_γt_2 ⋯ ∫_{t_{N-1}}^{γβ_R} d_γt_N  Π t_i^{m_i}/(1-t_i)
//! ```
//!
//! Modules:
//! - [`qcalc`]: q-numbers, q-derivative, Jackson integrals, truncation policy.
//! - [`model`]: parameters, configurations, rates, generator action, truncated generator matrix.
//! - [`steady`]: the stationary measure by two independent algorithms, normalization, marginals.
//! - [`simulate`]: Gillespie simulation with unbounded occupations.
//! - [`verify`]: residual checks of every identity the construction rests on.

pub mod error;
pub mod model;
pub mod qcalc;
mod series;
pub mod simulate;
pub mod steady;
pub mod verify;

pub use error::{MadmError, Result};
pub use model::{Configuration, Event, EventKind, ModelParams, TruncatedGenerator};
pub use qcalc::{QParam, TruncationPolicy};
pub use simulate::{EmpiricalStats, SimConfig};
pub use steady::{SiteWeight, SteadyStateEvaluator};
pub use verify::{LambdaVector, Residual, VerificationRecord};
