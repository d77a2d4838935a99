//! Exponentially weighted stability and passivity tools for discrete-time
//! feedback loops.
//!
//! Signals are weighted by the group action `(ρ∘x)(t) = ρᵗ x(t)`. Placing
//! the multipliers `ρ⁻¹∘ · ∘ρ` around the forward block and `ρ∘ · ∘ρ⁻¹`
//! around the feedback block of a standard loop lets a forward block with
//! poles outside the unit circle be traded against a feedback block that is
//! passive (or small) on a shrunken circle.
//!
//! - [`signals`]: truncated inner products, norms and the weighting action.
//! - [`lti`]: state-space systems, transfer evaluation and the `ρ`-shift.
//! - [`certify`]: frequency-sweep gains, passivity indices, SPR checks and
//!   the Cayley transform.
//! - [`feedback`]: closed-loop simulation and stability verdicts.
//! - [`paa`]: recursive parameter adaptation on weighted data.

pub mod certify;
pub mod error;
pub mod feedback;
pub mod generators;
mod json_float;
pub mod lti;
pub mod paa;
pub mod signals;

pub use error::{Error, Result};
pub use lti::{RationalSiso, StateSpaceSystem};
pub use signals::{Horizon, Signal};
