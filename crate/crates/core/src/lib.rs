//! Numerical toolkit for process matrices and two-time (pre- and
//! post-selected) quantum states at qubit/qutrit scale.
//!
//! The crate is organised around a single value type, [`tensor::LabeledTensor`]:
//! a dense complex array whose axes carry Hilbert-space labels (party, stage,
//! raised/lowered, daggered). The bullet operation contracts raised slots
//! against lowered slots of the same label and tensors everything else, which
//! is all the algebra the two-time formalism needs.
//!
//! On top of that sit:
//!
//! - [`channels`]: quantum instruments as outcome-grouped Kraus operators,
//!   their density-vector and Choi forms, the throw-away-and-replace and
//!   do-nothing channel vectors, and a seeded Stinespring sampler.
//! - [`process`]: process matrices, the five validity conditions,
//!   trace-and-replace algebra, the trace probability rule, a causally
//!   ordered construction, and a projection-based sampler of valid matrices.
//! - [`twotime`]: pure and mixed two-time states, their probability rules,
//!   and the exact coefficient relabeling between process matrices and
//!   bipartite two-time density vectors (in both directions).
//! - [`sim`]: exact density-matrix simulation of the entangled-ancilla
//!   preparation circuits, with post-selection and an optional shot sampler.
//! - [`verify`]: randomized verification of the generalized channel
//!   identities satisfied by linear two-time states, in both representations.
//!
//! All values are immutable after construction and all operations are pure;
//! randomness always enters through an explicit 64-bit seed.

pub mod channels;
mod linalg;
pub mod process;
pub mod report;
pub mod sim;
pub mod tensor;
pub mod twotime;
pub mod verify;

use thiserror::Error;

/// Default absolute tolerance for approximate comparisons.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum Error {
    /// Two slots that should pair (or two objects that should compose) carry
    /// different dimensions.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// An operation would produce a tensor carrying the same slot label twice.
    #[error("duplicate slot {0} in tensor")]
    DuplicateSlot(String),

    /// Outcome index outside the instrument's outcome range.
    #[error("outcome index {index} out of range (instrument has {len} outcomes)")]
    IndexOutOfRange { index: usize, len: usize },

    /// Trace-and-replace needs at least one subsystem.
    #[error("empty subsystem subset")]
    EmptySubset,

    /// A tensor is missing slots required by the requested interpretation.
    #[error("missing slots: {context}")]
    MissingSlots { context: String },

    /// A Kraus set does not satisfy the completeness relation.
    #[error("Kraus operators are not trace preserving (completeness residual {residual:.3e})")]
    NotCptp { residual: f64 },

    /// The pre/post-selection pair is incompatible with every outcome of the
    /// measurement: the normalising denominator vanishes.
    #[error("forbidden post-selection: denominator {denominator:.3e} below threshold {threshold:.3e}")]
    ForbiddenPostselection { denominator: f64, threshold: f64 },

    /// Probabilities from the trace rule do not sum to one, signalling an
    /// invalid process matrix or instrument.
    #[error("probabilities sum to {sum} instead of 1 (tolerance {tol:.3e})")]
    NonNormalized { sum: f64, tol: f64 },

    /// The valid-process-matrix sampler ran out of rejection attempts.
    #[error("sampler exhausted after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    /// No epsilon in the policy's budget makes the perturbed channel positive.
    #[error("no epsilon found after {halvings} halvings")]
    EpsilonNotFound { halvings: u32 },

    /// Malformed input document.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
