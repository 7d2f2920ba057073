//! Lateral, sum/intersection and composite dyadic norms, plus frequency envelopes.

pub mod composite;
pub mod envelope;
pub mod lateral;
pub mod velocity;

pub use composite::{composite_norm, free_evolution, CompositeParams, NormKind, NormReport};
pub use envelope::{data_envelope, frequency_envelope, FrequencyEnvelope};
pub use lateral::{direction_set, lateral_norm, Direction, LateralData};
pub use velocity::{intersection_space_norm, sum_space_norm, SumBound, SumOptions, VelocitySet};
