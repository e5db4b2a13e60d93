#![forbid(unsafe_code)]

//! Simulation and analysis toolkit for anisotropic bootstrap percolation
//! on finite boxes.
//!
//! The central object is the threshold model `N_r^{a1,..,ad}`: every vertex
//! of `[L1] x .. x [Ld]` has the `a_i` nearest neighbours in the `-e_i` and
//! `+e_i` directions, a healthy vertex becomes infected once at least `r` of
//! its neighbours are infected, and infected vertices stay infected. The
//! crate provides:
//!
//! * [`family`] — update families (threshold and explicit-rule), stable
//!   directions, the symbolic stable set and criticality class, and the
//!   predicted critical-length scaling orders;
//! * [`engine`] — bit-grid configurations, synchronous steps, closure by
//!   frontier propagation, internal filling, percolation, and the snapshot
//!   file format;
//! * [`sampler`] — reproducible counter-based Bernoulli seeding, Monte Carlo
//!   percolation probabilities with Wilson intervals, and critical-length
//!   bracketing;
//! * [`growth`] — the alpha/t growth exponents, s-pattern detection in
//!   strips, and droplet/growth conditional experiments;
//! * [`beams`] — the coarse beams process, generated beams, strong
//!   connectivity, beam enumeration, and subcritical cluster-decay
//!   measurement.

pub mod beams;
pub mod engine;
pub mod family;
pub mod growth;
pub mod sampler;

pub use engine::{closure, is_internally_filled, percolates, step};
pub use engine::{Boundary, Configuration, EngineError, GridBox, SubBlock};
pub use family::{
    Criticality, ExplicitFamily, FamilyError, NeighborhoodSpec, RationalDirection, ScalingOrder,
    ScalingStatus, StableSetCase, StableSetDescription, ThresholdFamily, UpdateFamily,
};
pub use sampler::{BernoulliSeeding, LcEstimate, ProbabilityEstimate, SamplerError, SamplingMode};
