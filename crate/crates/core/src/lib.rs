//! Core library for simulating a resistor-noise key exchange loop and the
//! statistical attacks an eavesdropper can mount against it.
//!
//! The crate is organised around the signal path:
//!
//! * [`noise`] — band-limited thermal-noise synthesis and signal surgery
//!   (clipping, aliasing, parasitic injection, Gaussianity forensics).
//! * [`channel`] — the two-party loop itself: cable models from an ideal
//!   short wire to an RLC ladder, exchange simulation, and protocol runs.
//! * [`attacks`] — passive wire-tap attacks: mean-square comparison,
//!   generator-voltage separation, derivative-based end reconstruction,
//!   and DC/mains artifact probes.
//! * [`stats`] — bit-error estimation, confidence intervals, information
//!   leak, spectra, and scaling fits used to score the attacks.
//! * [`io`] — trace records and CSV export.

// Validation tests are written `!(x > 0.0)` on purpose (rejects NaN too),
// and the numeric kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod attacks;
pub mod channel;
pub mod error;
pub mod io;
pub mod noise;
pub mod stats;

pub use error::{Error, Result};

// The types every consumer ends up passing around.
pub use attacks::Verdict;
pub use channel::{Arrangement, CableModel, ExchangeSpec, ProtocolSpec, Trace};
pub use noise::{NoiseKind, NoiseSpec, ParasiticSpec, Signal};
pub use stats::AttackTally;
