//! Dynamic-kernel polar coding over finite fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`gf`]: arithmetic in F_q, kernels and GL(ℓ, q) sampling
//! * [`channel`]: discrete memoryless channels and channel constructions
//! * [`params`]: the eight channel parameters, the Hölder suite, E-null helpers
//! * [`transform`]: exact and Monte Carlo synthesized channels
//! * [`ftpc`]: coset weight enumerators and the Z/S-end bounds
//! * [`kernsearch`]: kernel certification and per-node search
//! * [`codec`]: code construction, SC decoding, randomized-rounding encoding
//! * [`procsim`]: polarization process simulation and per-step checks
//! * [`io`]: JSON documents shared with front ends

pub mod channel;
pub mod codec;
pub mod error;
pub mod ftpc;
pub mod gf;
pub mod io;
pub mod kernsearch;
pub mod params;
pub mod procsim;
pub mod transform;
pub mod util;

pub use channel::{Channel, Derived};
pub use codec::{CodeSpec, DecodeOutcome, EncodeOutcome, FrozenClass, SimReport};
pub use error::{Error, Result};
pub use ftpc::WeightEnumerator;
pub use gf::{ArithOp, FieldElement, FieldSpec, Kernel};
pub use kernsearch::CertReport;
pub use params::ParamVector;
pub use procsim::ProcessTrace;
pub use transform::{SynthChannel, TransformConfig};
