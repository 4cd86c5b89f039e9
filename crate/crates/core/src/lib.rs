//! Speech features extraction.
//!
//! The crate turns mono audio into frame-level features: log spectrogram,
//! mel filterbanks, MFCC, PLP (optionally RASTA filtered) and an NCCF pitch
//! tracker with its post-processing. Post-processors add deltas, CMVN and
//! an energy VAD, and speaker normalization estimates per-speaker VTLN warps
//! from a diagonal GMM universal background model. A batch [`pipeline`]
//! ties the processors together, and [`eval`] holds pitch and ABX metrics.

pub mod audio;
pub mod error;
pub mod eval;
pub mod features;
pub mod framing;
pub mod pipeline;
pub mod pitch;
pub mod postproc;
pub mod serialize;
pub mod spectral;
pub mod utterances;
pub mod speaker_norm;

pub use audio::Audio;
pub use error::{Error, Result};
pub use features::{Features, FeaturesCollection};
pub use serialize::Format;
pub use utterances::{Utterance, Utterances};
