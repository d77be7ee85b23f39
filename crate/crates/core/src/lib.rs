//! Channel-adapted quantum error recovery by semidefinite programming.
//!
//! Channels are handled in three equivalent forms (Kraus, transfer and
//! Choi). A recovery for a channel and code is synthesised by maximising a
//! fidelity bound `1 - ε` over completely positive trace preserving maps,
//! and checked afterwards by direct worst-case fidelity search.

pub mod channel;
pub mod code;
pub mod error;
pub mod io;
pub mod numkernel;
pub mod random;
pub mod sdp;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
