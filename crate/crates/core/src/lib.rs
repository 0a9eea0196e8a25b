//! Cross-tokenizer knowledge-distillation primitives.
//!
//! The crate works entirely on explicit vocabularies and stored probability
//! tensors; it contains no model. The pipeline is:
//!
//! 1. [`vocab`]: vocabularies, token canonicalization and toy tokenizers.
//! 2. [`align`]: dynamic-programming span alignment of two token sequences.
//! 3. [`projection`]: the sparse student → teacher projection matrix.
//! 4. [`chunks`]: chain-rule merge of per-position distributions into chunks.
//! 5. [`losses`]: common-KL, ULD, GOLD, P-KL and H-KL with analytic gradients.
//! 6. [`training`]: multi-teacher aggregation, KD/CE scaling and a step driver.
//! 7. [`audit`]: per-category coverage of the common set and loss-mode choice.
//!
//! [`io`] reads and writes logits dumps; [`gradcheck`] holds the
//! finite-difference checks and random instance generators used by tests and
//! the CLI.

// Negated float comparisons are how NaN is rejected during validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod audit;
pub mod chunks;
mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod math;
pub mod projection;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
