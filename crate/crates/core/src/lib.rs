//! Desk-scale speech-feature to language-model alignment.
//!
//! A transformer projector ([`bridgeformer`]) maps ASR-style feature
//! sequences onto the embedding table of a frozen language model, trained
//! directly against the table rows ([`embedlink`]). Around it sit synthetic
//! data ([`datakit`]), a small frozen decoder for generation ([`toylm`]),
//! alternative alignment strategies ([`baselines`]) and ROUGE-based scoring
//! ([`metrics`]).

mod binio;
pub mod error;
pub mod par;
pub mod params;
pub mod tensor;

pub mod bridgeformer;
pub mod checkpoint;
pub mod datakit;
pub mod embedlink;
pub mod transformer;

pub mod baselines;
pub mod experiment;
pub mod metrics;
pub mod toylm;

pub use binio::canonical_json;
pub use error::{Error, FormatError, Result};
pub use tensor::{Element, Gradients, Graph, Tensor, Var};
