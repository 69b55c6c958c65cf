//! Feature files, manifests, the toy tokenizer and synthetic corpora.

mod features;
mod manifest;
pub mod synth;
mod vocab;

pub use features::{
    read_features, synth_features, write_features, FeatureRegime, FeatureSequence, RegimeKind,
};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{build_synthetic_dataset, SynthSpec, SyntheticDataset};
pub use vocab::{
    normalize_words, tokenize, ToyVocab, INSTRUCTION_WORDS, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN,
};
