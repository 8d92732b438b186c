//! Corpus handling: label taxonomy, manifests, splits and the toy synthesizer.

mod manifest;
mod split;
mod taxonomy;
pub mod toy;

pub use manifest::{load_manifest, parse_manifest, write_manifest, UtteranceRecord, MANIFEST_HEADER};
pub use split::{make_split, Partition, SplitName, SplitRequest, SplitSpec};
pub use taxonomy::{AlgorithmClass, GeneratorFamily, NUM_CLASSES};
pub use toy::{
    build_toy_corpus, generate_toy_corpus, synthesize_toy_utterance, ClassRecipe, CorpusSection,
    Formant, ToyCorpusConfig, ToySpec, ToyUtterance,
};
