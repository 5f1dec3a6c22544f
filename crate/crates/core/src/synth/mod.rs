//! Degradation model and synthetic fundus corpus.

mod corpus;
mod degrade;
mod fundus;


pub use corpus::{
    build_corpus, clean_id, degraded_id, read_pairs, write_pairs, CorpusSpec, PairRow, MANIFEST_FILE, PAIRS_FILE,
};
pub use degrade::{degrade, degrade_seeded, DegradationSpec};
pub use fundus::{synth_fundus, OpticDisc, SynthFundus, SynthSpec};
