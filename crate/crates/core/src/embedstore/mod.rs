//! Embedding tables, manifests and dataset loaders.

mod fgeb;
mod manifest;

pub use fgeb::{read_table, write_table, EmbeddingTable, MAGIC, VERSION};
pub(crate) use fgeb::Reader;
pub use manifest::{
    load_coarse, load_vocab, Benchmark, CoarseItem, CoarsePairs, CoarseSet, Inline, Manifest, Split,
    VocabDataset, VocabItem, VocabSet,
};
