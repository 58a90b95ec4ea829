//! Dataset inputs: metadata tables, precomputed embedding files and a
//! synthetic world generator.

mod embeddings;
mod metadata;
mod synth;

pub use embeddings::{EmbeddingFile, EMBEDDING_FILE_VERSION};
pub use metadata::{
    ingest_metadata, ingest_metadata_bytes, order_by_ids, write_metadata_csv, IngestReport, MetadataFormat,
    MetadataRecord, RowError, MAX_MALFORMED_FRACTION, PLACE_FIELDS,
};
pub use synth::{
    synthesize_world, SyntheticCluster, SyntheticSample, SyntheticWorld, SyntheticWorldConfig,
};
