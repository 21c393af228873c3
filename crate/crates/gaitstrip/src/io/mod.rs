//! File formats and silhouette ingestion. The byte layouts are documented at
//! the top of `weights.rs` and `embeddings.rs`; all multi-byte integers and
//! floats are little-endian.

pub mod embeddings;
pub mod pgm;
pub mod weights;

pub use embeddings::{append_embedding, load_embeddings, save_embeddings, EMBEDDINGS_MAGIC};
pub use pgm::{load_sequence, parse_pgm, write_pgm};
pub use weights::{
    load_weights, load_weights_expecting, save_weights, WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC,
};
