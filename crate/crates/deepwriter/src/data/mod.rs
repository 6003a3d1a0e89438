//! Dataset manifests and splits, image loading, the synthetic handwriting
//! corpus generator, and checkpoint serialization.

pub mod checkpoint;
pub mod image_io;
pub mod manifest;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use image_io::{load_image, write_pgm};
pub use manifest::{
    load_manifest, split_per_writer, write_manifest, LabelTable, ManifestEntry, Split,
};
pub use synth::{generate_synthetic_corpus, GlyphMode, SynthConfig, WriterStyle};
