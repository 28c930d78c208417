//! Lossless serialization: bit-level IO, canonical Huffman coding, and the
//! `.nwc` container format.

mod bits;
mod container;
mod huffman;

pub use bits::{BitReader, BitWriter};
pub use container::{Container, ModuleDescriptor, ModuleKind, NormDescriptor, MAGIC, VERSION};
pub use huffman::{HuffmanCodebook, MAX_CODE_LEN};
