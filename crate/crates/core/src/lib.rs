//! Hierarchical nested-lattice quantization.
//!
//! Vectors are quantized with a multi-layer nested lattice code whose layers
//! all share one small Voronoi code `A_q`. Inner products between quantized
//! vectors are then decoded from a single `q^{2d}`-entry lookup table instead
//! of reconstructing the vectors. The crate also contains the product-code
//! pipeline for long vectors and matrices, and the distortion-rate harness
//! behind the `bench` binary.

pub mod bench;
pub mod error;
pub mod hierarchical;
pub mod lattice;
pub mod lut;
pub mod overload;
pub mod pipeline;
pub mod voronoi;

pub use error::{Error, Result};
pub use hierarchical::{HierarchicalCodec, HierarchicalEncoding, SandwichReport};
pub use lattice::{Lattice, LatticeKind, LatticePoint};
pub use lut::{InnerProductLut, OneSidedLut};
pub use overload::{ScaledEncoding, ScalingConfig};
pub use pipeline::{DitherMode, Pipeline, PipelineConfig, QuantizedColumn, QuantizedMatrix};
pub use voronoi::VoronoiCode;
