//! Error-bounded lossy quantization of `f32`/`f64` arrays.
//!
//! Every value either lands in a quantization bin whose reconstruction is
//! checked against the requested bound at compression time, or is stored
//! verbatim. The bound therefore holds for every element, including NaN,
//! infinities and denormals, and the output bytes are identical across
//! thread counts and conforming builds.
//!
//! The kernels are generic over [`Scalar`]; the `*32`/`*64` aliases below
//! name the two concrete widths.

// `!(a < b)` is how NaN is rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod container;
pub mod golden;
pub mod numerics;
pub mod pipeline;
pub mod quantizer;
pub mod rng;
pub mod sweep;
pub mod verify;

pub use container::{ContainerError, StreamFlags, StreamHeader, StreamView};
pub use numerics::{DType, Scalar, ValueClass, ValueKind};
pub use pipeline::{
    compress, compress_raw, decompress, decompress_raw, CompressStats, Compressed, PipelineError,
    PipelineOptions,
};
pub use quantizer::{
    CodedValue, ConfigError, DerivedConstants, LogImpl, Mode, QuantConfig, Quantizer, Reconstructor,
};
pub use verify::{verify, Bound, VerifyError, VerifyReport};

pub type Quantizer32 = Quantizer<f32>;
pub type Quantizer64 = Quantizer<f64>;
pub type Reconstructor32 = Reconstructor<f32>;
pub type Reconstructor64 = Reconstructor<f64>;
pub type DerivedConstants32 = DerivedConstants<f32>;
pub type DerivedConstants64 = DerivedConstants<f64>;
pub type Bound32 = Bound<f32>;
pub type Bound64 = Bound<f64>;
