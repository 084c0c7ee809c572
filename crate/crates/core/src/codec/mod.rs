//! Quantization, range coding and end-to-end rate measurement.

mod bitstream;
mod measure;
mod quantize;
mod range_coder;

pub use bitstream::{decode, encode, Bitstream, BITSTREAM_MAGIC, BITSTREAM_VERSION};
pub use measure::{measure_rate, RateMeasurement};
pub use quantize::{add_uniform_noise, quantize_round, IntTensor};
pub use range_coder::{RangeDecoder, RangeEncoder};
