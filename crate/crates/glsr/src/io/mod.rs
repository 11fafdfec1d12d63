//! Bit-exact file formats: PPM images and binary weight checkpoints.

mod checkpoint;
mod convert;
mod ppm;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_weights, save_weights};
pub use convert::{image_to_tensor, tensor_to_image};
pub use ppm::{load_ppm, read_ppm, save_ppm, write_ppm, ImageU8};
