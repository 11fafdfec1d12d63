//! Conversions between 8-bit images and the [0, 1] float tensors the
//! network consumes.

use crate::error::{Error, Result};
use crate::io::ImageU8;
use crate::tensor::{Scalar, Shape, Tensor};

/// One image to a (1, 3, H, W) tensor with values in [0, 1].
pub fn image_to_tensor<T: Scalar>(img: &ImageU8) -> Tensor<T> {
    let (h, w) = (img.height(), img.width());
    let shape = Shape::new(1, 3, h, w);
    let mut data = vec![T::zero(); shape.numel()];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = img.rgb_at(y, x);
            for (c, v) in [r, g, b].into_iter().enumerate() {
                data[shape.idx(0, c, y, x)] = T::from_f64(v as f64 / 255.0);
            }
        }
    }
    Tensor::from_vec(shape, data).expect("sized to shape")
}

/// One sample of a (N, 3, H, W) tensor back to 8-bit RGB: clamp to [0, 1],
/// scale to 255, round to nearest.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>, sample: usize) -> Result<ImageU8> {
    let (n, c, h, w) = t.shape().dims();
    if c != 3 {
        return Err(Error::dim(format!("image conversion needs 3 channels, got {c}")));
    }
    if sample >= n {
        return Err(Error::dim(format!("sample {sample} out of range for batch of {n}")));
    }
    let mut pixels = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = t.data()[t.shape().idx(sample, ch, y, x)].to_f64();
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    ImageU8::new(w, h, pixels)
}
