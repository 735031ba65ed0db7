//! JPEG compression/decompression in two modes: differentiable (tape
//! primitives, smooth rounding, through-gradients) and bit-exact
//! (integer coefficients, real entropy-coded bitstream).

pub mod bitstream;
pub mod codec;
mod diff;
mod tables;

pub use codec::{decode_image, encode_image, huffman_roundtrip, luma_coefficients};
pub use diff::jpeg_forward_tape;
pub use tables::{quant_table, QuantTables, BASE_CHROMA, BASE_LUMA, ZIGZAG};

use crate::error::{CoreError, Result};
use crate::tensor::{bchw, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum JpegMode {
    Differentiable,
    BitExact,
}

/// Quality plus rounding mode; subsampling is fixed at 4:4:4.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JpegConfig {
    pub quality: f64,
    pub mode: JpegMode,
}

impl JpegConfig {
    pub fn new(quality: f64, mode: JpegMode) -> Result<Self> {
        quant_table(quality)?;
        Ok(JpegConfig { quality, mode })
    }
}

fn split_images(images: &Tensor) -> Result<Vec<Tensor>> {
    let (b, c, h, w) = bchw(images, "jpeg_forward")?;
    let plane = c * h * w;
    Ok((0..b)
        .map(|i| {
            Tensor::new(
                images.data()[i * plane..(i + 1) * plane].to_vec(),
                vec![c, h, w],
            )
            .unwrap()
        })
        .collect())
}

fn join_images(images: Vec<Tensor>, shape: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(shape.iter().product());
    for img in images {
        data.extend_from_slice(img.data());
    }
    Tensor::new(data, shape.to_vec()).unwrap()
}

/// Compress and decompress a batch. Differentiable mode runs the tape
/// pipeline (eagerly, gradients discarded here; use
/// [`jpeg_forward_tape`] inside a larger graph for through-gradients).
/// Bit-exact mode encodes a real bitstream per image and decodes it.
pub fn jpeg_forward(images: &Tensor, cfg: &JpegConfig) -> Result<Tensor> {
    let (_, c, _, _) = bchw(images, "jpeg_forward")?;
    if c != 1 && c != 3 {
        return Err(CoreError::BadShape {
            op: "jpeg_forward",
            expected: "1 or 3 channels".into(),
            got: images.shape().to_vec(),
        });
    }
    let qt = quant_table(cfg.quality)?;
    match cfg.mode {
        JpegMode::Differentiable => {
            let tape = Tape::new();
            let x = tape.constant(images.clone());
            Ok(jpeg_forward_tape(&tape, x, &qt, true)?.value())
        }
        JpegMode::BitExact => {
            let mut out = Vec::new();
            for img in split_images(images)? {
                let bytes = encode_image(&img, &qt)?;
                out.push(decode_image(&bytes)?);
            }
            Ok(join_images(out, images.shape()))
        }
    }
}

/// Size in bits of the full baseline JFIF stream for one (C,H,W) image.
pub fn jpeg_bitstream_size(image: &Tensor, quality: f64) -> Result<usize> {
    let qt = quant_table(quality)?;
    Ok(encode_image(image, &qt)?.len() * 8)
}

/// Mean bits-per-pixel of a corpus of (C,H,W) images.
pub fn bpp(corpus: &[Tensor], quality: f64) -> Result<f64> {
    if corpus.is_empty() {
        return Err(CoreError::invalid("bpp: empty corpus"));
    }
    let mut total = 0.0;
    for img in corpus {
        let (h, w) = match img.shape() {
            [_, h, w] => (*h, *w),
            other => {
                return Err(CoreError::BadShape {
                    op: "bpp",
                    expected: "(channels, height, width)".into(),
                    got: other.to_vec(),
                })
            }
        };
        total += jpeg_bitstream_size(img, quality)? as f64 / (h * w) as f64;
    }
    Ok(total / corpus.len() as f64)
}

/// Peak signal-to-noise ratio in dB between two same-shape tensors on
/// the [0,1] scale.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mse = a.mse(b);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
