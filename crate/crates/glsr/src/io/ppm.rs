//! Binary PPM (P6) with maxval 255, the only codec the pipeline needs.
//!
//! The writer emits one canonical byte layout so identical images produce
//! identical files; the reader accepts the full P6 grammar including `#`
//! comments inside the header.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB raster, row-major, fixed RGB channel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::dim(format!(
                "pixel buffer holds {} bytes, expected {} for {width}x{height} RGB",
                pixels.len(),
                3 * width * height
            )));
        }
        Ok(ImageU8 { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn rgb_at(&self, y: usize, x: usize) -> (u8, u8, u8) {
        let i = 3 * (y * self.width + x);
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    /// Keep the top-left `width` x `height` region.
    pub fn crop_tl(&self, width: usize, height: usize) -> Result<ImageU8> {
        if width > self.width || height > self.height {
            return Err(Error::dim(format!(
                "crop {width}x{height} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            let row = 3 * (y * self.width);
            pixels.extend_from_slice(&self.pixels[row..row + 3 * width]);
        }
        ImageU8::new(width, height, pixels)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, msg: msg.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_int(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ASCII");
        text.parse().map_err(|_| Error::Parse {
            offset: start,
            msg: format!("{what} out of range: {text}"),
        })
    }
}

/// Parse a binary P6 image with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<ImageU8> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(cur.err("not a P6 file"));
    }
    cur.pos = 2;
    let width = cur.read_int("width")?;
    let height = cur.read_int("height")?;
    let maxval_at = {
        cur.skip_separators();
        cur.pos
    };
    let maxval = cur.read_int("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("only maxval 255 is supported, got {maxval}"),
        });
    }
    match cur.peek() {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace byte before pixel data")),
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 2,
            msg: format!("image dimensions must be positive, got {width}x{height}"),
        });
    }
    let need = 3 * width * height;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("truncated pixel data: need {need} bytes, have {have}"),
        });
    }
    if have > need {
        return Err(Error::Parse {
            offset: cur.pos + need,
            msg: format!("{} trailing bytes after pixel data", have - need),
        });
    }
    ImageU8::new(width, height, bytes[cur.pos..].to_vec())
}

/// Emit the canonical layout: `P6\n<w> <h>\n255\n` followed by raw bytes.
pub fn write_ppm(img: &ImageU8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<ImageU8> {
    read_ppm(&std::fs::read(path)?)
}

pub fn save_ppm(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    Ok(std::fs::write(path, write_ppm(img))?)
}
