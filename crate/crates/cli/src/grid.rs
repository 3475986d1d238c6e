//! PNG image grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use aestylegan::tensor::Tensor;
use aestylegan::{Error, Result};
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

const PAD: usize = 2;
const BACKGROUND: u8 = 255;

/// Maps `[-1, 1]` to `[0, 255]` with rounding and clamping.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A grid of `[c, r, r]` tiles, `None` cells left blank.
#[derive(Debug, Clone)]
pub struct Grid {
    rows: usize,
    cols: usize,
    res: usize,
    pixels: Vec<u8>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, res: usize) -> Self {
        let (w, h) = (Self::extent(cols, res), Self::extent(rows, res));
        Self { rows, cols, res, pixels: vec![BACKGROUND; w * h * 3] }
    }

    fn extent(n: usize, res: usize) -> usize {
        n * res + (n + 1) * PAD
    }

    pub fn width(&self) -> usize {
        Self::extent(self.cols, self.res)
    }

    pub fn height(&self) -> usize {
        Self::extent(self.rows, self.res)
    }

    /// Writes image `k` of the `[n, c, r, r]` batch `x` at cell `(row, col)`.
    pub fn put(&mut self, row: usize, col: usize, x: &Tensor, k: usize) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[2] != self.res || s[3] != self.res || !(s[1] == 1 || s[1] == 3) || k >= s[0] {
            return Err(Error::Argument(format!("cannot place image {k} of {s:?} in a grid of {}px tiles", self.res)));
        }
        if row >= self.rows || col >= self.cols {
            return Err(Error::Argument(format!("cell ({row}, {col}) outside {}x{} grid", self.rows, self.cols)));
        }
        let (c, r) = (s[1], self.res);
        let data = &x.data()[k * c * r * r..(k + 1) * c * r * r];
        let w = self.width();
        let (x0, y0) = (PAD + col * (r + PAD), PAD + row * (r + PAD));
        for y in 0..r {
            for xx in 0..r {
                let o = ((y0 + y) * w + x0 + xx) * 3;
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    self.pixels[o + ch] = to_u8(data[(src * r + y) * r + xx]);
                }
            }
        }
        Ok(())
    }

    /// Places each image of `x` in row-major order starting at cell 0.
    pub fn fill(rows: usize, cols: usize, x: &Tensor) -> Result<Self> {
        let mut g = Self::new(rows, cols, x.dim(2));
        for k in 0..x.dim(0).min(rows * cols) {
            g.put(k / cols, k % cols, x, k)?;
        }
        Ok(g)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Encodes with fixed compression and filter settings so equal grids give equal bytes.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        let enc = PngEncoder::new_with_quality(f, CompressionType::Default, FilterType::Adaptive);
        enc.write_image(&self.pixels, self.width() as u32, self.height() as u32, ExtendedColorType::Rgb8)?;
        Ok(())
    }
}
