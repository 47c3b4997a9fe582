//! In-memory RGB images and PPM/PNG files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gsdyn_autodiff::Tensor;

use crate::error::{io_err, Error, Result};

/// Row-major `H × W × 3` image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

impl RenderedImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, 3] => Ok(Self {
                width: w,
                height: h,
                rgb: t.data().to_vec(),
            }),
            _ => Err(Error::Config(format!(
                "expected an H x W x 3 tensor, got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.height, self.width, 3], self.rgb.clone()).expect("consistent image size")
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Rec. 601 luma per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.rgb
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rgb
            .iter()
            .zip(&other.rgb)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{} bytes for a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            rgb: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height).map_err(io_err(path))?;
        w.write_all(&self.to_bytes()).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.to_bytes(), None)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format(format!(
                "{}: expected 8-bit RGB, found {:?} {:?}",
                path.display(),
                info.color_type,
                info.bit_depth
            )));
        }
        Self::from_bytes(info.width as usize, info.height as usize, &buf[..info.buffer_size()])
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Fixed label palette; index 0 is black.
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

/// Indexed-color PNG of per-pixel labels; label `l` uses palette entry
/// `l mod 8`.
pub fn write_label_png(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    let palette: Vec<u8> = PALETTE.iter().flatten().copied().collect();
    let idx: Vec<u8> = labels.iter().map(|l| l % PALETTE.len() as u8).collect();
    write_png(path, width, height, png::ColorType::Indexed, &idx, Some(palette))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
    palette: Option<Vec<u8>>,
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = RenderedImage {
            width: 3,
            height: 2,
            rgb: (0..18).map(|i| i as f64 / 17.0).collect(),
        };
        let path = dir.path().join("a.png");
        img.write_png(&path).unwrap();
        let back = RenderedImage::read_png(&path).unwrap();
        assert_eq!(back.size(), (3, 2));
        assert_eq!(back.to_bytes(), img.to_bytes());
    }

    #[test]
    fn ppm_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        RenderedImage::black(4, 2).write_ppm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 24);
    }

    #[test]
    fn label_png_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        write_label_png(&path, 2, 2, &[0, 1, 2, 9]).unwrap();
        assert!(path.exists());
    }
}
