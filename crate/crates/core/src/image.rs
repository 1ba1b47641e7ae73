//! Dense floating-point images and their on-disk encodings.
//!
//! Pixel centers sit at integer coordinates: pixel `(x, y)` is sampled at
//! `(x, y)` in image space, which is the convention shared by the projection,
//! the rasterizer and the event sensor.

use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Row-major `height × width × channels` image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size mismatch");
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Rec. 601 luma for RGB images; identity for single-channel images.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            3 => self.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
            c => panic!("luminance of a {c}-channel image"),
        }
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// Rounds every sample to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f64::from(to_u8(*v)) / 255.0);
        out
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => panic!("cannot encode a {c}-channel image as PNG"),
        };
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("png header into memory");
            w.write_image_data(&bytes).expect("png data into memory");
        }
        buf
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode_png())
    }

    pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
        let bad = |e: png::DecodingError| Error::data(path, None, format!("invalid PNG: {e}"));
        let decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
        let mut reader = decoder.read_info().map_err(bad)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::data(path, None, "PNG too large"))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(bad)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::data(path, None, "only 8-bit PNG images are supported"));
        }
        let (channels, take): (usize, usize) = match info.color_type {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (3, 4),
            other => return Err(Error::data(path, None, format!("unsupported PNG color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let stride = info.line_size;
        let mut data = Vec::with_capacity(w * h * channels);
        for row in buf.chunks(stride).take(h) {
            for px in row[..w * take].chunks_exact(take) {
                data.extend(px[..channels].iter().map(|&b| f64::from(b) / 255.0));
            }
        }
        Ok(Image::from_data(w, h, channels, data))
    }

    pub fn read_png(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes, path)
    }

    /// Portable float map: a raw little-endian float dump, used for inspecting
    /// unquantized render layers.
    pub fn encode_pfm(&self) -> Vec<u8> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => panic!("cannot encode a {c}-channel image as PFM"),
        };
        let mut out = format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        // PFM rows run bottom to top.
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for &v in self.pixel(x, y) {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
