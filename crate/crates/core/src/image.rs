//! Face raster type shared by every stage, plus lossless PNG persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureKind {
    Document,
    Reference,
}

impl CaptureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptureKind::Document => "document",
            CaptureKind::Reference => "reference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "document" => Ok(CaptureKind::Document),
            "reference" => Ok(CaptureKind::Reference),
            other => Err(Error::Parameter(format!("unknown capture kind {other:?}"))),
        }
    }
}

/// Height, width and channel count of every image in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(Error::Parameter(format!("bad image shape {s:?}, want HxWxC")));
        }
        let nums: Result<Vec<usize>> = parts
            .iter()
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad image shape {s:?}")))
            })
            .collect();
        let nums = nums?;
        Ok(ImageShape::new(nums[0], nums[1], nums[2]))
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A 2-D point in pixel coordinates, `[x, y]`, with pixel centers at integers.
pub type Point = [f64; 2];

/// Planar (channel-major) image with intensities in `[0, 1]` and an ordered
/// landmark set.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    shape: ImageShape,
    pixels: Vec<f64>,
    landmarks: Vec<Point>,
    capture_kind: CaptureKind,
}

impl FaceImage {
    /// Builds an image, clamping pixels into `[0, 1]` and rejecting landmarks
    /// outside the frame.
    pub fn new(shape: ImageShape, mut pixels: Vec<f64>, landmarks: Vec<Point>, capture_kind: CaptureKind) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::shape(shape, format!("{} values", pixels.len())));
        }
        for p in &mut pixels {
            if !p.is_finite() {
                return Err(Error::Parameter("non-finite pixel".into()));
            }
            *p = p.clamp(0.0, 1.0);
        }
        let (w, h) = (shape.width as f64, shape.height as f64);
        for (i, l) in landmarks.iter().enumerate() {
            if !(l[0] >= 0.0 && l[0] <= w - 1.0 && l[1] >= 0.0 && l[1] <= h - 1.0) {
                return Err(Error::Geometry(format!("landmark {i} at {l:?} outside {shape}")));
            }
        }
        Ok(FaceImage {
            shape,
            pixels,
            landmarks,
            capture_kind,
        })
    }

    pub fn filled(shape: ImageShape, value: f64, capture_kind: CaptureKind) -> Self {
        FaceImage::new(shape, vec![value; shape.len()], Vec::new(), capture_kind).expect("constant image")
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    pub fn landmarks(&self) -> &[Point] {
        &self.landmarks
    }
    pub fn capture_kind(&self) -> CaptureKind {
        self.capture_kind
    }

    pub fn with_capture_kind(mut self, kind: CaptureKind) -> Self {
        self.capture_kind = kind;
        self
    }

    pub fn with_landmarks(self, landmarks: Vec<Point>) -> Result<Self> {
        FaceImage::new(self.shape, self.pixels, landmarks, self.capture_kind)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.pixels[c * plane..(c + 1) * plane]
    }

    pub fn ensure_shape(&self, expected: ImageShape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, self.shape));
        }
        Ok(())
    }

    /// Rec. 601 luma; single-channel images are returned as is.
    pub fn luma(&self) -> Vec<f64> {
        if self.shape.channels < 3 {
            return self.channel(0).to_vec();
        }
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        (0..self.shape.plane())
            .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
            .collect()
    }

    /// Bilinear sample of channel `c` at `(x, y)`, clamped to the border.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f64 {
        let (w, h) = (self.shape.width, self.shape.height);
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
        let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn max_abs_diff(&self, other: &FaceImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &FaceImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.pixels.len() as f64
    }

    /// Pixels rounded to the 16-bit levels used on disk.
    pub fn quantized(&self) -> FaceImage {
        let mut out = self.clone();
        for p in &mut out.pixels {
            *p = (*p * 65535.0).round() / 65535.0;
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.shape.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Parameter(format!("cannot store {c}-channel image as PNG"))),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.shape.width as u32,
            self.shape.height as u32,
        );
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Sixteen);
        let landmarks = serde_json::to_string(&self.landmarks).expect("landmarks serialize");
        encoder
            .add_text_chunk("landmarks".into(), landmarks)
            .map_err(|e| Error::Corrupt {
                path: path.into(),
                detail: e.to_string(),
            })?;
        encoder
            .add_text_chunk("capture_kind".into(), self.capture_kind.as_str().into())
            .map_err(|e| Error::Corrupt {
                path: path.into(),
                detail: e.to_string(),
            })?;
        let mut writer = encoder.write_header().map_err(|e| Error::Corrupt {
            path: path.into(),
            detail: e.to_string(),
        })?;
        let (plane, c) = (self.shape.plane(), self.shape.channels);
        let mut bytes = Vec::with_capacity(plane * c * 2);
        for i in 0..plane {
            for ch in 0..c {
                let v = (self.pixels[ch * plane + i] * 65535.0).round() as u16;
                bytes.extend_from_slice(&v.to_be_bytes());
            }
        }
        writer.write_image_data(&bytes).map_err(|e| Error::Corrupt {
            path: path.into(),
            detail: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<FaceImage> {
        let corrupt = |detail: String| Error::Corrupt {
            path: path.into(),
            detail,
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let frame = reader.next_frame(&mut buf).map_err(|e| corrupt(e.to_string()))?;
        if frame.bit_depth != png::BitDepth::Sixteen {
            return Err(corrupt("expected 16-bit samples".into()));
        }
        let channels = match frame.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(corrupt(format!("unsupported color type {other:?}"))),
        };
        let shape = ImageShape::new(frame.height as usize, frame.width as usize, channels);
        let plane = shape.plane();
        let mut pixels = vec![0.0; shape.len()];
        for i in 0..plane {
            for ch in 0..channels {
                let at = (i * channels + ch) * 2;
                let v = u16::from_be_bytes([buf[at], buf[at + 1]]);
                pixels[ch * plane + i] = v as f64 / 65535.0;
            }
        }
        let info = reader.info();
        let mut landmarks = Vec::new();
        let mut kind = CaptureKind::Document;
        for chunk in &info.uncompressed_latin1_text {
            match chunk.keyword.as_str() {
                "landmarks" => {
                    landmarks = serde_json::from_str(&chunk.text).map_err(|e| corrupt(e.to_string()))?;
                }
                "capture_kind" => kind = CaptureKind::parse(&chunk.text)?,
                _ => {}
            }
        }
        FaceImage::new(shape, pixels, landmarks, kind)
    }
}

/// Stacks images into a batch tensor.
pub fn to_tensor(images: &[&FaceImage]) -> Tensor {
    let shape = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * shape.len());
    for img in images {
        assert_eq!(img.shape(), shape);
        data.extend_from_slice(img.pixels());
    }
    Tensor::from_vec([images.len(), shape.channels, shape.height, shape.width], data)
}

/// Extracts sample `i` of a batch as an image without landmarks.
pub fn from_tensor(t: &Tensor, i: usize, kind: CaptureKind) -> FaceImage {
    let shape = ImageShape::new(t.h(), t.w(), t.c());
    FaceImage::new(shape, t.sample(i).to_vec(), Vec::new(), kind).expect("tensor slice has image shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_frame_landmarks() {
        let shape = ImageShape::new(4, 4, 1);
        let err = FaceImage::new(shape, vec![0.5; 16], vec![[4.5, 1.0]], CaptureKind::Document).unwrap_err();
        assert_eq!(err.kind(), "geometry");
    }

    #[test]
    fn clamps_pixels() {
        let shape = ImageShape::new(1, 2, 1);
        let img = FaceImage::new(shape, vec![-0.5, 1.5], vec![], CaptureKind::Document).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn png_round_trip_keeps_shape_landmarks_and_levels() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(5, 7, 3);
        let pixels: Vec<f64> = (0..shape.len()).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let img = FaceImage::new(shape, pixels, vec![[1.25, 3.5], [6.0, 0.0]], CaptureKind::Reference).unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        let back = FaceImage::load_png(&path).unwrap();
        assert_eq!(back.shape(), shape);
        assert_eq!(back.landmarks(), img.landmarks());
        assert_eq!(back.capture_kind(), CaptureKind::Reference);
        assert_eq!(back, img.quantized());
    }

    #[test]
    fn shape_parses_and_displays() {
        let s = ImageShape::parse("64x64x3").unwrap();
        assert_eq!(s, ImageShape::new(64, 64, 3));
        assert_eq!(s.to_string(), "64x64x3");
        assert!(ImageShape::parse("64x64").is_err());
    }
}
