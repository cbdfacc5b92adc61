//! Morph attack synthesis.

use serde::{Deserialize, Serialize};

use super::warp::{delaunay, warp_image, with_anchors};
use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    LandmarkMorph,
    AppearanceMorph,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LandmarkMorph => "landmark_morph",
            AttackKind::AppearanceMorph => "appearance_morph",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "landmark_morph" => Ok(AttackKind::LandmarkMorph),
            "appearance_morph" => Ok(AttackKind::AppearanceMorph),
            other => Err(Error::Parameter(format!("unknown attack kind {other:?}"))),
        }
    }

    /// Applies this attack to a pair of document captures.
    pub fn apply(self, a: &FaceImage, b: &FaceImage, alpha: f64, postprocess: bool) -> Result<FaceImage> {
        match self {
            AttackKind::None => Ok(a.clone()),
            AttackKind::LandmarkMorph => morph_landmark(a, b, alpha, postprocess),
            AttackKind::AppearanceMorph => morph_appearance(a, b, alpha),
        }
    }
}

fn check_pair(a: &FaceImage, b: &FaceImage, alpha: f64) -> Result<()> {
    b.ensure_shape(a.shape())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("blend weight {alpha} outside [0, 1]")));
    }
    if a.landmarks().len() != b.landmarks().len() {
        return Err(Error::Geometry(format!(
            "landmark cardinality mismatch: {} vs {}",
            a.landmarks().len(),
            b.landmarks().len()
        )));
    }
    if a.landmarks().is_empty() {
        return Err(Error::Geometry("images carry no landmarks".into()));
    }
    Ok(())
}

/// Landmark-based morph: both images are warped onto the interpolated
/// landmark layout and cross-dissolved with the same weight.
pub fn morph_landmark(a: &FaceImage, b: &FaceImage, alpha: f64, postprocess: bool) -> Result<FaceImage> {
    check_pair(a, b, alpha)?;
    let shape = a.shape();
    let target: Vec<Point> = a
        .landmarks()
        .iter()
        .zip(b.landmarks())
        .map(|(p, q)| [(1.0 - alpha) * p[0] + alpha * q[0], (1.0 - alpha) * p[1] + alpha * q[1]])
        .collect();
    let dst = with_anchors(&target, shape);
    let tris = delaunay(&dst);
    let wa = warp_image(a, &with_anchors(a.landmarks(), shape), &dst, &tris)?;
    let wb = warp_image(b, &with_anchors(b.landmarks(), shape), &dst, &tris)?;
    let pixels: Vec<f64> = wa
        .image
        .pixels()
        .iter()
        .zip(wb.image.pixels())
        .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
        .collect();
    let out = FaceImage::new(shape, pixels, target, CaptureKind::Document)?;
    Ok(if postprocess { equalize_histogram(&out) } else { out })
}

/// Appearance morph: `b` is aligned to `a`'s geometry and only its smoothed
/// (low-frequency) appearance is mixed in; edges and landmarks stay `a`'s.
pub fn morph_appearance(a: &FaceImage, b: &FaceImage, alpha: f64) -> Result<FaceImage> {
    check_pair(a, b, alpha)?;
    if alpha == 0.0 {
        return Ok(a.clone().with_capture_kind(CaptureKind::Document));
    }
    let shape = a.shape();
    let dst = with_anchors(a.landmarks(), shape);
    let tris = delaunay(&dst);
    let wb = warp_image(b, &with_anchors(b.landmarks(), shape), &dst, &tris)?;
    let plane = shape.plane();
    let mut pixels = a.pixels().to_vec();
    for c in 0..shape.channels {
        let diff: Vec<f64> = wb.image.channel(c).iter().zip(a.channel(c)).map(|(x, y)| x - y).collect();
        let low = gaussian_blur(&diff, shape.width, shape.height, 1.5);
        for i in 0..plane {
            pixels[c * plane + i] += alpha * low[i];
        }
    }
    FaceImage::new(shape, pixels, a.landmarks().to_vec(), CaptureKind::Document)
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| {
                    let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    kv * plane[y * w + xx]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| {
                    let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    kv * tmp[yy * w + x]
                })
                .sum();
        }
    }
    out
}

/// Per-channel histogram equalization over 256 bins.
pub fn equalize_histogram(img: &FaceImage) -> FaceImage {
    let shape = img.shape();
    let plane = shape.plane();
    let mut pixels = img.pixels().to_vec();
    for c in 0..shape.channels {
        let ch = &mut pixels[c * plane..(c + 1) * plane];
        let bin = |v: f64| ((v * 255.0).round() as usize).min(255);
        let mut hist = [0usize; 256];
        for &v in ch.iter() {
            hist[bin(v)] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        let cdf_min = *cdf.iter().find(|&&v| v > 0).unwrap_or(&0);
        let denom = (plane - cdf_min).max(1) as f64;
        for v in ch.iter_mut() {
            *v = (cdf[bin(*v)] - cdf_min) as f64 / denom;
        }
    }
    FaceImage::new(shape, pixels, img.landmarks().to_vec(), img.capture_kind()).expect("equalized image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::render::{render_subject, SubjectSpec};

    fn pair() -> (FaceImage, FaceImage) {
        let a = render_subject(&SubjectSpec::sample("a", 1), CaptureKind::Document, 0).unwrap();
        let b = render_subject(&SubjectSpec::sample("b", 2), CaptureKind::Document, 0).unwrap();
        (a, b)
    }

    #[test]
    fn endpoints_reproduce_constituents() {
        let (a, b) = pair();
        let m0 = morph_landmark(&a, &b, 0.0, false).unwrap();
        let m1 = morph_landmark(&a, &b, 1.0, false).unwrap();
        assert!(m0.max_abs_diff(&a) <= 1e-6);
        assert!(m1.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn midpoint_landmarks_are_averaged() {
        let (a, b) = pair();
        let m = morph_landmark(&a, &b, 0.5, false).unwrap();
        for ((p, q), r) in a.landmarks().iter().zip(b.landmarks()).zip(m.landmarks()) {
            assert!((r[0] - (p[0] + q[0]) / 2.0).abs() < 1e-12);
            assert!((r[1] - (p[1] + q[1]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_from_first_constituent_grows_with_alpha() {
        let (a, b) = pair();
        let d: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&t| morph_landmark(&a, &b, t, false).unwrap().mean_abs_diff(&a))
            .collect();
        for w in d.windows(2) {
            assert!(w[1] >= w[0], "{d:?}");
        }
    }

    #[test]
    fn appearance_morph_keeps_geometry() {
        let (a, b) = pair();
        assert_eq!(morph_appearance(&a, &b, 0.0).unwrap(), a);
        let m = morph_appearance(&a, &b, 1.0).unwrap();
        assert_eq!(m.landmarks(), a.landmarks());
        assert!(m.max_abs_diff(&a) > 0.01);
    }

    #[test]
    fn mismatched_landmarks_fail() {
        let (a, b) = pair();
        let b2 = b.with_landmarks(vec![[10.0, 10.0]]).unwrap();
        assert_eq!(morph_landmark(&a, &b2, 0.5, false).unwrap_err().kind(), "geometry");
    }

    #[test]
    fn equalization_spreads_levels() {
        let (a, _) = pair();
        let e = equalize_histogram(&a);
        let max = e.pixels().iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert_eq!(e.landmarks(), a.landmarks());
    }
}
