//! Parametric synthetic faces.
//!
//! A face is drawn analytically in a canonical frame whose feature layout is
//! the landmark template. A subject's geometry parameters move the
//! landmarks; a capture then adds expression, pose, illumination and sensor
//! noise. Each output pixel is mapped back into the canonical frame through
//! the piecewise-affine map between the capture's landmarks and the template,
//! so texture always follows the landmarks.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::warp::{delaunay, nearest_fill, rasterize, with_anchors};
use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape, Point};
use crate::rng::{self, Rng};

pub const GEOMETRY_DIM: usize = 10;
pub const TEXTURE_DIM: usize = 24;
pub const NUM_LANDMARKS: usize = 29;

/// Landmark indices used by the expression model.
mod idx {
    pub const LEFT_EYE_TOP: usize = 14;
    pub const LEFT_EYE_BOTTOM: usize = 16;
    pub const RIGHT_EYE_TOP: usize = 18;
    pub const RIGHT_EYE_BOTTOM: usize = 20;
    pub const MOUTH_LEFT: usize = 25;
    pub const MOUTH_TOP: usize = 26;
    pub const MOUTH_RIGHT: usize = 27;
    pub const MOUTH_BOTTOM: usize = 28;
}

/// Template landmarks in normalized canonical coordinates `[u, v]`:
/// jaw (9), brows (4), eyes (8), nose (4), mouth (4).
pub fn template() -> [Point; NUM_LANDMARKS] {
    let mut pts = [[0.0; 2]; NUM_LANDMARKS];
    for (i, p) in pts.iter_mut().take(9).enumerate() {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / 8.0);
        *p = [0.5 + 0.28 * theta.cos(), 0.50 + 0.38 * theta.sin()];
    }
    let rest: [Point; 20] = [
        [0.33, 0.36],
        [0.43, 0.35],
        [0.57, 0.35],
        [0.67, 0.36],
        [0.31, 0.44],
        [0.375, 0.42],
        [0.44, 0.44],
        [0.375, 0.46],
        [0.56, 0.44],
        [0.625, 0.42],
        [0.69, 0.44],
        [0.625, 0.46],
        [0.5, 0.47],
        [0.5, 0.60],
        [0.45, 0.62],
        [0.55, 0.62],
        [0.41, 0.725],
        [0.5, 0.705],
        [0.59, 0.725],
        [0.5, 0.75],
    ];
    pts[9..].copy_from_slice(&rest);
    pts
}

/// Identity of one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub subject_id: String,
    pub geometry_params: Vec<f64>,
    pub texture_params: Vec<f64>,
    pub rng_seed: u64,
}

impl SubjectSpec {
    /// Draws standard-normal identity parameters from `rng_seed`.
    pub fn sample(subject_id: impl Into<String>, rng_seed: u64) -> Self {
        let mut rng = rng::stream(rng_seed, &[rng::tag("subject")]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let geometry_params = (0..GEOMETRY_DIM).map(|_| normal.sample(&mut rng)).collect();
        let texture_params = (0..TEXTURE_DIM).map(|_| normal.sample(&mut rng)).collect();
        SubjectSpec {
            subject_id: subject_id.into(),
            geometry_params,
            texture_params,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.geometry_params.len() != GEOMETRY_DIM {
            return Err(Error::Parameter(format!(
                "geometry_params has {} entries, expected {GEOMETRY_DIM}",
                self.geometry_params.len()
            )));
        }
        if self.texture_params.len() != TEXTURE_DIM {
            return Err(Error::Parameter(format!(
                "texture_params has {} entries, expected {TEXTURE_DIM}",
                self.texture_params.len()
            )));
        }
        if self
            .geometry_params
            .iter()
            .chain(&self.texture_params)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Parameter("non-finite subject parameter".into()));
        }
        Ok(())
    }

    /// Neutral landmarks of this subject in normalized canonical coordinates.
    pub fn neutral_landmarks(&self) -> [Point; NUM_LANDMARKS] {
        let g: Vec<f64> = self.geometry_params.iter().map(|v| v.clamp(-2.5, 2.5)).collect();
        let mut pts = template();
        for p in pts.iter_mut().take(9) {
            p[0] = 0.5 + (p[0] - 0.5) * (1.0 + 0.06 * g[0]);
            p[1] = 0.5 + (p[1] - 0.5) * (1.0 + 0.05 * g[1]);
        }
        // brows 9..13, eyes 13..21
        for (i, p) in pts.iter_mut().enumerate().take(21).skip(9) {
            let side = if p[0] < 0.5 { -1.0 } else { 1.0 };
            p[0] += side * 0.012 * g[2];
            p[1] += 0.012 * g[4];
            if i < 13 {
                p[1] += 0.008 * g[9];
            }
        }
        for eye in [13..17, 17..21] {
            let cx = pts[eye.clone()].iter().map(|p| p[0]).sum::<f64>() / 4.0;
            let cy = pts[eye.clone()].iter().map(|p| p[1]).sum::<f64>() / 4.0;
            for p in &mut pts[eye] {
                p[0] = cx + (p[0] - cx) * (1.0 + 0.12 * g[3]);
                p[1] = cy + (p[1] - cy) * (1.0 + 0.12 * g[3]);
            }
        }
        for p in &mut pts[22..25] {
            p[1] += 0.015 * g[5];
        }
        pts[23][0] -= 0.008 * g[6];
        pts[24][0] += 0.008 * g[6];
        pts[idx::MOUTH_LEFT][0] -= 0.012 * g[7];
        pts[idx::MOUTH_RIGHT][0] += 0.012 * g[7];
        for p in &mut pts[25..29] {
            p[1] += 0.012 * g[8];
        }
        pts
    }
}

/// Amplitude of the unpredictable part of reference-capture variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterProfile {
    /// Scales pose, brightness and sensor-noise randomness of reference
    /// captures. The systematic expression and lighting change is unaffected.
    pub level: f64,
}

impl Default for JitterProfile {
    fn default() -> Self {
        JitterProfile { level: 1.0 }
    }
}

/// Realized capture conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capture {
    pub smile: f64,
    pub light_gradient: f64,
    pub brightness: f64,
    pub shift: [f64; 2],
    pub rotation: f64,
    pub scale: f64,
    pub noise_sigma: f64,
    noise_seed: u64,
}

impl Capture {
    pub fn draw(kind: CaptureKind, jitter: JitterProfile, spec: &SubjectSpec, jitter_seed: u64, shape: ImageShape) -> Self {
        let mut rng = rng::stream(spec.rng_seed, &[rng::tag(kind.as_str()), jitter_seed]);
        let px = shape.width as f64 / 64.0;
        let l = jitter.level;
        let gauss = |sigma: f64, rng: &mut Rng| Normal::new(0.0, 1.0).unwrap().sample(rng) * sigma;
        match kind {
            CaptureKind::Document => Capture {
                smile: 0.0,
                light_gradient: 0.0,
                brightness: 0.0,
                shift: [gauss(0.25 * px, &mut rng), gauss(0.25 * px, &mut rng)],
                rotation: 0.0,
                scale: 1.0,
                noise_sigma: 0.004,
                noise_seed: rng.gen(),
            },
            CaptureKind::Reference => Capture {
                smile: rng.gen_range(0.6..1.0),
                light_gradient: rng.gen_range(0.15..0.35),
                brightness: gauss(0.015 * l, &mut rng),
                shift: [gauss(0.5 * l * px, &mut rng), gauss(0.5 * l * px, &mut rng)],
                rotation: gauss(1.0f64.to_radians() * l, &mut rng),
                scale: 1.0 + gauss(0.01 * l, &mut rng),
                noise_sigma: 0.006 + 0.002 * l,
                noise_seed: rng.gen(),
            },
        }
    }
}

/// Renders subjects at a fixed image shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renderer {
    pub shape: ImageShape,
    pub jitter: JitterProfile,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            shape: ImageShape::new(64, 64, 3),
            jitter: JitterProfile::default(),
        }
    }
}

fn to_px(p: Point, shape: ImageShape) -> Point {
    [p[0] * shape.width as f64 - 0.5, p[1] * shape.height as f64 - 0.5]
}

impl Renderer {
    pub fn new(shape: ImageShape, jitter: JitterProfile) -> Result<Self> {
        if shape.channels != 3 && shape.channels != 1 {
            return Err(Error::Parameter(format!("renderer supports 1 or 3 channels, got {shape}")));
        }
        if shape.width < 16 || shape.height < 16 {
            return Err(Error::Parameter(format!("image {shape} too small to render a face")));
        }
        if !(jitter.level >= 0.0) {
            return Err(Error::Parameter("jitter level must be non-negative".into()));
        }
        Ok(Renderer { shape, jitter })
    }

    /// Landmarks of a capture in pixel coordinates.
    pub fn capture_landmarks(&self, spec: &SubjectSpec, capture: &Capture) -> Vec<Point> {
        let mut pts = spec.neutral_landmarks();
        let s = capture.smile;
        pts[idx::MOUTH_LEFT][0] -= 0.025 * s;
        pts[idx::MOUTH_LEFT][1] -= 0.02 * s;
        pts[idx::MOUTH_RIGHT][0] += 0.025 * s;
        pts[idx::MOUTH_RIGHT][1] -= 0.02 * s;
        pts[idx::MOUTH_TOP][1] -= 0.003 * s;
        pts[idx::MOUTH_BOTTOM][1] += 0.02 * s;
        for i in [idx::LEFT_EYE_TOP, idx::RIGHT_EYE_TOP] {
            pts[i][1] += 0.006 * s;
        }
        for i in [idx::LEFT_EYE_BOTTOM, idx::RIGHT_EYE_BOTTOM] {
            pts[i][1] -= 0.004 * s;
        }
        let (w, h) = (self.shape.width as f64, self.shape.height as f64);
        let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        let (sin, cos) = capture.rotation.sin_cos();
        pts.iter()
            .map(|&p| {
                let q = to_px(p, self.shape);
                let (dx, dy) = (q[0] - cx, q[1] - cy);
                let x = cx + capture.scale * (cos * dx - sin * dy) + capture.shift[0];
                let y = cy + capture.scale * (sin * dx + cos * dy) + capture.shift[1];
                [x.clamp(1.0, w - 2.0), y.clamp(1.0, h - 2.0)]
            })
            .collect()
    }

    /// Deterministic capture of `spec` as a document or reference image.
    pub fn render(&self, spec: &SubjectSpec, kind: CaptureKind, jitter_seed: u64) -> Result<FaceImage> {
        spec.validate()?;
        let capture = Capture::draw(kind, self.jitter, spec, jitter_seed, self.shape);
        self.render_capture(spec, kind, &capture)
    }

    pub fn render_capture(&self, spec: &SubjectSpec, kind: CaptureKind, capture: &Capture) -> Result<FaceImage> {
        let shape = self.shape;
        let landmarks = self.capture_landmarks(spec, capture);
        let tpl_px: Vec<Point> = template().iter().map(|&p| to_px(p, shape)).collect();
        let dst = with_anchors(&landmarks, shape);
        let src = with_anchors(&tpl_px, shape);
        let tris = delaunay(&dst);
        let raster = rasterize(&dst, &tris, shape);
        let palette = Palette::new(&spec.texture_params);
        let (w, h, plane) = (shape.width, shape.height, shape.plane());
        let mut rgb = vec![0.0; 3 * plane];
        let mut known = vec![false; plane];
        for (i, cov) in raster.cover.iter().enumerate() {
            let Some((ti, _)) = cov else { continue };
            let t = tris[*ti];
            let affine = Affine::fit([dst[t[0]], dst[t[1]], dst[t[2]]], [src[t[0]], src[t[1]], src[t[2]]]);
            let Some(affine) = affine else { continue };
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let mut acc = [0.0; 3];
            // 2x2 supersampling
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let c = affine.apply([x + ox, y + oy]);
                let u = (c[0] + 0.5) / w as f64;
                let v = (c[1] + 0.5) / h as f64;
                let col = palette.color(u, v, capture.smile, 1.0 / w as f64);
                for k in 0..3 {
                    acc[k] += 0.25 * col[k];
                }
            }
            for k in 0..3 {
                rgb[k * plane + i] = acc[k];
            }
            known[i] = true;
        }
        nearest_fill(&mut rgb, &known, ImageShape::new(h, w, 3));
        let mut noise_rng = rng::stream(capture.noise_seed, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for k in 0..3 {
            for i in 0..plane {
                let xn = (i % w) as f64 / (w - 1) as f64;
                let lit = rgb[k * plane + i] * (1.0 + capture.light_gradient * (xn - 0.5)) + capture.brightness;
                rgb[k * plane + i] = lit + capture.noise_sigma * normal.sample(&mut noise_rng);
            }
        }
        let pixels = if shape.channels == 1 {
            (0..plane)
                .map(|i| 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i])
                .collect()
        } else {
            rgb
        };
        FaceImage::new(shape, pixels, landmarks, kind)
    }
}

/// Convenience wrapper using the default 64×64×3 renderer.
pub fn render_subject(spec: &SubjectSpec, kind: CaptureKind, jitter_seed: u64) -> Result<FaceImage> {
    Renderer::default().render(spec, kind, jitter_seed)
}

struct Affine {
    m: [[f64; 3]; 2],
}

impl Affine {
    /// Affine map taking triangle `from` onto triangle `to`.
    fn fit(from: [Point; 3], to: [Point; 3]) -> Option<Affine> {
        let [a, b, c] = from;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-12 {
            return None;
        }
        // Solve for each output coordinate: out = p0 + J (p - a)
        let inv = [
            [(c[1] - a[1]) / det, -(c[0] - a[0]) / det],
            [-(b[1] - a[1]) / det, (b[0] - a[0]) / det],
        ];
        let mut m = [[0.0; 3]; 2];
        for k in 0..2 {
            let d1 = to[1][k] - to[0][k];
            let d2 = to[2][k] - to[0][k];
            let jx = d1 * inv[0][0] + d2 * inv[1][0];
            let jy = d1 * inv[0][1] + d2 * inv[1][1];
            m[k] = [jx, jy, to[0][k] - jx * a[0] - jy * a[1]];
        }
        Some(Affine { m })
    }

    fn apply(&self, p: Point) -> Point {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.m[0][2],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.m[1][2],
        ]
    }
}

/// Colors derived from the texture parameters.
struct Palette {
    skin: [f64; 3],
    hair: [f64; 3],
    clothes: [f64; 3],
    iris: [f64; 3],
    lip: [f64; 3],
    hairline: f64,
    brow_dark: f64,
    blush: f64,
    blobs: [(f64, f64, f64); 4],
}

const BACKGROUND: [f64; 3] = [0.80, 0.82, 0.86];

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn coverage(sd: f64, px: f64) -> f64 {
    (0.5 - sd / px).clamp(0.0, 1.0)
}

fn ellipse(u: f64, v: f64, cu: f64, cv: f64, a: f64, b: f64, px: f64) -> f64 {
    let d = (((u - cu) / a).powi(2) + ((v - cv) / b).powi(2)).sqrt();
    coverage((d - 1.0) * a.min(b), px)
}

fn segment(u: f64, v: f64, p: Point, q: Point, half_width: f64, px: f64) -> f64 {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let t = (((u - p[0]) * dx + (v - p[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let d = ((u - p[0] - t * dx).powi(2) + (v - p[1] - t * dy).powi(2)).sqrt();
    coverage(d - half_width, px)
}

impl Palette {
    fn new(t: &[f64]) -> Self {
        let t: Vec<f64> = t.iter().map(|v| v.clamp(-2.5, 2.5)).collect();
        let skin = [0.78 + 0.07 * t[0], 0.60 + 0.07 * t[1], 0.50 + 0.06 * t[2]];
        let hair = [0.25 + 0.09 * t[3], 0.18 + 0.07 * t[4], 0.12 + 0.05 * t[5]];
        let blue = 0.5 + 0.2 * t[8].tanh();
        let iris = [0.30 - 0.1 * blue + 0.05 * t[7], 0.25 + 0.05 * t[7], 0.15 + 0.25 * blue];
        let lip = [skin[0] * 0.85 + 0.08 * (1.0 + 0.4 * t[9]), skin[1] * 0.7, skin[2] * 0.72];
        let clothes = [0.3 + 0.1 * t[12].tanh(), 0.3 + 0.1 * t[13].tanh(), 0.35 + 0.1 * t[14].tanh()];
        let mut blobs = [(0.0, 0.0, 0.0); 4];
        for (k, b) in blobs.iter_mut().enumerate() {
            *b = (
                0.5 + 0.16 * t[15 + 2 * k].tanh(),
                0.58 + 0.16 * t[16 + 2 * k].tanh(),
                0.10 * t[(10 + k) % TEXTURE_DIM].tanh() + if k % 2 == 0 { 0.03 } else { -0.03 },
            );
        }
        Palette {
            skin,
            hair,
            clothes,
            iris,
            lip,
            hairline: 0.25 + 0.025 * t[6],
            brow_dark: 0.55 + 0.1 * t[10].tanh(),
            blush: 0.04 * t[11].tanh(),
            blobs,
        }
    }

    fn color(&self, u: f64, v: f64, smile: f64, px: f64) -> [f64; 3] {
        let mut c = BACKGROUND;
        c = mix(c, self.clothes, ellipse(u, v, 0.5, 1.12, 0.46, 0.24, px));
        let neck = coverage((u - 0.5).abs() - 0.09, px) * coverage(0.7 - v, px);
        c = mix(c, scale(self.skin, 0.85), neck);
        c = mix(c, self.hair, ellipse(u, v, 0.5, 0.45, 0.315, 0.43, px));

        let face = ellipse(u, v, 0.5, 0.50, 0.28, 0.38, px);
        let hairline = self.hairline + 0.6 * (u - 0.5).powi(2);
        let below = coverage(hairline - v, px);
        if face * below > 0.0 {
            let side = ((u - 0.5) / 0.28).powi(2);
            let mut skin = scale(self.skin, 1.0 - 0.10 * side);
            for &(bu, bv, amp) in &self.blobs {
                let g = (-((u - bu).powi(2) + (v - bv).powi(2)) / (2.0 * 0.045f64.powi(2))).exp();
                skin = scale(skin, 1.0 + amp * g);
            }
            for cu in [0.36, 0.64] {
                let g = (-((u - cu).powi(2) + (v - 0.61).powi(2)) / (2.0 * 0.05f64.powi(2))).exp();
                skin[0] += (self.blush + 0.05 * smile) * g;
                skin[1] -= 0.02 * smile * g;
            }
            let brow = scale(self.skin, 1.0 - self.brow_dark);
            skin = mix(skin, brow, segment(u, v, [0.33, 0.36], [0.43, 0.35], 0.011, px));
            skin = mix(skin, brow, segment(u, v, [0.57, 0.35], [0.67, 0.36], 0.011, px));
            for cu in [0.375, 0.625] {
                skin = mix(skin, [0.93, 0.92, 0.90], ellipse(u, v, cu, 0.44, 0.062, 0.02, px));
                skin = mix(skin, self.iris, ellipse(u, v, cu, 0.44, 0.018, 0.018, px));
                skin = mix(skin, [0.05, 0.05, 0.05], ellipse(u, v, cu, 0.44, 0.008, 0.008, px));
            }
            let ridge = coverage(((u - 0.5).abs() - 0.03).abs() - 0.004, px) * coverage((v - 0.535).abs() - 0.06, px);
            skin = mix(skin, scale(skin, 0.9), ridge);
            for cu in [0.46, 0.54] {
                skin = mix(skin, scale(self.skin, 0.45), ellipse(u, v, cu, 0.617, 0.012, 0.007, px));
            }
            let lips = ellipse(u, v, 0.5, 0.727, 0.09, 0.022, px);
            skin = mix(skin, self.lip, lips);
            let gap = coverage((v - 0.725).abs() - (0.002 + 0.012 * smile), px) * lips;
            skin = mix(skin, [0.25, 0.08, 0.08], gap);
            let teeth = coverage((v - 0.725).abs() - 0.008 * smile, px) * lips * (smile > 0.0) as u8 as f64;
            skin = mix(skin, [0.95, 0.93, 0.88], teeth);
            c = mix(c, skin, face * below);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = SubjectSpec::sample("s0", 11);
        let a = render_subject(&s, CaptureKind::Document, 0).unwrap();
        let b = render_subject(&s, CaptureKind::Document, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.landmarks().len(), NUM_LANDMARKS);
    }

    #[test]
    fn reference_correlates_with_document() {
        // Independent measurement of the document/reference relation for a
        // handful of subjects at the default jitter level.
        for seed in 0..5 {
            let s = SubjectSpec::sample(format!("s{seed}"), 100 + seed);
            let doc = render_subject(&s, CaptureKind::Document, 0).unwrap();
            let refc = render_subject(&s, CaptureKind::Reference, 0).unwrap();
            let r = pearson(&doc.luma(), &refc.luma());
            assert!(r >= 0.8, "subject {seed}: pearson {r}");
        }
    }

    #[test]
    fn reference_jitter_stays_bounded() {
        let s = SubjectSpec::sample("s1", 5);
        let a = render_subject(&s, CaptureKind::Reference, 1).unwrap();
        let b = render_subject(&s, CaptureKind::Reference, 2).unwrap();
        assert_ne!(a, b);
        // 4 sigma of pose jitter plus the expression displacement, in pixels
        let bound = 4.0 * (1.0 * 2.0f64.sqrt()) + 64.0 * 0.05 + 64.0 * 0.1 * (4.0 * 0.02 + 4.0 * 2.0f64.to_radians());
        for (p, q) in a.landmarks().iter().zip(b.landmarks()) {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            assert!(d < bound, "landmark moved {d}");
        }
    }

    #[test]
    fn wrong_parameter_dimension_is_rejected() {
        let mut s = SubjectSpec::sample("s", 1);
        s.geometry_params.pop();
        assert_eq!(render_subject(&s, CaptureKind::Document, 0).unwrap_err().kind(), "parameter");
    }

    #[test]
    fn distinct_subjects_have_distinct_parameters() {
        let a = SubjectSpec::sample("a", 1);
        let b = SubjectSpec::sample("b", 2);
        assert_ne!(a.geometry_params, b.geometry_params);
    }
}
