//! Piecewise-affine warping over a Delaunay triangulation of landmarks plus
//! eight border anchors.

use delaunator::{triangulate, Point as DPoint};

use crate::error::{Error, Result};
use crate::image::{FaceImage, ImageShape, Point};

/// Corner and edge-midpoint anchors that pin the frame border in place.
pub fn border_anchors(shape: ImageShape) -> [Point; 8] {
    let (w, h) = ((shape.width - 1) as f64, (shape.height - 1) as f64);
    [
        [0.0, 0.0],
        [w / 2.0, 0.0],
        [w, 0.0],
        [w, h / 2.0],
        [w, h],
        [w / 2.0, h],
        [0.0, h],
        [0.0, h / 2.0],
    ]
}

/// Landmarks followed by the border anchors.
pub fn with_anchors(landmarks: &[Point], shape: ImageShape) -> Vec<Point> {
    let mut pts = landmarks.to_vec();
    pts.extend_from_slice(&border_anchors(shape));
    pts
}

pub fn delaunay(points: &[Point]) -> Vec<[usize; 3]> {
    let pts: Vec<DPoint> = points.iter().map(|p| DPoint { x: p[0], y: p[1] }).collect();
    let t = triangulate(&pts);
    t.triangles.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn barycentric(p: Point, a: Point, b: Point, c: Point) -> Option<[f64; 3]> {
    let area = signed_area(a, b, c);
    if area.abs() < 1e-12 {
        return None;
    }
    let l0 = signed_area(p, b, c) / area;
    let l1 = signed_area(a, p, c) / area;
    let l2 = 1.0 - l0 - l1;
    Some([l0, l1, l2])
}

/// For every pixel of the destination frame, the triangle that covers it and
/// its barycentric coordinates within that triangle.
#[derive(Debug, Clone)]
pub struct Raster {
    pub shape: ImageShape,
    pub cover: Vec<Option<(usize, [f64; 3])>>,
}

pub fn rasterize(dst: &[Point], triangles: &[[usize; 3]], shape: ImageShape) -> Raster {
    let (w, h) = (shape.width, shape.height);
    let mut cover = vec![None; w * h];
    const TOL: f64 = -1e-9;
    for (ti, t) in triangles.iter().enumerate() {
        let (a, b, c) = (dst[t[0]], dst[t[1]], dst[t[2]]);
        let xmin = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let xmax = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(w - 1);
        let ymin = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let ymax = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(h - 1);
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let idx = y * w + x;
                if cover[idx].is_some() {
                    continue;
                }
                if let Some(l) = barycentric([x as f64, y as f64], a, b, c) {
                    if l.iter().all(|&v| v >= TOL) {
                        cover[idx] = Some((ti, l));
                    }
                }
            }
        }
    }
    Raster { shape, cover }
}

/// Outcome of a warp: the image plus the number of pixels that had to be
/// filled by nearest neighbour because their source triangle was degenerate.
pub struct Warped {
    pub image: FaceImage,
    pub filled: usize,
}

/// Warps `src` (landmarks `src_pts`) so that its landmarks land on
/// `dst_pts`. Both point sets must already include the border anchors, and
/// `triangles` index into them.
pub fn warp_image(src: &FaceImage, src_pts: &[Point], dst_pts: &[Point], triangles: &[[usize; 3]]) -> Result<Warped> {
    if src_pts.len() != dst_pts.len() {
        return Err(Error::Geometry(format!(
            "landmark cardinality mismatch: {} vs {}",
            src_pts.len(),
            dst_pts.len()
        )));
    }
    let shape = src.shape();
    let raster = rasterize(dst_pts, triangles, shape);
    let degenerate: Vec<bool> = triangles
        .iter()
        .map(|t| signed_area(src_pts[t[0]], src_pts[t[1]], src_pts[t[2]]).abs() < 1e-9)
        .collect();
    let plane = shape.plane();
    let mut pixels = vec![0.0; shape.len()];
    let mut known = vec![false; plane];
    for (idx, cov) in raster.cover.iter().enumerate() {
        let Some((ti, l)) = cov else { continue };
        if degenerate[*ti] {
            continue;
        }
        let t = triangles[*ti];
        let sx = l[0] * src_pts[t[0]][0] + l[1] * src_pts[t[1]][0] + l[2] * src_pts[t[2]][0];
        let sy = l[0] * src_pts[t[0]][1] + l[1] * src_pts[t[1]][1] + l[2] * src_pts[t[2]][1];
        for c in 0..shape.channels {
            pixels[c * plane + idx] = src.sample_bilinear(c, sx, sy);
        }
        known[idx] = true;
    }
    let filled = nearest_fill(&mut pixels, &known, shape);
    if filled > 0 {
        log::warn!("warp: {filled} pixels filled by nearest neighbour (degenerate source triangles)");
    }
    Ok(Warped {
        image: FaceImage::new(shape, pixels, Vec::new(), src.capture_kind())?,
        filled,
    })
}

/// Copies each unknown pixel from the closest known one (ties broken by scan
/// order). Returns how many pixels were filled.
pub fn nearest_fill(pixels: &mut [f64], known: &[bool], shape: ImageShape) -> usize {
    let (w, plane) = (shape.width, shape.plane());
    let known_idx: Vec<usize> = (0..plane).filter(|&i| known[i]).collect();
    if known_idx.is_empty() {
        return 0;
    }
    let mut filled = 0;
    for idx in 0..plane {
        if known[idx] {
            continue;
        }
        let (x, y) = ((idx % w) as i64, (idx / w) as i64);
        let best = *known_idx
            .iter()
            .min_by_key(|&&k| {
                let (kx, ky) = ((k % w) as i64, (k / w) as i64);
                (kx - x).pow(2) + (ky - y).pow(2)
            })
            .unwrap();
        for c in 0..shape.channels {
            pixels[c * plane + idx] = pixels[c * plane + best];
        }
        filled += 1;
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::CaptureKind;

    fn gradient_image(shape: ImageShape) -> FaceImage {
        let mut px = vec![0.0; shape.len()];
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    px[(c * shape.height + y) * shape.width + x] =
                        ((x as f64 * 0.7 + y as f64 * 0.3 + c as f64).sin() + 1.0) / 2.0;
                }
            }
        }
        FaceImage::new(shape, px, vec![], CaptureKind::Document).unwrap()
    }

    #[test]
    fn every_pixel_is_covered() {
        let shape = ImageShape::new(16, 16, 1);
        let pts = with_anchors(&[[5.0, 5.0], [10.0, 6.0], [7.5, 11.0]], shape);
        let tris = delaunay(&pts);
        let r = rasterize(&pts, &tris, shape);
        assert!(r.cover.iter().all(|c| c.is_some()));
    }

    #[test]
    fn identity_warp_reproduces_the_image() {
        let shape = ImageShape::new(16, 16, 3);
        let img = gradient_image(shape);
        let pts = with_anchors(&[[5.0, 5.0], [10.0, 6.0], [7.5, 11.0]], shape);
        let tris = delaunay(&pts);
        let out = warp_image(&img, &pts, &pts, &tris).unwrap();
        assert_eq!(out.filled, 0);
        assert!(out.image.max_abs_diff(&img) < 1e-9);
    }

    #[test]
    fn translation_of_interior_points_moves_content() {
        let shape = ImageShape::new(32, 32, 1);
        let img = gradient_image(shape);
        let src = with_anchors(&[[12.0, 12.0], [20.0, 12.0], [16.0, 20.0]], shape);
        let dst = with_anchors(&[[13.0, 12.0], [21.0, 12.0], [17.0, 20.0]], shape);
        let tris = delaunay(&dst);
        let out = warp_image(&img, &src, &dst, &tris).unwrap();
        // the centroid of the landmark triangle moved one pixel right
        let v = out.image.get(0, 15, 17);
        assert!((v - img.get(0, 15, 16)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_source_triangle_is_filled_not_holed() {
        let shape = ImageShape::new(16, 16, 1);
        let img = gradient_image(shape);
        let dst = with_anchors(&[[5.0, 5.0], [10.0, 5.0], [7.5, 10.0]], shape);
        // collapse the landmark triangle onto a line in the source
        let src = with_anchors(&[[5.0, 5.0], [10.0, 5.0], [7.5, 5.0]], shape);
        let tris = delaunay(&dst);
        let out = warp_image(&img, &src, &dst, &tris).unwrap();
        assert!(out.filled > 0);
        assert!(out.image.pixels().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cardinality_mismatch_is_a_geometry_error() {
        let shape = ImageShape::new(8, 8, 1);
        let img = gradient_image(shape);
        let a = with_anchors(&[[3.0, 3.0]], shape);
        let b = with_anchors(&[], shape);
        let tris = delaunay(&a);
        assert_eq!(warp_image(&img, &a, &b, &tris).err().unwrap().kind(), "geometry");
    }
}
