//! Texture transfer support: border following on binary masks and
//! thin-plate-spline warps driven by contour samples.

use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::GrayImage;

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("thin-plate spline: {0}")]
    Singular(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderKind {
    Outer,
    Hole,
}

/// A closed border as pixel coordinates `(x, y)`, with its enclosing border.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    pub kind: BorderKind,
    pub parent: Option<usize>,
}

// Neighbor offsets (di, dj), counterclockwise on screen starting east.
const DIRS: [(isize, isize); 8] = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)];

fn dir_of(di: isize, dj: isize) -> usize {
    DIRS.iter().position(|&d| d == (di, dj)).expect("8-neighbor offset")
}

/// Suzuki–Abe border following (8-connected foreground) over `mask > 0.5`,
/// scanning rows top to bottom. Returns outer and hole borders; `parent`
/// indexes the returned list, `None` for borders directly inside the frame.
pub fn trace_contours(mask: &GrayImage) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let (pw, ph) = (w + 2, h + 2);
    let mut f = vec![0i32; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) > 0.5 {
                f[(y + 1) * pw + x + 1] = 1;
            }
        }
    }
    let at = |i: isize, j: isize| (i as usize) * pw + j as usize;
    // Border number -> (kind, parent border number); 1 is the frame.
    let mut borders: Vec<(BorderKind, i32)> = vec![(BorderKind::Hole, 0), (BorderKind::Hole, 0)];
    let mut traced: Vec<Vec<(usize, usize)>> = vec![Vec::new(), Vec::new()];
    let mut nbd = 1i32;
    for i in 1..(ph as isize - 1) {
        let mut lnbd = 1i32;
        for j in 1..(pw as isize - 1) {
            let v = f[at(i, j)];
            let start = if v == 1 && f[at(i, j - 1)] == 0 {
                Some((BorderKind::Outer, (i, j - 1)))
            } else if v >= 1 && f[at(i, j + 1)] == 0 {
                if v > 1 {
                    lnbd = v;
                }
                Some((BorderKind::Hole, (i, j + 1)))
            } else {
                None
            };
            if let Some((kind, (i2, j2))) = start {
                nbd += 1;
                let (lkind, lparent) = borders[lnbd as usize];
                let parent = if kind == lkind { lparent } else { lnbd };
                borders.push((kind, parent));
                traced.push(follow(&mut f, pw, (i, j), (i2, j2), nbd));
            }
            let v = f[at(i, j)];
            if v != 1 && v != 0 {
                lnbd = v.abs();
            }
        }
    }
    let index = |b: i32| if b >= 2 { Some((b - 2) as usize) } else { None };
    borders
        .into_iter()
        .zip(traced)
        .skip(2)
        .map(|((kind, parent), points)| Contour {
            points,
            kind,
            parent: index(parent),
        })
        .collect()
}

fn follow(f: &mut [i32], pw: usize, start: (isize, isize), from: (isize, isize), nbd: i32) -> Vec<(usize, usize)> {
    let at = |p: (isize, isize)| (p.0 as usize) * pw + p.1 as usize;
    let out = |p: (isize, isize)| ((p.1 - 1) as usize, (p.0 - 1) as usize);
    let (i, j) = start;
    let d0 = dir_of(from.0 - i, from.1 - j);
    // Clockwise search for the first nonzero neighbor.
    let first = (0..8).map(|k| (d0 + 8 - k) % 8).map(|d| (i + DIRS[d].0, j + DIRS[d].1)).find(|&p| f[at(p)] != 0);
    let Some(p1) = first else {
        f[at(start)] = -nbd;
        return vec![out(start)];
    };
    let mut points = Vec::new();
    let (mut p2, mut p3) = (p1, start);
    loop {
        points.push(out(p3));
        let d2 = dir_of(p2.0 - p3.0, p2.1 - p3.1);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (d2 + k) % 8;
            let q = (p3.0 + DIRS[d].0, p3.1 + DIRS[d].1);
            if f[at(q)] != 0 {
                p4 = q;
                break;
            }
            if d == 0 {
                east_zero = true;
            }
        }
        if east_zero {
            f[at(p3)] = -nbd;
        } else if f[at(p3)] == 1 {
            f[at(p3)] = nbd;
        }
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    points
}

/// `n` points at uniform arc-length spacing from the contour's first point,
/// each the contour pixel nearest its arc position. With `n` equal to the
/// contour length every pixel is returned once.
pub fn sample_contour_points(contour: &Contour, n: usize) -> Result<Vec<(usize, usize)>, TextureError> {
    let pts = &contour.points;
    if n == 0 || pts.is_empty() {
        return Err(TextureError::InvalidInput("need n ≥ 1 and a nonempty contour".into()));
    }
    if n == pts.len() {
        return Ok(pts.clone());
    }
    let step = |a: (usize, usize), b: (usize, usize)| {
        let (dx, dy) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
        (dx * dx + dy * dy).sqrt()
    };
    let mut arc = Vec::with_capacity(pts.len());
    let mut total = 0.0;
    for k in 0..pts.len() {
        arc.push(total);
        total += step(pts[k], pts[(k + 1) % pts.len()]);
    }
    Ok((0..n)
        .map(|m| {
            let s = m as f64 * total / n as f64;
            let best = (0..pts.len())
                .min_by(|&a, &b| (arc[a] - s).abs().total_cmp(&(arc[b] - s).abs()))
                .expect("nonempty");
            // The closing segment wraps to the start point.
            if total - s < (arc[best] - s).abs() {
                pts[0]
            } else {
                pts[best]
            }
        })
        .collect())
}

fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// 2-D thin-plate spline `p ↦ a + A p + Σ w_i U(‖p − c_i‖)`, `U(r) = r² log r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub centers: Vec<[f64; 2]>,
    /// Radial coefficients per center, `[x, y]` outputs.
    pub weights: Vec<[f64; 2]>,
    /// `[[a_x, a_y], [b_x, b_y], [c_x, c_y]]` for `a + b·x + c·y`.
    pub affine: [[f64; 2]; 3],
}

impl TpsWarp {
    /// Solves the standard system with bending regulariser `lambda`.
    pub fn fit(src: &[[f64; 2]], dst: &[[f64; 2]], lambda: f64) -> Result<Self, TextureError> {
        let n = src.len();
        if n != dst.len() {
            return Err(TextureError::InvalidInput(format!("{n} sources but {} targets", dst.len())));
        }
        if n < 3 {
            return Err(TextureError::Singular("need at least 3 control points".into()));
        }
        let scale = src.iter().flat_map(|p| p.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
        for a in 0..n {
            for b in a + 1..n {
                if (src[a][0] - src[b][0]).hypot(src[a][1] - src[b][1]) <= 1e-12 * scale {
                    return Err(TextureError::Singular(format!("duplicate control points {a} and {b}")));
                }
            }
        }
        let (a, b) = (src[0], src[1]);
        let collinear = src.iter().all(|p| {
            ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])).abs() <= 1e-10 * scale * scale
        });
        if collinear {
            return Err(TextureError::Singular("control points are collinear".into()));
        }
        let mut m = DMatrix::<f64>::zeros(n + 3, n + 3);
        for r in 0..n {
            for c in 0..n {
                let (dx, dy) = (src[r][0] - src[c][0], src[r][1] - src[c][1]);
                m[(r, c)] = kernel(dx * dx + dy * dy);
            }
            m[(r, r)] += lambda;
            let row = [1.0, src[r][0], src[r][1]];
            for (k, v) in row.into_iter().enumerate() {
                m[(r, n + k)] = v;
                m[(n + k, r)] = v;
            }
        }
        let lu = m.lu();
        let mut out = [DVector::zeros(0), DVector::zeros(0)];
        for (axis, o) in out.iter_mut().enumerate() {
            let mut rhs = DVector::<f64>::zeros(n + 3);
            for r in 0..n {
                rhs[r] = dst[r][axis];
            }
            *o = lu.solve(&rhs).ok_or_else(|| TextureError::Singular("linear system is singular".into()))?;
            if o.iter().any(|v| !v.is_finite()) {
                return Err(TextureError::Singular("linear system is singular".into()));
            }
        }
        Ok(Self {
            centers: src.to_vec(),
            weights: (0..n).map(|r| [out[0][r], out[1][r]]).collect(),
            affine: [0, 1, 2].map(|k| [out[0][n + k], out[1][n + k]]),
        })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let mut q = [0.0; 2];
        for (axis, v) in q.iter_mut().enumerate() {
            *v = self.affine[0][axis] + self.affine[1][axis] * p[0] + self.affine[2][axis] * p[1];
        }
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let u = kernel(dx * dx + dy * dy);
            q[0] += w[0] * u;
            q[1] += w[1] * u;
        }
        q
    }

    /// `Σ_axes wᵀ K w`.
    pub fn bending_energy(&self) -> f64 {
        let mut e = 0.0;
        for (a, wa) in self.centers.iter().zip(&self.weights) {
            for (b, wb) in self.centers.iter().zip(&self.weights) {
                let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
                let u = kernel(dx * dx + dy * dy);
                e += u * (wa[0] * wb[0] + wa[1] * wb[1]);
            }
        }
        e
    }
}

fn bilinear(width: usize, height: usize, p: [f64; 2], get: impl Fn(usize, usize) -> f64) -> Option<f64> {
    // Snap float residue so integer positions sample pixels exactly.
    let snap = |v: f64| if (v - v.round()).abs() < 1e-6 { v.round() } else { v };
    let (x, y) = (snap(p[0]), snap(p[1]));
    let eps = 1e-9;
    if !(x >= -eps && y >= -eps && x <= (width - 1) as f64 + eps && y <= (height - 1) as f64 + eps) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, (width - 1) as f64), y.clamp(0.0, (height - 1) as f64));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = get(x0, y0) * (1.0 - fx) + get(x1, y0) * fx;
    let bottom = get(x0, y1) * (1.0 - fx) + get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Backward warp: output pixel `p` samples `img` at `warp(p)` bilinearly;
/// samples outside the image take `background`.
pub fn tps_warp_image(img: &GrayImage, warp: &TpsWarp, background: f32) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let q = warp.apply([x as f64, y as f64]);
            let v = bilinear(w, h, q, |a, b| img.get(a, b) as f64).map_or(background, |v| v as f32);
            out.set(x, y, v);
        }
    }
    out
}

/// [`tps_warp_image`] for RGB images, channel by channel.
pub fn tps_warp_rgb(img: &RgbImage, warp: &TpsWarp, background: [u8; 3]) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let q = warp.apply([x as f64, y as f64]);
        let mut px = background;
        for (c, v) in px.iter_mut().enumerate() {
            if let Some(s) = bilinear(w, h, q, |a, b| img.get_pixel(a as u32, b as u32)[c] as f64) {
                *v = s.round().clamp(0.0, 255.0) as u8;
            }
        }
        image::Rgb(px)
    })
}

/// Moves texture from the contour of `from` onto the contour of `to`: both
/// outer contours are sampled with `samples` points from their scan-order
/// starts and the warp maps `to` samples back onto `from` samples.
pub fn transfer_warp(from: &Contour, to: &Contour, samples: usize, lambda: f64) -> Result<TpsWarp, TextureError> {
    let pts = |c: &Contour| -> Result<Vec<[f64; 2]>, TextureError> {
        let mut p: Vec<[f64; 2]> = sample_contour_points(c, samples)?.into_iter().map(|(x, y)| [x as f64, y as f64]).collect();
        p.dedup();
        Ok(p)
    };
    let (a, b) = (pts(from)?, pts(to)?);
    let n = a.len().min(b.len());
    TpsWarp::fit(&b[..n], &a[..n], lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> GrayImage {
        let mut m = GrayImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                if on(x, y) {
                    m.set(x, y, 1.0);
                }
            }
        }
        m
    }

    #[test]
    fn single_pixel_is_one_point() {
        let c = trace_contours(&mask(5, 5, |x, y| x == 2 && y == 2));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].points, vec![(2, 2)]);
    }

    #[test]
    fn square_starts_top_left_and_runs_counterclockwise_on_screen() {
        let c = trace_contours(&mask(6, 6, |x, y| (1..4).contains(&x) && (1..4).contains(&y)));
        assert_eq!(c[0].points[0], (1, 1));
        assert_eq!(c[0].points[1], (1, 2));
        assert_eq!(c[0].points.len(), 8);
    }

    #[test]
    fn nested_objects_form_a_tree() {
        // Ring with a blob inside its hole.
        let c = trace_contours(&mask(12, 12, |x, y| {
            let ring = (1..11).contains(&x) && (1..11).contains(&y) && !((3..9).contains(&x) && (3..9).contains(&y));
            ring || ((5..7).contains(&x) && (5..7).contains(&y))
        }));
        let kinds: Vec<_> = c.iter().map(|c| (c.kind, c.parent)).collect();
        assert_eq!(kinds, vec![(BorderKind::Outer, None), (BorderKind::Hole, Some(0)), (BorderKind::Outer, Some(1))]);
    }

    #[test]
    fn quarter_samples_on_square() {
        let c = trace_contours(&mask(12, 12, |x, y| (1..11).contains(&x) && (1..11).contains(&y)));
        let s = sample_contour_points(&c[0], 4).unwrap();
        assert_eq!(s, vec![(1, 1), (1, 10), (10, 10), (10, 1)]);
    }

    #[test]
    fn bilinear_hits_pixels_exactly() {
        let img = mask(3, 3, |x, y| x == 1 && y == 2);
        assert_eq!(bilinear(3, 3, [1.0, 2.0], |a, b| img.get(a, b) as f64), Some(1.0));
        assert_eq!(bilinear(3, 3, [0.5, 2.0], |a, b| img.get(a, b) as f64), Some(0.5));
        assert_eq!(bilinear(3, 3, [2.5, 2.0], |a, b| img.get(a, b) as f64), None);
    }
}
