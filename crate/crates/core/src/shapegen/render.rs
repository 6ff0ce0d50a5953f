use serde::{Deserialize, Serialize};

use super::{GeomError, Shape, Vec3};
use crate::imaging::GrayImage;

pub const VIEWS: usize = 12;

/// Fixed orthographic camera: yaw `30k°` about +y, then a downward pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub size: usize,
    pub pitch_deg: f64,
    /// Half width of the visible square in object units.
    pub extent: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            size: 64,
            pitch_deg: 20.0,
            extent: 1.05,
        }
    }
}

impl RenderSettings {
    fn to_camera(&self, k: usize) -> impl Fn(Vec3) -> Vec3 {
        let yaw = (30.0 * k as f64).to_radians();
        let pitch = self.pitch_deg.to_radians();
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        move |p: Vec3| {
            let x = cy * p[0] - sy * p[2];
            let z = sy * p[0] + cy * p[2];
            let y = cp * p[1] - sp * z;
            let z = sp * p[1] + cp * z;
            [x, y, z]
        }
    }
}

/// Depth-shaded silhouette of `shape` from view `k`: nearer surfaces are
/// brighter (`0.25..=1`), background is 0.
pub fn render(shape: &Shape, k: usize, settings: &RenderSettings) -> Result<GrayImage, GeomError> {
    if k >= VIEWS {
        return Err(GeomError::InvalidInput(format!("view index {k} outside 0..{VIEWS}")));
    }
    let n = settings.size;
    let mut depth = vec![f64::NEG_INFINITY; n * n];
    let cam = settings.to_camera(k);
    let half = n as f64 / 2.0;
    let to_pixel = |p: Vec3| [half + p[0] / settings.extent * half, half - p[1] / settings.extent * half, p[2]];
    for tri in shape.triangles() {
        let [a, b, c] = tri.map(|p| to_pixel(cam(p)));
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil() as isize).clamp(0, n as isize) as usize;
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let y1 = (a[1].max(b[1]).max(c[1]).ceil() as isize).clamp(0, n as isize) as usize;
        for py in y0..y1 {
            for px in x0..x1 {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((b[0] - x) * (c[1] - y) - (b[1] - y) * (c[0] - x)) / area;
                let w1 = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let slot = &mut depth[py * n + px];
                if z > *slot {
                    *slot = z;
                }
            }
        }
    }
    let range = settings.extent * 3f64.sqrt();
    let data = depth
        .into_iter()
        .map(|z| {
            if z.is_finite() {
                let t = ((z + range) / (2.0 * range)).clamp(0.0, 1.0);
                (0.25 + 0.75 * t) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(GrayImage::new(n, n, data).expect("square buffer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapegen::{compose_shape, sample_part, Category, PartMesh, Template, TopoAttr};

    fn symmetric_chair() -> Shape {
        let t = Template::get(4).unwrap();
        let parts: Vec<PartMesh> = (0..3).map(|s| sample_part(Category::Chair, s, 9, None, &t).unwrap().0).collect();
        let half: Vec<Vec3> = parts.iter().map(|p| p.center_extents().1).collect();
        let centers = Category::Chair.layout(&half);
        compose_shape(&parts, &TopoAttr::from_boxes(&centers.into_iter().zip(half).map(Some).collect::<Vec<_>>())).unwrap()
    }

    #[test]
    fn empty_shape_renders_black() {
        let shape = Shape {
            parts: vec![None],
            topo: TopoAttr::from_boxes(&[None]),
        };
        let img = render(&shape, 0, &RenderSettings::default()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn view_index_is_not_wrapped() {
        assert!(render(&symmetric_chair(), 12, &RenderSettings::default()).is_err());
    }

    #[test]
    fn side_views_of_mirror_symmetric_shape_are_mirrors() {
        let shape = symmetric_chair();
        let s = RenderSettings::default();
        let a = render(&shape, 3, &s).unwrap();
        let b = render(&shape, 9, &s).unwrap().mirrored();
        let differing = a.data().iter().zip(b.data()).filter(|(x, y)| (*x - *y).abs() > 1e-4).count();
        // only pixel centers lying exactly on a triangle edge may disagree
        assert!(differing <= a.data().len() / 100, "{differing} pixels differ");
        assert!(a.data().iter().any(|&v| v > 0.0));
        assert_eq!(render(&shape, 3, &s).unwrap(), a);
    }
}
