use serde::{Deserialize, Serialize};

use super::{add, sub, GeomError, PartMesh, Vec3};

/// Per part: `[exist, cx, cy, cz, hx, hy, hz]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopoAttr {
    values: Vec<f64>,
}

impl TopoAttr {
    pub const PER_PART: usize = 7;

    pub fn new(values: Vec<f64>) -> Result<Self, GeomError> {
        if values.is_empty() || values.len() % Self::PER_PART != 0 {
            return Err(GeomError::InvalidInput(format!("topology length {} is not 7·n_c", values.len())));
        }
        Ok(Self { values })
    }

    pub fn from_boxes(boxes: &[Option<(Vec3, Vec3)>]) -> Self {
        let values = boxes
            .iter()
            .flat_map(|b| match b {
                Some((c, h)) => [1.0, c[0], c[1], c[2], h[0], h[1], h[2]],
                None => [0.0; 7],
            })
            .collect();
        Self { values }
    }

    pub fn part_count(&self) -> usize {
        self.values.len() / Self::PER_PART
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn exists(&self, part: usize) -> bool {
        self.values[part * 7] >= 0.5
    }

    /// Center and half extents of `part`.
    pub fn bbox(&self, part: usize) -> (Vec3, Vec3) {
        let b = &self.values[part * 7..part * 7 + 7];
        ([b[1], b[2], b[3]], [b[4], b[5], b[6]])
    }

    pub fn set_bbox(&mut self, part: usize, center: Vec3, half: Vec3) {
        self.values[part * 7..part * 7 + 7].copy_from_slice(&[1.0, center[0], center[1], center[2], half[0], half[1], half[2]]);
    }
}

/// Parts placed in world coordinates together with the topology that placed them.
#[derive(Clone, Debug)]
pub struct Shape {
    pub parts: Vec<Option<PartMesh>>,
    pub topo: TopoAttr,
}

impl Shape {
    pub fn is_empty(&self) -> bool {
        self.parts.iter().all(Option::is_none)
    }

    pub fn triangles(&self) -> Vec<[Vec3; 3]> {
        self.parts
            .iter()
            .flatten()
            .flat_map(|p| p.template.triangles().map(|t| t.map(|i| p.vertices[i])).collect::<Vec<_>>())
            .collect()
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vec3> {
        self.parts.iter().flatten().flat_map(|p| p.vertices.iter())
    }
}

fn placed(part: &PartMesh, center: Vec3, half: Vec3) -> Result<PartMesh, GeomError> {
    if half.iter().any(|&h| !(h > 0.0)) {
        return Err(GeomError::InvalidInput(format!("nonpositive half extents {half:?}")));
    }
    let (c0, h0) = part.center_extents();
    let factor = [0, 1, 2].map(|a| if h0[a] > 0.0 { half[a] / h0[a] } else { 1.0 });
    let vertices = part
        .vertices
        .iter()
        .map(|&v| {
            let d = sub(v, c0);
            add(center, [d[0] * factor[0], d[1] * factor[1], d[2] * factor[2]])
        })
        .collect();
    PartMesh::new(vertices, part.template.clone())
}

/// Scale and translate each existing part so its bounding box matches `topo`.
pub fn compose_shape(parts: &[PartMesh], topo: &TopoAttr) -> Result<Shape, GeomError> {
    if parts.len() != topo.part_count() {
        return Err(GeomError::InvalidInput(format!(
            "{} parts for a topology of {}",
            parts.len(),
            topo.part_count()
        )));
    }
    let parts = parts
        .iter()
        .enumerate()
        .map(|(k, part)| {
            if !topo.exists(k) {
                return Ok(None);
            }
            let (center, half) = topo.bbox(k);
            placed(part, center, half).map(Some)
        })
        .collect::<Result<_, _>>()?;
    Ok(Shape {
        parts,
        topo: topo.clone(),
    })
}

/// Scale one part about its bounding-box center; the topology follows.
pub fn resize_part(shape: &Shape, part: usize, factors: Vec3) -> Result<Shape, GeomError> {
    if factors.iter().any(|&f| !(f > 0.0)) {
        return Err(GeomError::InvalidInput(format!("nonpositive resize factors {factors:?}")));
    }
    let mesh = shape
        .parts
        .get(part)
        .and_then(Option::as_ref)
        .ok_or_else(|| GeomError::InvalidInput(format!("part {part} does not exist")))?;
    let (center, half) = shape.topo.bbox(part);
    let half = [half[0] * factors[0], half[1] * factors[1], half[2] * factors[2]];
    let mut out = shape.clone();
    out.parts[part] = Some(placed(mesh, center, half)?);
    out.topo.set_bbox(part, center, half);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapegen::{bounds, sample_part, Category, Template};

    fn chair(seed: u64) -> Shape {
        let t = Template::get(3).unwrap();
        let parts: Vec<PartMesh> = (0..3).map(|s| sample_part(Category::Chair, s, seed + s as u64, None, &t).unwrap().0).collect();
        let half: Vec<Vec3> = parts.iter().map(|p| p.center_extents().1).collect();
        let centers = Category::Chair.layout(&half);
        let topo = TopoAttr::from_boxes(&centers.into_iter().zip(half).map(Some).collect::<Vec<_>>());
        compose_shape(&parts, &topo).unwrap()
    }

    #[test]
    fn own_bbox_leaves_part_unchanged() {
        let t = Template::get(4).unwrap();
        let (part, _) = sample_part(Category::Cup, 0, 3, None, &t).unwrap();
        let (c, h) = part.center_extents();
        let shape = compose_shape(std::slice::from_ref(&part), &TopoAttr::from_boxes(&[Some((c, h))])).unwrap();
        assert!(shape.parts[0].as_ref().unwrap().max_vertex_error(&part) < 1e-12);
    }

    #[test]
    fn absent_parts_are_omitted() {
        let t = Template::get(2).unwrap();
        let (part, _) = sample_part(Category::Cup, 0, 3, None, &t).unwrap();
        let shape = compose_shape(&[part.clone(), part], &TopoAttr::from_boxes(&[None, None])).unwrap();
        assert!(shape.is_empty());
        assert!(shape.triangles().is_empty());
    }

    #[test]
    fn existing_part_needs_positive_extent() {
        let t = Template::get(2).unwrap();
        let (part, _) = sample_part(Category::Cup, 0, 3, None, &t).unwrap();
        let topo = TopoAttr::from_boxes(&[Some(([0.0; 3], [0.1, 0.0, 0.1]))]);
        assert!(compose_shape(&[part], &topo).is_err());
    }

    #[test]
    fn union_bbox_is_hull_of_part_boxes() {
        let shape = chair(11);
        let all: Vec<Vec3> = shape.vertices().copied().collect();
        let (lo, hi) = bounds(&all);
        let mut hull = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for k in 0..3 {
            let (c, h) = shape.topo.bbox(k);
            for a in 0..3 {
                hull.0[a] = hull.0[a].min(c[a] - h[a]);
                hull.1[a] = hull.1[a].max(c[a] + h[a]);
            }
        }
        for a in 0..3 {
            assert!((lo[a] - hull.0[a]).abs() < 1e-12 && (hi[a] - hull.1[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_scales_one_part() {
        let shape = chair(5);
        let same = resize_part(&shape, 0, [1.0; 3]).unwrap();
        assert_eq!(same.topo, shape.topo);
        let tall = resize_part(&shape, 0, [1.0, 1.5, 1.0]).unwrap();
        let (c0, h0) = shape.topo.bbox(0);
        let (c1, h1) = tall.topo.bbox(0);
        assert_eq!(c0, c1);
        assert!((h1[1] - 1.5 * h0[1]).abs() < 1e-12);
        assert_eq!(tall.topo.bbox(1), shape.topo.bbox(1));
        let (_, measured) = tall.parts[0].as_ref().unwrap().center_extents();
        assert!((measured[1] - h1[1]).abs() < 1e-12);

        let twice = resize_part(&resize_part(&shape, 0, [1.0, 1.2, 1.0]).unwrap(), 0, [1.0, 1.2, 1.0]).unwrap();
        let once = resize_part(&shape, 0, [1.0, 1.44, 1.0]).unwrap();
        assert!((twice.topo.bbox(0).1[1] - once.topo.bbox(0).1[1]).abs() < 1e-12);
        assert!(resize_part(&shape, 3, [1.0; 3]).is_err());
    }
}
