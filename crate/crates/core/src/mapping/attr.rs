use crate::numcore::{NumError, Result};
use crate::shapegen::TopoAttr;

pub const VIEW_COUNT: usize = 12;

/// Shape attribute `S = P ⊕ T`: per-part codes `P_0..P_{n_c-1}` followed by
/// the topology vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeAttr {
    pub geom: Vec<f32>,
    pub topo: Vec<f32>,
}

impl ShapeAttr {
    pub fn dim(n_c: usize, z: usize) -> usize {
        n_c * z + TopoAttr::PER_PART * n_c
    }

    pub fn pack(&self) -> Vec<f32> {
        [self.geom.as_slice(), self.topo.as_slice()].concat()
    }

    pub fn unpack(values: &[f32], n_c: usize, z: usize) -> Result<Self> {
        if values.len() != Self::dim(n_c, z) {
            return Err(NumError::ShapeMismatch {
                op: "shape_attr",
                lhs: vec![Self::dim(n_c, z)],
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            geom: values[..n_c * z].to_vec(),
            topo: values[n_c * z..].to_vec(),
        })
    }

    pub fn part_count(&self) -> usize {
        self.topo.len() / TopoAttr::PER_PART
    }

    pub fn z(&self) -> usize {
        self.geom.len() / self.part_count()
    }

    pub fn part_code(&self, k: usize) -> &[f32] {
        let z = self.z();
        &self.geom[k * z..(k + 1) * z]
    }

    pub fn part_code_mut(&mut self, k: usize) -> &mut [f32] {
        let z = self.z();
        &mut self.geom[k * z..(k + 1) * z]
    }

    /// Topology with existence thresholded and extents kept positive, ready
    /// for composition.
    pub fn topo_attr(&self) -> TopoAttr {
        let mut values: Vec<f64> = self.topo.iter().map(|&v| v as f64).collect();
        for block in values.chunks_mut(TopoAttr::PER_PART) {
            block[0] = if block[0] >= 0.5 { 1.0 } else { 0.0 };
            for h in &mut block[4..7] {
                *h = h.max(1e-3);
            }
        }
        TopoAttr::new(values).expect("7 values per part")
    }

    /// This attribute with part `k`'s code and topology block taken from `other`.
    pub fn with_part_from(&self, other: &Self, k: usize) -> Self {
        let mut out = self.clone();
        out.part_code_mut(k).copy_from_slice(other.part_code(k));
        let t = TopoAttr::PER_PART;
        out.topo[k * t..(k + 1) * t].copy_from_slice(&other.topo[k * t..(k + 1) * t]);
        out
    }
}

/// One-hot yaw index `k ↔ 30k°`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ViewVector(usize);

impl ViewVector {
    pub fn new(k: usize) -> Result<Self> {
        if k >= VIEW_COUNT {
            return Err(NumError::InvalidArgument {
                op: "view",
                msg: format!("view index {k} outside 0..{VIEW_COUNT}"),
            });
        }
        Ok(Self(k))
    }

    pub fn from_one_hot(v: &[f32]) -> Result<Self> {
        let ones: Vec<usize> = v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        if v.len() != VIEW_COUNT || ones.len() != 1 || zeros != VIEW_COUNT - 1 {
            return Err(NumError::InvalidArgument {
                op: "view",
                msg: format!("malformed one-hot {v:?}"),
            });
        }
        Ok(Self(ones[0]))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self) -> [f32; VIEW_COUNT] {
        let mut v = [0.0; VIEW_COUNT];
        v[self.0] = 1.0;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_is_exact() {
        let values: Vec<f32> = (0..ShapeAttr::dim(3, 8)).map(|i| (i as f32).sin() * 1e3).collect();
        let s = ShapeAttr::unpack(&values, 3, 8).unwrap();
        assert_eq!(s.pack(), values);
        assert_eq!(s.part_count(), 3);
        assert_eq!(s.z(), 8);
        assert!(ShapeAttr::unpack(&values[1..], 3, 8).is_err());
    }

    #[test]
    fn one_hot_validation() {
        let v = ViewVector::new(4).unwrap();
        assert_eq!(ViewVector::from_one_hot(&v.one_hot()).unwrap(), v);
        let mut two = v.one_hot();
        two[0] = 1.0;
        assert!(ViewVector::from_one_hot(&two).is_err());
        assert!(ViewVector::from_one_hot(&[0.0; 12]).is_err());
        assert!(ViewVector::new(12).is_err());
    }

    #[test]
    fn replacement_mixes_exactly_one_part() {
        let a = ShapeAttr::unpack(&vec![1.0; ShapeAttr::dim(3, 2)], 3, 2).unwrap();
        let b = ShapeAttr::unpack(&vec![2.0; ShapeAttr::dim(3, 2)], 3, 2).unwrap();
        let mix = a.with_part_from(&b, 1);
        assert_eq!(mix.part_code(1), b.part_code(1));
        assert_eq!(mix.part_code(0), a.part_code(0));
        assert_eq!(&mix.topo[7..14], &b.topo[7..14]);
        assert_eq!(&mix.topo[..7], &a.topo[..7]);
    }
}
