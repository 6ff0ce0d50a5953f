use rand::Rng;
use serde::{Deserialize, Serialize};

use super::part::{uniform, DeformParams};
use super::Vec3;

/// Lowest point of every composed shape.
const FLOOR: f64 = -0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Chair,
    Cup,
}

/// Sampling box for one part slot's deformation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotRange {
    pub scale: [(f64, f64); 3],
    pub taper: (f64, f64),
    pub bend: (f64, f64),
}

impl SlotRange {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DeformParams {
        let scale = [0, 1, 2].map(|a| uniform(rng, self.scale[a]));
        DeformParams {
            scale,
            taper: uniform(rng, self.taper),
            bend: uniform(rng, self.bend),
        }
    }

    /// The same box widened by `factor` around its midpoint, used to draw
    /// off-distribution parts.
    pub fn widened(&self, factor: f64) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0 * factor);
            (mid - half, mid + half)
        };
        Self {
            scale: self.scale.map(widen),
            taper: widen(self.taper),
            bend: widen(self.bend),
        }
    }
}

impl Category {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "chair" => Some(Self::Chair),
            "cup" => Some(Self::Cup),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Chair => "chair",
            Self::Cup => "cup",
        }
    }

    pub fn part_names(self) -> &'static [&'static str] {
        match self {
            Self::Chair => &["back", "seat", "legs"],
            Self::Cup => &["body", "grip"],
        }
    }

    pub fn part_count(self) -> usize {
        self.part_names().len()
    }

    pub fn part_index(self, name: &str) -> Option<usize> {
        self.part_names().iter().position(|&p| p == name)
    }

    pub fn slot_ranges(self) -> Vec<SlotRange> {
        match self {
            Self::Chair => vec![
                SlotRange {
                    scale: [(0.7, 1.0), (0.55, 0.9), (0.08, 0.16)],
                    taper: (-0.35, 0.35),
                    bend: (-0.15, 0.15),
                },
                SlotRange {
                    scale: [(0.7, 1.0), (0.08, 0.16), (0.6, 0.9)],
                    taper: (-0.2, 0.2),
                    bend: (0.0, 0.0),
                },
                SlotRange {
                    scale: [(0.55, 0.9), (0.35, 0.7), (0.5, 0.8)],
                    taper: (-0.4, 0.4),
                    bend: (0.0, 0.0),
                },
            ],
            Self::Cup => vec![
                SlotRange {
                    scale: [(0.6, 1.0), (0.8, 1.3), (0.6, 1.0)],
                    taper: (-0.3, 0.3),
                    bend: (0.0, 0.0),
                },
                SlotRange {
                    scale: [(0.12, 0.25), (0.35, 0.7), (0.08, 0.15)],
                    taper: (-0.3, 0.3),
                    bend: (-0.3, 0.3),
                },
            ],
        }
    }

    /// Bounding-box centers that assemble parts with the given half extents
    /// into a standing shape.
    pub fn layout(self, half: &[Vec3]) -> Vec<Vec3> {
        match self {
            Self::Chair => {
                let (back, seat, legs) = (half[0], half[1], half[2]);
                let legs_c = [0.0, FLOOR + legs[1], 0.0];
                let seat_c = [0.0, FLOOR + 2.0 * legs[1] + seat[1], 0.0];
                let back_c = [0.0, seat_c[1] + seat[1] + back[1], -seat[2] + back[2]];
                vec![back_c, seat_c, legs_c]
            }
            Self::Cup => {
                let (body, grip) = (half[0], half[1]);
                let body_c = [-grip[0], FLOOR + body[1], 0.0];
                let grip_c = [body_c[0] + body[0] + grip[0], body_c[1], 0.0];
                vec![body_c, grip_c]
            }
        }
    }
}
