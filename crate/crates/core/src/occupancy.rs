//! Class labels and the 5-way occupancy vector.

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoneClass {
    Patella = 1,
    Femur = 2,
    Fibula = 3,
    Tibia = 4,
}

impl BoneClass {
    pub const ALL: [BoneClass; 4] = [BoneClass::Patella, BoneClass::Femur, BoneClass::Fibula, BoneClass::Tibia];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(BoneClass::Patella),
            2 => Some(BoneClass::Femur),
            3 => Some(BoneClass::Fibula),
            4 => Some(BoneClass::Tibia),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoneClass::Patella => "patella",
            BoneClass::Femur => "femur",
            BoneClass::Fibula => "fibula",
            BoneClass::Tibia => "tibia",
        }
    }
}

/// Per-class scores: index 0 is background, 1..=4 follow [`BoneClass`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyVector(pub [f64; NUM_CLASSES]);

impl OccupancyVector {
    pub fn one_hot(class: usize) -> Self {
        let mut v = [0.0; NUM_CLASSES];
        v[class] = 1.0;
        Self(v)
    }

    /// Softmax of raw logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut v = [0.0; NUM_CLASSES];
        for (o, &l) in v.iter_mut().zip(logits) {
            *o = (l - m).exp();
        }
        let z: f64 = v.iter().sum();
        v.iter_mut().for_each(|o| *o /= z);
        Self(v)
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn one_hot_inference(s: &OccupancyVector) -> OccupancyVector {
    OccupancyVector::one_hot(s.argmax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(one_hot_inference(&OccupancyVector([0.1, 0.6, 0.1, 0.1, 0.1])).argmax(), 1);
        assert_eq!(one_hot_inference(&OccupancyVector([0.2; 5])), OccupancyVector::one_hot(0));
    }

    #[test]
    fn idempotent() {
        let s = OccupancyVector([0.05, 0.3, 0.3, 0.2, 0.15]);
        let once = one_hot_inference(&s);
        assert_eq!(one_hot_inference(&once), once);
        assert_eq!(once.argmax(), 1);
    }

    #[test]
    fn class_round_trip() {
        for c in BoneClass::ALL {
            assert_eq!(BoneClass::from_index(c.index()), Some(c));
        }
        assert_eq!(BoneClass::from_index(0), None);
    }
}
