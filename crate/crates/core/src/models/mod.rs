//! Teacher, student and segmentation networks.

mod layers;
mod segnet;
mod student;
mod teacher;

pub use layers::{coordinate_planes, Conv, Dims, EncoderConfig, EncoderDecoder, Linear, Mlp, NamedParams};
pub use segnet::{SegNet, SegNetConfig};
pub use student::{
    InferenceCache, StudentConfig, StudentFeatures, StudentNet, ViewInput, QUERY_FEATURES, STUDENT_MLP, VIEW_FEATURES,
};
pub use teacher::{TeacherConfig, TeacherFeatures, TeacherNet, TEACHER_FEATURES, TEACHER_MLP};

use biplanar_tensor::{ops, Tensor};

use crate::drr::ProjectionImage;
use crate::error::{Error, Result};
use crate::occupancy::{OccupancyVector, NUM_CLASSES};

/// `I_m = I * M + w_m * I * (1 - M)` for a binary mask `M`.
pub fn apply_enhancement(img: &ProjectionImage, mask: &[bool], w_m: f64) -> Result<ProjectionImage> {
    if mask.len() != img.data.len() {
        return Err(Error::Model(format!("mask has {} pixels, image has {}", mask.len(), img.data.len())));
    }
    if !(0.0..=1.0).contains(&w_m) {
        return Err(Error::Model(format!("enhancement weight must lie in [0, 1], got {w_m}")));
    }
    let data = img
        .data
        .iter()
        .zip(mask)
        .map(|(&i, &m)| {
            let m = if m { 1.0 } else { 0.0 };
            i * m + w_m * (i * (1.0 - m))
        })
        .collect();
    ProjectionImage::new(data, img.geometry.clone(), img.domain)
}

/// Enhanced radiograph from the segmenter's binarised bone mask.
pub fn enhance_image(seg: &SegNet, img: &ProjectionImage, w_m: f64, threshold: f64) -> Result<ProjectionImage> {
    let mask = seg.predict_mask(img, threshold)?;
    apply_enhancement(img, &mask, w_m)
}

/// Softmax rows of `[N, 5]` logits.
pub fn probabilities(logits: &Tensor) -> Result<Vec<OccupancyVector>> {
    if logits.shape().len() != 2 || logits.shape()[1] != NUM_CLASSES {
        return Err(Error::Model(format!("expected [N, {NUM_CLASSES}] logits, got {:?}", logits.shape())));
    }
    let p = ops::softmax(logits)?;
    let data = p.data();
    Ok(data.chunks(NUM_CLASSES).map(|r| OccupancyVector(r.try_into().expect("row of NUM_CLASSES"))).collect())
}
