//! COCO-style annotation ingestion: images, categories, and bounding boxes.
//! Segmentation polygons are carried through untouched; only boxes and
//! categories are interpreted here.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::HashSet;

use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: i64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub image_id: i64,
    pub category_id: i64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    /// Polygon data as found in the file, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotationSet {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoAnnotationSet {
    pub fn image_by_id(&self, id: i64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category_by_id(&self, id: i64) -> Option<&CocoCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn annotations_for_image(&self, image_id: i64) -> impl Iterator<Item = &CocoAnnotation> {
        self.annotations
            .iter()
            .filter(move |a| a.image_id == image_id)
    }
}

/// Parse and validate a COCO-subset document. Unknown fields are ignored;
/// every annotation must reference an existing image and category and carry
/// a bbox with positive width and height.
pub fn parse_coco(bytes: &[u8]) -> Result<CocoAnnotationSet, DataError> {
    let set: CocoAnnotationSet = serde_json::from_slice(bytes)?;

    let mut image_ids = HashSet::new();
    for img in &set.images {
        if !image_ids.insert(img.id) {
            return Err(DataError::Dataset(format!(
                "coco document repeats image id {}",
                img.id
            )));
        }
    }
    let mut category_ids = HashSet::new();
    for cat in &set.categories {
        if !category_ids.insert(cat.id) {
            return Err(DataError::Dataset(format!(
                "coco document repeats category id {}",
                cat.id
            )));
        }
    }
    for (index, ann) in set.annotations.iter().enumerate() {
        if !image_ids.contains(&ann.image_id) {
            return Err(DataError::DanglingImageId {
                index,
                id: ann.image_id,
            });
        }
        if !category_ids.contains(&ann.category_id) {
            return Err(DataError::DanglingCategoryId {
                index,
                id: ann.category_id,
            });
        }
        let [_, _, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(DataError::BadBbox { index, w, h });
        }
    }
    Ok(set)
}
