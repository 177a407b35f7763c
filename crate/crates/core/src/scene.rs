use crate::error::{Error, Result};
use crate::raster::{MultiImage, Rect};

/// One acquired scene: reference group, clean group and noisy captures.
///
/// Groups with more than one image are averaged sample-wise before use.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub scene_id: String,
    pub camera_tag: String,
    pub reference: Vec<MultiImage>,
    pub clean: Vec<MultiImage>,
    pub noisy: Vec<MultiImage>,
    /// Applied to every image after alignment.
    pub crop: Option<Rect>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::invalid(format!(
                "scene {}: empty reference group",
                self.scene_id
            )));
        }
        if self.clean.is_empty() {
            return Err(Error::invalid(format!("scene {}: empty clean group", self.scene_id)));
        }
        let first = &self.reference[0];
        for img in self.reference.iter().chain(&self.clean).chain(&self.noisy) {
            first.check_same_shape(img, &format!("scene {}", self.scene_id))?;
        }
        if let Some(rect) = self.crop {
            rect.check_within(first.width(), first.height())?;
        }
        Ok(())
    }
}
