use crate::geom::Camera;
use crate::grid::{DepthMap, LabelMap, RgbImage};

/// One posed RGB-D observation with its part-label mask.
///
/// Label 0 is background (or an unlabeled pixel); depth is 0 where nothing
/// was observed.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub view: usize,
    pub state: u8,
    pub camera: Camera,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub labels: LabelMap,
}

impl Frame {
    /// Number of distinct non-zero labels.
    pub fn n_labels(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.labels.data {
            if *l != 0 {
                seen.insert(*l);
            }
        }
        seen.len()
    }
}
