//! Non-learned competitors: center fill by class percentage and
//! complete-linkage clustering per RoI or per image.

mod hac;
mod statistical;

pub use hac::{hac_cluster, hac_img, hac_roi, HacConfig};
pub use statistical::{center_count, estimate_percentages, statistical_segment, ClassPercentages, Metric};
