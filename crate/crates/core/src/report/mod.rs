//! Population-relative cluster profiles, radar and scree charts, and the run summary.

mod profiles;
mod radar;
mod scree;
mod summary;

pub use profiles::{cluster_profiles, AxisValue, RadarProfile};
pub use radar::{profile_vertices, render_radar, RadarLayout, Vertex};
pub use scree::render_scree;
pub use summary::{
    emit_summary, CategoryInput, CategoryReport, CleaningStats, RunReport, RunSettings,
    SweepSummary, SweepSummaryRow,
};
