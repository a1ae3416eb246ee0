//! Figures and tables: Hinton diagrams (SVG), traversal and reconstruction
//! grids (binary PGM), and run-comparison tables (CSV and text).

mod hinton;
mod images;
mod table;

pub use hinton::{hinton_svg, render_hinton, square_side, HintonSpec};
pub use images::{
    recon_panel, render_recon_panel, render_traversals, traversal_grid, GrayImage, PanelStats, TraversalSpec,
};
pub use table::{
    comparison_csv, comparison_rows, comparison_text, emit_comparison_table, runs_csv, ComparisonRow, MeanStd,
    RunRecord,
};
