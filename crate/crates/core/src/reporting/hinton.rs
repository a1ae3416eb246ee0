use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ImportanceMatrix;

/// Space reserved for axis labels.
const MARGIN: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HintonSpec {
    /// Side of one grid cell in pixels.
    pub cell: f64,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
}

impl HintonSpec {
    /// Rows `z_0…`, columns `v_0…`.
    pub fn for_matrix(r: &ImportanceMatrix, cell: f64) -> Self {
        Self {
            cell,
            row_labels: (0..r.latents).map(|i| format!("z_{i}")).collect(),
            column_labels: (0..r.factors).map(|k| format!("v_{k}")).collect(),
        }
    }
}

/// Square side for importance `v`: `cell·√(v / max)`, so area tracks `v`.
pub fn square_side(v: f64, max: f64, cell: f64) -> f64 {
    if max > 0.0 {
        cell * (v / max).sqrt()
    } else {
        0.0
    }
}

/// SVG Hinton diagram: one centred square per entry, area proportional to
/// importance. An all-zero matrix gives an empty grid.
pub fn hinton_svg(r: &ImportanceMatrix, spec: &HintonSpec) -> Result<String> {
    if spec.row_labels.len() != r.latents || spec.column_labels.len() != r.factors {
        return Err(Error::Dimension("label counts do not match the matrix".into()));
    }
    if !(spec.cell > 0.0) {
        return Err(Error::Contract("cell size must be positive".into()));
    }
    let c = spec.cell;
    let width = MARGIN + c * r.factors as f64;
    let height = MARGIN + c * r.latents as f64;
    let max = r.max();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="#808080"/>"##,
        c * r.factors as f64,
        c * r.latents as f64
    );
    for (k, label) in spec.column_labels.iter().enumerate() {
        let x = MARGIN + c * (k as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{label}</text>"#,
            MARGIN - 10.0
        );
    }
    for (i, label) in spec.row_labels.iter().enumerate() {
        let y = MARGIN + c * (i as f64 + 0.5) + 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="end">{label}</text>"#,
            MARGIN - 6.0
        );
    }
    for i in 0..r.latents {
        for k in 0..r.factors {
            let side = square_side(r.get(i, k), max, c);
            if side <= 0.0 {
                continue;
            }
            let x = MARGIN + c * (k as f64 + 0.5) - side / 2.0;
            let y = MARGIN + c * (i as f64 + 0.5) - side / 2.0;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.6}" y="{y:.6}" width="{side:.6}" height="{side:.6}" fill="#ffffff"><title>z_{i} v_{k}: {:.6}</title></rect>"##,
                r.get(i, k)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_hinton(r: &ImportanceMatrix, spec: &HintonSpec, path: &Path) -> Result<()> {
    let svg = hinton_svg(r, spec)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
