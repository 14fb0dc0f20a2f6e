//! Static SVG scatter plots of 2-D embeddings, colored by class.

use std::fmt::Write as _;

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;

/// Fixed high-contrast palette, assigned to class indices in roster order.
pub const PALETTE: [&str; 7] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6",
];

const PLOT_SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;
const LEGEND_WIDTH: f64 = 170.0;
const POINT_RADIUS: f64 = 3.0;

/// Render one circle per node colored by class, axes auto-scaled with a 5%
/// margin, and a legend mapping colors to class names. Returns a standalone
/// SVG document.
pub fn render_scatter_svg(
    embedding: &DenseMatrix,
    labels: &[usize],
    class_names: &[String],
) -> Result<String> {
    if embedding.cols() != 2 {
        return Err(GraphDrError::InvalidArgument {
            context: "render_scatter_svg",
            message: format!("embedding must have 2 columns, got {}", embedding.cols()),
        });
    }
    if labels.len() != embedding.rows() {
        return Err(GraphDrError::ShapeMismatch {
            op: "render_scatter_svg",
            left: format!("{} rows", embedding.rows()),
            right: format!("{} labels", labels.len()),
        });
    }
    if class_names.len() > PALETTE.len() {
        return Err(GraphDrError::InvalidArgument {
            context: "render_scatter_svg",
            message: format!(
                "{} classes exceed the {}-color palette",
                class_names.len(),
                PALETTE.len()
            ),
        });
    }
    for &l in labels {
        if l >= class_names.len() {
            return Err(GraphDrError::LabelOutOfRange {
                label: l,
                num_classes: class_names.len(),
            });
        }
    }

    let n = embedding.rows();
    let width = PLOT_SIZE + 2.0 * MARGIN + LEGEND_WIDTH;
    let height = PLOT_SIZE + 2.0 * MARGIN;

    // data bounds with 5% margin; degenerate extents fall back to unit span
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        min_x = min_x.min(embedding.get(i, 0));
        max_x = max_x.max(embedding.get(i, 0));
        min_y = min_y.min(embedding.get(i, 1));
        max_y = max_y.max(embedding.get(i, 1));
    }
    if n == 0 {
        (min_x, max_x, min_y, max_y) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).max(1e-12);
        *lo -= 0.05 * span;
        *hi += 0.05 * span;
    };
    pad(&mut min_x, &mut max_x);
    pad(&mut min_y, &mut max_y);

    let sx = PLOT_SIZE / (max_x - min_x);
    let sy = PLOT_SIZE / (max_y - min_y);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN + (x - min_x) * sx,
            // SVG y grows downward
            MARGIN + PLOT_SIZE - (y - min_y) * sy,
        )
    };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .expect("string write");
    writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#)
        .expect("string write");
    writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT_SIZE}" height="{PLOT_SIZE}" fill="none" stroke="#cccccc"/>"##
    )
    .expect("string write");

    for i in 0..n {
        let (cx, cy) = to_px(embedding.get(i, 0), embedding.get(i, 1));
        writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{POINT_RADIUS}" fill="{}" fill-opacity="0.75"/>"#,
            PALETTE[labels[i]]
        )
        .expect("string write");
    }

    // legend block to the right of the plot
    let legend_x = 2.0 * MARGIN + PLOT_SIZE;
    for (c, name) in class_names.iter().enumerate() {
        let y = MARGIN + 20.0 * c as f64;
        writeln!(
            svg,
            r#"<rect x="{legend_x}" y="{y}" width="14" height="14" fill="{}"/>"#,
            PALETTE[c]
        )
        .expect("string write");
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13">{}</text>"#,
            legend_x + 20.0,
            y + 12.0,
            xml_escape(name)
        )
        .expect("string write");
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
