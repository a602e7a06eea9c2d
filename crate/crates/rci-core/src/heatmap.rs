//! Standalone SVG heatmaps of patch contribution shares.
//!
//! Hand-built SVG keeps the output byte-deterministic and diffable with no
//! plotting dependency. Cell lightness is linear in share between the
//! minimum and maximum share, darkest = largest.

use std::path::Path;

use crate::report::{write_atomic, ReportError};
use crate::spatial::PatchContribution;

const CELL: u32 = 96;
const MARGIN: u32 = 24;
const LEGEND_HEIGHT: u32 = 56;
const HUE: u32 = 213;
const LIGHT_MIN_SHARE: f64 = 93.0;
const LIGHT_MAX_SHARE: f64 = 36.0;

pub const ZERO_MASS_NOTE: &str = "no best-patch mass: every patch score is zero";

pub fn heatmap_svg(contribution: &PatchContribution) -> String {
    let n = contribution.n;
    let width = MARGIN * 2 + CELL * n;
    let height = MARGIN * 2 + CELL * n + LEGEND_HEIGHT;
    let shares = &contribution.shares;
    let min = shares.iter().copied().fold(f64::INFINITY, f64::min);
    let max = shares.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let lightness = |share: f64| -> f64 {
        if max <= min {
            return LIGHT_MIN_SHARE;
        }
        let t = (share - min) / (max - min);
        LIGHT_MIN_SHARE + t * (LIGHT_MAX_SHARE - LIGHT_MIN_SHARE)
    };

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <title>patch contribution shares, {n}x{n} grid over {} item(s)</title>\n",
        contribution.items_counted
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));

    for row in 0..n {
        for col in 0..n {
            let idx = (row * n + col) as usize;
            let share = shares[idx];
            let x = MARGIN + col * CELL;
            let y = MARGIN + row * CELL;
            let l = lightness(share);
            svg.push_str(&format!(
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"hsl({HUE}, 62%, {l:.1}%)\" stroke=\"#3c3c3c\" stroke-width=\"1\"/>\n"
            ));
            let text_fill = if l < 60.0 { "#f4f4f4" } else { "#1c1c1c" };
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
                 fill=\"{text_fill}\">{}</text>\n",
                x + 6,
                y + 16,
                idx + 1
            ));
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"15\" \
                 text-anchor=\"middle\" fill=\"{text_fill}\">{:.1}%</text>\n",
                x + CELL / 2,
                y + CELL / 2 + 10,
                share * 100.0
            ));
        }
    }

    let legend_y = MARGIN + CELL * n + 18;
    if contribution.zero_mass {
        svg.push_str(&format!(
            "  <text x=\"{MARGIN}\" y=\"{legend_y}\" font-family=\"monospace\" \
             font-size=\"13\" fill=\"#8a1f1f\">{ZERO_MASS_NOTE}</text>\n"
        ));
    } else {
        let swatch = 14u32;
        svg.push_str(&format!(
            "  <rect x=\"{MARGIN}\" y=\"{}\" width=\"{swatch}\" height=\"{swatch}\" \
             fill=\"hsl({HUE}, 62%, {LIGHT_MIN_SHARE:.1}%)\" stroke=\"#3c3c3c\"/>\n",
            legend_y - 11
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{legend_y}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"#1c1c1c\">min {:.1}%</text>\n",
            MARGIN + swatch + 6,
            min * 100.0
        ));
        let max_x = MARGIN + 120;
        svg.push_str(&format!(
            "  <rect x=\"{max_x}\" y=\"{}\" width=\"{swatch}\" height=\"{swatch}\" \
             fill=\"hsl({HUE}, 62%, {LIGHT_MAX_SHARE:.1}%)\" stroke=\"#3c3c3c\"/>\n",
            legend_y - 11
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{legend_y}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"#1c1c1c\">max {:.1}%</text>\n",
            max_x + swatch + 6,
            max * 100.0
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

pub fn write_heatmap(contribution: &PatchContribution, path: &Path) -> Result<(), ReportError> {
    write_atomic(path, heatmap_svg(contribution).as_bytes())
}
