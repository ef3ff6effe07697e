//! Text and image outputs: attention heatmaps (CSV, PGM) and pooled
//! Kaplan-Meier curves (CSV, SVG).

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::data::{FeatureBag, Scale};
use crate::error::{Error, Result};
use crate::model::{CrossFusion, Variant};
use crate::survival::KmCurve;
use crate::train::{fold_dir, read_json, read_risks, report_from_risks, EvalReport, RiskRow, RunManifest, CONFIG_FILE, RISKS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLayer {
    CabCoarse,
    CabFine,
    PtSource,
    PtFused,
}

impl MapLayer {
    pub const ALL: [MapLayer; 4] = [MapLayer::CabCoarse, MapLayer::CabFine, MapLayer::PtSource, MapLayer::PtFused];

    pub fn name(self) -> &'static str {
        match self {
            MapLayer::CabCoarse => "cab-coarse",
            MapLayer::CabFine => "cab-fine",
            MapLayer::PtSource => "pt-source",
            MapLayer::PtFused => "pt-fused",
        }
    }

    /// Key in [`CrossFusion::attention_maps`].
    pub fn key(self) -> &'static str {
        match self {
            MapLayer::CabCoarse => "cab_coarse",
            MapLayer::CabFine => "cab_fine",
            MapLayer::PtSource => "pt_source",
            MapLayer::PtFused => "pt_fused",
        }
    }

    /// Scale whose patches the map scores.
    pub fn scale(self, variant: Variant) -> Scale {
        match (self, variant) {
            (MapLayer::CabCoarse, _) => Scale::Coarse,
            (MapLayer::CabFine, _) | (_, Variant::NoFc) => Scale::Fine,
            _ => Scale::Source,
        }
    }
}

impl fmt::Display for MapLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MapLayer::ALL
            .into_iter()
            .find(|l| l.name() == s || l.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer {s:?} (expected cab-coarse, cab-fine, pt-source or pt-fused)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub x: i32,
    pub y: i32,
    /// Min-max normalized to `[0, 1]`.
    pub score: f64,
}

/// Normalized attention of `layer`, paired with the patch coordinates of its scale.
pub fn heatmap(model: &CrossFusion, bag: &FeatureBag, layer: MapLayer) -> Result<Vec<HeatmapCell>> {
    let variant = model.config().variant;
    let mut maps = model.attention_maps(bag)?;
    let scores = maps
        .remove(layer.key())
        .ok_or_else(|| Error::Config(format!("layer {layer} is not part of the {variant} variant")))?;
    let coords = &bag.scale(layer.scale(variant)).coords;
    if coords.len() != scores.len() {
        return Err(Error::Contract(format!("{layer} map has {} scores for {} patches", scores.len(), coords.len())));
    }
    Ok(coords.iter().zip(scores).map(|(&[x, y], score)| HeatmapCell { x, y, score }).collect())
}

pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut s = String::from("x,y,score\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{}", c.x, c.y, c.score);
    }
    s
}

/// Binary 8-bit PGM over the bounding box of the coordinates; cells without a
/// patch are black.
pub fn heatmap_pgm(cells: &[HeatmapCell]) -> Result<Vec<u8>> {
    let (Some(x0), Some(y0)) = (cells.iter().map(|c| c.x).min(), cells.iter().map(|c| c.y).min()) else {
        return Err(Error::Input("no cells to render".into()));
    };
    let x1 = cells.iter().map(|c| c.x).max().unwrap_or(x0);
    let y1 = cells.iter().map(|c| c.y).max().unwrap_or(y0);
    let w = (i64::from(x1) - i64::from(x0) + 1) as usize;
    let h = (i64::from(y1) - i64::from(y0) + 1) as usize;
    if w.saturating_mul(h) > 1 << 26 {
        return Err(Error::Input(format!("coordinate span {w}x{h} is too large to render")));
    }
    let mut pixels = vec![0u8; w * h];
    for c in cells {
        let i = (c.y - y0) as usize * w + (c.x - x0) as usize;
        pixels[i] = (c.score.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Validation risks of every fold in a run directory, fold by fold.
pub fn pooled_risks(run: &Path) -> Result<Vec<RiskRow>> {
    let manifest: RunManifest = read_json(&run.join(CONFIG_FILE))?;
    let mut rows = Vec::new();
    for k in 0..manifest.config.folds {
        rows.extend(read_risks(&fold_dir(run, k).join(RISKS_FILE))?);
    }
    Ok(rows)
}

/// Median split and log-rank over the pooled validation risks of a run.
pub fn pooled_report(run: &Path) -> Result<EvalReport> {
    report_from_risks(pooled_risks(run)?)
}

fn step_points(curve: Option<&KmCurve>) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 1.0)];
    if let Some(c) = curve {
        pts.extend(c.times.iter().copied().zip(c.survival.iter().copied()));
    }
    pts
}

/// Step-function table for the two risk groups; the first line carries the
/// log-rank p (`NaN` when undefined).
pub fn km_csv(report: &EvalReport) -> String {
    let p = report.logrank.map_or(f64::NAN, |l| l.p);
    let mut s = format!("# logrank_p={p}\ngroup,time,survival\n");
    for (name, curve) in [("high", report.high.as_ref()), ("low", report.low.as_ref())] {
        for (t, v) in step_points(curve) {
            let _ = writeln!(s, "{name},{t},{v}");
        }
    }
    s
}

/// Dependency-free SVG step plot: high risk in red, low risk in blue.
pub fn km_svg(report: &EvalReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let groups = [("high", "#d62728", report.high.as_ref()), ("low", "#1f77b4", report.low.as_ref())];
    let t_max = groups
        .iter()
        .flat_map(|(_, _, c)| c.map(|c| c.times.as_slice()).unwrap_or(&[]))
        .copied()
        .fold(0.0, f64::max)
        .max(1.0);
    let sx = |t: f64| M + t / t_max * (W - 2.0 * M);
    let sy = |s: f64| H - M - s * (H - 2.0 * M);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{:.2},{:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        M,
        M,
        H - M,
        W - M
    );
    for (name, color, curve) in groups {
        let pts = step_points(curve);
        let mut d = format!("M{:.2},{:.2}", sx(0.0), sy(1.0));
        let mut last = 1.0;
        for &(t, s) in &pts[1..] {
            let _ = write!(d, " H{:.2}", sx(t));
            if s != last {
                let _ = write!(d, " V{:.2}", sy(s));
                last = s;
            }
        }
        let _ = write!(d, " H{:.2}", sx(t_max));
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"><title>{name}</title></path>"#);
    }
    let p = report.logrank.map_or("NaN".to_string(), |l| format!("{:.3e}", l.p));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14">log-rank p = {p}</text>"#, W - M - 180.0, M - 15.0);
    let _ = writeln!(out, r#"<text x="{M}" y="{:.2}" font-family="sans-serif" font-size="12">time (0 to {t_max})</text>"#, H - 15.0);
    out.push_str("</svg>\n");
    out
}
