//! CSV tables, mask PNGs and confusion overlays.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{ConfusionCounts, Metric, MetricsRow, Summary};

pub const ROW_HEADER: &str = "volume_id,slice_index,dsc,iou,hd,sensitivity,precision,f1,tp,fp,tn,fn";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV line (no trailing newline); undefined values are empty fields.
pub fn format_row(r: &MetricsRow) -> String {
    let c = r.counts;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.volume_id,
        r.slice_index,
        fmt_opt(r.dsc),
        fmt_opt(r.iou),
        fmt_opt(r.hd),
        fmt_opt(r.sensitivity),
        fmt_opt(r.precision),
        fmt_opt(r.f1),
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    )
}

pub fn rows_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(ROW_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.iter().any(|r| r.volume_id.contains([',', '\n', '"'])) {
        return Err(Error::invalid(
            "write_csv",
            "volume ids may not contain commas, quotes or newlines",
        ));
    }
    fs::write(path, rows_csv(rows)).map_err(|e| Error::io(path, e))
}

/// `mode,dsc,iou,hd,sensitivity,precision,f1` followed by `n_<metric>` counts.
pub fn summary_csv(summaries: &[&Summary]) -> String {
    let mut header = vec!["mode".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    header.extend(Metric::ALL.iter().map(|m| format!("n_{}", m.name())));
    header.push("n_rows".into());
    let mut out = header.join(",");
    out.push('\n');
    for s in summaries {
        let mut cols = vec![s.mode.label().to_string()];
        cols.extend(Metric::ALL.iter().map(|&m| fmt_opt(s.mean(m))));
        cols.extend(Metric::ALL.iter().map(|&m| s.get(m).n_used.to_string()));
        cols.push(s.n_rows.to_string());
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

pub fn write_summary_csv(summaries: &[&Summary], path: &Path) -> Result<()> {
    fs::write(path, summary_csv(summaries)).map_err(|e| Error::io(path, e))
}

/// Pixel class of an overlay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

fn gray(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale base from `image` (values in `[0, 1]`) with TP tinted green,
/// FP red and FN blue. A tinted pixel keeps half the base intensity in every
/// channel and adds 128 to its class channel, so the class can be read
/// back from any pixel.
pub fn render_overlay(image: &[f32], pred: &Mask, truth: &Mask) -> Result<RgbImage> {
    let (h, w) = (truth.height(), truth.width());
    if (pred.height(), pred.width()) != (h, w) {
        return Err(Error::shape(
            "render_overlay",
            "mask dims",
            h * w,
            pred.height() * pred.width(),
        ));
    }
    if image.len() != h * w {
        return Err(Error::shape("render_overlay", "image pixels", h * w, image.len()));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let g = gray(image[r * w + c]);
            let half = g / 2;
            let px = match (pred.get(r, c), truth.get(r, c)) {
                (true, true) => [half, half + 128, half],
                (true, false) => [half + 128, half, half],
                (false, true) => [half, half, half + 128],
                (false, false) => [g, g, g],
            };
            out.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    Ok(out)
}

pub fn classify_overlay_pixel(px: &Rgb<u8>) -> PixelClass {
    let [r, g, b] = px.0;
    if r == g && g == b {
        PixelClass::TrueNegative
    } else if g > r && g > b {
        PixelClass::TruePositive
    } else if r > g && r > b {
        PixelClass::FalsePositive
    } else {
        PixelClass::FalseNegative
    }
}

/// Counts decoded from an overlay image.
pub fn overlay_counts(img: &RgbImage) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for px in img.pixels() {
        match classify_overlay_pixel(px) {
            PixelClass::TruePositive => c.tp += 1,
            PixelClass::FalsePositive => c.fp += 1,
            PixelClass::FalseNegative => c.fn_ += 1,
            PixelClass::TrueNegative => c.tn += 1,
        }
    }
    c
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a mask as an 8-bit grayscale PNG (0 / 255).
pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let mut img = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            img.put_pixel(c as u32, r as u32, Luma([if mask.get(r, c) { 255 } else { 0 }]));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Any nonzero luminance is foreground.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] != 0
    }))
}
