//! Evaluates a freshly initialized network on synthetic slices and writes
//! the metrics CSV, summary and confusion overlays.
use std::path::PathBuf;

use vcaseg::cli::{overlay_counts, render_overlay, save_rgb, summary_csv, write_csv};
use vcaseg::data::synth_generate;
use vcaseg::model::{ModelConfig, VcaNet};
use vcaseg::trainer::evaluate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vcaseg_report_example"));
    std::fs::create_dir_all(&out)?;
    let samples = synth_generate(16, 0.7, 5)?;
    let net = VcaNet::<f32>::build(ModelConfig::small().with_input_hw(56, 48))?;
    let report = evaluate(&net, &samples, 0.5, 8)?;
    write_csv(&report.rows, &out.join("metrics.csv"))?;
    print!("{}", summary_csv(&[&report.mode_a, &report.mode_b]));
    for (s, pred) in samples.iter().zip(&report.predictions).take(4) {
        let img = render_overlay(s.image(), pred, s.mask())?;
        let name = format!("{}_{:03}.png", s.volume_id(), s.slice_index());
        save_rgb(&img, &out.join(&name))?;
        let c = overlay_counts(&img);
        println!("{name}: tp {} fp {} fn {} tn {}", c.tp, c.fp, c.fn_, c.tn);
    }
    println!("wrote {}", out.display());
    Ok(())
}
