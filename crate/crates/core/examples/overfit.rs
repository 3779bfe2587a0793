//! Overfits four synthetic slices and runs the two negative controls.
//! Takes a couple of minutes in release mode.
use vcaseg::data::synth_generate;
use vcaseg::trainer::{overfit_smoke, OverfitConfig, OverfitControl};

fn main() -> vcaseg::Result<()> {
    let samples = synth_generate(4, 1.0, 7)?;
    for control in [
        OverfitControl::None,
        OverfitControl::ZeroLr,
        OverfitControl::RandomLabels,
    ] {
        let cfg = OverfitConfig {
            control,
            ..OverfitConfig::small()
        };
        let out = overfit_smoke(&samples, &cfg)?;
        let every = (out.curve.len() / 5).max(1);
        for p in out.curve.iter().step_by(every) {
            println!(
                "  {control:?} step {:>3} loss {:.4} soft-dice {:.4}",
                p.step, p.loss.total, p.soft_dice
            );
        }
        println!(
            "{control:?}: passed={} after {} steps (best {:.4}, eval-mode {:.4})",
            out.passed,
            out.steps,
            out.best_soft_dice(),
            out.final_eval_soft_dice
        );
    }
    Ok(())
}
