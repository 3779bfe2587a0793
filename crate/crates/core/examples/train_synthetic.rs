//! Trains the narrow network on synthetic slices for a few epochs and
//! writes checkpoints plus history to an output directory.
use std::path::PathBuf;

use vcaseg::data::{split, synth_generate, SplitSpec};
use vcaseg::model::{ModelConfig, VcaNet};
use vcaseg::trainer::{train, TrainConfig};

fn main() -> vcaseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vcaseg_train_example"));
    let samples = synth_generate(96, 0.8, 11)?;
    let (train_set, val_set) = split(samples, &SplitSpec::default())?;
    println!("{} train / {} validation slices", train_set.len(), val_set.len());

    let net = VcaNet::<f32>::build(ModelConfig::small().with_input_hw(56, 48).with_seed(3))?;
    let cfg = TrainConfig {
        epochs: 15,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let (_, history) = train(net, &train_set, &val_set, &cfg, Some(&out))?;
    for r in &history.records {
        let val = r.val.as_ref().map_or(String::new(), |v| {
            format!(" val soft-dice {:.4} dsc(B) {:?}", v.soft_dice, v.dsc_mode_b)
        });
        println!(
            "epoch {} loss {:.4} ({} steps, {:.1}s){val}",
            r.epoch, r.total, r.steps, r.wall_secs
        );
    }
    println!("run written to {}", out.display());
    Ok(())
}
