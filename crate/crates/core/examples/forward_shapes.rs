//! Builds the default network and prints the per-stage feature shapes for
//! one 224x192 slice.
use vcaseg::model::{param_count, ModelConfig, VcaNet};
use vcaseg::tensor::{BnMode, Shape, Tensor};

fn main() -> vcaseg::Result<()> {
    let cfg = ModelConfig::default();
    println!("parameters: {}", param_count(&cfg)?);
    let net = VcaNet::<f32>::build(cfg)?;
    let x = Tensor::from_fn(Shape::new(1, 1, 224, 192), |_, _, h, w| {
        ((h * 7 + w * 3) % 97) as f32 / 96.0
    });
    let pass = net.forward(&x, BnMode::Eval)?;
    let s = pass.stage_outputs();
    println!("V1 (f1)     {}", s.f1.shape());
    println!("V2 (f2)     {}", s.f2.shape());
    println!("V4 (f4)     {}", s.f4.shape());
    println!("IT          {}", s.bottleneck.shape());
    let p = pass.prob_map();
    let (lo, hi) = p
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("probability {} in [{lo:.4}, {hi:.4}]", p.shape());
    Ok(())
}
