//! Focal, log-dice and BCE terms for a few hand-made predictions.
use vcaseg::losses::{combined_loss, LossConfig};
use vcaseg::tensor::{Shape, Tensor};

fn main() -> vcaseg::Result<()> {
    let cfg = LossConfig::default();
    let shape = Shape::new(1, 1, 4, 4);
    let target = Tensor::from_fn(shape, |_, _, h, w| {
        if (1..3).contains(&h) && (1..3).contains(&w) {
            1.0
        } else {
            0.0
        }
    });
    let cases = [
        ("perfect", target.clone()),
        ("uniform 0.5", Tensor::full(shape, 0.5)),
        ("all background", Tensor::full(shape, 0.01)),
        ("inverted", target.map(|y| 1.0 - y)),
        ("soft", target.map(|y| 0.2 + 0.6 * y)),
    ];
    println!(
        "{:<15} {:>10} {:>10} {:>10} {:>10}",
        "prediction", "focal", "dice_log", "bce", "total"
    );
    for (name, p) in cases {
        let (b, grad) = combined_loss::<f64>(&p, &target, &cfg)?;
        println!(
            "{name:<15} {:>10.5} {:>10.5} {:>10.5} {:>10.5}  |grad| {:.3e}",
            b.focal,
            b.dice_log,
            b.bce,
            b.total,
            grad.data().iter().map(|g| g * g).sum::<f64>().sqrt()
        );
    }
    Ok(())
}
