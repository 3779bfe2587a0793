//! Per-slice overlap metrics and Hausdorff distance, aggregated both ways.
use vcaseg::mask::Mask;
use vcaseg::metrics::{aggregate, evaluate_pair, AggMode, Metric};

fn disk(h: usize, w: usize, cy: f64, cx: f64, rad: f64) -> Mask {
    Mask::from_fn(h, w, |r, c| {
        (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= rad * rad
    })
}

fn main() -> vcaseg::Result<()> {
    let (h, w) = (32, 32);
    let empty = Mask::from_fn(h, w, |_, _| false);
    let pairs = [
        ("shifted disk", disk(h, w, 15.0, 15.0, 6.0), disk(h, w, 16.0, 18.0, 6.0)),
        ("exact", disk(h, w, 10.0, 20.0, 4.0), disk(h, w, 10.0, 20.0, 4.0)),
        ("missed lesion", empty.clone(), disk(h, w, 8.0, 8.0, 3.0)),
        ("both empty", empty.clone(), empty),
    ];
    let mut rows = Vec::new();
    for (i, (name, pred, truth)) in pairs.iter().enumerate() {
        let row = evaluate_pair(pred, truth, name, i)?;
        let show = |m: Metric| row.get(m).map_or("undef".to_string(), |v| format!("{v:.4}"));
        println!(
            "{name:<14} dsc {} iou {} hd {} sens {} prec {}",
            show(Metric::Dsc),
            show(Metric::Iou),
            show(Metric::Hd),
            show(Metric::Sensitivity),
            show(Metric::Precision)
        );
        rows.push(row);
    }
    for mode in [AggMode::ExcludeUndefined, AggMode::CountEmptyMatchAsOne] {
        let s = aggregate(&rows, mode)?;
        println!(
            "{}: mean dsc {:?} over {} slices, mean hd {:?}",
            mode.label(),
            s.mean(Metric::Dsc),
            s.get(Metric::Dsc).n_used,
            s.mean(Metric::Hd)
        );
    }
    Ok(())
}
