//! The `vcaseg` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric abort (non-finite loss).

mod config;
mod report;

pub use config::ConfigFile;
pub use report::{
    classify_overlay_pixel, format_row, load_mask_png, overlay_counts, render_overlay, rows_csv, save_mask_png,
    save_rgb, summary_csv, write_csv, write_summary_csv, PixelClass, ROW_HEADER,
};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::data::{
    load_packed, pack_dataset, preprocess_image, preprocess_pair, read_manifest, read_nifti, split, synth_generate,
    NiftiHeader, PackWriter, PackedDataset, SliceSample, SplitLevel, SplitSpec, VolumeKind,
};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{aggregate, evaluate_pair, AggMode, Metric, MetricsRow, Summary};
use crate::model::{ModelConfig, VcaNet};
use crate::tensor::UpsampleKind;
use crate::trainer::{evaluate, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "vcaseg",
    version,
    about = "Stroke-lesion segmentation with a ventral-stream CNN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert NIfTI image/mask pairs listed in a manifest into a packed dataset.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic packed dataset.
    Synth(SynthArgs),
    /// Train a network on a packed dataset.
    Train(TrainArgs),
    /// Evaluate saved weights on a packed dataset.
    Eval(EvalArgs),
    /// Segment a NIfTI volume or packed dataset.
    Predict(PredictArgs),
    /// Metrics for a prediction/truth pair (PNG masks or packed datasets).
    Metrics(MetricsArgs),
    /// Metric tables and overlay images for packed predictions.
    Report(ReportArgs),
    /// Describe a NIfTI, packed dataset or weights file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Tab-separated image/mask path pairs, one per line.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    lesion_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    Slice,
    Volume,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    val_split: Option<f64>,
    #[arg(long, value_enum)]
    split_level: Option<LevelArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    include_empty_slices: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AggArg {
    #[value(name = "modeA")]
    ModeA,
    #[value(name = "modeB")]
    ModeB,
    Both,
}

impl AggArg {
    fn modes(self) -> Vec<AggMode> {
        match self {
            AggArg::ModeA => vec![AggMode::ExcludeUndefined],
            AggArg::ModeB => vec![AggMode::CountEmptyMatchAsOne],
            AggArg::Both => vec![AggMode::ExcludeUndefined, AggMode::CountEmptyMatchAsOne],
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    agg: AggArg,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Directory for metrics.csv, summary.csv and predictions.vcad.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    /// `.nii` / `.nii.gz` volume or a packed dataset.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Write per-slice rows here instead of printing them.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Packed dataset whose masks are predictions.
    #[arg(long)]
    pred: PathBuf,
    /// Packed dataset with ground-truth masks.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    agg: AggArg,
    /// Overlay images are written for at most this many slices.
    #[arg(long, default_value_t = 64)]
    max_overlays: usize,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Metrics(a) => metrics(a),
        Command::Report(a) => report(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn write_manifest(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    out.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let pairs = read_manifest(&a.manifest)?;
    if pairs.is_empty() {
        return Err(Error::invalid("preprocess", "manifest lists no volumes"));
    }
    let mut writer = PackWriter::create(&a.out)?;
    for p in &pairs {
        let img = read_nifti(&p.image, VolumeKind::Image)?;
        let mask = read_nifti(&p.mask, VolumeKind::Mask)?;
        let id = p.volume_id();
        let samples = preprocess_pair(&img, &mask, &id)?;
        log::info!("{id}: {} slices", samples.len());
        for s in &samples {
            writer.push(s)?;
        }
    }
    let count = writer.finish()?;
    write_manifest(
        &sidecar(&a.out),
        &[
            ("command".into(), "preprocess".into()),
            ("manifest".into(), a.manifest.display().to_string()),
            ("volumes".into(), pairs.len().to_string()),
            ("slices".into(), count.to_string()),
            ("normalize".into(), "percentile 0..99 per volume".into()),
            ("resize".into(), "224x192 bilinear image, nearest mask".into()),
        ],
    )?;
    println!(
        "wrote {count} slices from {} volumes to {}",
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let samples = synth_generate(a.n, a.lesion_prob, a.seed)?;
    pack_dataset(&samples, &a.out)?;
    write_manifest(
        &sidecar(&a.out),
        &[
            ("command".into(), "synth".into()),
            ("n".into(), a.n.to_string()),
            ("lesion_prob".into(), format!("{:?}", a.lesion_prob)),
            ("seed".into(), a.seed.to_string()),
        ],
    )?;
    let with_lesion = samples.iter().filter(|s| !s.mask().is_empty()).count();
    println!(
        "wrote {} slices ({with_lesion} with lesions) to {}",
        samples.len(),
        a.out.display()
    );
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "data",
    "val_split",
    "split_level",
    "epochs",
    "batch",
    "lr",
    "momentum",
    "weight_decay",
    "seed",
    "include_empty_slices",
    "out",
    "patience",
    "resume_epoch",
    "model",
    "input_h",
    "input_w",
    "c1",
    "c2",
    "c4",
    "t",
    "decoder",
    "upsample",
    "leaky_slope",
];

fn model_from_config(file: &ConfigFile, seed: u64) -> Result<ModelConfig> {
    let mut cfg = match file.raw("model").unwrap_or("default") {
        "default" => ModelConfig::default(),
        "small" => ModelConfig::small(),
        "reduced" => ModelConfig::reduced(),
        other => return Err(Error::Config(format!("unknown model preset {other:?}"))),
    };
    if let Some(h) = file.get("input_h")? {
        cfg.input_hw.0 = h;
    }
    if let Some(w) = file.get("input_w")? {
        cfg.input_hw.1 = w;
    }
    for (key, slot) in [
        ("c1", &mut cfg.channels.c1),
        ("c2", &mut cfg.channels.c2),
        ("c4", &mut cfg.channels.c4),
        ("t", &mut cfg.channels.t),
    ] {
        if let Some(v) = file.get(key)? {
            *slot = v;
        }
    }
    if let Some(d) = file.raw("decoder") {
        cfg.decoder = d
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad decoder width {s:?}")))
            })
            .collect::<Result<_>>()?;
    }
    match file.raw("upsample") {
        None => {}
        Some("nearest") => cfg.upsample = UpsampleKind::Nearest,
        Some("bilinear") => cfg.upsample = UpsampleKind::Bilinear,
        Some(other) => return Err(Error::Config(format!("unknown upsample kind {other:?}"))),
    }
    if let Some(s) = file.get("leaky_slope")? {
        cfg.leaky_slope = s;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(TRAIN_KEYS)?;
    let defaults = TrainConfig::default();
    let seed = a.seed.or(file.get("seed")?).unwrap_or(defaults.seed);
    let data: PathBuf = a
        .data
        .or(file.get("data")?)
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let out: PathBuf = a
        .out
        .or(file.get("out")?)
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    let val_split = a.val_split.or(file.get("val_split")?).unwrap_or(0.1);
    let level = match a.split_level {
        Some(LevelArg::Slice) => SplitLevel::Slice,
        Some(LevelArg::Volume) => SplitLevel::Volume,
        None => match file.raw("split_level").unwrap_or("slice") {
            "slice" => SplitLevel::Slice,
            "volume" => SplitLevel::Volume,
            other => return Err(Error::Config(format!("unknown split level {other:?}"))),
        },
    };
    let cfg = TrainConfig {
        lr: a.lr.or(file.get("lr")?).unwrap_or(defaults.lr),
        momentum: a.momentum.or(file.get("momentum")?).unwrap_or(defaults.momentum),
        weight_decay: a
            .weight_decay
            .or(file.get("weight_decay")?)
            .unwrap_or(defaults.weight_decay),
        batch_size: a.batch.or(file.get("batch")?).unwrap_or(defaults.batch_size),
        epochs: a.epochs.or(file.get("epochs")?).unwrap_or(defaults.epochs),
        patience: file.get("patience")?.unwrap_or(defaults.patience),
        seed,
        include_empty_slices: a.include_empty_slices
            || file
                .get("include_empty_slices")?
                .unwrap_or(defaults.include_empty_slices),
        ..defaults
    };
    cfg.validate()?;
    if !(0.0..1.0).contains(&val_split) {
        return Err(Error::Config(format!("val split {val_split} must lie in [0, 1)")));
    }
    let resume: Option<usize> = file.get("resume_epoch")?;
    let model = model_from_config(&file, seed)?;

    let samples = load_packed(&data)?;
    let (train_set, val_set) = if val_split > 0.0 {
        split(
            samples,
            &SplitSpec {
                val_fraction: val_split,
                level,
                seed,
            },
        )?
    } else {
        (samples, Vec::new())
    };
    let extra = vec![
        ("command".to_string(), "train".to_string()),
        ("data".into(), data.display().to_string()),
        ("val_split".into(), format!("{val_split:?}")),
        (
            "split_level".into(),
            match level {
                SplitLevel::Slice => "slice".into(),
                SplitLevel::Volume => "volume".into(),
            },
        ),
        ("train_slices".into(), train_set.len().to_string()),
        ("val_slices".into(), val_set.len().to_string()),
        ("resume_epoch".into(), resume.map(|e| e.to_string()).unwrap_or_default()),
    ];
    let mut trainer = match resume {
        Some(epoch) => {
            let t = Trainer::resume(&out, epoch, cfg)?;
            if let Some((field, ours, theirs)) = model.first_difference(t.net.config()) {
                return Err(Error::ConfigMismatch {
                    field,
                    expected: ours,
                    found: theirs,
                });
            }
            t
        }
        None => Trainer::new(VcaNet::build(model)?, cfg)?.with_output(&out)?,
    };
    trainer.write_manifest(&extra)?;
    let history = trainer.fit(&train_set, &val_set)?;
    if let Some(last) = history.records.last() {
        println!(
            "trained {} epochs; last total loss {:.6}{}",
            history.records.len(),
            last.total,
            last.val
                .as_ref()
                .map(|v| format!(", val soft-dice {:.4}", v.soft_dice))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn print_summary(s: &Summary) {
    let parts: Vec<String> = Metric::ALL
        .iter()
        .map(|&m| {
            let st = s.get(m);
            match st.mean {
                Some(v) => format!("{}={v:.6} (n={})", m.name(), st.n_used),
                None => format!("{}=undefined (n=0)", m.name()),
            }
        })
        .collect();
    println!("{}: {}", s.mode.label(), parts.join(" "));
}

fn predictions_as_samples(samples: &[SliceSample], preds: &[Mask]) -> Result<Vec<SliceSample>> {
    samples
        .iter()
        .zip(preds)
        .map(|(s, m)| SliceSample::new(s.volume_id(), s.slice_index(), s.image().to_vec(), m.clone()))
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::Config(format!("threshold {} outside [0, 1]", a.threshold)));
    }
    let net = VcaNet::<f32>::load(&a.weights)?;
    let samples = load_packed(&a.data)?;
    let report = evaluate(&net, &samples, a.threshold, 8)?;
    let summaries: Vec<&Summary> = a
        .agg
        .modes()
        .into_iter()
        .map(|m| match m {
            AggMode::ExcludeUndefined => &report.mode_a,
            AggMode::CountEmptyMatchAsOne => &report.mode_b,
        })
        .collect();
    for s in &summaries {
        print_summary(s);
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_csv(&report.rows, &dir.join("metrics.csv"))?;
        write_summary_csv(&summaries, &dir.join("summary.csv"))?;
        pack_dataset(
            &predictions_as_samples(&samples, &report.predictions)?,
            &dir.join("predictions.vcad"),
        )?;
        write_manifest(
            &dir.join("manifest.txt"),
            &[
                ("command".into(), "eval".into()),
                ("weights".into(), a.weights.display().to_string()),
                ("data".into(), a.data.display().to_string()),
                ("threshold".into(), format!("{:?}", a.threshold)),
                (
                    "agg".into(),
                    summaries.iter().map(|s| s.mode.label()).collect::<Vec<_>>().join(","),
                ),
            ],
        )?;
    }
    Ok(())
}

fn is_nifti(path: &Path) -> bool {
    let name = path.to_string_lossy();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn predict(a: PredictArgs) -> Result<()> {
    let net = VcaNet::<f32>::load(&a.weights)?;
    let samples = if is_nifti(&a.input) {
        let vol = read_nifti(&a.input, VolumeKind::Image)?;
        let name = a
            .input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        preprocess_image(&vol, name.trim_end_matches(".gz").trim_end_matches(".nii"))?
    } else {
        load_packed(&a.input)?
    };
    if samples.is_empty() {
        return Err(Error::invalid("predict", "input has no slices"));
    }
    let report = evaluate(&net, &samples, a.threshold, 8)?;
    create_dir(&a.out)?;
    let masks_dir = a.out.join("masks");
    create_dir(&masks_dir)?;
    for (s, m) in samples.iter().zip(&report.predictions) {
        save_mask_png(
            m,
            &masks_dir.join(format!("{}_{:04}.png", s.volume_id(), s.slice_index())),
        )?;
    }
    pack_dataset(
        &predictions_as_samples(&samples, &report.predictions)?,
        &a.out.join("predictions.vcad"),
    )?;
    write_manifest(
        &a.out.join("manifest.txt"),
        &[
            ("command".into(), "predict".into()),
            ("weights".into(), a.weights.display().to_string()),
            ("input".into(), a.input.display().to_string()),
            ("threshold".into(), format!("{:?}", a.threshold)),
        ],
    )?;
    let positive = report.predictions.iter().filter(|m| !m.is_empty()).count();
    println!(
        "predicted {} slices ({positive} with lesions) into {}",
        samples.len(),
        a.out.display()
    );
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Rows for two packed datasets matched entry by entry.
fn packed_rows(pred: &Path, truth: &Path) -> Result<(Vec<SliceSample>, Vec<SliceSample>, Vec<MetricsRow>)> {
    let p = PackedDataset::open(pred)?;
    let t = PackedDataset::open(truth)?;
    if p.len() != t.len() {
        return Err(Error::shape("metrics", "slice count", t.len(), p.len()));
    }
    let mut preds = Vec::with_capacity(p.len());
    let mut truths = Vec::with_capacity(t.len());
    let mut rows = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        if p.id(i) != t.id(i) {
            return Err(Error::invalid(
                "metrics",
                format!("entry {i}: prediction {:?} does not match truth {:?}", p.id(i), t.id(i)),
            ));
        }
        let ps = p.get(i)?;
        let ts = t.get(i)?;
        rows.push(evaluate_pair(ps.mask(), ts.mask(), ts.volume_id(), ts.slice_index())?);
        preds.push(ps);
        truths.push(ts);
    }
    Ok((preds, truths, rows))
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let rows = if is_png(&a.pred) && is_png(&a.truth) {
        let pred = load_mask_png(&a.pred)?;
        let truth = load_mask_png(&a.truth)?;
        let row = evaluate_pair(&pred, &truth, "", 0)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into());
        println!(
            "dsc={} iou={} hd={} sensitivity={} precision={} f1={} tp={} fp={} tn={} fn={}",
            fmt(row.dsc),
            fmt(row.iou),
            fmt(row.hd),
            fmt(row.sensitivity),
            fmt(row.precision),
            fmt(row.f1),
            row.counts.tp,
            row.counts.fp,
            row.counts.tn,
            row.counts.fn_
        );
        vec![row]
    } else if !is_png(&a.pred) && !is_png(&a.truth) {
        let (_, _, rows) = packed_rows(&a.pred, &a.truth)?;
        if a.out.is_none() {
            print!("{}", rows_csv(&rows));
        }
        rows
    } else {
        return Err(Error::Config(
            "--pred and --truth must both be PNG masks or both packed datasets".into(),
        ));
    };
    if let Some(out) = &a.out {
        write_csv(&rows, out)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let (preds, truths, rows) = packed_rows(&a.pred, &a.truth)?;
    if rows.is_empty() {
        return Err(Error::invalid("report", "no slices"));
    }
    create_dir(&a.out)?;
    write_csv(&rows, &a.out.join("metrics.csv"))?;
    let summaries: Vec<Summary> = a
        .agg
        .modes()
        .into_iter()
        .map(|m| aggregate(&rows, m))
        .collect::<Result<_>>()?;
    let refs: Vec<&Summary> = summaries.iter().collect();
    write_summary_csv(&refs, &a.out.join("summary.csv"))?;
    for s in &summaries {
        print_summary(s);
    }
    let overlay_dir = a.out.join("overlays");
    create_dir(&overlay_dir)?;
    for (p, t) in preds.iter().zip(&truths).take(a.max_overlays) {
        let img = render_overlay(t.image(), p.mask(), t.mask())?;
        save_rgb(
            &img,
            &overlay_dir.join(format!("{}_{:04}.png", t.volume_id(), t.slice_index())),
        )?;
    }
    write_manifest(
        &a.out.join("manifest.txt"),
        &[
            ("command".into(), "report".into()),
            ("pred".into(), a.pred.display().to_string()),
            ("truth".into(), a.truth.display().to_string()),
            (
                "agg".into(),
                refs.iter().map(|s| s.mode.label()).collect::<Vec<_>>().join(","),
            ),
            ("max_overlays".into(), a.max_overlays.to_string()),
        ],
    )?;
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let path = &a.file;
    if is_nifti(path) {
        let vol = read_nifti(path, VolumeKind::Image)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let header = if bytes.starts_with(&[0x1f, 0x8b]) {
            None
        } else {
            NiftiHeader::parse(&bytes).ok()
        };
        println!("NIfTI volume {}", path.display());
        println!("dims: {}x{}x{}", vol.dims.0, vol.dims.1, vol.dims.2);
        if let Some(h) = header {
            println!(
                "datatype: {:?}, little_endian: {}, scl_slope: {}, scl_inter: {}",
                h.datatype, h.little_endian, h.scl_slope, h.scl_inter
            );
        }
        let (lo, hi) = vol
            .voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        println!("range: [{lo}, {hi}]");
        return Ok(());
    }
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    }
    match &magic {
        b"VCAD" => {
            let ds = PackedDataset::open(path)?;
            let mut volumes: Vec<&str> = Vec::new();
            for i in 0..ds.len() {
                let (v, _) = ds.id(i);
                if !volumes.contains(&v) {
                    volumes.push(v);
                }
            }
            println!("packed dataset {}", path.display());
            println!("slices: {}, volumes: {}", ds.len(), volumes.len());
        }
        b"VCAW" => {
            let ckpt = Checkpoint::read(path)?;
            println!("checkpoint {}", path.display());
            for (k, v) in &ckpt.config {
                println!("{k}={v}");
            }
            let scalars: usize = ckpt.entries.iter().map(|e| e.shape().numel()).sum();
            println!("entries: {}, stored values: {scalars}", ckpt.entries.len());
        }
        _ => {
            return Err(Error::BadMagic {
                expected: "VCAD, VCAW or NIfTI".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            })
        }
    }
    Ok(())
}
