use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::Metric;

use super::EvalReport;

/// Validation means recorded per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ValRecord {
    pub dsc_mode_a: Option<f64>,
    pub dsc_mode_b: Option<f64>,
    pub iou_mode_a: Option<f64>,
    pub iou_mode_b: Option<f64>,
    pub soft_dice: f64,
}

impl ValRecord {
    pub fn from_report(r: &EvalReport) -> Self {
        ValRecord {
            dsc_mode_a: r.mode_a.mean(Metric::Dsc),
            dsc_mode_b: r.mode_b.mean(Metric::Dsc),
            iou_mode_a: r.mode_a.mean(Metric::Iou),
            iou_mode_b: r.mode_b.mean(Metric::Iou),
            soft_dice: r.soft_dice,
        }
    }
}

/// Mean training loss terms of one epoch plus validation results.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub focal: f64,
    pub dice_log: f64,
    pub bce: f64,
    pub total: f64,
    pub val: Option<ValRecord>,
    pub wall_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl EpochRecord {
    /// Everything except wall time and checkpoint location.
    pub fn same_numbers(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.steps == other.steps
            && self.focal.to_bits() == other.focal.to_bits()
            && self.dice_log.to_bits() == other.dice_log.to_bits()
            && self.bce.to_bits() == other.bce.to_bits()
            && self.total.to_bits() == other.total.to_bits()
            && self.val == other.val
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

const HEADER: &str = "epoch,steps,focal,dice_log,bce,total,val_dsc_modeA,val_dsc_modeB,val_iou_modeA,val_iou_modeB,val_soft_dice,wall_secs,checkpoint";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Reals are written with round-trip precision so a resumed run can reload
/// its history exactly.
pub fn write_history(path: &Path, history: &RunHistory) -> Result<()> {
    let mut text = String::from(HEADER);
    text.push('\n');
    for r in &history.records {
        let v = r.val.as_ref();
        let cols = [
            r.epoch.to_string(),
            r.steps.to_string(),
            r.focal.to_string(),
            r.dice_log.to_string(),
            r.bce.to_string(),
            r.total.to_string(),
            opt(v.and_then(|v| v.dsc_mode_a)),
            opt(v.and_then(|v| v.dsc_mode_b)),
            opt(v.and_then(|v| v.iou_mode_a)),
            opt(v.and_then(|v| v.iou_mode_b)),
            opt(v.map(|v| v.soft_dice)),
            format!("{:.3}", r.wall_secs),
            r.checkpoint
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        ];
        text.push_str(&cols.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<RunHistory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Malformed {
            what: "history",
            msg: format!("{}: unexpected header", path.display()),
        });
    }
    let bad = |line: usize, msg: &str| Error::Malformed {
        what: "history",
        msg: format!("{}:{}: {msg}", path.display(), line + 2),
    };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 13 {
            return Err(bad(i, "expected 13 columns"));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|_| bad(i, &format!("bad number {c:?}")));
        let opt_num = |c: &str| if c.is_empty() { Ok(None) } else { num(c).map(Some) };
        let int = |c: &str| c.parse::<usize>().map_err(|_| bad(i, &format!("bad integer {c:?}")));
        let val = if cols[10].is_empty() {
            None
        } else {
            Some(ValRecord {
                dsc_mode_a: opt_num(cols[6])?,
                dsc_mode_b: opt_num(cols[7])?,
                iou_mode_a: opt_num(cols[8])?,
                iou_mode_b: opt_num(cols[9])?,
                soft_dice: num(cols[10])?,
            })
        };
        records.push(EpochRecord {
            epoch: int(cols[0])?,
            steps: int(cols[1])?,
            focal: num(cols[2])?,
            dice_log: num(cols[3])?,
            bce: num(cols[4])?,
            total: num(cols[5])?,
            val,
            wall_secs: num(cols[11])?,
            checkpoint: (!cols[12].is_empty()).then(|| dir.join(cols[12])),
        });
    }
    Ok(RunHistory { records })
}
