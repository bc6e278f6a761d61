//! Training log CSV, metrics JSON and ablation table CSV.

use std::fs;
use std::path::Path;

use super::{AblationReport, EpochRecord, Metrics};
use crate::error::{Error, Result};
use crate::model::AblationMode;

pub const LOG_HEADER: &str = "epoch,train_loss,val_f1,val_loss";
pub const ABLATION_HEADER: &str = "mode,f1,sensitivity,specificity,auc,tp,fp,tn,fn";

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in log {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_f1, r.val_loss));
    }
    out
}

pub fn parse_log_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>().join(",") != LOG_HEADER {
        return Err(Error::Validation(format!("training log must start with `{LOG_HEADER}`")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn metrics_json(metrics: &Metrics) -> Result<String> {
    let mut s = serde_json::to_string_pretty(metrics)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_metrics_json(text: &str) -> Result<Metrics> {
    Ok(serde_json::from_str(text)?)
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for (mode, m) in &report.rows {
        out.push_str(&format!(
            "{mode},{},{},{},{},{},{},{},{}\n",
            m.f1, m.sensitivity, m.specificity, m.auc, m.tp, m.fp, m.tn, m.fn_
        ));
    }
    out
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<(AblationMode, Metrics)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>().join(",") != ABLATION_HEADER {
        return Err(Error::Validation(format!("ablation table must start with `{ABLATION_HEADER}`")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::Validation(format!("bad number `{}`", &rec[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k]
                .parse()
                .map_err(|_| Error::Validation(format!("bad count `{}`", &rec[k])))
        };
        rows.push((
            rec[0].parse()?,
            Metrics {
                f1: num(1)?,
                sensitivity: num(2)?,
                specificity: num(3)?,
                auc: num(4)?,
                tp: int(5)?,
                fp: int(6)?,
                tn: int(7)?,
                fn_: int(8)?,
            },
        ));
    }
    Ok(rows)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let log = vec![
            EpochRecord {
                epoch: 1,
                train_loss: std::f64::consts::LN_2,
                val_f1: 0.5,
                val_loss: 0.7,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 1e-300,
                val_f1: 2.0 / 3.0,
                val_loss: 0.1,
            },
        ];
        let text = log_csv(&log);
        assert!(text.starts_with("epoch,train_loss,val_f1,val_loss\n1,"));
        assert_eq!(parse_log_csv(&text).unwrap(), log);
    }

    #[test]
    fn ablation_round_trip() {
        let m = Metrics::from_probabilities(&[0.8, 0.3, 0.6], &[1, 0, 0]).unwrap();
        let report = AblationReport {
            split: super::super::SplitIndices {
                train: vec![],
                val: vec![],
                test: vec![],
            },
            rows: AblationMode::ALL.iter().map(|&mode| (mode, m)).collect(),
        };
        let text = ablation_csv(&report);
        assert_eq!(parse_ablation_csv(&text).unwrap(), report.rows);
        assert!(text.lines().nth(2).unwrap().starts_with("no-corr,"));
    }

    #[test]
    fn metrics_round_trip() {
        let m = Metrics::from_probabilities(&[0.8, 0.3, 0.6], &[1, 0, 0]).unwrap();
        assert_eq!(parse_metrics_json(&metrics_json(&m).unwrap()).unwrap(), m);
    }
}
