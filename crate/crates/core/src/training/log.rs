use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub seg_loss: f64,
    pub adv_loss: f64,
    pub disc_loss: f64,
}

pub fn write_loss_csv(rows: &[LossRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,seg_loss,adv_loss,disc_loss").expect("vec write");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iteration, r.seg_loss, r.adv_loss, r.disc_loss).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::invalid(format!("{}:{line}: malformed loss row", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1));
            Ok(LossRow {
                iteration: f[0].trim().parse().map_err(|_| bad(i + 1))?,
                seg_loss: num(f[1])?,
                adv_loss: num(f[2])?,
                disc_loss: num(f[3])?,
            })
        })
        .collect()
}

/// One line of `run_log.jsonl`. Round 0 is the stage-1 model and has no split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub round: usize,
    pub split_sizes: Option<(usize, usize)>,
    pub metrics: MetricReport,
    pub wallclock: f64,
}

impl RunLogEntry {
    pub fn append(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_all(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_metrics, ConfusionCounts};

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            LossRow { iteration: 0, seg_loss: 0.69, adv_loss: 0.7, disc_loss: 1.38 },
            LossRow { iteration: 1, seg_loss: 0.5, adv_loss: 0.0, disc_loss: 1.0e-3 },
        ];
        let p = dir.path().join("l.csv");
        write_loss_csv(&rows, &p).unwrap();
        assert_eq!(read_loss_csv(&p).unwrap(), rows);

        let log = dir.path().join("run_log.jsonl");
        let metrics = compute_metrics(ConfusionCounts { tp: 3, fp: 1, r#fn: 2, tn: 4 });
        for round in 0..2 {
            let split_sizes = (round > 0).then_some((7, 3));
            RunLogEntry { round, split_sizes, metrics, wallclock: 1.5 }.append(&log).unwrap();
        }
        let back = RunLogEntry::read_all(&log).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].split_sizes, Some((7, 3)));
        let line = std::fs::read_to_string(&log).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().nth(1).unwrap()).unwrap();
        for k in ["round", "split_sizes", "metrics", "wallclock"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
