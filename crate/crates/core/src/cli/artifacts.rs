//! CSV and JSON artifact writers. Every file starts with the run header line.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::lsea::FusionTrace;
use crate::training::ablation::AblationRow;
use crate::training::{EpochRecord, Metrics};

fn write(path: &Path, header: &str, body: &str) -> Result<()> {
    std::fs::write(path, format!("{header}\n{body}"))?;
    Ok(())
}

pub fn metrics_csv(path: &Path, header: &str, history: &[EpochRecord]) -> Result<()> {
    let mut body = String::from("epoch,loss,uar,war\n");
    for r in history {
        writeln!(body, "{},{:?},{:?},{:?}", r.epoch, r.loss, r.uar, r.war).unwrap();
    }
    write(path, header, &body)
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    history: &'a [EpochRecord],
    #[serde(rename = "final")]
    last: &'a Metrics,
}

/// A JSON object whose first line carries the header as a `"header"` field,
/// so the file stays valid JSON.
pub fn metrics_json(path: &Path, header: &str, history: &[EpochRecord], last: &Metrics) -> Result<()> {
    let rest = serde_json::to_string(&MetricsJson { history, last }).map_err(std::io::Error::other)?;
    let head = serde_json::to_string(header.trim_start_matches("# ")).map_err(std::io::Error::other)?;
    std::fs::write(path, format!("{{\"header\":{head},\n{}\n", &rest[1..]))?;
    Ok(())
}

pub fn confusion_csv(path: &Path, header: &str, metrics: &Metrics) -> Result<()> {
    let c = metrics.classes();
    let mut body = String::from("actual");
    for k in 0..c {
        write!(body, ",pred_{k}").unwrap();
    }
    body.push('\n');
    for (k, row) in metrics.confusion.iter().enumerate() {
        body.push_str(&k.to_string());
        for v in row {
            write!(body, ",{v}").unwrap();
        }
        body.push('\n');
    }
    write(path, header, &body)
}

pub fn ablation_csv(path: &Path, header: &str, rows: &[AblationRow]) -> Result<()> {
    let mut body = String::from("variant,uar,war\n");
    for r in rows {
        writeln!(body, "{},{:?},{:?}", r.variant, r.metrics.uar, r.metrics.war).unwrap();
    }
    write(path, header, &body)
}

/// Two blocks: pooling weights `clip_id,frame,w`, then semantic attention
/// `clip_id,head,class,alpha`.
pub fn trace_csv(path: &Path, header: &str, traces: &[(usize, FusionTrace)]) -> Result<()> {
    let mut body = String::from("clip_id,frame,w\n");
    for (id, t) in traces {
        for (f, w) in t.pool_weights.iter().enumerate() {
            writeln!(body, "{id},{f},{w:?}").unwrap();
        }
    }
    body.push_str("clip_id,head,class,alpha\n");
    for (id, t) in traces {
        for (h, alpha) in t.alphas.iter().enumerate() {
            for (c, a) in alpha.iter().enumerate() {
                writeln!(body, "{id},{h},{c},{a:?}").unwrap();
            }
        }
    }
    write(path, header, &body)
}

pub fn embed_csv(path: &Path, header: &str, rows: &[(usize, usize, f64, f64)]) -> Result<()> {
    let mut body = String::from("clip_id,label,x,y\n");
    for (id, label, x, y) in rows {
        writeln!(body, "{id},{label},{x:?},{y:?}").unwrap();
    }
    write(path, header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_stays_parseable_with_header_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let history = vec![EpochRecord { epoch: 1, loss: 0.5, uar: 0.75, war: 0.8 }];
        let m = Metrics::from_predictions(&[0, 1], &[0, 1], 2).unwrap();
        metrics_json(&path, "# duse config=abc seed=7", &history, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("config=abc seed=7"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["history"][0]["war"], 0.8);
        assert_eq!(v["final"]["uar"], 1.0);
    }

    #[test]
    fn csv_files_begin_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let m = Metrics::from_predictions(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        confusion_csv(&path, "# h", &m).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "# h\nactual,pred_0,pred_1\n0,1,1\n1,0,1\n");
    }
}
