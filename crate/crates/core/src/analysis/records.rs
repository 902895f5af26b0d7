//! Prediction-record files and operations over them.

use std::fs;
use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::finetune::PredictionRecord;

use super::agreement::check_aligned;

/// Read a JSON-lines prediction file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)?;
    parse_records(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}:{m}", path.display())),
        other => other,
    })
}

/// Parse JSON lines; errors name the 1-based line.
pub fn parse_records(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

pub fn render_records(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_atomic(path, render_records(records)?.as_bytes())
}

fn mean_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Per-id mean of the numeric fields of aligned prediction files.
///
/// `probs` and `uncertainty` are always averaged; `cls_probs` and
/// `cls_hidden` are averaged when every file carries them with equal shapes
/// and dropped otherwise.
pub fn ensemble_average(files: &[Vec<PredictionRecord>]) -> Result<Vec<PredictionRecord>> {
    check_aligned(files)?;
    if files.len() == 1 {
        return Ok(files[0].clone());
    }
    let m = files.len() as f64;
    let mut out = files[0].clone();
    for (i, rec) in out.iter_mut().enumerate() {
        let shape = |r: &PredictionRecord| r.cls_probs.iter().map(Vec::len).collect::<Vec<_>>();
        let hidden_shape = |r: &PredictionRecord| r.cls_hidden.as_ref().map(|h| h.iter().map(Vec::len).collect::<Vec<_>>());
        let keep_cls = files.iter().all(|f| shape(&f[i]) == shape(rec));
        let keep_hidden = rec.cls_hidden.is_some() && files.iter().all(|f| hidden_shape(&f[i]) == hidden_shape(rec));
        for f in &files[1..] {
            let other = &f[i];
            if other.gold != rec.gold {
                return Err(Error::Input(format!("record {} has different gold labels across files", rec.id)));
            }
            mean_into(&mut rec.probs, &other.probs);
            rec.uncertainty += other.uncertainty;
            if keep_cls {
                for (a, b) in rec.cls_probs.iter_mut().zip(&other.cls_probs) {
                    mean_into(a, b);
                }
            }
            if keep_hidden {
                let (a, b) = (rec.cls_hidden.as_mut().expect("checked"), other.cls_hidden.as_ref().expect("checked"));
                for (x, y) in a.iter_mut().zip(b) {
                    mean_into(x, y);
                }
            }
        }
        rec.probs.iter_mut().for_each(|p| *p /= m);
        rec.uncertainty /= m;
        if keep_cls {
            rec.cls_probs.iter_mut().flatten().for_each(|p| *p /= m);
        } else {
            rec.cls_probs.clear();
        }
        if keep_hidden {
            rec.cls_hidden.iter_mut().flatten().flatten().for_each(|p| *p /= m);
        } else {
            rec.cls_hidden = None;
        }
    }
    Ok(out)
}

/// Other records ordered by cosine similarity of their `k_index`-th CLS
/// state to the query's, most similar first (ties by ascending id).
pub fn nearest_neighbors(
    records: &[PredictionRecord],
    query_id: u64,
    k_index: usize,
    top_n: usize,
) -> Result<Vec<(u64, f64)>> {
    fn facet(r: &PredictionRecord, k_index: usize) -> Result<&[f64]> {
        let h = r
            .cls_hidden
            .as_ref()
            .ok_or_else(|| Error::Input(format!("record {} has no CLS states", r.id)))?;
        h.get(k_index).map(Vec::as_slice).ok_or(Error::Index {
            op: "nearest_neighbors",
            index: k_index,
            extent: h.len(),
        })
    }
    let norm = |v: &[f64], id: u64| -> Result<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < crate::numkernel::MIN_NORM {
            return Err(Error::Numeric(format!("record {id} has a zero CLS state")));
        }
        Ok(n)
    };
    let query = records
        .iter()
        .find(|r| r.id == query_id)
        .ok_or_else(|| Error::Input(format!("no record with id {query_id}")))?;
    let q = facet(query, k_index)?;
    let qn = norm(q, query_id)?;
    let mut scored = Vec::with_capacity(records.len());
    for r in records.iter().filter(|r| r.id != query_id) {
        let v = facet(r, k_index)?;
        if v.len() != q.len() {
            return Err(Error::Input(format!("record {} has a CLS state of a different width", r.id)));
        }
        let dot: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
        scored.push((r.id, dot / (qn * norm(v, r.id)?)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored)
}
