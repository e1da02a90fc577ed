//! Aggregation of per-seed JSONL logs into a mean/standard-error table.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type Record = Map<String, Value>;

/// Fields that never enter the summary as values.
const SKIPPED: &[&str] = &["seed", "wall_s"];

pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| match serde_json::from_str::<Value>(l)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Config(format!(
                "{} line {}: not a JSON object",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

/// Rows grouped by `keys`, with `<field>_mean` and `<field>_se` for every
/// other numeric field. With `last_only`, each seed contributes only its last
/// record per group.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn key_string(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
    }
}

pub fn summarize(per_seed: &[Vec<Record>], keys: &[&str], last_only: bool) -> Summary {
    let keys: Vec<&str> = keys
        .iter()
        .copied()
        .filter(|k| {
            per_seed
                .iter()
                .flatten()
                .any(|r| r.get(*k).is_some_and(|v| !v.is_null()))
        })
        .collect();
    let mut fields: Vec<String> = Vec::new();
    for r in per_seed.iter().flatten() {
        for (k, v) in r {
            if v.is_number()
                && !keys.contains(&k.as_str())
                && !SKIPPED.contains(&k.as_str())
                && !fields.contains(k)
            {
                fields.push(k.clone());
            }
        }
    }
    let mut groups: Vec<(Vec<String>, Vec<Vec<f64>>, usize)> = Vec::new();
    for records in per_seed {
        let mut chosen: Vec<(Vec<String>, &Record)> = Vec::new();
        for r in records {
            let g: Vec<String> = keys.iter().map(|k| key_string(r.get(*k))).collect();
            match chosen.iter_mut().find(|(k, _)| *k == g) {
                Some(slot) if last_only => slot.1 = r,
                Some(_) => chosen.push((g, r)),
                None => chosen.push((g, r)),
            }
        }
        for (g, r) in chosen {
            let idx = match groups.iter().position(|(k, _, _)| *k == g) {
                Some(i) => i,
                None => {
                    groups.push((g, vec![Vec::new(); fields.len()], 0));
                    groups.len() - 1
                }
            };
            groups[idx].2 += 1;
            for (j, f) in fields.iter().enumerate() {
                if let Some(v) = r.get(f).and_then(Value::as_f64) {
                    groups[idx].1[j].push(v);
                }
            }
        }
    }
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    header.push("n_seeds".into());
    for f in &fields {
        header.push(format!("{f}_mean"));
        header.push(format!("{f}_se"));
    }
    let rows = groups
        .into_iter()
        .map(|(g, vals, n)| {
            let mut row = g;
            row.push(n.to_string());
            for v in vals {
                let (m, se) = mean_se(&v);
                row.push(fmt_num(m));
                row.push(fmt_num(se));
            }
            row
        })
        .collect();
    Summary { header, rows }
}

/// Mean and standard error of the mean; the error is NaN below two values.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of one column.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[j].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(v: Value) -> Record {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn mean_and_stderr_match_hand_values() {
        let a = vec![
            rec(json!({"step": 0, "loss": 1.0, "wall_s": 3.0})),
            rec(json!({"step": 10, "loss": 0.5})),
        ];
        let b = vec![
            rec(json!({"step": 0, "loss": 3.0, "wall_s": 9.0})),
            rec(json!({"step": 10, "loss": 0.5})),
        ];
        let s = summarize(&[a, b], &["step"], false);
        assert_eq!(s.header, vec!["step", "n_seeds", "loss_mean", "loss_se"]);
        assert_eq!(s.values("loss_mean").unwrap(), vec![2.0, 0.5]);
        // sd of {1, 3} is √2, so se = √2/√2 = 1.
        assert_eq!(s.values("loss_se").unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn last_only_keeps_final_record_per_group() {
        let a = vec![
            rec(json!({"width": 4, "step": 1, "err": 0.9})),
            rec(json!({"width": 4, "step": 2, "err": 0.1})),
            rec(json!({"width": 8, "step": 1, "err": 0.4})),
        ];
        let s = summarize(&[a], &["width", "base_lr"], true);
        assert_eq!(s.header[0], "width");
        assert_eq!(s.values("err_mean").unwrap(), vec![0.1, 0.4]);
        assert!(s.values("err_se").unwrap()[0].is_nan());
    }
}
