use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::run::METRICS_COLUMNS;
use crate::diagnostics::{epochs_to_threshold, ConvergenceReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct EpochRow {
    epoch: usize,
    train_acc: Option<f64>,
    eval_acc: Option<f64>,
    grad_variance: Option<f64>,
    forward: u64,
    backward: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub alpha: f64,
    pub runs: usize,
    pub failed: usize,
    /// Lower median over runs; `None` when the median run never got there.
    pub median_epochs: Option<usize>,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub forward_evals: f64,
    pub backward_passes: f64,
    /// Mean gradient variance over the second half of the epochs.
    pub grad_variance: Option<f64>,
    pub convergence: Vec<ConvergenceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub methods: Vec<MethodSummary>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "method,alpha,runs,failed,epochs_to_{},final_acc_mean,final_acc_std,forward_evals,backward_passes,grad_variance_final_half\n",
            self.threshold
        );
        for m in &self.methods {
            let ett = m
                .median_epochs
                .map_or("\u{2014}".to_string(), |e| e.to_string());
            let var = m
                .grad_variance
                .map_or("\u{2014}".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{:.0},{:.0},{}",
                m.method,
                m.alpha,
                m.runs,
                m.failed,
                ett,
                m.final_acc_mean,
                m.final_acc_std,
                m.forward_evals,
                m.backward_passes,
                var
            );
        }
        out
    }
}

fn schema(column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        column: column.to_string(),
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(cols: &[&str], idx: usize) -> Result<Option<T>> {
    let raw = cols[idx];
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| schema(METRICS_COLUMNS[idx], format!("cannot parse `{raw}`")))
}

fn required<T: std::str::FromStr>(cols: &[&str], idx: usize) -> Result<T> {
    field(cols, idx)?.ok_or_else(|| schema(METRICS_COLUMNS[idx], "missing value"))
}

type RunKey = (String, u64);
type RunRows = Option<Vec<EpochRow>>;

struct ParsedFile {
    alpha: f64,
    threshold: Option<f64>,
    runs: BTreeMap<RunKey, RunRows>,
    order: Vec<String>,
}

fn parse_metrics(text: &str) -> Result<ParsedFile> {
    let mut alpha = None;
    let mut threshold = None;
    let mut header_seen = false;
    let mut runs: BTreeMap<RunKey, RunRows> = BTreeMap::new();
    let mut order = Vec::new();
    for line in text.lines() {
        if let Some(echo) = line.strip_prefix('#') {
            if let Some((k, v)) = echo.trim().split_once('=') {
                match k {
                    "alpha" => alpha = v.parse().ok(),
                    "acc_threshold" => threshold = v.parse().ok(),
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if !header_seen {
            for (i, want) in METRICS_COLUMNS.iter().enumerate() {
                match cols.get(i) {
                    Some(got) if got.trim() == *want => {}
                    Some(got) => {
                        return Err(schema(want, format!("header has `{got}` in its place")))
                    }
                    None => return Err(schema(want, "missing from header")),
                }
            }
            if cols.len() > METRICS_COLUMNS.len() {
                return Err(schema(
                    cols[METRICS_COLUMNS.len()],
                    "unexpected extra column",
                ));
            }
            header_seen = true;
            continue;
        }
        if cols.len() != METRICS_COLUMNS.len() {
            return Err(schema(
                METRICS_COLUMNS[cols.len().min(METRICS_COLUMNS.len() - 1)],
                format!(
                    "row has {} fields, expected {}",
                    cols.len(),
                    METRICS_COLUMNS.len()
                ),
            ));
        }
        let variant = cols[0].to_string();
        if variant.is_empty() {
            return Err(schema("variant", "missing value"));
        }
        let seed: u64 = required(&cols, 1)?;
        if !order.contains(&variant) {
            order.push(variant.clone());
        }
        let key = (variant, seed);
        match cols[2] {
            "failed" => {
                runs.insert(key, None);
            }
            "ok" => {
                let row = EpochRow {
                    epoch: required(&cols, 3)?,
                    train_acc: field(&cols, 6)?,
                    eval_acc: field(&cols, 7)?,
                    grad_variance: field(&cols, 8)?,
                    forward: required(&cols, 9)?,
                    backward: required(&cols, 10)?,
                };
                if let Some(rows) = runs.entry(key).or_insert_with(|| Some(Vec::new())) {
                    rows.push(row);
                }
            }
            other => return Err(schema("status", format!("unknown status `{other}`"))),
        }
    }
    if !header_seen {
        return Err(schema("variant", "no header row"));
    }
    let alpha = alpha.ok_or_else(|| schema("alpha", "config echo lacks alpha"))?;
    Ok(ParsedFile {
        alpha,
        threshold,
        runs,
        order,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn summarize(method: &str, alpha: f64, threshold: f64, runs: &[(&u64, &RunRows)]) -> MethodSummary {
    let mut epochs = Vec::new();
    let mut finals = Vec::new();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut vars = Vec::new();
    let mut convergence = Vec::new();
    let mut failed = 0;
    for (_, rows) in runs {
        let Some(rows) = rows else {
            failed += 1;
            continue;
        };
        let mut rows = rows.clone();
        rows.sort_by_key(|r| r.epoch);
        let accs: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.eval_acc.or(r.train_acc))
            .collect();
        let reached = epochs_to_threshold(&accs, threshold);
        convergence.push(ConvergenceReport {
            method: method.to_string(),
            alpha,
            threshold,
            epoch: reached,
        });
        epochs.push(reached);
        if let Some(a) = accs.last() {
            finals.push(*a);
        }
        if let Some(last) = rows.last() {
            fwd.push(last.forward as f64);
            bwd.push(last.backward as f64);
        }
        let half = rows.len() / 2;
        let tail: Vec<f64> = rows[half..]
            .iter()
            .filter_map(|r| r.grad_variance)
            .collect();
        if !tail.is_empty() {
            vars.push(mean(&tail));
        }
    }
    // Runs that never reach the threshold sort last.
    epochs.sort_by_key(|e| e.unwrap_or(usize::MAX));
    let median_epochs = if epochs.is_empty() {
        None
    } else {
        epochs[(epochs.len() - 1) / 2]
    };
    MethodSummary {
        method: method.to_string(),
        alpha,
        runs: runs.len(),
        failed,
        median_epochs,
        final_acc_mean: mean(&finals),
        final_acc_std: sample_std(&finals),
        forward_evals: mean(&fwd),
        backward_passes: mean(&bwd),
        grad_variance: if vars.is_empty() {
            None
        } else {
            Some(mean(&vars))
        },
        convergence,
    }
}

/// Aggregates metrics texts per (optimizer, alpha). The accuracy threshold
/// comes from `threshold` or else from the first file's config echo.
pub fn compare_texts(texts: &[String], threshold: Option<f64>) -> Result<Comparison> {
    let parsed: Vec<ParsedFile> = texts
        .iter()
        .map(|t| parse_metrics(t))
        .collect::<Result<_>>()?;
    let threshold = threshold
        .or_else(|| parsed.iter().find_map(|p| p.threshold))
        .unwrap_or(0.9);
    let mut groups: Vec<(RunKey, Vec<(u64, RunRows)>)> = Vec::new();
    for p in &parsed {
        for method in &p.order {
            let key = (method.clone(), p.alpha.to_bits());
            let idx = match groups.iter().position(|g| g.0 == key) {
                Some(i) => i,
                None => {
                    groups.push((key, Vec::new()));
                    groups.len() - 1
                }
            };
            for ((m, seed), rows) in &p.runs {
                if m == method {
                    groups[idx].1.push((*seed, rows.clone()));
                }
            }
        }
    }
    let methods = groups
        .iter()
        .map(|((method, alpha_bits), runs)| {
            let refs: Vec<(&u64, &RunRows)> = runs.iter().map(|(s, r)| (s, r)).collect();
            summarize(method, f64::from_bits(*alpha_bits), threshold, &refs)
        })
        .collect();
    Ok(Comparison { threshold, methods })
}

pub fn compare_runs<P: AsRef<Path>>(paths: &[P], threshold: Option<f64>) -> Result<Comparison> {
    let texts = paths
        .iter()
        .map(std::fs::read_to_string)
        .collect::<std::io::Result<Vec<_>>>()?;
    compare_texts(&texts, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        format!(
            "# alpha=0.5\n# acc_threshold=0.8\n{}\n",
            METRICS_COLUMNS.join(",")
        )
    }

    #[test]
    fn summary_of_hand_written_metrics() {
        let text = header()
            + "sgd,0,ok,1,10,0.5,0.6,0.7,1.0,10,10,0.5,0\n\
               sgd,0,ok,2,20,0.4,0.8,0.85,3.0,20,20,0.5,0\n\
               sgd,1,ok,1,10,0.5,0.6,0.5,2.0,10,10,0.5,0\n\
               sgd,1,ok,2,20,0.4,0.8,0.75,5.0,20,20,0.5,0\n\
               sgd,2,failed,,,,,,,,,,\n";
        let c = compare_texts(&[text], None).unwrap();
        assert_eq!(c.threshold, 0.8);
        let m = &c.methods[0];
        assert_eq!((m.runs, m.failed), (3, 1));
        // epochs: seed0 -> 2, seed1 -> never; lower median of [2, never] is 2
        assert_eq!(m.median_epochs, Some(2));
        assert!((m.final_acc_mean - 0.8).abs() < 1e-12);
        assert!((m.final_acc_std - (0.005f64).sqrt()).abs() < 1e-12);
        assert_eq!(m.forward_evals, 20.0);
        assert_eq!(m.grad_variance, Some(4.0));
        assert!(c.to_table().contains("sgd,0.5,3,1,2,0.8000"));
    }

    #[test]
    fn never_reached_prints_a_dash() {
        let text = header() + "sam,0,ok,1,10,0.5,0.6,0.1,,20,20,0.5,0\n";
        let c = compare_texts(&[text], None).unwrap();
        assert_eq!(c.methods[0].median_epochs, None);
        assert!(c.to_table().contains(",\u{2014},"));
    }

    #[test]
    fn schema_errors_name_the_column() {
        let bad = "# alpha=0.5\nvariant,seed,state\n".to_string();
        match compare_texts(&[bad], None).unwrap_err() {
            Error::Schema { column, .. } => assert_eq!(column, "status"),
            e => panic!("{e:?}"),
        }
        let bad = header() + "sgd,0,ok,x,10,0.5,0.6,0.7,1.0,10,10,0.5,0\n";
        match compare_texts(&[bad], None).unwrap_err() {
            Error::Schema { column, .. } => assert_eq!(column, "epoch"),
            e => panic!("{e:?}"),
        }
    }
}
