use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{mean_rank, recall_at_k, Recall, Retrieval};
use crate::embedstore::{CoarseSet, VocabSet};
use crate::error::{Error, Result};
use crate::heads::HeadParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub mean_rank: f64,
    pub k: usize,
    pub n_items: usize,
}

/// Differences `self - baseline`, computed only over identical datasets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub benchmarks: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<Retrieval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub head: String,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_digest: String,
    pub config: serde_json::Value,
    /// Content digest of every evaluated dataset, keyed by benchmark name
    /// (`coarse` for the retrieval split).
    pub datasets: BTreeMap<String, String>,
    pub benchmarks: BTreeMap<String, BenchmarkScore>,
    /// Unweighted mean over the benchmarks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<Retrieval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Deltas>,
}

/// Datasets and options for one evaluation run.
pub struct EvalInputs<'a> {
    pub vocabs: &'a [VocabSet],
    pub coarse: Option<&'a CoarseSet>,
    pub normalize_inputs: bool,
    /// Resolved run configuration, echoed into the report.
    pub config: serde_json::Value,
}

pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Scores every vocabulary and the optional retrieval split.
pub fn evaluate(head: &HeadParams, inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    if inputs.vocabs.is_empty() && inputs.coarse.is_none() {
        return Err(Error::usage("nothing to evaluate"));
    }
    let mut datasets = BTreeMap::new();
    let mut benchmarks = BTreeMap::new();
    for vocab in inputs.vocabs {
        let name = vocab.dataset.benchmark.name().to_string();
        if datasets.insert(name.clone(), vocab.digest()).is_some() {
            return Err(Error::usage(format!("benchmark {name} given twice")));
        }
        let rank = if inputs.normalize_inputs {
            mean_rank(head, &vocab.normalized()?)?
        } else {
            mean_rank(head, vocab)?
        };
        benchmarks.insert(
            name,
            BenchmarkScore {
                mean_rank: rank.mean_rank,
                k: rank.k,
                n_items: rank.ranks.len(),
            },
        );
    }
    let retrieval = match inputs.coarse {
        Some(coarse) => {
            datasets.insert("coarse".to_string(), coarse.digest());
            Some(if inputs.normalize_inputs {
                recall_at_k(head, &coarse.normalized()?)?
            } else {
                recall_at_k(head, coarse)?
            })
        }
        None => None,
    };
    let mean_rank = (!benchmarks.is_empty())
        .then(|| benchmarks.values().map(|b| b.mean_rank).sum::<f64>() / benchmarks.len() as f64);
    Ok(EvalReport {
        head: head.kind().to_string(),
        config_digest: config_digest(&inputs.config),
        config: inputs.config.clone(),
        datasets,
        benchmarks,
        mean_rank,
        retrieval,
        deltas: None,
    })
}

fn delta(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d == 0.0 {
        0.0
    } else {
        d
    }
}

impl EvalReport {
    /// Computes deltas against `baseline`; both reports must cover the same datasets.
    pub fn deltas_against(&self, baseline: &EvalReport) -> Result<Deltas> {
        if self.datasets != baseline.datasets {
            let differing: Vec<&str> = self
                .datasets
                .keys()
                .chain(baseline.datasets.keys())
                .filter(|k| self.datasets.get(*k) != baseline.datasets.get(*k))
                .map(String::as_str)
                .collect();
            return Err(Error::ReportMismatch(format!(
                "baseline was evaluated on different data ({})",
                differing.join(", ")
            )));
        }
        let benchmarks = self
            .benchmarks
            .iter()
            .map(|(name, s)| (name.clone(), delta(s.mean_rank, baseline.benchmarks[name].mean_rank)))
            .collect();
        let mean_rank = self.mean_rank.zip(baseline.mean_rank).map(|(a, b)| delta(a, b));
        let retrieval = self.retrieval.zip(baseline.retrieval).map(|(a, b)| Retrieval {
            i2t: a.i2t.map2(&b.i2t, delta),
            t2i: a.t2i.map2(&b.t2i, delta),
        });
        Ok(Deltas {
            benchmarks,
            mean_rank,
            retrieval,
        })
    }

    pub fn with_baseline(mut self, baseline: &EvalReport) -> Result<Self> {
        self.deltas = Some(self.deltas_against(baseline)?);
        Ok(self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Plain-text table: retrieval in both directions and Mean Rank, with
    /// baseline deltas in parentheses when present, followed by the
    /// per-benchmark breakdown.
    pub fn render(&self) -> String {
        let d = self.deltas.as_ref();
        let cell = |value: Option<f64>, diff: Option<f64>| match (value, diff) {
            (None, _) => "-".to_string(),
            (Some(v), None) => format!("{v:.2}"),
            (Some(v), Some(dv)) => format!("{v:.2} ({dv:+.2})"),
        };
        let recall = |pick: fn(&Retrieval) -> Recall| -> Vec<String> {
            let values = self.retrieval.as_ref().map(|r| pick(r).values());
            let diffs = d.and_then(|d| d.retrieval.as_ref()).map(|r| pick(r).values());
            (0..3)
                .map(|k| cell(values.map(|v| v[k]), diffs.map(|v| v[k])))
                .collect()
        };
        let mut cells = vec![self.head.clone()];
        cells.extend(recall(|r| r.i2t));
        cells.extend(recall(|r| r.t2i));
        cells.push(cell(self.mean_rank, d.and_then(|d| d.mean_rank)));

        let header = [
            "Model", "I2T R@1", "I2T R@5", "I2T R@10", "T2I R@1", "T2I R@5", "T2I R@10", "Mean Rank",
        ];
        let widths: Vec<usize> = header.iter().zip(&cells).map(|(h, c)| h.len().max(c.len())).collect();
        let line = |row: &[String]| -> String {
            let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("| {} |\n", parts.join(" | "))
        };
        let mut out = String::new();
        out.push_str(&line(&header.map(String::from)));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        out.push_str(&line(&cells));

        if !self.benchmarks.is_empty() {
            out.push('\n');
            let name_w = self.benchmarks.keys().map(String::len).max().unwrap_or(0).max(9);
            let _ = writeln!(out, "{:<name_w$}  {:>3}  {:>6}  Mean Rank", "Benchmark", "K", "Items");
            for (name, s) in &self.benchmarks {
                let diff = d.and_then(|d| d.benchmarks.get(name).copied());
                let _ = writeln!(
                    out,
                    "{name:<name_w$}  {:>3}  {:>6}  {}",
                    s.k,
                    s.n_items,
                    cell(Some(s.mean_rank), diff)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mean: f64) -> EvalReport {
        let mut benchmarks = BTreeMap::new();
        benchmarks.insert(
            "hard".to_string(),
            BenchmarkScore {
                mean_rank: mean,
                k: 11,
                n_items: 100,
            },
        );
        let mut datasets = BTreeMap::new();
        datasets.insert("hard".to_string(), "abc".to_string());
        EvalReport {
            head: "linear-both".into(),
            config_digest: config_digest(&serde_json::json!({})),
            config: serde_json::json!({}),
            datasets,
            benchmarks,
            mean_rank: Some(mean),
            retrieval: Some(Retrieval {
                i2t: Recall {
                    r1: 50.0,
                    r5: 80.0,
                    r10: 90.0,
                },
                t2i: Recall {
                    r1: 40.0,
                    r5: 70.0,
                    r10: 85.0,
                },
            }),
            deltas: None,
        }
    }

    #[test]
    fn self_deltas_are_zero() {
        let r = report(2.5);
        let d = r.deltas_against(&r).unwrap();
        assert_eq!(d.mean_rank, Some(0.0));
        assert!(d.benchmarks.values().all(|&x| x == 0.0));
        assert!(d.retrieval.unwrap().i2t.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn negative_delta_in_parentheses() {
        let r = report(1.46).with_baseline(&report(3.78)).unwrap();
        let table = r.render();
        assert!(table.contains("1.46 (-2.32)"), "{table}");
    }

    #[test]
    fn missing_baseline_still_renders() {
        let table = report(2.0).render();
        assert!(table.contains("2.00") && !table.contains('('));
    }

    #[test]
    fn mismatched_data_refuses_deltas() {
        let mut other = report(2.0);
        other.datasets.insert("hard".into(), "different".into());
        let err = report(1.0).deltas_against(&other).unwrap_err();
        assert!(matches!(err, Error::ReportMismatch(_)));
    }

    #[test]
    fn json_round_trip() {
        let r = report(1.5).with_baseline(&report(2.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.write(&p).unwrap();
        assert_eq!(EvalReport::read(&p).unwrap(), r);
    }
}
