//! Scoring similarity-based lineage construction against proxy-based lineages.
//!
//! For every ground-truth contract the similarity index is asked for
//! neighbours at each threshold. Neighbours with a different creator are
//! discarded, and in the open-source scenario so are closed-source ones. The
//! surviving set is compared with the contract's ground-truth lineage (minus
//! the contract itself), and true/false positives and false negatives are
//! pooled per `(scope, threshold)` scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::error::{Error, Result};
use crate::fingerprint::{Category, LshIndex};
use crate::ingest::ContractRecord;
use crate::lineage::Lineage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContractScope {
    OpenSourceOnly,
    All,
}

impl ContractScope {
    pub const BOTH: [ContractScope; 2] = [ContractScope::OpenSourceOnly, ContractScope::All];

    pub fn label(self) -> &'static str {
        match self {
            ContractScope::OpenSourceOnly => "Open-source",
            ContractScope::All => "All contracts",
        }
    }
}

impl fmt::Display for ContractScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ContractScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "open-source" | "open-source-only" | "oss" => Ok(ContractScope::OpenSourceOnly),
            "all" => Ok(ContractScope::All),
            other => Err(Error::Validation(format!(
                "unknown contract scope `{other}` (expected open-source or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Averaging {
    /// Pooled counts across queries.
    #[default]
    Micro,
    /// Mean of per-query ratios, over queries where the ratio is defined.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub contract_scope: ContractScope,
    pub threshold: Category,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when no contract was predicted at all.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvaluationDiagnostic {
    /// The query has no fingerprint; it is scored with an empty prediction.
    NoFingerprint { query: Address },
    /// No ground-truth lineage member remains under this scope.
    NoGroundTruth { scope: ContractScope, query: Address },
    /// The query is missing from the contract metadata.
    UnknownQuery { query: Address },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub averaging: Averaging,
    pub results: Vec<ScenarioResult>,
    pub diagnostics: Vec<EvaluationDiagnostic>,
}

/// Prediction side of the evaluation: the similarity index plus the contract
/// metadata needed for the owner and scope filters.
pub struct LineagePredictor<'a> {
    index: &'a LshIndex,
    contracts: &'a BTreeMap<Address, ContractRecord>,
}

impl<'a> LineagePredictor<'a> {
    pub fn new(index: &'a LshIndex, contracts: &'a BTreeMap<Address, ContractRecord>) -> Self {
        LineagePredictor { index, contracts }
    }

    pub fn predicted_lineage(&self, query: Address, threshold: Category, scope: ContractScope) -> Result<BTreeSet<Address>> {
        let record = self.contracts.get(&query).ok_or(Error::Lookup(query))?;
        if self.index.get(query).is_none() {
            return Ok(BTreeSet::new());
        }
        if scope == ContractScope::OpenSourceOnly && !record.open_source {
            return Ok(BTreeSet::new());
        }
        let hits = self.index.query_similar(query, threshold)?;
        Ok(hits
            .into_iter()
            .map(|(address, _)| address)
            .filter(|a| {
                self.contracts.get(a).is_some_and(|c| {
                    c.creator == record.creator && (scope == ContractScope::All || c.open_source)
                })
            })
            .collect())
    }
}

/// Ground-truth companions of every lineage member: the union of all
/// lineages it belongs to, without the member itself.
pub fn ground_truth_sets(lineages: &[Lineage]) -> BTreeMap<Address, BTreeSet<Address>> {
    let mut sets: BTreeMap<Address, BTreeSet<Address>> = BTreeMap::new();
    for lineage in lineages {
        for v in &lineage.versions {
            let entry = sets.entry(v.address).or_default();
            entry.extend(lineage.versions.iter().map(|o| o.address).filter(|&o| o != v.address));
        }
    }
    sets
}

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    precision_sum: f64,
    precision_n: usize,
    recall_sum: f64,
    recall_n: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn evaluate(
    ground_truth: &[Lineage],
    predictor: &LineagePredictor<'_>,
    thresholds: &[Category],
    scopes: &[ContractScope],
    averaging: Averaging,
) -> EvaluationReport {
    let truth = ground_truth_sets(ground_truth);
    let mut diagnostics = BTreeSet::new();
    let mut tallies: BTreeMap<(ContractScope, Category), Tally> = BTreeMap::new();
    for &scope in scopes {
        for &t in thresholds {
            tallies.insert((scope, t), Tally::default());
        }
    }

    for (&query, companions) in &truth {
        let Some(record) = predictor.contracts.get(&query) else {
            diagnostics.insert(EvaluationDiagnostic::UnknownQuery { query });
            continue;
        };
        if predictor.index.get(query).is_none() {
            diagnostics.insert(EvaluationDiagnostic::NoFingerprint { query });
        }
        for &scope in scopes {
            if scope == ContractScope::OpenSourceOnly && !record.open_source {
                continue;
            }
            let expected: BTreeSet<Address> = companions
                .iter()
                .copied()
                .filter(|a| {
                    scope == ContractScope::All || predictor.contracts.get(a).is_some_and(|c| c.open_source)
                })
                .collect();
            if expected.is_empty() {
                diagnostics.insert(EvaluationDiagnostic::NoGroundTruth { scope, query });
                continue;
            }
            for &threshold in thresholds {
                let predicted = predictor
                    .predicted_lineage(query, threshold, scope)
                    .expect("query metadata checked above");
                let tp = predicted.intersection(&expected).count();
                let fp = predicted.len() - tp;
                let fn_ = expected.len() - tp;
                let tally = tallies.get_mut(&(scope, threshold)).expect("scenario registered");
                tally.tp += tp;
                tally.fp += fp;
                tally.fn_ += fn_;
                if let Some(p) = ratio(tp, tp + fp) {
                    tally.precision_sum += p;
                    tally.precision_n += 1;
                }
                if let Some(r) = ratio(tp, tp + fn_) {
                    tally.recall_sum += r;
                    tally.recall_n += 1;
                }
            }
        }
    }

    let mut results = Vec::with_capacity(scopes.len() * thresholds.len());
    for &scope in scopes {
        for &threshold in thresholds {
            let t = tallies[&(scope, threshold)];
            let (precision, recall) = match averaging {
                Averaging::Micro => (ratio(t.tp, t.tp + t.fp), ratio(t.tp, t.tp + t.fn_)),
                Averaging::Macro => (
                    (t.precision_n > 0).then(|| t.precision_sum / t.precision_n as f64),
                    (t.recall_n > 0).then(|| t.recall_sum / t.recall_n as f64),
                ),
            };
            results.push(ScenarioResult {
                contract_scope: scope,
                threshold,
                tp: t.tp,
                fp: t.fp,
                fn_: t.fn_,
                precision,
                recall,
            });
        }
    }

    EvaluationReport {
        averaging,
        results,
        diagnostics: diagnostics.into_iter().collect(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_default()
}

impl EvaluationReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "Contract Type,Similarity threshold,Precision (%),Recall (%)")?;
        for r in &self.results {
            writeln!(
                out,
                "{},{},{},{}",
                r.contract_scope.label(),
                r.threshold.label(),
                pct(r.precision),
                pct(r.recall)
            )?;
        }
        Ok(())
    }

    /// Table rows with percentages, plus the raw counts behind them.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .results
            .iter()
            .map(|r| {
                serde_json::json!({
                    "contract_type": r.contract_scope.label(),
                    "threshold": r.threshold.label(),
                    "precision_pct": r.precision.map(|p| round2(p * 100.0)),
                    "recall_pct": r.recall.map(|p| round2(p * 100.0)),
                    "tp": r.tp,
                    "fp": r.fp,
                    "fn": r.fn_,
                })
            })
            .collect();
        serde_json::json!({
            "averaging": self.averaging,
            "results": rows,
            "diagnostics": self.diagnostics,
        })
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
