//! Summary figures over a dataset bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::dataset::DatasetBundle;
use crate::ingest::FilePath;

/// Share of file pairs counted as near-identical.
pub const HIGH_SIMILARITY: f64 = 0.90;

/// Ratios over an empty denominator are `None`. Percentages are in [0, 100].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub lineages: usize,
    pub distinct_creators: usize,
    pub contract_pairs: usize,
    pub total_contracts: usize,
    pub open_source_contracts: usize,
    pub open_source_pct: Option<f64>,
    pub solidity_files: usize,
    pub file_pairs: usize,
    pub updated_files_pct: Option<f64>,
    pub average_gap_days: Option<f64>,
    pub files_in_pairs_pct: Option<f64>,
    pub average_line_similarity: Option<f64>,
    pub average_content_similarity: Option<f64>,
    pub high_similarity_pct: Option<f64>,
    pub function_pairs: usize,
    pub lineage_size_histogram: BTreeMap<usize, usize>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_stats(bundle: &DatasetBundle) -> StatsReport {
    let versions = bundle.versions();
    let open: BTreeSet<Address> = versions.iter().filter(|(_, v)| v.open_source).map(|(a, _)| *a).collect();

    let mut histogram = BTreeMap::new();
    for l in &bundle.lineages {
        *histogram.entry(l.versions.len()).or_insert(0) += 1;
    }

    // contracts on either side of a pair whose two sides are both open source
    let paired_open: BTreeSet<Address> = bundle
        .contract_pairs
        .iter()
        .filter(|p| open.contains(&p.predecessor) && open.contains(&p.successor))
        .flat_map(|p| [p.predecessor, p.successor])
        .collect();
    let candidate_files: BTreeSet<(Address, FilePath)> = paired_open
        .iter()
        .flat_map(|a| versions[a].files.iter().map(move |f| (*a, f.path())))
        .collect();
    let in_pairs: BTreeSet<(Address, FilePath)> = bundle
        .file_pairs
        .iter()
        .flat_map(|fp| [(fp.predecessor, fp.predecessor_file.clone()), (fp.successor, fp.successor_file.clone())])
        .filter(|k| candidate_files.contains(k))
        .collect();

    let file_pairs = bundle.file_pairs.len();
    StatsReport {
        lineages: bundle.lineages.len(),
        distinct_creators: bundle.lineages.iter().map(|l| l.creator).collect::<BTreeSet<_>>().len(),
        contract_pairs: bundle.contract_pairs.len(),
        total_contracts: versions.len(),
        open_source_contracts: open.len(),
        open_source_pct: pct(open.len(), versions.len()),
        solidity_files: open.iter().map(|a| versions[a].files.len()).sum(),
        file_pairs,
        updated_files_pct: pct(
            bundle.file_pairs.iter().filter(|fp| fp.line_similarity < 1.0).count(),
            file_pairs,
        ),
        average_gap_days: mean(bundle.contract_pairs.iter().map(|p| p.gap_days)),
        files_in_pairs_pct: pct(in_pairs.len(), candidate_files.len()),
        average_line_similarity: mean(bundle.file_pairs.iter().map(|fp| fp.line_similarity)),
        average_content_similarity: mean(bundle.file_pairs.iter().map(|fp| fp.content_similarity)),
        high_similarity_pct: pct(
            bundle.file_pairs.iter().filter(|fp| fp.line_similarity >= HIGH_SIMILARITY).count(),
            file_pairs,
        ),
        function_pairs: bundle.function_pairs.len(),
        lineage_size_histogram: histogram,
    }
}

impl StatsReport {
    /// `metric,value` rows; histogram bins appear as `lineages_of_size_<n>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let value = serde_json::to_value(self).expect("report serializes");
        writeln!(out, "metric,value")?;
        for (key, v) in value.as_object().expect("report is an object") {
            if key == "lineage_size_histogram" {
                continue;
            }
            let cell = match v {
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            };
            writeln!(out, "{key},{cell}")?;
        }
        for (size, count) in &self.lineage_size_histogram {
            writeln!(out, "lineages_of_size_{size},{count}")?;
        }
        Ok(())
    }
}
