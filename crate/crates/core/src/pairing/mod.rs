//! Predecessor/successor alignment of files and functions.
//!
//! Files are only paired within the same directory, and only when their
//! names are at most [`MAX_NAME_DISTANCE`] edits apart. Candidates are taken
//! greedily in ascending distance (ties by predecessor then successor name),
//! so every file is used at most once. Functions of a paired file are first
//! matched on identical canonical signatures, then on near-identical names.

pub mod functions;
pub mod lexer;
pub mod similarity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use functions::{extract_functions, ExtractDiagnostic, Extraction, FunctionUnit};
pub use similarity::{content_similarity, lcs_len, levenshtein, line_similarity};

use crate::address::Address;
use crate::ingest::{ContractRecord, FilePath};

pub const MAX_NAME_DISTANCE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilePair {
    pub predecessor: Address,
    pub successor: Address,
    pub predecessor_file: FilePath,
    pub successor_file: FilePath,
    pub name_distance: usize,
    pub line_similarity: f64,
    pub content_similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairingFlag {
    NotOpenSource,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilePairing {
    pub pairs: Vec<FilePair>,
    pub unpaired_predecessor: Vec<FilePath>,
    pub unpaired_successor: Vec<FilePath>,
    pub flag: Option<PairingFlag>,
}

/// Greedy one-to-one matching of candidates sorted by their key.
///
/// Returns `(left index, right index)` pairs in acceptance order.
fn greedy_match<K: Ord>(mut candidates: Vec<(K, usize, usize)>, left: usize, right: usize) -> Vec<(usize, usize)> {
    candidates.sort_by(|a, b| a.0.cmp(&b.0));
    let mut used_left = vec![false; left];
    let mut used_right = vec![false; right];
    let mut out = Vec::new();
    for (_, l, r) in candidates {
        if !used_left[l] && !used_right[r] {
            used_left[l] = true;
            used_right[r] = true;
            out.push((l, r));
        }
    }
    out
}

pub fn pair_files(pred: &ContractRecord, succ: &ContractRecord) -> FilePairing {
    if !pred.open_source || !succ.open_source {
        return FilePairing {
            flag: Some(PairingFlag::NotOpenSource),
            ..FilePairing::default()
        };
    }

    let mut candidates = Vec::new();
    for (i, pf) in pred.files.iter().enumerate() {
        for (j, sf) in succ.files.iter().enumerate() {
            if pf.directory != sf.directory {
                continue;
            }
            let d = levenshtein(&pf.filename, &sf.filename);
            if d <= MAX_NAME_DISTANCE {
                candidates.push(((d, pf.filename.as_str(), sf.filename.as_str(), pf.directory.as_str()), i, j));
            }
        }
    }
    let matched = greedy_match(candidates, pred.files.len(), succ.files.len());

    let mut used_pred = vec![false; pred.files.len()];
    let mut used_succ = vec![false; succ.files.len()];
    let mut pairs: Vec<FilePair> = matched
        .into_iter()
        .map(|(i, j)| {
            used_pred[i] = true;
            used_succ[j] = true;
            let (pf, sf) = (&pred.files[i], &succ.files[j]);
            FilePair {
                predecessor: pred.address,
                successor: succ.address,
                predecessor_file: pf.path(),
                successor_file: sf.path(),
                name_distance: levenshtein(&pf.filename, &sf.filename),
                line_similarity: 0.0,
                content_similarity: 0.0,
            }
        })
        .collect();

    {
        use rayon::prelude::*;
        pairs.par_iter_mut().for_each(|p| {
            let a = &pred.file(&p.predecessor_file).expect("paired file exists").content;
            let b = &succ.file(&p.successor_file).expect("paired file exists").content;
            p.line_similarity = line_similarity(a, b);
            p.content_similarity = content_similarity(a, b);
        });
    }
    pairs.sort_by(|a, b| a.predecessor_file.cmp(&b.predecessor_file));

    FilePairing {
        pairs,
        unpaired_predecessor: unused(&pred.files, &used_pred),
        unpaired_successor: unused(&succ.files, &used_succ),
        flag: None,
    }
}

fn unused(files: &[crate::ingest::SourceFile], used: &[bool]) -> Vec<FilePath> {
    files
        .iter()
        .zip(used)
        .filter(|(_, u)| !**u)
        .map(|(f, _)| f.path())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchKind {
    ExactSignature,
    FuzzyName,
}

/// Compact identity of a function within its file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FunctionRef {
    pub container: String,
    pub name: String,
    pub signature: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl From<&FunctionUnit> for FunctionRef {
    fn from(f: &FunctionUnit) -> Self {
        FunctionRef {
            container: f.container.clone(),
            name: f.name.clone(),
            signature: f.signature.clone(),
            start_line: f.start_line,
            end_line: f.end_line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPair {
    pub predecessor: Address,
    pub successor: Address,
    pub predecessor_file: FilePath,
    pub successor_file: FilePath,
    pub predecessor_function: FunctionRef,
    pub successor_function: FunctionRef,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionPairing {
    pub pairs: Vec<FunctionPair>,
    pub unpaired_predecessor: Vec<FunctionRef>,
    pub unpaired_successor: Vec<FunctionRef>,
}

/// Matches the functions of a file pair: identical signatures first, then
/// names within edit distance two.
pub fn pair_functions(fp: &FilePair, pred: &[FunctionUnit], succ: &[FunctionUnit]) -> FunctionPairing {
    let mut used_pred = vec![false; pred.len()];
    let mut used_succ = vec![false; succ.len()];
    let mut accepted: Vec<(usize, usize, MatchKind)> = Vec::new();

    let mut exact = Vec::new();
    let mut by_signature: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, s) in succ.iter().enumerate() {
        by_signature.entry(s.signature.as_str()).or_default().push(j);
    }
    for (i, p) in pred.iter().enumerate() {
        for &j in by_signature.get(p.signature.as_str()).into_iter().flatten() {
            let s = &succ[j];
            let key = (p.container != s.container, p.start_line, s.start_line);
            exact.push((key, i, j));
        }
    }
    for (i, j) in greedy_match(exact, pred.len(), succ.len()) {
        used_pred[i] = true;
        used_succ[j] = true;
        accepted.push((i, j, MatchKind::ExactSignature));
    }

    let mut fuzzy = Vec::new();
    for (i, p) in pred.iter().enumerate().filter(|(i, _)| !used_pred[*i]) {
        for (j, s) in succ.iter().enumerate().filter(|(j, _)| !used_succ[*j]) {
            let d = levenshtein(&p.name, &s.name);
            if d <= MAX_NAME_DISTANCE {
                let key = (
                    d,
                    p.name.as_str(),
                    s.name.as_str(),
                    p.signature.as_str(),
                    s.signature.as_str(),
                    p.start_line,
                    s.start_line,
                );
                fuzzy.push((key, i, j));
            }
        }
    }
    for (i, j) in greedy_match(fuzzy, pred.len(), succ.len()) {
        used_pred[i] = true;
        used_succ[j] = true;
        accepted.push((i, j, MatchKind::FuzzyName));
    }

    accepted.sort_by_key(|(i, j, _)| (pred[*i].start_line, *i, *j));
    let pairs = accepted
        .into_iter()
        .map(|(i, j, match_kind)| FunctionPair {
            predecessor: fp.predecessor,
            successor: fp.successor,
            predecessor_file: fp.predecessor_file.clone(),
            successor_file: fp.successor_file.clone(),
            predecessor_function: (&pred[i]).into(),
            successor_function: (&succ[j]).into(),
            match_kind,
        })
        .collect();

    FunctionPairing {
        pairs,
        unpaired_predecessor: pred
            .iter()
            .zip(&used_pred)
            .filter(|(_, u)| !**u)
            .map(|(f, _)| f.into())
            .collect(),
        unpaired_successor: succ
            .iter()
            .zip(&used_succ)
            .filter(|(_, u)| !**u)
            .map(|(f, _)| f.into())
            .collect(),
    }
}
