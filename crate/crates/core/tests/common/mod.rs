#![allow(dead_code)]

pub mod keccak;
pub mod lineage_oracle;
pub mod synth;

use lineage_core::Address;
use rand::Rng;

pub fn addr(b: u8) -> Address {
    Address::from_bytes([b; 20])
}

pub fn random_address<R: Rng>(rng: &mut R) -> Address {
    Address::from_bytes(rng.random())
}

/// Longest common subsequence by the textbook quadratic table.
pub fn lcs_dp<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

/// Line similarity recomputed from the LCS table.
pub fn line_similarity_oracle(a: &str, b: &str) -> f64 {
    let la: Vec<&str> = a.lines().collect();
    let lb: Vec<&str> = b.lines().collect();
    let longest = la.len().max(lb.len());
    if longest == 0 {
        return 1.0;
    }
    lcs_dp(&la, &lb) as f64 / longest as f64
}

pub fn jaccard<T: Ord>(a: &std::collections::BTreeSet<T>, b: &std::collections::BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}
