//! MinHash fingerprints over normalized Solidity token shingles, with an LSH
//! banding index for similar-contract lookup.
//!
//! Each contract's files are tokenized (comments dropped, string literal
//! contents blanked), concatenated in path order and cut into 5-token
//! shingles. Slot `i` of the signature is the minimum of a seeded universal
//! hash `h_i` over the shingle set, so the fraction of equal slots between
//! two signatures estimates their Jaccard similarity.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::address::Address;
use crate::error::{Error, Result};
use crate::ingest::ContractRecord;
use crate::pairing::lexer::normalized_tokens;

pub const DEFAULT_K: usize = 256;
pub const DEFAULT_BANDS: usize = 64;
pub const DEFAULT_ROWS: usize = 4;
pub const SHINGLE_SIZE: usize = 5;
/// Slot value of a fingerprint with no shingles.
pub const SENTINEL: u64 = u64::MAX;

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    None,
    Low,
    Medium,
    High,
}

impl Category {
    pub const HIGH_MIN: f64 = 0.90;
    pub const MEDIUM_MIN: f64 = 0.70;
    pub const LOW_MIN: f64 = 0.50;

    pub const THRESHOLDS: [Category; 3] = [Category::Low, Category::Medium, Category::High];

    pub fn from_jaccard(j: f64) -> Self {
        if j >= Self::HIGH_MIN {
            Category::High
        } else if j >= Self::MEDIUM_MIN {
            Category::Medium
        } else if j >= Self::LOW_MIN {
            Category::Low
        } else {
            Category::None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::None => "None",
            Category::Low => "Low",
            Category::Medium => "Medium",
            Category::High => "High",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Category::None),
            "low" => Ok(Category::Low),
            "medium" => Ok(Category::Medium),
            "high" => Ok(Category::High),
            other => Err(Error::Validation(format!(
                "unknown similarity category `{other}` (expected none, low, medium or high)"
            ))),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mod_mersenne(x: u128) -> u64 {
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let mut r = lo + (hi & MERSENNE_61) + (hi >> 61);
    while r >= MERSENNE_61 {
        r -= MERSENNE_61;
    }
    r
}

/// The seeded hash family `h_i(x) = (a_i·x + b_i) mod (2^61 − 1)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    coefficients: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        let coefficients = (0..k as u64)
            .map(|i| {
                let base = splitmix64(seed ^ splitmix64(i));
                let a = 1 + splitmix64(base) % (MERSENNE_61 - 1);
                let b = splitmix64(base.wrapping_add(1)) % MERSENNE_61;
                (a, b)
            })
            .collect();
        MinHasher { seed, coefficients }
    }

    pub fn k(&self) -> usize {
        self.coefficients.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Signature of a set of 64-bit shingle hashes; duplicates are irrelevant.
    pub fn signature(&self, shingles: &[u64]) -> Vec<u64> {
        let mut sig = vec![SENTINEL; self.k()];
        for &s in shingles {
            let x = mod_mersenne(s as u128);
            for (slot, &(a, b)) in sig.iter_mut().zip(&self.coefficients) {
                let h = mod_mersenne(a as u128 * x as u128 + b as u128);
                if h < *slot {
                    *slot = h;
                }
            }
        }
        sig
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Distinct hashed 5-token shingles of a contract's normalized source.
pub fn shingle_hashes(record: &ContractRecord) -> Vec<u64> {
    let mut files: Vec<_> = record.files.iter().collect();
    files.sort_by(|a, b| (&a.directory, &a.filename).cmp(&(&b.directory, &b.filename)));
    let tokens: Vec<&str> = files.iter().flat_map(|f| normalized_tokens(&f.content)).collect();
    shingles_of_tokens(&tokens)
}

pub fn shingles_of_tokens(tokens: &[&str]) -> Vec<u64> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let width = SHINGLE_SIZE.min(tokens.len());
    let set: BTreeSet<u64> = tokens
        .windows(width)
        .map(|w| {
            w.iter().fold(FNV_OFFSET, |h, t| {
                let h = fnv1a(t.bytes(), h);
                fnv1a([0xff], h)
            })
        })
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub address: Address,
    pub k: usize,
    pub seed: u64,
    pub shingle_count: usize,
    #[serde(serialize_with = "ser_hex_slots", deserialize_with = "de_hex_slots")]
    pub signature: Vec<u64>,
}

fn ser_hex_slots<S: Serializer>(slots: &[u64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(slots.iter().map(|v| format!("{v:016x}")))
}

fn de_hex_slots<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u64>, D::Error> {
    let raw: Vec<String> = Vec::deserialize(d)?;
    raw.iter()
        .map(|h| u64::from_str_radix(h.trim_start_matches("0x"), 16).map_err(serde::de::Error::custom))
        .collect()
}

impl Fingerprint {
    pub fn from_shingles(address: Address, shingles: &[u64], hasher: &MinHasher) -> Self {
        let distinct: BTreeSet<u64> = shingles.iter().copied().collect();
        Fingerprint {
            address,
            k: hasher.k(),
            seed: hasher.seed(),
            shingle_count: distinct.len(),
            signature: hasher.signature(shingles),
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.shingle_count == 0
    }
}

/// Fingerprints an open-source contract.
pub fn fingerprint(record: &ContractRecord, hasher: &MinHasher) -> Result<Fingerprint> {
    if !record.open_source {
        return Err(Error::NotFingerprintable(record.address));
    }
    Ok(Fingerprint::from_shingles(record.address, &shingle_hashes(record), hasher))
}

/// Fingerprints every open-source record; closed-source ones are skipped.
pub fn fingerprint_all<'a>(records: impl IntoIterator<Item = &'a ContractRecord>, hasher: &MinHasher) -> Vec<Fingerprint> {
    let open: Vec<&ContractRecord> = records.into_iter().filter(|r| r.open_source).collect();
    let mut out: Vec<Fingerprint> = open
        .par_iter()
        .map(|r| fingerprint(r, hasher).expect("filtered to open source"))
        .collect();
    out.sort_by_key(|f| f.address);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVerdict {
    pub a: Address,
    pub b: Address,
    pub estimated_jaccard: f64,
    pub category: Category,
}

pub fn compare(a: &Fingerprint, b: &Fingerprint) -> Result<SimilarityVerdict> {
    if a.k != b.k || a.seed != b.seed || a.signature.len() != b.signature.len() {
        return Err(Error::Config(format!(
            "fingerprints of {} (k={}, seed={}) and {} (k={}, seed={}) are not comparable",
            a.address, a.k, a.seed, b.address, b.k, b.seed
        )));
    }
    if a.is_sentinel() || b.is_sentinel() || a.k == 0 {
        return Ok(SimilarityVerdict {
            a: a.address,
            b: b.address,
            estimated_jaccard: 0.0,
            category: Category::None,
        });
    }
    let equal = a.signature.iter().zip(&b.signature).filter(|(x, y)| x == y).count();
    let estimated_jaccard = equal as f64 / a.k as f64;
    Ok(SimilarityVerdict {
        a: a.address,
        b: b.address,
        estimated_jaccard,
        category: Category::from_jaccard(estimated_jaccard),
    })
}

/// Read-only banding index over a fixed set of fingerprints.
#[derive(Debug, Clone)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    fingerprints: Vec<Fingerprint>,
    positions: HashMap<Address, usize>,
    buckets: HashMap<(usize, Vec<u64>), Vec<usize>>,
}

impl LshIndex {
    pub fn new(fingerprints: Vec<Fingerprint>) -> Result<Self> {
        Self::with_bands(fingerprints, DEFAULT_BANDS, DEFAULT_ROWS)
    }

    pub fn with_bands(mut fingerprints: Vec<Fingerprint>, bands: usize, rows: usize) -> Result<Self> {
        fingerprints.sort_by_key(|f| f.address);
        fingerprints.dedup_by_key(|f| f.address);
        if let Some(first) = fingerprints.first() {
            if bands * rows != first.k {
                return Err(Error::Config(format!(
                    "{bands} bands x {rows} rows does not cover signatures of length {}",
                    first.k
                )));
            }
            if let Some(odd) = fingerprints.iter().find(|f| f.k != first.k || f.seed != first.seed) {
                return Err(Error::Config(format!(
                    "fingerprint of {} uses k={} seed={}, index expects k={} seed={}",
                    odd.address, odd.k, odd.seed, first.k, first.seed
                )));
            }
        }
        let mut buckets: HashMap<(usize, Vec<u64>), Vec<usize>> = HashMap::new();
        let mut positions = HashMap::with_capacity(fingerprints.len());
        for (idx, fp) in fingerprints.iter().enumerate() {
            positions.insert(fp.address, idx);
            if fp.is_sentinel() {
                continue;
            }
            for (band, chunk) in fp.signature.chunks(rows).enumerate() {
                buckets.entry((band, chunk.to_vec())).or_default().push(idx);
            }
        }
        Ok(LshIndex {
            bands,
            rows,
            fingerprints,
            positions,
            buckets,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, address: Address) -> Option<&Fingerprint> {
        self.positions.get(&address).map(|&i| &self.fingerprints[i])
    }

    pub fn fingerprints(&self) -> &[Fingerprint] {
        &self.fingerprints
    }

    /// Addresses sharing at least one band bucket with `query`, excluding itself.
    pub fn candidates(&self, query: Address) -> Result<BTreeSet<Address>> {
        let &qi = self.positions.get(&query).ok_or(Error::Lookup(query))?;
        let fp = &self.fingerprints[qi];
        let mut out = BTreeSet::new();
        if fp.is_sentinel() {
            return Ok(out);
        }
        for (band, chunk) in fp.signature.chunks(self.rows).enumerate() {
            if let Some(members) = self.buckets.get(&(band, chunk.to_vec())) {
                out.extend(members.iter().filter(|&&i| i != qi).map(|&i| self.fingerprints[i].address));
            }
        }
        Ok(out)
    }

    /// Verified neighbours of `query` at or above `min_category`, most similar first.
    pub fn query_similar(&self, query: Address, min_category: Category) -> Result<Vec<(Address, SimilarityVerdict)>> {
        let q = self.get(query).ok_or(Error::Lookup(query))?;
        let mut hits = Vec::new();
        for address in self.candidates(query)? {
            let verdict = compare(q, self.get(address).expect("candidate is indexed"))?;
            if verdict.category >= min_category {
                hits.push((address, verdict));
            }
        }
        hits.sort_by(|(aa, av), (ba, bv)| {
            bv.estimated_jaccard
                .partial_cmp(&av.estimated_jaccard)
                .expect("jaccard estimates are finite")
                .then(aa.cmp(ba))
        });
        Ok(hits)
    }
}

pub fn write_fingerprints<W: Write>(fingerprints: &[Fingerprint], mut out: W) -> std::io::Result<()> {
    for fp in fingerprints {
        serde_json::to_writer(&mut out, fp)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_fingerprints<R: BufRead>(reader: R, origin: &str) -> Result<Vec<Fingerprint>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fp: Fingerprint = serde_json::from_str(&line).map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        if fp.signature.len() != fp.k {
            return Err(Error::parse(origin, idx + 1, format!("signature has {} slots, k={}", fp.signature.len(), fp.k)));
        }
        out.push(fp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SourceFile;

    fn addr(b: u8) -> Address {
        Address::from_bytes([b; 20])
    }

    fn open_record(a: u8, src: &str) -> ContractRecord {
        ContractRecord {
            address: addr(a),
            creator: addr(0xcc),
            deploy_timestamp: 0,
            verified: true,
            open_source: true,
            files: vec![SourceFile {
                directory: String::new(),
                filename: "C.sol".into(),
                content: src.into(),
            }],
        }
    }

    #[test]
    fn categories_follow_thresholds() {
        assert_eq!(Category::from_jaccard(1.0), Category::High);
        assert_eq!(Category::from_jaccard(0.90), Category::High);
        assert_eq!(Category::from_jaccard(0.8999), Category::Medium);
        assert_eq!(Category::from_jaccard(0.70), Category::Medium);
        assert_eq!(Category::from_jaccard(0.5), Category::Low);
        assert_eq!(Category::from_jaccard(0.49), Category::None);
        assert!("nonsense".parse::<Category>().is_err());
        assert_eq!("MEDIUM".parse::<Category>().unwrap(), Category::Medium);
    }

    #[test]
    fn identical_contracts_share_signatures() {
        let h = MinHasher::new(DEFAULT_K, 7);
        let src = "contract A { function f() public { x = 1; } }";
        let a = fingerprint(&open_record(1, src), &h).unwrap();
        let b = fingerprint(&open_record(2, src), &h).unwrap();
        assert_eq!(a.signature, b.signature);
        let v = compare(&a, &a).unwrap();
        assert_eq!(v.estimated_jaccard, 1.0);
        assert_eq!(v.category, Category::High);
    }

    #[test]
    fn comments_and_literals_do_not_change_fingerprints() {
        let h = MinHasher::new(64, 1);
        let a = fingerprint(&open_record(1, "contract A { function f() { require(x, \"one\"); } }"), &h).unwrap();
        let b = fingerprint(
            &open_record(2, "// header\ncontract A {\n  function f() {\n    require(x, \"two\"); /* c */\n  }\n}"),
            &h,
        )
        .unwrap();
        assert_eq!(a.signature, b.signature);
    }

    #[test]
    fn empty_source_yields_sentinel() {
        let h = MinHasher::new(DEFAULT_K, 7);
        let fp = fingerprint(&open_record(1, "// only a comment"), &h).unwrap();
        assert_eq!(fp.shingle_count, 0);
        assert!(fp.signature.iter().all(|&s| s == SENTINEL));
        assert_eq!(compare(&fp, &fp).unwrap().category, Category::None);
    }

    #[test]
    fn closed_source_is_not_fingerprintable() {
        let h = MinHasher::new(8, 0);
        let r = ContractRecord::closed(addr(1), addr(2), 0);
        assert!(matches!(fingerprint(&r, &h), Err(Error::NotFingerprintable(_))));
    }

    #[test]
    fn mismatched_configuration_is_rejected() {
        let a = Fingerprint::from_shingles(addr(1), &[1, 2, 3], &MinHasher::new(16, 1));
        let b = Fingerprint::from_shingles(addr(2), &[1, 2, 3], &MinHasher::new(16, 2));
        assert!(matches!(compare(&a, &b), Err(Error::Config(_))));
        assert!(LshIndex::with_bands(vec![a.clone()], 3, 3).is_err());
    }

    #[test]
    fn synthetic_third_overlap_estimate() {
        let h = MinHasher::new(DEFAULT_K, 42);
        let a = Fingerprint::from_shingles(addr(1), &(1..=10).collect::<Vec<_>>(), &h);
        let b = Fingerprint::from_shingles(addr(2), &(6..=15).collect::<Vec<_>>(), &h);
        let est = compare(&a, &b).unwrap().estimated_jaccard;
        assert!((est - 1.0 / 3.0).abs() <= 0.1, "estimate {est}");
    }

    #[test]
    fn single_contract_query_is_empty_and_duplicate_is_high() {
        let h = MinHasher::new(DEFAULT_K, 3);
        let src = "contract A { function f() public { x = 1; y = 2; } }";
        let solo = fingerprint(&open_record(1, src), &h).unwrap();
        let idx = LshIndex::new(vec![solo.clone()]).unwrap();
        assert!(idx.query_similar(addr(1), Category::None).unwrap().is_empty());

        let dup = fingerprint(&open_record(2, src), &h).unwrap();
        let idx = LshIndex::new(vec![solo, dup]).unwrap();
        let hits = idx.query_similar(addr(1), Category::Low).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, addr(2));
        assert_eq!(hits[0].1.category, Category::High);
        assert!(matches!(idx.query_similar(addr(9), Category::Low), Err(Error::Lookup(_))));
    }

    #[test]
    fn ndjson_round_trip() {
        let h = MinHasher::new(8, 5);
        let fps = vec![Fingerprint::from_shingles(addr(1), &[10, 20, 30], &h)];
        let mut buf = Vec::new();
        write_fingerprints(&fps, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"signature\":[\""));
        assert_eq!(read_fingerprints(&buf[..], "fp").unwrap(), fps);
    }
}
