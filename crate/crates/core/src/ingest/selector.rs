//! Function selectors for locating upgrade calls in trace data.

use sha3::{Digest, Keccak256};

use crate::address::Selector;
use crate::error::{Error, Result};

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

fn validate_signature(signature: &str) -> std::result::Result<(), String> {
    if signature.chars().any(char::is_whitespace) {
        return Err("signature must not contain whitespace".into());
    }
    let open = signature
        .find('(')
        .ok_or_else(|| "signature is missing `(`".to_string())?;
    if !signature.ends_with(')') {
        return Err("signature must end with `)`".into());
    }
    let name = &signature[..open];
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$' => {}
        _ => return Err(format!("`{name}` is not a valid function name")),
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') {
        return Err(format!("`{name}` is not a valid function name"));
    }
    let mut depth = 0i32;
    for c in signature[open..].chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced parentheses".into());
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced parentheses".into());
    }
    if !signature.is_ascii() {
        return Err("signature must be ASCII".into());
    }
    Ok(())
}

/// First four bytes of the keccak-256 digest of a canonical signature such
/// as `transfer(address,uint256)`.
pub fn compute_selector(signature: &str) -> Result<Selector> {
    validate_signature(signature)
        .map_err(|m| Error::Validation(format!("malformed signature `{signature}`: {m}")))?;
    let digest = keccak256(signature.as_bytes());
    Ok(Selector::from_bytes([digest[0], digest[1], digest[2], digest[3]]))
}

/// The upgrade entry points whose selectors mark an implementation switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpgradeSignatures {
    entries: Vec<(String, Selector)>,
}

impl UpgradeSignatures {
    pub const DEFAULT: [&'static str; 2] = ["upgradeTo(address)", "upgradeToAndCall(address,bytes)"];

    pub fn new<I, S>(signatures: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = Vec::new();
        for sig in signatures {
            let sig = sig.as_ref();
            entries.push((sig.to_string(), compute_selector(sig)?));
        }
        entries.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        entries.dedup();
        Ok(UpgradeSignatures { entries })
    }

    pub fn contains(&self, selector: Selector) -> bool {
        self.entries.iter().any(|(_, s)| *s == selector)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Selector)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), *s))
    }
}

impl Default for UpgradeSignatures {
    fn default() -> Self {
        UpgradeSignatures::new(Self::DEFAULT).expect("default signatures are well formed")
    }
}
