//! Function declarations inside contract, library and interface bodies.

use serde::{Deserialize, Serialize};

use super::lexer::{tokenize, Token, TokenKind};
use crate::ingest::{FilePath, SourceFile};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUnit {
    pub name: String,
    /// `name(type1,type2)` with parameter names and data locations removed.
    pub signature: String,
    /// Contract, library or interface declaring the function.
    pub container: String,
    pub body: String,
    pub file: FilePath,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractDiagnostic {
    pub file: FilePath,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub functions: Vec<FunctionUnit>,
    pub diagnostics: Vec<ExtractDiagnostic>,
}

const LOCATIONS: [&str; 3] = ["memory", "storage", "calldata"];

fn canonical_type_word(word: &str) -> &str {
    match word {
        "uint" => "uint256",
        "int" => "int256",
        "byte" => "bytes1",
        w => w,
    }
}

fn is_word(t: &Token<'_>) -> bool {
    matches!(t.kind, TokenKind::Ident | TokenKind::Number)
}

fn canonical_param(tokens: &[Token<'_>]) -> String {
    let mut kept: Vec<Token<'_>> = tokens
        .iter()
        .copied()
        .filter(|t| !(t.kind == TokenKind::Ident && (LOCATIONS.contains(&t.text) || t.text == "payable")))
        .collect();
    if kept.len() >= 2 {
        let last = kept[kept.len() - 1];
        let before = kept[kept.len() - 2];
        if last.kind == TokenKind::Ident && !before.is_punct(".") {
            kept.pop();
        }
    }
    let mut out = String::new();
    let mut prev_word = false;
    for t in &kept {
        let word = is_word(t);
        if word && prev_word {
            out.push(' ');
        }
        out.push_str(if t.kind == TokenKind::Ident { canonical_type_word(t.text) } else { t.text });
        prev_word = word;
    }
    out
}

/// Canonical `name(types)` from the tokens strictly between the parameter parentheses.
fn canonical_signature(name: &str, params: &[Token<'_>]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut depth = 0i32;
    let mut current_start = 0usize;
    for (i, t) in params.iter().enumerate() {
        match t.text {
            "(" | "[" if t.kind == TokenKind::Punct => depth += 1,
            ")" | "]" if t.kind == TokenKind::Punct => depth -= 1,
            "," if t.kind == TokenKind::Punct && depth == 0 => {
                parts.push(canonical_param(&params[current_start..i]));
                current_start = i + 1;
            }
            _ => {}
        }
    }
    if current_start < params.len() {
        parts.push(canonical_param(&params[current_start..]));
    }
    format!("{name}({})", parts.join(","))
}

/// Index of the token closing the bracket opened at `open`, if any.
fn matching(tokens: &[Token<'_>], open: usize, left: &str, right: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct(left) {
            depth += 1;
        } else if t.is_punct(right) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

enum Parsed {
    Unit(FunctionUnit, usize),
    Skip,
    Truncated(String),
}

fn parse_function(src: &str, tokens: &[Token<'_>], at: usize, container: &str, file: &FilePath) -> Parsed {
    let name_tok = match tokens.get(at + 1) {
        Some(t) if t.kind == TokenKind::Ident => *t,
        // function types and unnamed legacy fallbacks are not units
        _ => return Parsed::Skip,
    };
    let open = at + 2;
    if !tokens.get(open).is_some_and(|t| t.is_punct("(")) {
        return Parsed::Skip;
    }
    let Some(close) = matching(tokens, open, "(", ")") else {
        return Parsed::Truncated(format!("unterminated parameter list of `{}`", name_tok.text));
    };

    let mut depth = 0i32;
    let mut end = None;
    for (i, t) in tokens.iter().enumerate().skip(close + 1) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        } else if depth == 0 && t.is_punct(";") {
            end = Some(i);
            break;
        } else if depth == 0 && t.is_punct("{") {
            match matching(tokens, i, "{", "}") {
                Some(j) => end = Some(j),
                None => return Parsed::Truncated(format!("unbalanced braces in body of `{}`", name_tok.text)),
            }
            break;
        }
    }
    let Some(end) = end else {
        return Parsed::Truncated(format!("declaration of `{}` never ends", name_tok.text));
    };

    let first = tokens[at];
    let last = tokens[end];
    Parsed::Unit(
        FunctionUnit {
            name: name_tok.text.to_string(),
            signature: canonical_signature(name_tok.text, &tokens[open + 1..close]),
            container: container.to_string(),
            body: src[first.start..last.end].to_string(),
            file: file.clone(),
            start_line: first.line,
            end_line: last.line,
        },
        end,
    )
}

/// Extracts every function declared directly in a contract, library or
/// interface body, in source order.
pub fn extract_functions(file: &SourceFile) -> Extraction {
    let path = file.path();
    let src = file.content.as_str();
    let tokens = tokenize(src);
    let mut out = Extraction::default();
    let mut depth = 0usize;
    let mut container: Option<String> = None;
    let mut pending: Option<String> = None;
    let mut i = 0usize;

    while i < tokens.len() {
        let t = tokens[i];
        if depth == 0 && t.kind == TokenKind::Ident && matches!(t.text, "contract" | "library" | "interface") {
            if let Some(name) = tokens.get(i + 1).filter(|n| n.kind == TokenKind::Ident) {
                pending = Some(name.text.to_string());
                i += 2;
                continue;
            }
        }
        if t.is_punct("{") {
            if depth == 0 {
                container = pending.take();
            }
            depth += 1;
        } else if t.is_punct("}") {
            if depth == 0 {
                out.diagnostics.push(ExtractDiagnostic {
                    file: path.clone(),
                    line: t.line,
                    message: "unmatched `}`".into(),
                });
            } else {
                depth -= 1;
                if depth == 0 {
                    container = None;
                }
            }
        } else if t.is_punct(";") && depth == 0 {
            pending = None;
        } else if depth == 1 && t.is_ident("function") {
            if let Some(owner) = container.as_deref() {
                match parse_function(src, &tokens, i, owner, &path) {
                    Parsed::Unit(unit, end) => {
                        out.functions.push(unit);
                        i = end + 1;
                        continue;
                    }
                    Parsed::Skip => {}
                    Parsed::Truncated(message) => {
                        out.diagnostics.push(ExtractDiagnostic {
                            file: path.clone(),
                            line: t.line,
                            message,
                        });
                        return out;
                    }
                }
            }
        }
        i += 1;
    }
    if depth != 0 {
        out.diagnostics.push(ExtractDiagnostic {
            file: path,
            line: tokens.last().map_or(1, |t| t.line),
            message: format!("{depth} unclosed `{{` at end of file"),
        });
    }
    out
}
