//! A small Solidity tokenizer.
//!
//! It only needs to be good enough to find declarations and to produce a
//! normalized token stream: comments and whitespace are dropped, string
//! literals become single tokens, and every other character outside an
//! identifier or number is its own punctuation token.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
    /// 1-based line of the first character.
    pub line: usize,
}

impl Token<'_> {
    pub fn is_punct(&self, c: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == c
    }

    pub fn is_ident(&self, word: &str) -> bool {
        self.kind == TokenKind::Ident && self.text == word
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(src: &str) -> Vec<Token<'_>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut i = 0usize;

    while i < src.len() {
        let c = src[i..].chars().next().expect("index is on a char boundary");
        let start = i;
        let start_line = line;

        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < src.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i >= src.len() {
                    break;
                }
                if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = bytes[i];
            i += 1;
            while i < src.len() {
                match bytes[i] {
                    b'\\' => i += 2,
                    b'\n' => break,
                    b if b == quote => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            let i_end = i.min(src.len());
            i = i_end;
            tokens.push(Token {
                kind: TokenKind::Str,
                text: &src[start..i_end],
                start,
                end: i_end,
                line: start_line,
            });
            continue;
        }
        if is_ident_start(c) {
            while i < src.len() && is_ident_continue(bytes[i] as char) {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident,
                text: &src[start..i],
                start,
                end: i,
                line,
            });
            continue;
        }
        if c.is_ascii_digit() {
            while i < src.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                text: &src[start..i],
                start,
                end: i,
                line,
            });
            continue;
        }
        i += c.len_utf8();
        tokens.push(Token {
            kind: TokenKind::Punct,
            text: &src[start..i],
            start,
            end: i,
            line,
        });
    }
    tokens
}

/// Token texts with string literal contents blanked, for similarity hashing.
pub fn normalized_tokens(src: &str) -> impl Iterator<Item = &str> {
    tokenize(src).into_iter().map(|t| match t.kind {
        TokenKind::Str => "\"\"",
        _ => t.text,
    })
}
