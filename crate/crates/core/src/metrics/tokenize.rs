//! Shared tokenizer for BLEU, lexicon matching and word statistics.
//!
//! Rules: text is split on whitespace; runs of alphanumeric characters form
//! words; an apostrophe attached to the end of a word starts a clitic token
//! (`Bj's` -> `bj`, `'s`); every other character is a token of its own, so
//! `non-binary` becomes `non`, `-`, `binary`. Tokens are lowercased.

use serde::{Deserialize, Serialize};

/// A token together with the byte range it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Ordered lowercase lexemes; never contains empty tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens.into_iter().map(|t| t.text).collect())
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Tokenize keeping byte offsets into `text`.
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut prev_alnum = false;

    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            prev_alnum = false;
            continue;
        }
        if c.is_alphanumeric() {
            let mut end = start + c.len_utf8();
            while let Some(&(i, n)) = chars.peek() {
                if !n.is_alphanumeric() {
                    break;
                }
                end = i + n.len_utf8();
                chars.next();
            }
            out.push(Token {
                text: text[start..end].to_lowercase(),
                start,
                end,
            });
            prev_alnum = true;
            continue;
        }
        if is_apostrophe(c) && prev_alnum {
            if let Some(&(_, n)) = chars.peek() {
                if n.is_alphanumeric() {
                    let mut end = start + c.len_utf8();
                    while let Some(&(i, n)) = chars.peek() {
                        if !n.is_alphanumeric() {
                            break;
                        }
                        end = i + n.len_utf8();
                        chars.next();
                    }
                    // normalise the typographic apostrophe
                    let body = text[start + c.len_utf8()..end].to_lowercase();
                    out.push(Token {
                        text: format!("'{body}"),
                        start,
                        end,
                    });
                    prev_alnum = true;
                    continue;
                }
            }
        }
        let end = start + c.len_utf8();
        out.push(Token {
            text: text[start..end].to_lowercase(),
            start,
            end,
        });
        prev_alnum = false;
    }
    out
}

pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence::from(tokenize_spans(text))
}
