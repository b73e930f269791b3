use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const GEN: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<eos>", "<sep>", "<gen>"];

/// Bijective token ↔ id map; ids 0..4 are always PAD, EOS, SEP, GEN.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.add(r);
        }
        v
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.add(t);
        }
        v
    }

    /// Returns the id of `token`, inserting it if new.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Whitespace tokenization against the closed vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::contract(format!("token `{t}` is not in the vocabulary")))
            })
            .collect()
    }

    /// Like [`Vocab::encode`] but unknown tokens are added.
    pub fn encode_growing(&mut self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.add(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    /// One token per line; the line number (from 0) is the id.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("invalid token {tok:?}"),
                });
            }
            if i < RESERVED.len() && tok != RESERVED[i] {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("expected reserved token {}, found {tok}", RESERVED[i]),
                });
            }
            if v.index.contains_key(tok) {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("duplicate token {tok}"),
                });
            }
            v.add(tok);
        }
        if v.len() < RESERVED.len() {
            return Err(Error::Parse {
                line: v.len() + 1,
                detail: "vocabulary must start with the four reserved tokens".into(),
            });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}
