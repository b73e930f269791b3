//! Exact match and normalized token-bag F1, both on a 0-100 scale.
//!
//! Normalization lowercases, strips punctuation, drops the articles
//! "a", "an", "the" and any reserved control token.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    Nf1,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Em => "em",
            Metric::Nf1 => "nf1",
        })
    }
}

pub fn normalize<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !(t.starts_with('<') && t.ends_with('>') && t.len() > 2))
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|t| !t.is_empty() && !matches!(t.as_str(), "a" | "an" | "the"))
        .collect()
}

pub fn metric_em<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> f64 {
    if normalize(pred) == normalize(gold) {
        100.0
    } else {
        0.0
    }
}

pub fn metric_nf1<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> f64 {
    let (p, g) = (normalize(pred), normalize(gold));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 100.0 } else { 0.0 };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *bag.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = bag.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

impl Metric {
    pub fn score<S: AsRef<str>, T: AsRef<str>>(self, pred: &[S], gold: &[T]) -> f64 {
        match self {
            Metric::Em => metric_em(pred, gold),
            Metric::Nf1 => metric_nf1(pred, gold),
        }
    }

    /// Scores token ids through `vocab`.
    pub fn score_ids(self, pred: &[usize], gold: &[usize], vocab: &Vocab) -> f64 {
        let words = |ids: &[usize]| -> Vec<String> {
            ids.iter()
                .map(|&i| vocab.token(i).unwrap_or("<unk>").to_string())
                .collect()
        };
        self.score(&words(pred), &words(gold))
    }
}
