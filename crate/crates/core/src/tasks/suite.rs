//! Desk-scale synthetic analogs of a sentiment task, a span-extraction task
//! and a dialogue-state task.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::qa::{to_qa_format, QaExample, RawItem, Task};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::seed;

const POSITIVE: [&str; 5] = ["good", "great", "fun", "love", "happy"];
const NEGATIVE: [&str; 5] = ["bad", "awful", "dull", "hate", "sad"];
const NEUTRAL: [&str; 4] = ["movie", "plot", "actor", "film"];
/// Chance that one of the three sentiment words disagrees with the label.
const MINORITY_RATE: f64 = 0.0;
const POLARITY_PROMPT: &str = "sentiment ?";

const NAMES: [&str; 5] = ["alice", "bob", "carol", "dave", "erin"];
const COLORS: [&str; 3] = ["red", "blue", "green"];
const VERBS: [&str; 4] = ["ate", "saw", "took", "sold"];
const OBJECTS: [&str; 4] = ["apple", "book", "car", "ring"];

const AREAS: [&str; 4] = ["north", "south", "east", "west"];
const PRICES: [&str; 2] = ["cheap", "pricey"];
const FOODS: [&str; 3] = ["pizza", "sushi", "curry"];
const LEADS: [&str; 3] = ["find", "want", "need"];
const STATE_PROMPT: &str = "state ?";
const SPAN_PROMPT: &str = "object ?";

pub const POLARITY: &str = "polarity";
pub const SPAN: &str = "span";
pub const STATE: &str = "state";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub train: usize,
    pub test: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self { train: 40, test: 30 }
    }
}

/// The closed vocabulary shared by all three synthetic tasks.
pub fn suite_vocab() -> Vocab {
    let extra = [
        "the", "sentiment", "object", "?", "positive", "negative", "with", "find", "want", "need", "food", "in",
        "please", "area", "state",
    ];
    Vocab::from_tokens(
        POSITIVE
            .iter()
            .chain(&NEGATIVE)
            .chain(&NEUTRAL)
            .chain(&NAMES)
            .chain(&COLORS)
            .chain(&VERBS)
            .chain(&OBJECTS)
            .chain(&AREAS)
            .chain(&PRICES)
            .chain(&FOODS)
            .chain(&extra)
            .copied(),
    )
}

fn polarity_item<R: Rng>(rng: &mut R, positive: bool) -> RawItem {
    let (major, minor) = if positive { (&POSITIVE, &NEGATIVE) } else { (&NEGATIVE, &POSITIVE) };
    let n_minor = usize::from(rng.random_bool(MINORITY_RATE));
    let mut words: Vec<&str> = Vec::new();
    for _ in n_minor..3 {
        words.push(major.choose(rng).expect("non-empty"));
    }
    for _ in 0..n_minor {
        words.push(minor.choose(rng).expect("non-empty"));
    }
    for _ in 0..2 {
        words.push(NEUTRAL.choose(rng).expect("non-empty"));
    }
    words.shuffle(rng);
    RawItem {
        context: words.join(" "),
        prompt: POLARITY_PROMPT.into(),
        answer: if positive { "positive" } else { "negative" }.into(),
    }
}

fn span_item<R: Rng>(rng: &mut R) -> RawItem {
    let agent = *NAMES.choose(rng).expect("non-empty");
    let other = loop {
        let n = *NAMES.choose(rng).expect("non-empty");
        if n != agent {
            break n;
        }
    };
    let verb = *VERBS.choose(rng).expect("non-empty");
    let object = *OBJECTS.choose(rng).expect("non-empty");
    let object_phrase = if rng.random_bool(0.5) {
        format!("{} {object}", COLORS.choose(rng).expect("non-empty"))
    } else {
        object.to_string()
    };
    RawItem {
        context: format!("{agent} {verb} the {object_phrase} with {other}"),
        prompt: SPAN_PROMPT.into(),
        answer: object_phrase,
    }
}

fn state_item<R: Rng>(rng: &mut R) -> RawItem {
    loop {
        let price = rng.random_bool(0.5).then(|| *PRICES.choose(rng).expect("non-empty"));
        let food = rng.random_bool(0.7).then(|| *FOODS.choose(rng).expect("non-empty"));
        let area = rng.random_bool(0.7).then(|| *AREAS.choose(rng).expect("non-empty"));
        if food.is_none() && area.is_none() {
            continue;
        }
        let mut words = vec![*LEADS.choose(rng).expect("non-empty")];
        words.extend(price);
        words.push(food.unwrap_or("food"));
        if let Some(a) = area {
            words.extend(["in", a]);
        }
        if rng.random_bool(0.5) {
            words.push("please");
        }
        // Price is not tracked; keys serialize in lexicographic order.
        let mut state = Vec::new();
        for (key, value) in [("area", area), ("food", food)] {
            if let Some(v) = value {
                state.push(format!("{key} {v}"));
            }
        }
        return RawItem {
            context: words.join(" "),
            prompt: STATE_PROMPT.into(),
            answer: state.join(" "),
        };
    }
}

fn build_task<R, F>(
    name: &str,
    metric: Metric,
    sizes: SuiteSizes,
    vocab: &Vocab,
    rng: &mut R,
    mut item: F,
) -> Result<Task>
where
    R: Rng,
    F: FnMut(&mut R, usize, usize) -> RawItem,
{
    let mut seen = HashSet::new();
    let mut split = |n: usize, rng: &mut R| -> Result<Vec<QaExample>> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            if attempts > 1000 * n {
                return Err(Error::contract(format!("cannot draw {n} distinct {name} examples")));
            }
            let ex = to_qa_format(&item(rng, out.len(), n), name, vocab)?;
            if seen.insert(ex.question.clone()) {
                out.push(ex);
            }
        }
        out.shuffle(rng);
        Ok(out)
    };
    let train = split(sizes.train, rng)?;
    let test = split(sizes.test, rng)?;
    Ok(Task {
        name: name.to_string(),
        train,
        test,
        metric,
    })
}

/// Builds the three tasks. Output depends only on `(seed, sizes)`.
pub fn make_synthetic_suite(seed: u64, sizes: SuiteSizes) -> Result<(Vocab, Vec<Task>)> {
    if sizes.train < 20 || sizes.test < 20 {
        return Err(Error::contract(format!(
            "suite splits need at least 20 examples each, got {sizes:?}"
        )));
    }
    let vocab = suite_vocab();
    let mut rng = seed::rng_at(seed, &[seed::SUITE, 0]);
    // Exactly balanced labels within each split.
    let polarity = build_task(POLARITY, Metric::Em, sizes, &vocab, &mut rng, |r, i, _| {
        polarity_item(r, i % 2 == 0)
    })?;
    let mut rng = seed::rng_at(seed, &[seed::SUITE, 1]);
    let span = build_task(SPAN, Metric::Nf1, sizes, &vocab, &mut rng, |r, _, _| span_item(r))?;
    let mut rng = seed::rng_at(seed, &[seed::SUITE, 2]);
    let state = build_task(STATE, Metric::Em, sizes, &vocab, &mut rng, |r, _, _| state_item(r))?;
    Ok((vocab, vec![polarity, span, state]))
}
