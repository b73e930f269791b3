use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::vocab::{Vocab, EOS, GEN, PAD, SEP};
use crate::error::{Error, Result};

/// One `<question, answer>` pair as token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QaExample {
    pub question: Vec<usize>,
    /// Gold tokens followed by EOS.
    pub answer: Vec<usize>,
    pub task_id: String,
}

impl QaExample {
    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() || self.answer.is_empty() {
            return Err(Error::contract("question and answer must be non-empty"));
        }
        if self.question.contains(&PAD) || self.answer.contains(&PAD) {
            return Err(Error::contract("QA example contains PAD"));
        }
        if self.answer.last() != Some(&EOS) {
            return Err(Error::contract("answer must end with EOS"));
        }
        Ok(())
    }

    /// Answer tokens without the trailing EOS.
    pub fn gold(&self) -> &[usize] {
        match self.answer.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.answer,
        }
    }

    /// The generator's training sequence: `GEN question SEP answer`.
    pub fn lm_sequence(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.question.len() + self.answer.len() + 2);
        s.push(GEN);
        s.extend_from_slice(&self.question);
        s.push(SEP);
        s.extend_from_slice(&self.answer);
        s
    }

    /// Decoder prefix preceding the first answer slot: `GEN question SEP`.
    pub fn answer_prefix(question: &[usize]) -> Vec<usize> {
        let mut s = Vec::with_capacity(question.len() + 2);
        s.push(GEN);
        s.extend_from_slice(question);
        s.push(SEP);
        s
    }
}

/// Untokenized task item before QA formatting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawItem {
    pub context: String,
    pub prompt: String,
    pub answer: String,
}

/// `question = context SEP prompt`, `answer = gold EOS`.
pub fn to_qa_format(raw: &RawItem, task_id: &str, vocab: &Vocab) -> Result<QaExample> {
    let context = vocab.encode(&raw.context)?;
    let prompt = vocab.encode(&raw.prompt)?;
    let mut answer = vocab.encode(&raw.answer)?;
    if answer.is_empty() {
        return Err(Error::contract("empty answer"));
    }
    if context.is_empty() || prompt.is_empty() {
        return Err(Error::contract("context and prompt must be non-empty"));
    }
    let mut question = context;
    question.push(SEP);
    question.extend(prompt);
    answer.push(EOS);
    let ex = QaExample {
        question,
        answer,
        task_id: task_id.to_string(),
    };
    ex.validate()?;
    Ok(ex)
}

/// Inverse of [`to_qa_format`] for questions holding one SEP.
pub fn from_qa_format(ex: &QaExample, vocab: &Vocab) -> Result<RawItem> {
    let pos = ex
        .question
        .iter()
        .position(|&t| t == SEP)
        .ok_or_else(|| Error::contract("question has no SEP between context and prompt"))?;
    Ok(RawItem {
        context: vocab.decode(&ex.question[..pos]),
        prompt: vocab.decode(&ex.question[pos + 1..]),
        answer: vocab.decode(ex.gold()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    pub train: Vec<QaExample>,
    pub test: Vec<QaExample>,
    pub metric: Metric,
}

/// Name and metric of a task, as stored next to a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub metric: Metric,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens(["good", "plot", "what", "is", "the", "sentiment", "?", "positive"])
    }

    #[test]
    fn classification_item_format() {
        let v = vocab();
        let raw = RawItem {
            context: "good plot".into(),
            prompt: "what is the sentiment ?".into(),
            answer: "positive".into(),
        };
        let ex = to_qa_format(&raw, "polarity", &v).unwrap();
        assert_eq!(v.decode(&ex.question), "good plot <sep> what is the sentiment ?");
        assert_eq!(v.decode(&ex.answer), "positive <eos>");
        assert_eq!(from_qa_format(&ex, &v).unwrap(), raw);
    }

    #[test]
    fn empty_answer_rejected() {
        let raw = RawItem {
            context: "good".into(),
            prompt: "what".into(),
            answer: " ".into(),
        };
        assert!(matches!(to_qa_format(&raw, "t", &vocab()), Err(Error::Contract(_))));
    }

    #[test]
    fn lm_sequence_layout() {
        let ex = QaExample {
            question: vec![4, SEP, 5],
            answer: vec![6, EOS],
            task_id: "t".into(),
        };
        assert_eq!(ex.lm_sequence(), vec![GEN, 4, SEP, 5, SEP, 6, EOS]);
        assert_eq!(ex.gold(), &[6]);
    }
}
