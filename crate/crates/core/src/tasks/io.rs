//! JSON Lines datasets: one `{"question", "answer", "task"}` object per line.
//!
//! A dataset directory holds `train.jsonl`, `test.jsonl`, `vocab.txt` and an
//! optional `tasks.json` listing task names and metrics in order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::qa::{QaExample, Task, TaskSpec};
use super::vocab::{Vocab, EOS};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    question: String,
    answer: String,
    task: String,
}

/// Writes one JSON object per example; answers are stored without EOS.
pub fn write_jsonl<W: Write>(mut w: W, examples: &[QaExample], vocab: &Vocab) -> Result<()> {
    for ex in examples {
        let rec = Record {
            question: vocab.decode(&ex.question),
            answer: vocab.decode(ex.gold()),
            task: ex.task_id.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Parses JSON Lines. Unknown tokens are added to `vocab` when `grow` is set
/// and rejected otherwise. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R, vocab: &mut Vocab, grow: bool) -> Result<Vec<QaExample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            detail: e.to_string(),
        })?;
        let mut encode = |text: &str| -> Result<Vec<usize>> {
            if grow {
                Ok(vocab.encode_growing(text))
            } else {
                vocab.encode(text)
            }
        };
        let question = encode(&rec.question).map_err(|e| Error::Parse {
            line: lineno,
            detail: e.to_string(),
        })?;
        let mut answer = encode(&rec.answer).map_err(|e| Error::Parse {
            line: lineno,
            detail: e.to_string(),
        })?;
        answer.push(EOS);
        let ex = QaExample {
            question,
            answer,
            task_id: rec.task,
        };
        ex.validate().map_err(|e| Error::Parse {
            line: lineno,
            detail: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dir: &Path, tasks: &[Task], vocab: &Vocab) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in tasks {
        write_jsonl(&mut train, &t.train, vocab)?;
        write_jsonl(&mut test, &t.test, vocab)?;
    }
    write_file(&dir.join("train.jsonl"), &train)?;
    write_file(&dir.join("test.jsonl"), &test)?;
    vocab.save(&dir.join("vocab.txt"))?;
    let specs: Vec<TaskSpec> = tasks
        .iter()
        .map(|t| TaskSpec {
            name: t.name.clone(),
            metric: t.metric,
        })
        .collect();
    write_file(&dir.join("tasks.json"), &serde_json::to_vec_pretty(&specs)?)
}

fn read_split(path: &Path, vocab: &mut Vocab, grow: bool) -> Result<Vec<QaExample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(std::io::BufReader::new(f), vocab, grow).map_err(|e| e.context(format!("reading {}", path.display())))
}

/// Loads a dataset directory. Without `vocab.txt` the vocabulary is grown
/// from the data; without `tasks.json` tasks appear in first-seen order and
/// are scored by exact match.
pub fn load_dataset(dir: &Path) -> Result<(Vocab, Vec<Task>)> {
    load_dataset_with(dir, None)
}

/// As [`load_dataset`], with an explicit closed vocabulary taking the place
/// of `vocab.txt`.
pub fn load_dataset_with(dir: &Path, vocab: Option<Vocab>) -> Result<(Vocab, Vec<Task>)> {
    let vocab_path = dir.join("vocab.txt");
    let (mut vocab, grow) = match vocab {
        Some(v) => (v, false),
        None if vocab_path.exists() => (Vocab::load(&vocab_path)?, false),
        None => (Vocab::new(), true),
    };
    let train = read_split(&dir.join("train.jsonl"), &mut vocab, grow)?;
    let test = read_split(&dir.join("test.jsonl"), &mut vocab, grow)?;
    let specs_path = dir.join("tasks.json");
    let specs: Vec<TaskSpec> = if specs_path.exists() {
        let bytes = std::fs::read(&specs_path).map_err(|e| Error::io(&specs_path, e))?;
        serde_json::from_slice(&bytes)?
    } else {
        let mut names: Vec<String> = Vec::new();
        for ex in &train {
            if !names.contains(&ex.task_id) {
                names.push(ex.task_id.clone());
            }
        }
        names
            .into_iter()
            .map(|name| TaskSpec { name, metric: Metric::Em })
            .collect()
    };
    let tasks = specs
        .into_iter()
        .map(|s| Task {
            train: train.iter().filter(|e| e.task_id == s.name).cloned().collect(),
            test: test.iter().filter(|e| e.task_id == s.name).cloned().collect(),
            name: s.name,
            metric: s.metric,
        })
        .collect::<Vec<_>>();
    if let Some(t) = tasks.iter().find(|t| t.train.is_empty() || t.test.is_empty()) {
        return Err(Error::contract(format!("task `{}` has an empty split", t.name)));
    }
    Ok((vocab, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::suite::{make_synthetic_suite, SuiteSizes};

    #[test]
    fn round_trip_in_memory() {
        let (vocab, tasks) = make_synthetic_suite(1, SuiteSizes::default()).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &tasks[2].train, &vocab).unwrap();
        let mut v = vocab.clone();
        let back = read_jsonl(&buf[..], &mut v, false).unwrap();
        assert_eq!(back, tasks[2].train);
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = Vocab::from_tokens(["x"]);
        let err = read_jsonl(&b"{\"question\":\"x\",\"answer\":\"x\",\"task\":\"t\"}\n{\"question\":\"x\",\"task\":\"t\"}\n"[..], &mut v, false)
            .unwrap_err();
        match err {
            Error::Parse { line, detail } => {
                assert_eq!(line, 2);
                assert!(detail.contains("answer"), "{detail}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut v = Vocab::new();
        let err = read_jsonl(&b"\n{not json\n"[..], &mut v, true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
