//! QA-formatted tasks, the synthetic suite, metrics and dataset files.

pub mod io;
pub mod metrics;
pub mod qa;
pub mod suite;
pub mod vocab;

pub use metrics::{metric_em, metric_nf1, Metric};
pub use qa::{from_qa_format, to_qa_format, QaExample, RawItem, Task, TaskSpec};
pub use suite::{make_synthetic_suite, SuiteSizes};
pub use vocab::Vocab;
