//! Subword vocabulary training, whole-word masked pre-training data, a
//! BERT-style encoder with its training loops, task heads, GLUES readers and
//! evaluation metrics.

pub mod dataprep;
pub mod encoder;
pub mod gluesio;
pub mod heads;
pub mod metrics;
pub mod tokenizer;
pub mod trainer;
pub mod util;
