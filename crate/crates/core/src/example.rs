use serde::{Deserialize, Serialize};

/// One decoding input: a passage, the target answer span and, when known,
/// the gold question. All three are pre-tokenized word lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub passage: Vec<String>,
    pub answer: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_question: Option<Vec<String>>,
}

impl Example {
    pub fn new<S: AsRef<str>>(id: &str, passage: &[S], answer: &[S]) -> Self {
        Self {
            id: id.to_owned(),
            passage: passage.iter().map(|s| s.as_ref().to_owned()).collect(),
            answer: answer.iter().map(|s| s.as_ref().to_owned()).collect(),
            reference_question: None,
        }
    }

    /// Builds an example from space-separated strings.
    pub fn from_text(id: &str, passage: &str, answer: &str, question: Option<&str>) -> Self {
        let split = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        Self {
            id: id.to_owned(),
            passage: split(passage),
            answer: split(answer),
            reference_question: question.map(split),
        }
    }

    pub fn answer_text(&self) -> String {
        self.answer.join(" ")
    }
}
