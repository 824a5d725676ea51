//! Prompt assembly and output parsing.
//!
//! Templates are plain text with four sections (preamble, examples header,
//! example block, target block) and `{NAME}` placeholders. Record texts are
//! inserted verbatim and never rescanned for placeholders. The context part
//! of a prompt (everything before the target block) renders independently of
//! the target, so conditional scores can be taken as a difference of two
//! prompt losses that share the identical preamble.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{InstanceRecord, Query};

const DEFAULT_TEMPLATE: &str = include_str!("../templates/default.tmpl");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("template missing section [{0}]")]
    MissingSection(String),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
#[error("cannot parse prediction from reply {reply:?}: {reason}")]
pub struct PredictionParseError {
    pub reply: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mortality,
    Readmission,
    Los,
    Generic,
}

impl Task {
    pub fn description(&self) -> &'static str {
        match self {
            Task::Mortality => {
                "You are tasked with predicting in-hospital mortality based on patient EHR data."
            }
            Task::Readmission => {
                "You are tasked with predicting whether a patient will be readmitted within 30 days after hospital discharge based on EHR data."
            }
            Task::Los => {
                "You are tasked with predicting the patient's length of hospital stay based on EHR data."
            }
            Task::Generic => {
                "You are tasked with making a prediction for the target case based on the provided records."
            }
        }
    }

    pub fn response_format(&self) -> &'static str {
        match self {
            Task::Mortality => {
                "Provide only a floating-point number between 0 and 1 representing the predicted probability of mortality (a higher value indicates a higher likelihood of death). Do not provide any reasoning, explanation, or additional text. Output only the numerical value. Example: 0.XX"
            }
            Task::Readmission => {
                "Provide only a floating-point number between 0 and 1 representing the predicted probability of 30-day readmission after discharge (including cases where the patient dies within 30 days, which are counted as readmission events). Do not provide any reasoning, explanation, or additional text. Output only the numerical value. Example: 0.XX"
            }
            Task::Los => {
                "Provide only a single letter (A, B, C, or D) representing the predicted length-of-stay category: A: less than 3 days; B: 3 to 7 days; C: 7 to 14 days; D: more than 14 days. Do not provide any reasoning, explanation, or additional text. Output only the letter (A, B, C, or D). Example: B"
            }
            Task::Generic => {
                "Provide only the answer in the requested format, with no additional text."
            }
        }
    }
}

/// Optional per-query metadata for templates that use the `{LENGTH}` and
/// `{RECORD_TIME_LIST}` placeholders. The built-in templates do not; the
/// serialized record text already carries that information.
#[derive(Debug, Clone, Default)]
pub struct PatientMeta {
    pub length: Option<String>,
    pub record_time_list: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub task: Task,
    pub preamble: String,
    pub examples_header: String,
    pub example_block: String,
    pub target_block: String,
}

impl PromptTemplate {
    /// Built-in template for a task.
    pub fn for_task(task: Task) -> Self {
        Self::parse(DEFAULT_TEMPLATE, task).expect("built-in template is well-formed")
    }

    /// Parses the sectioned template format: `[preamble]`, `[examples_header]`,
    /// `[example]`, `[target]`, each followed by its text.
    pub fn parse(text: &str, task: Task) -> Result<Self, TemplateError> {
        let mut sections: std::collections::HashMap<String, String> =
            std::collections::HashMap::new();
        let mut current: Option<String> = None;
        let mut buf = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                if let Some(name) = current.take() {
                    sections.insert(name, buf.trim_end().to_string());
                }
                buf.clear();
                current = Some(trimmed[1..trimmed.len() - 1].to_string());
            } else if current.is_some() {
                buf.push_str(line);
                buf.push('\n');
            }
        }
        if let Some(name) = current.take() {
            sections.insert(name, buf.trim_end().to_string());
        }
        let take = |name: &str| {
            sections
                .get(name)
                .cloned()
                .ok_or_else(|| TemplateError::MissingSection(name.to_string()))
        };
        Ok(PromptTemplate {
            task,
            preamble: take("preamble")?,
            examples_header: take("examples_header")?,
            example_block: take("example")?,
            target_block: take("target")?,
        })
    }

    pub fn from_file(path: &Path, task: Task) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, task)
    }

    /// Renders the full prompt: preamble, examples (omitted when `demos` is
    /// empty), then the target block ending at "Your Answer:".
    pub fn render(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<String, TemplateError> {
        self.render_with(query, demos, &PatientMeta::default())
    }

    pub fn render_with(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        meta: &PatientMeta,
    ) -> Result<String, TemplateError> {
        let mut prompt = self.render_context_with(demos, meta)?;
        prompt.push_str(&self.render_target(query)?);
        Ok(prompt)
    }

    /// Renders everything before the target block. The result always ends
    /// with a blank line so the target starts at a clean token boundary.
    pub fn render_context(&self, demos: &[&InstanceRecord]) -> Result<String, TemplateError> {
        self.render_context_with(demos, &PatientMeta::default())
    }

    pub fn render_context_with(
        &self,
        demos: &[&InstanceRecord],
        meta: &PatientMeta,
    ) -> Result<String, TemplateError> {
        let mut out = substitute(&self.preamble, &|name| self.lookup(name, meta))?;
        out.push_str("\n\n");
        if !demos.is_empty() {
            out.push_str(&substitute(&self.examples_header, &|name| {
                self.lookup(name, meta)
            })?);
            out.push_str("\n\n");
            for (i, demo) in demos.iter().enumerate() {
                let index = (i + 1).to_string();
                let label = demo.label.to_string();
                let block = substitute(&self.example_block, &|name| match name {
                    "INDEX" => Some(index.clone()),
                    "RECORD" => Some(demo.record_text.clone()),
                    "LABEL" => Some(label.clone()),
                    _ => self.lookup(name, meta),
                })?;
                out.push_str(&block);
                out.push_str("\n\n");
            }
        }
        Ok(out)
    }

    fn render_target(&self, query: &Query) -> Result<String, TemplateError> {
        substitute(&self.target_block, &|name| match name {
            "RECORD" => Some(query.record_text.clone()),
            _ => self.lookup(name, &PatientMeta::default()),
        })
    }

    /// Builds the prompt used for conditional scoring: everything up to and
    /// including the query record, with nothing after it. Returns the text
    /// and the byte offset where the query record starts, so a scorer can
    /// sum token losses over exactly the query span.
    pub fn scoring_prompt(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<(String, usize), TemplateError> {
        let head = match self.target_block.find("{RECORD}") {
            Some(pos) => &self.target_block[..pos],
            None => return Err(TemplateError::UnresolvedPlaceholder("RECORD".into())),
        };
        let mut full = self.render_context(demos)?;
        full.push_str(&substitute(head, &|name| {
            self.lookup(name, &PatientMeta::default())
        })?);
        let span_start = full.len();
        full.push_str(&query.record_text);
        Ok((full, span_start))
    }

    fn lookup(&self, name: &str, meta: &PatientMeta) -> Option<String> {
        match name {
            "TASK_DESCRIPTION" => Some(self.task.description().to_string()),
            "RESPONSE_FORMAT" => Some(self.task.response_format().to_string()),
            "LENGTH" => meta.length.clone(),
            "RECORD_TIME_LIST" => meta.record_time_list.clone(),
            _ => None,
        }
    }
}

/// Single-pass placeholder substitution. `{NAME}` (upper-case with
/// underscores) is replaced via the resolver; substituted values are not
/// rescanned. An unknown or unresolvable name is an error.
fn substitute(
    template: &str,
    resolve: &dyn Fn(&str) -> Option<String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + end];
                if !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_uppercase() || c == '_' || c.is_ascii_digit())
                {
                    match resolve(name) {
                        Some(value) => {
                            out.push_str(&value);
                            i += end + 2;
                            continue;
                        }
                        None => return Err(TemplateError::UnresolvedPlaceholder(name.to_string())),
                    }
                }
            }
        }
        let ch = template[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// A parsed model reply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    /// Probability in [0, 1] for binary tasks.
    Probability(f64),
    /// Class index for categorical tasks (A -> 0, B -> 1, ...).
    Class(usize),
}

/// Parses a model reply for the given task. Leading/trailing whitespace is
/// tolerated; anything else is a parse error the caller maps to a default.
pub fn parse_prediction(task: Task, reply: &str) -> Result<Prediction, PredictionParseError> {
    let trimmed = reply.trim();
    match task {
        Task::Mortality | Task::Readmission | Task::Generic => {
            let value: f64 = trimmed.parse().map_err(|_| PredictionParseError {
                reply: reply.to_string(),
                reason: "not a number".into(),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(PredictionParseError {
                    reply: reply.to_string(),
                    reason: "probability outside [0, 1]".into(),
                });
            }
            Ok(Prediction::Probability(value))
        }
        Task::Los => match trimmed {
            "A" => Ok(Prediction::Class(0)),
            "B" => Ok(Prediction::Class(1)),
            "C" => Ok(Prediction::Class(2)),
            "D" => Ok(Prediction::Class(3)),
            _ => Err(PredictionParseError {
                reply: reply.to_string(),
                reason: "expected a single letter A-D".into(),
            }),
        },
    }
}

/// Formats a prediction the way the response format asks for it.
pub fn format_prediction(prediction: &Prediction) -> String {
    match prediction {
        Prediction::Probability(p) => format!("{p:.4}"),
        Prediction::Class(c) => ["A", "B", "C", "D"][*c].to_string(),
    }
}

/// Rough prompt size: whitespace-delimited token count. No truncation is
/// performed anywhere; the caller decides what to do with long prompts.
pub fn length_estimate(prompt: &str) -> usize {
    prompt.split_whitespace().count()
}
