use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use qgrank_core::eval::{copy_rate_report, tokenize, CopyRateReport, TemplateCount};
use qgrank_core::formats::{self, NBestRecord, RerankedCandidateRecord, RerankedRecord, FORMAT_VERSION};
use qgrank_core::rerank::RerankedList;
use qgrank_core::{
    corpus_bleu, count_templates, decode_nbest, default_templates, rerank, rerank_delta, BleuReport,
    DecodingTrace, Example, GeneratorModel, QaOracle, RecordingModel, ReplayModel, ReplayQaOracle,
    RerankDelta, TemplatePattern, ToyModel, ToySpanOracle, Vocabulary,
};

use crate::config::{ModelSource, OracleSource, RunConfig};
use crate::error::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::Data)
}

fn write_records<T: Serialize>(path: Option<&Path>, records: &[T]) -> Result<(), CliError> {
    let result = match path {
        Some(p) => formats::write_jsonl(create(p)?, records),
        None => formats::write_jsonl(io::stdout().lock(), records),
    };
    result.context("write failed").map_err(CliError::Data)
}

fn load_examples(path: &Path) -> Result<Vec<Example>, CliError> {
    formats::load_examples(path)
        .with_context(|| format!("reading examples {}", path.display()))
        .map_err(CliError::Data)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary {}", path.display()))
        .map_err(CliError::Data)?;
    Vocabulary::from_id_order(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
        .with_context(|| format!("vocabulary {}", path.display()))
        .map_err(CliError::Data)
}

fn load_model(cfg: &RunConfig) -> Result<Box<dyn GeneratorModel>, CliError> {
    match &cfg.model {
        None => Err(CliError::Usage(
            "decode needs --model toy:<file> or replay:<file>".into(),
        )),
        Some(ModelSource::Toy(path)) => {
            let model = ToyModel::load(path)
                .with_context(|| format!("reading toy model {}", path.display()))
                .map_err(CliError::Data)?;
            Ok(Box::new(model))
        }
        Some(ModelSource::Replay(path)) => {
            let vocab_path = cfg
                .vocab
                .as_deref()
                .ok_or_else(|| CliError::Usage("replay models need --vocab <file>".into()))?;
            let vocab = load_vocab(vocab_path)?;
            let trace = qgrank_core::load_trace(path, &vocab)
                .with_context(|| format!("reading trace {}", path.display()))
                .map_err(CliError::Data)?;
            Ok(Box::new(ReplayModel::new(vocab, trace)))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DecodeSummary {
    pub examples: usize,
    pub candidates: usize,
    pub recorded_steps: Option<usize>,
}

pub fn decode(
    examples_path: &Path,
    cfg: &RunConfig,
    output: Option<&Path>,
    record_trace: Option<&Path>,
) -> Result<DecodeSummary, CliError> {
    let examples = load_examples(examples_path)?;
    let model = load_model(cfg)?;
    let recorder = record_trace.map(|_| RecordingModel::new(model.as_ref()));
    let active: &dyn GeneratorModel = match &recorder {
        Some(r) => r,
        None => model.as_ref(),
    };

    let results: Vec<_> = examples
        .par_iter()
        .map(|ex| decode_nbest(active, ex, &cfg.beam, &cfg.copy))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(NBestRecord::from(&r?));
    }
    write_records(output, &records)?;

    let mut recorded_steps = None;
    if let (Some(path), Some(rec)) = (record_trace, recorder) {
        let trace: DecodingTrace = rec.into_trace();
        recorded_steps = Some(trace.len());
        formats::write_jsonl(create(path)?, &trace.to_records())
            .context("writing trace")
            .map_err(CliError::Data)?;
    }
    Ok(DecodeSummary {
        examples: records.len(),
        candidates: records.iter().map(|r| r.candidates.len()).sum(),
        recorded_steps,
    })
}

fn load_oracle(cfg: &RunConfig) -> Result<Box<dyn QaOracle>, CliError> {
    match &cfg.oracle {
        OracleSource::ToySpan(n) => Ok(Box::new(ToySpanOracle::new(*n))),
        OracleSource::Replay(path) => {
            let oracle = ReplayQaOracle::load(path)
                .with_context(|| format!("reading QA predictions {}", path.display()))
                .map_err(CliError::Data)?;
            Ok(Box::new(oracle))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RerankSummary {
    pub lists: usize,
    pub top1_changed: usize,
    pub lambda2: f64,
}

fn reranked_record(list: &RerankedList, lambda2: f64) -> RerankedRecord {
    RerankedRecord {
        format_version: FORMAT_VERSION,
        id: list.id.clone(),
        lambda2,
        top1_changed: list.top1_changed(),
        candidates: list
            .candidates
            .iter()
            .map(|c| RerankedCandidateRecord {
                tokens: c.candidate.tokens.clone(),
                log_prob: c.candidate.log_prob,
                aligned_positions: c.candidate.aligned_positions.clone(),
                complete: c.candidate.complete,
                predicted_answer: c.predicted_answer.clone(),
                score1: c.score.score1,
                score2: c.score.score2,
                combined: c.score.combined,
                old_rank: c.old_rank,
                new_rank: c.new_rank,
            })
            .collect(),
    }
}

pub fn rerank_cmd(
    nbest_path: &Path,
    examples_path: &Path,
    cfg: &RunConfig,
    output: Option<&Path>,
    report: Option<&Path>,
) -> Result<RerankSummary, CliError> {
    let lists = formats::load_nbest(nbest_path)
        .with_context(|| format!("reading n-best lists {}", nbest_path.display()))
        .map_err(CliError::Data)?;
    let examples = load_examples(examples_path)?;
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let oracle = load_oracle(cfg)?;

    let mut jobs = Vec::with_capacity(lists.len());
    for list in &lists {
        let ex = by_id.get(list.id.as_str()).ok_or_else(|| {
            CliError::Data(anyhow!(
                "n-best id {:?} not found in {}",
                list.id,
                examples_path.display()
            ))
        })?;
        jobs.push((list, *ex));
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(list, ex)| rerank(list, &ex.passage, &ex.answer_text(), oracle.as_ref(), &cfg.rerank))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(reranked_record(&r.map_err(CliError::data)?, cfg.rerank.lambda2));
    }
    write_records(output, &records)?;

    let summary = RerankSummary {
        lists: records.len(),
        top1_changed: records.iter().filter(|r| r.top1_changed).count(),
        lambda2: cfg.rerank.lambda2,
    };
    if let Some(path) = report {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &summary)
            .map_err(io::Error::from)
            .and_then(|_| writeln!(w))
            .context("writing rerank report")
            .map_err(CliError::Data)?;
    }
    Ok(summary)
}

/// Question tokens from any of the supported record shapes: n-best or
/// reranked lists (first candidate), examples (`reference_question`), or
/// plain `{"tokens": [...]}` / `{"question": "..."}` records.
fn question_of(v: &Value) -> Option<Vec<String>> {
    let strings = |a: &Value| -> Option<Vec<String>> {
        a.as_array()?
            .iter()
            .map(|t| t.as_str().map(str::to_owned))
            .collect()
    };
    if let Some(c) = v.get("candidates") {
        return strings(c.get(0)?.get("tokens")?);
    }
    if let Some(q) = v.get("reference_question") {
        return strings(q);
    }
    if let Some(t) = v.get("tokens") {
        return strings(t);
    }
    v.get("question")?
        .as_str()
        .map(|s| s.split_whitespace().map(str::to_owned).collect())
}

fn load_questions(path: &Path, lowercase: bool) -> Result<Vec<(String, Vec<String>)>, CliError> {
    let records = formats::read_jsonl::<Value>(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)?;
    records
        .into_iter()
        .map(|(line, v)| {
            let id = v
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| CliError::Data(anyhow!("{}:{line}: record has no \"id\"", path.display())))?
                .to_owned();
            let q = question_of(&v).ok_or_else(|| {
                CliError::Data(anyhow!(
                    "{}:{line}: record has no question tokens",
                    path.display()
                ))
            })?;
            let q = if lowercase {
                tokenize(&q.join(" "), true)
            } else {
                q
            };
            Ok((id, q))
        })
        .collect()
}

fn check_aligned(
    left: &[(String, Vec<String>)],
    right: &[(String, Vec<String>)],
    what: &str,
) -> Result<(), CliError> {
    if left.len() != right.len() {
        return Err(CliError::Data(anyhow!(
            "candidates have {} records but {what} has {}",
            left.len(),
            right.len()
        )));
    }
    if let Some((i, (a, b))) = left.iter().zip(right).enumerate().find(|(_, (a, b))| a.0 != b.0) {
        return Err(CliError::Data(anyhow!(
            "record {} is {:?} in candidates but {:?} in {what}",
            i + 1,
            a.0,
            b.0
        )));
    }
    Ok(())
}

pub struct EvalInputs<'a> {
    pub candidates: &'a Path,
    pub references: &'a Path,
    pub passages: Option<&'a Path>,
    /// `Some(None)` selects the built-in templates.
    pub templates: Option<Option<&'a Path>>,
    pub before: Option<&'a Path>,
    pub lowercase: bool,
    pub max_n: usize,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub bleu: BleuReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<Vec<TemplateCount>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copy_rate: Option<CopyRateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rerank_delta: Option<RerankDelta>,
}

impl EvalReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.bleu);
        if let Some(t) = &self.templates {
            for c in t {
                let slots: Vec<String> = c
                    .by_slot
                    .iter()
                    .map(|(k, n)| {
                        if k.is_empty() {
                            n.to_string()
                        } else {
                            format!("{k}:{n}")
                        }
                    })
                    .collect();
                s += &format!("template[{}] = {} ({})\n", c.pattern, c.total(), slots.join("/"));
            }
            s += &format!(
                "template_total = {}\n",
                t.iter().map(TemplateCount::total).sum::<usize>()
            );
        }
        if let Some(c) = &self.copy_rate {
            s += &format!("copy_rate_mean = {:.6}\n", c.mean);
        }
        if let Some(d) = &self.rerank_delta {
            s += &format!(
                "rerank_improved = {}\nrerank_worsened = {}\nrerank_unchanged = {}\n",
                d.improved, d.worsened, d.unchanged
            );
        }
        s
    }
}

fn load_templates(path: &Path) -> Result<Vec<TemplatePattern>, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading templates {}", path.display()))
        .map_err(CliError::Data)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| TemplatePattern::parse(l).map_err(CliError::data))
        .collect()
}

pub fn eval(inputs: &EvalInputs<'_>, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let cands = load_questions(inputs.candidates, inputs.lowercase)?;
    let refs = load_questions(inputs.references, inputs.lowercase)?;
    check_aligned(&cands, &refs, "references")?;
    let cand_q: Vec<Vec<String>> = cands.iter().map(|(_, q)| q.clone()).collect();
    let ref_q: Vec<Vec<String>> = refs.iter().map(|(_, q)| q.clone()).collect();
    let bleu = corpus_bleu(&cand_q, &ref_q, inputs.max_n).map_err(CliError::data)?;

    let templates = match inputs.templates {
        None => None,
        Some(source) => {
            let patterns = match source {
                Some(p) => load_templates(p)?,
                None => default_templates(),
            };
            Some(count_templates(&cand_q, &patterns))
        }
    };

    let copy_rate = match inputs.passages {
        None => None,
        Some(path) => {
            let examples = load_examples(path)?;
            let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
            let passages = cands
                .iter()
                .map(|(id, _)| {
                    by_id
                        .get(id.as_str())
                        .map(|e| tokenize(&e.passage.join(" "), inputs.lowercase))
                        .ok_or_else(|| CliError::Data(anyhow!("no passage for {id:?} in {}", path.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(copy_rate_report(&cand_q, &passages, cfg.copy.gamma).map_err(CliError::data)?)
        }
    };

    let rerank_delta = match inputs.before {
        None => None,
        Some(path) => {
            let before = load_questions(path, inputs.lowercase)?;
            check_aligned(&cands, &before, "before")?;
            let before_q: Vec<Vec<String>> = before.into_iter().map(|(_, q)| q).collect();
            Some(rerank_delta(&before_q, &cand_q, &ref_q).map_err(CliError::data)?)
        }
    };

    Ok(EvalReport {
        bleu,
        templates,
        copy_rate,
        rerank_delta,
    })
}

pub fn write_report(report: &EvalReport, output: Option<&Path>, json: Option<&Path>) -> Result<(), CliError> {
    let text = report.to_text();
    match output {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .context("writing report")
                .map_err(CliError::Data)?;
        }
        None => print!("{text}"),
    }
    if let Some(p) = json {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, report)
            .map_err(io::Error::from)
            .and_then(|_| writeln!(w))
            .context("writing JSON report")
            .map_err(CliError::Data)?;
    }
    Ok(())
}

pub fn toy_train(corpus: &Path, smoothing: f64, output: &Path) -> Result<(usize, usize), CliError> {
    let examples = load_examples(corpus)?;
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(CliError::Usage(format!(
            "--smoothing must be > 0 (got {smoothing})"
        )));
    }
    let model = ToyModel::train(&examples, smoothing).map_err(CliError::data)?;
    let mut w = create(output)?;
    w.write_all(model.to_json().as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .context("writing toy model")
        .map_err(CliError::Data)?;
    Ok((examples.len(), model.vocab().len()))
}
