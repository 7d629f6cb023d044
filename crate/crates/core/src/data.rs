//! Datasets, tokenization, seeded samplers and the synthetic corpus generator.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TokenizedExample;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SEP_ID: usize = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[SEP]"];

/// Default truncation length in tokens.
pub const DEFAULT_MAX_LEN: usize = 64;

/// Minority class size used by [`sample_imbalanced`].
pub const IMBALANCE_MINORITY: usize = 32;

/// Imbalance degrees used by the imbalance experiments.
pub const IMBALANCE_GRID: [usize; 5] = [1, 3, 5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    #[default]
    Accuracy,
    MacroF1,
    Matthews,
}

impl TaskMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMetric::Accuracy => "accuracy",
            TaskMetric::MacroF1 => "macro_f1",
            TaskMetric::Matthews => "matthews",
        }
    }
}

impl std::str::FromStr for TaskMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "accuracy" | "acc" => Ok(TaskMetric::Accuracy),
            "macro_f1" | "f1" => Ok(TaskMetric::MacroF1),
            "matthews" | "mcc" => Ok(TaskMetric::Matthews),
            other => Err(format!("unknown task metric \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Text {
    Single { text: String },
    Pair { text_a: String, text_b: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: Text,
    /// Zero-based index into the dataset's label vocabulary.
    pub label: usize,
}

impl Example {
    pub fn display_text(&self) -> String {
        match &self.text {
            Text::Single { text } => text.clone(),
            Text::Pair { text_a, text_b } => format!("{text_a} [SEP] {text_b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub label_vocab: Vec<String>,
    pub task_metric: TaskMetric,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, label_vocab: Vec<String>, task_metric: TaskMetric) -> Result<Self> {
        let ds = Self { examples, label_vocab, task_metric };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_vocab.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.label_vocab {
            if !seen.insert(name) {
                return Err(Error::DuplicateLabel(name.clone()));
            }
        }
        if let Some(ex) = self.examples.iter().find(|e| e.label >= self.label_vocab.len()) {
            return Err(Error::IndexOutOfRange { index: ex.label, classes: self.label_vocab.len() });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.label_vocab.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Example indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes()];
        for (i, ex) in self.examples.iter().enumerate() {
            out[ex.label].push(i);
        }
        out
    }

    /// A dataset with the same label vocabulary holding the given examples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            label_vocab: self.label_vocab.clone(),
            task_metric: self.task_metric,
        }
    }

    /// Re-indexes labels against another vocabulary (by name).
    pub fn align_labels(&self, vocab: &[String]) -> Result<Dataset> {
        let lookup: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let examples = self
            .examples
            .iter()
            .enumerate()
            .map(|(line, ex)| {
                let name = &self.label_vocab[ex.label];
                let label = *lookup.get(name.as_str()).ok_or_else(|| Error::UnknownLabel { line: line + 1, label: name.clone() })?;
                Ok(Example { text: ex.text.clone(), label })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { examples, label_vocab: vocab.to_vec(), task_metric: self.task_metric })
    }
}

fn label_from_json(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn string_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str, line: usize) -> Result<Option<String>> {
    match obj.get(key) {
        None => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::Parse { line, message: format!("field \"{key}\" must be a string") }),
    }
}

/// Reads a labels sidecar: one class name per line, blank lines ignored.
pub fn load_labels(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(labels)
}

/// Loads a JSONL dataset.
///
/// Each line holds `"text"` or `"text_a"` + `"text_b"`, and `"label"`. With a
/// sidecar vocabulary every label must appear in it; otherwise labels are
/// numbered in order of first appearance.
pub fn load_jsonl(path: &Path, labels: Option<&[String]>) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&raw, labels)
}

pub fn parse_jsonl(raw: &str, labels: Option<&[String]>) -> Result<Dataset> {
    let mut vocab: Vec<String> = labels.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    if index.len() != vocab.len() {
        let dup = vocab.iter().find(|s| vocab.iter().filter(|t| t == s).count() > 1).cloned().unwrap_or_default();
        return Err(Error::DuplicateLabel(dup));
    }
    let mut examples = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse { line: line_no, message: "expected a JSON object".into() })?;
        let text = match string_field(obj, "text", line_no)? {
            Some(text) => Text::Single { text },
            None => {
                let a = string_field(obj, "text_a", line_no)?.ok_or_else(|| Error::MissingField { line: line_no, field: "text".into() })?;
                let b =
                    string_field(obj, "text_b", line_no)?.ok_or_else(|| Error::MissingField { line: line_no, field: "text_b".into() })?;
                Text::Pair { text_a: a, text_b: b }
            }
        };
        let label_value = obj.get("label").ok_or_else(|| Error::MissingField { line: line_no, field: "label".into() })?;
        let name = label_from_json(label_value)
            .ok_or_else(|| Error::Parse { line: line_no, message: "label must be a string or number".into() })?;
        let label = match index.get(&name) {
            Some(&i) => i,
            None if labels.is_some() => return Err(Error::UnknownLabel { line: line_no, label: name }),
            None => {
                vocab.push(name.clone());
                index.insert(name, vocab.len() - 1);
                vocab.len() - 1
            }
        };
        examples.push(Example { text, label });
    }
    if vocab.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(examples, vocab, TaskMetric::default())
}

/// Serializes a dataset as JSONL, one example per line.
pub fn to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for ex in &ds.examples {
        let mut obj = serde_json::Map::new();
        match &ex.text {
            Text::Single { text } => {
                obj.insert("text".into(), text.clone().into());
            }
            Text::Pair { text_a, text_b } => {
                obj.insert("text_a".into(), text_a.clone().into());
                obj.insert("text_b".into(), text_b.clone().into());
            }
        }
        obj.insert("label".into(), ds.label_vocab[ex.label].clone().into());
        out.push_str(&serde_json::Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

/// Lowercases and splits on whitespace; every punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token vocabulary. Ids 0–2 are reserved for padding, unknown and separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }
}

impl Vocab {
    /// Builds a vocabulary from a training split, ids in first-appearance order.
    pub fn build(ds: &Dataset) -> Vocab {
        let mut vocab = Vocab::default();
        for ex in &ds.examples {
            let texts: Vec<&str> = match &ex.text {
                Text::Single { text } => vec![text],
                Text::Pair { text_a, text_b } => vec![text_a, text_b],
            };
            for t in texts {
                for tok in tokenize(t) {
                    if !vocab.index.contains_key(&tok) {
                        vocab.index.insert(tok.clone(), vocab.tokens.len());
                        vocab.tokens.push(tok);
                    }
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids for one example; pairs are packed as `a [SEP] b`, then truncated.
    pub fn encode(&self, text: &Text, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = match text {
            Text::Single { text } => tokenize(text).iter().map(|t| self.id(t)).collect(),
            Text::Pair { text_a, text_b } => {
                let mut ids: Vec<usize> = tokenize(text_a).iter().map(|t| self.id(t)).collect();
                ids.push(SEP_ID);
                ids.extend(tokenize(text_b).iter().map(|t| self.id(t)));
                ids
            }
        };
        ids.truncate(max_len);
        ids
    }

    pub fn tokenize_dataset(&self, ds: &Dataset, max_len: usize) -> Result<Vec<TokenizedExample>> {
        if max_len == 0 {
            return Err(Error::ConfigInvalid("max_len must be at least 1".into()));
        }
        ds.examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let token_ids = self.encode(&ex.text, max_len);
                // a pair of empty texts packs to a lone separator, which carries no content
                if token_ids.is_empty() || token_ids.iter().all(|&t| t == SEP_ID) {
                    return Err(Error::EmptyText(i));
                }
                Ok(TokenizedExample { token_ids, label: ex.label, raw_text: ex.display_text() })
            })
            .collect()
    }
}

/// Builds the vocabulary from `train` and tokenizes it.
pub fn build_vocab_and_tokenize(train: &Dataset, max_len: usize) -> Result<(Vec<TokenizedExample>, Vocab)> {
    let vocab = Vocab::build(train);
    let examples = vocab.tokenize_dataset(train, max_len)?;
    Ok((examples, vocab))
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded stratified split: `round(fraction · n_c)` examples of each class go to
/// dev (at least one, and at least one left for training when the class has two or more).
pub fn stratified_split(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng(seed, 11);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for mut idx in ds.indices_by_class() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut take = (fraction * n as f64).round() as usize;
        take = take.max(1);
        if n >= 2 {
            take = take.min(n - 1);
        } else {
            take = 0;
        }
        dev.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    dev.sort_unstable();
    (train, dev)
}

/// Draws `k` training and `k` disjoint dev examples per class without replacement.
pub fn sample_fewshot(ds: &Dataset, k: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = rng(seed, 21);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (c, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.len() < 2 * k || k == 0 {
            return Err(Error::InsufficientClassCount { class: ds.label_vocab[c].clone(), have: idx.len(), need: 2 * k.max(1) });
        }
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..k]);
        dev.extend_from_slice(&idx[k..2 * k]);
    }
    Ok((ds.subset(&train), ds.subset(&dev)))
}

/// Binary imbalanced subsample: 32 minority examples and `32·rho` majority ones.
///
/// The minority class is `minority` when given, otherwise the class with fewer
/// available examples (class index 1 on ties).
pub fn sample_imbalanced(ds: &Dataset, rho: usize, seed: u64, minority: Option<usize>) -> Result<Dataset> {
    if ds.classes() != 2 {
        return Err(Error::NotBinary(ds.classes()));
    }
    if rho == 0 {
        return Err(Error::ConfigInvalid("imbalance degree must be at least 1".into()));
    }
    let by_class = ds.indices_by_class();
    let minority = match minority {
        Some(m) if m < 2 => m,
        Some(m) => return Err(Error::IndexOutOfRange { index: m, classes: 2 }),
        None => {
            if by_class[0].len() < by_class[1].len() {
                0
            } else {
                1
            }
        }
    };
    let majority = 1 - minority;
    let need = [(minority, IMBALANCE_MINORITY), (majority, IMBALANCE_MINORITY * rho)];
    let mut rng = rng(seed, 31);
    let mut chosen = Vec::new();
    for (class, n) in need {
        let mut idx = by_class[class].clone();
        if idx.len() < n {
            return Err(Error::InsufficientClassCount { class: ds.label_vocab[class].clone(), have: idx.len(), need: n });
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..n]);
    }
    chosen.sort_unstable();
    Ok(ds.subset(&chosen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub vocab_per_class: usize,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 2, per_class: 100, vocab_per_class: 8, noise_rate: 0.0, seed: 0 }
    }
}

/// Number of class-neutral filler words shared by every class.
pub const SYNTHETIC_FILLERS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    /// Label the keyword rule assigns to each example (before label noise).
    pub clean_labels: Vec<usize>,
    /// Expected accuracy of the keyword rule against the (noisy) labels.
    pub bayes_accuracy: f64,
}

pub fn synthetic_keyword(class: usize, j: usize) -> String {
    format!("k{class}w{j}")
}

/// The generator's decision rule: the class owning the keywords in `text`.
pub fn synthetic_rule(text: &str, classes: usize) -> Option<usize> {
    tokenize(text).iter().find_map(|tok| {
        let rest = tok.strip_prefix('k')?;
        let (c, _) = rest.split_once('w')?;
        c.parse::<usize>().ok().filter(|&c| c < classes)
    })
}

/// Generates a keyword corpus whose optimal decision rule is known.
///
/// Each text has 3–10 tokens drawn from its class keywords and the shared
/// fillers, with at least one keyword. With probability `noise_rate` the label
/// is flipped to a different class chosen uniformly, so the keyword rule
/// reaches accuracy `1 - noise_rate` in expectation.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.classes < 2 {
        return Err(Error::SpecInvalid("need at least 2 classes".into()));
    }
    if spec.per_class == 0 || spec.vocab_per_class == 0 {
        return Err(Error::SpecInvalid("per_class and vocab_per_class must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&spec.noise_rate) {
        return Err(Error::SpecInvalid(format!("noise_rate must lie in [0, 0.5), got {}", spec.noise_rate)));
    }
    let mut rng = rng(spec.seed, 41);
    let mut rows = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            let len = rng.gen_range(3..=10);
            let forced = rng.gen_range(0..len);
            let words: Vec<String> = (0..len)
                .map(|pos| {
                    if pos == forced || rng.gen_bool(0.5) {
                        synthetic_keyword(class, rng.gen_range(0..spec.vocab_per_class))
                    } else {
                        format!("f{}", rng.gen_range(0..SYNTHETIC_FILLERS))
                    }
                })
                .collect();
            let mut label = class;
            if rng.gen_bool(spec.noise_rate) {
                let shift = rng.gen_range(1..spec.classes);
                label = (class + shift) % spec.classes;
            }
            rows.push((words.join(" "), label, class));
        }
    }
    rows.shuffle(&mut rng);
    let label_vocab = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let examples = rows.iter().map(|(text, label, _)| Example { text: Text::Single { text: text.clone() }, label: *label }).collect();
    let clean_labels = rows.iter().map(|r| r.2).collect();
    Ok(SyntheticCorpus {
        dataset: Dataset::new(examples, label_vocab, TaskMetric::Accuracy)?,
        clean_labels,
        bayes_accuracy: 1.0 - spec.noise_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(text: &str, label: usize) -> Example {
        Example { text: Text::Single { text: text.into() }, label }
    }

    #[test]
    fn parse_two_lines_in_appearance_order() {
        let ds = parse_jsonl("{\"text\":\"a b\",\"label\":\"neg\"}\n{\"text\":\"c\",\"label\":\"pos\"}\n", None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label_vocab, vec!["neg", "pos"]);
        assert_eq!(ds.examples[1].label, 1);
    }

    #[test]
    fn parse_missing_label_reports_line() {
        let err = parse_jsonl("{\"text\":\"a\",\"label\":\"x\"}\n{\"text\":\"b\"}\n", None).unwrap_err();
        assert!(matches!(err, Error::MissingField { line: 2, ref field } if field == "label"));
        let err = parse_jsonl("{\"text\":\"a\",\"label\":\"x\"}\nnot json\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn sidecar_vocab_orders_and_rejects() {
        let labels = vec!["pos".to_string(), "neg".to_string()];
        let ds = parse_jsonl("{\"text\":\"a\",\"label\":\"neg\"}\n", Some(&labels)).unwrap();
        assert_eq!(ds.examples[0].label, 1);
        let err = parse_jsonl("{\"text\":\"a\",\"label\":\"meh\"}\n", Some(&labels)).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { line: 1, .. }));
    }

    #[test]
    fn pair_packing_uses_separator() {
        let ds = parse_jsonl("{\"text_a\":\"one two\",\"text_b\":\"three\",\"label\":1}\n", None).unwrap();
        let vocab = Vocab::build(&ds);
        let ids = vocab.encode(&ds.examples[0].text, 64);
        assert_eq!(ids, vec![vocab.id("one"), vocab.id("two"), SEP_ID, vocab.id("three")]);
        assert_eq!(ds.label_vocab, vec!["1"]);
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Good movie!"), vec!["good", "movie", "!"]);
        assert_eq!(tokenize("  it's,fine "), vec!["it", "'", "s", ",", "fine"]);
        let ds = Dataset::new(vec![single("good movie", 0)], vec!["a".into()], TaskMetric::Accuracy).unwrap();
        let vocab = Vocab::build(&ds);
        assert_eq!(vocab.encode(&Text::Single { text: "good unseen".into() }, 64), vec![3, UNK_ID]);
        let long = Text::Single { text: "good ".repeat(100) };
        assert_eq!(vocab.encode(&long, 7).len(), 7);
        let empty = Dataset::new(vec![single("   ", 0)], vec!["a".into()], TaskMetric::Accuracy).unwrap();
        assert!(matches!(vocab.tokenize_dataset(&empty, 8), Err(Error::EmptyText(0))));
    }

    #[test]
    fn vocab_reserved_ids_and_determinism() {
        let ds = Dataset::new(vec![single("b a", 0), single("a c", 0)], vec!["x".into()], TaskMetric::Accuracy).unwrap();
        let v1 = Vocab::build(&ds);
        assert_eq!(v1.token(0), Some("[PAD]"));
        assert_eq!(v1.token(1), Some("[UNK]"));
        assert_eq!(v1.token(2), Some("[SEP]"));
        assert_eq!((v1.id("b"), v1.id("a"), v1.id("c")), (3, 4, 5));
        assert_eq!(v1, Vocab::build(&ds));
    }

    fn corpus(per_class: usize, classes: usize) -> Dataset {
        gen_synthetic(&SyntheticSpec { classes, per_class, ..SyntheticSpec::default() }).unwrap().dataset
    }

    #[test]
    fn fewshot_counts_disjoint_and_seeded() {
        let ds = corpus(50, 2);
        let (train, dev) = sample_fewshot(&ds, 20, 3).unwrap();
        assert_eq!((train.len(), dev.len()), (40, 40));
        assert_eq!(train.class_counts(), vec![20, 20]);
        let (train2, _) = sample_fewshot(&ds, 20, 3).unwrap();
        assert_eq!(train, train2);
        let tiny =
            Dataset::new(vec![single("a", 0), single("b", 1), single("c", 1)], vec!["x".into(), "y".into()], TaskMetric::Accuracy).unwrap();
        assert!(matches!(sample_fewshot(&tiny, 1, 0), Err(Error::InsufficientClassCount { have: 1, need: 2, .. })));
    }

    #[test]
    fn imbalance_counts() {
        let ds = corpus(700, 2);
        for rho in IMBALANCE_GRID {
            let s = sample_imbalanced(&ds, rho, 5, Some(1)).unwrap();
            assert_eq!(s.class_counts(), vec![32 * rho, 32]);
        }
        let small = corpus(600, 2);
        assert!(matches!(sample_imbalanced(&small, 20, 5, Some(1)), Err(Error::InsufficientClassCount { have: 600, need: 640, .. })));
        assert!(matches!(sample_imbalanced(&corpus(40, 3), 1, 0, None), Err(Error::NotBinary(3))));
    }

    #[test]
    fn stratified_split_five_percent() {
        let ds = corpus(100, 2);
        let (train, dev) = stratified_split(&ds, 0.05, 9);
        assert_eq!(dev.len(), 10);
        assert_eq!(train.len(), 190);
        assert_eq!(ds.subset(&dev).class_counts(), vec![5, 5]);
        assert!(train.iter().all(|i| !dev.contains(i)));
    }

    #[test]
    fn synthetic_rule_is_perfect_without_noise() {
        let c = gen_synthetic(&SyntheticSpec { classes: 3, per_class: 40, seed: 2, ..SyntheticSpec::default() }).unwrap();
        assert_eq!(c.bayes_accuracy, 1.0);
        for ex in &c.dataset.examples {
            assert_eq!(synthetic_rule(&ex.display_text(), 3), Some(ex.label));
        }
        let again = gen_synthetic(&SyntheticSpec { classes: 3, per_class: 40, seed: 2, ..SyntheticSpec::default() }).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn synthetic_noise_flips_labels() {
        let c =
            gen_synthetic(&SyntheticSpec { classes: 2, per_class: 2000, noise_rate: 0.1, seed: 4, ..SyntheticSpec::default() }).unwrap();
        assert!((c.bayes_accuracy - 0.9).abs() < 1e-15);
        let agree = c.dataset.examples.iter().zip(&c.clean_labels).filter(|(e, &l)| e.label == l).count();
        let rate = agree as f64 / c.dataset.len() as f64;
        assert!((rate - 0.9).abs() < 0.02, "rule accuracy {rate}");
        assert!(gen_synthetic(&SyntheticSpec { noise_rate: 0.5, ..SyntheticSpec::default() }).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = parse_jsonl("{\"text\":\"a\",\"label\":\"x\"}\n{\"text_a\":\"b\",\"text_b\":\"c\",\"label\":\"y\"}\n", None).unwrap();
        assert_eq!(parse_jsonl(&to_jsonl(&ds), None).unwrap(), ds);
    }
}
