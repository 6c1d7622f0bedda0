//! Rationale-annotated corpora: JSONL interchange, tokenization, vocabulary,
//! stratified splits and a synthetic keyword corpus.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[MASK]"];
/// Separator between concatenated sentence pairs; never masked.
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    /// Vocabulary indices; empty until the instance is indexed.
    #[serde(default)]
    pub token_ids: Vec<usize>,
    pub gold_label: usize,
    /// 1 for tokens in the human rationale.
    pub rationale: Vec<u8>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn rationale_mask(&self) -> Vec<bool> {
        self.rationale.iter().map(|&r| r == 1).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    tokens: Vec<String>,
    label: i64,
    rationale: Vec<u8>,
}

/// Reads one instance per line: `{"tokens":[..],"label":int,"rationale":[0|1..]}`
/// with an optional `"id"`. Blank lines are skipped. `num_classes`, when
/// given, bounds the accepted labels.
pub fn load_jsonl(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Vec<Instance>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.rationale.len() != rec.tokens.len() {
            return Err(Error::LineLengthMismatch {
                line: line_no,
                tokens: rec.tokens.len(),
                rationale: rec.rationale.len(),
            });
        }
        if rec.rationale.iter().any(|&r| r > 1) {
            return Err(Error::Parse {
                line: line_no,
                message: "rationale values must be 0 or 1".into(),
            });
        }
        let label_ok = rec.label >= 0 && num_classes.map_or(true, |c| (rec.label as usize) < c);
        if !label_ok {
            return Err(Error::UnknownLabel {
                line: line_no,
                label: rec.label,
            });
        }
        let id = rec.id.unwrap_or_else(|| out.len().to_string());
        out.push(Instance {
            id,
            tokens: rec.tokens,
            token_ids: Vec::new(),
            gold_label: rec.label as usize,
            rationale: rec.rationale,
        });
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        let rec = JsonRecord {
            id: Some(inst.id.clone()),
            tokens: inst.tokens.clone(),
            label: inst.gold_label as i64,
            rationale: inst.rationale.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of every token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Tokens seen at least `min_freq` times, ordered by frequency (desc)
    /// then lexically, after the reserved entries.
    pub fn build(instances: &[Instance], min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for inst in instances {
            for t in &inst.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        *self = Self::from_tokens(std::mem::take(&mut self.tokens));
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| match self.get(t) {
                Some(i) if i >= RESERVED.len() => i,
                _ => UNK,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Label-stratified, seed-deterministic three-way split.
///
/// Split sizes follow the largest-remainder rounding of `ratios · n`; within
/// each label, split shares stay within one instance of the ratios.
pub fn split(instances: Vec<Instance>, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| !(r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios.to_vec()));
    }
    let n = instances.len();
    let mut targets = [0usize; 3];
    let mut rema = [(0.0, 0usize); 3];
    for s in 0..3 {
        let exact = ratios[s] * n as f64;
        targets[s] = exact.floor() as usize;
        rema[s] = (exact - exact.floor(), s);
    }
    let mut left = n - targets.iter().sum::<usize>();
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, s) in rema.iter().cycle() {
        if left == 0 {
            break;
        }
        targets[s] += 1;
        left -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: Vec<(usize, Vec<Instance>)> = Vec::new();
    for inst in instances {
        match by_label.iter_mut().find(|(l, _)| *l == inst.gold_label) {
            Some((_, v)) => v.push(inst),
            None => by_label.push((inst.gold_label, vec![inst])),
        }
    }
    by_label.sort_by_key(|(l, _)| *l);
    let mut ordered = Vec::with_capacity(n);
    for (_, mut group) in by_label {
        group.shuffle(&mut rng);
        ordered.extend(group);
    }

    let mut out = Splits::default();
    let mut assigned = [0usize; 3];
    for (p, inst) in ordered.into_iter().enumerate() {
        let progress = (p + 1) as f64 / n as f64;
        let s = (0..3)
            .filter(|&s| assigned[s] < targets[s])
            .max_by(|&a, &b| {
                let da = targets[a] as f64 * progress - assigned[a] as f64;
                let db = targets[b] as f64 * progress - assigned[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .expect("targets sum to n");
        assigned[s] += 1;
        match s {
            0 => out.train.push(inst),
            1 => out.dev.push(inst),
            _ => out.test.push(inst),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub splits: Splits,
    pub vocab: Vocab,
    pub class_names: Vec<String>,
}

impl Corpus {
    /// Builds the vocabulary from the training split and indexes every split.
    pub fn from_splits(name: &str, mut splits: Splits, class_names: Vec<String>, min_freq: usize) -> Self {
        let vocab = Vocab::build(&splits.train, min_freq);
        for inst in splits
            .train
            .iter_mut()
            .chain(splits.dev.iter_mut())
            .chain(splits.test.iter_mut())
        {
            inst.token_ids = vocab.encode(&inst.tokens);
        }
        Self {
            name: name.to_string(),
            splits,
            vocab,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// SHA-256 over the canonical JSON of the corpus, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("corpus serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            classes: 3,
            vocab_size: 200,
            seed: 0,
        }
    }
}

/// Keywords planted for class `c`.
pub fn synth_keywords(classes: usize, vocab_size: usize, c: usize) -> Vec<String> {
    let per_class = ((vocab_size.saturating_sub(10)) / classes).clamp(1, 3);
    (0..per_class).map(|j| format!("kw{c}_{j}")).collect()
}

/// Corpus whose labels are fully determined by planted class keywords.
///
/// Every instance has 8–20 uniformly drawn filler tokens and 1–3 keywords of
/// its class at random positions; the rationale marks exactly the keywords.
/// Labels are balanced and the corpus is split 80/10/10.
pub fn synth_keyword_corpus(spec: SynthSpec) -> Result<Corpus> {
    let SynthSpec {
        n,
        classes,
        vocab_size,
        seed,
    } = spec;
    if classes < 2 {
        return Err(Error::InvalidConfig("synthetic corpus needs ≥ 2 classes".into()));
    }
    if vocab_size <= classes + 10 {
        return Err(Error::InvalidConfig(format!(
            "vocab_size {vocab_size} must exceed classes + 10"
        )));
    }
    let keywords: Vec<Vec<String>> = (0..classes)
        .map(|c| synth_keywords(classes, vocab_size, c))
        .collect();
    let n_fillers = vocab_size - keywords.iter().map(Vec::len).sum::<usize>();
    let fillers: Vec<String> = (0..n_fillers).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut instances = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let n_fill = rng.gen_range(8..=20);
        let n_plant = rng.gen_range(1..=3);
        let mut tokens: Vec<String> = (0..n_fill)
            .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
            .collect();
        let mut rationale = vec![0u8; n_fill];
        for _ in 0..n_plant {
            let kw = keywords[label][rng.gen_range(0..keywords[label].len())].clone();
            let pos = rng.gen_range(0..=tokens.len());
            tokens.insert(pos, kw);
            rationale.insert(pos, 1);
        }
        instances.push(Instance {
            id: format!("synth-{i}"),
            tokens,
            token_ids: Vec::new(),
            gold_label: label,
            rationale,
        });
    }
    let splits = split(instances, [0.8, 0.1, 0.1], seed)?;
    let class_names = (0..classes).map(|c| format!("class{c}")).collect();
    Ok(Corpus::from_splits("synthetic", splits, class_names, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_single_line() {
        let f = write_lines(&[r#"{"tokens":["good","movie"],"label":1,"rationale":[1,0]}"#]);
        let v = load_jsonl(f.path(), Some(2)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tokens, vec!["good", "movie"]);
        assert_eq!(v[0].gold_label, 1);
        assert_eq!(v[0].id, "0");
    }

    #[test]
    fn load_reports_line_of_length_mismatch() {
        let f = write_lines(&[
            r#"{"tokens":["a"],"label":0,"rationale":[0]}"#,
            r#"{"tokens":["good","movie"],"label":1,"rationale":[1,0,0]}"#,
        ]);
        assert!(matches!(
            load_jsonl(f.path(), None),
            Err(Error::LineLengthMismatch { line: 2, tokens: 2, rationale: 3 })
        ));
    }

    #[test]
    fn load_rejects_unknown_label_and_bad_json() {
        let f = write_lines(&[r#"{"tokens":["a"],"label":5,"rationale":[0]}"#]);
        assert!(matches!(
            load_jsonl(f.path(), Some(2)),
            Err(Error::UnknownLabel { line: 1, label: 5 })
        ));
        let f = write_lines(&["{not json"]);
        assert!(matches!(load_jsonl(f.path(), None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn load_empty_file() {
        let f = write_lines(&[]);
        assert!(load_jsonl(f.path(), None).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let corpus = synth_keyword_corpus(SynthSpec { n: 40, ..Default::default() }).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        let mut original = corpus.splits.train.clone();
        write_jsonl(f.path(), &original).unwrap();
        let back = load_jsonl(f.path(), Some(3)).unwrap();
        for o in &mut original {
            o.token_ids.clear();
        }
        assert_eq!(back, original);
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("Good, movie!"), vec!["good", "movie"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
        assert_eq!(tokenize("  «Élan»  ... x-ray "), vec!["élan", "x-ray"]);
    }

    fn inst(tokens: &[&str]) -> Instance {
        Instance {
            id: String::new(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            token_ids: vec![],
            gold_label: 0,
            rationale: vec![0; tokens.len()],
        }
    }

    #[test]
    fn vocab_min_freq() {
        let data = [inst(&["good", "movie"]), inst(&["good", "film"])];
        let v = Vocab::build(&data, 2);
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[MASK]", "good"]);
        let v = Vocab::build(&data, 1);
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[MASK]", "good", "film", "movie"]);
        assert_eq!(v.encode(&["movie".into(), "unseen".into()]), vec![5, UNK]);
    }

    #[test]
    fn vocab_never_reuses_reserved_indices() {
        let data = [inst(&["[MASK]", "[PAD]", "a"])];
        let v = Vocab::build(&data, 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode(&["[MASK]".into()]), vec![UNK]);
    }

    fn labelled(n: usize, classes: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                id: i.to_string(),
                gold_label: i % classes,
                ..inst(&["x"])
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split(labelled(10, 2), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
        let s = split(labelled(10, 2), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(matches!(split(labelled(3, 2), [0.5, 0.5, 0.5], 1), Err(Error::BadRatios(_))));
    }

    #[test]
    fn split_is_stratified_disjoint_and_complete() {
        let data = labelled(97, 3);
        let s = split(data.clone(), [0.7, 0.2, 0.1], 9).unwrap();
        let mut ids: Vec<String> = s.train.iter().chain(&s.dev).chain(&s.test).map(|i| i.id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = data.iter().map(|i| i.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
        for c in 0..3 {
            let total = data.iter().filter(|i| i.gold_label == c).count() as f64;
            for (part, r) in [(&s.train, 0.7), (&s.dev, 0.2), (&s.test, 0.1)] {
                let got = part.iter().filter(|i| i.gold_label == c).count() as f64;
                assert!((got - r * total).abs() <= 1.0 + 1e-9, "class {c}: {got} vs {}", r * total);
            }
        }
        assert_eq!(s, split(data, [0.7, 0.2, 0.1], 9).unwrap());
    }

    #[test]
    fn synth_is_keyword_separable() {
        let corpus = synth_keyword_corpus(SynthSpec { n: 300, classes: 3, vocab_size: 60, seed: 4 }).unwrap();
        let all: Vec<&Instance> = corpus.splits.train.iter().chain(&corpus.splits.dev).chain(&corpus.splits.test).collect();
        let preds: Vec<usize> = all
            .iter()
            .map(|inst| {
                (0..3)
                    .max_by_key(|&c| {
                        let kws = synth_keywords(3, 60, c);
                        inst.tokens.iter().filter(|t| kws.contains(t)).count()
                    })
                    .unwrap()
            })
            .collect();
        let golds: Vec<usize> = all.iter().map(|i| i.gold_label).collect();
        assert_eq!(crate::models::macro_f1(&preds, &golds, 3).unwrap(), 1.0);
    }

    #[test]
    fn synth_rationale_marks_exactly_keywords() {
        let corpus = synth_keyword_corpus(SynthSpec { n: 200, ..Default::default() }).unwrap();
        for inst in corpus.splits.train.iter().chain(&corpus.splits.test) {
            let planted = inst.rationale.iter().filter(|&&r| r == 1).count();
            assert!((1..=3).contains(&planted));
            assert!((9..=23).contains(&inst.len()));
            for (t, &r) in inst.tokens.iter().zip(&inst.rationale) {
                assert_eq!(t.starts_with("kw"), r == 1);
            }
            let density = planted as f64 / inst.len() as f64;
            assert!(density >= 1.0 / 23.0 && density <= 3.0 / 9.0);
        }
        assert!(corpus.splits.train.iter().all(|i| i.token_ids.iter().all(|&t| t >= 3)));
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec { n: 100, seed: 11, ..Default::default() };
        let a = synth_keyword_corpus(spec).unwrap();
        let b = synth_keyword_corpus(spec).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.splits.train.len(), 80);
    }
}
