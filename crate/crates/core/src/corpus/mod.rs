//! Aligned multi-style corpora: ingestion, vocabularies, splits.
//!
//! Corpora are aligned by line position: sentence `r` of every style carries
//! the same content. Style index 0 is the source style; all transfer tasks
//! map style 0 into one of the target styles.

mod noise;
mod synthetic;

pub use noise::{apply_noise, NoiseConfig};
pub use synthetic::{
    generate_sentences, make_synthetic_styles, shared_rule_variant, tag_rewrite, SyntheticSpec,
    TokenRewrite,
};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleId {
    pub index: usize,
    pub name: String,
}

/// Aligned multi-style sentences; `sentences[style][row]` is a token sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParallelCorpus {
    styles: Vec<StyleId>,
    sentences: Vec<Vec<Vec<String>>>,
}

impl ParallelCorpus {
    pub fn new(names: Vec<String>, sentences: Vec<Vec<Vec<String>>>) -> Result<Self> {
        if names.is_empty() || sentences.len() != names.len() {
            return Err(Error::Format(format!(
                "{} style names vs {} sentence lists",
                names.len(),
                sentences.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if seen.insert(name.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate style name {name}")));
            }
        }
        let count = sentences[0].len();
        for (i, s) in sentences.iter().enumerate() {
            if s.len() != count {
                return Err(Error::LineCountMismatch {
                    path: names[i].clone(),
                    found: s.len(),
                    expected: count,
                });
            }
        }
        let styles = names
            .into_iter()
            .enumerate()
            .map(|(index, name)| StyleId { index, name })
            .collect();
        Ok(ParallelCorpus { styles, sentences })
    }

    pub fn styles(&self) -> &[StyleId] {
        &self.styles
    }

    pub fn style_count(&self) -> usize {
        self.styles.len()
    }

    /// Aligned sentence count (identical for every style).
    pub fn sentence_count(&self) -> usize {
        self.sentences[0].len()
    }

    pub fn sentence(&self, style: usize, row: usize) -> &[String] {
        &self.sentences[style][row]
    }

    pub fn style_sentences(&self, style: usize) -> &[Vec<String>] {
        &self.sentences[style]
    }

    pub fn style_by_name(&self, name: &str) -> Option<&StyleId> {
        self.styles.iter().find(|s| s.name == name)
    }

    /// Longest sentence over all styles.
    pub fn max_sentence_len(&self) -> usize {
        self.sentences
            .iter()
            .flat_map(|s| s.iter().map(|t| t.len()))
            .max()
            .unwrap_or(0)
    }

    /// Restrict to the source style plus the named targets, re-indexing styles.
    pub fn subset(&self, target_names: &[String]) -> Result<ParallelCorpus> {
        let mut names = vec![self.styles[0].name.clone()];
        let mut sentences = vec![self.sentences[0].clone()];
        for name in target_names {
            let style = self
                .style_by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown style {name}")))?;
            if style.index == 0 {
                return Err(Error::Config("source style cannot be a target".into()));
            }
            names.push(name.clone());
            sentences.push(self.sentences[style.index].clone());
        }
        ParallelCorpus::new(names, sentences)
    }

    /// Write one file per style plus a `manifest.tsv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for style in &self.styles {
            let file = format!("{}.txt", style.name);
            let mut body = String::new();
            for sent in &self.sentences[style.index] {
                body.push_str(&sent.join(" "));
                body.push('\n');
            }
            std::fs::write(dir.join(&file), body)?;
            manifest.push_str(&format!("{}\t{}\n", style.name, file));
        }
        let path = dir.join("manifest.tsv");
        std::fs::write(&path, manifest)?;
        Ok(path)
    }
}

/// Parse a manifest file: one `name<TAB>path` line per style, first line is
/// the source style. Relative paths resolve against the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, file) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected `name<TAB>path`",
                path.display(),
                lineno + 1
            ))
        })?;
        let file = Path::new(file);
        let resolved = if file.is_absolute() {
            file.to_path_buf()
        } else {
            base.join(file)
        };
        entries.push((name.trim().to_string(), resolved));
    }
    if entries.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(entries)
}

/// Read the aligned per-style files into a corpus. Tokenization is
/// whitespace-splitting; inputs are assumed pre-tokenized.
pub fn ingest_aligned(manifest: &[(String, PathBuf)]) -> Result<ParallelCorpus> {
    let mut names = Vec::new();
    let mut sentences = Vec::new();
    let mut expected: Option<usize> = None;
    for (name, path) in manifest {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<Vec<String>> = text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect();
        if lines.is_empty() {
            return Err(Error::EmptyFile(path.display().to_string()));
        }
        match expected {
            None => expected = Some(lines.len()),
            Some(count) if lines.len() != count => {
                return Err(Error::LineCountMismatch {
                    path: path.display().to_string(),
                    found: lines.len(),
                    expected: count,
                });
            }
            Some(_) => {}
        }
        names.push(name.clone());
        sentences.push(lines);
    }
    ParallelCorpus::new(names, sentences)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unlabeled: usize,
}

/// Index sets for one experiment: aligned-pair indexes for labeled train, dev
/// and test, plus an independent per-style unlabeled pool disjoint from all
/// of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub style_names: Vec<String>,
    pub seed: u64,
    pub labeled_train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub unlabeled: Vec<Vec<usize>>,
}

impl DataSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Deterministic disjoint splits. The unlabeled pool of each style is drawn
/// independently from the rows outside `labeled ∪ dev ∪ test`.
pub fn make_splits(corpus: &ParallelCorpus, sizes: SplitSizes, seed: u64) -> Result<DataSplit> {
    let n = corpus.sentence_count();
    let requested = sizes.train + sizes.dev + sizes.test + sizes.unlabeled;
    if requested > n {
        return Err(Error::InsufficientData {
            requested,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::stream(seed, "splits"));
    let labeled_train = order[..sizes.train].to_vec();
    let dev = order[sizes.train..sizes.train + sizes.dev].to_vec();
    let test = order[sizes.train + sizes.dev..sizes.train + sizes.dev + sizes.test].to_vec();
    let rest: Vec<usize> = order[sizes.train + sizes.dev + sizes.test..].to_vec();
    let mut unlabeled = Vec::with_capacity(corpus.style_count());
    for style in corpus.styles() {
        let mut pool = rest.clone();
        pool.shuffle(&mut seeding::stream(
            seed,
            &format!("unlabeled/{}", style.index),
        ));
        pool.truncate(sizes.unlabeled);
        unlabeled.push(pool);
    }
    Ok(DataSplit {
        style_names: corpus.styles().iter().map(|s| s.name.clone()).collect(),
        seed,
        labeled_train,
        dev,
        test,
        unlabeled,
    })
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Frequency-ranked token list with fixed reserved entries at indexes 0-3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens[..RESERVED_TOKENS.len()]
                .iter()
                .zip(RESERVED_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Format(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.tokens
    }
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::InvalidId {
                id,
                vocab_size: self.tokens.len(),
            })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Build a vocabulary from sentences: tokens ranked by frequency (ties by
/// first occurrence), truncated to `max_size` including the reserved entries,
/// dropping tokens seen fewer than `min_count` times.
pub fn build_vocabulary<'a, I>(sentences: I, max_size: usize, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < RESERVED_TOKENS.len() {
        return Err(Error::Config(format!(
            "max_size must be at least {}, got {max_size}",
            RESERVED_TOKENS.len()
        )));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for sentence in sentences {
        for token in sentence {
            // Reserved literals in the input would collide with ids 0-3.
            if RESERVED_TOKENS.contains(&token.as_str()) {
                continue;
            }
            let entry = counts.entry(token.as_str()).or_insert_with(|| {
                let slot = (0, order);
                order += 1;
                slot
            });
            entry.0 += 1;
        }
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.truncate(max_size - RESERVED_TOKENS.len());
    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(tok, _)| tok.to_string()));
    Vocabulary::try_from(tokens)
}

/// Token ids, with out-of-vocabulary tokens mapped to UNK.
pub fn numericalize(sentence: &[String], vocab: &Vocabulary) -> Vec<usize> {
    sentence
        .iter()
        .map(|tok| vocab.lookup(tok).unwrap_or(UNK))
        .collect()
}

/// Inverse of [`numericalize`]; fails on ids outside the vocabulary.
pub fn denumericalize(ids: &[usize], vocab: &Vocabulary) -> Result<Vec<String>> {
    ids.iter().map(|&id| vocab.token(id).map(str::to_string)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    fn two_style_corpus() -> ParallelCorpus {
        ParallelCorpus::new(
            vec!["src".into(), "tgt".into()],
            vec![sents(&["a b", "c d", "e f"]), sents(&["A B", "C D", "E F"])],
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_frequency_order() {
        let s = sents(&["a b", "a c"]);
        let refs: Vec<&[String]> = s.iter().map(|v| v.as_slice()).collect();
        let v = build_vocabulary(refs.into_iter(), 10, 1).unwrap();
        assert_eq!(
            v.tokens(),
            &["<pad>", "<unk>", "<bos>", "<eos>", "a", "b", "c"]
        );
    }

    #[test]
    fn vocabulary_empty_input() {
        let v = build_vocabulary(std::iter::empty(), 10, 1).unwrap();
        assert_eq!(v.size(), 4);
    }

    #[test]
    fn vocabulary_min_count_filters() {
        let s = sents(&["x x x"]);
        let refs: Vec<&[String]> = s.iter().map(|v| v.as_slice()).collect();
        let v = build_vocabulary(refs.into_iter(), 10, 4).unwrap();
        assert_eq!(v.size(), 4);
    }

    #[test]
    fn numericalize_round_trip_and_oov() {
        let s = sents(&["a b"]);
        let refs: Vec<&[String]> = s.iter().map(|v| v.as_slice()).collect();
        let v = build_vocabulary(refs.into_iter(), 10, 1).unwrap();
        let sent: Vec<String> = vec!["a".into(), "b".into()];
        let ids = numericalize(&sent, &v);
        assert_eq!(ids, vec![v.lookup("a").unwrap(), v.lookup("b").unwrap()]);
        assert_eq!(denumericalize(&ids, &v).unwrap(), sent);

        let oov: Vec<String> = vec!["a".into(), "z".into()];
        assert_eq!(numericalize(&oov, &v)[1], UNK);

        assert!(matches!(
            denumericalize(&[9999], &v),
            Err(Error::InvalidId { .. })
        ));
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let corpus = two_style_corpus();
        let sizes = SplitSizes {
            train: 1,
            dev: 1,
            test: 1,
            unlabeled: 0,
        };
        let a = make_splits(&corpus, sizes, 7).unwrap();
        let b = make_splits(&corpus, sizes, 7).unwrap();
        assert_eq!(a, b);
        let mut all = vec![a.labeled_train[0], a.dev[0], a.test[0]];
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn splits_insufficient_data() {
        let corpus = two_style_corpus();
        let sizes = SplitSizes {
            train: 10,
            dev: 5,
            test: 5,
            unlabeled: 100,
        };
        assert!(matches!(
            make_splits(&corpus, sizes, 1),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn corpus_rejects_mismatched_lengths() {
        let res = ParallelCorpus::new(
            vec!["a".into(), "b".into()],
            vec![sents(&["x", "y"]), sents(&["z"])],
        );
        assert!(matches!(res, Err(Error::LineCountMismatch { .. })));
    }

    #[test]
    fn vocab_serde_round_trip() {
        let s = sents(&["a b c a"]);
        let refs: Vec<&[String]> = s.iter().map(|v| v.as_slice()).collect();
        let v = build_vocabulary(refs.into_iter(), 10, 1).unwrap();
        let text = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&text).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.lookup("a"), v.lookup("a"));
    }
}
