//! Synthetic styles: deterministic token-rewrite variants of a seed corpus,
//! used for desk-scale experiments in place of real multi-version text.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::seeding;

use super::ParallelCorpus;

/// Total, deterministic token map: tokens without a rule pass through.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRewrite {
    pub rules: BTreeMap<String, String>,
}

impl TokenRewrite {
    pub fn apply_token(&self, token: &str) -> String {
        self.rules
            .get(token)
            .cloned()
            .unwrap_or_else(|| token.to_string())
    }

    pub fn apply(&self, sentence: &[String]) -> Vec<String> {
        sentence.iter().map(|t| self.apply_token(t)).collect()
    }

    /// Fraction of rules shared (same input and same output) with another rewrite.
    pub fn shared_fraction(&self, other: &TokenRewrite) -> f64 {
        if self.rules.is_empty() {
            return 0.0;
        }
        let shared = self
            .rules
            .iter()
            .filter(|(tok, out)| other.rules.get(*tok) == Some(out))
            .count();
        shared as f64 / self.rules.len() as f64
    }
}

/// Rewrite every listed token to a tagged variant.
pub fn tag_rewrite(tokens: &[String], tag: &str) -> TokenRewrite {
    let rules = tokens
        .iter()
        .map(|t| (t.clone(), format!("{t}~{tag}")))
        .collect();
    TokenRewrite { rules }
}

/// Derive a new style from `base`: each rule keeps the base output with
/// probability `share`, otherwise rewrites to this style's own tag.
pub fn shared_rule_variant<R: Rng>(
    base: &TokenRewrite,
    share: f64,
    tag: &str,
    rng: &mut R,
) -> TokenRewrite {
    let rules = base
        .rules
        .iter()
        .map(|(tok, out)| {
            if rng.gen::<f64>() < share {
                (tok.clone(), out.clone())
            } else {
                (tok.clone(), format!("{tok}~{tag}"))
            }
        })
        .collect();
    TokenRewrite { rules }
}

/// Style 0 is the seed corpus; each transform produces one aligned target
/// style by tokenwise rewriting, so alignment holds by construction.
pub fn make_synthetic_styles(
    seed_sentences: &[Vec<String>],
    source_name: &str,
    transforms: &[(String, TokenRewrite)],
) -> Result<ParallelCorpus> {
    let mut names = vec![source_name.to_string()];
    let mut sentences = vec![seed_sentences.to_vec()];
    for (name, rewrite) in transforms {
        names.push(name.clone());
        sentences.push(seed_sentences.iter().map(|s| rewrite.apply(s)).collect());
    }
    ParallelCorpus::new(names, sentences)
}

const FUNCTION_WORDS: [&str; 10] = ["the", "of", "and", "to", "a", "in", "is", "it", "he", "for"];

/// Random seed sentences over a small vocabulary. Tokens follow a seeded
/// first-order Markov chain (each word prefers a few successors), content
/// words are Zipf-skewed so the frequency tail stays data-hungry, and
/// function words mix in at high frequency.
pub fn generate_sentences<R: Rng>(
    count: usize,
    content_words: usize,
    function_words: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<Vec<String>> {
    assert!(min_len >= 1 && max_len >= min_len);
    let functions: Vec<String> = (0..function_words)
        .map(|i| {
            FUNCTION_WORDS
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("f{i}"))
        })
        .collect();
    let contents: Vec<String> = (0..content_words).map(|i| format!("c{i:03}")).collect();
    let pool_len = contents.len() + functions.len();
    let word = |idx: usize| -> &String {
        if idx < contents.len() {
            &contents[idx]
        } else {
            &functions[idx - contents.len()]
        }
    };
    // Zipf-ish weights over the pool; function words sit in the head.
    let weights: Vec<f64> = (0..pool_len)
        .map(|i| {
            if i >= contents.len() {
                1.0 / 12.0
            } else {
                1.0 / (i as f64 + 8.0)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let draw = move |rng: &mut R| -> usize {
        let mut pick = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 {
                return i;
            }
        }
        pool_len - 1
    };
    let successors: Vec<[usize; 4]> = (0..pool_len)
        .map(|_| core::array::from_fn(|_| draw(rng)))
        .collect();
    (0..count)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let mut cur = draw(rng);
            let mut sentence = Vec::with_capacity(len);
            sentence.push(word(cur).clone());
            for _ in 1..len {
                cur = if rng.gen::<f64>() < 0.8 {
                    successors[cur][rng.gen_range(0..4)]
                } else {
                    draw(rng)
                };
                sentence.push(word(cur).clone());
            }
            sentence
        })
        .collect()
}

/// Recipe for a bundled synthetic task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub target_styles: usize,
    pub sentences: usize,
    pub content_words: usize,
    pub function_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of the content vocabulary each target style rewrites.
    pub rewrite_fraction: f64,
    /// Fraction of rules each target style keeps from the previous one, so
    /// consecutive styles are closest neighbors.
    pub neighbor_share: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            target_styles: 3,
            sentences: 3600,
            content_words: 300,
            function_words: 8,
            min_len: 4,
            max_len: 9,
            rewrite_fraction: 0.5,
            neighbor_share: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<ParallelCorpus> {
        let mut sentence_rng = seeding::stream(seed, "synth/sentences");
        let seed_sentences = generate_sentences(
            self.sentences,
            self.content_words,
            self.function_words,
            self.min_len,
            self.max_len,
            &mut sentence_rng,
        );
        let rewritten = ((self.content_words as f64) * self.rewrite_fraction) as usize;
        let domain: Vec<String> = (0..rewritten).map(|i| format!("c{i:03}")).collect();
        let mut transforms = Vec::with_capacity(self.target_styles);
        let mut prev = tag_rewrite(&domain, "s1");
        transforms.push(("s1".to_string(), prev.clone()));
        for s in 2..=self.target_styles {
            let tag = format!("s{s}");
            let mut rng = seeding::stream(seed, &format!("synth/rules/{s}"));
            let next = shared_rule_variant(&prev, self.neighbor_share, &tag, &mut rng);
            transforms.push((tag, next.clone()));
            prev = next;
        }
        make_synthetic_styles(&seed_sentences, "src", &transforms)
    }
}
