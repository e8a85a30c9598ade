use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

use super::{ProbabilityOracle, TokenId, Vocabulary};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const SENTENCE_END: &[char] = &['.', '!', '?', '。', '！', '？'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Lower-cased runs of alphanumerics (apostrophes allowed inside).
    #[default]
    Word,
    /// One token per alphanumeric character.
    Char,
}

/// Splits text into sentences of tokens.
pub fn tokenize(text: &str, mode: Tokenization) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut sentence: Vec<String> = Vec::new();
    let mut word = String::new();

    let flush_word = |word: &mut String, sentence: &mut Vec<String>| {
        let w = word.trim_matches('\'');
        if !w.is_empty() {
            sentence.push(w.to_string());
        }
        word.clear();
    };

    for c in text.chars() {
        if SENTENCE_END.contains(&c) {
            flush_word(&mut word, &mut sentence);
            if !sentence.is_empty() {
                sentences.push(std::mem::take(&mut sentence));
            }
            continue;
        }
        match mode {
            Tokenization::Word => {
                if c.is_alphanumeric() || (c == '\'' && !word.is_empty()) {
                    word.extend(c.to_lowercase());
                } else {
                    flush_word(&mut word, &mut sentence);
                }
            }
            Tokenization::Char => {
                if c.is_alphanumeric() {
                    sentence.push(c.to_lowercase().collect());
                }
            }
        }
    }
    flush_word(&mut word, &mut sentence);
    if !sentence.is_empty() {
        sentences.push(sentence);
    }
    sentences
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    followers: Vec<(TokenId, u32)>,
}

/// Interpolated absolute-discounting n-gram model.
///
/// The unigram level is add-one smoothed over every token except `<s>`, so
/// every predictable token keeps non-zero mass. Each higher level keeps
/// `max(c - D, 0) / total` for observed followers and hands the rest,
/// `D * distinct / total`, to the next lower level.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    discount: f64,
    tokenization: Tokenization,
    vocab: Vocabulary,
    bos: TokenId,
    unigram: Vec<f64>,
    /// `levels[k - 1]` holds contexts of length `k`.
    levels: Vec<HashMap<Box<[TokenId]>, ContextCounts>>,
}

impl NgramModel {
    pub const DEFAULT_ORDER: usize = 3;
    pub const DEFAULT_DISCOUNT: f64 = 0.75;

    pub fn train(text: &str, order: usize, tokenization: Tokenization) -> Result<Self> {
        Self::train_with_discount(text, order, tokenization, Self::DEFAULT_DISCOUNT)
    }

    pub fn train_file(path: impl AsRef<Path>, order: usize, tokenization: Tokenization) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        Self::train(&text, order, tokenization)
    }

    pub fn train_with_discount(
        text: &str,
        order: usize,
        tokenization: Tokenization,
        discount: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument(format!("discount {discount} outside [0, 1)")));
        }
        let sentences = tokenize(text, tokenization);
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("training text has no tokens".into()));
        }

        let words: BTreeSet<&str> = sentences.iter().flatten().map(String::as_str).collect();
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        tokens.extend(words.into_iter().filter(|w| *w != BOS && *w != EOS).map(str::to_string));
        let vocab = Vocabulary::new(tokens, &[BOS, EOS])?;
        let bos = vocab.id(BOS).expect("bos present");
        let eos = vocab.id(EOS).expect("eos present");

        let mut unigram_counts = vec![0u64; vocab.len()];
        let mut raw: Vec<HashMap<Box<[TokenId]>, HashMap<TokenId, u32>>> = vec![HashMap::new(); order - 1];
        let mut seq: Vec<TokenId> = Vec::new();
        for sentence in &sentences {
            seq.clear();
            seq.push(bos);
            seq.extend(sentence.iter().map(|w| vocab.id(w).expect("token in vocab")));
            seq.push(eos);
            for i in 1..seq.len() {
                let w = seq[i];
                unigram_counts[w as usize] += 1;
                for k in 1..order {
                    if i < k {
                        break;
                    }
                    *raw[k - 1]
                        .entry(seq[i - k..i].into())
                        .or_default()
                        .entry(w)
                        .or_default() += 1;
                }
            }
        }

        let n: u64 = unigram_counts.iter().sum();
        let predictable = (vocab.len() - 1) as f64;
        let denom = n as f64 + predictable;
        let unigram = unigram_counts
            .iter()
            .enumerate()
            .map(|(i, &c)| if i as TokenId == bos { 0.0 } else { (c as f64 + 1.0) / denom })
            .collect();

        let levels = raw
            .into_iter()
            .map(|level| {
                level
                    .into_iter()
                    .map(|(ctx, followers)| {
                        let mut followers: Vec<(TokenId, u32)> = followers.into_iter().collect();
                        followers.sort_unstable();
                        let total = followers.iter().map(|&(_, c)| c as u64).sum();
                        (ctx, ContextCounts { total, followers })
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            order,
            discount,
            tokenization,
            vocab,
            bos,
            unigram,
            levels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    /// Maps tokenized text to ids; fails on out-of-vocabulary words.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        tokenize(text, self.tokenization)
            .into_iter()
            .flatten()
            .map(|w| {
                self.vocab
                    .id(&w)
                    .ok_or_else(|| Error::Oracle(format!("{w:?} not in n-gram vocabulary")))
            })
            .collect()
    }

    /// Context levels usable for `history`, lowest first.
    fn contexts<'a>(&'a self, history: &'a [TokenId]) -> impl Iterator<Item = &'a ContextCounts> + 'a {
        (1..self.order)
            .take_while(move |&k| k <= history.len())
            .filter_map(move |k| self.levels[k - 1].get(&history[history.len() - k..]))
    }

    fn history(&self, context: &[TokenId]) -> Vec<TokenId> {
        let keep = (self.order - 1).min(context.len());
        let mut h = Vec::with_capacity(keep + 1);
        if keep == context.len() {
            h.push(self.bos);
        }
        h.extend_from_slice(&context[context.len() - keep..]);
        h
    }
}

impl ProbabilityOracle for NgramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let history = self.history(context);
        let mut p = self.unigram.clone();
        for counts in self.contexts(&history) {
            let total = counts.total as f64;
            let gamma = self.discount * counts.followers.len() as f64 / total;
            p.iter_mut().for_each(|v| *v *= gamma);
            for &(w, c) in &counts.followers {
                p[w as usize] += (c as f64 - self.discount).max(0.0) / total;
            }
        }
        Ok(p)
    }

    fn probability(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        if token as usize >= self.vocab.len() {
            return Err(Error::Oracle(format!("token id {token} outside vocabulary")));
        }
        let history = self.history(context);
        let mut p = self.unigram[token as usize];
        for counts in self.contexts(&history) {
            let total = counts.total as f64;
            let gamma = self.discount * counts.followers.len() as f64 / total;
            let c = counts
                .followers
                .binary_search_by_key(&token, |&(w, _)| w)
                .map_or(0, |i| counts.followers[i].1);
            p = p * gamma + (c as f64 - self.discount).max(0.0) / total;
        }
        Ok(p)
    }
}
