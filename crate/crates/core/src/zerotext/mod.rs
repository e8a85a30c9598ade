//! Semantically irrelevant text generation.
//!
//! At each step the generator asks a [`ProbabilityOracle`] for the posterior
//! over its vocabulary and draws uniformly among valid tokens whose
//! probability lies below a threshold. When nothing qualifies the threshold
//! is relaxed tenfold, up to ten times, before falling back to the whole
//! valid vocabulary. [`audit_vacuum`] re-scores a sequence under an oracle.

mod ngram;
mod remote;

use std::collections::HashMap;

use log::debug;
use rand::Rng;

use crate::corpus::{detect_language, LanguageClass, PageAnnotation, DEFAULT_ASCII_THRESHOLD};
use crate::error::{Error, Result};
use crate::rng::{position_rng, stream_id};

pub use ngram::{tokenize, NgramModel, Tokenization, BOS, EOS};
pub use remote::{OracleRequest, OracleResponse, RemoteMode, RemoteOracle};

pub type TokenId = u32;

/// Default initial threshold.
pub const DEFAULT_TAU_INIT: f64 = 1e-6;

/// Ceiling every audited posterior must stay under.
pub const VACUUM_CEILING: f64 = 1e-5;

/// Tolerance on the sum of a posterior distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// An ordered token list with reverse lookup. Fixed once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    special: Vec<bool>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, special: &[&str]) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Oracle(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let special = tokens.iter().map(|t| special.contains(&t.as_str())).collect();
        Ok(Self {
            tokens,
            index,
            special,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Source of next-token posteriors. The oracle supplies its own
/// beginning-of-sequence context; callers pass only generated tokens.
pub trait ProbabilityOracle: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Posterior over the whole vocabulary, indexed by token id.
    fn distribution(&self, context: &[TokenId]) -> Result<Vec<f64>>;

    fn probability(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        let dist = self.distribution(context)?;
        dist.get(token as usize)
            .copied()
            .ok_or_else(|| Error::Oracle(format!("token id {token} outside vocabulary")))
    }
}

pub(crate) fn check_distribution(dist: &[f64], vocab_len: usize) -> Result<()> {
    if dist.len() != vocab_len {
        return Err(Error::Oracle(format!(
            "distribution has {} entries for a vocabulary of {vocab_len}",
            dist.len()
        )));
    }
    if let Some(p) = dist.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::Oracle(format!("negative or NaN probability {p}")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::Oracle(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// Token ids admissible as output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidVocab {
    ids: Vec<TokenId>,
}

impl ValidVocab {
    pub fn from_ids(mut ids: Vec<TokenId>) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::InvalidArgument("valid vocabulary is empty".into()));
        }
        Ok(Self { ids })
    }

    /// Non-special tokens that are non-empty, free of control and whitespace
    /// characters, and classified as `language`.
    pub fn for_script(vocab: &Vocabulary, language: LanguageClass, ascii_threshold: f64) -> Result<Self> {
        let ids = (0..vocab.len() as TokenId)
            .filter(|&id| {
                let t = vocab.token(id);
                !vocab.is_special(id)
                    && !t.is_empty()
                    && t.chars().all(|c| !c.is_control() && !c.is_whitespace())
                    && detect_language(t, ascii_threshold).ok() == Some(language)
            })
            .collect();
        Self::from_ids(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub target_capacity: u32,
    pub tau_init: f64,
    pub max_relaxations: u32,
    pub relax_factor: f64,
    pub seed: u64,
    /// Keystream for this sequence, e.g. a hash of (page, block).
    pub stream: u64,
}

impl GenSpec {
    pub fn new(target_capacity: u32, seed: u64) -> Self {
        Self {
            target_capacity,
            tau_init: DEFAULT_TAU_INIT,
            max_relaxations: 10,
            relax_factor: 10.0,
            seed,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_init > 0.0 && self.tau_init < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_init must lie in (0, 1), got {}",
                self.tau_init
            )));
        }
        if self.relax_factor <= 1.0 {
            return Err(Error::InvalidArgument("relax_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    /// Threshold in force when the token was drawn.
    pub tau: f64,
    pub relaxations: u32,
    /// Drawn from the whole valid vocabulary because no threshold qualified.
    pub fallback: bool,
    pub candidates: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationLog {
    pub steps: Vec<StepLog>,
}

impl GenerationLog {
    pub fn max_tau(&self) -> f64 {
        self.steps.iter().map(|s| s.tau).fold(0.0, f64::max)
    }

    pub fn fallbacks(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }

    pub fn relaxations(&self) -> u32 {
        self.steps.iter().map(|s| s.relaxations).sum()
    }

    /// True when some token was drawn under a threshold above `limit` (or by fallback).
    pub fn relaxed_past(&self, limit: f64) -> bool {
        // 1e-6 relaxed once is 9.999999999999999e-6, so compare with a relative slack
        self.steps
            .iter()
            .any(|s| s.fallback || s.tau > limit * (1.0 + 1e-9))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub log: GenerationLog,
}

fn uniform_pick(seed: u64, stream: u64, position: u64, n: usize) -> usize {
    position_rng(seed, stream, position).random_range(0..n as u64) as usize
}

/// Draws `target_capacity` tokens, each uniformly from the valid tokens whose
/// posterior is below the (possibly relaxed) threshold.
pub fn generate_zero_text(
    spec: &GenSpec,
    oracle: &dyn ProbabilityOracle,
    valid: &ValidVocab,
) -> Result<Generation> {
    spec.validate()?;
    if valid.is_empty() {
        return Err(Error::InvalidArgument("valid vocabulary is empty".into()));
    }
    let vocab_len = oracle.vocabulary().len();
    if let Some(&bad) = valid.ids().iter().find(|&&id| id as usize >= vocab_len) {
        return Err(Error::InvalidArgument(format!("valid id {bad} outside oracle vocabulary")));
    }

    let mut context: Vec<TokenId> = Vec::with_capacity(spec.target_capacity as usize);
    let mut steps = Vec::with_capacity(spec.target_capacity as usize);
    let mut candidates: Vec<TokenId> = Vec::with_capacity(valid.len());
    for t in 0..spec.target_capacity as u64 {
        let dist = oracle.distribution(&context)?;
        check_distribution(&dist, vocab_len)?;

        let mut tau = spec.tau_init;
        let mut attempts = 0;
        candidates.clear();
        while candidates.is_empty() && attempts < spec.max_relaxations {
            candidates.extend(valid.ids().iter().copied().filter(|&id| dist[id as usize] < tau));
            if candidates.is_empty() {
                tau *= spec.relax_factor;
                attempts += 1;
            }
        }

        let fallback = candidates.is_empty();
        let pool: &[TokenId] = if fallback { valid.ids() } else { &candidates };
        let token = pool[uniform_pick(spec.seed, spec.stream, t, pool.len())];
        if fallback {
            debug!("step {t}: no token below {tau:e}; fell back to full valid vocabulary");
        }
        steps.push(StepLog {
            tau,
            relaxations: attempts,
            fallback,
            candidates: pool.len(),
        });
        context.push(token);
    }
    Ok(Generation {
        tokens: context,
        log: GenerationLog { steps },
    })
}

/// Per-position posteriors of a token sequence under an oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct VacuumAudit {
    pub posteriors: Vec<f64>,
    pub max_posterior: f64,
}

impl VacuumAudit {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.posteriors.is_empty() {
            return 1.0;
        }
        self.posteriors.iter().filter(|&&p| p < threshold).count() as f64 / self.posteriors.len() as f64
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }
}

pub fn audit_vacuum(tokens: &[TokenId], oracle: &dyn ProbabilityOracle) -> Result<VacuumAudit> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("nothing to audit".into()));
    }
    let vocab_len = oracle.vocabulary().len();
    let mut posteriors = Vec::with_capacity(tokens.len());
    for (t, &token) in tokens.iter().enumerate() {
        if token as usize >= vocab_len {
            return Err(Error::Oracle(format!("token id {token} outside vocabulary")));
        }
        posteriors.push(oracle.probability(&tokens[..t], token)?);
    }
    let max_posterior = posteriors.iter().copied().fold(0.0, f64::max);
    Ok(VacuumAudit {
        posteriors,
        max_posterior,
    })
}

/// Audits a sequence given as token strings.
pub fn audit_text_tokens<S: AsRef<str>>(tokens: &[S], oracle: &dyn ProbabilityOracle) -> Result<VacuumAudit> {
    let vocab = oracle.vocabulary();
    let ids = tokens
        .iter()
        .map(|t| {
            vocab
                .id(t.as_ref())
                .ok_or_else(|| Error::Oracle(format!("token {:?} not in oracle vocabulary", t.as_ref())))
        })
        .collect::<Result<Vec<_>>>()?;
    audit_vacuum(&ids, oracle)
}

pub fn tokens_to_block_text<S: AsRef<str>>(tokens: &[S], language: LanguageClass) -> String {
    let sep = match language {
        LanguageClass::Latin => " ",
        LanguageClass::Logographic => "",
    };
    tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(sep)
}

/// Oracles available for page generation, one per script.
#[derive(Default)]
pub struct OracleSet<'a> {
    oracles: Vec<(LanguageClass, &'a dyn ProbabilityOracle, ValidVocab)>,
}

impl<'a> OracleSet<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, language: LanguageClass, oracle: &'a dyn ProbabilityOracle) -> Result<Self> {
        let valid = ValidVocab::for_script(oracle.vocabulary(), language, DEFAULT_ASCII_THRESHOLD)?;
        self.oracles.push((language, oracle, valid));
        Ok(self)
    }

    fn get(&self, language: LanguageClass) -> Option<(&'a dyn ProbabilityOracle, &ValidVocab)> {
        self.oracles
            .iter()
            .find(|(l, _, _)| *l == language)
            .map(|(_, o, v)| (*o, v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReplacement {
    pub text: String,
    pub log: GenerationLog,
}

/// Generates one replacement per block of a page carrying capacities and
/// languages. The keystream of block `i` is derived from `(page id, i)`.
pub fn generate_page_replacements(
    page: &PageAnnotation,
    oracles: &OracleSet<'_>,
    tau_init: f64,
    seed: u64,
) -> Result<Vec<BlockReplacement>> {
    page.blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let (capacity, language) = match (block.capacity, block.language) {
                (Some(c), Some(l)) => (c, l),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "page {} block {i} lacks capacity/language; run analysis first",
                        page.id
                    )))
                }
            };
            let (oracle, valid) = oracles.get(language).ok_or_else(|| {
                Error::Oracle(format!("no oracle configured for {language:?} text"))
            })?;
            let spec = GenSpec {
                tau_init,
                stream: stream_id(&[page.id.as_bytes(), &(i as u64).to_le_bytes()]),
                ..GenSpec::new(capacity, seed)
            };
            let generation = generate_zero_text(&spec, oracle, valid)?;
            let words: Vec<&str> = generation
                .tokens
                .iter()
                .map(|&id| oracle.vocabulary().token(id))
                .collect();
            Ok(BlockReplacement {
                text: tokens_to_block_text(&words, language),
                log: generation.log,
            })
        })
        .collect()
}
