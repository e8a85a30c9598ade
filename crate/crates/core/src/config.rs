//! TOML configuration shared by the command-line tool and the pipeline.
//!
//! Every section is optional; missing keys take their defaults.
//!
//! ```toml
//! seed = 7
//! jobs = 4
//!
//! [layout]
//! ascii_threshold = 0.8
//! merge_rule = "edge_gap"
//!
//! [zerotext]
//! tau_init = 1e-6
//! oracle = { kind = "ngram", corpus = "train.txt", order = 3 }
//!
//! [render]
//! canvas_w = 1280
//! canvas_h = 1280
//! modes = ["tiny", "small", "base", "large"]
//!
//! [harness]
//! client = { kind = "wire", endpoint = "http://localhost:8000/v1/chat/completions", model = "ocr" }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_ASCII_THRESHOLD;
use crate::error::{Error, IoContext, Result};
use crate::font::FontFace;
use crate::harness::{FileStub, ModelClient, SweepConfig, WireClient, WireConfig, DEFAULT_JOBS};
use crate::layout::{MergeRule, ThetaOptions};
use crate::metrics::{Aggregation, NormalizeOptions};
use crate::perturb::PerturbOptions;
use crate::render::{RenderTheta, ResolutionMode};
use crate::zerotext::{NgramModel, ProbabilityOracle, RemoteMode, RemoteOracle, Tokenization, DEFAULT_TAU_INIT};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub layout: LayoutConfig,
    pub zerotext: ZeroTextConfig,
    pub render: RenderConfig,
    pub perturb: PerturbConfig,
    pub harness: HarnessConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        let mut config: Config = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    /// Makes relative file paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for oracle in [Some(&mut self.zerotext.oracle), self.zerotext.logographic_oracle.as_mut(), self.zerotext.audit_oracle.as_mut()]
            .into_iter()
            .flatten()
        {
            if let OracleConfig::Ngram { corpus, .. } = oracle {
                fix(corpus);
            }
        }
        if let Some(font) = &mut self.render.font_path {
            fix(font);
        }
        if let ClientConfig::File { path } = &mut self.harness.client {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.render.theta().validate()?;
        self.harness.sweep.validate()?;
        if !(0.0..=1.0).contains(&self.layout.ascii_threshold) {
            return Err(Error::Config("layout.ascii_threshold must lie in [0, 1]".into()));
        }
        if self.perturb.options.tolerance < 0.0 {
            return Err(Error::Config("perturb.tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(DEFAULT_JOBS).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub ascii_threshold: f64,
    pub merge_rule: MergeRule,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            ascii_threshold: DEFAULT_ASCII_THRESHOLD,
            merge_rule: MergeRule::EdgeGap,
        }
    }
}

impl LayoutConfig {
    pub fn theta_options(&self) -> ThetaOptions {
        ThetaOptions {
            ascii_threshold: self.ascii_threshold,
            rule: self.merge_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Ngram {
        corpus: PathBuf,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default)]
        tokenization: Tokenization,
    },
    Remote {
        endpoint: String,
        #[serde(default)]
        top_k: Option<usize>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        auth_env: Option<String>,
    },
}

fn default_order() -> usize {
    NgramModel::DEFAULT_ORDER
}

fn default_timeout() -> f64 {
    60.0
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::Ngram {
            corpus: PathBuf::from("train.txt"),
            order: NgramModel::DEFAULT_ORDER,
            tokenization: Tokenization::Word,
        }
    }
}

impl OracleConfig {
    pub fn build(&self) -> Result<Box<dyn ProbabilityOracle>> {
        match self {
            Self::Ngram {
                corpus,
                order,
                tokenization,
            } => Ok(Box::new(NgramModel::train_file(corpus, *order, *tokenization)?)),
            Self::Remote {
                endpoint,
                top_k,
                timeout_secs,
                auth_env,
            } => {
                let auth = match auth_env {
                    Some(var) => Some(
                        std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                let mode = top_k.map_or(RemoteMode::Full, RemoteMode::TopK);
                Ok(Box::new(RemoteOracle::connect(
                    endpoint.clone(),
                    mode,
                    std::time::Duration::from_secs_f64(*timeout_secs),
                    auth,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroTextConfig {
    pub tau_init: f64,
    /// Oracle for Latin-script blocks.
    pub oracle: OracleConfig,
    pub logographic_oracle: Option<OracleConfig>,
    /// Oracle used by `audit`; defaults to the generation oracle.
    pub audit_oracle: Option<OracleConfig>,
}

impl Default for ZeroTextConfig {
    fn default() -> Self {
        Self {
            tau_init: DEFAULT_TAU_INIT,
            oracle: OracleConfig::default(),
            logographic_oracle: None,
            audit_oracle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    #[serde(flatten)]
    pub theta: RenderTheta,
    /// TrueType file; the bundled face is used when absent.
    pub font_path: Option<PathBuf>,
    /// Modes each page is accounted under.
    pub modes: Vec<ResolutionMode>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            theta: RenderTheta::default(),
            font_path: None,
            modes: ResolutionMode::ALL.to_vec(),
        }
    }
}

impl RenderConfig {
    pub fn theta(&self) -> RenderTheta {
        let mut theta = self.theta.clone();
        if let Some(path) = &self.font_path {
            theta.font_face = path.display().to_string();
        }
        theta
    }

    pub fn font(&self) -> Result<FontFace> {
        match &self.font_path {
            Some(path) => FontFace::from_file(path),
            None => Ok(FontFace::bundled()),
        }
        .map(|f| f.with_line_height_factor(self.theta.line_height_factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    #[serde(flatten)]
    pub options: PerturbOptions,
    pub n_permutations: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            options: PerturbOptions::default(),
            n_permutations: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    Echo,
    Empty,
    File { path: PathBuf },
    Wire(WireConfig),
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self::Echo
    }
}

impl ClientConfig {
    pub fn build(&self) -> Result<Box<dyn ModelClient>> {
        Ok(match self {
            Self::Echo => Box::new(crate::harness::EchoStub),
            Self::Empty => Box::new(crate::harness::EmptyStub),
            Self::File { path } => Box::new(FileStub::from_file(path)?),
            Self::Wire(config) => Box::new(WireClient::new(config.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    #[serde(flatten)]
    pub sweep: SweepConfig,
    pub client: ClientConfig,
    /// Further clients evaluated alongside `client`.
    pub extra_clients: Vec<ClientConfig>,
    pub normalize: NormalizeOptions,
    pub aggregation: Aggregation,
    pub epsilon: f64,
    pub text_reference: f64,
    pub histogram_width: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            client: ClientConfig::Echo,
            extra_clients: Vec::new(),
            normalize: NormalizeOptions::default(),
            aggregation: Aggregation::MeanThenDivide,
            epsilon: 0.01,
            text_reference: 1.0,
            histogram_width: 100,
        }
    }
}

impl HarnessConfig {
    pub fn clients(&self) -> Result<Vec<Box<dyn ModelClient>>> {
        std::iter::once(&self.client)
            .chain(&self.extra_clients)
            .map(ClientConfig::build)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            seed = 7
            jobs = 2
            [layout]
            merge_rule = "center_band"
            [zerotext]
            tau_init = 1e-5
            oracle = { kind = "ngram", corpus = "t.txt", order = 2, tokenization = "char" }
            [render]
            canvas_w = 640
            resolution_mode = "tiny"
            background = "inpainted_source"
            modes = ["tiny", "large"]
            [render.visual_tokens_per_mode]
            tiny = 10
            small = 20
            base = 30
            large = 40
            [perturb]
            tolerance = 0.1
            n_permutations = 3
            [harness]
            instruction = "read"
            client = { kind = "wire", endpoint = "http://x/v1", model = "m", retries = 1 }
            bins = [{ center = 5.0, half_width = 2.5 }]
        "#;
        let mut c: Config = toml::from_str(text).unwrap();
        c.resolve_paths(Path::new("/base"));
        c.validate().unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.jobs(), 2);
        assert_eq!(c.layout.merge_rule, MergeRule::CenterBand);
        assert_eq!(
            c.zerotext.oracle,
            OracleConfig::Ngram {
                corpus: "/base/t.txt".into(),
                order: 2,
                tokenization: Tokenization::Char
            }
        );
        assert_eq!(c.render.theta.canvas_w, 640);
        assert_eq!(c.render.theta.visual_tokens(), 10);
        assert_eq!(c.render.modes, vec![ResolutionMode::Tiny, ResolutionMode::Large]);
        assert_eq!(c.perturb.n_permutations, 3);
        assert_eq!(c.perturb.options.tolerance, 0.1);
        assert_eq!(c.harness.sweep.instruction, "read");
        assert_eq!(c.harness.sweep.bins.len(), 1);
        match &c.harness.client {
            ClientConfig::Wire(w) => assert_eq!((w.model.as_str(), w.retries), ("m", 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<Config>("sede = 1").is_err());
        let c: Config = toml::from_str("[render]\ncanvas_w = 0").unwrap();
        assert!(c.validate().is_err());
    }
}
