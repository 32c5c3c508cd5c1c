//! TOML run configuration. Precedence: file, then `GROUNDMEM_*`
//! variables, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use groundmem::constructor::{ConstructorConfig, PromptSource};
use groundmem::domain::palette;
use groundmem::eval::{BenchmarkConfig, EvalCondition};
use groundmem::gateway::BackendConfig;
use groundmem::memory::Fusion;
use groundmem::pipeline::PipelineConfig;
use groundmem::reasoner::ReasonerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionSection {
    pub candidates: usize,
    pub tolerance: f64,
    pub prompt_source: PromptSource,
    pub parse_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub lambda: f64,
    pub fusion: Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerSection {
    pub max_steps: usize,
    pub recall_reprompt: bool,
    pub abstain: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// `None` lets `query` infer the condition from the bank contents.
    pub condition: Option<EvalCondition>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub construction: ConstructionSection,
    pub retrieval: RetrievalSection,
    pub reasoner: ReasonerSection,
    pub run: RunSection,
}

impl Default for ConstructionSection {
    fn default() -> Self {
        let c = ConstructorConfig::default();
        ConstructionSection {
            candidates: c.candidates,
            tolerance: c.tolerance,
            prompt_source: c.prompt_source,
            parse_retries: PipelineConfig::default().parse_retries,
        }
    }
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let r = ReasonerConfig::default();
        RetrievalSection { lambda: r.lambda, fusion: r.fusion }
    }
}

impl Default for ReasonerSection {
    fn default() -> Self {
        let r = ReasonerConfig::default();
        ReasonerSection { max_steps: r.max_steps, recall_reprompt: r.recall_reprompt, abstain: r.abstain }
    }
}

/// Command-line values that override the file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<groundmem::gateway::Mode>,
    pub seed: Option<u64>,
    pub condition: Option<EvalCondition>,
    pub jobs: Option<usize>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).context("invalid configuration")
    }

    /// Reads `path` if given, overlays the environment, then the flags.
    pub fn resolve(path: Option<&Path>, env: impl Fn(&str) -> Option<String>, flags: &Overrides) -> Result<Config> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                Config::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => Config::default(),
        };
        config.backend.apply_env(env)?;
        if let Some(m) = flags.mode {
            config.backend.mode = m;
        }
        if let Some(s) = flags.seed {
            config.backend.seed = s;
        }
        if flags.condition.is_some() {
            config.run.condition = flags.condition;
        }
        if flags.jobs.is_some() {
            config.run.jobs = flags.jobs;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        let c = &self.construction;
        if c.candidates == 0 {
            bail!("construction.candidates must be at least 1");
        }
        if !(c.tolerance.is_finite() && c.tolerance >= 0.0) {
            bail!("construction.tolerance must be a non-negative number");
        }
        if !(0.0..=1.0).contains(&self.retrieval.lambda) {
            bail!("retrieval.lambda must lie in [0, 1]");
        }
        if self.reasoner.max_steps == 0 {
            bail!("reasoner.max_steps must be at least 1");
        }
        if self.run.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        Ok(())
    }

    pub fn condition(&self) -> EvalCondition {
        self.run.condition.unwrap_or(EvalCondition::Image)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let c = &self.construction;
        PipelineConfig {
            condition: self.condition().memory().unwrap_or(groundmem::domain::Condition::Visual),
            constructor: ConstructorConfig {
                candidates: c.candidates,
                tolerance: c.tolerance,
                palette: palette::CANONICAL.to_vec(),
                prompt_source: c.prompt_source,
            },
            parse_retries: c.parse_retries,
        }
    }

    pub fn reasoner(&self) -> ReasonerConfig {
        ReasonerConfig {
            condition: self.condition().memory().unwrap_or(groundmem::domain::Condition::Visual),
            lambda: self.retrieval.lambda,
            fusion: self.retrieval.fusion,
            recall_reprompt: self.reasoner.recall_reprompt,
            max_steps: self.reasoner.max_steps,
            abstain: self.reasoner.abstain.clone(),
        }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            condition: self.condition(),
            pipeline: self.pipeline(),
            reasoner: self.reasoner(),
            jobs: self.run.jobs.unwrap_or(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use groundmem::gateway::Mode;

    #[test]
    fn defaults_match_the_library() {
        let c = Config::default();
        assert_eq!(c.pipeline(), PipelineConfig::default());
        assert_eq!(c.reasoner(), ReasonerConfig::default());
        assert_eq!(c.backend.dropout, 0.25);
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[backend]\nseed = 1\n[retrieval]\nlambda = 0.5\nfusion = \"union\"\n[run]\ncondition = \"text\"\n",
        )
        .unwrap();
        let env = |k: &str| (k == "GROUNDMEM_SEED").then(|| "2".to_string());
        let c = Config::resolve(Some(&path), env, &Overrides::default()).unwrap();
        assert_eq!((c.backend.seed, c.condition(), c.retrieval.fusion), (2, EvalCondition::Text, Fusion::Union));
        assert_eq!(c.reasoner().lambda, 0.5);
        let flags = Overrides { seed: Some(3), condition: Some(EvalCondition::Both), ..Overrides::default() };
        let c = Config::resolve(Some(&path), env, &flags).unwrap();
        assert_eq!((c.backend.seed, c.condition()), (3, EvalCondition::Both));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("[retrieval]\nlambda = 1.5\n").unwrap().validate().is_err());
        assert!(Config::parse("[nonsense]\nx = 1\n").is_err());
        let live = Overrides { mode: Some(Mode::Live), ..Overrides::default() };
        assert!(Config::resolve(None, |_| None, &live).is_err());
    }
}
