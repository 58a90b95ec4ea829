//! Experiment configuration as read from TOML fixture files.

use serde::{Deserialize, Serialize};

use crate::align::TrainConfig;
use crate::data::{SyntheticSample, SyntheticWorld, SyntheticWorldConfig};
use crate::error::{Error, Result};
use crate::index::IvfParams;
use crate::pipeline::PipelineConfig;
use crate::rag::{LmmClient, MockLmm};

/// Bumped whenever a field changes meaning.
pub const RUN_CONFIG_VERSION: u32 = 1;

/// Held-out query sampling from a synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySpec {
    pub per_cluster: usize,
    /// RNG stream for held-out points; 0 is the database, so at least 1.
    pub stream: u64,
    /// Query with stored database records instead of held-out points.
    pub from_database: bool,
}

impl Default for QuerySpec {
    fn default() -> Self {
        Self { per_cluster: 64, stream: 1, from_database: false }
    }
}

/// Which LMM answers the prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LmmConfig {
    /// Spherical centroid of the positives plus seeded Gaussian noise.
    MockCentroid { sigma_km: f64 },
    /// The first positive reference, verbatim.
    MockEcho,
    #[cfg(feature = "http")]
    Http(crate::rag::HttpLmmConfig),
}

impl QuerySpec {
    pub fn sample(&self, world: &SyntheticWorld) -> Result<SyntheticSample> {
        if self.from_database {
            world.stored_queries(self.per_cluster)
        } else {
            world.queries(self.per_cluster, self.stream)
        }
    }
}

impl Default for LmmConfig {
    fn default() -> Self {
        Self::MockCentroid { sigma_km: 100.0 }
    }
}

impl LmmConfig {
    pub fn build(&self) -> Result<Box<dyn LmmClient>> {
        Ok(match self {
            Self::MockCentroid { sigma_km } => Box::new(MockLmm::centroid(*sigma_km)?),
            Self::MockEcho => Box::new(MockLmm::echo_top1()),
            #[cfg(feature = "http")]
            Self::Http(c) => Box::new(crate::rag::HttpLmmClient::new(c.clone())?),
        })
    }
}

/// Everything needed to reproduce one synthetic run end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub world: SyntheticWorldConfig,
    pub queries: QuerySpec,
    pub train: TrainConfig,
    /// Flat search when absent.
    pub index: Option<IvfParams>,
    pub pipeline: PipelineConfig,
    pub lmm: LmmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            world: SyntheticWorldConfig::default(),
            queries: QuerySpec::default(),
            train: TrainConfig::default(),
            index: None,
            pipeline: PipelineConfig::default(),
            lmm: LmmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::usage(format!(
                "config version {} is not supported (expected {RUN_CONFIG_VERSION})",
                self.version
            )));
        }
        if self.queries.stream == 0 && !self.queries.from_database {
            return Err(Error::usage("query stream 0 is the database; use 1 or higher"));
        }
        self.world.validate()?;
        self.train.validate()?;
        self.pipeline.generation.prompts.validate()?;
        let dims = &self.train.dims;
        if (dims.image_dim, dims.text_dim) != (self.world.image_dim, self.world.text_dim) {
            return Err(Error::usage(format!(
                "model expects {}/{} wide embeddings but the world has {}/{}",
                dims.image_dim, dims.text_dim, self.world.image_dim, self.world.text_dim
            )));
        }
        Ok(())
    }
}
