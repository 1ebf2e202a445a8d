//! Pipeline configuration, read from JSON. Every block is optional and
//! falls back to its defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{default_category_table, RemoteParams, DEFAULT_TEMPLATE};
use crate::cluster::ClusterParams;
use crate::ephemeral::PPParams;
use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::ground::RansacParams;
use crate::project::ProjectParams;
use crate::proposal::FilterParams;
use crate::refine::{RefineParams, RefineStages};
use crate::track::TrackParams;
use crate::types::ObjectClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Mock,
    Remote(RemoteParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Backend failures abort the run.
    None,
    /// Backend failures drop all votes so labels come from the size prior.
    SizePrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryRow {
    pub name: String,
    pub class: ObjectClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub template: String,
    pub categories: Vec<CategoryRow>,
    pub backend: BackendConfig,
    pub fallback: Fallback,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            template: DEFAULT_TEMPLATE.into(),
            categories: default_category_table()
                .into_iter()
                .map(|(name, class)| CategoryRow { name, class })
                .collect(),
            backend: BackendConfig::Mock,
            fallback: Fallback::None,
        }
    }
}

impl ClassifyConfig {
    pub fn table(&self) -> Vec<(String, ObjectClass)> {
        self.categories.iter().map(|r| (r.name.clone(), r.class)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Per-frame RANSAC seeds are `ground.rng_seed + frame index`.
    pub ground: RansacParams,
    pub pp: PPParams,
    pub cluster: ClusterParams,
    pub proposal: FilterParams,
    pub track: TrackParams,
    pub project: ProjectParams,
    pub classify: ClassifyConfig,
    pub refine: RefineParams,
    pub stages: RefineStages,
    pub eval: EvalParams,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Directory receiving PNG renders of every classified view.
    pub debug_depth_dir: Option<String>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.ground.validate()?;
        self.pp.validate()?;
        self.cluster.validate()?;
        if self.proposal.min_points == 0 || !(self.proposal.min_height_m >= 0.0) {
            return Err(Error::Parameter(
                "proposal.min_points must be ≥ 1 and proposal.min_height_m ≥ 0".into(),
            ));
        }
        self.track.validate()?;
        self.project.validate()?;
        crate::classify::build_prompts(&self.classify.table(), &self.classify.template)?;
        self.refine.validate()?;
        if !(0.0..=1.0).contains(&self.eval.iou_thr) {
            return Err(Error::Parameter("eval.iou_thr must lie in [0, 1]".into()));
        }
        if self.eval.range_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("eval.range_edges must be increasing".into()));
        }
        Ok(())
    }
}
