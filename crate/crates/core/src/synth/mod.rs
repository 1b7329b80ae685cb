//! Synthetic labeled scenes standing in for recorded traffic data, the
//! dataset layout on disk, and the graph-free baselines.

mod baselines;
mod generate;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use baselines::{velocity_baseline, MlpBaseline, MlpConfig, STATIONARY_SPEED};
pub use generate::{generate, generate_scene, split_indices, GenAudit, GenConfig, GhostRule, ParkedRule, SPLIT, STEP_SECONDS};

use crate::error::{Error, Result};
use crate::scene::{load_scene, SceneDescription};
use crate::train::SceneSample;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Index of a generated dataset: the configuration and the scene files of
/// each split, relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: GenConfig,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn scene_file(i: usize) -> String {
    format!("scenes/scene_{i:05}.json")
}

/// Generates the dataset described by `cfg` into `dir`.
pub fn write_dataset(cfg: &GenConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    cfg.validate()?;
    fs::create_dir_all(dir.join("scenes"))?;
    for i in 0..cfg.scenes {
        let scene = generate_scene(cfg, i)?;
        fs::write(dir.join(scene_file(i)), serde_json::to_string(&scene)?)?;
    }
    let [train, val, test] = split_indices(cfg.scenes, cfg.seed).map(|s| s.into_iter().map(scene_file).collect());
    let manifest = DatasetManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        train,
        val,
        test,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::Io(e),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        location: format!("{} `{}`", path.display(), e.path()),
        message: e.inner().to_string(),
    })
}

/// Assembled train / validation / test samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Option<DatasetManifest>,
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let load = |files: &[String]| -> Result<Vec<SceneSample>> {
            files
                .iter()
                .map(|f| SceneSample::new(f.clone(), &load_scene(dir.join(f))?))
                .collect()
        };
        Ok(Dataset {
            root: dir.to_path_buf(),
            train: load(&manifest.train)?,
            val: load(&manifest.val)?,
            test: load(&manifest.test)?,
            manifest: Some(manifest),
        })
    }

    /// Generates in memory with the same split as [`write_dataset`].
    pub fn generate(cfg: &GenConfig) -> Result<(Self, Vec<SceneDescription>)> {
        let scenes = generate(cfg)?;
        let [train, val, test] = split_indices(cfg.scenes, cfg.seed);
        let pick = |idx: &[usize]| -> Result<Vec<SceneSample>> {
            idx.iter().map(|&i| SceneSample::new(scene_file(i), &scenes[i])).collect()
        };
        let ds = Dataset {
            root: PathBuf::new(),
            manifest: None,
            train: pick(&train)?,
            val: pick(&val)?,
            test: pick(&test)?,
        };
        Ok((ds, scenes))
    }
}
