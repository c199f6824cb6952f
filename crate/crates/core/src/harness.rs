//! Batch execution: run configuration, seeding, suite generation, results
//! files and reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{run_episode, Agent, AgentConfig, EpisodeRun, HeuristicAgent, RunSetup};
use crate::eval::{aggregate, EpisodeResult, MetricProfile, SummaryTable};
use crate::protocol::{connect_tcp_agent, spawn_exec_agent};
use crate::scene::{
    assign_splits, generate_episode, generate_scene, synthetic_catalog, Episode, EpisodeGenParams, EpisodeSplit, Scene,
    SceneGenParams,
};
use crate::sim::{NoiseProfile, SimConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("episode {episode} references unknown scene {scene}")]
    MissingScene { episode: String, scene: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("generation: {0}")]
    Generation(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum AgentSpec {
    BuiltinHeuristic,
    /// Shell command speaking the protocol on stdio; one process per episode.
    ExternalExec(String),
    /// Address of a protocol server; one connection per episode.
    ExternalTcp(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenes: PathBuf,
    pub episodes: PathBuf,
    pub agent: AgentSpec,
    pub agent_config: AgentConfig,
    pub perception: NoiseProfile,
    pub profile: MetricProfile,
    pub sim: SimConfig,
    pub global_seed: u64,
    pub parallelism: usize,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        self.perception.validate().map_err(HarnessError::Config)
    }

    /// Short digest of the environment and agent settings. The agent
    /// transport is left out so that a proxied agent reproduces in-process
    /// results exactly.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "agent_config": self.agent_config,
            "perception": self.perception,
            "profile": self.profile,
            "sim": self.sim,
            "global_seed": self.global_seed,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-episode seed: the first 8 bytes (little-endian) of
/// `sha256(global_seed as u64 LE || episode_id)`.
pub fn episode_seed(global_seed: u64, episode_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(episode_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Scenes by id plus the episodes that use them.
#[derive(Clone, Debug, Default)]
pub struct Suite {
    pub scenes: BTreeMap<String, Arc<Scene>>,
    pub episodes: Vec<Arc<Episode>>,
}

impl Suite {
    pub fn new(scenes: Vec<Scene>, episodes: Vec<Episode>) -> Result<Self, HarnessError> {
        let scenes: BTreeMap<String, Arc<Scene>> = scenes.into_iter().map(|s| (s.id.clone(), Arc::new(s))).collect();
        for e in &episodes {
            if !scenes.contains_key(&e.scene_id) {
                return Err(HarnessError::MissingScene {
                    episode: e.id.clone(),
                    scene: e.scene_id.clone(),
                });
            }
        }
        Ok(Self {
            scenes,
            episodes: episodes.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn scene_of(&self, episode: &Episode) -> Arc<Scene> {
        self.scenes[&episode.scene_id].clone()
    }

    pub fn episode(&self, id: &str) -> Option<&Arc<Episode>> {
        self.episodes.iter().find(|e| e.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub scenes: usize,
    pub episodes_per_scene: usize,
    pub seed: u64,
    pub split: EpisodeSplit,
    pub catalog_categories: usize,
    pub catalog_instances: usize,
    pub scene: SceneGenParams,
    pub episode: EpisodeGenParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            scenes: 10,
            episodes_per_scene: 5,
            seed: 0,
            split: EpisodeSplit::Train,
            catalog_categories: 129,
            catalog_instances: 2535,
            scene: SceneGenParams::default(),
            episode: EpisodeGenParams::default(),
        }
    }
}

/// Derived sub-seed for stream `tag` and index `i`.
fn sub_seed(seed: u64, tag: &str, i: u64) -> u64 {
    episode_seed(seed, &format!("{tag}/{i}"))
}

/// Generates `scenes` feasible scenes, trying successive sub-seeds.
pub fn generate_scenes(count: usize, seed: u64, params: &SceneGenParams) -> Result<Vec<Scene>, HarnessError> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        if i >= 20 * count as u64 + 20 {
            return Err(HarnessError::Generation(format!(
                "only {} of {count} scenes were feasible",
                out.len()
            )));
        }
        match generate_scene(sub_seed(seed, "scene", i), params) {
            Ok(s) => out.push(s),
            Err(e) => log::debug!("scene attempt {i} rejected: {e}"),
        }
        i += 1;
    }
    Ok(out)
}

/// Generates up to `per_scene` episodes for every scene; infeasible draws are
/// retried a bounded number of times.
pub fn generate_episodes(scenes: &[Scene], params: &SuiteParams) -> Result<Vec<Episode>, HarnessError> {
    let catalog = synthetic_catalog(params.catalog_categories, params.catalog_instances, params.seed);
    let splits = assign_splits(&catalog, params.seed).map_err(|e| HarnessError::Generation(e.to_string()))?;
    let mut out = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let mut made = 0;
        let mut attempt = 0u64;
        while made < params.episodes_per_scene && attempt < 4 * params.episodes_per_scene as u64 + 4 {
            let seed = sub_seed(params.seed, &format!("episode/{si}"), attempt);
            attempt += 1;
            match generate_episode(scene, &catalog, &splits, params.split, seed, &params.episode) {
                Ok(e) => {
                    out.push(e);
                    made += 1;
                }
                Err(e) => log::debug!("{}: episode attempt rejected: {e}", scene.id),
            }
        }
    }
    Ok(out)
}

/// Scenes plus `scenes × episodes_per_scene` episodes (fewer if some scene
/// has no feasible episode).
pub fn generate_suite(params: &SuiteParams) -> Result<Suite, HarnessError> {
    let scenes = generate_scenes(params.scenes, params.seed, &params.scene)?;
    let episodes = generate_episodes(&scenes, params)?;
    Suite::new(scenes, episodes)
}

pub fn save_scenes(dir: &Path, scenes: &[Scene]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in scenes {
        let path = dir.join(format!("{}.json", s.id));
        s.save(&path)
            .map_err(|e| HarnessError::Generation(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            Scene::load(p).map_err(|e| HarnessError::Parse {
                path: p.clone(),
                line: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable item");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_suite(scenes_dir: &Path, episodes: &Path) -> Result<Suite, HarnessError> {
    Suite::new(load_scenes(scenes_dir)?, read_jsonl(episodes)?)
}

fn make_agent(cfg: &RunConfig) -> Result<Box<dyn Agent>, String> {
    let (w, h) = (cfg.sim.camera.width, cfg.sim.camera.height);
    Ok(match &cfg.agent {
        AgentSpec::BuiltinHeuristic => Box::new(HeuristicAgent::new(cfg.agent_config)),
        AgentSpec::ExternalExec(cmd) => Box::new(spawn_exec_agent(cmd, w, h).map_err(|e| e.to_string())?),
        AgentSpec::ExternalTcp(addr) => Box::new(connect_tcp_agent(addr, w, h).map_err(|e| e.to_string())?),
    })
}

/// Runs one episode of `suite` under `cfg`, returning the full run.
pub fn run_one(suite: &Suite, episode: &Arc<Episode>, cfg: &RunConfig) -> EpisodeRun {
    let seed = episode_seed(cfg.global_seed, &episode.id);
    let setup = RunSetup {
        sim: cfg.sim,
        noise: cfg.perception,
        profile: cfg.profile,
        seed,
    };
    let mut run = match make_agent(cfg) {
        Ok(mut agent) => run_episode(suite.scene_of(episode), episode.clone(), agent.as_mut(), &setup),
        Err(reason) => EpisodeRun {
            trace: Default::default(),
            result: EpisodeResult {
                seed,
                ..EpisodeResult::failed(&episode.id, &format!("agent: {reason}"))
            },
        },
    };
    run.result.config_hash = cfg.config_hash();
    run
}

/// Runs every episode once on `parallelism` workers; results come back
/// sorted by episode id.
pub fn run_suite(suite: &Suite, cfg: &RunConfig) -> Result<Vec<EpisodeResult>, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut results: Vec<EpisodeResult> = pool.install(|| {
        suite
            .episodes
            .par_iter()
            .map(|e| {
                let r = run_one(suite, e, cfg).result;
                log::info!(
                    "{}: overall={} partial={} steps={}",
                    r.episode_id,
                    r.overall,
                    r.partial,
                    r.total_steps
                );
                r
            })
            .collect()
    });
    results.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    Ok(results)
}

/// Loads the suite, runs it, writes the sorted results file and returns
/// the summary row.
pub fn run_batch(cfg: &RunConfig) -> Result<SummaryTable, HarnessError> {
    let suite = load_suite(&cfg.scenes, &cfg.episodes)?;
    let results = run_suite(&suite, cfg)?;
    write_jsonl(&cfg.output, &results)?;
    let label = cfg
        .output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    aggregate(&label, &results).map_err(|e| HarnessError::Config(e.to_string()))
}

/// One summary row per results file, ordered by file name.
pub fn report(paths: &[PathBuf]) -> Result<Vec<SummaryTable>, HarnessError> {
    let mut paths = paths.to_vec();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    paths
        .iter()
        .map(|p| {
            let results: Vec<EpisodeResult> = read_jsonl(p)?;
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            aggregate(&label, &results).map_err(|e| HarnessError::Parse {
                path: p.clone(),
                line: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Plain binary PGM of a boolean grid (true = white), row 0 at the bottom.
pub fn write_pgm(
    path: &Path,
    rows: usize,
    cols: usize,
    value: impl Fn(usize, usize) -> u8,
) -> Result<(), HarnessError> {
    let mut buf = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        for c in 0..cols {
            buf.push(value(r, c));
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_isolated() {
        assert_eq!(episode_seed(1, "a"), episode_seed(1, "a"));
        assert_ne!(episode_seed(1, "a"), episode_seed(1, "b"));
        assert_ne!(episode_seed(1, "a"), episode_seed(2, "a"));
    }

    #[test]
    fn seed_matches_digest_prefix() {
        let mut bytes = 7u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"ep");
        let d = Sha256::digest(&bytes);
        let mut first = [0u8; 8];
        first.copy_from_slice(&d[..8]);
        assert_eq!(episode_seed(7, "ep"), u64::from_le_bytes(first));
    }
}
