//! Staged, resumable pipeline: ingest, cluster, personas, simulate,
//! evaluate, bootstrap and report.
//!
//! Every stage writes its artifacts under `<output_dir>/<stage>/` together
//! with a `manifest.json` holding the config hash, the run seed and sha256
//! digests of its inputs and outputs. A stage whose manifest still matches
//! is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{logs_from_jsonl, logs_to_jsonl, run_session, JourneyStats, Limits, SessionLog};
use crate::clustering::{best_of_restarts, nearest_sessions, select_k, Assignment, ClusterModel, ElbowCriteria, KSelectionReport};
use crate::eval::{
    bootstrap_analysis, evaluate, ArmOutcomes, BehavioralDistribution, BehavioralMode, BootstrapReport, EvalConfig,
    EvaluationReport, RunOutcomes, ShopLogs,
};
use crate::ingest::{extract_features, parse_events, sessionize, standardize, LineError, Session, SessionFeatures};

use crate::llm::{Backend, HttpBackend, HttpConfig, RetryPolicy, ScriptedBackend, ScriptedPolicyConfig};
use crate::persona::{
    aggregate_buyers, allocate_agents, build_persona, calibrate_intent_mix, compose_profiles, extract_preferences,
    generate_intents, summarize_cluster, AgentProfile, BuyerIntent, ClusterSummary, Lexicons, PersonaDimensions,
    PersonaError, PriceReference, ProductPreferences, ShopNorms,
};
use crate::seed::{derive_seed, hash_str, session_seed};
use crate::storefront::{load_storefront, Storefront, Variant};
use crate::synth::{events_to_jsonl, generate_shop, SynthShop, TreatmentKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} needs the output of {needs}; run `simgym {needs}` first")]
    MissingStageInput { stage: &'static str, needs: &'static str },
    #[error("stale manifest for {stage}: {detail}; remove {dir} and rerun the stage")]
    StaleManifest { stage: &'static str, detail: String, dir: String },
    #[error("stage {stage} was built from a different configuration than {upstream}; rerun {upstream} and later stages")]
    ConfigMismatch { stage: &'static str, upstream: &'static str },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{context}: {message}")]
    Runtime { context: String, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for validation and artifact-state errors, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingStageInput { .. }
            | PipelineError::StaleManifest { .. }
            | PipelineError::ConfigMismatch { .. } => 2,
            PipelineError::Io { .. } | PipelineError::Runtime { .. } => 1,
        }
    }
}

fn runtime(context: impl Into<String>, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime { context: context.into(), message: e.to_string() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShopConfig {
    pub shop_id: String,
    pub clickstream_path: PathBuf,
    pub storefront_path: PathBuf,
    /// Observed human A2C change, treatment minus control.
    pub human_delta: f64,
}

/// Number of clusters: a fixed count or `"auto"` for the elbow search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Fixed(usize),
    Named(String),
}

impl Default for KSetting {
    fn default() -> Self {
        KSetting::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSettings {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        Self { k_min: 2, k_max: 8, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        policy: ScriptedPolicyConfig,
    },
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted { policy: ScriptedPolicyConfig::default() }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn Backend> {
        match self {
            BackendConfig::Scripted { policy } => Box::new(ScriptedBackend::new(policy.clone())),
            BackendConfig::Http(cfg) => Box::new(HttpBackend::from_env(cfg.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub run_seed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { run_seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub mc_samples: usize,
    pub bootstrap_sizes: Vec<usize>,
    pub bootstrap_iterations: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { mc_samples: 100_000, bootstrap_sizes: (1..=14).map(|i| i * 50).collect(), bootstrap_iterations: 1000 }
    }
}

fn default_agents() -> usize {
    600
}

fn default_repeat() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub shops: Vec<ShopConfig>,
    #[serde(default = "default_agents")]
    pub agents_per_shop: usize,
    #[serde(default)]
    pub k: KSetting,
    #[serde(default)]
    pub clustering: ClusteringSettings,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub lexicons: Lexicons,
    #[serde(default)]
    pub eval: EvalSettings,
    /// Independent simulation runs (two for the bootstrap protocol).
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    pub output_dir: PathBuf,
    /// Worker threads for simulation; defaults to all cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn safe_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl RunConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        for s in &mut cfg.shops {
            s.clickstream_path = resolve(&s.clickstream_path);
            s.storefront_path = resolve(&s.storefront_path);
        }
        cfg.output_dir = resolve(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.shops.is_empty() {
            return bad("at least one shop is required".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.shops {
            if !safe_id(&s.shop_id) {
                return bad(format!("shop_id {:?} must be non-empty ASCII letters, digits, '-' or '_'", s.shop_id));
            }
            if !ids.insert(&s.shop_id) {
                return bad(format!("duplicate shop_id {}", s.shop_id));
            }
            for p in [&s.clickstream_path, &s.storefront_path] {
                if !p.is_file() {
                    return bad(format!("shop {}: {} does not exist", s.shop_id, p.display()));
                }
            }
            if !s.human_delta.is_finite() {
                return bad(format!("shop {}: human_delta must be finite", s.shop_id));
            }
        }
        if self.agents_per_shop < 2 {
            return bad("agents_per_shop must be >= 2".into());
        }
        match &self.k {
            KSetting::Fixed(0) => return bad("k must be >= 1".into()),
            KSetting::Named(n) if n != "auto" => return bad(format!("k must be a positive integer or \"auto\", got {n:?}")),
            _ => {}
        }
        let c = &self.clustering;
        if c.k_min == 0 || c.k_min > c.k_max || c.restarts == 0 {
            return bad("clustering needs 1 <= k_min <= k_max and restarts >= 1".into());
        }
        if self.repeat == 0 {
            return bad("repeat must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        self.limits.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let BackendConfig::Scripted { policy } = &self.backend {
            policy.validate().map_err(PipelineError::Config)?;
        }
        if self.eval.mc_samples < crate::eval::MIN_MC_SAMPLES {
            return bad(format!("eval.mc_samples must be >= {}", crate::eval::MIN_MC_SAMPLES));
        }
        if self.eval.bootstrap_iterations == 0 || self.eval.bootstrap_sizes.is_empty() || self.eval.bootstrap_sizes.contains(&0) {
            return bad("bootstrap needs iterations >= 1 and positive sizes".into());
        }
        Ok(())
    }

    /// Digest of every setting that can change an artifact. Paths, worker
    /// count and the repeat count (recorded by the simulate stage itself)
    /// are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = None;
        c.repeat = 0;
        for s in &mut c.shops {
            s.clickstream_path = PathBuf::new();
            s.storefront_path = PathBuf::new();
        }
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    fn shop_seed(&self, shop_id: &str, label: &str) -> u64 {
        derive_seed(self.seeds.run_seed, &[hash_str(shop_id), hash_str(label)])
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Cluster,
    Personas,
    Simulate,
    Evaluate,
    Bootstrap,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Cluster, Stage::Personas, Stage::Simulate, Stage::Evaluate, Stage::Bootstrap, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Personas => "personas",
            Stage::Simulate => "simulate",
            Stage::Evaluate => "evaluate",
            Stage::Bootstrap => "bootstrap",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    /// Input label to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory, to sha256.
    pub outputs: BTreeMap<String, String>,
}

/// JSON artifact envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    UpToDate,
    Ran { outputs: usize },
}

/// Resolved run: validated config plus derived hash.
pub struct Pipeline {
    pub config: RunConfig,
    pub config_hash: String,
}

type Outputs = BTreeMap<String, Vec<u8>>;

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("artifacts serialize");
    out.push(b'\n');
    out
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let config_hash = config.hash();
        Ok(Self { config, config_hash })
    }

    fn seed(&self) -> u64 {
        self.config.seeds.run_seed
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.config.output_dir.join(stage.name())
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("manifest.json")
    }

    fn stale(&self, stage: Stage, detail: impl Into<String>) -> PipelineError {
        PipelineError::StaleManifest { stage: stage.name(), detail: detail.into(), dir: self.stage_dir(stage).display().to_string() }
    }

    fn read_manifest(&self, stage: Stage) -> Result<Option<Manifest>, PipelineError> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let m: Manifest = serde_json::from_slice(&text).map_err(|e| self.stale(stage, format!("unreadable manifest ({e})")))?;
        if m.stage != stage {
            return Err(self.stale(stage, format!("manifest belongs to stage {}", m.stage.name())));
        }
        Ok(Some(m))
    }

    fn verify_outputs(&self, stage: Stage, m: &Manifest) -> Result<(), PipelineError> {
        for (rel, digest) in &m.outputs {
            let path = self.config.output_dir.join(rel);
            let bytes = fs::read(&path).map_err(|_| self.stale(stage, format!("{rel} is missing")))?;
            if sha256_hex(&bytes) != *digest {
                return Err(self.stale(stage, format!("{rel} was modified after it was written")));
            }
        }
        Ok(())
    }

    /// Manifest of a finished upstream stage, checked against this config.
    fn upstream(&self, stage: Stage, needs: Stage) -> Result<Manifest, PipelineError> {
        let m = self
            .read_manifest(needs)?
            .ok_or(PipelineError::MissingStageInput { stage: stage.name(), needs: needs.name() })?;
        if m.config_hash != self.config_hash {
            return Err(PipelineError::ConfigMismatch { stage: stage.name(), upstream: needs.name() });
        }
        self.verify_outputs(needs, &m)?;
        Ok(m)
    }

    fn read_artifact<T: DeserializeOwned>(&self, stage: Stage, rel: &str) -> Result<T, PipelineError> {
        let path = self.config.output_dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let a: Artifact<T> = serde_json::from_slice(&bytes).map_err(|e| self.stale(stage, format!("{rel}: {e}")))?;
        if a.config_hash != self.config_hash {
            return Err(PipelineError::ConfigMismatch { stage: stage.name(), upstream: a.stage.name() });
        }
        Ok(a.payload)
    }

    fn wrap<T: Serialize>(&self, stage: Stage, payload: T) -> Vec<u8> {
        to_json(&Artifact { stage, config_hash: self.config_hash.clone(), seed: self.seed(), payload })
    }

    /// Skips the stage when its manifest matches `inputs`, otherwise runs
    /// `work` and writes outputs followed by the manifest.
    fn run_stage(
        &self,
        stage: Stage,
        inputs: BTreeMap<String, String>,
        work: impl FnOnce() -> Result<Outputs, PipelineError>,
    ) -> Result<StageStatus, PipelineError> {
        if let Some(m) = self.read_manifest(stage)? {
            if m.config_hash == self.config_hash && m.inputs == inputs {
                self.verify_outputs(stage, &m)?;
                return Ok(StageStatus::UpToDate);
            }
        }
        let outputs = work()?;
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let mut digests = BTreeMap::new();
        for (rel, bytes) in &outputs {
            let path = self.config.output_dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            digests.insert(rel.clone(), sha256_hex(bytes));
        }
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let manifest = Manifest { stage, config_hash: self.config_hash.clone(), seed: self.seed(), inputs, outputs: digests };
        let path = self.manifest_path(stage);
        fs::write(&path, to_json(&manifest)).map_err(|e| io_err(&path, e))?;
        Ok(StageStatus::Ran { outputs: outputs.len() })
    }

    fn file_digest(path: &Path) -> Result<String, PipelineError> {
        fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| io_err(path, e))
    }

    fn load_storefront(&self, shop: &ShopConfig) -> Result<Storefront, PipelineError> {
        let text = fs::read_to_string(&shop.storefront_path).map_err(|e| io_err(&shop.storefront_path, e))?;
        load_storefront(&text).map_err(|e| runtime(format!("shop {}", shop.shop_id), e))
    }

    fn shop_rel(stage: Stage, shop_id: &str) -> String {
        format!("{}/{shop_id}.json", stage.name())
    }

    fn upstream_inputs(m: &Manifest) -> BTreeMap<String, String> {
        m.outputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn ingest(&self) -> Result<StageStatus, PipelineError> {
        let mut inputs = BTreeMap::new();
        for s in &self.config.shops {
            inputs.insert(format!("clickstream:{}", s.shop_id), Self::file_digest(&s.clickstream_path)?);
        }
        self.run_stage(Stage::Ingest, inputs, || {
            let mut out = Outputs::new();
            for s in &self.config.shops {
                let text = fs::read_to_string(&s.clickstream_path).map_err(|e| io_err(&s.clickstream_path, e))?;
                let ctx = || format!("ingest {}", s.shop_id);
                let parsed = parse_events(&text).map_err(|e| runtime(ctx(), e))?;
                let sessions = sessionize(&parsed.events).map_err(|e| runtime(ctx(), e))?;
                let features = sessions.iter().map(extract_features).collect();
                let payload = IngestPayload { shop_id: s.shop_id.clone(), sessions, features, line_errors: parsed.errors };
                out.insert(Self::shop_rel(Stage::Ingest, &s.shop_id), self.wrap(Stage::Ingest, payload));
            }
            Ok(out)
        })
    }

    pub fn cluster(&self) -> Result<StageStatus, PipelineError> {
        let up = self.upstream(Stage::Cluster, Stage::Ingest)?;
        self.run_stage(Stage::Cluster, Self::upstream_inputs(&up), || {
            let mut out = Outputs::new();
            for s in &self.config.shops {
                let ing: IngestPayload = self.read_artifact(Stage::Cluster, &Self::shop_rel(Stage::Ingest, &s.shop_id))?;
                let payload = self.cluster_shop(&s.shop_id, &ing)?;
                out.insert(Self::shop_rel(Stage::Cluster, &s.shop_id), self.wrap(Stage::Cluster, payload));
            }
            Ok(out)
        })
    }

    fn cluster_shop(&self, shop_id: &str, ing: &IngestPayload) -> Result<ClusterPayload, PipelineError> {
        let ctx = || format!("cluster {shop_id}");
        let x = standardize(&ing.features).map_err(|e| runtime(ctx(), e))?;
        let seed = self.config.shop_seed(shop_id, "cluster");
        let c = &self.config.clustering;
        let criteria = ElbowCriteria::default();
        let n = x.rows.len();
        let (k, selection) = match &self.config.k {
            KSetting::Fixed(k) => (*k, None),
            KSetting::Named(_) => {
                let hi = c.k_max.min(n);
                let lo = c.k_min.min(hi);
                let report = select_k(&x, lo..=hi, seed, c.restarts, &criteria).map_err(|e| runtime(ctx(), e))?;
                (report.chosen_k, Some(report))
            }
        };
        let mut model =
            best_of_restarts(&x.rows, k, seed, c.restarts, criteria.max_iter, criteria.tol).map_err(|e| runtime(ctx(), e))?;
        model.means = x.means.clone();
        model.stds = x.stds.clone();
        let assignments = ing
            .sessions
            .iter()
            .zip(&x.rows)
            .map(|(s, row)| model.assign(row).map(|a| (s.session_id.clone(), a)))
            .collect::<Result<_, _>>()
            .map_err(|e| runtime(ctx(), e))?;
        Ok(ClusterPayload { shop_id: shop_id.to_string(), model, selection, assignments })
    }

    pub fn personas(&self) -> Result<StageStatus, PipelineError> {
        let ing = self.upstream(Stage::Personas, Stage::Ingest)?;
        let clu = self.upstream(Stage::Personas, Stage::Cluster)?;
        let mut inputs = Self::upstream_inputs(&ing);
        inputs.extend(Self::upstream_inputs(&clu));
        for s in &self.config.shops {
            inputs.insert(format!("storefront:{}", s.shop_id), Self::file_digest(&s.storefront_path)?);
        }
        self.run_stage(Stage::Personas, inputs, || {
            let backend = self.config.backend.build();
            let mut out = Outputs::new();
            for s in &self.config.shops {
                let ing: IngestPayload = self.read_artifact(Stage::Personas, &Self::shop_rel(Stage::Ingest, &s.shop_id))?;
                let clu: ClusterPayload = self.read_artifact(Stage::Personas, &Self::shop_rel(Stage::Cluster, &s.shop_id))?;
                let sf = self.load_storefront(s)?;
                let payload = self.personas_shop(&s.shop_id, &ing, &clu, &sf, backend.as_ref())?;
                out.insert(Self::shop_rel(Stage::Personas, &s.shop_id), self.wrap(Stage::Personas, payload));
            }
            Ok(out)
        })
    }

    fn personas_shop(
        &self,
        shop_id: &str,
        ing: &IngestPayload,
        clu: &ClusterPayload,
        sf: &Storefront,
        backend: &dyn Backend,
    ) -> Result<PersonaPayload, PipelineError> {
        let ctx = |what: &str| format!("personas {shop_id} ({what})");
        let by_id: BTreeMap<&str, &Session> = ing.sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
        let mut sizes = vec![0usize; clu.model.k];
        for (_, a) in &clu.assignments {
            sizes[a.cluster_id] += 1;
        }
        let alloc = allocate_agents(&sizes, self.config.agents_per_shop).map_err(|e| runtime(ctx("allocation"), e))?;
        let norms = ShopNorms::from_sessions(&ing.sessions);
        let prices = PriceReference::from_storefront(sf);
        let policy = RetryPolicy { max_attempts: self.config.limits.llm_retries, ..RetryPolicy::default() };

        let mut clusters = Vec::new();
        for (c, &n) in alloc.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let cctx = |what: &str| ctx(&format!("cluster {c}, {what}"));
            let seed = |label: &str| derive_seed(self.config.shop_seed(shop_id, label), &[c as u64]);
            let members: Vec<&Session> = clu
                .assignments
                .iter()
                .filter(|(_, a)| a.cluster_id == c)
                .map(|(id, _)| by_id[id.as_str()])
                .collect();
            let summary = summarize_cluster(c, &members, sf);
            let preferences = extract_preferences(&sf.shop, &summary, sf, backend, &policy, seed("preferences"))
                .map_err(|e| runtime(cctx("preferences"), e))?;
            let intents = cluster_intents(&preferences, summary.a2c_rate, n, seed("intents"))
                .map_err(|e| runtime(cctx("intents"), e))?;

            // Representative sessions, nearest the centroid first, repeated
            // in order when the cluster has fewer sessions than agents.
            let nearest = nearest_sessions(&clu.model, &clu.assignments, c, n).map_err(|e| runtime(cctx("selection"), e))?;
            let selected: Vec<&Session> = (0..n).map(|i| by_id[nearest[i % nearest.len()].as_str()]).collect();
            let mut by_buyer: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
            for s in &nearest {
                let s = by_id[s.as_str()];
                by_buyer.entry(s.buyer_id.as_str()).or_default().push(s);
            }
            let fallback: Vec<&Session> = nearest.iter().map(|id| by_id[id.as_str()]).collect();
            let mut buyer_persona: BTreeMap<&str, PersonaDimensions> = BTreeMap::new();
            for (buyer, sessions) in &by_buyer {
                let p = self
                    .buyer_persona(sessions, &[&fallback, &members], sf, &prices, &norms, backend, seed(buyer))
                    .map_err(|e| runtime(cctx(&format!("buyer {buyer}")), e))?;
                buyer_persona.insert(buyer, p);
            }
            let personas: Vec<PersonaDimensions> =
                selected.iter().map(|s| buyer_persona[s.buyer_id.as_str()].clone()).collect();
            let profiles = compose_profiles(shop_id, c, &intents, &personas, &preferences)
                .map_err(|e| runtime(cctx("profiles"), e))?;
            clusters.push(ClusterPersonas {
                cluster_id: c,
                allocated: n,
                summary,
                preferences,
                intents,
                source_sessions: selected.iter().map(|s| s.session_id.clone()).collect(),
                personas,
                profiles,
            });
        }
        Ok(PersonaPayload { shop_id: shop_id.to_string(), clusters })
    }

    /// Persona of one buyer. A buyer whose sessions show no priced product
    /// takes the price dimension from the wider pools in order.
    #[allow(clippy::too_many_arguments)]
    fn buyer_persona(
        &self,
        sessions: &[&Session],
        pools: &[&[&Session]],
        sf: &Storefront,
        prices: &PriceReference,
        norms: &ShopNorms,
        backend: &dyn Backend,
        seed: u64,
    ) -> Result<PersonaDimensions, PersonaError> {
        let agg = aggregate_buyers(sessions, sf)?;
        match build_persona(&agg, prices, norms, &self.config.lexicons, Some(backend), seed) {
            Err(PersonaError::NoPricedProducts) => {
                for pool in pools {
                    let wide = aggregate_buyers(pool, sf)?;
                    if let Ok(p) = build_persona(&wide, prices, norms, &self.config.lexicons, None, seed) {
                        let mut own = agg.clone();
                        own.browsed_products = wide.browsed_products;
                        own.purchased_products = wide.purchased_products;
                        let mut out = build_persona(&own, prices, norms, &self.config.lexicons, Some(backend), seed)?;
                        out.reasoning = format!("{} Price tier taken from similar sessions.", out.reasoning);
                        debug_assert_eq!(out.price_tier, p.price_tier);
                        return Ok(out);
                    }
                }
                Err(PersonaError::NoPricedProducts)
            }
            other => other,
        }
    }

    /// Runs `repeat` independent simulations (`None` uses the config).
    pub fn simulate(&self, repeat: Option<usize>) -> Result<StageStatus, PipelineError> {
        let runs = repeat.unwrap_or(self.config.repeat);
        if runs == 0 {
            return Err(PipelineError::Config("repeat must be >= 1".into()));
        }
        let up = self.upstream(Stage::Simulate, Stage::Personas)?;
        let mut inputs = Self::upstream_inputs(&up);
        for s in &self.config.shops {
            inputs.insert(format!("storefront:{}", s.shop_id), Self::file_digest(&s.storefront_path)?);
        }
        inputs.insert("runs".into(), runs.to_string());
        self.run_stage(Stage::Simulate, inputs, || {
            let backend = self.config.backend.build();
            let mut shops = Vec::new();
            for s in &self.config.shops {
                let p: PersonaPayload = self.read_artifact(Stage::Simulate, &Self::shop_rel(Stage::Personas, &s.shop_id))?;
                let profiles: Vec<AgentProfile> = p.clusters.into_iter().flat_map(|c| c.profiles).collect();
                shops.push((s, self.load_storefront(s)?, profiles));
            }
            let jobs: Vec<(usize, usize, Variant, usize)> = (1..=runs)
                .flat_map(|r| {
                    shops.iter().enumerate().flat_map(move |(si, (_, _, profiles))| {
                        Variant::BOTH.into_iter().flat_map(move |v| (0..profiles.len()).map(move |a| (r, si, v, a)))
                    })
                })
                .collect();
            let simulate = || -> Vec<SessionLog> {
                jobs.par_iter()
                    .map(|&(r, si, v, a)| {
                        let (shop, sf, profiles) = &shops[si];
                        let run_seed = derive_seed(self.config.seeds.run_seed, &[r as u64]);
                        let seed = session_seed(run_seed, &shop.shop_id, a, v.as_str());
                        run_session(&profiles[a], sf, v, backend.as_ref(), &self.config.limits, seed)
                    })
                    .collect()
            };
            let logs = match self.config.workers {
                Some(w) => rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| runtime("worker pool", e))?
                    .install(simulate),
                None => simulate(),
            };
            let mut out = Outputs::new();
            let mut files = Vec::new();
            let mut rest = logs.as_slice();
            for r in 1..=runs {
                for (shop, _, profiles) in &shops {
                    for v in Variant::BOTH {
                        let (chunk, tail) = rest.split_at(profiles.len());
                        rest = tail;
                        let rel = format!("simulate/run{r}/{}.{}.jsonl", shop.shop_id, v.as_str());
                        out.insert(rel.clone(), logs_to_jsonl(chunk).into_bytes());
                        files.push(rel);
                    }
                }
            }
            let index = SimulateIndex { runs, shops: self.config.shops.iter().map(|s| s.shop_id.clone()).collect(), files };
            out.insert("simulate/index.json".into(), self.wrap(Stage::Simulate, index));
            Ok(out)
        })
    }

    fn read_logs(&self, stage: Stage, run: usize, shop_id: &str, v: Variant) -> Result<Vec<SessionLog>, PipelineError> {
        let rel = format!("simulate/run{run}/{shop_id}.{}.jsonl", v.as_str());
        let path = self.config.output_dir.join(&rel);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        logs_from_jsonl(&text).map_err(|e| self.stale(stage, format!("{rel}: {e}")))
    }

    fn simulate_index(&self, stage: Stage) -> Result<(Manifest, SimulateIndex), PipelineError> {
        let up = self.upstream(stage, Stage::Simulate)?;
        let index: SimulateIndex = self.read_artifact(stage, "simulate/index.json")?;
        let expected: Vec<String> = self.config.shops.iter().map(|s| s.shop_id.clone()).collect();
        if index.shops != expected {
            return Err(PipelineError::ConfigMismatch { stage: stage.name(), upstream: "simulate" });
        }
        Ok((up, index))
    }

    pub fn evaluate(&self) -> Result<StageStatus, PipelineError> {
        let (up, index) = self.simulate_index(Stage::Evaluate)?;
        self.run_stage(Stage::Evaluate, Self::upstream_inputs(&up), || {
            let mut runs = Vec::new();
            for r in 1..=index.runs {
                let mut shops = Vec::new();
                for s in &self.config.shops {
                    shops.push(ShopLogs {
                        shop_id: s.shop_id.clone(),
                        human_delta: s.human_delta,
                        control: self.read_logs(Stage::Evaluate, r, &s.shop_id, Variant::Control)?,
                        treatment: self.read_logs(Stage::Evaluate, r, &s.shop_id, Variant::Treatment)?,
                    });
                }
                let cfg = EvalConfig { mc_samples: self.config.eval.mc_samples, seed: derive_seed(self.seed(), &[hash_str("evaluate"), r as u64]) };
                runs.push(evaluate(&shops, &cfg).map_err(|e| runtime(format!("evaluate run {r}"), e))?);
            }
            let payload = EvaluatePayload { averaged: average(&runs), runs };
            let mut out = Outputs::new();
            out.insert("evaluate/scatter.csv".into(), scatter_csv(&payload.runs)?);
            out.insert("evaluate/report.json".into(), self.wrap(Stage::Evaluate, payload));
            Ok(out)
        })
    }

    pub fn bootstrap(&self) -> Result<StageStatus, PipelineError> {
        let (up, index) = self.simulate_index(Stage::Bootstrap)?;
        if index.runs < 2 {
            return Err(PipelineError::Config(format!(
                "bootstrap compares two independent runs but simulate produced {}; rerun simulate with --repeat 2",
                index.runs
            )));
        }
        self.run_stage(Stage::Bootstrap, Self::upstream_inputs(&up), || {
            let mut outcomes: Vec<RunOutcomes> = Vec::new();
            for r in 1..=2 {
                let mut run = RunOutcomes::new();
                for s in &self.config.shops {
                    let c = self.read_logs(Stage::Bootstrap, r, &s.shop_id, Variant::Control)?;
                    let t = self.read_logs(Stage::Bootstrap, r, &s.shop_id, Variant::Treatment)?;
                    run.insert(s.shop_id.clone(), ArmOutcomes::from_logs(&c, &t));
                }
                outcomes.push(run);
            }
            let e = &self.config.eval;
            let report = bootstrap_analysis(
                &outcomes[0],
                &outcomes[1],
                &e.bootstrap_sizes,
                e.bootstrap_iterations,
                derive_seed(self.seed(), &[hash_str("bootstrap")]),
            )
            .map_err(|e| runtime("bootstrap", e))?;
            let mut out = Outputs::new();
            out.insert("bootstrap/bands.csv".into(), bootstrap_csv(&report)?);
            out.insert("bootstrap/report.json".into(), self.wrap(Stage::Bootstrap, report));
            Ok(out)
        })
    }

    /// Renders the summary. Bootstrap results are included when present.
    pub fn report(&self) -> Result<StageStatus, PipelineError> {
        let ev = self.upstream(Stage::Report, Stage::Evaluate)?;
        let mut inputs = Self::upstream_inputs(&ev);
        let boot = match self.read_manifest(Stage::Bootstrap)? {
            Some(_) => {
                let m = self.upstream(Stage::Report, Stage::Bootstrap)?;
                inputs.extend(Self::upstream_inputs(&m));
                true
            }
            None => false,
        };
        self.run_stage(Stage::Report, inputs, || {
            let eval: EvaluatePayload = self.read_artifact(Stage::Report, "evaluate/report.json")?;
            let bootstrap: Option<BootstrapReport> =
                if boot { Some(self.read_artifact(Stage::Report, "bootstrap/report.json")?) } else { None };
            let text = render_summary(&eval, bootstrap.as_ref());
            let mut out = Outputs::new();
            out.insert("report/summary.md".into(), text.into_bytes());
            out.insert("report/report.json".into(), self.wrap(Stage::Report, FinalReport { evaluation: eval, bootstrap }));
            Ok(out)
        })
    }

    /// Every stage in order; bootstrap only when there are two runs.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>, PipelineError> {
        let mut done = vec![
            (Stage::Ingest, self.ingest()?),
            (Stage::Cluster, self.cluster()?),
            (Stage::Personas, self.personas()?),
            (Stage::Simulate, self.simulate(None)?),
            (Stage::Evaluate, self.evaluate()?),
        ];
        if self.config.repeat >= 2 {
            done.push((Stage::Bootstrap, self.bootstrap()?));
        }
        done.push((Stage::Report, self.report()?));
        Ok(done)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.config.output_dir.join("report/summary.md")
    }
}

/// Intents for `n` agents. A single-agent cluster gets one intent whose
/// readiness follows the cluster's majority outcome.
fn cluster_intents(prefs: &ProductPreferences, a2c_rate: f64, n: usize, seed: u64) -> Result<Vec<BuyerIntent>, PersonaError> {
    if n >= 2 {
        let k = calibrate_intent_mix(a2c_rate, n)?;
        return generate_intents(prefs, k, n, seed);
    }
    let want = a2c_rate >= 0.5;
    let pair = generate_intents(prefs, 1, 2, seed)?;
    Ok(pair.into_iter().filter(|i| i.purchase_focused == want).take(n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestPayload {
    pub shop_id: String,
    pub sessions: Vec<Session>,
    pub features: Vec<SessionFeatures>,
    pub line_errors: Vec<LineError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPayload {
    pub shop_id: String,
    pub model: ClusterModel,
    pub selection: Option<KSelectionReport>,
    pub assignments: Vec<(String, Assignment)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPersonas {
    pub cluster_id: usize,
    pub allocated: usize,
    pub summary: ClusterSummary,
    pub preferences: ProductPreferences,
    pub intents: Vec<BuyerIntent>,
    /// Session whose buyer each persona was built from.
    pub source_sessions: Vec<String>,
    pub personas: Vec<PersonaDimensions>,
    pub profiles: Vec<AgentProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaPayload {
    pub shop_id: String,
    pub clusters: Vec<ClusterPersonas>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateIndex {
    pub runs: usize,
    pub shops: Vec<String>,
    pub files: Vec<String>,
}

/// Metrics averaged over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub runs: usize,
    pub alignment_rate: f64,
    pub alignment_probability: f64,
    /// Mean over runs where the correlation is defined.
    pub pearson: Option<f64>,
    pub goal_reached_pct: f64,
    pub timeout_pct: f64,
    pub mean_steps: f64,
    pub std_steps: f64,
    /// Pooled over shops and runs.
    pub behavioral_distribution: BTreeMap<BehavioralMode, f64>,
    pub differing_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatePayload {
    pub runs: Vec<EvaluationReport>,
    pub averaged: AveragedMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub evaluation: EvaluatePayload,
    pub bootstrap: Option<BootstrapReport>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn average(runs: &[EvaluationReport]) -> AveragedMetrics {
    let pearsons: Vec<f64> = runs.iter().filter_map(|r| r.metrics.pearson).collect();
    let journeys: Vec<&JourneyStats> = runs.iter().filter_map(|r| r.journey.as_ref()).collect();
    let mut counts: BTreeMap<BehavioralMode, usize> = BTreeMap::new();
    let mut differing = 0;
    for d in runs.iter().flat_map(|r| r.per_shop.iter().filter_map(|s| s.behavioral_distribution.as_ref())) {
        differing += d.differing_agents;
        for (m, n) in &d.counts {
            *counts.entry(*m).or_default() += n;
        }
    }
    let dist: BehavioralDistribution = BehavioralDistribution {
        differing_agents: differing,
        shares: counts.iter().map(|(m, &n)| (*m, n as f64 / differing.max(1) as f64)).collect(),
        counts,
        no_differing_agents: differing == 0,
    };
    AveragedMetrics {
        runs: runs.len(),
        alignment_rate: mean(runs.iter().map(|r| r.metrics.alignment_rate)),
        alignment_probability: mean(runs.iter().map(|r| r.metrics.alignment_probability)),
        pearson: (!pearsons.is_empty()).then(|| mean(pearsons.iter().copied())),
        goal_reached_pct: mean(journeys.iter().map(|j| j.goal_reached_pct)),
        timeout_pct: mean(journeys.iter().map(|j| j.timeout_pct)),
        mean_steps: mean(journeys.iter().map(|j| j.mean_steps)),
        std_steps: mean(journeys.iter().map(|j| j.std_steps)),
        behavioral_distribution: dist.shares,
        differing_agents: dist.differing_agents,
    }
}

fn csv_bytes(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).map_err(|e| runtime("csv", e))?;
    w.into_inner().map_err(|e| runtime("csv", e))
}

fn scatter_csv(runs: &[EvaluationReport]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|w| {
        w.write_record(["run", "shop_id", "agent_delta", "human_delta", "noise_band"])?;
        for (r, rep) in runs.iter().enumerate() {
            for s in &rep.per_shop {
                w.write_record([
                    (r + 1).to_string(),
                    s.shop_id.clone(),
                    s.agent_delta.to_string(),
                    s.human_delta.to_string(),
                    s.noise_band.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

fn bootstrap_csv(report: &BootstrapReport) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|w| {
        w.write_record(["size", "metric", "mean", "median", "p10", "p90"])?;
        for row in &report.rows {
            let s = row.sign_alignment;
            w.write_record([row.size.to_string(), "sign_alignment".into(), s.mean.to_string(), s.median.to_string(), s.p10.to_string(), s.p90.to_string()])?;
            match row.correlation {
                Some(c) => w.write_record([row.size.to_string(), "correlation".into(), c.mean.to_string(), c.median.to_string(), c.p10.to_string(), c.p90.to_string()])?,
                None => w.write_record([row.size.to_string(), "correlation".into(), "undefined".into(), String::new(), String::new(), String::new()])?,
            }
        }
        Ok(())
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("undefined".into(), |v| format!("{v:.3}"))
}

/// Markdown summary shaped like the headline, session-outcome and
/// behavioral-mode tables.
pub fn render_summary(eval: &EvaluatePayload, bootstrap: Option<&BootstrapReport>) -> String {
    let a = &eval.averaged;
    let mut s = String::new();
    let _ = writeln!(s, "# Simulation report\n");
    let _ = writeln!(s, "Averaged over {} run(s).\n", a.runs);
    let _ = writeln!(s, "## Predictive validity\n");
    let _ = writeln!(s, "| Correlation | Alignment | Alignment Prob. |\n|---|---|---|");
    let _ = writeln!(s, "| {} | {:.1}% | {:.3} |\n", fmt_opt(a.pearson), a.alignment_rate, a.alignment_probability);
    let _ = writeln!(s, "## Session outcomes\n");
    let _ = writeln!(s, "| Goal Reached | Timeout (Steps Limit) | Steps (mean ± std) |\n|---|---|---|");
    let _ = writeln!(s, "| {:.2}% | {:.2}% | {:.2} ± {:.2} |\n", a.goal_reached_pct, a.timeout_pct, a.mean_steps, a.std_steps);
    let _ = writeln!(s, "## Behavioral modes ({} agents changed outcome)\n", a.differing_agents);
    let _ = writeln!(s, "| Mode | Share |\n|---|---|");
    for m in BehavioralMode::ALL {
        let share = a.behavioral_distribution.get(&m).copied().unwrap_or(0.0);
        let _ = writeln!(s, "| {} | {:.1}% |", m.label(), 100.0 * share);
    }
    let _ = writeln!(s, "\n## Per shop\n");
    let _ = writeln!(s, "| Run | Shop | Agent Δ | Human Δ | 99% null band | Alignment Prob. | Note |\n|---|---|---|---|---|---|---|");
    for (r, rep) in eval.runs.iter().enumerate() {
        for p in &rep.per_shop {
            let note = if p.within_noise { "within noise band" } else if p.agent_delta < 0.0 { "decrease" } else { "increase" };
            let _ = writeln!(
                s,
                "| {} | {} | {:+.4} | {:+.4} | ±{:.4} | {} | {} |",
                r + 1,
                p.shop_id,
                p.agent_delta,
                p.human_delta,
                p.noise_band,
                fmt_opt(p.alignment_prob),
                note
            );
        }
    }
    if let Some(b) = bootstrap {
        let _ = writeln!(s, "\n## Bootstrap ({} iterations)\n", b.iterations);
        let _ = writeln!(s, "| Agents | Sign agreement mean | median | P10–P90 | Correlation mean | P10–P90 |\n|---|---|---|---|---|---|");
        for row in &b.rows {
            let sa = row.sign_alignment;
            let corr = match row.correlation {
                Some(c) => format!("{:.3} | {:.3}–{:.3}", c.mean, c.p10, c.p90),
                None => "undefined | ".into(),
            };
            let _ = writeln!(s, "| {} | {:.3} | {:.3} | {:.3}–{:.3} | {} |", row.size, sa.mean, sa.median, sa.p10, sa.p90, corr);
        }
    }
    s
}

/// Human A2C change assumed for a synthetic shop: layouts that add
/// friction lose conversions, an unchanged layout barely moves.
pub fn synthetic_human_delta(kind: TreatmentKind) -> f64 {
    match kind {
        TreatmentKind::Identical => 0.002,
        TreatmentKind::Deeper => -0.04,
        TreatmentKind::NoSearch => -0.02,
        TreatmentKind::FewerPerPage => -0.01,
    }
}

/// Writes clickstream and storefront files for each shop into `dir` plus a
/// `run.toml` pointing at them, and returns the config path.
pub fn write_synthetic_fixture(
    dir: &Path,
    shops: &[SynthShop],
    agents_per_shop: usize,
    repeat: usize,
    run_seed: u64,
) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut toml = format!(
        "output_dir = \"out\"\nagents_per_shop = {agents_per_shop}\nrepeat = {repeat}\nk = \"auto\"\n\n[seeds]\nrun_seed = {run_seed}\n"
    );
    for spec in shops {
        if !safe_id(&spec.shop_id) {
            return Err(PipelineError::Config(format!("shop_id {:?} is not a safe file name", spec.shop_id)));
        }
        let out = generate_shop(spec);
        let id = &spec.shop_id;
        let write = |name: String, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_err(&path, e))
        };
        write(format!("{id}.events.jsonl"), events_to_jsonl(&out.events))?;
        let mut doc = serde_json::to_string_pretty(&out.storefront).expect("storefront serializes");
        doc.push('\n');
        write(format!("{id}.storefront.json"), doc)?;
        let _ = write!(
            toml,
            "\n[[shops]]\nshop_id = \"{id}\"\nclickstream_path = \"{id}.events.jsonl\"\nstorefront_path = \"{id}.storefront.json\"\nhuman_delta = {:?}\n",
            synthetic_human_delta(spec.treatment)
        );
    }
    let path = dir.join("run.toml");
    fs::write(&path, toml).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
