use std::path::{Path, PathBuf};

use serde::Deserialize;
use todbias::attribution::RunConfig;
use todbias::pipeline::{ModelBackend, RemoteConfig, TemplateConfig};
use todbias::AttributePair;

use crate::cli::{AttributeArgs, BackendArgs, Shared};
use crate::exit::CliError;

/// Run configuration file; every field optional, paths relative to the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub global_seed: Option<u64>,
    pub runs: Option<usize>,
    pub axes: Option<Vec<String>>,
    pub pairs: Option<Vec<AttributePair>>,
    pub api_backend: Option<ModelBackend>,
    pub response_backend: Option<ModelBackend>,
    pub corpus_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub db_path: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus_path, &mut cfg.lexicon_path, &mut cfg.db_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_RUNS: usize = 3;

/// Parses a backend spec: a kind name, inline JSON, or `@file`.
pub fn parse_backend(spec: &str) -> Result<ModelBackend, CliError> {
    let spec = spec.trim();
    let from_json = |text: &str, origin: &str| {
        serde_json::from_str::<ModelBackend>(text).map_err(|e| CliError::usage(format!("backend {origin}: {e}")))
    };
    if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {path}: {e}")))?;
        return from_json(&text, path);
    }
    if spec.starts_with('{') {
        return from_json(spec, "spec");
    }
    match spec.replace('-', "_").as_str() {
        "echo_gold" | "mock_echo_gold" => Ok(ModelBackend::MockEchoGold),
        "template" | "mock_template" => Ok(ModelBackend::MockTemplate(TemplateConfig::default())),
        "remote" => Ok(ModelBackend::Remote(RemoteConfig::new(""))),
        "biased" | "mock_biased" => Err(CliError::usage(
            "mock_biased needs a configuration; pass it as JSON or @file",
        )),
        other => Err(CliError::usage(format!("unknown backend `{other}`"))),
    }
}

/// Fills remote settings from flags/environment, which win over the file.
pub fn apply_remote(backend: &mut ModelBackend, args: &BackendArgs) -> Result<(), CliError> {
    if let ModelBackend::Remote(cfg) = backend {
        if let Some(e) = &args.endpoint {
            cfg.endpoint = e.clone();
        }
        if let Some(t) = args.timeout {
            cfg.timeout_secs = t;
        }
        if let Some(n) = args.max_in_flight {
            cfg.max_in_flight = n;
        }
        if cfg.endpoint.trim().is_empty() {
            return Err(CliError::usage("remote backend needs --endpoint or TOD_MODEL_ENDPOINT"));
        }
    }
    Ok(())
}

pub fn backends(args: &BackendArgs, file: &FileConfig) -> Result<(ModelBackend, ModelBackend), CliError> {
    let pick = |flag: &Option<String>, from_file: &Option<ModelBackend>| -> Result<ModelBackend, CliError> {
        let mut b = match (flag, from_file) {
            (Some(spec), _) => parse_backend(spec)?,
            (None, Some(b)) => b.clone(),
            (None, None) => ModelBackend::MockEchoGold,
        };
        apply_remote(&mut b, args)?;
        Ok(b)
    };
    Ok((
        pick(&args.api_backend, &file.api_backend)?,
        pick(&args.response_backend, &file.response_backend)?,
    ))
}

pub fn parse_pairs(specs: &[String]) -> Result<Vec<AttributePair>, CliError> {
    specs
        .iter()
        .map(|s| s.parse().map_err(|e: todbias::Error| CliError::usage(e.to_string())))
        .collect()
}

/// Merges flags (and the environment, via clap) over the config file.
pub fn run_config(shared: &Shared, args: &AttributeArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (api_backend, response_backend) = backends(&args.backends, &file)?;
    let pairs = if args.pairs.pairs.is_empty() {
        file.pairs.clone().unwrap_or_default()
    } else {
        parse_pairs(&args.pairs.pairs)?
    };
    let axes = if args.pairs.axes.is_empty() {
        file.axes.clone().unwrap_or_default()
    } else {
        args.pairs.axes.clone()
    };
    let corpus_path = shared
        .corpus
        .clone()
        .or(file.corpus_path.clone())
        .ok_or_else(|| CliError::usage("attribute requires --corpus"))?;
    let db_path = shared
        .db
        .clone()
        .or(file.db_path.clone())
        .ok_or_else(|| CliError::usage("attribute requires --db"))?;
    let cfg = RunConfig {
        global_seed: shared.seed.or(file.global_seed).unwrap_or(DEFAULT_SEED),
        runs: args.runs.or(file.runs).unwrap_or(DEFAULT_RUNS),
        axes,
        pairs,
        api_backend,
        response_backend,
        corpus_path,
        lexicon_path: shared.lexicon.clone().or(file.lexicon_path.clone()),
        db_path,
        jobs: shared.jobs.or(file.jobs),
    };
    if cfg.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    for p in [Some(&cfg.corpus_path), Some(&cfg.db_path), cfg.lexicon_path.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(p)?;
    }
    Ok(cfg)
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("no such file: {}", path.display())))
    }
}
