//! Stage orchestration for the command-line driver.
//!
//! Stages read the input directory and write into the output directory.
//! Intermediates (`hourly_laeq.csv`, `fused.csv`, `features.csv`,
//! `model_{target}.json`) are recorded in `manifest.json` with a key derived
//! from everything they depend on and the SHA-256 of the file written. A later
//! run reuses an intermediate when both still match, and because every number
//! is written in round-trip form the results are the same either way.

use crate::acoustics::{self, HourlyLaeq, DEFAULT_RETENTION_DBA};
use crate::exposure::{
    self, compare_bases, exposure_matrix, gini_series, rotation_contrast, rotation_table, theta_label,
    ExposureError, ExposureMatrix, PopulationBasis, DEFAULT_BLOCK_HOURS, DEFAULT_THRESHOLDS,
};
use crate::fusion::{
    self, build_features, fuse, fused_table, infer_schedule, map_tracts, FeatureTable, FusionError,
    MappingMode, Target, TractHourRecord,
};
use crate::gbm::{
    self, evaluate, split_data, split_data_stream, GbmError, Metrics, ModelDocument, TrainConfig,
};
use crate::ingest::{self, Bundle, IngestError, Runway, Severity, ValidationReport};
use crate::output::{Cell, Format, Table, TableError};
use crate::shap::{self, ShapError};
use crate::synth::REFERENCE_POPULATION_FILE;
use crate::time::{floor_hour, format_timestamp, parse_timestamp, StudyWindow, WindowError};
use crate::validation::{
    aggregate_to_district, align, classify_diurnal, diurnal_profile, pct_change, r_squared, DiurnalConfig,
    HourlySeries, ValidationError,
};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const HOURLY_LAEQ_FILE: &str = "hourly_laeq.csv";
pub const FUSED_FILE: &str = "fused.csv";
pub const FEATURES_FILE: &str = "features.csv";

/// Meteorological features whose dependence data is exported.
pub const DEPENDENCE_FEATURES: [&str; 4] = [
    "temperature_c",
    "wind_speed_kt",
    "wind_deviation_deg",
    "cloud_cover_tenths",
];

const INPUT_FILES: [&str; 6] = [
    ingest::SPL_FILE,
    ingest::FLIGHTS_FILE,
    ingest::WEATHER_FILE,
    ingest::POPULATION_FILE,
    ingest::TRACTS_FILE,
    ingest::NMTS_FILE,
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad configuration value; the driver treats it as a usage error.
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Table {
        path: String,
        #[source]
        source: TableError,
    },
    #[error("{path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("{0} validation finding(s) of severity error; see findings")]
    InvalidInput(usize),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
    #[error("{target} model: {source}")]
    Gbm {
        target: &'static str,
        #[source]
        source: GbmError,
    },
    #[error("{target} attributions: {source}")]
    Shap {
        target: &'static str,
        #[source]
        source: ShapError,
    },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl PipelineError {
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Inferred from the weather hours when absent.
    pub window: Option<StudyWindow>,
    /// Sorted, deduplicated, non-empty.
    pub thresholds: Vec<f64>,
    pub retention_dba: f64,
    pub mapping: MappingMode,
    pub train: TrainConfig,
    pub seed: u64,
    pub format: Format,
    pub block_hours: u32,
    pub diurnal: DiurnalConfig,
    /// Runways flights may use; empty disables the check.
    pub runways: Vec<Runway>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("."),
            output: PathBuf::from("out"),
            window: None,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            retention_dba: DEFAULT_RETENTION_DBA,
            mapping: MappingMode::default(),
            train: TrainConfig::default(),
            seed: 0,
            format: Format::Csv,
            block_hours: DEFAULT_BLOCK_HOURS,
            diurnal: DiurnalConfig::default(),
            runways: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key} = {value:?} is not a valid number")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, PipelineError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| PipelineError::Config(format!("{key}: bad entry {s:?}")))
        })
        .collect()
}

fn parse_hours(key: &str, value: &str) -> Result<(u32, u32), PipelineError> {
    let parts: Vec<u32> = parse_list(key, value)?;
    match parts[..] {
        [a, b] => Ok((a, b)),
        _ => Err(PipelineError::Config(format!("{key} expects start,end hours"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting. Keys match the long flag names with
    /// `-` or `_` separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "in" | "input" => self.input = PathBuf::from(v),
            "out" | "output" => self.output = PathBuf::from(v),
            "seed" => self.seed = parse_num(&key, v)?,
            "theta" | "thresholds" => self.set_thresholds(parse_list(&key, v)?)?,
            "retention_dba" => self.retention_dba = parse_num(&key, v)?,
            "mapping" => self.mapping = v.parse().map_err(PipelineError::Config)?,
            "format" => self.format = v.parse().map_err(PipelineError::Config)?,
            "block_hours" => self.block_hours = parse_num(&key, v)?,
            "window_start" => self.set_window(Some(v), None)?,
            "window_end" => self.set_window(None, Some(v))?,
            "runways" => self.runways = parse_list(&key, v)?,
            "learning_rate" => self.train.learning_rate = parse_num(&key, v)?,
            "rounds_max" => self.train.rounds_max = parse_num(&key, v)?,
            "max_depth" => self.train.max_depth = parse_num(&key, v)?,
            "lambda" => self.train.lambda = parse_num(&key, v)?,
            "gamma" => self.train.gamma = parse_num(&key, v)?,
            "min_child_weight" => self.train.min_child_weight = parse_num(&key, v)?,
            "early_stopping_patience" => self.train.early_stopping_patience = parse_num(&key, v)?,
            "split_fraction" => self.train.split_fraction = parse_num(&key, v)?,
            "diurnal_day" => self.diurnal.day = parse_hours(&key, v)?,
            "diurnal_night" => self.diurnal.night = parse_hours(&key, v)?,
            "diurnal_margin" => self.diurnal.margin = parse_num(&key, v)?,
            other => return Err(PipelineError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Sets both window bounds at once; needed when only one is known after a
    /// config file set the other.
    pub fn set_window(&mut self, start: Option<&str>, end: Option<&str>) -> Result<(), PipelineError> {
        let parse = |k: &str, v: &str| {
            parse_timestamp(v).ok_or_else(|| PipelineError::Config(format!("{k}: bad timestamp {v:?}")))
        };
        let start = match start {
            Some(s) => Some(parse("window_start", s)?),
            None => self.window.map(|w| w.start),
        };
        let end = match end {
            Some(e) => Some(parse("window_end", e)?),
            None => self.window.map(|w| w.end),
        };
        self.window = match (start, end) {
            (Some(s), Some(e)) => {
                Some(StudyWindow::new(s, e).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
            (None, None) => None,
            _ => {
                return Err(PipelineError::Config(
                    "window_start and window_end must be given together".into(),
                ))
            }
        };
        Ok(())
    }

    pub fn set_thresholds(&mut self, mut thetas: Vec<f64>) -> Result<(), PipelineError> {
        if thetas.is_empty() {
            return Err(PipelineError::Config("at least one threshold is required".into()));
        }
        if let Some(t) = thetas.iter().find(|t| !t.is_finite()) {
            return Err(PipelineError::Config(format!("threshold {t} is not finite")));
        }
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();
        self.thresholds = thetas;
        Ok(())
    }

    /// Reads a `key = value` file. Blank lines and `#` comments are skipped;
    /// window bounds may appear in either order.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut start = None;
        let mut end = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            let key = k.trim().replace('-', "_");
            let located = |e: PipelineError| match e {
                PipelineError::Config(m) => {
                    PipelineError::Config(format!("{}:{}: {m}", path.display(), i + 1))
                }
                other => other,
            };
            match key.as_str() {
                "window_start" => start = Some(v.trim().to_string()),
                "window_end" => end = Some(v.trim().to_string()),
                _ => self.set(&key, v).map_err(located)?,
            }
        }
        if start.is_some() || end.is_some() {
            self.set_window(start.as_deref(), end.as_deref())?;
        }
        Ok(())
    }

    /// Model settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if !self.retention_dba.is_finite() {
            return Err(PipelineError::Config("retention_dba must be finite".into()));
        }
        if self.block_hours == 0 || 24 % self.block_hours != 0 {
            return Err(PipelineError::Config(format!(
                "block_hours {} must divide 24",
                self.block_hours
            )));
        }
        self.train_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        classify_diurnal(&[1.0; 24], &self.diurnal).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
struct StageEntry {
    key: String,
    sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
struct Manifest {
    stages: BTreeMap<String, StageEntry>,
}

/// A loaded input directory plus everything derived from it so far.
pub struct Session {
    pub config: RunConfig,
    pub bundle: Bundle,
    pub window: StudyWindow,
    /// SHA-256 per input file name.
    pub input_hashes: BTreeMap<String, String>,
    reference_population: Option<Vec<ingest::PopulationRecord>>,
    manifest: Manifest,
    hourly: Option<(Vec<HourlyLaeq>, String)>,
    fused: Option<(Vec<TractHourRecord>, String)>,
    features: Option<(FeatureTable, String)>,
    models: BTreeMap<&'static str, ModelDocument>,
    validation: Option<ValidationReport>,
}

fn read_input(dir: &Path, name: &str) -> Result<Vec<u8>, PipelineError> {
    let path = dir.join(name);
    std::fs::read(&path).map_err(io_err(&path))
}

fn in_file<T>(dir: &Path, name: &str, parsed: Result<T, IngestError>) -> Result<T, PipelineError> {
    parsed.map_err(|e| {
        PipelineError::Ingest(IngestError::InFile {
            path: dir.join(name).display().to_string(),
            source: Box::new(e),
        })
    })
}

/// Hour span of the weather records.
fn weather_window(bundle: &Bundle) -> Result<StudyWindow, PipelineError> {
    let hours = bundle.weather.iter().map(|w| floor_hour(&w.hour_start));
    let (Some(start), Some(last)) = (hours.clone().min(), hours.max()) else {
        return Err(PipelineError::Config(
            "no weather records to infer the study window from; pass --window-start/--window-end".into(),
        ));
    };
    Ok(StudyWindow::new(start, last + chrono::Duration::hours(1))?)
}

impl Session {
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        config.check()?;
        let dir = config.input.clone();
        let mut input_hashes = BTreeMap::new();
        let mut raw = HashMap::new();
        for name in INPUT_FILES {
            let bytes = read_input(&dir, name)?;
            input_hashes.insert(name.to_string(), sha256_hex(&bytes));
            raw.insert(name, bytes);
        }
        let bundle = Bundle {
            spl: in_file(&dir, ingest::SPL_FILE, ingest::parse_spl(&raw[ingest::SPL_FILE]))?,
            flights: in_file(
                &dir,
                ingest::FLIGHTS_FILE,
                ingest::parse_flights(&raw[ingest::FLIGHTS_FILE]),
            )?,
            weather: in_file(
                &dir,
                ingest::WEATHER_FILE,
                ingest::parse_weather(&raw[ingest::WEATHER_FILE]),
            )?,
            population: in_file(
                &dir,
                ingest::POPULATION_FILE,
                ingest::parse_population(&raw[ingest::POPULATION_FILE]),
            )?,
            tracts: in_file(
                &dir,
                ingest::TRACTS_FILE,
                ingest::parse_tracts(&raw[ingest::TRACTS_FILE]),
            )?,
            nmts: in_file(
                &dir,
                ingest::NMTS_FILE,
                ingest::parse_nmts(&raw[ingest::NMTS_FILE]),
            )?,
        };
        drop(raw);
        let reference_path = dir.join(REFERENCE_POPULATION_FILE);
        let reference_population = if reference_path.is_file() {
            let bytes = read_input(&dir, REFERENCE_POPULATION_FILE)?;
            input_hashes.insert(REFERENCE_POPULATION_FILE.to_string(), sha256_hex(&bytes));
            Some(in_file(
                &dir,
                REFERENCE_POPULATION_FILE,
                ingest::parse_population(&bytes),
            )?)
        } else {
            None
        };
        let window = match config.window {
            Some(w) => w,
            None => weather_window(&bundle)?,
        };
        std::fs::create_dir_all(&config.output).map_err(io_err(&config.output))?;
        let manifest = Self::read_manifest(&config.output)?;
        Ok(Self {
            config,
            bundle,
            window,
            input_hashes,
            reference_population,
            manifest,
            hourly: None,
            fused: None,
            features: None,
            models: BTreeMap::new(),
            validation: None,
        })
    }

    fn read_manifest(out: &Path) -> Result<Manifest, PipelineError> {
        let path = out.join(MANIFEST_FILE);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| PipelineError::Manifest {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn write_manifest(&self) -> Result<(), PipelineError> {
        let path = self.config.output.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(io_err(&path))
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    fn input_hash(&self, name: &str) -> &str {
        self.input_hashes.get(name).map_or("", String::as_str)
    }

    /// Bytes of a cached intermediate whose recorded key and hash still match.
    fn cached(&self, file: &str, key: &str) -> Option<Vec<u8>> {
        let entry = self.manifest.stages.get(file)?;
        if entry.key != key {
            return None;
        }
        let bytes = std::fs::read(self.out_path(file)).ok()?;
        (sha256_hex(&bytes) == entry.sha256).then_some(bytes)
    }

    fn store(&mut self, file: &str, key: String, bytes: &[u8]) -> Result<String, PipelineError> {
        let path = self.out_path(file);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        let sha256 = sha256_hex(bytes);
        self.manifest.stages.insert(
            file.to_string(),
            StageEntry {
                key,
                sha256: sha256.clone(),
            },
        );
        self.write_manifest()?;
        Ok(sha256)
    }

    fn stage_key(&self, stage: &str, params: Value) -> String {
        sha256_hex(
            json!({ "stage": stage, "window": self.window, "params": params })
                .to_string()
                .as_bytes(),
        )
    }

    fn table_err(&self, file: &str) -> impl FnOnce(TableError) -> PipelineError {
        let path = self.out_path(file).display().to_string();
        move |source| PipelineError::Table { path, source }
    }

    /// Final outputs honour `--format`.
    pub fn write_table(&self, table: &Table, stem: &str) -> Result<PathBuf, PipelineError> {
        let path = self.out_path(&format!("{stem}.{}", self.config.format.extension()));
        table
            .write(&self.config.output, stem, self.config.format)
            .map_err(io_err(&path))
    }

    /// Cross-stream checks; writes `findings` and fails on error findings.
    pub fn validate(&mut self) -> Result<&ValidationReport, PipelineError> {
        if self.validation.is_none() {
            let report = ingest::validate_bundle(&self.bundle, &self.window, &self.config.runways);
            self.write_table(&findings_table(&report), "findings")?;
            self.validation = Some(report);
        }
        let report = self.validation.as_ref().expect("set above");
        let errors = report
            .findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .count();
        if errors > 0 {
            return Err(PipelineError::InvalidInput(errors));
        }
        Ok(report)
    }

    pub fn hourly_laeq(&mut self) -> Result<&[HourlyLaeq], PipelineError> {
        if self.hourly.is_none() {
            let key = self.stage_key(
                "laeq",
                json!({ "spl": self.input_hash(ingest::SPL_FILE), "retention_dba": self.config.retention_dba }),
            );
            let value = match self.cached(HOURLY_LAEQ_FILE, &key) {
                Some(bytes) => (
                    acoustics::from_csv(&bytes).map_err(self.table_err(HOURLY_LAEQ_FILE))?,
                    sha256_hex(&bytes),
                ),
                None => {
                    let series: Vec<HourlyLaeq> =
                        acoustics::hourly_series(&self.bundle.spl, self.config.retention_dba)
                            .into_iter()
                            .filter(|h| self.window.contains(&h.hour_start))
                            .collect();
                    let sha = self.store(HOURLY_LAEQ_FILE, key, &acoustics::to_table(&series).to_csv())?;
                    (series, sha)
                }
            };
            self.hourly = Some(value);
        }
        Ok(&self.hourly.as_ref().expect("set above").0)
    }

    pub fn fused(&mut self) -> Result<&[TractHourRecord], PipelineError> {
        if self.fused.is_none() {
            self.hourly_laeq()?;
            let key = self.stage_key(
                "fuse",
                json!({
                    "hourly_laeq": self.hourly.as_ref().expect("computed").1,
                    "population": self.input_hash(ingest::POPULATION_FILE),
                    "tracts": self.input_hash(ingest::TRACTS_FILE),
                    "nmts": self.input_hash(ingest::NMTS_FILE),
                    "mapping": self.config.mapping,
                }),
            );
            let value = match self.cached(FUSED_FILE, &key) {
                Some(bytes) => (
                    fusion::fused_from_csv(&bytes).map_err(self.table_err(FUSED_FILE))?,
                    sha256_hex(&bytes),
                ),
                None => {
                    let mapping = map_tracts(&self.bundle.nmts, &self.bundle.tracts, self.config.mapping)?;
                    let records = fuse(
                        &self.bundle.population,
                        &self.hourly.as_ref().expect("computed").0,
                        &mapping,
                        &self.bundle.tracts,
                        &self.window,
                    )?;
                    let sha = self.store(FUSED_FILE, key, &fused_table(&records).to_csv())?;
                    (records, sha)
                }
            };
            self.fused = Some(value);
        }
        Ok(&self.fused.as_ref().expect("set above").0)
    }

    pub fn features(&mut self) -> Result<&FeatureTable, PipelineError> {
        if self.features.is_none() {
            self.hourly_laeq()?;
            let key = self.stage_key(
                "features",
                json!({
                    "hourly_laeq": self.hourly.as_ref().expect("computed").1,
                    "flights": self.input_hash(ingest::FLIGHTS_FILE),
                    "weather": self.input_hash(ingest::WEATHER_FILE),
                    "nmts": self.input_hash(ingest::NMTS_FILE),
                }),
            );
            let value = match self.cached(FEATURES_FILE, &key) {
                Some(bytes) => (
                    FeatureTable::from_csv(&bytes).map_err(self.table_err(FEATURES_FILE))?,
                    sha256_hex(&bytes),
                ),
                None => {
                    let schedule = infer_schedule(&self.bundle.flights, &self.window)?;
                    let table = build_features(
                        &self.bundle.flights,
                        &self.bundle.weather,
                        &self.bundle.nmts,
                        &self.hourly.as_ref().expect("computed").0,
                        &schedule,
                        &self.window,
                    )?;
                    let sha = self.store(FEATURES_FILE, key, &table.to_table().to_csv())?;
                    (table, sha)
                }
            };
            self.features = Some(value);
        }
        Ok(&self.features.as_ref().expect("set above").0)
    }

    /// Train/test split of one target's rows.
    pub fn split(&mut self, target: Target) -> Result<(gbm::Dataset, gbm::Dataset), PipelineError> {
        let data = self.features()?.dataset(target);
        let cfg = self.config.train_config();
        split_data(&data, cfg.split_fraction, cfg.seed).map_err(|source| PipelineError::Gbm {
            target: target.as_str(),
            source,
        })
    }

    /// Fits on the training part, holding out a slice of it for early
    /// stopping; the test part is never seen during fitting.
    pub fn model(&mut self, target: Target) -> Result<&ModelDocument, PipelineError> {
        let name = target.as_str();
        if !self.models.contains_key(name) {
            let (train_all, _) = self.split(target)?;
            let cfg = self.config.train_config();
            let file = format!("model_{name}.json");
            let key = self.stage_key(
                "train",
                json!({
                    "features": self.features.as_ref().expect("computed").1,
                    "target": name,
                    "config": cfg,
                }),
            );
            let gbm_err = |source| PipelineError::Gbm { target: name, source };
            let doc = match self.cached(&file, &key) {
                Some(bytes) => ModelDocument::from_json(&bytes).map_err(gbm_err)?,
                None => {
                    let (fit, valid) = split_data_stream(&train_all, cfg.split_fraction, cfg.seed, "valid")
                        .map_err(gbm_err)?;
                    let outcome = gbm::train(&fit, &valid, &cfg).map_err(gbm_err)?;
                    let doc = ModelDocument::new(&cfg, &outcome);
                    self.store(&file, key, &doc.to_json())?;
                    doc
                }
            };
            self.models.insert(name, doc);
        }
        Ok(&self.models[name])
    }

    pub fn reference_population(&self) -> Option<&[ingest::PopulationRecord]> {
        self.reference_population.as_deref()
    }
}

fn findings_table(report: &ValidationReport) -> Table {
    let mut t = Table::new(["severity", "kind", "stream", "detail"]);
    let name = |v: Value| v.as_str().unwrap_or_default().to_string();
    for f in &report.findings {
        t.push(vec![
            Cell::Text(name(json!(f.severity))),
            Cell::Text(name(json!(f.kind))),
            Cell::Text(name(json!(f.stream))),
            Cell::text(&f.detail),
        ]);
    }
    t
}

/// Exposure matrices per threshold (ascending) on both population bases.
pub struct ExposureResults {
    pub defacto: Vec<ExposureMatrix>,
    pub residential: Vec<ExposureMatrix>,
    pub gini: Vec<exposure::GiniSeries>,
    pub comparison: Vec<Vec<exposure::BasisComparison>>,
    /// `Err` carries the reason when the contrast is undefined for the data.
    pub rotation: Result<Vec<exposure::PairContrast>, ExposureError>,
}

pub fn run_exposure(session: &mut Session) -> Result<ExposureResults, PipelineError> {
    let thetas = session.config.thresholds.clone();
    let block_hours = session.config.block_hours;
    let records = session.fused()?.to_vec();
    let mut out = ExposureResults {
        defacto: Vec::new(),
        residential: Vec::new(),
        gini: Vec::new(),
        comparison: Vec::new(),
        rotation: Ok(Vec::new()),
    };
    for &theta in &thetas {
        let d = exposure_matrix(&records, theta, PopulationBasis::Defacto);
        let r = exposure_matrix(&records, theta, PopulationBasis::Residential);
        let label = theta_label(theta);
        let g = gini_series(&d);
        let cmp = compare_bases(&d, &r)?;
        session.write_table(&d.to_table(), &format!("exposure_{label}"))?;
        session.write_table(&g.to_table(), &format!("gini_{label}"))?;
        out.defacto.push(d);
        out.residential.push(r);
        out.gini.push(g);
        out.comparison.push(cmp);
    }
    let mut compare = Table::new([
        "theta",
        "hour_start",
        "defacto_total",
        "residential_total",
        "delta",
    ]);
    for (theta, rows) in thetas.iter().zip(&out.comparison) {
        for r in rows {
            compare.push(vec![
                Cell::Num(*theta),
                Cell::time(&r.hour_start),
                Cell::Num(r.defacto_total),
                Cell::Num(r.residential_total),
                Cell::Num(r.delta),
            ]);
        }
    }
    session.write_table(&compare, "compare")?;
    out.rotation = rotation_contrast(session.hourly_laeq()?, block_hours);
    let pairs = out.rotation.as_deref().unwrap_or_default();
    session.write_table(&rotation_table(pairs), "rotation")?;
    Ok(out)
}

pub struct ModelResults {
    pub target: Target,
    pub document: ModelDocument,
    pub train: Metrics,
    pub test: Metrics,
    pub test_data: gbm::Dataset,
}

pub fn run_train(session: &mut Session) -> Result<Vec<ModelResults>, PipelineError> {
    let mut out = Vec::new();
    for target in Target::ALL {
        let name = target.as_str();
        let (train_all, test) = session.split(target)?;
        let doc = session.model(target)?.clone();
        let ens = doc.ensemble();
        let gbm_err = |source| PipelineError::Gbm { target: name, source };
        let train = evaluate(&ens, &train_all).map_err(gbm_err)?;
        let test_metrics = evaluate(&ens, &test).map_err(gbm_err)?;
        session.write_table(&history_table(&doc), &format!("training_history_{name}"))?;
        out.push(ModelResults {
            target,
            document: doc,
            train,
            test: test_metrics,
            test_data: test,
        });
    }
    Ok(out)
}

fn history_table(doc: &ModelDocument) -> Table {
    let mut t = Table::new(["round", "train_mae", "train_rmse", "valid_mae", "valid_rmse"]);
    for r in &doc.history {
        t.push(vec![
            Cell::Int(r.round as i64),
            Cell::Num(r.train_mae),
            Cell::Num(r.train_rmse),
            Cell::opt_num(r.valid_mae),
            Cell::opt_num(r.valid_rmse),
        ]);
    }
    t
}

pub struct ShapResults {
    pub target: Target,
    pub ranking: Vec<shap::FeatureImportance>,
    /// Per dependence feature, the first value where mean φ changes sign.
    pub sign_changes: BTreeMap<String, Option<f64>>,
    pub n_rows: usize,
    pub max_local_error: f64,
}

/// Attributions over each model's held-out test rows.
pub fn run_explain(
    session: &mut Session,
    models: &[ModelResults],
) -> Result<Vec<ShapResults>, PipelineError> {
    let mut out = Vec::new();
    for m in models {
        let name = m.target.as_str();
        let shap_err = |source| PipelineError::Shap { target: name, source };
        let ens = m.document.ensemble();
        let data = &m.test_data;
        let attrs = shap::attribute(&ens, data).map_err(shap_err)?;
        let names = data.feature_names().to_vec();
        let ranking = shap::summary(&attrs, &names).map_err(shap_err)?;
        let max_local_error = attrs
            .iter()
            .enumerate()
            .map(|(i, a)| (a.total() - ens.predict_unchecked(data.row(i))).abs())
            .fold(0.0, f64::max);
        session.write_table(
            &shap::values_table(&attrs, &names),
            &format!("shap_values_{name}"),
        )?;
        session.write_table(&shap::summary_table(&ranking), &format!("shap_summary_{name}"))?;
        let mut sign_changes = BTreeMap::new();
        for f in DEPENDENCE_FEATURES {
            let pairs = shap::dependence(&attrs, data, f).map_err(shap_err)?;
            session.write_table(
                &shap::dependence_table(&pairs),
                &format!("shap_dependence_{name}_{f}"),
            )?;
            sign_changes.insert(f.to_string(), shap::sign_change(&pairs));
        }
        out.push(ShapResults {
            target: m.target,
            ranking,
            sign_changes,
            n_rows: attrs.len(),
            max_local_error,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderAgreement {
    pub district_id: String,
    pub n_hours: usize,
    pub r2_absolute: f64,
    pub r2_pct_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TractDiurnal {
    pub tract_id: String,
    pub land_use: String,
    pub class: crate::validation::DiurnalClass,
}

pub struct ValidationResults {
    /// `None` without a second provider's counts in the input directory.
    pub providers: Option<Vec<ProviderAgreement>>,
    pub diurnal: Vec<TractDiurnal>,
}

fn tract_series(records: &[ingest::PopulationRecord], window: &StudyWindow) -> Vec<HourlySeries> {
    let mut by_tract: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in records.iter().filter(|r| window.contains(&r.hour_start)) {
        by_tract
            .entry(&r.tract_id)
            .or_default()
            .push((r.hour_start, r.defacto_count));
    }
    by_tract
        .into_iter()
        .map(|(t, points)| HourlySeries::from_points(t, points))
        .collect()
}

pub fn run_validation(session: &mut Session) -> Result<ValidationResults, PipelineError> {
    let window = session.window;
    let primary = tract_series(&session.bundle.population, &window);
    let districts: BTreeMap<String, String> = session
        .bundle
        .tracts
        .iter()
        .map(|t| (t.tract_id.clone(), t.district_id.clone()))
        .collect();

    let providers = match session.reference_population() {
        None => None,
        Some(reference) => {
            let a = aggregate_to_district(&primary, &districts)?;
            let b = aggregate_to_district(&tract_series(reference, &window), &districts)?;
            let mut rows = Vec::new();
            for sa in &a {
                let Some(sb) = b.iter().find(|s| s.key == sa.key) else {
                    continue;
                };
                let (xa, xb) = align(sa, sb);
                rows.push(ProviderAgreement {
                    district_id: sa.key.clone(),
                    n_hours: xa.len(),
                    r2_absolute: r_squared(&xa, &xb)?,
                    r2_pct_change: r_squared(&pct_change(&xa)?, &pct_change(&xb)?)?,
                });
            }
            Some(rows)
        }
    };

    let land_use: HashMap<&str, &str> = session
        .bundle
        .tracts
        .iter()
        .map(|t| (t.tract_id.as_str(), t.land_use.as_str()))
        .collect();
    let diurnal = primary
        .iter()
        .map(|s| {
            Ok(TractDiurnal {
                tract_id: s.key.clone(),
                land_use: land_use
                    .get(s.key.as_str())
                    .copied()
                    .unwrap_or("UNKNOWN")
                    .to_string(),
                class: classify_diurnal(&diurnal_profile(s), &session.config.diurnal)?,
            })
        })
        .collect::<Result<Vec<_>, ValidationError>>()?;

    let mut t = Table::new([
        "kind",
        "key",
        "n_hours",
        "r2_absolute",
        "r2_pct_change",
        "land_use",
        "diurnal_class",
    ]);
    for p in providers.iter().flatten() {
        t.push(vec![
            Cell::text("provider_agreement"),
            Cell::text(&p.district_id),
            Cell::Int(p.n_hours as i64),
            Cell::Num(p.r2_absolute),
            Cell::Num(p.r2_pct_change),
            Cell::Null,
            Cell::Null,
        ]);
    }
    for d in &diurnal {
        t.push(vec![
            Cell::text("diurnal"),
            Cell::text(&d.tract_id),
            Cell::Null,
            Cell::Null,
            Cell::Null,
            Cell::text(&d.land_use),
            Cell::text(d.class.as_str()),
        ]);
    }
    session.write_table(&t, "validation")?;
    Ok(ValidationResults { providers, diurnal })
}

fn keyed<T: Serialize>(thetas: &[f64], items: &[T]) -> Value {
    Value::Object(
        thetas
            .iter()
            .zip(items)
            .map(|(t, v)| (theta_label(*t), json!(v)))
            .collect::<Map<_, _>>(),
    )
}

fn matrix_rows(m: &ExposureMatrix) -> Vec<Vec<f64>> {
    m.cells.chunks(m.n_hours().max(1)).map(<[f64]>::to_vec).collect()
}

/// Runs every stage and writes `report.json`; returns the report bytes.
pub fn run_report(session: &mut Session) -> Result<Vec<u8>, PipelineError> {
    let findings = session.validate()?.findings.clone();
    let exposure = run_exposure(session)?;
    let models = run_train(session)?;
    let shap_results = run_explain(session, &models)?;
    let validation = run_validation(session)?;
    let cfg = &session.config;
    let thetas = &cfg.thresholds;

    let exposure_json: Map<String, Value> = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let d = &exposure.defacto[i];
            (
                theta_label(*t),
                json!({
                    "defacto": matrix_rows(d),
                    "residential": matrix_rows(&exposure.residential[i]),
                }),
            )
        })
        .collect();
    let tract_order = exposure
        .defacto
        .first()
        .map(|m| m.tract_ids.clone())
        .unwrap_or_default();
    let hours: Vec<String> = session.window.hours().iter().map(format_timestamp).collect();
    let gini_entries: Vec<&Vec<exposure::GiniEntry>> = exposure.gini.iter().map(|g| &g.entries).collect();

    let model_json: Map<String, Value> = models
        .iter()
        .map(|m| {
            let d = &m.document;
            (
                m.target.as_str().to_string(),
                json!({
                    "base_score": d.base_score,
                    "learning_rate": d.learning_rate,
                    "best_round": d.best_round,
                    "n_trees": d.trees.len(),
                    "train": m.train,
                    "test": m.test,
                    "final_valid_rmse": d.history.get(d.best_round).and_then(|r| r.valid_rmse),
                }),
            )
        })
        .collect();
    let shap_json: Map<String, Value> = shap_results
        .iter()
        .map(|s| {
            (
                s.target.as_str().to_string(),
                json!({
                    "n_rows": s.n_rows,
                    "max_local_accuracy_error": s.max_local_error,
                    "ranking": s.ranking,
                    "sign_changes": s.sign_changes,
                }),
            )
        })
        .collect();
    let rotation_json = match &exposure.rotation {
        Ok(pairs) => json!({ "block_hours": cfg.block_hours, "pairs": pairs, "note": null }),
        Err(e) => json!({ "block_hours": cfg.block_hours, "pairs": [], "note": e.to_string() }),
    };
    let nmt_order: Vec<&str> = {
        let mut ids: Vec<&str> = session.bundle.nmts.iter().map(|n| n.nmt_id.as_str()).collect();
        ids.sort_unstable();
        ids
    };

    let report = json!({
        "meta": {
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "window": session.window,
            "hours": hours,
            "thresholds": thetas,
            "retention_dba": cfg.retention_dba,
            "mapping": cfg.mapping,
            "block_hours": cfg.block_hours,
            "seed": cfg.seed,
            "tract_order": tract_order,
            "nmt_order": nmt_order,
            "train_config": cfg.train_config(),
            "inputs_sha256": session.input_hashes,
        },
        "exposure": Value::Object(exposure_json),
        "gini": keyed(thetas, &gini_entries),
        "comparison": keyed(thetas, &exposure.comparison),
        "rotation": rotation_json,
        "model": Value::Object(model_json),
        "shap": Value::Object(shap_json),
        "validation": {
            "findings": findings,
            "provider_agreement": validation.providers,
            "diurnal": validation.diurnal,
        },
    });
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    let path = session.out_path(REPORT_FILE);
    std::fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok(bytes)
}
