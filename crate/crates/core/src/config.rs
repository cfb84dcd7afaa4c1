//! Run configuration: a sectioned key-value text file selecting the mode,
//! the dataset, the channels with their fusion weights, and every tunable
//! parameter. Unknown keys are hard errors so typos cannot silently fall
//! back to defaults.
//!
//! ```text
//! mode = testing
//!
//! [dataset]
//! query = seq/query
//! database = seq/db
//! ground_truth = seq/gt.csv
//!
//! [channels]
//! enabled = gist.color, ldb.color
//! lambda.gist.color = 1.5
//! lambda.ldb.color = 0.6
//!
//! [matching]
//! n_q = 10
//! t = 0.16
//! ```
//!
//! Relative paths are resolved against the config file's directory. The
//! canonical serializer writes every field, so a parsed configuration
//! round-trips exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::descriptors::{Channel, ChannelSet, DescriptorKind, ExtractionParams};
use crate::evaluation::Tolerance;
use crate::matching::{FusionWeights, MatchParams, MatchingError};
use crate::tuning::{GaConfig, SweepParam};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}{}: {reason}", fmt_line(.line))]
    ParseError {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, key: String },
    #[error("{path}: missing required key `{key}`")]
    MissingRequired { path: PathBuf, key: String },
}

fn fmt_line(line: &usize) -> String {
    if *line == 0 {
        String::new()
    } else {
        format!(":{line}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Testing,
    Tuning,
    Sweep,
}

impl Mode {
    pub fn key(self) -> &'static str {
        match self {
            Mode::Testing => "testing",
            Mode::Tuning => "tuning",
            Mode::Sweep => "sweep",
        }
    }

    pub fn parse_key(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "testing" => Some(Mode::Testing),
            "tuning" => Some(Mode::Tuning),
            "sweep" => Some(Mode::Sweep),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Where the sequences live. `cnn_dir` is a subdirectory name looked up
/// under each sequence root (query and database hold separate embedding
/// files), not a standalone path.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub query: PathBuf,
    pub database: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub cnn_dir: Option<String>,
    pub vocabulary: Option<PathBuf>,
}

/// Enabled channels, their fusion coefficients, and the extraction knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub enabled: ChannelSet,
    /// Raw coefficients in the canonical channel order. Turned into
    /// [`FusionWeights`] at run time, where an all-zero array surfaces as
    /// [`MatchingError::AllWeightsZero`].
    pub lambdas: [f64; Channel::COUNT],
    pub alpha: f64,
    pub max_keypoints: usize,
    pub vocab_k: usize,
    pub vocab_l: usize,
    pub vocab_seed: u64,
    pub cnn_dim: Option<usize>,
}

impl Default for ChannelConfig {
    fn default() -> ChannelConfig {
        // The self-contained channels: GIST and LDB need no vocabulary and
        // no external embedding files.
        let enabled: ChannelSet = Channel::ALL
            .into_iter()
            .filter(|c| matches!(c.kind(), DescriptorKind::Gist | DescriptorKind::Ldb))
            .collect();
        let mut lambdas = [0f64; Channel::COUNT];
        for c in enabled.iter() {
            lambdas[c.ordinal()] = 1.0;
        }
        ChannelConfig {
            enabled,
            lambdas,
            alpha: crate::descriptors::DEFAULT_ALPHA,
            max_keypoints: 500,
            vocab_k: 10,
            vocab_l: 5,
            vocab_seed: 1,
            cnn_dim: None,
        }
    }
}

impl ChannelConfig {
    pub fn fusion_weights(&self) -> Result<FusionWeights, MatchingError> {
        FusionWeights::new(self.lambdas)
    }

    pub fn extraction_params(&self) -> ExtractionParams {
        let mut params = ExtractionParams {
            alpha: self.alpha,
            cnn_dim: self.cnn_dim,
            ..ExtractionParams::default()
        };
        params.orb.max_keypoints = self.max_keypoints;
        params
    }
}

/// Optional sweep selection; the `--param` CLI flag can supply the
/// parameter when the file leaves it out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub param: Option<SweepParam>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub tolerance: Tolerance,
    pub error_accepted_only: bool,
    pub dump_scores: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: DatasetPaths,
    pub channels: ChannelConfig,
    pub matching: MatchParams,
    pub ga: GaConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

const SECTIONS: [&str; 5] = ["dataset", "channels", "matching", "tuning", "output"];

/// Reads and validates a configuration file. Every relative path becomes
/// absolute with respect to the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

/// Parses configuration text as if it lived at `path` (which is used for
/// error messages and path resolution only).
pub fn parse_config_str(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    Parser::new(path).parse(text)
}

struct Parser<'p> {
    path: &'p Path,
    base: PathBuf,
    section: Option<String>,
    seen: std::collections::HashSet<String>,

    mode: Option<Mode>,
    query: Option<PathBuf>,
    database: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    cnn_dir: Option<String>,
    vocabulary: Option<PathBuf>,

    enabled: Option<ChannelSet>,
    lambdas: [f64; Channel::COUNT],
    lambda_seen: bool,
    channels: ChannelConfig,

    matching: MatchParams,
    ga: GaConfig,
    sweep: SweepConfig,

    out_dir: PathBuf,
    tolerance: Tolerance,
    error_accepted_only: bool,
    dump_scores: bool,
}

impl<'p> Parser<'p> {
    fn new(path: &'p Path) -> Parser<'p> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let out_dir = base.join("out");
        Parser {
            path,
            base,
            section: None,
            seen: Default::default(),
            mode: None,
            query: None,
            database: None,
            ground_truth: None,
            cnn_dir: None,
            vocabulary: None,
            enabled: None,
            lambdas: [0.0; Channel::COUNT],
            lambda_seen: false,
            channels: ChannelConfig::default(),
            matching: MatchParams::default(),
            ga: GaConfig::default(),
            sweep: SweepConfig::default(),
            out_dir,
            tolerance: Tolerance::default(),
            error_accepted_only: false,
            dump_scores: false,
        }
    }

    fn err(&self, line: usize, reason: String) -> ConfigError {
        ConfigError::ParseError {
            path: self.path.to_path_buf(),
            line,
            reason,
        }
    }

    fn resolve(&self, p: &str) -> PathBuf {
        self.base.join(p)
    }

    fn parse(mut self, text: &str) -> Result<RunConfig, ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| self.err(line, "unterminated section header".into()))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownKey {
                        path: self.path.to_path_buf(),
                        key: format!("[{name}]"),
                    });
                }
                self.section = Some(name.to_string());
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| self.err(line, format!("expected `key = value`, got `{trimmed}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(self.err(line, "empty key".into()));
            }
            let qualified = match &self.section {
                Some(s) => format!("{s}.{key}"),
                None => key.to_string(),
            };
            if !self.seen.insert(qualified.clone()) {
                return Err(self.err(line, format!("duplicate key `{qualified}`")));
            }
            self.dispatch(line, &qualified, key, value)?;
        }
        self.finish()
    }

    fn dispatch(
        &mut self,
        line: usize,
        qualified: &str,
        key: &str,
        value: &str,
    ) -> Result<(), ConfigError> {
        let section = self.section.clone();
        match (section.as_deref(), key) {
            (None, "mode") => {
                self.mode = Some(Mode::parse_key(value).ok_or_else(|| {
                    self.err(line, format!("mode must be testing, tuning, or sweep, got `{value}`"))
                })?);
            }
            (Some("dataset"), "query") => self.query = Some(self.resolve(value)),
            (Some("dataset"), "database") => self.database = Some(self.resolve(value)),
            (Some("dataset"), "ground_truth") => self.ground_truth = Some(self.resolve(value)),
            (Some("dataset"), "cnn_dir") => {
                if Path::new(value).is_absolute() || value.is_empty() {
                    return Err(self.err(
                        line,
                        "cnn_dir must be a relative subdirectory name looked up under each sequence root".into(),
                    ));
                }
                self.cnn_dir = Some(value.to_string());
            }
            (Some("dataset"), "vocabulary") => self.vocabulary = Some(self.resolve(value)),

            (Some("channels"), "enabled") => {
                self.enabled = Some(self.channel_list(line, value)?);
            }
            (Some("channels"), k) if k.starts_with("lambda.") => {
                let channel = Channel::parse_key(&k["lambda.".len()..]).ok_or_else(|| {
                    self.err(line, format!("`{k}` does not name a valid channel"))
                })?;
                let w: f64 = self.number(line, key, value)?;
                if !w.is_finite() || w < 0.0 {
                    return Err(self.err(line, format!("{k} must be non-negative, got {value}")));
                }
                self.lambdas[channel.ordinal()] = w;
                self.lambda_seen = true;
            }
            (Some("channels"), "alpha") => {
                let a: f64 = self.number(line, key, value)?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(self.err(line, format!("alpha must lie in (0, 1), got {value}")));
                }
                self.channels.alpha = a;
            }
            (Some("channels"), "max_keypoints") => {
                self.channels.max_keypoints = self.at_least(line, key, value, 1)?;
            }
            (Some("channels"), "vocab_k") => {
                self.channels.vocab_k = self.at_least(line, key, value, 2)?;
            }
            (Some("channels"), "vocab_l") => {
                self.channels.vocab_l = self.at_least(line, key, value, 1)?;
            }
            (Some("channels"), "vocab_seed") => {
                self.channels.vocab_seed = self.number(line, key, value)?;
            }
            (Some("channels"), "cnn_dim") => {
                self.channels.cnn_dim = Some(self.at_least(line, key, value, 1)?);
            }

            (Some("matching"), "n_q") => self.matching.n_q = self.number(line, key, value)?,
            (Some("matching"), "v_min") => self.matching.v_min = self.number(line, key, value)?,
            (Some("matching"), "v_max") => self.matching.v_max = self.number(line, key, value)?,
            (Some("matching"), "g") => self.matching.gate_m = self.number(line, key, value)?,
            (Some("matching"), "t") => self.matching.threshold_t = self.number(line, key, value)?,
            (Some("matching"), "strict_eq4") => {
                self.matching.strict_eq4 = self.boolean(line, key, value)?;
            }

            (Some("tuning"), "population") => self.ga.population = self.at_least(line, key, value, 1)?,
            (Some("tuning"), "generations") => {
                self.ga.generations = self.at_least(line, key, value, 1)?;
            }
            (Some("tuning"), "runs") => self.ga.runs = self.at_least(line, key, value, 1)?,
            (Some("tuning"), "mutation_rate") => {
                self.ga.mutation_rate = self.rate(line, key, value)?;
            }
            (Some("tuning"), "crossover_rate") => {
                self.ga.crossover_rate = self.rate(line, key, value)?;
            }
            (Some("tuning"), "seed") => self.ga.seed = self.number(line, key, value)?,
            (Some("tuning"), "sweep_param") => {
                self.sweep.param = Some(SweepParam::parse_key(value).ok_or_else(|| {
                    self.err(
                        line,
                        format!("sweep_param must be v_min, n_q, or threshold_t, got `{value}`"),
                    )
                })?);
            }
            (Some("tuning"), "sweep_values") => {
                let mut values = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    values.push(self.number(line, key, part)?);
                }
                if values.is_empty() {
                    return Err(self.err(line, "sweep_values lists no values".into()));
                }
                self.sweep.values = Some(values);
            }

            (Some("output"), "dir") => self.out_dir = self.resolve(value),
            (Some("output"), "tolerance") => {
                self.tolerance = Tolerance {
                    max_index_gap: self.number(line, key, value)?,
                };
            }
            (Some("output"), "error_accepted_only") => {
                self.error_accepted_only = self.boolean(line, key, value)?;
            }
            (Some("output"), "dump_scores") => {
                self.dump_scores = self.boolean(line, key, value)?;
            }

            _ => {
                return Err(ConfigError::UnknownKey {
                    path: self.path.to_path_buf(),
                    key: qualified.to_string(),
                })
            }
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(
        &self,
        line: usize,
        key: &str,
        value: &str,
    ) -> Result<T, ConfigError> {
        value
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse `{value}` for {key}")))
    }

    fn at_least(&self, line: usize, key: &str, value: &str, min: usize) -> Result<usize, ConfigError> {
        let v: usize = self.number(line, key, value)?;
        if v < min {
            return Err(self.err(line, format!("{key} must be at least {min}, got {value}")));
        }
        Ok(v)
    }

    fn rate(&self, line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.number(line, key, value)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(line, format!("{key} must lie in [0, 1], got {value}")));
        }
        Ok(v)
    }

    fn boolean(&self, line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
        match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err(line, format!("{key} must be true or false, got `{value}`"))),
        }
    }

    fn channel_list(&self, line: usize, value: &str) -> Result<ChannelSet, ConfigError> {
        let mut set = ChannelSet::EMPTY;
        for part in value.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let c = Channel::parse_key(part)
                .ok_or_else(|| self.err(line, format!("`{part}` is not a valid channel")))?;
            set = set.with(c);
        }
        Ok(set)
    }

    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        let owned_path = self.path.to_path_buf();
        let missing = move |key: &str| ConfigError::MissingRequired {
            path: owned_path.clone(),
            key: key.to_string(),
        };
        let mode = self.mode.ok_or_else(|| missing("mode"))?;
        let query = self.query.take().ok_or_else(|| missing("dataset.query"))?;
        let database = self.database.take().ok_or_else(|| missing("dataset.database"))?;
        if matches!(mode, Mode::Tuning | Mode::Sweep) && self.ground_truth.is_none() {
            return Err(missing("dataset.ground_truth"));
        }

        if let Some(enabled) = self.enabled {
            self.channels.enabled = enabled;
            if !self.lambda_seen {
                // Explicit channels without explicit weights: uniform.
                self.channels.lambdas = [0.0; Channel::COUNT];
                for c in enabled.iter() {
                    self.channels.lambdas[c.ordinal()] = 1.0;
                }
            }
        }
        if self.lambda_seen {
            self.channels.lambdas = self.lambdas;
        }
        for c in Channel::ALL {
            if self.channels.lambdas[c.ordinal()] > 0.0 && !self.channels.enabled.contains(c) {
                return Err(self.err(
                    0,
                    format!("lambda.{} is positive but the channel is not enabled", c.key()),
                ));
            }
        }

        self.matching
            .validate()
            .map_err(|e| self.err(0, e.to_string()))?;
        self.ga.validate().map_err(|e| self.err(0, e.to_string()))?;

        Ok(RunConfig {
            mode,
            dataset: DatasetPaths {
                query,
                database,
                ground_truth: self.ground_truth,
                cnn_dir: self.cnn_dir,
                vocabulary: self.vocabulary,
            },
            channels: self.channels,
            matching: self.matching,
            ga: self.ga,
            sweep: self.sweep,
            output: OutputConfig {
                dir: self.out_dir,
                tolerance: self.tolerance,
                error_accepted_only: self.error_accepted_only,
                dump_scores: self.dump_scores,
            },
        })
    }
}

/// Writes the canonical text form: every field explicit, sections in a
/// fixed order. Parsing the result reproduces the configuration exactly.
pub fn serialize_config(config: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", config.mode);

    let _ = writeln!(s, "\n[dataset]");
    let _ = writeln!(s, "query = {}", config.dataset.query.display());
    let _ = writeln!(s, "database = {}", config.dataset.database.display());
    if let Some(gt) = &config.dataset.ground_truth {
        let _ = writeln!(s, "ground_truth = {}", gt.display());
    }
    if let Some(dir) = &config.dataset.cnn_dir {
        let _ = writeln!(s, "cnn_dir = {dir}");
    }
    if let Some(v) = &config.dataset.vocabulary {
        let _ = writeln!(s, "vocabulary = {}", v.display());
    }

    let ch = &config.channels;
    let _ = writeln!(s, "\n[channels]");
    let names: Vec<String> = ch.enabled.iter().map(|c| c.key()).collect();
    let _ = writeln!(s, "enabled = {}", names.join(", "));
    for c in ch.enabled.iter() {
        let _ = writeln!(s, "lambda.{} = {}", c.key(), ch.lambdas[c.ordinal()]);
    }
    let _ = writeln!(s, "alpha = {}", ch.alpha);
    let _ = writeln!(s, "max_keypoints = {}", ch.max_keypoints);
    let _ = writeln!(s, "vocab_k = {}", ch.vocab_k);
    let _ = writeln!(s, "vocab_l = {}", ch.vocab_l);
    let _ = writeln!(s, "vocab_seed = {}", ch.vocab_seed);
    if let Some(dim) = ch.cnn_dim {
        let _ = writeln!(s, "cnn_dim = {dim}");
    }

    let m = &config.matching;
    let _ = writeln!(s, "\n[matching]");
    let _ = writeln!(s, "n_q = {}", m.n_q);
    let _ = writeln!(s, "v_min = {}", m.v_min);
    let _ = writeln!(s, "v_max = {}", m.v_max);
    let _ = writeln!(s, "g = {}", m.gate_m);
    let _ = writeln!(s, "t = {}", m.threshold_t);
    let _ = writeln!(s, "strict_eq4 = {}", m.strict_eq4);

    let g = &config.ga;
    let _ = writeln!(s, "\n[tuning]");
    let _ = writeln!(s, "population = {}", g.population);
    let _ = writeln!(s, "generations = {}", g.generations);
    let _ = writeln!(s, "runs = {}", g.runs);
    let _ = writeln!(s, "mutation_rate = {}", g.mutation_rate);
    let _ = writeln!(s, "crossover_rate = {}", g.crossover_rate);
    let _ = writeln!(s, "seed = {}", g.seed);
    if let Some(p) = config.sweep.param {
        let _ = writeln!(s, "sweep_param = {p}");
    }
    if let Some(values) = &config.sweep.values {
        let names: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "sweep_values = {}", names.join(", "));
    }

    let o = &config.output;
    let _ = writeln!(s, "\n[output]");
    let _ = writeln!(s, "dir = {}", o.dir.display());
    let _ = writeln!(s, "tolerance = {}", o.tolerance.max_index_gap);
    let _ = writeln!(s, "error_accepted_only = {}", o.error_accepted_only);
    let _ = writeln!(s, "dump_scores = {}", o.dump_scores);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("/cfg/run.conf"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config = parse(
            "mode = Testing\n\n[dataset]\nquery = q\ndatabase = db\n",
        )
        .unwrap();
        assert_eq!(config.mode, Mode::Testing);
        assert_eq!(config.dataset.query, Path::new("/cfg/q"));
        assert_eq!(config.dataset.database, Path::new("/cfg/db"));
        assert_eq!(config.dataset.ground_truth, None);
        assert_eq!(config.matching, MatchParams::default());
        assert_eq!(config.matching.n_q, 10);
        assert_eq!(config.matching.v_min, 0.4);
        assert_eq!(config.matching.v_max, 2.5);
        assert_eq!(config.matching.gate_m, 15.0);
        assert_eq!(config.matching.threshold_t, 0.16);
        assert_eq!(config.ga, GaConfig::default());
        assert_eq!(config.channels, ChannelConfig::default());
        assert_eq!(config.channels.enabled.len(), 6);
        assert_eq!(config.output.dir, Path::new("/cfg/out"));
        assert_eq!(config.output.tolerance.max_index_gap, 5);
        assert!(!config.output.error_accepted_only);
        assert!(!config.output.dump_scores);
    }

    #[test]
    fn comments_blanks_and_absolute_paths() {
        let config = parse(
            "# a comment\nmode = testing\n\n[dataset]\n# another\nquery = /data/q\ndatabase = /data/db\n\n[output]\ndir = /tmp/results\n",
        )
        .unwrap();
        assert_eq!(config.dataset.query, Path::new("/data/q"));
        assert_eq!(config.output.dir, Path::new("/tmp/results"));
    }

    #[test]
    fn unknown_keys_and_sections_are_hard_errors() {
        let err = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[matching]\nspeed = 9\n",
        )
        .unwrap_err();
        match err {
            ConfigError::UnknownKey { key, .. } => assert_eq!(key, "matching.speed"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
        let err = parse("mode = testing\n\n[engine]\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { key, .. } if key == "[engine]"));
        // Keys of one section are not valid in another.
        let err = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\nn_q = 10\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { key, .. } if key == "dataset.n_q"));
    }

    #[test]
    fn invariant_violations_are_parse_errors() {
        let base = "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[matching]\n";
        assert!(matches!(
            parse(&format!("{base}n_q = 0\n")),
            Err(ConfigError::ParseError { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}v_min = -1\n")),
            Err(ConfigError::ParseError { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}v_min = 2\nv_max = 1\n")),
            Err(ConfigError::ParseError { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}t = 1.5\n")),
            Err(ConfigError::ParseError { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}n_q = ten\n")),
            Err(ConfigError::ParseError { .. })
        ));
    }

    #[test]
    fn missing_required_keys() {
        assert!(matches!(
            parse("[dataset]\nquery = q\ndatabase = db\n"),
            Err(ConfigError::MissingRequired { key, .. }) if key == "mode"
        ));
        assert!(matches!(
            parse("mode = testing\n\n[dataset]\ndatabase = db\n"),
            Err(ConfigError::MissingRequired { key, .. }) if key == "dataset.query"
        ));
        assert!(matches!(
            parse("mode = tuning\n\n[dataset]\nquery = q\ndatabase = db\n"),
            Err(ConfigError::MissingRequired { key, .. }) if key == "dataset.ground_truth"
        ));
    }

    #[test]
    fn channel_lists_and_lambdas() {
        let config = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[channels]\nenabled = gist.color, ldb.depth\nlambda.gist.color = 1.5\n",
        )
        .unwrap();
        let gist_c = Channel::parse_key("gist.color").unwrap();
        let ldb_d = Channel::parse_key("ldb.depth").unwrap();
        assert_eq!(config.channels.enabled.len(), 2);
        assert!(config.channels.enabled.contains(gist_c));
        assert_eq!(config.channels.lambdas[gist_c.ordinal()], 1.5);
        // A lambda key was present, so the unlisted channel stays at zero.
        assert_eq!(config.channels.lambdas[ldb_d.ordinal()], 0.0);

        // No lambda keys: uniform weights over the enabled set.
        let config = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[channels]\nenabled = gist.color, ldb.depth\n",
        )
        .unwrap();
        assert_eq!(config.channels.lambdas[gist_c.ordinal()], 1.0);
        assert_eq!(config.channels.lambdas[ldb_d.ordinal()], 1.0);

        // Weighting a disabled channel is an error.
        let err = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[channels]\nenabled = gist.color\nlambda.ldb.color = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::ParseError { .. }));

        // Invalid channel names are rejected in both places.
        assert!(parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[channels]\nenabled = bow.depth\n",
        )
        .is_err());
        assert!(parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\n\n[channels]\nlambda.cnn.depth = 1\n",
        )
        .is_err());
    }

    #[test]
    fn malformed_lines_and_duplicates() {
        assert!(matches!(
            parse("mode = testing\njunk line\n"),
            Err(ConfigError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse("mode = testing\nmode = tuning\n[dataset]\nquery = q\ndatabase = db\n"),
            Err(ConfigError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse("[dataset\n"),
            Err(ConfigError::ParseError { .. })
        ));
    }

    #[test]
    fn cnn_dir_must_be_relative() {
        let err = parse(
            "mode = testing\n\n[dataset]\nquery = q\ndatabase = db\ncnn_dir = /abs/cnn\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::ParseError { .. }));
    }

    #[test]
    fn full_config_round_trips() {
        let text = "mode = sweep\n\n[dataset]\nquery = q\ndatabase = db\nground_truth = gt.csv\ncnn_dir = cnn\nvocabulary = voc.bin\n\n[channels]\nenabled = bow.color, gist.color, cnn.color\nlambda.bow.color = 0.5\nlambda.gist.color = 2.25\nlambda.cnn.color = 0\nalpha = 0.45\nmax_keypoints = 300\nvocab_k = 8\nvocab_l = 3\nvocab_seed = 7\ncnn_dim = 4096\n\n[matching]\nn_q = 7\nv_min = 0.25\nv_max = 4\ng = 25\nt = 0.3\nstrict_eq4 = true\n\n[tuning]\npopulation = 20\ngenerations = 10\nruns = 3\nmutation_rate = 0.2\ncrossover_rate = 0.8\nseed = 99\nsweep_param = threshold_t\nsweep_values = 0.1, 0.2, 0.35\n\n[output]\ndir = results\ntolerance = 3\nerror_accepted_only = true\ndump_scores = true\n";
        let config = parse(text).unwrap();
        let reparsed = parse(&serialize_config(&config)).unwrap();
        assert_eq!(config, reparsed);
        assert_eq!(config.sweep.param, Some(SweepParam::ThresholdT));
        assert_eq!(config.sweep.values.as_deref(), Some(&[0.1, 0.2, 0.35][..]));
    }

    prop_compose! {
        fn arb_config()(
            mode_pick in 0usize..3,
            channel_bits in 1u16..(1 << Channel::COUNT),
            raw_lambdas in prop::array::uniform9(0f64..4.0),
            n_q in 1usize..50,
            v_min in 0.05f64..1.0,
            v_span in 0f64..3.0,
            gate in prop::option::of(1f64..100.0),
            t in 0f64..1.0,
            strict in any::<bool>(),
            population in 1usize..60,
            generations in 1usize..90,
            runs in 1usize..16,
            mutation in 0f64..1.0,
            crossover in 0f64..1.0,
            seed in any::<u64>(),
            tolerance in 0usize..10,
            accepted_only in any::<bool>(),
            dump in any::<bool>(),
            has_gt in any::<bool>(),
            cnn_dim in prop::option::of(1usize..8192),
        ) -> RunConfig {
            let mode = [Mode::Testing, Mode::Tuning, Mode::Sweep][mode_pick];
            let enabled: ChannelSet = Channel::ALL
                .into_iter()
                .filter(|c| channel_bits & (1 << c.ordinal()) != 0)
                .collect();
            let mut lambdas = [0f64; Channel::COUNT];
            for c in enabled.iter() {
                lambdas[c.ordinal()] = raw_lambdas[c.ordinal()];
            }
            let needs_gt = has_gt || mode != Mode::Testing;
            RunConfig {
                mode,
                dataset: DatasetPaths {
                    query: PathBuf::from("/data/q"),
                    database: PathBuf::from("/data/db"),
                    ground_truth: needs_gt.then(|| PathBuf::from("/data/gt.csv")),
                    cnn_dir: cnn_dim.is_some().then(|| "cnn".to_string()),
                    vocabulary: None,
                },
                channels: ChannelConfig {
                    enabled,
                    lambdas,
                    cnn_dim,
                    ..ChannelConfig::default()
                },
                matching: MatchParams {
                    n_q,
                    v_min,
                    v_max: v_min + v_span,
                    gate_m: gate.unwrap_or(f64::INFINITY),
                    threshold_t: t,
                    strict_eq4: strict,
                },
                ga: GaConfig {
                    population,
                    generations,
                    runs,
                    mutation_rate: mutation,
                    crossover_rate: crossover,
                    seed,
                },
                sweep: SweepConfig::default(),
                output: OutputConfig {
                    dir: PathBuf::from("/data/out"),
                    tolerance: Tolerance { max_index_gap: tolerance },
                    error_accepted_only: accepted_only,
                    dump_scores: dump,
                },
            }
        }
    }

    proptest! {
        #[test]
        fn serialization_round_trips(config in arb_config()) {
            let text = serialize_config(&config);
            let reparsed = parse(&text).unwrap();
            prop_assert_eq!(config, reparsed);
        }
    }
}
