//! End-to-end drivers behind the `mpr` binary: load a dataset, extract
//! descriptors, run the testing / tuning / sweep mode of a [`RunConfig`],
//! and write the result files.
//!
//! Output writing is atomic per run: every file is first staged in memory,
//! then written through temp-file renames, and on any failure the already
//! committed files of the run are removed again. Timing data goes to its
//! own file so the data-bearing outputs stay byte-reproducible.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Mode, RunConfig};
use crate::dataset::{
    load_ground_truth, load_sequence, DatasetError, GroundTruth, Role, Sequence,
};
use crate::descriptors::{
    build_vocabulary, detect_and_describe, embedding_descriptor, extract_all, BinaryFeature,
    Channel, ChannelSet, DescriptorError, DescriptorKind, DescriptorSet, ExtractionContext,
    Vocabulary,
};
use crate::evaluation::{
    compute_metrics, mean_localization_error, mean_localization_error_accepted, tally,
    visualization_matrix_csv, EvaluationError, Metrics,
};
use crate::matching::{
    compute_distance_matrix, MatchDecision, MatchingError, OnlineMatcher,
};
use crate::tuning::{sweep, run_ga_multi, SweepParam, SweepResult, TrainingSet, TuningError};

/// Worker pool cap; unset or unparsable means "all cores".
pub const THREADS_ENV: &str = "MPR_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// What a run did: stage timings, the metrics when ground truth was
/// available, and the files it wrote.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub extraction_seconds: f64,
    pub matching_seconds: f64,
    pub overall_seconds: f64,
    /// Extraction plus matching time of each processed query frame, in
    /// order; empty outside testing mode.
    pub per_query_seconds: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub outputs: Vec<PathBuf>,
}

/// Applies the `MPR_THREADS` cap to the global worker pool. Later calls
/// (or an already started pool) are silently ignored.
pub fn init_thread_pool() {
    let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    else {
        return;
    };
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

/// In-memory output files, committed together after the run succeeded.
struct Stager {
    files: Vec<(String, Vec<u8>)>,
}

impl Stager {
    fn new() -> Stager {
        Stager { files: Vec::new() }
    }

    fn stage(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every staged file into `dir` via temp-file renames. If any
    /// step fails, the files this commit already produced are removed so
    /// the directory holds no partial run.
    fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let io = |path: &Path, source: std::io::Error| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written: Vec<PathBuf> = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            let result = std::fs::write(&tmp, bytes)
                .map_err(|e| io(&tmp, e))
                .and_then(|()| std::fs::rename(&tmp, &target).map_err(|e| io(&target, e)));
            if let Err(e) = result {
                let _ = std::fs::remove_file(&tmp);
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(target);
        }
        Ok(written)
    }
}

/// Sequences, ground truth, and the extraction context of a run.
struct Inputs {
    query: Sequence,
    db: Sequence,
    gt: Option<GroundTruth>,
    ctx: ExtractionContext,
    query_cnn: Option<PathBuf>,
    db_cnn: Option<PathBuf>,
}

fn require_mode(config: &RunConfig, expected: Mode) -> Result<(), PipelineError> {
    if config.mode != expected {
        return Err(PipelineError::Invalid(format!(
            "configuration selects mode {}, but this command runs {}",
            config.mode, expected
        )));
    }
    Ok(())
}

fn load_inputs(config: &RunConfig) -> Result<Inputs, PipelineError> {
    let enabled = config.channels.enabled;
    let modalities = enabled.image_modalities();
    let db = load_sequence(&config.dataset.database, Role::Database, modalities)?;
    let query = load_sequence(&config.dataset.query, Role::Query, modalities)?;
    let gt = match &config.dataset.ground_truth {
        Some(path) => Some(load_ground_truth(path, query.len(), db.len())?),
        None => None,
    };

    let mut ctx = ExtractionContext::new(config.channels.extraction_params());
    if let Some(vocab) = vocabulary_for(config, &db, enabled)? {
        ctx = ctx.with_vocabulary(vocab);
    }

    let cnn = |root: &Path| config.dataset.cnn_dir.as_ref().map(|name| root.join(name));
    Ok(Inputs {
        query_cnn: cnn(&config.dataset.query),
        db_cnn: cnn(&config.dataset.database),
        query,
        db,
        gt,
        ctx,
    })
}

/// Loads or trains the bag-of-words vocabulary when a BoW channel is
/// enabled. A configured vocabulary path is loaded if the file exists;
/// otherwise the vocabulary is trained on the database sequence's local
/// features (and saved to the configured path, if any).
fn vocabulary_for(
    config: &RunConfig,
    db: &Sequence,
    enabled: ChannelSet,
) -> Result<Option<Arc<Vocabulary>>, PipelineError> {
    let bow: Vec<Channel> = enabled
        .iter()
        .filter(|c| c.kind() == DescriptorKind::Bow)
        .collect();
    if bow.is_empty() {
        return Ok(None);
    }
    if let Some(path) = &config.dataset.vocabulary {
        if path.is_file() {
            return Ok(Some(Arc::new(Vocabulary::load(path)?)));
        }
    }
    let orb = config.channels.extraction_params().orb;
    let features: Vec<BinaryFeature> = db
        .frames
        .par_iter()
        .map(|frame| {
            let mut per_frame = Vec::new();
            for c in &bow {
                if let Some(gray) = frame.gray(c.modality()) {
                    per_frame.extend(
                        detect_and_describe(&gray, &orb)
                            .iter()
                            .map(|f| f.descriptor),
                    );
                }
            }
            per_frame
        })
        .flatten()
        .collect();
    let vocab = build_vocabulary(
        &features,
        config.channels.vocab_k,
        config.channels.vocab_l,
        config.channels.vocab_seed,
    )?;
    if let Some(path) = &config.dataset.vocabulary {
        vocab.save(path)?;
    }
    Ok(Some(Arc::new(vocab)))
}

fn extract_sequence(
    seq: &Sequence,
    enabled: ChannelSet,
    ctx: &ExtractionContext,
    cnn_dir: Option<&Path>,
) -> Result<Vec<DescriptorSet>, DescriptorError> {
    seq.frames
        .par_iter()
        .map(|frame| extract_all(frame, enabled, ctx, cnn_dir))
        .collect()
}

fn matches_csv(decisions: &[MatchDecision]) -> String {
    let mut out = String::from("query_index,best_db_index,best_score,accepted\n");
    for d in decisions {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            d.query_index, d.best_db_index, d.best_score, d.accepted
        );
    }
    out
}

fn metrics_report(
    metrics: &Metrics,
    counts: crate::evaluation::EvalCounts,
    queries: usize,
    db_len: usize,
    accepted_only: bool,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "queries = {queries}");
    let _ = writeln!(out, "database_frames = {db_len}");
    let _ = writeln!(out, "true_positives = {}", counts.true_positives);
    let _ = writeln!(out, "false_positives = {}", counts.false_positives);
    let _ = writeln!(out, "false_negatives = {}", counts.false_negatives);
    let _ = writeln!(out, "precision = {}", metrics.precision);
    let _ = writeln!(out, "recall = {}", metrics.recall);
    let _ = writeln!(out, "f1 = {}", metrics.f1);
    let _ = writeln!(out, "mean_localization_error = {}", metrics.mean_error);
    let _ = writeln!(out, "error_accepted_only = {accepted_only}");
    out
}

fn timing_report(report: &RunReport, db_len: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "database_frames = {db_len}");
    let _ = writeln!(out, "query_frames = {}", report.per_query_seconds.len());
    let _ = writeln!(out, "extraction_seconds = {:.6}", report.extraction_seconds);
    let _ = writeln!(out, "matching_seconds = {:.6}", report.matching_seconds);
    let _ = writeln!(out, "overall_seconds = {:.6}", report.overall_seconds);
    if !report.per_query_seconds.is_empty() {
        let mean =
            report.per_query_seconds.iter().sum::<f64>() / report.per_query_seconds.len() as f64;
        let _ = writeln!(out, "mean_query_ms = {:.3}", mean * 1e3);
        for (i, s) in report.per_query_seconds.iter().enumerate() {
            let _ = writeln!(out, "query_ms {i} = {:.3}", s * 1e3);
        }
    }
    out
}

/// Raw little-endian f32 dumps of the per-channel and fused score rows.
struct ScoreDump {
    channels: Vec<Channel>,
    per_channel: Vec<Vec<f32>>,
    fused: Vec<f32>,
    cols: usize,
}

impl ScoreDump {
    fn new(channels: &[Channel], cols: usize) -> ScoreDump {
        ScoreDump {
            channels: channels.to_vec(),
            per_channel: vec![Vec::new(); channels.len()],
            fused: Vec::new(),
            cols,
        }
    }

    fn push(&mut self, channel_rows: &[Vec<f64>], fused_row: &[f64]) {
        for (buf, row) in self.per_channel.iter_mut().zip(channel_rows) {
            buf.extend(row.iter().map(|&v| v as f32));
        }
        self.fused.extend(fused_row.iter().map(|&v| v as f32));
    }

    fn stage_into(self, stager: &mut Stager) {
        let rows = self.fused.len() / self.cols.max(1);
        let mut manifest = String::from("file,rows,cols,dtype,layout\n");
        let dump = |name: String, values: Vec<f32>, manifest: &mut String| {
            let _ = writeln!(manifest, "{name},{rows},{},f32le,row_major", self.cols);
            let mut bytes = Vec::with_capacity(values.len() * 4);
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            (name, bytes)
        };
        let mut files = Vec::new();
        for (c, buf) in self.channels.iter().zip(self.per_channel) {
            files.push(dump(format!("scores_{}.f32", c.key()), buf, &mut manifest));
        }
        files.push(dump("scores_fused.f32".to_string(), self.fused, &mut manifest));
        stager.stage("scores_manifest.csv", manifest.into_bytes());
        for (name, bytes) in files {
            stager.stage(&name, bytes);
        }
    }
}

/// Testing mode: index the database, stream the query frames through the
/// online matcher, evaluate against ground truth when present, and write
/// the match, metrics, visualization, and timing files.
pub fn run_testing(config: &RunConfig) -> Result<RunReport, PipelineError> {
    require_mode(config, Mode::Testing)?;
    init_thread_pool();
    let overall_start = Instant::now();

    let weights = config.channels.fusion_weights()?;
    let inputs = load_inputs(config)?;
    let enabled = config.channels.enabled;

    let extract_start = Instant::now();
    let db_sets = extract_sequence(&inputs.db, enabled, &inputs.ctx, inputs.db_cnn.as_deref())?;
    let mut extraction_seconds = extract_start.elapsed().as_secs_f64();

    let mut matcher = OnlineMatcher::new(
        db_sets,
        inputs.db.fixes(),
        config.matching,
        weights,
    )?;
    let mut dump = config
        .output
        .dump_scores
        .then(|| ScoreDump::new(matcher.channels(), inputs.db.len()));

    let mut decisions = Vec::with_capacity(inputs.query.len());
    let mut per_query_seconds = Vec::with_capacity(inputs.query.len());
    let mut matching_seconds = 0.0;
    for frame in &inputs.query.frames {
        let t0 = Instant::now();
        let set = extract_all(frame, enabled, &inputs.ctx, inputs.query_cnn.as_deref())?;
        let t1 = Instant::now();
        let decision = if let Some(dump) = dump.as_mut() {
            let (decision, channel_rows, fused_row) =
                matcher.push_with_rows(&set, &frame.gnss)?;
            dump.push(&channel_rows, &fused_row);
            decision
        } else {
            matcher.push(&set, &frame.gnss)?
        };
        let t2 = Instant::now();
        extraction_seconds += (t1 - t0).as_secs_f64();
        matching_seconds += (t2 - t1).as_secs_f64();
        per_query_seconds.push((t2 - t0).as_secs_f64());
        decisions.push(decision);
    }

    let mut stager = Stager::new();
    stager.stage("matches.csv", matches_csv(&decisions).into_bytes());
    let metrics = match &inputs.gt {
        Some(gt) => {
            let counts = tally(&decisions, gt, config.output.tolerance)?;
            let error = if config.output.error_accepted_only {
                mean_localization_error_accepted(&decisions, gt)?
            } else {
                mean_localization_error(&decisions, gt)?
            };
            let metrics = compute_metrics(counts).with_mean_error(error);
            stager.stage(
                "metrics.txt",
                metrics_report(
                    &metrics,
                    counts,
                    decisions.len(),
                    inputs.db.len(),
                    config.output.error_accepted_only,
                )
                .into_bytes(),
            );
            stager.stage(
                "visualization.csv",
                visualization_matrix_csv(&decisions, gt, config.output.tolerance)?.into_bytes(),
            );
            Some(metrics)
        }
        None => None,
    };
    if let Some(dump) = dump {
        dump.stage_into(&mut stager);
    }

    let mut report = RunReport {
        extraction_seconds,
        matching_seconds,
        overall_seconds: overall_start.elapsed().as_secs_f64(),
        per_query_seconds,
        metrics,
        outputs: Vec::new(),
    };
    stager.stage(
        "timing.txt",
        timing_report(&report, inputs.db.len()).into_bytes(),
    );
    report.outputs = stager.commit(&config.output.dir)?;
    Ok(report)
}

fn format_genome(out: &mut String, genome: &crate::tuning::Genome, channels: ChannelSet) {
    for c in channels.iter() {
        let _ = writeln!(out, "{} = {}", c.key(), genome.coefficients()[c.ordinal()]);
    }
}

/// Tuning mode: precompute single-frame score matrices, run the seeded
/// multi-run GA, and write the tuning report and per-generation traces.
/// When the configuration names a sweep parameter, a sweep with the
/// aggregated weights is chained onto the same output directory.
pub fn run_tuning(config: &RunConfig) -> Result<RunReport, PipelineError> {
    require_mode(config, Mode::Tuning)?;
    init_thread_pool();
    let overall_start = Instant::now();

    let inputs = load_inputs(config)?;
    let gt = inputs
        .gt
        .clone()
        .ok_or_else(|| PipelineError::Invalid("tuning requires ground truth".into()))?;
    let enabled = config.channels.enabled;

    let extract_start = Instant::now();
    let db_sets = extract_sequence(&inputs.db, enabled, &inputs.ctx, inputs.db_cnn.as_deref())?;
    let query_sets =
        extract_sequence(&inputs.query, enabled, &inputs.ctx, inputs.query_cnn.as_deref())?;
    let extraction_seconds = extract_start.elapsed().as_secs_f64();

    let search_start = Instant::now();
    let training = TrainingSet::prepare(
        &query_sets,
        &db_sets,
        &inputs.query.fixes(),
        &inputs.db.fixes(),
        enabled,
        &config.matching,
        gt.clone(),
        config.output.tolerance,
        0.0,
    )?;
    let outcome = run_ga_multi(&config.ga, &training)?;
    let matching_seconds = search_start.elapsed().as_secs_f64();

    let mut report_txt = String::new();
    let _ = writeln!(report_txt, "runs = {}", config.ga.runs);
    let _ = writeln!(report_txt, "population = {}", config.ga.population);
    let _ = writeln!(report_txt, "generations = {}", config.ga.generations);
    let _ = writeln!(report_txt, "seed = {}", config.ga.seed);
    let names: Vec<String> = enabled.iter().map(|c| c.key()).collect();
    let _ = writeln!(report_txt, "channels = {}", names.join(", "));
    for (r, run) in outcome.runs.iter().enumerate() {
        let _ = writeln!(report_txt, "\nrun {r}: f1 = {}", run.best_fitness);
        format_genome(&mut report_txt, &run.best, enabled);
    }
    let _ = writeln!(report_txt, "\naggregated: f1 = {}", outcome.aggregated_fitness);
    format_genome(&mut report_txt, &outcome.aggregated, enabled);

    let metrics = training.decisions_of(&outcome.aggregated).map(|decisions| {
        let counts = tally(&decisions, &gt, config.output.tolerance)
            .expect("training ground truth is complete");
        let error = if config.output.error_accepted_only {
            mean_localization_error_accepted(&decisions, &gt)
        } else {
            mean_localization_error(&decisions, &gt)
        }
        .expect("training ground truth is complete");
        compute_metrics(counts).with_mean_error(error)
    });
    if let Some(m) = &metrics {
        let _ = writeln!(report_txt, "precision = {}", m.precision);
        let _ = writeln!(report_txt, "recall = {}", m.recall);
        let _ = writeln!(report_txt, "mean_localization_error = {}", m.mean_error);
    }

    let mut traces = String::from("run,generation,best_f1\n");
    for (r, run) in outcome.runs.iter().enumerate() {
        for (g, f1) in run.trace.iter().enumerate() {
            let _ = writeln!(traces, "{r},{},{f1}", g + 1);
        }
    }

    let mut stager = Stager::new();
    stager.stage("tuning_report.txt", report_txt.into_bytes());
    stager.stage("traces.csv", traces.into_bytes());

    if let Some(param) = config.sweep.param {
        // Chain a sweep with the tuned weights when one is configured.
        let weights = training
            .weights_of(&outcome.aggregated)
            .ok_or(MatchingError::AllWeightsZero)?;
        let result = sweep_over(config, param, &query_sets, &db_sets, &inputs, &gt, weights)?;
        stage_sweep(&mut stager, &result);
    }

    let mut report = RunReport {
        extraction_seconds,
        matching_seconds,
        overall_seconds: overall_start.elapsed().as_secs_f64(),
        per_query_seconds: Vec::new(),
        metrics,
        outputs: Vec::new(),
    };
    stager.stage(
        "timing.txt",
        timing_report(&report, inputs.db.len()).into_bytes(),
    );
    report.outputs = stager.commit(&config.output.dir)?;
    Ok(report)
}

fn sweep_over(
    config: &RunConfig,
    param: SweepParam,
    query_sets: &[DescriptorSet],
    db_sets: &[DescriptorSet],
    inputs: &Inputs,
    gt: &GroundTruth,
    weights: crate::matching::FusionWeights,
) -> Result<SweepResult, PipelineError> {
    let values = match &config.sweep.values {
        Some(v) => v.clone(),
        None => param.default_values(),
    };
    let query_fixes = inputs.query.fixes();
    let db_fixes = inputs.db.fixes();
    let mut gated = Vec::new();
    for channel in config.channels.enabled.iter() {
        gated.push(compute_distance_matrix(
            query_sets,
            db_sets,
            channel,
            &query_fixes,
            &db_fixes,
            config.matching.gate_m,
        )?);
    }
    Ok(sweep(
        param,
        &values,
        &gated,
        &weights,
        &config.matching,
        gt,
        config.output.tolerance,
        config.output.error_accepted_only,
    )?)
}

fn stage_sweep(stager: &mut Stager, result: &SweepResult) {
    let mut out = String::from(
        "value,true_positives,false_positives,false_negatives,precision,recall,f1,mean_error\n",
    );
    for p in &result.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.value,
            p.counts.true_positives,
            p.counts.false_positives,
            p.counts.false_negatives,
            p.metrics.precision,
            p.metrics.recall,
            p.metrics.f1,
            p.metrics.mean_error
        );
    }
    stager.stage(&format!("sweep_{}.csv", result.parameter.key()), out.into_bytes());
}

/// Sweep mode: vary one matching parameter over a grid, all others fixed,
/// and write one metrics row per value.
pub fn run_sweep(
    config: &RunConfig,
    param_override: Option<SweepParam>,
) -> Result<RunReport, PipelineError> {
    require_mode(config, Mode::Sweep)?;
    init_thread_pool();
    let overall_start = Instant::now();

    let param = param_override.or(config.sweep.param).ok_or_else(|| {
        PipelineError::Invalid(
            "no sweep parameter: set sweep_param in [tuning] or pass --param".into(),
        )
    })?;
    let weights = config.channels.fusion_weights()?;
    let inputs = load_inputs(config)?;
    let gt = inputs
        .gt
        .clone()
        .ok_or_else(|| PipelineError::Invalid("sweeping requires ground truth".into()))?;
    let enabled = config.channels.enabled;

    let extract_start = Instant::now();
    let db_sets = extract_sequence(&inputs.db, enabled, &inputs.ctx, inputs.db_cnn.as_deref())?;
    let query_sets =
        extract_sequence(&inputs.query, enabled, &inputs.ctx, inputs.query_cnn.as_deref())?;
    let extraction_seconds = extract_start.elapsed().as_secs_f64();

    let sweep_start = Instant::now();
    let result = sweep_over(config, param, &query_sets, &db_sets, &inputs, &gt, weights)?;
    let matching_seconds = sweep_start.elapsed().as_secs_f64();

    let mut stager = Stager::new();
    stage_sweep(&mut stager, &result);
    let mut report = RunReport {
        extraction_seconds,
        matching_seconds,
        overall_seconds: overall_start.elapsed().as_secs_f64(),
        per_query_seconds: Vec::new(),
        metrics: None,
        outputs: Vec::new(),
    };
    stager.stage(
        "timing.txt",
        timing_report(&report, inputs.db.len()).into_bytes(),
    );
    report.outputs = stager.commit(&config.output.dir)?;
    Ok(report)
}

/// An indexed database ready to match query frames one at a time: the
/// streaming core of testing mode, also exposed through the C interface.
pub struct Engine {
    matcher: OnlineMatcher,
    ctx: ExtractionContext,
    enabled: ChannelSet,
    query_cnn: Option<PathBuf>,
}

impl Engine {
    /// Loads and indexes the database of a testing-mode configuration.
    pub fn from_config(config: &RunConfig) -> Result<Engine, PipelineError> {
        require_mode(config, Mode::Testing)?;
        let weights = config.channels.fusion_weights()?;
        let enabled = config.channels.enabled;
        let db = load_sequence(
            &config.dataset.database,
            Role::Database,
            enabled.image_modalities(),
        )?;
        let mut ctx = ExtractionContext::new(config.channels.extraction_params());
        if let Some(vocab) = vocabulary_for(config, &db, enabled)? {
            ctx = ctx.with_vocabulary(vocab);
        }
        let cnn = |root: &Path| config.dataset.cnn_dir.as_ref().map(|name| root.join(name));
        let db_sets = extract_sequence(&db, enabled, &ctx, cnn(&config.dataset.database).as_deref())?;
        let matcher = OnlineMatcher::new(db_sets, db.fixes(), config.matching, weights)?;
        Ok(Engine {
            matcher,
            ctx,
            enabled,
            query_cnn: cnn(&config.dataset.query),
        })
    }

    pub fn db_len(&self) -> usize {
        self.matcher.db_len()
    }

    pub fn enabled(&self) -> ChannelSet {
        self.enabled
    }

    /// Number of query frames pushed so far.
    pub fn len(&self) -> usize {
        self.matcher.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matcher.is_empty()
    }

    /// Extracts the frame's descriptors and matches it against the
    /// database. An explicit `embedding` feeds the embedding channel
    /// directly; without one the channel falls back to the configured
    /// per-sequence descriptor files.
    pub fn push(
        &mut self,
        frame: &crate::dataset::MultimodalFrame,
        embedding: Option<&[f32]>,
    ) -> Result<MatchDecision, PipelineError> {
        let set = match embedding {
            Some(values) => {
                let cnn_color = Channel::new(DescriptorKind::Cnn, crate::dataset::Modality::Color)
                    .expect("valid channel");
                if !self.enabled.contains(cnn_color) {
                    return Err(PipelineError::Invalid(
                        "an embedding was passed but no embedding channel is enabled".into(),
                    ));
                }
                let image_only: ChannelSet = self
                    .enabled
                    .iter()
                    .filter(|c| c.kind() != DescriptorKind::Cnn)
                    .collect();
                let mut set = extract_all(frame, image_only, &self.ctx, None)?;
                set.insert(embedding_descriptor(values)?);
                set
            }
            None => extract_all(frame, self.enabled, &self.ctx, self.query_cnn.as_deref())?,
        };
        Ok(self.matcher.push(&set, &frame.gnss)?)
    }
}
