//! C interface to the place recognition engine. The surface is small: a
//! config file drives everything, an opaque [`MprEngine`] streams query
//! frames against an indexed database, and `mpr_run_testing` /
//! `mpr_run_tuning` execute whole batch runs.
//!
//! Conventions: every fallible call returns an [`MprStatus`]; anything but
//! `Ok` leaves a message retrievable with [`mpr_last_error`] on the same
//! thread. Panics are caught at the boundary and surface as
//! `MprStatus::Panic`. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mpr_core::config::parse_config;
use mpr_core::dataset::{DepthImage, GnssFix, GrayImage, MultimodalFrame, RgbImage};
use mpr_core::pipeline::{run_testing, run_tuning, Engine, PipelineError, RunReport};

/// Outcome of an interface call. Everything except `Ok` stores a
/// diagnostic for `mpr_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MprStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was malformed (bad UTF-8, bad geometry, wrong mode).
    InvalidArgument = 2,
    /// The configuration file could not be read or parsed.
    Config = 3,
    /// The dataset on disk is missing, malformed, or inconsistent.
    Dataset = 4,
    /// Descriptor extraction failed.
    Descriptor = 5,
    /// Matching failed.
    Matching = 6,
    /// Coefficient tuning failed.
    Tuning = 7,
    /// Evaluation against ground truth failed.
    Evaluation = 8,
    /// Writing an output file failed.
    Io = 9,
    /// An internal panic was caught; the object it happened on is left in
    /// an undefined state and must only be freed.
    Panic = 10,
}

/// One query frame. Image buffers are row-major and optional (null when
/// the modality is absent); `width` and `height` apply to all of them.
#[repr(C)]
pub struct MprFrame {
    /// Position in the query sequence; also names the external embedding
    /// file when `embedding` is null.
    pub index: usize,
    /// Interleaved 8-bit RGB, `width * height * 3` bytes, or null.
    pub color: *const u8,
    /// Depth in millimeters, `width * height` values, or null.
    pub depth: *const u16,
    /// 8-bit infrared intensities, `width * height` bytes, or null.
    pub infrared: *const u8,
    pub width: u32,
    pub height: u32,
    /// GNSS fix in degrees; ignored unless `gnss_valid` is true.
    pub lat: f64,
    pub lon: f64,
    pub gnss_valid: bool,
    /// Embedding vector for the cnn channel, or null to read it from the
    /// configured descriptor directory.
    pub embedding: *const f32,
    pub embedding_len: usize,
}

/// The matcher's verdict on one query frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MprDecision {
    pub query_index: usize,
    /// Database frame with the best fused score.
    pub best_db_index: usize,
    pub best_score: f64,
    /// True when the best score reached the acceptance threshold.
    pub accepted: bool,
}

/// Result summary of a batch run. The quality numbers are only meaningful
/// when `has_metrics` is true (a ground truth file was configured).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MprMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean localization error in database frame indices.
    pub mean_error: f64,
    pub extraction_seconds: f64,
    pub matching_seconds: f64,
    pub overall_seconds: f64,
    pub has_metrics: bool,
}

/// An indexed database plus streaming matcher; create with
/// `mpr_engine_new`, destroy with `mpr_engine_free`.
pub struct MprEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: MprStatus, message: impl std::fmt::Display) -> MprStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).expect("nul bytes were replaced");
    });
    status
}

fn pipeline_status(e: &PipelineError) -> MprStatus {
    match e {
        PipelineError::Dataset(_) => MprStatus::Dataset,
        PipelineError::Descriptor(_) => MprStatus::Descriptor,
        PipelineError::Matching(_) => MprStatus::Matching,
        PipelineError::Tuning(_) => MprStatus::Tuning,
        PipelineError::Evaluation(_) => MprStatus::Evaluation,
        PipelineError::Io { .. } => MprStatus::Io,
        PipelineError::Invalid(_) => MprStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> MprStatus>(f: F) -> MprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(
            MprStatus::Panic,
            "internal panic; the object it occurred on must only be freed",
        ),
    }
}

/// Reads a NUL-terminated UTF-8 path argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, MprStatus> {
    if ptr.is_null() {
        return Err(fail(MprStatus::NullArgument, format!("{what} is null")));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(
            MprStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )),
    }
}

/// Builds the internal frame representation from the C buffers.
///
/// # Safety
/// Non-null image pointers must cover `width * height` elements (times 3
/// for color); a non-null `embedding` must cover `embedding_len` floats.
unsafe fn frame_arg(f: &MprFrame) -> Result<(MultimodalFrame, Option<Vec<f32>>), MprStatus> {
    let invalid = |m: &str| Err(fail(MprStatus::InvalidArgument, m.to_string()));
    let has_image = !f.color.is_null() || !f.depth.is_null() || !f.infrared.is_null();
    let px = f.width as usize * f.height as usize;
    if has_image && px == 0 {
        return invalid("image pointers need a nonzero width and height");
    }

    let color = (!f.color.is_null()).then(|| {
        let data = std::slice::from_raw_parts(f.color, px * 3).to_vec();
        RgbImage::from_raw(f.width, f.height, data).expect("buffer sized to fit")
    });
    let depth = (!f.depth.is_null()).then(|| {
        let data = std::slice::from_raw_parts(f.depth, px).to_vec();
        DepthImage::from_raw(f.width, f.height, data).expect("buffer sized to fit")
    });
    let infrared = (!f.infrared.is_null()).then(|| {
        let data = std::slice::from_raw_parts(f.infrared, px).to_vec();
        GrayImage::from_raw(f.width, f.height, data).expect("buffer sized to fit")
    });

    let gnss = if f.gnss_valid {
        if !(-90.0..=90.0).contains(&f.lat) || !(-180.0..=180.0).contains(&f.lon) {
            return invalid("GNSS fix out of range");
        }
        GnssFix::new(f.lat, f.lon)
    } else {
        GnssFix::invalid()
    };

    let embedding = if f.embedding.is_null() {
        None
    } else if f.embedding_len == 0 {
        return invalid("embedding pointer with zero length");
    } else {
        Some(std::slice::from_raw_parts(f.embedding, f.embedding_len).to_vec())
    };

    Ok((
        MultimodalFrame {
            index: f.index,
            color,
            depth,
            infrared,
            gnss,
        },
        embedding,
    ))
}

fn metrics_out(report: &RunReport) -> MprMetrics {
    let m = report.metrics.as_ref();
    MprMetrics {
        precision: m.map_or(0.0, |m| m.precision),
        recall: m.map_or(0.0, |m| m.recall),
        f1: m.map_or(0.0, |m| m.f1),
        mean_error: m.map_or(0.0, |m| m.mean_error),
        extraction_seconds: report.extraction_seconds,
        matching_seconds: report.matching_seconds,
        overall_seconds: report.overall_seconds,
        has_metrics: m.is_some(),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mpr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of this thread's most recent failure. The pointer stays valid
/// until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn mpr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates an engine from a testing-mode configuration file: loads the
/// database sequence, extracts its descriptors, and prepares the matcher.
/// On success `*out` owns the engine.
///
/// # Safety
/// `config_path` must be NUL-terminated and `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mpr_engine_new(
    config_path: *const c_char,
    out: *mut *mut MprEngine,
) -> MprStatus {
    guard(|| {
        if out.is_null() {
            return fail(MprStatus::NullArgument, "out is null");
        }
        let path = match path_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let config = match parse_config(path) {
            Ok(c) => c,
            Err(e) => return fail(MprStatus::Config, e),
        };
        match Engine::from_config(&config) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MprEngine { inner }));
                MprStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e),
        }
    })
}

/// Number of database frames the engine indexed; 0 for a null engine.
///
/// # Safety
/// `engine` must be null or a live pointer from `mpr_engine_new`.
#[no_mangle]
pub unsafe extern "C" fn mpr_engine_db_len(engine: *const MprEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    (*engine).inner.db_len()
}

/// Matches the next query frame and writes the decision to `*out`.
/// Frames must be pushed in sequence order, one call per frame.
///
/// # Safety
/// All pointers must satisfy the layout documented on [`MprFrame`];
/// `engine` must be live and not used concurrently from another thread.
#[no_mangle]
pub unsafe extern "C" fn mpr_engine_push_frame(
    engine: *mut MprEngine,
    frame: *const MprFrame,
    out: *mut MprDecision,
) -> MprStatus {
    guard(|| {
        if engine.is_null() || frame.is_null() || out.is_null() {
            return fail(MprStatus::NullArgument, "engine, frame, and out must be non-null");
        }
        let (frame, embedding) = match frame_arg(&*frame) {
            Ok(pair) => pair,
            Err(s) => return s,
        };
        match (*engine).inner.push(&frame, embedding.as_deref()) {
            Ok(d) => {
                *out = MprDecision {
                    query_index: d.query_index,
                    best_db_index: d.best_db_index,
                    best_score: d.best_score,
                    accepted: d.accepted,
                };
                MprStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e),
        }
    })
}

/// Destroys an engine. Null is a no-op; the pointer is invalid afterwards.
///
/// # Safety
/// `engine` must be null or a live pointer from `mpr_engine_new`, and must
/// not be used again.
#[no_mangle]
pub unsafe extern "C" fn mpr_engine_free(engine: *mut MprEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Executes a testing-mode configuration end to end and fills `*out`.
/// Output files land in the directory the configuration names.
///
/// # Safety
/// `config_path` must be NUL-terminated and `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mpr_run_testing(
    config_path: *const c_char,
    out: *mut MprMetrics,
) -> MprStatus {
    run_batch(config_path, out, |c| run_testing(c))
}

/// Executes a tuning-mode configuration end to end and fills `*out`.
///
/// # Safety
/// `config_path` must be NUL-terminated and `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mpr_run_tuning(
    config_path: *const c_char,
    out: *mut MprMetrics,
) -> MprStatus {
    run_batch(config_path, out, |c| run_tuning(c))
}

unsafe fn run_batch(
    config_path: *const c_char,
    out: *mut MprMetrics,
    run: impl FnOnce(&mpr_core::config::RunConfig) -> Result<RunReport, PipelineError>,
) -> MprStatus {
    guard(|| {
        if out.is_null() {
            return fail(MprStatus::NullArgument, "out is null");
        }
        let path = match path_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let config = match parse_config(path) {
            Ok(c) => c,
            Err(e) => return fail(MprStatus::Config, e),
        };
        match run(&config) {
            Ok(report) => {
                *out = metrics_out(&report);
                MprStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e),
        }
    })
}
