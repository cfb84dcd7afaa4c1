//! On-disk sequence layout, GNSS tracks, ground truth, and synthetic data.
//!
//! A sequence root contains `color/`, `depth/`, `infrared/` subdirectories
//! with zero-padded `%06d.png` frames, plus `gnss.csv` (rows
//! `index,lat,lon,valid`) which doubles as the frame index: its row count
//! defines the sequence length. Depth PNGs are 16-bit grayscale millimeter
//! values; color is 8-bit RGB; infrared is 8-bit grayscale. Ground truth is a
//! `gt.csv` of `query_index,db_index` rows, one per query frame.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageReader, Luma};
use thiserror::Error;

// Callers build [`MultimodalFrame`]s from these; re-exported so they do not
// need their own dependency on the image crate.
pub use image::{GrayImage, RgbImage};

mod synth;

pub use synth::{generate_synthetic_pair, generate_synthetic_pair_with, synthesize_embedding,
                write_embeddings, Perturbation, SynthParams};

/// 16-bit raw depth raster; values are millimeters, 0 means no return.
pub type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Raw depth below this is clamped: closer than the sensor's reliable range.
pub const DEPTH_MIN_MM: u16 = 500;
/// Raw depth above this is clamped: beyond the sensor's effective range.
pub const DEPTH_MAX_MM: u16 = 10_000;

/// Mean Earth radius in meters; centimeter-accurate at gate scale.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {frame} is missing its {modality} image ({path})")]
    MissingModality {
        frame: usize,
        modality: Modality,
        path: PathBuf,
    },
    #[error("failed to decode {path}: {reason}")]
    DecodeError { path: PathBuf, reason: String },
    #[error("malformed gnss track {path} line {line}: {reason}")]
    MalformedGnss {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("malformed ground truth {path} line {line}: {reason}")]
    MalformedGroundTruth {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("ground truth line {line}: {what} {value} out of range (length {len})")]
    IndexOutOfRange {
        line: usize,
        what: &'static str,
        value: usize,
        len: usize,
    },
    #[error("incomplete ground truth: query {query} has no entry")]
    IncompleteGroundTruth { query: usize },
    #[error("geodesic distance requested over an invalid fix")]
    InvalidFix,
    #[error("sequence at {path} has no frames")]
    EmptySequence { path: PathBuf },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One of the co-registered image channels captured per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Color,
    Depth,
    Infrared,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Color, Modality::Depth, Modality::Infrared];

    /// Stable name used for subdirectories and config keys.
    pub fn key(self) -> &'static str {
        match self {
            Modality::Color => "color",
            Modality::Depth => "depth",
            Modality::Infrared => "infrared",
        }
    }

    pub fn parse_key(s: &str) -> Option<Modality> {
        match s {
            "color" => Some(Modality::Color),
            "depth" => Some(Modality::Depth),
            "infrared" => Some(Modality::Infrared),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Small set of modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);
    pub const ALL: ModalitySet = ModalitySet(0b111);

    fn bit(m: Modality) -> u8 {
        match m {
            Modality::Color => 1,
            Modality::Depth => 2,
            Modality::Infrared => 4,
        }
    }

    #[must_use]
    pub fn with(self, m: Modality) -> ModalitySet {
        ModalitySet(self.0 | Self::bit(m))
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & Self::bit(m) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |&m| self.contains(m))
    }
}

impl FromIterator<Modality> for ModalitySet {
    fn from_iter<T: IntoIterator<Item = Modality>>(iter: T) -> ModalitySet {
        iter.into_iter().fold(ModalitySet::EMPTY, ModalitySet::with)
    }
}

/// A single GNSS reading attached to a frame.
///
/// Invalid fixes carry no coordinate guarantees and are never used for
/// gating: a pair with an invalid fix on either side counts as within range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub latitude: f64,
    pub longitude: f64,
    pub valid: bool,
}

impl GnssFix {
    pub fn new(latitude: f64, longitude: f64) -> GnssFix {
        debug_assert!((-90.0..=90.0).contains(&latitude));
        debug_assert!((-180.0..=180.0).contains(&longitude));
        GnssFix {
            latitude,
            longitude,
            valid: true,
        }
    }

    pub fn invalid() -> GnssFix {
        GnssFix {
            latitude: 0.0,
            longitude: 0.0,
            valid: false,
        }
    }
}

/// Haversine great-circle distance in meters on the [`EARTH_RADIUS_M`] sphere.
pub fn geodesic_distance(a: GnssFix, b: GnssFix) -> Result<f64, DatasetError> {
    if !a.valid || !b.valid {
        return Err(DatasetError::InvalidFix);
    }
    let phi1 = a.latitude.to_radians();
    let phi2 = b.latitude.to_radians();
    let dphi = (b.latitude - a.latitude).to_radians();
    let dlam = (b.longitude - a.longitude).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlam / 2.0).sin().powi(2);
    // Clamp guards rounding just above 1.0 for antipodal pairs.
    Ok(2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin())
}

/// One frame of co-registered multimodal images plus its GNSS fix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalFrame {
    pub index: usize,
    pub color: Option<RgbImage>,
    pub depth: Option<DepthImage>,
    pub infrared: Option<GrayImage>,
    pub gnss: GnssFix,
}

impl MultimodalFrame {
    pub fn empty(index: usize, gnss: GnssFix) -> MultimodalFrame {
        MultimodalFrame {
            index,
            color: None,
            depth: None,
            infrared: None,
            gnss,
        }
    }

    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Color => self.color.is_some(),
            Modality::Depth => self.depth.is_some(),
            Modality::Infrared => self.infrared.is_some(),
        }
    }

    /// 8-bit single-channel view of a modality: color converts to luma,
    /// depth is range-normalized, infrared is returned as stored.
    pub fn gray(&self, m: Modality) -> Option<GrayImage> {
        match m {
            Modality::Color => self.color.as_ref().map(image::imageops::grayscale),
            Modality::Depth => self.depth.as_ref().map(normalize_depth),
            Modality::Infrared => self.infrared.clone(),
        }
    }

    pub fn resolution(&self) -> Option<(u32, u32)> {
        if let Some(im) = &self.color {
            return Some(im.dimensions());
        }
        if let Some(im) = &self.depth {
            return Some(im.dimensions());
        }
        self.infrared.as_ref().map(|im| im.dimensions())
    }
}

/// Linear 8-bit view of raw millimeter depth.
///
/// Values are clamped to `[DEPTH_MIN_MM, DEPTH_MAX_MM]` and mapped linearly;
/// zero (no return) stays 0 so dropouts read as "very close to the clamp
/// floor" rather than poisoning the dynamic range.
pub fn normalize_depth(raw: &DepthImage) -> GrayImage {
    let span = (DEPTH_MAX_MM - DEPTH_MIN_MM) as f64;
    GrayImage::from_fn(raw.width(), raw.height(), |x, y| {
        let d = raw.get_pixel(x, y)[0];
        if d == 0 {
            return Luma([0]);
        }
        let c = d.clamp(DEPTH_MIN_MM, DEPTH_MAX_MM);
        Luma([((f64::from(c - DEPTH_MIN_MM) / span) * 255.0).round() as u8])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Database,
}

/// An ordered, gap-free sequence of frames sharing one role.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub role: Role,
    pub frames: Vec<MultimodalFrame>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fixes(&self) -> Vec<GnssFix> {
        self.frames.iter().map(|f| f.gnss).collect()
    }
}

/// Complete query-index to database-index correspondence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: Vec<usize>,
    db_len: usize,
}

impl GroundTruth {
    /// Identity correspondence over equally long sequences.
    pub fn identity(len: usize) -> GroundTruth {
        GroundTruth {
            pairs: (0..len).collect(),
            db_len: len,
        }
    }

    pub fn from_pairs(pairs: Vec<usize>, db_len: usize) -> Result<GroundTruth, DatasetError> {
        for (q, &d) in pairs.iter().enumerate() {
            if d >= db_len {
                return Err(DatasetError::IndexOutOfRange {
                    line: q,
                    what: "db_index",
                    value: d,
                    len: db_len,
                });
            }
        }
        Ok(GroundTruth { pairs, db_len })
    }

    pub fn get(&self, query: usize) -> Option<usize> {
        self.pairs.get(query).copied()
    }

    pub fn query_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn db_len(&self) -> usize {
        self.db_len
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Frame file path for a modality under a sequence root.
pub fn frame_path(root: &Path, m: Modality, index: usize) -> PathBuf {
    root.join(m.key()).join(format!("{index:06}.png"))
}

fn read_gnss(path: &Path) -> Result<Vec<GnssFix>, DatasetError> {
    let malformed = |line: usize, reason: String| DatasetError::MalformedGnss {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut fixes = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(malformed(i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad index {:?}", fields[0])))?;
        if index != fixes.len() {
            return Err(malformed(
                i + 1,
                format!("indices must run 0,1,2,… (expected {}, got {index})", fixes.len()),
            ));
        }
        let latitude: f64 = fields[1]
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad latitude {:?}", fields[1])))?;
        let longitude: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad longitude {:?}", fields[2])))?;
        if !latitude.is_finite() || !(-90.0..=90.0).contains(&latitude) {
            return Err(malformed(i + 1, format!("latitude {latitude} out of [-90, 90]")));
        }
        if !longitude.is_finite() || !(-180.0..=180.0).contains(&longitude) {
            return Err(malformed(i + 1, format!("longitude {longitude} out of [-180, 180]")));
        }
        let valid = parse_flag(fields[3])
            .ok_or_else(|| malformed(i + 1, format!("bad valid flag {:?}", fields[3])))?;
        fixes.push(GnssFix {
            latitude,
            longitude,
            valid,
        });
    }
    Ok(fixes)
}

/// Loads a sequence from the standard layout.
///
/// `gnss.csv` is the frame index: its rows define the frame count, and every
/// enabled modality must provide exactly one image per row. Extra frames on
/// disk beyond the GNSS rows are a count mismatch and rejected.
pub fn load_sequence(root: &Path, role: Role, enabled: ModalitySet) -> Result<Sequence, DatasetError> {
    let gnss_path = root.join("gnss.csv");
    let fixes = read_gnss(&gnss_path)?;
    if fixes.is_empty() {
        return Err(DatasetError::EmptySequence {
            path: root.to_path_buf(),
        });
    }
    let n = fixes.len();

    for m in enabled.iter() {
        for i in 0..n {
            let p = frame_path(root, m, i);
            if !p.is_file() {
                return Err(DatasetError::MissingModality {
                    frame: i,
                    modality: m,
                    path: p,
                });
            }
        }
        let extra = frame_path(root, m, n);
        if extra.is_file() {
            return Err(DatasetError::MalformedGnss {
                path: gnss_path.clone(),
                line: n,
                reason: format!("{n} gnss rows but more {m} frames exist on disk"),
            });
        }
    }

    let mut frames = Vec::with_capacity(n);
    for (i, fix) in fixes.into_iter().enumerate() {
        let mut frame = MultimodalFrame::empty(i, fix);
        for m in enabled.iter() {
            let p = frame_path(root, m, i);
            let decoded = ImageReader::open(&p)
                .map_err(|e| io_err(&p, e))?
                .decode()
                .map_err(|e| DatasetError::DecodeError {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
            let wrong = |want: &str, got: &image::DynamicImage| DatasetError::DecodeError {
                path: p.clone(),
                reason: format!("expected {want}, got {:?}", got.color()),
            };
            match m {
                Modality::Color => match decoded {
                    image::DynamicImage::ImageRgb8(im) => frame.color = Some(im),
                    other => return Err(wrong("8-bit 3-channel color", &other)),
                },
                Modality::Depth => match decoded {
                    image::DynamicImage::ImageLuma16(im) => frame.depth = Some(im),
                    other => return Err(wrong("16-bit grayscale depth", &other)),
                },
                Modality::Infrared => match decoded {
                    image::DynamicImage::ImageLuma8(im) => frame.infrared = Some(im),
                    other => return Err(wrong("8-bit grayscale infrared", &other)),
                },
            }
        }
        if let Some(res) = frame.resolution() {
            for m in enabled.iter() {
                let dims = match m {
                    Modality::Color => frame.color.as_ref().map(|im| im.dimensions()),
                    Modality::Depth => frame.depth.as_ref().map(|im| im.dimensions()),
                    Modality::Infrared => frame.infrared.as_ref().map(|im| im.dimensions()),
                };
                if let Some(dims) = dims {
                    if dims != res {
                        return Err(DatasetError::DecodeError {
                            path: frame_path(root, m, i),
                            reason: format!("resolution {dims:?} differs from the frame's {res:?}"),
                        });
                    }
                }
            }
        }
        frames.push(frame);
    }

    Ok(Sequence { role, frames })
}

/// Loads `query_index,db_index` rows and validates completeness and bounds.
pub fn load_ground_truth(path: &Path, query_len: usize, db_len: usize) -> Result<GroundTruth, DatasetError> {
    let malformed = |line: usize, reason: String| DatasetError::MalformedGroundTruth {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pairs: Vec<Option<usize>> = vec![None; query_len];
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(malformed(i + 1, format!("expected 2 fields, got {}", fields.len())));
        }
        let q: usize = fields[0]
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad query index {:?}", fields[0])))?;
        let d: usize = fields[1]
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad db index {:?}", fields[1])))?;
        if q >= query_len {
            return Err(DatasetError::IndexOutOfRange {
                line: i + 1,
                what: "query_index",
                value: q,
                len: query_len,
            });
        }
        if d >= db_len {
            return Err(DatasetError::IndexOutOfRange {
                line: i + 1,
                what: "db_index",
                value: d,
                len: db_len,
            });
        }
        if pairs[q].is_some() {
            return Err(malformed(i + 1, format!("duplicate entry for query {q}")));
        }
        pairs[q] = Some(d);
    }
    let mut resolved = Vec::with_capacity(query_len);
    for (q, d) in pairs.into_iter().enumerate() {
        match d {
            Some(d) => resolved.push(d),
            None => return Err(DatasetError::IncompleteGroundTruth { query: q }),
        }
    }
    Ok(GroundTruth {
        pairs: resolved,
        db_len,
    })
}

/// Writes a sequence into the standard layout under `root`.
pub fn write_sequence(root: &Path, seq: &Sequence) -> Result<(), DatasetError> {
    let mut gnss = String::new();
    for frame in &seq.frames {
        for m in Modality::ALL {
            if frame.has(m) {
                let dir = root.join(m.key());
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            }
        }
        let save = |p: &Path, r: Result<(), image::ImageError>| {
            r.map_err(|e| DatasetError::DecodeError {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })
        };
        if let Some(im) = &frame.color {
            let p = frame_path(root, Modality::Color, frame.index);
            save(&p, im.save(&p))?;
        }
        if let Some(im) = &frame.depth {
            let p = frame_path(root, Modality::Depth, frame.index);
            save(&p, im.save(&p))?;
        }
        if let Some(im) = &frame.infrared {
            let p = frame_path(root, Modality::Infrared, frame.index);
            save(&p, im.save(&p))?;
        }
        // Default float formatting round-trips exactly, so reloads reproduce
        // coordinates bit-for-bit.
        gnss.push_str(&format!(
            "{},{},{},{}\n",
            frame.index,
            frame.gnss.latitude,
            frame.gnss.longitude,
            u8::from(frame.gnss.valid)
        ));
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let gnss_path = root.join("gnss.csv");
    fs::write(&gnss_path, gnss).map_err(|e| io_err(&gnss_path, e))?;
    Ok(())
}

/// Writes `query_index,db_index` rows.
pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<(), DatasetError> {
    let mut out = String::new();
    for q in 0..gt.query_len() {
        out.push_str(&format!("{q},{}\n", gt.get(q).expect("complete map")));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
