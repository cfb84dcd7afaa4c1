//! Descriptor extraction: GIST, LDB, bag-of-words over binary local
//! features, and ingestion of externally computed embedding vectors.
//!
//! A channel is a (descriptor kind, modality) pair. Nine are valid: LDB and
//! GIST over all three modalities, BoW over color and infrared, and the
//! external embedding (CNN) over color only. The canonical channel order
//! used for fusion coefficients everywhere in this crate is:
//! BoW-color, BoW-infrared, GIST-color, GIST-depth, GIST-infrared,
//! LDB-color, LDB-depth, LDB-infrared, CNN-color.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use thiserror::Error;

use crate::dataset::{Modality, ModalitySet, MultimodalFrame};

mod gist;
mod ldb;
mod orb;
mod vocab;

pub use gist::{extract_gist, GistExtractor, GistParams};
pub use ldb::{extract_ldb, ldb_bit_count, LDB_DEFAULT_LEVELS, LDB_SIZE};
pub use orb::{detect_and_describe, LocalFeature, OrbParams};
pub use vocab::{build_vocabulary, extract_bow, feature_hamming, BinaryFeature, Vocabulary};

/// Default mixing coefficient of the illumination-invariant transform.
pub const DEFAULT_ALPHA: f64 = 0.48;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("invalid channel: {kind} over {modality}")]
    InvalidChannel { kind: DescriptorKind, modality: Modality },
    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("empty image")]
    EmptyImage,
    #[error("frame {frame} lacks the {modality} image required by {channel}")]
    MissingInput {
        frame: usize,
        modality: Modality,
        channel: Channel,
    },
    #[error("channel {0} needs a vocabulary; none was provided")]
    MissingVocabulary(Channel),
    #[error("channel {0} needs an external descriptor directory; none was provided")]
    MissingExternalDir(Channel),
    #[error("descriptor file {path}: expected {expected} values, got {got}")]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("descriptor file {path}: {reason}")]
    ParseError { path: PathBuf, reason: String },
    #[error("embedding vector: {0}")]
    InvalidEmbedding(String),
    #[error("vocabulary training needs at least k = {k} features, got {got}")]
    InsufficientFeatures { k: usize, got: usize },
    #[error("vocabulary file {path}: {reason}")]
    MalformedVocabulary { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DescriptorKind {
    Gist,
    Ldb,
    Bow,
    Cnn,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 4] = [
        DescriptorKind::Gist,
        DescriptorKind::Ldb,
        DescriptorKind::Bow,
        DescriptorKind::Cnn,
    ];

    pub fn key(self) -> &'static str {
        match self {
            DescriptorKind::Gist => "gist",
            DescriptorKind::Ldb => "ldb",
            DescriptorKind::Bow => "bow",
            DescriptorKind::Cnn => "cnn",
        }
    }

    pub fn parse_key(s: &str) -> Option<DescriptorKind> {
        match s {
            "gist" => Some(DescriptorKind::Gist),
            "ldb" => Some(DescriptorKind::Ldb),
            "bow" => Some(DescriptorKind::Bow),
            "cnn" => Some(DescriptorKind::Cnn),
            _ => None,
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A validated (descriptor kind, modality) pair.
///
/// Construction goes through [`Channel::new`], so a value of this type is
/// always one of the nine valid channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel {
    kind: DescriptorKind,
    modality: Modality,
}

impl Channel {
    pub const COUNT: usize = 9;

    /// All valid channels in the canonical coefficient order.
    pub const ALL: [Channel; Channel::COUNT] = [
        Channel { kind: DescriptorKind::Bow, modality: Modality::Color },
        Channel { kind: DescriptorKind::Bow, modality: Modality::Infrared },
        Channel { kind: DescriptorKind::Gist, modality: Modality::Color },
        Channel { kind: DescriptorKind::Gist, modality: Modality::Depth },
        Channel { kind: DescriptorKind::Gist, modality: Modality::Infrared },
        Channel { kind: DescriptorKind::Ldb, modality: Modality::Color },
        Channel { kind: DescriptorKind::Ldb, modality: Modality::Depth },
        Channel { kind: DescriptorKind::Ldb, modality: Modality::Infrared },
        Channel { kind: DescriptorKind::Cnn, modality: Modality::Color },
    ];

    pub fn is_valid(kind: DescriptorKind, modality: Modality) -> bool {
        match kind {
            DescriptorKind::Gist | DescriptorKind::Ldb => true,
            DescriptorKind::Bow => modality != Modality::Depth,
            DescriptorKind::Cnn => modality == Modality::Color,
        }
    }

    pub fn new(kind: DescriptorKind, modality: Modality) -> Result<Channel, DescriptorError> {
        if Channel::is_valid(kind, modality) {
            Ok(Channel { kind, modality })
        } else {
            Err(DescriptorError::InvalidChannel { kind, modality })
        }
    }

    pub fn kind(self) -> DescriptorKind {
        self.kind
    }

    pub fn modality(self) -> Modality {
        self.modality
    }

    /// Position in [`Channel::ALL`]; indexes coefficient arrays.
    pub fn ordinal(self) -> usize {
        Channel::ALL
            .iter()
            .position(|c| *c == self)
            .expect("constructed channels are always valid")
    }

    /// Stable `kind.modality` name used in config keys and file names.
    pub fn key(self) -> String {
        format!("{}.{}", self.kind.key(), self.modality.key())
    }

    pub fn parse_key(s: &str) -> Option<Channel> {
        let (k, m) = s.split_once('.')?;
        let kind = DescriptorKind::parse_key(k)?;
        let modality = Modality::parse_key(m)?;
        Channel::new(kind, modality).ok()
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.kind.key(), self.modality.key())
    }
}

/// Small set of channels, ordered canonically on iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelSet(u16);

impl ChannelSet {
    pub const EMPTY: ChannelSet = ChannelSet(0);
    pub const ALL: ChannelSet = ChannelSet((1 << Channel::COUNT) - 1);

    #[must_use]
    pub fn with(self, c: Channel) -> ChannelSet {
        ChannelSet(self.0 | (1 << c.ordinal()))
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & (1 << c.ordinal()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |&c| self.contains(c))
    }

    /// Modalities whose images must be present; external-embedding channels
    /// read files instead of images and contribute nothing here.
    pub fn image_modalities(self) -> ModalitySet {
        self.iter()
            .filter(|c| c.kind() != DescriptorKind::Cnn)
            .map(|c| c.modality())
            .collect()
    }
}

impl FromIterator<Channel> for ChannelSet {
    fn from_iter<T: IntoIterator<Item = Channel>>(iter: T) -> ChannelSet {
        iter.into_iter().fold(ChannelSet::EMPTY, ChannelSet::with)
    }
}

/// Packed bit string with zeroed tail bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitString {
    blocks: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn with_capacity(bits: usize) -> BitString {
        BitString {
            blocks: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 64 == 0 {
            self.blocks.push(0);
        }
        if bit {
            *self.blocks.last_mut().expect("just ensured") |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.blocks[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.blocks.iter().map(|b| b.count_ones()).sum()
    }

    /// Hamming distance; both strings must have equal length.
    pub fn hamming(&self, other: &BitString) -> u32 {
        assert_eq!(self.len, other.len, "bit strings must have equal length");
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Sparse non-negative real vector sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_sorted(dim: usize, entries: Vec<(u32, f64)>) -> SparseVec {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|&(i, v)| (i as usize) < dim && v >= 0.0));
        SparseVec { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    /// L1 distance via a merge walk over the two index lists.
    pub fn l1_distance(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        while i < self.entries.len() && j < other.entries.len() {
            let (ia, va) = self.entries[i];
            let (ib, vb) = other.entries[j];
            match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    sum += va;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    sum += vb;
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    sum += (va - vb).abs();
                    i += 1;
                    j += 1;
                }
            }
        }
        sum += self.entries[i..].iter().map(|&(_, v)| v).sum::<f64>();
        sum += other.entries[j..].iter().map(|&(_, v)| v).sum::<f64>();
        sum
    }
}

/// One descriptor's payload: a bit string (LDB), a dense real vector (GIST
/// and external embeddings), or a sparse histogram (BoW).
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bits(BitString),
    Dense(Vec<f32>),
    Sparse(SparseVec),
}

/// A descriptor extracted from one frame for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    channel: Channel,
    payload: Payload,
    degenerate: bool,
}

impl DescriptorVector {
    pub fn new(channel: Channel, payload: Payload) -> DescriptorVector {
        if let Payload::Dense(v) = &payload {
            debug_assert!(v.iter().all(|x| x.is_finite()));
        }
        DescriptorVector {
            channel,
            payload,
            degenerate: false,
        }
    }

    /// Marks a payload that carries no signal (e.g. a histogram built from
    /// zero features); distances treat it as maximally far from everything.
    pub fn new_degenerate(channel: Channel, payload: Payload) -> DescriptorVector {
        DescriptorVector {
            channel,
            payload,
            degenerate: true,
        }
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dimension(&self) -> usize {
        match &self.payload {
            Payload::Bits(b) => b.len(),
            Payload::Dense(v) => v.len(),
            Payload::Sparse(s) => s.dim(),
        }
    }
}

/// Per-frame descriptors, keyed by channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    slots: [Option<DescriptorVector>; Channel::COUNT],
}

impl DescriptorSet {
    pub fn new() -> DescriptorSet {
        DescriptorSet::default()
    }

    pub fn insert(&mut self, v: DescriptorVector) {
        let slot = v.channel().ordinal();
        self.slots[slot] = Some(v);
    }

    pub fn get(&self, c: Channel) -> Option<&DescriptorVector> {
        self.slots[c.ordinal()].as_ref()
    }

    pub fn channels(&self) -> ChannelSet {
        self.iter().map(|v| v.channel()).collect()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DescriptorVector> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }
}

pub(crate) fn resized_gray(img: &GrayImage, w: u32, h: u32) -> GrayImage {
    if img.dimensions() == (w, h) {
        img.clone()
    } else {
        image::imageops::resize(img, w, h, image::imageops::FilterType::Triangle)
    }
}

fn illumination_raw(image: &RgbImage, alpha: f64) -> Vec<f64> {
    image
        .pixels()
        .map(|p| {
            let chan = |v: u8| ((f64::from(v) + 1.0) / 256.0).ln();
            0.5 + chan(p.0[1]) - alpha * chan(p.0[2]) - (1.0 - alpha) * chan(p.0[0])
        })
        .collect()
}

/// Log-chromaticity illumination-invariant grayscale transform.
///
/// Per pixel, with `X' = (X + 1) / 256`:
/// `I = 0.5 + ln(G') - alpha * ln(B') - (1 - alpha) * ln(R')`,
/// linearly rescaled over the image to the full 8-bit range. Gray pixels map
/// to a constant, and a global exposure change shifts `I` by roughly a
/// constant offset, which the rescale then removes.
pub fn illumination_invariant_transform(
    image: &RgbImage,
    alpha: f64,
) -> Result<GrayImage, DescriptorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DescriptorError::InvalidAlpha(alpha));
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(DescriptorError::EmptyImage);
    }
    let raw = illumination_raw(image, alpha);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let out: Vec<u8> = if span <= f64::EPSILON {
        vec![0; raw.len()]
    } else {
        raw.iter()
            .map(|&v| (((v - lo) / span) * 255.0).round() as u8)
            .collect()
    };
    Ok(GrayImage::from_raw(image.width(), image.height(), out).expect("size preserved"))
}

/// Reads a raw little-endian `f32` vector file and L2-normalizes it.
pub fn ingest_external_descriptor(
    path: &Path,
    expected_dim: usize,
) -> Result<DescriptorVector, DescriptorError> {
    let bytes = std::fs::read(path).map_err(|e| DescriptorError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parse_err = |reason: String| DescriptorError::ParseError {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() % 4 != 0 {
        return Err(parse_err(format!("file length {} is not a multiple of 4", bytes.len())));
    }
    let got = bytes.len() / 4;
    if got != expected_dim {
        return Err(DescriptorError::DimensionMismatch {
            path: path.to_path_buf(),
            expected: expected_dim,
            got,
        });
    }
    let v: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    embedding_descriptor(&v).map_err(|e| match e {
        DescriptorError::InvalidEmbedding(reason) => parse_err(reason),
        other => other,
    })
}

/// Builds the embedding-channel descriptor from an in-memory vector, with
/// the same finiteness check and unit normalization as the file ingest.
pub fn embedding_descriptor(values: &[f32]) -> Result<DescriptorVector, DescriptorError> {
    let invalid = |reason: &str| DescriptorError::InvalidEmbedding(reason.to_string());
    if values.is_empty() {
        return Err(invalid("empty vector"));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector contains non-finite values"));
    }
    let norm = values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(invalid("zero vector is not normalizable"));
    }
    let v = values.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
    let channel = Channel::new(DescriptorKind::Cnn, Modality::Color).expect("valid channel");
    Ok(DescriptorVector::new(channel, Payload::Dense(v)))
}

/// Vector length of an external descriptor file, from its byte size.
pub fn external_descriptor_dim(path: &Path) -> Result<usize, DescriptorError> {
    let meta = std::fs::metadata(path).map_err(|e| DescriptorError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let len = meta.len() as usize;
    if len % 4 != 0 || len == 0 {
        return Err(DescriptorError::ParseError {
            path: path.to_path_buf(),
            reason: format!("file length {len} is not a positive multiple of 4"),
        });
    }
    Ok(len / 4)
}

/// Extraction parameters shared by every frame of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionParams {
    pub alpha: f64,
    pub gist: GistParams,
    pub ldb_levels: Vec<u32>,
    pub orb: OrbParams,
    /// External embedding length; inferred from the file when absent.
    pub cnn_dim: Option<usize>,
}

impl Default for ExtractionParams {
    fn default() -> ExtractionParams {
        ExtractionParams {
            alpha: DEFAULT_ALPHA,
            gist: GistParams::default(),
            ldb_levels: LDB_DEFAULT_LEVELS.to_vec(),
            orb: OrbParams::default(),
            cnn_dim: None,
        }
    }
}

/// Shared immutable state for extraction: parameters, the precomputed GIST
/// filter bank, and the optional BoW vocabulary. Safe to share across
/// threads.
pub struct ExtractionContext {
    params: ExtractionParams,
    gist: GistExtractor,
    vocab: Option<Arc<Vocabulary>>,
}

impl ExtractionContext {
    pub fn new(params: ExtractionParams) -> ExtractionContext {
        let gist = GistExtractor::new(params.gist.clone());
        ExtractionContext {
            params,
            gist,
            vocab: None,
        }
    }

    pub fn with_vocabulary(mut self, vocab: Arc<Vocabulary>) -> ExtractionContext {
        self.vocab = Some(vocab);
        self
    }

    pub fn params(&self) -> &ExtractionParams {
        &self.params
    }

    pub fn set_cnn_dim(&mut self, dim: usize) {
        self.params.cnn_dim = Some(dim);
    }

    pub fn gist(&self) -> &GistExtractor {
        &self.gist
    }

    pub fn vocabulary(&self) -> Option<&Arc<Vocabulary>> {
        self.vocab.as_ref()
    }
}

/// Extracts every enabled channel of one frame.
///
/// `cnn_dir` names the directory holding `<index>.f32` files for the frame's
/// sequence; it is only consulted when the CNN channel is enabled.
pub fn extract_all(
    frame: &MultimodalFrame,
    enabled: ChannelSet,
    ctx: &ExtractionContext,
    cnn_dir: Option<&Path>,
) -> Result<DescriptorSet, DescriptorError> {
    let mut set = DescriptorSet::new();
    for channel in enabled.iter() {
        let vector = match channel.kind() {
            DescriptorKind::Cnn => {
                let dir = cnn_dir.ok_or(DescriptorError::MissingExternalDir(channel))?;
                let path = dir.join(format!("{:06}.f32", frame.index));
                let dim = match ctx.params.cnn_dim {
                    Some(d) => d,
                    None => external_descriptor_dim(&path)?,
                };
                ingest_external_descriptor(&path, dim)?
            }
            kind => {
                let gray = channel_input(frame, channel, ctx.params.alpha)?;
                match kind {
                    DescriptorKind::Gist => ctx.gist.extract(&gray, channel)?,
                    DescriptorKind::Ldb => extract_ldb(&gray, &ctx.params.ldb_levels, channel)?,
                    DescriptorKind::Bow => {
                        let vocab = ctx
                            .vocab
                            .as_ref()
                            .ok_or(DescriptorError::MissingVocabulary(channel))?;
                        let features = detect_and_describe(&gray, &ctx.params.orb);
                        let descs: Vec<BinaryFeature> =
                            features.iter().map(|f| f.descriptor).collect();
                        extract_bow(&descs, vocab, channel.modality())?
                    }
                    DescriptorKind::Cnn => unreachable!("handled above"),
                }
            }
        };
        set.insert(vector);
    }
    Ok(set)
}

/// The grayscale input image a channel consumes. LDB over color uses the
/// illumination-invariant transform; everything else uses the plain
/// single-channel view.
fn channel_input(
    frame: &MultimodalFrame,
    channel: Channel,
    alpha: f64,
) -> Result<GrayImage, DescriptorError> {
    let missing = || DescriptorError::MissingInput {
        frame: frame.index,
        modality: channel.modality(),
        channel,
    };
    if channel.kind() == DescriptorKind::Ldb && channel.modality() == Modality::Color {
        let color = frame.color.as_ref().ok_or_else(missing)?;
        return illumination_invariant_transform(color, alpha);
    }
    frame.gray(channel.modality()).ok_or_else(missing)
}
