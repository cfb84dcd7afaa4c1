//! Sequence matching: per-channel gated distance matrices, the online cone
//! search that scores each candidate pair against recent query frames,
//! weighted fusion of channel score matrices, and thresholded selection.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{geodesic_distance, GnssFix, Modality};
use crate::descriptors::{Channel, DescriptorKind, DescriptorSet, DescriptorVector, Payload};

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("channel mismatch on {channel}: {detail}")]
    ChannelMismatch { channel: Channel, detail: String },
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("all fusion weights are zero")]
    AllWeightsZero,
    #[error("invalid matching parameters: {0}")]
    InvalidParams(String),
}

/// Distance a degenerate descriptor (e.g. a histogram built from zero
/// features) keeps from everything: the L1 diameter of normalized
/// histograms.
pub const DEGENERATE_DISTANCE: f64 = 2.0;

/// Parameters of the cone search and selection stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Number of past query frames a cone spans.
    pub n_q: usize,
    /// Slope bounds of the cone: admissible frame-rate ratios between the
    /// query and database traversals.
    pub v_min: f64,
    pub v_max: f64,
    /// GNSS gate in meters; pairs farther apart (with both fixes valid) are
    /// excluded.
    pub gate_m: f64,
    /// Acceptance threshold on the fused score.
    pub threshold_t: f64,
    /// Divide scores by `n_q` even when the clipped cone covers fewer rows,
    /// instead of by the covered row count.
    pub strict_eq4: bool,
}

impl Default for MatchParams {
    fn default() -> MatchParams {
        MatchParams {
            n_q: 10,
            v_min: 0.4,
            v_max: 2.5,
            gate_m: 15.0,
            threshold_t: 0.16,
            strict_eq4: false,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), MatchingError> {
        let fail = |msg: String| Err(MatchingError::InvalidParams(msg));
        if self.n_q < 1 {
            return fail("n_q must be at least 1".into());
        }
        if !(self.v_min.is_finite() && self.v_min > 0.0) {
            return fail(format!("v_min must be a positive finite slope, got {}", self.v_min));
        }
        if !(self.v_max.is_finite() && self.v_max >= self.v_min) {
            return fail(format!(
                "v_max must be finite and at least v_min = {}, got {}",
                self.v_min, self.v_max
            ));
        }
        if self.gate_m.is_nan() || self.gate_m < 0.0 {
            return fail(format!("gate_m must be non-negative, got {}", self.gate_m));
        }
        if !(0.0..=1.0).contains(&self.threshold_t) {
            return fail(format!("threshold_t must lie in [0, 1], got {}", self.threshold_t));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Matrix<T> {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl<T: Copy> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, v: T) -> Matrix<T> {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }
}

/// Per-channel score matrix; every entry lies in [0, 1].
pub type ScoreMatrix = Matrix<f64>;

/// One channel's distance matrix with its GNSS exclusion mask.
///
/// `excluded[i][j]` is true exactly when both fixes are valid and their
/// geodesic distance exceeds the gate; excluded cells' values are never
/// read and hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedDistanceMatrix {
    values: Matrix<f64>,
    excluded: Matrix<bool>,
    channel: Channel,
    gate_m: f64,
}

impl GatedDistanceMatrix {
    pub fn from_parts(
        values: Matrix<f64>,
        excluded: Matrix<bool>,
        channel: Channel,
        gate_m: f64,
    ) -> Result<GatedDistanceMatrix, MatchingError> {
        if values.rows() != excluded.rows() || values.cols() != excluded.cols() {
            return Err(MatchingError::DimensionMismatch {
                detail: format!(
                    "values are {}x{} but the mask is {}x{}",
                    values.rows(),
                    values.cols(),
                    excluded.rows(),
                    excluded.cols()
                ),
            });
        }
        Ok(GatedDistanceMatrix {
            values,
            excluded,
            channel,
            gate_m,
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn l(&self) -> usize {
        self.values.cols()
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn kind(&self) -> DescriptorKind {
        self.channel.kind()
    }

    pub fn modality(&self) -> Modality {
        self.channel.modality()
    }

    pub fn gate_m(&self) -> f64 {
        self.gate_m
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn excluded(&self) -> &Matrix<bool> {
        &self.excluded
    }
}

/// Whether the pair is GNSS-excluded: beyond the gate with both fixes
/// valid. A dropout on either side never excludes.
pub fn gnss_excluded(a: &GnssFix, b: &GnssFix, gate_m: f64) -> bool {
    if !a.valid || !b.valid {
        return false;
    }
    geodesic_distance(*a, *b).expect("both fixes valid") > gate_m
}

/// Distance between two descriptors of the same channel: Hamming for bit
/// strings, Euclidean for dense vectors, L1 for sparse histograms. A
/// degenerate descriptor on either side yields [`DEGENERATE_DISTANCE`].
pub fn descriptor_distance(
    a: &DescriptorVector,
    b: &DescriptorVector,
) -> Result<f64, MatchingError> {
    if a.channel() != b.channel() {
        return Err(MatchingError::ChannelMismatch {
            channel: a.channel(),
            detail: format!("other descriptor belongs to {}", b.channel()),
        });
    }
    if a.is_degenerate() || b.is_degenerate() {
        return Ok(DEGENERATE_DISTANCE);
    }
    let dim_mismatch = |da: usize, db: usize| MatchingError::DimensionMismatch {
        detail: format!("{} descriptors of lengths {da} and {db}", a.channel()),
    };
    match (a.payload(), b.payload()) {
        (Payload::Bits(x), Payload::Bits(y)) => {
            if x.len() != y.len() {
                return Err(dim_mismatch(x.len(), y.len()));
            }
            Ok(f64::from(x.hamming(y)))
        }
        (Payload::Dense(x), Payload::Dense(y)) => {
            if x.len() != y.len() {
                return Err(dim_mismatch(x.len(), y.len()));
            }
            let sum: f64 = x
                .iter()
                .zip(y)
                .map(|(&p, &q)| {
                    let d = f64::from(p) - f64::from(q);
                    d * d
                })
                .sum();
            Ok(sum.sqrt())
        }
        (Payload::Sparse(x), Payload::Sparse(y)) => {
            if x.dim() != y.dim() {
                return Err(dim_mismatch(x.dim(), y.dim()));
            }
            Ok(x.l1_distance(y))
        }
        _ => Err(MatchingError::ChannelMismatch {
            channel: a.channel(),
            detail: "payload kinds differ".into(),
        }),
    }
}

fn require_channel<'d>(
    set: &'d DescriptorSet,
    channel: Channel,
    role: &str,
    frame: usize,
) -> Result<&'d DescriptorVector, MatchingError> {
    set.get(channel).ok_or_else(|| MatchingError::ChannelMismatch {
        channel,
        detail: format!("missing from {role} frame {frame}"),
    })
}

/// Builds one channel's gated distance matrix. Distances of excluded cells
/// are skipped and left at zero; they are never read downstream.
pub fn compute_distance_matrix(
    query: &[DescriptorSet],
    db: &[DescriptorSet],
    channel: Channel,
    query_fixes: &[GnssFix],
    db_fixes: &[GnssFix],
    gate_m: f64,
) -> Result<GatedDistanceMatrix, MatchingError> {
    if query.len() != query_fixes.len() || db.len() != db_fixes.len() {
        return Err(MatchingError::DimensionMismatch {
            detail: format!(
                "{} query descriptors with {} fixes, {} db descriptors with {} fixes",
                query.len(),
                query_fixes.len(),
                db.len(),
                db_fixes.len()
            ),
        });
    }
    let (n, l) = (query.len(), db.len());
    let db_vecs: Vec<&DescriptorVector> = db
        .iter()
        .enumerate()
        .map(|(j, set)| require_channel(set, channel, "database", j))
        .collect::<Result<_, _>>()?;

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<bool>), MatchingError> {
            let qv = require_channel(&query[i], channel, "query", i)?;
            let mut values = vec![0f64; l];
            let mut mask = vec![false; l];
            for j in 0..l {
                if gnss_excluded(&query_fixes[i], &db_fixes[j], gate_m) {
                    mask[j] = true;
                } else {
                    values[j] = descriptor_distance(qv, db_vecs[j])?;
                }
            }
            Ok((values, mask))
        })
        .collect::<Result<_, _>>()?;

    let mut values = Vec::with_capacity(n * l);
    let mut mask = Vec::with_capacity(n * l);
    for (v, m) in rows {
        values.extend(v);
        mask.extend(m);
    }
    GatedDistanceMatrix::from_parts(
        Matrix::from_vec(n, l, values),
        Matrix::from_vec(n, l, mask),
        channel,
        gate_m,
    )
}

/// Column interval of the cone at past offset `k`, before clipping:
/// `[j - floor(k * v_max), j - ceil(k * v_min)]`. Returns the interval
/// intersected with `[0, l)`, or `None` when that intersection is empty.
fn cone_interval(j: usize, k: usize, params: &MatchParams, l: usize) -> Option<(usize, usize)> {
    let kf = k as f64;
    let lo = j as i64 - (kf * params.v_max).floor() as i64;
    let hi = j as i64 - (kf * params.v_min).ceil() as i64;
    let lo = lo.max(0);
    let hi = hi.min(l as i64 - 1);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Enumerates the cone anchored at `(i, j)`: for each past offset
/// `k < min(n_q, i + 1)`, row `i - k` restricted to the columns whose
/// index distance from `j` lies in `[k * v_min, k * v_max]`. Only past
/// query rows appear, which is what makes the search online.
pub fn cone_region(
    i: usize,
    j: usize,
    params: &MatchParams,
    n: usize,
    l: usize,
) -> Vec<(usize, usize)> {
    assert!(i < n && j < l, "anchor out of bounds");
    let mut out = Vec::new();
    for k in 0..params.n_q.min(i + 1) {
        if let Some((lo, hi)) = cone_interval(j, k, params, l) {
            for c in lo..=hi {
                out.push((i - k, c));
            }
        }
    }
    out
}

/// Per-row argmin over non-excluded columns, ties to the lowest column;
/// `None` for fully excluded rows.
pub fn row_minima(gated: &GatedDistanceMatrix) -> Vec<Option<usize>> {
    (0..gated.n()).map(|i| row_minimum(gated.values.row(i), gated.excluded.row(i))).collect()
}

fn row_minimum(values: &[f64], excluded: &[bool]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (c, (&v, &ex)) in values.iter().zip(excluded).enumerate() {
        if ex {
            continue;
        }
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, c));
        }
    }
    best.map(|(_, c)| c)
}

/// The scoring core shared by the offline matrix builder and the online
/// matcher: everything it needs from the distances is the row minima.
fn score_from_minima(
    minima: &[Option<usize>],
    i: usize,
    j: usize,
    params: &MatchParams,
    l: usize,
) -> f64 {
    let mut n_eff = 0usize;
    let mut n_match = 0usize;
    for k in 0..params.n_q.min(i + 1) {
        if let Some((lo, hi)) = cone_interval(j, k, params, l) {
            n_eff += 1;
            if let Some(mc) = minima[i - k] {
                if (lo..=hi).contains(&mc) {
                    n_match += 1;
                }
            }
        }
    }
    let denom = if params.strict_eq4 { params.n_q } else { n_eff };
    if denom == 0 {
        0.0
    } else {
        n_match as f64 / denom as f64
    }
}

/// Fraction of the cone's rows whose distance minimum falls inside the
/// cone. The denominator is the number of rows the clipped cone covers, or
/// `n_q` when `strict_eq4` is set.
pub fn score_pair(
    i: usize,
    j: usize,
    gated: &GatedDistanceMatrix,
    minima: &[Option<usize>],
    params: &MatchParams,
) -> f64 {
    assert!(i < gated.n() && j < gated.l(), "anchor out of bounds");
    assert_eq!(minima.len(), gated.n(), "one minimum per query row");
    score_from_minima(minima, i, j, params, gated.l())
}

/// Scores every pair. Row `i` only depends on query rows up to `i`, so
/// appending query frames never changes earlier rows.
pub fn compute_score_matrix(gated: &GatedDistanceMatrix, params: &MatchParams) -> ScoreMatrix {
    params.validate().expect("valid match parameters");
    let minima = row_minima(gated);
    let (n, l) = (gated.n(), gated.l());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..l)
                .map(|j| score_from_minima(&minima, i, j, params, l))
                .collect()
        })
        .collect();
    Matrix::from_vec(n, l, rows.concat())
}

/// Non-negative fusion weights over the nine channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    weights: [f64; Channel::COUNT],
}

impl FusionWeights {
    /// Weights indexed by the canonical channel order; at least one must be
    /// strictly positive and none may be negative or non-finite.
    pub fn new(weights: [f64; Channel::COUNT]) -> Result<FusionWeights, MatchingError> {
        for (c, &w) in Channel::ALL.iter().zip(&weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(MatchingError::InvalidParams(format!(
                    "weight for {c} must be a non-negative finite value, got {w}"
                )));
            }
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(MatchingError::AllWeightsZero);
        }
        Ok(FusionWeights { weights })
    }

    /// Weight 1 on the given channels, 0 elsewhere.
    pub fn uniform_over(
        channels: crate::descriptors::ChannelSet,
    ) -> Result<FusionWeights, MatchingError> {
        let mut w = [0f64; Channel::COUNT];
        for c in channels.iter() {
            w[c.ordinal()] = 1.0;
        }
        FusionWeights::new(w)
    }

    pub fn get(&self, c: Channel) -> f64 {
        self.weights[c.ordinal()]
    }

    pub fn as_array(&self) -> &[f64; Channel::COUNT] {
        &self.weights
    }

    /// Channels with strictly positive weight, canonical order.
    pub fn active(&self) -> impl Iterator<Item = (Channel, f64)> + '_ {
        Channel::ALL
            .into_iter()
            .map(|c| (c, self.get(c)))
            .filter(|&(_, w)| w > 0.0)
    }

    pub fn active_channels(&self) -> crate::descriptors::ChannelSet {
        self.active().map(|(c, _)| c).collect()
    }
}

impl fmt::Display for FusionWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, w) in self.active() {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{c}={w}")?;
            first = false;
        }
        Ok(())
    }
}

/// Weighted mean of the channel score matrices over the strictly positive
/// weights: `S = sum(lambda * S_channel) / sum(lambda)`.
pub fn fuse_score_matrices(
    channel_scores: &[(Channel, ScoreMatrix)],
    weights: &FusionWeights,
) -> Result<ScoreMatrix, MatchingError> {
    for (idx, (c, _)) in channel_scores.iter().enumerate() {
        if channel_scores[..idx].iter().any(|(d, _)| d == c) {
            return Err(MatchingError::ChannelMismatch {
                channel: *c,
                detail: "channel provided twice".into(),
            });
        }
    }
    let mut active: Vec<(&ScoreMatrix, f64)> = Vec::new();
    for (c, w) in weights.active() {
        let m = channel_scores
            .iter()
            .find(|(d, _)| *d == c)
            .map(|(_, m)| m)
            .ok_or_else(|| MatchingError::ChannelMismatch {
                channel: c,
                detail: "no score matrix provided for a positively weighted channel".into(),
            })?;
        active.push((m, w));
    }
    if active.is_empty() {
        return Err(MatchingError::AllWeightsZero);
    }
    let (n, l) = (active[0].0.rows(), active[0].0.cols());
    for (m, _) in &active {
        if m.rows() != n || m.cols() != l {
            return Err(MatchingError::DimensionMismatch {
                detail: format!(
                    "score matrices of sizes {}x{} and {}x{}",
                    n,
                    l,
                    m.rows(),
                    m.cols()
                ),
            });
        }
    }
    let total: f64 = active.iter().map(|&(_, w)| w).sum();
    let mut data = vec![0f64; n * l];
    for (m, w) in &active {
        for (out, &s) in data.iter_mut().zip(m.data()) {
            *out += w * s;
        }
    }
    for v in &mut data {
        *v /= total;
    }
    Ok(Matrix::from_vec(n, l, data))
}

/// One query frame's matching outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchDecision {
    pub query_index: usize,
    pub best_db_index: usize,
    pub best_score: f64,
    pub accepted: bool,
}

fn decide_row(row: &[f64], query_index: usize, threshold_t: f64) -> MatchDecision {
    assert!(!row.is_empty(), "database must be non-empty");
    let mut best = 0usize;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    MatchDecision {
        query_index,
        best_db_index: best,
        best_score: row[best],
        accepted: row[best] >= threshold_t,
    }
}

/// Per-row argmax (ties to the lowest index) and threshold acceptance.
pub fn select_matches(fused: &ScoreMatrix, threshold_t: f64) -> Vec<MatchDecision> {
    (0..fused.rows())
        .map(|i| decide_row(fused.row(i), i, threshold_t))
        .collect()
}

/// Incremental matcher: indexes the database once, then consumes query
/// frames one at a time, producing for each the same decision the offline
/// pipeline would. Scores for frame `i` read only rows up to `i`.
pub struct OnlineMatcher {
    params: MatchParams,
    weights: FusionWeights,
    channels: Vec<Channel>,
    db: Vec<DescriptorSet>,
    db_fixes: Vec<GnssFix>,
    /// Per active channel, one distance row per pushed frame.
    dist_rows: Vec<Vec<Vec<f64>>>,
    /// Exclusion rows, shared by all channels.
    excluded_rows: Vec<Vec<bool>>,
    /// Per active channel, the running row minima.
    minima: Vec<Vec<Option<usize>>>,
}

impl OnlineMatcher {
    pub fn new(
        db: Vec<DescriptorSet>,
        db_fixes: Vec<GnssFix>,
        params: MatchParams,
        weights: FusionWeights,
    ) -> Result<OnlineMatcher, MatchingError> {
        params.validate()?;
        if db.is_empty() {
            return Err(MatchingError::DimensionMismatch {
                detail: "database is empty".into(),
            });
        }
        if db.len() != db_fixes.len() {
            return Err(MatchingError::DimensionMismatch {
                detail: format!("{} db descriptors with {} fixes", db.len(), db_fixes.len()),
            });
        }
        let channels: Vec<Channel> = weights.active().map(|(c, _)| c).collect();
        for (j, set) in db.iter().enumerate() {
            for &c in &channels {
                require_channel(set, c, "database", j)?;
            }
        }
        let k = channels.len();
        Ok(OnlineMatcher {
            params,
            weights,
            channels,
            db,
            db_fixes,
            dist_rows: vec![Vec::new(); k],
            excluded_rows: Vec::new(),
            minima: vec![Vec::new(); k],
        })
    }

    pub fn db_len(&self) -> usize {
        self.db.len()
    }

    /// Query frames consumed so far.
    pub fn len(&self) -> usize {
        self.excluded_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excluded_rows.is_empty()
    }

    pub fn params(&self) -> &MatchParams {
        &self.params
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Consumes the next query frame and returns its decision.
    pub fn push(
        &mut self,
        descriptors: &DescriptorSet,
        fix: &GnssFix,
    ) -> Result<MatchDecision, MatchingError> {
        Ok(self.push_with_rows(descriptors, fix)?.0)
    }

    /// Like [`OnlineMatcher::push`], also returning the per-channel score
    /// rows (order matching [`OnlineMatcher::channels`]) and the fused row.
    pub fn push_with_rows(
        &mut self,
        descriptors: &DescriptorSet,
        fix: &GnssFix,
    ) -> Result<(MatchDecision, Vec<Vec<f64>>, Vec<f64>), MatchingError> {
        let i = self.excluded_rows.len();
        let l = self.db.len();

        let mut excluded = vec![false; l];
        for (j, db_fix) in self.db_fixes.iter().enumerate() {
            excluded[j] = gnss_excluded(fix, db_fix, self.params.gate_m);
        }

        // Stage the new rows completely before committing any state, so a
        // failed push leaves the matcher unchanged.
        let mut new_dist: Vec<Vec<f64>> = Vec::with_capacity(self.channels.len());
        let mut new_min: Vec<Option<usize>> = Vec::with_capacity(self.channels.len());
        for &channel in &self.channels {
            let qv = require_channel(descriptors, channel, "query", i)?;
            let mut row = vec![0f64; l];
            for (j, db_set) in self.db.iter().enumerate() {
                if !excluded[j] {
                    let dv = db_set.get(channel).expect("validated at construction");
                    row[j] = descriptor_distance(qv, dv)?;
                }
            }
            new_min.push(row_minimum(&row, &excluded));
            new_dist.push(row);
        }
        for (ci, (row, min)) in new_dist.into_iter().zip(new_min).enumerate() {
            self.dist_rows[ci].push(row);
            self.minima[ci].push(min);
        }
        self.excluded_rows.push(excluded);

        let mut channel_rows: Vec<Vec<f64>> = Vec::with_capacity(self.channels.len());
        for ci in 0..self.channels.len() {
            let row: Vec<f64> = (0..l)
                .map(|j| score_from_minima(&self.minima[ci], i, j, &self.params, l))
                .collect();
            channel_rows.push(row);
        }
        let total: f64 = self.channels.iter().map(|&c| self.weights.get(c)).sum();
        let fused: Vec<f64> = (0..l)
            .map(|j| {
                self.channels
                    .iter()
                    .enumerate()
                    .map(|(ci, &c)| self.weights.get(c) * channel_rows[ci][j])
                    .sum::<f64>()
                    / total
            })
            .collect();
        let decision = decide_row(&fused, i, self.params.threshold_t);
        Ok((decision, channel_rows, fused))
    }
}
