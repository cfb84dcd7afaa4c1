//! Coefficient search and parameter sweeps: a seeded elitist genetic
//! algorithm over the nine fusion weights, fitness measured as F1 on
//! cached single-frame score matrices, plus sweeps of the cone and
//! threshold parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{GnssFix, GroundTruth};
use crate::descriptors::{Channel, ChannelSet, DescriptorSet};
use crate::evaluation::{
    compute_metrics, mean_localization_error, mean_localization_error_accepted, tally,
    EvalCounts, EvaluationError, Metrics, Tolerance,
};
use crate::matching::{
    compute_distance_matrix, compute_score_matrix, fuse_score_matrices, select_matches,
    FusionWeights, GatedDistanceMatrix, MatchDecision, MatchParams, MatchingError, ScoreMatrix,
};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("cannot aggregate an empty genome list")]
    EmptyList,
    #[error("invalid sweep range for {param}: {detail}")]
    InvalidRange { param: String, detail: String },
    #[error("invalid tuning configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

/// Inclusive bounds every gene lives in.
pub const GENE_MIN: f64 = 0.0;
pub const GENE_MAX: f64 = 4.0;

/// Standard deviation of the Gaussian mutation step.
const MUTATION_SIGMA: f64 = 0.25;

/// Tournament size of the selection operator.
const TOURNAMENT_SIZE: usize = 3;

/// A candidate coefficient array in the canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Genome {
    coefficients: [f64; Channel::COUNT],
}

impl Genome {
    pub fn new(coefficients: [f64; Channel::COUNT]) -> Result<Genome, TuningError> {
        for (c, &v) in Channel::ALL.iter().zip(&coefficients) {
            if !v.is_finite() || !(GENE_MIN..=GENE_MAX).contains(&v) {
                return Err(TuningError::InvalidConfig(format!(
                    "gene for {c} must lie in [{GENE_MIN}, {GENE_MAX}], got {v}"
                )));
            }
        }
        Ok(Genome { coefficients })
    }

    pub fn coefficients(&self) -> &[f64; Channel::COUNT] {
        &self.coefficients
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub runs: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> GaConfig {
        GaConfig {
            population: 50,
            generations: 80,
            runs: 15,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            seed: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), TuningError> {
        let fail = |msg: String| Err(TuningError::InvalidConfig(msg));
        if self.population < 1 {
            return fail("population must be at least 1".into());
        }
        if self.generations < 1 {
            return fail("generations must be at least 1".into());
        }
        if self.runs < 1 {
            return fail("runs must be at least 1".into());
        }
        for (name, rate) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
                return fail(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        Ok(())
    }
}

/// Everything a fitness call needs, precomputed once: per-channel score
/// matrices at `n_q = 1` (so sequence context cannot shadow the
/// coefficients), the ground truth, and the evaluation settings.
pub struct TrainingSet {
    channel_scores: Vec<(Channel, ScoreMatrix)>,
    gt: GroundTruth,
    tolerance: Tolerance,
    /// Selection threshold during tuning; zero by default so F1 reflects
    /// pure ranking quality.
    tuning_threshold: f64,
}

impl TrainingSet {
    /// Builds the cached matrices from extracted descriptors.
    pub fn prepare(
        query: &[DescriptorSet],
        db: &[DescriptorSet],
        query_fixes: &[GnssFix],
        db_fixes: &[GnssFix],
        channels: ChannelSet,
        base: &MatchParams,
        gt: GroundTruth,
        tolerance: Tolerance,
        tuning_threshold: f64,
    ) -> Result<TrainingSet, TuningError> {
        if channels.is_empty() {
            return Err(TuningError::InvalidConfig(
                "tuning needs at least one enabled channel".into(),
            ));
        }
        if !(0.0..=1.0).contains(&tuning_threshold) {
            return Err(TuningError::InvalidConfig(format!(
                "tuning threshold must lie in [0, 1], got {tuning_threshold}"
            )));
        }
        let single = MatchParams { n_q: 1, ..*base };
        single.validate()?;
        let mut channel_scores = Vec::with_capacity(channels.len());
        for channel in channels.iter() {
            let gated = compute_distance_matrix(
                query,
                db,
                channel,
                query_fixes,
                db_fixes,
                single.gate_m,
            )?;
            channel_scores.push((channel, compute_score_matrix(&gated, &single)));
        }
        TrainingSet::from_score_matrices(channel_scores, gt, tolerance, tuning_threshold)
    }

    /// Assembles a training set from already computed single-frame score
    /// matrices.
    pub fn from_score_matrices(
        channel_scores: Vec<(Channel, ScoreMatrix)>,
        gt: GroundTruth,
        tolerance: Tolerance,
        tuning_threshold: f64,
    ) -> Result<TrainingSet, TuningError> {
        if channel_scores.is_empty() {
            return Err(TuningError::InvalidConfig(
                "tuning needs at least one score matrix".into(),
            ));
        }
        let n = channel_scores[0].1.rows();
        if gt.query_len() != n {
            return Err(TuningError::InvalidConfig(format!(
                "ground truth covers {} queries but the matrices have {n} rows",
                gt.query_len()
            )));
        }
        Ok(TrainingSet {
            channel_scores,
            gt,
            tolerance,
            tuning_threshold,
        })
    }

    pub fn channels(&self) -> ChannelSet {
        self.channel_scores.iter().map(|&(c, _)| c).collect()
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tolerance
    }

    /// Fusion weights the genome induces over the available channels, or
    /// `None` when it is zero on all of them.
    pub fn weights_of(&self, genome: &Genome) -> Option<FusionWeights> {
        let mut weights = [0f64; Channel::COUNT];
        for &(c, _) in &self.channel_scores {
            weights[c.ordinal()] = genome.coefficients[c.ordinal()];
        }
        if weights.iter().all(|&w| w == 0.0) {
            return None;
        }
        Some(FusionWeights::new(weights).expect("non-negative with a positive entry"))
    }

    /// The decisions the genome's weights induce at the tuning threshold,
    /// or `None` when the genome weighs no available channel.
    pub fn decisions_of(&self, genome: &Genome) -> Option<Vec<MatchDecision>> {
        let weights = self.weights_of(genome)?;
        let fused = fuse_score_matrices(&self.channel_scores, &weights)
            .expect("training matrices share shape and cover the weights");
        Some(select_matches(&fused, self.tuning_threshold))
    }
}

/// F1 of the decisions induced by fusing the cached matrices with the
/// genome's weights. A genome that is zero on every available channel
/// scores 0.
pub fn fitness(genome: &Genome, training: &TrainingSet) -> f64 {
    let Some(decisions) = training.decisions_of(genome) else {
        return 0.0;
    };
    let counts = tally(&decisions, &training.gt, training.tolerance)
        .expect("ground truth covers every training query");
    compute_metrics(counts).f1
}

/// One GA run's outcome: the best genome of the final generation and the
/// best-fitness trace, one entry per generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaRunResult {
    pub best: Genome,
    pub best_fitness: f64,
    pub trace: Vec<f64>,
}

fn random_genome(rng: &mut ChaCha20Rng) -> Genome {
    let mut c = [0f64; Channel::COUNT];
    for g in &mut c {
        *g = rng.random_range(GENE_MIN..=GENE_MAX);
    }
    Genome { coefficients: c }
}

/// Index of the strictly greatest fitness; ties keep the lowest index.
fn best_index(fits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &f) in fits.iter().enumerate() {
        if f > fits[best] {
            best = i;
        }
    }
    best
}

/// Tournament selection with replacement; the first-drawn maximum wins.
fn tournament(rng: &mut ChaCha20Rng, fits: &[f64]) -> usize {
    let mut winner = rng.random_range(0..fits.len());
    for _ in 1..TOURNAMENT_SIZE {
        let c = rng.random_range(0..fits.len());
        if fits[c] > fits[winner] {
            winner = c;
        }
    }
    winner
}

fn uniform_crossover(rng: &mut ChaCha20Rng, a: &Genome, b: &Genome) -> Genome {
    let mut c = [0f64; Channel::COUNT];
    for (i, g) in c.iter_mut().enumerate() {
        *g = if rng.random_bool(0.5) {
            a.coefficients[i]
        } else {
            b.coefficients[i]
        };
    }
    Genome { coefficients: c }
}

fn mutate(rng: &mut ChaCha20Rng, genome: &mut Genome, rate: f64, step: &Normal<f64>) {
    for g in &mut genome.coefficients {
        if rng.random_bool(rate) {
            *g = (*g + step.sample(rng)).clamp(GENE_MIN, GENE_MAX);
        }
    }
}

/// One seeded GA run. Elitist and generational: the best individual
/// survives unchanged, the rest are bred by tournament selection, uniform
/// crossover, and clamped Gaussian mutation. `run_index` selects an
/// independent RNG stream so multi-run searches differ while staying
/// reproducible.
pub fn run_ga(config: &GaConfig, training: &TrainingSet, run_index: usize) -> GaRunResult {
    config.validate().expect("valid GA configuration");
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(run_index as u64 + 1);
    let step = Normal::new(0.0, MUTATION_SIGMA).expect("valid sigma");

    let mut pop: Vec<Genome> = (0..config.population)
        .map(|_| random_genome(&mut rng))
        .collect();
    let mut fits: Vec<f64> = pop.par_iter().map(|g| fitness(g, training)).collect();
    let mut trace = Vec::with_capacity(config.generations);
    trace.push(fits[best_index(&fits)]);

    for _ in 1..config.generations {
        let elite = best_index(&fits);
        let mut next = Vec::with_capacity(pop.len());
        next.push(pop[elite]);
        // All randomness happens on this thread in a fixed order; only the
        // pure fitness evaluations fan out.
        while next.len() < pop.len() {
            let a = tournament(&mut rng, &fits);
            let b = tournament(&mut rng, &fits);
            let mut child = if rng.random_bool(config.crossover_rate) {
                uniform_crossover(&mut rng, &pop[a], &pop[b])
            } else {
                pop[a]
            };
            mutate(&mut rng, &mut child, config.mutation_rate, &step);
            next.push(child);
        }
        let elite_fit = fits[elite];
        let mut next_fits: Vec<f64> = next
            .par_iter()
            .skip(1)
            .map(|g| fitness(g, training))
            .collect();
        next_fits.insert(0, elite_fit);
        pop = next;
        fits = next_fits;
        trace.push(fits[best_index(&fits)]);
    }

    let best = best_index(&fits);
    GaRunResult {
        best: pop[best],
        best_fitness: fits[best],
        trace,
    }
}

/// Outcome of a multi-run search: every run plus the per-gene mean genome
/// and its fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub runs: Vec<GaRunResult>,
    pub aggregated: Genome,
    pub aggregated_fitness: f64,
}

/// Runs the GA `config.runs` times on independent streams and aggregates.
pub fn run_ga_multi(config: &GaConfig, training: &TrainingSet) -> Result<TuningOutcome, TuningError> {
    config.validate()?;
    let runs: Vec<GaRunResult> = (0..config.runs)
        .map(|r| run_ga(config, training, r))
        .collect();
    let genomes: Vec<Genome> = runs.iter().map(|r| r.best).collect();
    let aggregated = aggregate_runs(&genomes)?;
    let aggregated_fitness = fitness(&aggregated, training);
    Ok(TuningOutcome {
        runs,
        aggregated,
        aggregated_fitness,
    })
}

/// Per-gene arithmetic mean.
pub fn aggregate_runs(genomes: &[Genome]) -> Result<Genome, TuningError> {
    if genomes.is_empty() {
        return Err(TuningError::EmptyList);
    }
    let mut mean = [0f64; Channel::COUNT];
    for g in genomes {
        for (m, &v) in mean.iter_mut().zip(&g.coefficients) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= genomes.len() as f64;
    }
    Ok(Genome { coefficients: mean })
}

/// A sweepable matching parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    VMin,
    NQ,
    ThresholdT,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::VMin => "v_min",
            SweepParam::NQ => "n_q",
            SweepParam::ThresholdT => "threshold_t",
        }
    }

    pub fn parse_key(s: &str) -> Option<SweepParam> {
        match s {
            "v_min" => Some(SweepParam::VMin),
            "n_q" => Some(SweepParam::NQ),
            "threshold_t" | "t" => Some(SweepParam::ThresholdT),
            _ => None,
        }
    }

    /// The grid used when the configuration does not name one.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::VMin => (2..=15).map(|i| i as f64 / 20.0).collect(),
            SweepParam::NQ => [3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 79.0].to_vec(),
            SweepParam::ThresholdT => (0..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }

    fn validate_values(self, values: &[f64]) -> Result<(), TuningError> {
        let fail = |detail: String| {
            Err(TuningError::InvalidRange {
                param: self.key().to_string(),
                detail,
            })
        };
        if values.is_empty() {
            return fail("no values given".into());
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return fail("values must be strictly increasing".into());
        }
        for &v in values {
            if !v.is_finite() {
                return fail(format!("{v} is not finite"));
            }
            match self {
                // v_max is locked to 1/v_min, so v_min may not exceed 1.
                SweepParam::VMin => {
                    if !(v > 0.0 && v <= 1.0) {
                        return fail(format!("v_min values must lie in (0, 1], got {v}"));
                    }
                }
                SweepParam::NQ => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return fail(format!("n_q values must be integers >= 1, got {v}"));
                    }
                }
                SweepParam::ThresholdT => {
                    if !(0.0..=1.0).contains(&v) {
                        return fail(format!("threshold values must lie in [0, 1], got {v}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Base parameters with this sweep's value substituted. Sweeping v_min
    /// locks v_max to its reciprocal.
    fn apply(self, base: &MatchParams, value: f64) -> MatchParams {
        match self {
            SweepParam::VMin => MatchParams {
                v_min: value,
                v_max: 1.0 / value,
                ..*base
            },
            SweepParam::NQ => MatchParams {
                n_q: value as usize,
                ..*base
            },
            SweepParam::ThresholdT => MatchParams {
                threshold_t: value,
                ..*base
            },
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub counts: EvalCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub points: Vec<SweepPoint>,
}

/// Re-runs matching and evaluation for each value of one parameter, all
/// others fixed. The gated distance matrices are computed once by the
/// caller and never change; threshold sweeps additionally reuse the score
/// matrices, since the threshold only affects selection.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    parameter: SweepParam,
    values: &[f64],
    gated: &[GatedDistanceMatrix],
    weights: &FusionWeights,
    base: &MatchParams,
    gt: &GroundTruth,
    tolerance: Tolerance,
    error_accepted_only: bool,
) -> Result<SweepResult, TuningError> {
    parameter.validate_values(values)?;
    if gated.is_empty() {
        return Err(TuningError::InvalidConfig(
            "sweeping needs at least one distance matrix".into(),
        ));
    }

    let score_all = |params: &MatchParams| -> Result<ScoreMatrix, TuningError> {
        let mats: Vec<(Channel, ScoreMatrix)> = gated
            .iter()
            .map(|g| (g.channel(), compute_score_matrix(g, params)))
            .collect();
        Ok(fuse_score_matrices(&mats, weights)?)
    };

    let evaluate = |fused: &ScoreMatrix, params: &MatchParams| -> Result<(EvalCounts, Metrics), TuningError> {
        let decisions = select_matches(fused, params.threshold_t);
        let counts = tally(&decisions, gt, tolerance)?;
        let error = if error_accepted_only {
            mean_localization_error_accepted(&decisions, gt)?
        } else {
            mean_localization_error(&decisions, gt)?
        };
        Ok((counts, compute_metrics(counts).with_mean_error(error)))
    };

    let mut points = Vec::with_capacity(values.len());
    match parameter {
        SweepParam::ThresholdT => {
            let fused = score_all(base)?;
            for &v in values {
                let params = parameter.apply(base, v);
                let (counts, metrics) = evaluate(&fused, &params)?;
                points.push(SweepPoint { value: v, counts, metrics });
            }
        }
        SweepParam::VMin | SweepParam::NQ => {
            for &v in values {
                let params = parameter.apply(base, v);
                params.validate()?;
                let fused = score_all(&params)?;
                let (counts, metrics) = evaluate(&fused, &params)?;
                points.push(SweepPoint { value: v, counts, metrics });
            }
        }
    }
    Ok(SweepResult { parameter, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{DescriptorKind, DescriptorVector, Payload};
    use crate::matching::Matrix;

    fn ch(kind: DescriptorKind, m: crate::dataset::Modality) -> Channel {
        Channel::new(kind, m).unwrap()
    }

    /// Self-match training data over two scalar channels: descriptors at
    /// distinct positions so the diagonal is the unique minimum.
    fn self_match_training(n: usize, threshold: f64) -> TrainingSet {
        let c1 = ch(DescriptorKind::Gist, crate::dataset::Modality::Color);
        let c2 = ch(DescriptorKind::Ldb, crate::dataset::Modality::Infrared);
        let sets: Vec<DescriptorSet> = (0..n)
            .map(|i| {
                let mut s = DescriptorSet::new();
                s.insert(DescriptorVector::new(c1, Payload::Dense(vec![i as f32 * 2.0])));
                let mut b = crate::descriptors::BitString::with_capacity(8);
                for k in 0..8 {
                    b.push((i >> k) & 1 == 1);
                }
                s.insert(DescriptorVector::new(c2, Payload::Bits(b)));
                s
            })
            .collect();
        let fixes = vec![GnssFix::invalid(); n];
        let channels: ChannelSet = [c1, c2].into_iter().collect();
        TrainingSet::prepare(
            &sets,
            &sets,
            &fixes,
            &fixes,
            channels,
            &MatchParams::default(),
            GroundTruth::identity(n),
            Tolerance::default(),
            threshold,
        )
        .unwrap()
    }

    #[test]
    fn genome_bounds_are_enforced() {
        assert!(Genome::new([1.0; 9]).is_ok());
        assert!(Genome::new([0.0; 9]).is_ok());
        assert!(Genome::new([4.0; 9]).is_ok());
        assert!(Genome::new([4.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Genome::new([-0.1; 9]).is_err());
        assert!(Genome::new([f64::NAN; 9]).is_err());
    }

    #[test]
    fn fitness_on_self_match_training() {
        let training = self_match_training(12, 0.0);
        let ones = Genome::new([1.0; 9]).unwrap();
        assert_eq!(fitness(&ones, &training), 1.0);
        let zeros = Genome::new([0.0; 9]).unwrap();
        assert_eq!(fitness(&zeros, &training), 0.0);
        // Determinism and scale neutrality.
        assert_eq!(fitness(&ones, &training), fitness(&ones, &training));
        let scaled = Genome::new([3.0; 9]).unwrap();
        assert_eq!(fitness(&scaled, &training), fitness(&ones, &training));
        // Zero on every available channel, positive elsewhere: still 0.
        let mut only_absent = [0.0; 9];
        only_absent[ch(DescriptorKind::Cnn, crate::dataset::Modality::Color).ordinal()] = 2.0;
        let g = Genome::new(only_absent).unwrap();
        assert_eq!(fitness(&g, &training), 0.0);
    }

    #[test]
    fn degenerate_ga_returns_the_seeded_genome() {
        let training = self_match_training(6, 0.0);
        let config = GaConfig {
            population: 1,
            generations: 5,
            runs: 1,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            seed: 9,
        };
        let result = run_ga(&config, &training, 0);
        // With one individual and no operators the population is frozen.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        rng.set_stream(1);
        let expected = random_genome(&mut rng);
        assert_eq!(result.best, expected);
        assert_eq!(result.trace.len(), 5);
    }

    #[test]
    fn ga_is_reproducible_and_elitist() {
        let training = self_match_training(10, 0.0);
        let config = GaConfig {
            population: 8,
            generations: 12,
            runs: 2,
            seed: 4,
            ..GaConfig::default()
        };
        let a = run_ga(&config, &training, 0);
        let b = run_ga(&config, &training, 0);
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), config.generations);
        for w in a.trace.windows(2) {
            assert!(w[1] >= w[0], "elitism keeps the best fitness");
        }
        assert_eq!(
            a.trace.last().copied().unwrap(),
            a.best_fitness,
            "the final trace entry is the returned best"
        );
        // Genes never leave their bounds.
        for &g in a.best.coefficients() {
            assert!((GENE_MIN..=GENE_MAX).contains(&g));
        }
        // A different stream explores differently.
        let c = run_ga(&config, &training, 1);
        assert_ne!(a.best, c.best);
    }

    #[test]
    fn multi_run_aggregates_the_mean() {
        let training = self_match_training(8, 0.0);
        let config = GaConfig {
            population: 6,
            generations: 4,
            runs: 3,
            seed: 11,
            ..GaConfig::default()
        };
        let outcome = run_ga_multi(&config, &training).unwrap();
        assert_eq!(outcome.runs.len(), 3);
        let mut mean = [0.0; 9];
        for r in &outcome.runs {
            for (m, &v) in mean.iter_mut().zip(r.best.coefficients()) {
                *m += v / 3.0;
            }
        }
        for (a, e) in outcome.aggregated.coefficients().iter().zip(&mean) {
            assert!((a - e).abs() < 1e-12);
        }
        // The second invocation reproduces everything.
        let again = run_ga_multi(&config, &training).unwrap();
        assert_eq!(outcome, again);
    }

    #[test]
    fn aggregation_examples() {
        let a = Genome::new([1.0; 9]).unwrap();
        let b = Genome::new([3.0; 9]).unwrap();
        let mean = aggregate_runs(&[a, b]).unwrap();
        assert_eq!(mean.coefficients(), &[2.0; 9]);
        assert_eq!(aggregate_runs(&[a]).unwrap(), a);
        assert!(matches!(aggregate_runs(&[]), Err(TuningError::EmptyList)));
    }

    fn diagonal_gated(n: usize) -> GatedDistanceMatrix {
        let channel = ch(DescriptorKind::Gist, crate::dataset::Modality::Color);
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        GatedDistanceMatrix::from_parts(
            Matrix::from_vec(n, n, values),
            Matrix::filled(n, n, false),
            channel,
            15.0,
        )
        .unwrap()
    }

    #[test]
    fn threshold_sweep_has_non_increasing_recall() {
        let n = 14;
        let gated = vec![diagonal_gated(n)];
        let weights = FusionWeights::uniform_over(
            ChannelSet::EMPTY.with(gated[0].channel()),
        )
        .unwrap();
        let values: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let result = sweep(
            SweepParam::ThresholdT,
            &values,
            &gated,
            &weights,
            &MatchParams::default(),
            &GroundTruth::identity(n),
            Tolerance::default(),
            false,
        )
        .unwrap();
        assert_eq!(result.points.len(), values.len());
        for w in result.points.windows(2) {
            assert!(
                w[1].metrics.recall <= w[0].metrics.recall,
                "recall must not rise with the threshold"
            );
        }
        // At t=0 everything is accepted and the self-match is perfect.
        assert_eq!(result.points[0].metrics.recall, 1.0);
        assert_eq!(result.points[0].metrics.precision, 1.0);
    }

    #[test]
    fn vmin_sweep_locks_the_reciprocal_and_nq_must_be_integral() {
        let n = 10;
        let gated = vec![diagonal_gated(n)];
        let weights =
            FusionWeights::uniform_over(ChannelSet::EMPTY.with(gated[0].channel())).unwrap();
        let gt = GroundTruth::identity(n);

        let result = sweep(
            SweepParam::VMin,
            &[0.4, 0.5, 1.0],
            &gated,
            &weights,
            &MatchParams::default(),
            &gt,
            Tolerance::default(),
            false,
        )
        .unwrap();
        // The diagonal stays a perfect match at any admissible slope pair.
        for p in &result.points {
            assert_eq!(p.metrics.recall, 1.0, "v_min {}", p.value);
        }

        let bad = sweep(
            SweepParam::NQ,
            &[3.0, 4.5],
            &gated,
            &weights,
            &MatchParams::default(),
            &gt,
            Tolerance::default(),
            false,
        );
        assert!(matches!(bad, Err(TuningError::InvalidRange { .. })));

        let unsorted = sweep(
            SweepParam::ThresholdT,
            &[0.5, 0.2],
            &gated,
            &weights,
            &MatchParams::default(),
            &gt,
            Tolerance::default(),
            false,
        );
        assert!(matches!(unsorted, Err(TuningError::InvalidRange { .. })));

        let out_of_domain = sweep(
            SweepParam::VMin,
            &[0.5, 1.5],
            &gated,
            &weights,
            &MatchParams::default(),
            &gt,
            Tolerance::default(),
            false,
        );
        assert!(matches!(out_of_domain, Err(TuningError::InvalidRange { .. })));
    }

    #[test]
    fn default_grids_are_valid() {
        for p in [SweepParam::VMin, SweepParam::NQ, SweepParam::ThresholdT] {
            let values = p.default_values();
            p.validate_values(&values).unwrap();
        }
        assert_eq!(SweepParam::parse_key("v_min"), Some(SweepParam::VMin));
        assert_eq!(SweepParam::parse_key("t"), Some(SweepParam::ThresholdT));
        assert_eq!(SweepParam::parse_key("gate"), None);
    }
}
