//! Command line front end: `run`, `tune`, and `sweep` execute a
//! configuration file's mode, `synth` writes a synthetic dataset pair, and
//! `vocab` trains a bag-of-words vocabulary. Errors leave a one-line
//! diagnostic on stderr and a nonzero exit code.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpr_core::config::parse_config;
use mpr_core::dataset::{
    generate_synthetic_pair, load_sequence, write_embeddings, write_ground_truth, write_sequence,
    Modality, ModalitySet, Perturbation, Role,
};
use mpr_core::descriptors::{build_vocabulary, detect_and_describe, OrbParams};
use mpr_core::pipeline::{init_thread_pool, run_sweep, run_testing, run_tuning, RunReport};
use mpr_core::tuning::SweepParam;

#[derive(Parser)]
#[command(name = "mpr", version, about = "Multimodal place recognition engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Index the database sequence and match the query sequence against it.
    Run(ConfigArgs),
    /// Tune the fusion coefficients with the genetic optimizer.
    Tune(ConfigArgs),
    /// Vary one matching parameter over a grid and report the metrics.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Parameter to sweep (v_min, n_q, threshold_t); overrides the file.
        #[arg(long)]
        param: Option<String>,
    },
    /// Generate a synthetic query/database pair with ground truth.
    Synth {
        #[arg(long)]
        seed: u64,
        /// Frames per sequence.
        #[arg(long)]
        len: usize,
        /// Output directory; receives query/, database/, and gt.csv.
        #[arg(long)]
        out: PathBuf,
        /// Horizontal viewpoint shift of the query pass, in pixels.
        #[arg(long, default_value_t = 0)]
        viewpoint_px: i32,
        /// Brightness change of the query pass; 0 keeps it unchanged.
        #[arg(long, default_value_t = 0.0)]
        brightness_gain: f64,
        /// Fraction of query frames hit by a synthetic occluder.
        #[arg(long, default_value_t = 0.0)]
        occlusion_rate: f64,
        /// Standard deviation of the GNSS position noise, in meters.
        #[arg(long, default_value_t = 0.0)]
        gnss_noise_m: f64,
        /// Also write embedding files of this dimension under cnn/.
        #[arg(long)]
        cnn_dim: Option<usize>,
    },
    /// Train a bag-of-words vocabulary from a sequence's local features.
    Vocab {
        /// Sequence root to harvest training features from.
        #[arg(long)]
        train: PathBuf,
        /// Vocabulary output file.
        #[arg(long)]
        out: PathBuf,
        /// Branching factor of the vocabulary tree.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Depth of the vocabulary tree.
        #[arg(short = 'L', long = "L", default_value_t = 5)]
        l: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    init_thread_pool();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Run(args) => {
            let report = run_testing(&parse_config(&args.config)?)?;
            print_report(&report);
        }
        Command::Tune(args) => {
            let report = run_tuning(&parse_config(&args.config)?)?;
            print_report(&report);
        }
        Command::Sweep { config, param } => {
            let param = match param {
                Some(s) => Some(SweepParam::parse_key(&s).ok_or_else(|| {
                    format!("unknown sweep parameter `{s}`; use v_min, n_q, or threshold_t")
                })?),
                None => None,
            };
            let report = run_sweep(&parse_config(&config.config)?, param)?;
            print_report(&report);
        }
        Command::Synth {
            seed,
            len,
            out,
            viewpoint_px,
            brightness_gain,
            occlusion_rate,
            gnss_noise_m,
            cnn_dim,
        } => {
            let pert = Perturbation {
                viewpoint_px,
                brightness_gain,
                occlusion_rate,
                gnss_noise_m,
            };
            let (query, db, gt) = generate_synthetic_pair(seed, len, &pert);
            write_sequence(&out.join("query"), &query)?;
            write_sequence(&out.join("database"), &db)?;
            write_ground_truth(&out.join("gt.csv"), &gt)?;
            if let Some(dim) = cnn_dim {
                write_embeddings(&out.join("query"), &query, dim, "cnn")?;
                write_embeddings(&out.join("database"), &db, dim, "cnn")?;
            }
            println!("wrote {len}+{len} frames to {}", out.display());
        }
        Command::Vocab {
            train,
            out,
            k,
            l,
            seed,
        } => {
            let seq = load_sequence(&train, Role::Database, present_modalities(&train))?;
            let orb = OrbParams::default();
            let mut features = Vec::new();
            for frame in &seq.frames {
                for m in Modality::ALL {
                    if let Some(gray) = frame.gray(m) {
                        features
                            .extend(detect_and_describe(&gray, &orb).iter().map(|f| f.descriptor));
                    }
                }
            }
            let vocab = build_vocabulary(&features, k, l, seed)?;
            vocab.save(&out)?;
            println!(
                "trained on {} features from {} frames, saved to {}",
                features.len(),
                seq.len(),
                out.display()
            );
        }
    }
    Ok(())
}

/// The modalities whose image directories exist under `root`.
fn present_modalities(root: &Path) -> ModalitySet {
    Modality::ALL
        .into_iter()
        .filter(|m| root.join(m.key()).is_dir())
        .collect()
}

fn print_report(report: &RunReport) {
    if let Some(m) = &report.metrics {
        println!(
            "precision {:.4}  recall {:.4}  f1 {:.4}  mean error {:.3}",
            m.precision, m.recall, m.f1, m.mean_error
        );
    }
    if !report.per_query_seconds.is_empty() {
        let mean = report.per_query_seconds.iter().sum::<f64>() * 1e3
            / report.per_query_seconds.len() as f64;
        println!(
            "{} queries at {mean:.1} ms per frame",
            report.per_query_seconds.len()
        );
    }
    println!(
        "{} output files, {:.2} s total",
        report.outputs.len(),
        report.overall_seconds
    );
    for p in &report.outputs {
        println!("  {}", p.display());
    }
}
