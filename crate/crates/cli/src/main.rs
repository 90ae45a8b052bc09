//! `ser`: speech emotion recognition experiments from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ser", version, about = "Siamese CNN speech emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Average,
    Crop,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Kind {
    Mfcc13,
    Logmel26,
}

#[derive(Subcommand)]
enum Command {
    /// Write a four-class synthetic corpus and its manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 125)]
        n_per_class: usize,
        #[arg(long, default_value_t = 1.5)]
        min_duration: f64,
        #[arg(long, default_value_t = 3.0)]
        max_duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Extract and cache features for every utterance in a manifest.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache_dir: PathBuf,
        #[arg(long, default_value_t = 9.0)]
        t_fixed: f64,
        #[arg(long, value_enum, default_value_t = Kind::Mfcc13)]
        kind: Kind,
    },
    /// Train one run of one fold and score it on the held-out session.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Test session, 1..=5.
        #[arg(long)]
        fold: u8,
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Overrides the manifest named in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved checkpoint on one session or on a whole manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to one session; all improvised utterances otherwise.
        #[arg(long)]
        session: Option<u8>,
        #[arg(long, value_enum, default_value_t = Mode::Average)]
        mode: Mode,
        /// Crop seed; defaults to the checkpoint's run seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Writes the canonical JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-session-out cross-validation.
    CrossValidate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the output directory named in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validation once per contrastive weight in the config's grid.
    SweepLambda {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full training objective on a reduced model.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthCorpus {
            out,
            n_per_class,
            min_duration,
            max_duration,
            seed,
        } => commands::synth_corpus(&out, n_per_class, (min_duration, max_duration), seed),
        Command::ExtractFeatures {
            manifest,
            cache_dir,
            t_fixed,
            kind,
        } => commands::extract_features(&manifest, &cache_dir, t_fixed, kind),
        Command::Train {
            config,
            fold,
            run,
            manifest,
            out,
        } => commands::train(&config, fold, run, manifest, &out),
        Command::Evaluate {
            checkpoint,
            manifest,
            session,
            mode,
            seed,
            cache_dir,
            out,
        } => commands::evaluate(&checkpoint, &manifest, session, mode, seed, cache_dir, out),
        Command::CrossValidate { config, manifest, out } => commands::cross_validate(&config, manifest, out),
        Command::SweepLambda { config, manifest, out } => commands::sweep_lambda(&config, manifest, out),
        Command::Gradcheck { seeds, tolerance } => commands::gradcheck(seeds, tolerance),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
