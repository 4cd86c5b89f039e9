//! `speech-features`: configure and run feature extraction pipelines, and
//! evaluate their outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use speech_features::eval::{
    abx_score, ger, mae, parse_triplets, read_pitch_track, resolve_triplets, PitchEval,
};
use speech_features::pipeline::{default_config, extract_features, FeatureKind, PipelineConfig};
use speech_features::{Error, FeaturesCollection, Format, Utterances};

#[derive(Parser)]
#[command(name = "speech-features", version, about = "Speech features extraction")]
struct Cli {
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a pipeline configuration with default parameters.
    Config {
        /// spectrogram, filterbank, mfcc or plp
        features: FeatureKind,
        /// Add pitch estimation and post-processing.
        #[arg(long, value_enum)]
        pitch: Option<PitchKind>,
        /// Add first and second order derivatives.
        #[arg(long)]
        delta: bool,
        /// Add mean and variance normalization.
        #[arg(long)]
        cmvn: bool,
        /// Add VTLN speaker normalization.
        #[arg(long)]
        vtln: bool,
        /// Output file, standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Extract features from a list of utterances.
    Extract {
        /// Number of parallel workers.
        #[arg(short = 'j', long, default_value_t = 1)]
        njobs: usize,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output format; guessed from the output name when omitted
        /// (`.csv` or an existing directory means csv).
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        config: PathBuf,
        utterances: PathBuf,
        output: PathBuf,
    },
    /// Evaluate pitch estimates or features.
    Eval {
        #[command(subcommand)]
        metric: Metric,
    },
}

#[derive(Subcommand)]
enum Metric {
    /// Mean absolute error and gross error rate of a pitch track.
    Pitch { truth: PathBuf, estimate: PathBuf },
    /// ABX error rate of `<a> <b> <x>` triplets over saved features.
    Abx {
        features: PathBuf,
        triplets: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PitchKind {
    Kaldi,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Binary => Format::Binary,
        }
    }
}

fn guess_format(path: &Path, arg: Option<FormatArg>) -> Format {
    match arg {
        Some(f) => f.into(),
        None if path.is_dir() || path.extension().is_some_and(|e| e == "csv") => Format::Csv,
        None => Format::Binary,
    }
}

struct Log {
    quiet: bool,
    start: Instant,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[info] {:>7.2}s {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
        }
    }
}

fn report(e: &Error) {
    match e {
        Error::Batch(errors) => {
            for e in errors {
                eprintln!("[error] {e}");
            }
            eprintln!("[error] {} utterances failed", errors.len());
        }
        e => eprintln!("[error] {e}"),
    }
}

fn run(cli: Cli) -> speech_features::Result<()> {
    let log = Log { quiet: cli.quiet, start: Instant::now() };
    match cli.command {
        Command::Config { features, pitch, delta, cmvn, vtln, output } => {
            let config = default_config(features, pitch.is_some(), delta, cmvn, vtln)?;
            match output {
                Some(path) => {
                    config.save(&path)?;
                    log.info(format!("configuration written to {}", path.display()));
                }
                None => print!("{}", config.to_yaml()?),
            }
        }
        Command::Extract { njobs, seed, format, config, utterances, output } => {
            let mut config = PipelineConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let utts = Utterances::load(&utterances)?;
            log.info(format!(
                "{} utterances from {} speakers",
                utts.len(),
                utts.speakers().len()
            ));
            log.info(format!("extracting {} features on {njobs} workers", config.features.kind()));
            let features = extract_features(&config, &utts, njobs)?;
            let format = guess_format(&output, format);
            features.save(&output, format)?;
            log.info(format!("features written to {}", output.display()));
        }
        Command::Eval { metric: Metric::Pitch { truth, estimate } } => {
            let eval = PitchEval::voiced(read_pitch_track(&truth)?, read_pitch_track(&estimate)?)?;
            println!("MAE {:.6}", mae(&eval)?);
            println!("GER {:.6}", ger(&eval)?);
        }
        Command::Eval { metric: Metric::Abx { features, triplets, format } } => {
            let coll = FeaturesCollection::load(&features, guess_format(&features, format))?;
            let text = std::fs::read_to_string(&triplets).map_err(|e| Error::io(&triplets, e))?;
            let names = parse_triplets(&text)?;
            let resolved = resolve_triplets(&coll, &names)?;
            log.info(format!("scoring {} triplets", resolved.len()));
            println!("ABX {:.6}", abx_score(&resolved)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
