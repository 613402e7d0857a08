use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use muquant::cli::{self, CommonOpts};

/// Self-supervised music representation learning: contrastive pre-training
/// over quantized targets, finetuning regimes, and representation analysis.
#[derive(Parser)]
#[command(name = "muquant", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run-config file (unknown keys rejected; flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    fn opts(&self) -> CommonOpts {
        CommonOpts { config: self.config.clone(), preset: self.preset.clone(), seed: self.seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tone corpus (pre-training WAVs + labeled clips).
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        pretrain_clips: usize,
        #[arg(long, default_value_t = 30.0)]
        pretrain_seconds: f64,
        #[arg(long, default_value_t = 128)]
        train_clips: usize,
        #[arg(long, default_value_t = 64)]
        valid_clips: usize,
        #[arg(long, default_value_t = 64)]
        test_clips: usize,
        #[arg(long, default_value_t = 2.0)]
        clip_seconds: f64,
        #[arg(long, default_value_t = 16)]
        pitches: usize,
        #[arg(long, default_value_t = 4)]
        timbres: usize,
    },
    /// Split a WAV directory into overlapped windows.
    Segment {
        /// Directory of 16-bit PCM mono WAV files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Manifest JSON to write.
        #[arg(long)]
        out: PathBuf,
        /// Window length in seconds.
        #[arg(long, default_value_t = 20.0)]
        window: f64,
        /// Hop between window starts in seconds.
        #[arg(long, default_value_t = 10.0)]
        hop: f64,
    },
    /// Contrastive pre-training over a segment manifest.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (checkpoints, log.jsonl, resolved config).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finetune a pre-trained checkpoint on labeled clips.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// labels.json manifest (clip paths resolve relative to it).
        #[arg(long)]
        data: PathBuf,
        /// Regime: fe (head only), ft1 (full), ft2 (context + head).
        #[arg(long)]
        mode: String,
        /// Task: pitch or instrument.
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the head's class count (defaults: 112 pitch / 11 instrument).
        #[arg(long)]
        classes: Option<usize>,
        /// Fixed clip duration in seconds for training and classification.
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
    /// Mean-pooled context features for one waveform.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Output JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one waveform with a finetuned checkpoint.
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Code/label co-occurrence matrices over a labeled dataset.
    AnalyzeCodes {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: String,
        /// Which split to analyze: train, valid, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the row-normalized matrix.
        #[arg(long, default_value_t = false)]
        normalized: bool,
    },
    /// Layer-wise CCA/PWCCA similarity profile against the encoder output.
    AnalyzeLayers {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Profile CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Middle window taken from each clip, in seconds.
        #[arg(long, default_value_t = 4.0)]
        segment_seconds: f64,
    },
}

fn run(cli: Cli) -> muquant::Result<()> {
    match cli.command {
        Command::GenSynthetic {
            common,
            out,
            pretrain_clips,
            pretrain_seconds,
            train_clips,
            valid_clips,
            test_clips,
            clip_seconds,
            pitches,
            timbres,
        } => cli::cmd_gen_synthetic(
            &out,
            common.seed.unwrap_or(7),
            pretrain_clips,
            pretrain_seconds,
            train_clips,
            valid_clips,
            test_clips,
            clip_seconds,
            pitches,
            timbres,
        ),
        Command::Segment { input, out, window, hop } => cli::cmd_segment(&input, &out, window, hop),
        Command::Pretrain { common, manifest, out, epochs, batch_size, resume } => {
            cli::cmd_pretrain(&manifest, &out, &common.opts(), epochs, batch_size, resume.as_deref())
        }
        Command::Finetune {
            common,
            ckpt,
            data,
            mode,
            task,
            out,
            epochs,
            batch_size,
            classes,
            clip_seconds,
        } => cli::cmd_finetune(
            &ckpt,
            &data,
            &mode,
            &task,
            &out,
            &common.opts(),
            epochs,
            batch_size,
            classes,
            clip_seconds,
        ),
        Command::Extract { ckpt, wav, out } => cli::cmd_extract(&ckpt, &wav, out.as_deref()),
        Command::Classify { ckpt, wav, out } => cli::cmd_classify(&ckpt, &wav, out.as_deref()),
        Command::AnalyzeCodes { ckpt, data, task, split, out, normalized } => {
            cli::cmd_analyze_codes(&ckpt, &data, &task, &split, &out, normalized)
        }
        Command::AnalyzeLayers { ckpt, manifest, out, segment_seconds } => {
            cli::cmd_analyze_layers(&ckpt, &manifest, &out, segment_seconds)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 (usage text) on unknown subcommands/flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
