use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vtdl_core::augment::augment_triplet;
use vtdl_core::config::SEED_ENV;
use vtdl_core::evaluation::{
    appearance_control, find_video, generate_synthetic, linear_probe, load_dataset, load_pretrain_videos, one_hot_probe,
    save_dataset, FrozenEncoder,
};
use vtdl_core::sampling::sample_triplet;
use vtdl_core::selfcheck::{run_selfcheck, Fault};
use vtdl_core::tensor::save_clip_pngs;
use vtdl_core::training::{load_checkpoint, run_pretrain, PretrainOptions};
use vtdl_core::{seeded_rng, Config, Error, ErrorKind};

#[derive(Parser)]
#[command(name = "vtdl", version, about = "Temporal-discriminative self-supervised video pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic moving-square dataset.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain an encoder on a directory of frame folders.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint, using the configuration stored in it.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Linear probe of a checkpoint's frozen encoder; prints JSON.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Probe on motion-free clips (first frame repeated).
        #[arg(long)]
        control: bool,
        #[arg(long, hide = true)]
        one_hot_features: bool,
    },
    /// Sample one augmented triplet and write its frames and record.
    PreviewTriplet {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariance suite.
    Selfcheck {
        /// Inject a known defect: cascade-order, momentum-swap or fifo-reverse.
        #[arg(long)]
        fault: Option<String>,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds and the VTDL_SEED variable.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> vtdl_core::Result<Config> {
        let cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let seed = match self.seed {
            Some(seed) => Some(seed),
            None => match std::env::var(SEED_ENV) {
                Ok(text) => Some(text.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={text:?} is not an integer")))?),
                Err(_) => None,
            },
        };
        let cfg = match seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Internal => 1,
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Data => 4,
        ErrorKind::Checkpoint => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(command: Command) -> vtdl_core::Result<ExitCode> {
    match command {
        Command::Synth { config, out } => {
            let cfg = config.load()?;
            let data = generate_synthetic(&cfg.synth)?;
            save_dataset(&data, &out)?;
            eprintln!("wrote {} train and {} test videos to {}", data.train.len(), data.test.len(), out.display());
        }
        Command::Pretrain { config, data, out, resume } => {
            let cfg = match &resume {
                Some(dir) => load_checkpoint(dir)?.0,
                None => config.load()?,
            };
            let videos = load_pretrain_videos(&data)?;
            let opts = PretrainOptions { resume, ..PretrainOptions::default() };
            let ckpt = run_pretrain(&videos, &cfg, &out, &opts)?;
            println!("{}", ckpt.display());
        }
        Command::Probe { checkpoint, data, control, one_hot_features } => {
            let (cfg, encoder) = FrozenEncoder::load(&checkpoint)?;
            let data = load_dataset(&data)?;
            let result = if one_hot_features {
                one_hot_probe(&data, &cfg)?
            } else if control {
                appearance_control(&encoder, &data, &cfg)?
            } else {
                linear_probe(&encoder, &data, &cfg)?
            };
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::PreviewTriplet { config, data, video, out } => {
            let cfg = config.load()?;
            preview_triplet(&cfg, &data, &video, &out)?;
        }
        Command::Selfcheck { fault } => {
            let fault = fault.map(|f| f.parse::<Fault>()).transpose()?;
            let report = run_selfcheck(fault);
            print!("{report}");
            if !report.all_passed() {
                let names: Vec<&str> = report.failed().map(|r| r.name).collect();
                eprintln!("failed: {}", names.join(", "));
                return Ok(ExitCode::from(1));
            }
        }
        Command::DefaultConfig => println!("{}", Config::default().to_json()),
    }
    Ok(ExitCode::SUCCESS)
}

/// The donor for external mixing is the next video directory in name order.
fn donor_id(data: &Path, video: &str) -> vtdl_core::Result<Option<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(data).map_err(|e| Error::io(data, e))? {
        let entry = entry.map_err(|e| Error::io(data, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    let Some(pos) = ids.iter().position(|id| id == video) else { return Ok(None) };
    Ok((ids.len() > 1).then(|| ids[(pos + 1) % ids.len()].clone()))
}

fn preview_triplet(cfg: &Config, data: &Path, video: &str, out: &Path) -> vtdl_core::Result<()> {
    let source = find_video(data, video)?;
    let donor = match donor_id(data, video)? {
        Some(id) if cfg.tca.enable_external_mix => Some(find_video(data, &id)?),
        _ => None,
    };
    let mut rng = seeded_rng(cfg.train.seed);
    let triplet = sample_triplet(&source, &cfg.sampling, &mut rng)?;
    let augmented = augment_triplet(&triplet, donor.as_ref(), &cfg.basic_aug, &cfg.tca, &mut rng)?;
    for (name, clip) in [("anchor", &augmented.anchor), ("positive", &augmented.positive), ("negative", &augmented.negative)] {
        let dir = out.join(name);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        save_clip_pngs(clip, &dir)?;
    }
    let record = serde_json::json!({
        "video": video,
        "t_a": augmented.t_a,
        "t_p": augmented.t_p,
        "t_n": augmented.t_n,
        "anchor": { "crop": augmented.anchor.crop_box, "transforms": augmented.record.anchor },
        "positive": { "crop": augmented.positive.crop_box, "transforms": augmented.record.positive },
        "negative": { "crop": augmented.negative.crop_box, "transforms": augmented.record.negative },
    });
    let path = out.join("augmentation_record.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote triplet of {} to {}", video, out.display());
    Ok(())
}
