use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bicam",
    version,
    about = "Signed ViT attribution, PNR adversarial detection and attribution evaluation"
)]
pub struct Cli {
    /// Run configuration file (flat `key = value`); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub run: RunFlags,

    #[command(subcommand)]
    pub command: Command,
}

/// One flag per run-config key. Values are parsed exactly like the config
/// file, so both spellings accept the same syntax.
#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// Weight file (BICAMW1).
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<String>,
    /// Number of final layers aggregated.
    #[arg(long, global = true, value_name = "N")]
    pub layer_window: Option<String>,
    /// Attribution softmax temperature.
    #[arg(long, global = true, value_name = "T")]
    pub temperature: Option<String>,
    /// Class to explain; defaults to the model's prediction.
    #[arg(long, global = true, value_name = "C")]
    pub class: Option<String>,
    /// bilinear | nearest
    #[arg(long, global = true, value_name = "MODE")]
    pub upsample: Option<String>,
    /// pgd | mifgsm
    #[arg(long, global = true, value_name = "METHOD")]
    pub attack: Option<String>,
    /// L-infinity budget.
    #[arg(long, global = true, value_name = "EPS")]
    pub epsilon: Option<String>,
    #[arg(long, global = true, value_name = "STEP")]
    pub step_size: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub num_steps: Option<String>,
    #[arg(long, global = true, value_name = "MU")]
    pub momentum_decay: Option<String>,
    /// true | false
    #[arg(long, global = true, value_name = "BOOL")]
    pub random_start: Option<String>,
    /// Stabiliser in the PNR denominator.
    #[arg(long, global = true, value_name = "EPS")]
    pub pnr_epsilon: Option<String>,
    /// Which side of the threshold is flagged: higher | lower
    #[arg(long, global = true, value_name = "DIR")]
    pub direction: Option<String>,
    /// Random-order control runs per image.
    #[arg(long, global = true, value_name = "N")]
    pub random_seeds: Option<String>,
    /// Root seed; per-item seeds are split from it.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<String>,
    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<String>,
    /// Report and skip items that fail instead of stopping.
    #[arg(long, global = true)]
    pub skip_errors: bool,
}

impl RunFlags {
    /// `(config key, value)` for every flag given on the command line.
    pub fn overrides(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("model", &self.model),
            ("layer_window", &self.layer_window),
            ("temperature", &self.temperature),
            ("class", &self.class),
            ("upsample", &self.upsample),
            ("attack", &self.attack),
            ("epsilon", &self.epsilon),
            ("step_size", &self.step_size),
            ("num_steps", &self.num_steps),
            ("momentum_decay", &self.momentum_decay),
            ("random_start", &self.random_start),
            ("pnr_epsilon", &self.pnr_epsilon),
            ("direction", &self.direction),
            ("random_seeds", &self.random_seeds),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
        ];
        let mut out: Vec<_> = fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect();
        if self.skip_errors {
            out.push(("skip_errors", "true"));
        }
        out
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialised model and print its checksum.
    InitModel {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        image_size: usize,
        #[arg(long, default_value_t = 4)]
        patch_size: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 16)]
        embed_dim: usize,
        #[arg(long, default_value_t = 32)]
        ffn_dim: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long)]
        distillation_token: bool,
    },
    /// Train the two-class toy model on synthetic blob images.
    TrainToy {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Optimiser steps (default 300).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write blob images, their masks and labels for the toy model.
    ToyData {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Signed attribution maps for a PPM image or a directory of them.
    Attribute { input: PathBuf },
    /// Attention-rollout maps for a PPM image or a directory of them.
    Rollout { input: PathBuf },
    /// Adversarial copies of every image in a directory.
    Attack {
        input_dir: PathBuf,
        /// CSV `id,label` with true labels; defaults to clean predictions.
        #[arg(long, value_name = "CSV")]
        labels: Option<PathBuf>,
    },
    /// PNR records and detection statistics for clean/adversarial images.
    PnrDetect {
        #[arg(
            long,
            value_name = "DIR",
            requires = "adv_dir",
            conflicts_with = "records"
        )]
        clean_dir: Option<PathBuf>,
        #[arg(long, value_name = "DIR", requires = "clean_dir")]
        adv_dir: Option<PathBuf>,
        /// Score an existing `id,label,pnr` file instead of images.
        #[arg(long, value_name = "CSV", required_unless_present = "clean_dir")]
        records: Option<PathBuf>,
    },
    /// Localization metrics of thresholded maps against PGM masks.
    EvalLoc {
        image_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        mask_dir: PathBuf,
        /// Non-target masks for the negative channel.
        #[arg(long, value_name = "DIR")]
        nontarget_dir: Option<PathBuf>,
    },
    /// Patch-removal faithfulness against random-order controls.
    EvalFaith { image_dir: PathBuf },
}
