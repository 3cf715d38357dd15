//! JSON configuration file mirroring the library configs, with every
//! field defaulted to its published value where one exists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cpsdetect::mixup::MixupConfig;
use cpsdetect::pipeline::{Mode, RunConfig};
use cpsdetect::scoring::ScorerKind;
use cpsdetect::simulator::SimConfig;
use cpsdetect::ssm::TrainConfig;
use cpsdetect::threshold::ThresholdConfig;
use cpsdetect::{Error, Result};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "CPSDETECT_CONFIG";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub mode: Mode,
    pub window: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub val_frac: f64,
    pub scorer: ScorerKind,
    pub task_train_len: usize,
    pub continue_on_task_error: bool,
    pub train: TrainConfig,
    pub mixup: MixupConfig,
    pub threshold: ThresholdConfig,
    pub sim: SimConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        CliConfig {
            mode: run.mode,
            window: run.window,
            latent_dim: run.latent_dim,
            hidden: run.hidden,
            seed: run.seed,
            val_frac: run.val_frac,
            scorer: run.scorer,
            task_train_len: run.task_train_len,
            continue_on_task_error: run.continue_on_task_error,
            train: run.train,
            mixup: run.mixup,
            threshold: run.threshold,
            sim: SimConfig::default(),
        }
    }
}

impl CliConfig {
    /// Load an explicit path, else the `CPSDETECT_CONFIG` file, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<CliConfig> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(std::path::PathBuf::from),
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| {
                    Error::InvalidArgument(format!("cannot read config {}: {e}", p.display()))
                })?;
                Ok(serde_json::from_str(&text)?)
            }
            None => Ok(CliConfig::default()),
        }
    }

    pub fn to_run_config(&self) -> RunConfig {
        RunConfig {
            mode: self.mode,
            window: self.window,
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            seed: self.seed,
            val_frac: self.val_frac,
            scorer: self.scorer,
            task_train_len: self.task_train_len,
            continue_on_task_error: self.continue_on_task_error,
            train: self.train.clone(),
            mixup: self.mixup.clone(),
            threshold: self.threshold.clone(),
        }
    }
}

/// Config-key reference printed with `--help`.
pub const CONFIG_HELP: &str = "\
Configuration file keys (JSON; flags override; unknown keys rejected):
  mode                   static | it | iadcps          default: iadcps
  window                 sliding-window length          default: 31
  latent_dim             latent state size              default: 8
  hidden                 hidden layer width             default: 64
  seed                   master RNG seed                default: 0
  val_frac               pre-training validation tail   default: 0.1
  scorer                 filter | residual              default: filter
  task_train_len         train points per task file     default: 1000
  continue_on_task_error skip failing tasks             default: false
  train.epochs           standard-training epochs       default: 100
  train.lr               learning rate                  default: 0.00001
  train.meta_lr          meta step size                 default: 0.00001
  train.episodes         meta support sets              default: 10
  train.batch_size       mini-batch size                default: 8
  train.recon_weight     reconstruction loss weight     default: 1.0
  train.consist_weight   latent-consistency loss weight default: 1.0
  train.seed             training shuffle seed          default: 0
  mixup.lambda           historical mixing rate         default: 0.2
  mixup.mix_window       moving-average length (even)   default: 2
  mixup.pairing_seed     partner-draw seed              default: 0
  threshold.query_points density grid size Z            default: 1000
  threshold.delta        low-density precision          default: 0.05
  threshold.memory       score memory capacity          default: 10000
  sim.t_len              simulated stream length        default: 10000
  sim.amp                sine amplitude                 default: 1.0
  sim.freq               frequency divisor              default: 1.0
  sim.u0                 initial actuator state         default: 3.0
  sim.meas_noise_std     measurement noise              default: 0.2
  sim.proc_noise_std     process noise                  default: 0.2
  sim.anomaly_noise_std  anomaly-block noise            default: 0.6
  sim.seed               simulation seed                default: 0
  sim.inject_anomalies   label anomaly blocks           default: false

The CPSDETECT_CONFIG environment variable names a default config file.";
