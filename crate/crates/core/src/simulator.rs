//! Sine-wave CPS stream generator, anomaly injection, and the
//! remove/upgrade/mix evolution transforms.
//!
//! The generated plant has one actuator `u` that flips between its
//! initial value and `9 - u` every 30 ticks, a hidden state
//! `z = amp * sin(t / freq * u)` plus measurement noise, and an observed
//! sensor `x = 2 * z` plus process noise. When anomaly injection is on,
//! the first 100 offsets of every 1000-tick block draw their measurement
//! noise from the widened anomaly distribution and are labeled anomalous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::timeseries::{Label, TimePoint, TimeSeries};

const BLOCK_LEN: usize = 1000;
const ANOMALY_LEN: usize = 100;
const ACTUATOR_FLIP_PERIOD: i64 = 30;

/// Parameters of the simulated plant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Number of ticks to generate.
    pub t_len: usize,
    pub amp: f64,
    /// Frequency divisor inside the sine argument.
    pub freq: f64,
    /// Initial actuator state.
    pub u0: f64,
    pub meas_noise_std: f64,
    pub proc_noise_std: f64,
    /// Measurement-noise level inside injected anomaly blocks.
    pub anomaly_noise_std: f64,
    pub seed: u64,
    pub inject_anomalies: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_len: 10_000,
            amp: 1.0,
            freq: 1.0,
            u0: 3.0,
            meas_noise_std: 0.2,
            proc_noise_std: 0.2,
            anomaly_noise_std: 0.6,
            seed: 0,
            inject_anomalies: false,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.t_len == 0 {
            return Err(Error::InvalidArgument("t_len must be positive".into()));
        }
        if self.meas_noise_std < 0.0 || self.proc_noise_std < 0.0 || self.anomaly_noise_std < 0.0 {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Evolution transform selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolveMode {
    /// Zero-fill the selected channels (dimension preserved).
    Remove,
    /// Scale each selected channel by a factor drawn from `[0.95, 1.05]`.
    Upgrade,
    /// Remove then upgrade, with independent channel draws.
    Mix,
}

impl std::str::FromStr for EvolveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<EvolveMode> {
        match s {
            "remove" => Ok(EvolveMode::Remove),
            "upgrade" => Ok(EvolveMode::Upgrade),
            "mix" => Ok(EvolveMode::Mix),
            other => Err(Error::InvalidArgument(format!(
                "unknown evolution mode `{other}` (expected remove, upgrade, or mix)"
            ))),
        }
    }
}

/// An evolution event applied to a series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveSpec {
    pub mode: EvolveMode,
    /// How many channels the event touches.
    pub n_devices: usize,
    pub seed: u64,
}

/// Generate a stream under the plant dynamics.
///
/// Noise draw order per tick is fixed (measurement first, then process)
/// so outputs are reproducible bit-for-bit under a seed.
pub fn simulate(cfg: &SimConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut u = cfg.u0;
    let mut points = Vec::with_capacity(cfg.t_len);
    for step in 0..cfg.t_len {
        let t = (step + 1) as i64;
        if t % ACTUATOR_FLIP_PERIOD == 0 {
            u = 9.0 - u;
        }
        let anomalous = cfg.inject_anomalies && step % BLOCK_LEN < ANOMALY_LEN;
        let meas_std = if anomalous {
            cfg.anomaly_noise_std
        } else {
            cfg.meas_noise_std
        };
        let z = cfg.amp * (t as f64 / cfg.freq * u).sin() + rng.normal_scaled(meas_std);
        let x = 2.0 * z + rng.normal_scaled(cfg.proc_noise_std);
        points.push(TimePoint {
            t,
            sensors: vec![x],
            actuators: vec![u],
            label: if anomalous { Label::Anomalous } else { Label::Normal },
        });
    }
    TimeSeries::new(points)
}

/// Apply an evolution transform; labels are never touched.
pub fn evolve(series: &TimeSeries, spec: &EvolveSpec) -> Result<TimeSeries> {
    let channels = series.num_channels();
    if spec.n_devices == 0 {
        return Err(Error::InvalidArgument("n_devices must be at least 1".into()));
    }
    if spec.n_devices > channels {
        return Err(Error::TooFew {
            context: "channels available for evolution".into(),
            needed: spec.n_devices,
            got: channels,
        });
    }
    let mut rng = Rng::new(spec.seed);
    let mut scale = vec![1.0; channels];
    let mut zeroed = vec![false; channels];
    match spec.mode {
        EvolveMode::Remove => {
            for ch in rng.choose_indices(channels, spec.n_devices) {
                zeroed[ch] = true;
            }
        }
        EvolveMode::Upgrade => {
            for ch in rng.choose_indices(channels, spec.n_devices) {
                scale[ch] = rng.uniform(0.95, 1.05);
            }
        }
        EvolveMode::Mix => {
            for ch in rng.choose_indices(channels, spec.n_devices) {
                zeroed[ch] = true;
            }
            for ch in rng.choose_indices(channels, spec.n_devices) {
                scale[ch] = rng.uniform(0.95, 1.05);
            }
        }
    }
    let m = series.num_sensors();
    let apply = |v: f64, ch: usize| {
        if zeroed[ch] {
            0.0
        } else if scale[ch] != 1.0 {
            v * scale[ch]
        } else {
            v
        }
    };
    let points = series
        .points()
        .iter()
        .map(|p| TimePoint {
            t: p.t,
            sensors: p
                .sensors
                .iter()
                .enumerate()
                .map(|(i, &v)| apply(v, i))
                .collect(),
            actuators: p
                .actuators
                .iter()
                .enumerate()
                .map(|(i, &v)| apply(v, m + i))
                .collect(),
            label: p.label,
        })
        .collect();
    TimeSeries::new(points)
}

/// Build the incremental task schedule: task `i` uses `(amps[i], freqs[i])`,
/// an anomaly-free train split, and a test split with injected anomalies.
pub fn make_tasks(
    base: &SimConfig,
    amps: &[f64],
    freqs: &[f64],
    train_len: usize,
    test_len: usize,
) -> Result<Vec<(TimeSeries, TimeSeries)>> {
    if amps.len() != freqs.len() {
        return Err(Error::ShapeMismatch {
            context: "amps vs freqs".into(),
            expected: amps.len(),
            got: freqs.len(),
        });
    }
    let mut tasks = Vec::with_capacity(amps.len());
    for (i, (&amp, &freq)) in amps.iter().zip(freqs.iter()).enumerate() {
        let train = simulate(&SimConfig {
            t_len: train_len,
            amp,
            freq,
            seed: derive_seed(base.seed, "task-train", i as u64),
            inject_anomalies: false,
            ..base.clone()
        })?;
        let test = simulate(&SimConfig {
            t_len: test_len,
            amp,
            freq,
            seed: derive_seed(base.seed, "task-test", i as u64),
            inject_anomalies: true,
            ..base.clone()
        })?;
        tasks.push((train, test));
    }
    Ok(tasks)
}
