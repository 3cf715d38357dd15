//! The end-to-end state-space model: an encoder `h` mapping a flattened
//! window to a latent state, a transition `f` advancing the latent one
//! step under the actuator state, and an emission `g` mapping the latent
//! to predicted sensors.
//!
//! Two training phases operate on it. Standard training minimizes a
//! three-term objective by mini-batch adaptive-moment descent: the
//! one-step prediction error, a reconstruction term (`g` applied
//! directly to the encoded window against the window's final sensor
//! values), and a latent-consistency term tying the transitioned latent
//! to the encoding of the one-step-shifted window. The last term keeps
//! the latent dynamics trackable by the downstream Bayesian filter. Meta
//! fine-tuning splits the few evolving normals into contiguous support
//! sets and applies one plain gradient step of the prediction loss per
//! support set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, sgd_step, AdamState, DenseNet, Trace};
use crate::rng::{derive_seed, Rng};
use crate::timeseries::WindowPair;

/// Which training phase produced the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Carried over from the previous task (or fresh initialization).
    Prior,
    /// After the standard training phase.
    Standard,
    /// After the meta fine-tuning phase.
    Meta,
}

/// Training hyperparameters for both phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Meta-phase step size; defaults to the base learning rate.
    pub meta_lr: f64,
    /// Number of support sets in the meta phase.
    pub episodes: usize,
    pub batch_size: usize,
    /// Weight of the reconstruction term in the standard-phase loss.
    pub recon_weight: f64,
    /// Weight of the latent-consistency term in the standard-phase loss.
    pub consist_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 1e-5,
            meta_lr: 1e-5,
            episodes: 10,
            batch_size: 8,
            recon_weight: 1.0,
            consist_weight: 1.0,
            seed: 0,
        }
    }
}

/// The three sub-networks plus dimension metadata and the stage tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmModel {
    pub window: usize,
    pub num_sensors: usize,
    pub num_actuators: usize,
    pub latent_dim: usize,
    pub stage: Stage,
    encoder: DenseNet,
    transition: DenseNet,
    emission: DenseNet,
}

/// Reusable per-pair forward/backward scratch.
#[derive(Debug, Clone)]
pub struct Workspace {
    trace_h: Trace,
    trace_h_next: Trace,
    trace_f: Trace,
    trace_g_pred: Trace,
    trace_g_recon: Trace,
    f_input: Vec<f64>,
    d_out: Vec<f64>,
    d_latent_next: Vec<f64>,
    d_f_input: Vec<f64>,
    d_latent: Vec<f64>,
    d_latent_recon: Vec<f64>,
    d_consist: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &SsmModel) -> Self {
        Workspace {
            trace_h: Trace::new(&model.encoder),
            trace_h_next: Trace::new(&model.encoder),
            trace_f: Trace::new(&model.transition),
            trace_g_pred: Trace::new(&model.emission),
            trace_g_recon: Trace::new(&model.emission),
            f_input: vec![0.0; model.latent_dim + model.num_actuators],
            d_out: vec![0.0; model.num_sensors],
            d_latent_next: Vec::new(),
            d_f_input: Vec::new(),
            d_latent: Vec::new(),
            d_latent_recon: Vec::new(),
            d_consist: vec![0.0; model.latent_dim],
        }
    }
}

/// Standard-phase result: the trained model and the per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SsmModel,
    pub epoch_losses: Vec<f64>,
}

/// Meta-phase result: the tuned model, per-episode losses, and warnings.
#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub model: SsmModel,
    pub episode_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SsmModel {
    /// Fresh model with Glorot-initialized sub-networks
    /// (`window*(m+k) -> hidden -> d_z`, `d_z+k -> hidden -> d_z`,
    /// `d_z -> hidden -> m`).
    pub fn new(
        window: usize,
        num_sensors: usize,
        num_actuators: usize,
        latent_dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if window == 0 || num_sensors == 0 || latent_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "window, sensor count, latent and hidden sizes must be positive".into(),
            ));
        }
        let mut rng_h = Rng::new(derive_seed(seed, "encoder-init", 0));
        let mut rng_f = Rng::new(derive_seed(seed, "transition-init", 0));
        let mut rng_g = Rng::new(derive_seed(seed, "emission-init", 0));
        Ok(SsmModel {
            window,
            num_sensors,
            num_actuators,
            latent_dim,
            stage: Stage::Prior,
            encoder: DenseNet::new_glorot(
                &[window * (num_sensors + num_actuators), hidden, latent_dim],
                &mut rng_h,
            )?,
            transition: DenseNet::new_glorot(
                &[latent_dim + num_actuators, hidden, latent_dim],
                &mut rng_f,
            )?,
            emission: DenseNet::new_glorot(&[latent_dim, hidden, num_sensors], &mut rng_g)?,
        })
    }

    /// Assemble a model from explicit sub-networks (dimension chain checked).
    pub fn from_nets(
        window: usize,
        num_sensors: usize,
        num_actuators: usize,
        encoder: DenseNet,
        transition: DenseNet,
        emission: DenseNet,
    ) -> Result<Self> {
        let latent_dim = encoder.output_len();
        let checks = [
            (encoder.input_len(), window * (num_sensors + num_actuators), "encoder input"),
            (transition.input_len(), latent_dim + num_actuators, "transition input"),
            (transition.output_len(), latent_dim, "transition output"),
            (emission.input_len(), latent_dim, "emission input"),
            (emission.output_len(), num_sensors, "emission output"),
        ];
        for (got, expected, what) in checks {
            if got != expected {
                return Err(Error::ShapeMismatch {
                    context: format!("{what} dimension"),
                    expected,
                    got,
                });
            }
        }
        Ok(SsmModel {
            window,
            num_sensors,
            num_actuators,
            latent_dim,
            stage: Stage::Prior,
            encoder,
            transition,
            emission,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn transition(&self) -> &DenseNet {
        &self.transition
    }

    pub fn emission(&self) -> &DenseNet {
        &self.emission
    }

    /// All parameters of the three networks, concatenated encoder/transition/emission.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.encoder.num_params() + self.transition.num_params() + self.emission.num_params());
        out.extend_from_slice(self.encoder.params());
        out.extend_from_slice(self.transition.params());
        out.extend_from_slice(self.emission.params());
        out
    }

    /// Overwrite all parameters from a flat buffer laid out as
    /// `params_flat` produces.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let (he, tr, em) = (
            self.encoder.num_params(),
            self.transition.num_params(),
            self.emission.num_params(),
        );
        if flat.len() != he + tr + em {
            return Err(Error::ShapeMismatch {
                context: "flat parameter buffer for the model".into(),
                expected: he + tr + em,
                got: flat.len(),
            });
        }
        self.encoder.params_mut().copy_from_slice(&flat[..he]);
        self.transition.params_mut().copy_from_slice(&flat[he..he + tr]);
        self.emission.params_mut().copy_from_slice(&flat[he + tr..]);
        Ok(())
    }

    /// Encode a window into its latent state.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(x)
    }

    /// Advance a latent state one step under an actuator state.
    pub fn transit(&self, latent: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(latent.len() + u.len());
        input.extend_from_slice(latent);
        input.extend_from_slice(u);
        self.transition.forward(&input)
    }

    /// Emit predicted sensors from a latent state.
    pub fn emit(&self, latent: &[f64]) -> Result<Vec<f64>> {
        self.emission.forward(latent)
    }

    fn check_pair(&self, pair: &WindowPair) -> Result<()> {
        if pair.x.len() != self.encoder.input_len() {
            return Err(Error::ShapeMismatch {
                context: "window length".into(),
                expected: self.encoder.input_len(),
                got: pair.x.len(),
            });
        }
        if pair.u.len() != self.num_actuators {
            return Err(Error::ShapeMismatch {
                context: "actuator vector".into(),
                expected: self.num_actuators,
                got: pair.u.len(),
            });
        }
        if pair.y.len() != self.num_sensors {
            return Err(Error::ShapeMismatch {
                context: "target vector".into(),
                expected: self.num_sensors,
                got: pair.y.len(),
            });
        }
        Ok(())
    }

    /// One-step-ahead sensor prediction `g(f(h(x) ++ u))`.
    pub fn predict(&self, pair: &WindowPair) -> Result<Vec<f64>> {
        self.check_pair(pair)?;
        let latent = self.encode(&pair.x)?;
        let next = self.transit(&latent, &pair.u)?;
        self.emit(&next)
    }
}

fn mse_and_dout(output: &[f64], target: &[f64], weight: f64, d_out: &mut [f64]) -> f64 {
    let n = output.len() as f64;
    let mut loss = 0.0;
    for ((d, o), t) in d_out.iter_mut().zip(output.iter()).zip(target.iter()) {
        let diff = o - t;
        loss += diff * diff;
        *d = weight * 2.0 * diff / n;
    }
    weight * loss / n
}

/// Loss and gradients of one pair under the standard-phase objective:
/// prediction error plus `recon_weight` times the reconstruction error
/// plus `consist_weight` times the latent-consistency error against the
/// shifted window's encoding.
///
/// Gradients accumulate into the three flat buffers, which must match the
/// corresponding sub-network layouts.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss_grads(
    model: &SsmModel,
    pair: &WindowPair,
    recon_weight: f64,
    consist_weight: f64,
    ws: &mut Workspace,
    grads_h: &mut [f64],
    grads_f: &mut [f64],
    grads_g: &mut [f64],
) -> Result<f64> {
    model.check_pair(pair)?;
    let Workspace {
        trace_h,
        trace_h_next,
        trace_f,
        trace_g_pred,
        trace_g_recon,
        f_input,
        d_out,
        d_latent_next,
        d_f_input,
        d_latent,
        d_latent_recon,
        d_consist,
    } = ws;
    // forward: h, then f on (z ++ u), then g on both paths
    model.encoder.forward_trace(&pair.x, trace_h)?;
    let latent_len = model.latent_dim;
    f_input[..latent_len].copy_from_slice(trace_h.output());
    f_input[latent_len..].copy_from_slice(&pair.u);
    model.transition.forward_trace(f_input, trace_f)?;
    model.emission.forward_trace(trace_f.output(), trace_g_pred)?;

    let mut loss = mse_and_dout(trace_g_pred.output(), &pair.y, 1.0, d_out);
    model
        .emission
        .backward_into(trace_g_pred, d_out, grads_g, Some(&mut *d_latent_next));

    let mut run_consist = false;
    if consist_weight != 0.0 {
        // tie the transitioned latent to the shifted window's encoding
        model
            .encoder
            .forward_trace(&pair.next_window_zoh(), trace_h_next)?;
        run_consist = true;
        let scale = 1.0 / latent_len as f64;
        for ((dc, dl), (zp, zn)) in d_consist
            .iter_mut()
            .zip(d_latent_next.iter_mut())
            .zip(trace_f.output().iter().zip(trace_h_next.output().iter()))
        {
            let diff = zp - zn;
            loss += consist_weight * diff * diff * scale;
            let d = consist_weight * 2.0 * diff * scale;
            *dl += d;
            *dc = -d;
        }
    }
    model
        .transition
        .backward_into(trace_f, d_latent_next, grads_f, Some(&mut *d_f_input));
    d_latent.clear();
    d_latent.extend_from_slice(&d_f_input[..latent_len]);

    if recon_weight != 0.0 {
        model.emission.forward_trace(trace_h.output(), trace_g_recon)?;
        let recon_target = pair.last_step_sensors();
        loss += mse_and_dout(trace_g_recon.output(), recon_target, recon_weight, d_out);
        model
            .emission
            .backward_into(trace_g_recon, d_out, grads_g, Some(&mut *d_latent_recon));
        for (acc, d) in d_latent.iter_mut().zip(d_latent_recon.iter()) {
            *acc += d;
        }
    }

    model.encoder.backward_into(trace_h, d_latent, grads_h, None);
    if run_consist {
        model.encoder.backward_into(trace_h_next, d_consist, grads_h, None);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("state-space model pair loss".into()));
    }
    Ok(loss)
}

/// Loss of one pair without gradients (used by finite-difference oracles).
pub fn pair_loss(
    model: &SsmModel,
    pair: &WindowPair,
    recon_weight: f64,
    consist_weight: f64,
) -> Result<f64> {
    let latent = model.encode(&pair.x)?;
    let advanced = model.transit(&latent, &pair.u)?;
    let pred = model.emit(&advanced)?;
    let n = pred.len() as f64;
    let mut loss = pred
        .iter()
        .zip(pair.y.iter())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n;
    if recon_weight != 0.0 {
        let recon = model.emit(&latent)?;
        let target = pair.last_step_sensors();
        loss += recon_weight
            * recon
                .iter()
                .zip(target.iter())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
            / n;
    }
    if consist_weight != 0.0 {
        let next_latent = model.encode(&pair.next_window_zoh())?;
        loss += consist_weight
            * advanced
                .iter()
                .zip(next_latent.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
            / advanced.len() as f64;
    }
    Ok(loss)
}

/// Standard training phase over the merged set.
pub fn train_standard(
    model: &SsmModel,
    merge: &[WindowPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if merge.is_empty() {
        return Err(Error::EmptyInput("standard training set is empty".into()));
    }
    let mut model = model.clone();
    model.check_pair(&merge[0])?;
    let mut ws = Workspace::new(&model);
    let mut grads_h = model.encoder.zero_grads();
    let mut grads_f = model.transition.zero_grads();
    let mut grads_g = model.emission.zero_grads();
    let mut adam_h = AdamState::new(cfg.lr, grads_h.len());
    let mut adam_f = AdamState::new(cfg.lr, grads_f.len());
    let mut adam_g = AdamState::new(cfg.lr, grads_g.len());
    let mut order: Vec<usize> = (0..merge.len()).collect();
    let mut rng = Rng::new(derive_seed(cfg.seed, "standard-shuffle", 0));
    let batch_size = cfg.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            grads_h.fill(0.0);
            grads_f.fill(0.0);
            grads_g.fill(0.0);
            for &i in batch {
                epoch_loss += pair_loss_grads(
                    &model,
                    &merge[i],
                    cfg.recon_weight,
                    cfg.consist_weight,
                    &mut ws,
                    &mut grads_h,
                    &mut grads_f,
                    &mut grads_g,
                )
                .map_err(|e| match e {
                    Error::NonFinite(_) => {
                        Error::NonFinite(format!("standard training diverged at epoch {epoch}"))
                    }
                    other => other,
                })?;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads_h.iter_mut() {
                *g *= scale;
            }
            for g in grads_f.iter_mut() {
                *g *= scale;
            }
            for g in grads_g.iter_mut() {
                *g *= scale;
            }
            adam_step(&mut adam_h, model.encoder.params_mut(), &grads_h);
            adam_step(&mut adam_f, model.transition.params_mut(), &grads_f);
            adam_step(&mut adam_g, model.emission.params_mut(), &grads_g);
        }
        epoch_losses.push(epoch_loss / merge.len() as f64);
    }
    model.stage = Stage::Standard;
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Split a slice into `chunks` contiguous near-equal runs (first `n % chunks`
/// runs are one longer).
fn contiguous_chunks<T>(items: &[T], chunks: usize) -> Vec<&[T]> {
    let n = items.len();
    let base = n / chunks;
    let extra = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

/// Meta fine-tuning phase: one plain gradient step of the prediction loss
/// per contiguous support set.
pub fn meta_finetune(
    model: &SsmModel,
    d_meta: &[WindowPair],
    cfg: &TrainConfig,
) -> Result<MetaOutcome> {
    if d_meta.is_empty() {
        return Err(Error::EmptyInput("meta fine-tuning set is empty".into()));
    }
    let mut model = model.clone();
    model.check_pair(&d_meta[0])?;
    let mut warnings = Vec::new();
    let mut episodes = cfg.episodes;
    if episodes > d_meta.len() {
        warnings.push(format!(
            "episodes reduced from {} to {} to match the meta set size",
            episodes,
            d_meta.len()
        ));
        episodes = d_meta.len();
    }
    let mut episode_losses = Vec::new();
    if episodes == 0 || cfg.meta_lr == 0.0 {
        // zero-rate / zero-episode degenerate case: parameters untouched
        model.stage = Stage::Meta;
        return Ok(MetaOutcome {
            model,
            episode_losses,
            warnings,
        });
    }
    let mut ws = Workspace::new(&model);
    let mut grads_h = model.encoder.zero_grads();
    let mut grads_f = model.transition.zero_grads();
    let mut grads_g = model.emission.zero_grads();
    for support in contiguous_chunks(d_meta, episodes) {
        grads_h.fill(0.0);
        grads_f.fill(0.0);
        grads_g.fill(0.0);
        let mut loss = 0.0;
        for pair in support {
            loss += pair_loss_grads(
                &model, pair, 0.0, 0.0, &mut ws, &mut grads_h, &mut grads_f, &mut grads_g,
            )?;
        }
        let scale = 1.0 / support.len() as f64;
        for g in grads_h.iter_mut() {
            *g *= scale;
        }
        for g in grads_f.iter_mut() {
            *g *= scale;
        }
        for g in grads_g.iter_mut() {
            *g *= scale;
        }
        sgd_step(model.encoder.params_mut(), &grads_h, cfg.meta_lr);
        sgd_step(model.transition.params_mut(), &grads_f, cfg.meta_lr);
        sgd_step(model.emission.params_mut(), &grads_g, cfg.meta_lr);
        episode_losses.push(loss * scale);
    }
    model.stage = Stage::Meta;
    Ok(MetaOutcome {
        model,
        episode_losses,
        warnings,
    })
}

/// Versioned checkpoint wrapper around a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: SsmModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Write a model checkpoint as versioned JSON.
pub fn save_checkpoint(model: &SsmModel, path: &std::path::Path) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

/// Load a model checkpoint, rejecting unknown versions.
pub fn load_checkpoint(path: &std::path::Path) -> Result<SsmModel> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint version {}",
            ck.version
        )));
    }
    Ok(ck.model)
}
