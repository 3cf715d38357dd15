//! Temporal mixup: aligning retained historical windows with the few
//! evolving normals.
//!
//! Each time step of a historical window is combined with the moving
//! average of the evolving window around the same step (`mix_window / 2`
//! steps backward and forward, clamped at the edges, true mean over the
//! steps actually available). The historical side carries weight
//! `lambda`, the evolving side `1 - lambda`, so a small `lambda` makes
//! the evolving pattern dominate. Targets mix with plain `lambda`
//! weighting and every produced sample is labeled normal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::timeseries::{Label, WindowPair};

/// Mixing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    /// Historical-sample proportion, in `[0, 1]`.
    pub lambda: f64,
    /// Moving-average window length (even, at least 2).
    pub mix_window: usize,
    /// Seed for drawing evolving partners.
    pub pairing_seed: u64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            lambda: 0.2,
            mix_window: 2,
            pairing_seed: 0,
        }
    }
}

impl MixupConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.mix_window < 2 || !self.mix_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "mix_window must be even and at least 2, got {}",
                self.mix_window
            )));
        }
        Ok(())
    }
}

/// The generated set plus any policy warnings raised while building it.
#[derive(Debug, Clone)]
pub struct MixedDataset {
    pub pairs: Vec<WindowPair>,
    pub warnings: Vec<String>,
}

/// Mix one historical window with one evolving window of the same shape.
pub fn temporal_mixup(
    hist: &WindowPair,
    meta: &WindowPair,
    cfg: &MixupConfig,
) -> Result<WindowPair> {
    cfg.validate()?;
    if hist.x.len() != meta.x.len() || hist.u.len() != meta.u.len() || hist.y.len() != meta.y.len()
    {
        return Err(Error::ShapeMismatch {
            context: "mixup operands".into(),
            expected: hist.x.len(),
            got: meta.x.len(),
        });
    }
    let lambda = cfg.lambda;
    let half = cfg.mix_window / 2;
    let w = hist.window_len();
    let channels = hist.y.len() + hist.u.len();
    let mut x = Vec::with_capacity(hist.x.len());
    for d in 0..w {
        let lo = d.saturating_sub(half);
        let hi = (d + half).min(w - 1);
        let count = (hi - lo + 1) as f64;
        let hist_step = hist.step(d);
        for (c, h_val) in hist_step.iter().enumerate() {
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += meta.step(j)[c];
            }
            x.push(lambda * h_val + (1.0 - lambda) * acc / count);
        }
    }
    // the conditioning actuators are the final step of the mixed window
    let m = hist.y.len();
    let last = &x[(w - 1) * channels..];
    let u = last[m..].to_vec();
    let y = hist
        .y
        .iter()
        .zip(meta.y.iter())
        .map(|(h, e)| lambda * h + (1.0 - lambda) * e)
        .collect();
    Ok(WindowPair {
        x,
        u,
        y,
        label: Label::Normal,
    })
}

/// Generate one mixed sample per historical window, pairing each with an
/// evolving window drawn uniformly with replacement under the seed.
pub fn build_mixed_dataset(
    d_train: &[WindowPair],
    d_meta: &[WindowPair],
    cfg: &MixupConfig,
) -> Result<MixedDataset> {
    cfg.validate()?;
    if d_train.is_empty() {
        return Err(Error::EmptyInput("historical set for mixup is empty".into()));
    }
    if d_meta.is_empty() {
        return Err(Error::EmptyInput("evolving set for mixup is empty".into()));
    }
    let mut warnings = Vec::new();
    if cfg.lambda >= 0.5 {
        warnings.push(format!(
            "lambda {} lets historical samples dominate the mixing; values below 0.5 are expected",
            cfg.lambda
        ));
    }
    let mut rng = Rng::new(cfg.pairing_seed);
    let mut pairs = Vec::with_capacity(d_train.len());
    for hist in d_train {
        let partner = &d_meta[rng.uniform_usize(d_meta.len())];
        pairs.push(temporal_mixup(hist, partner, cfg)?);
    }
    Ok(MixedDataset { pairs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_from_steps(steps: &[(f64, f64)], y: f64) -> WindowPair {
        let mut x = Vec::new();
        for &(s, a) in steps {
            x.push(s);
            x.push(a);
        }
        let u = vec![steps.last().unwrap().1];
        WindowPair {
            x,
            u,
            y: vec![y],
            label: Label::Normal,
        }
    }

    fn cfg(lambda: f64) -> MixupConfig {
        MixupConfig {
            lambda,
            mix_window: 2,
            pairing_seed: 1,
        }
    }

    #[test]
    fn lambda_one_returns_history_exactly() {
        let hist = pair_from_steps(&[(1.0, 0.5), (2.0, 0.5), (3.0, 0.5)], 4.0);
        let meta = pair_from_steps(&[(9.0, 0.1), (8.0, 0.1), (7.0, 0.1)], 6.0);
        let mixed = temporal_mixup(&hist, &meta, &cfg(1.0)).unwrap();
        assert_eq!(mixed.x, hist.x);
        assert_eq!(mixed.y, hist.y);
        assert_eq!(mixed.u, hist.u);
    }

    #[test]
    fn lambda_zero_on_constant_meta_is_that_constant() {
        let hist = pair_from_steps(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)], 7.0);
        let meta = pair_from_steps(&[(0.5, 0.25), (0.5, 0.25), (0.5, 0.25)], 0.5);
        let mixed = temporal_mixup(&hist, &meta, &cfg(0.0)).unwrap();
        for d in 0..3 {
            assert_eq!(mixed.step(d), &[0.5, 0.25]);
        }
        assert_eq!(mixed.y, vec![0.5]);
    }

    #[test]
    fn direct_arithmetic_case() {
        // hist value 1.0, meta window mean 0.5, lambda 0.2 -> 0.6
        let hist = pair_from_steps(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)], 1.0);
        let meta = pair_from_steps(&[(0.5, 0.5), (0.5, 0.5), (0.5, 0.5)], 0.5);
        let mixed = temporal_mixup(&hist, &meta, &cfg(0.2)).unwrap();
        for v in &mixed.x {
            assert!((v - 0.6).abs() < 1e-15, "got {v}");
        }
        assert!((mixed.y[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn meta_side_equals_brute_force_moving_average() {
        let hist = pair_from_steps(&[(0.0, 0.0); 6], 0.0);
        let meta = pair_from_steps(
            &[(1.0, -1.0), (2.0, 3.0), (4.0, 0.5), (8.0, 2.0), (16.0, 1.0), (32.0, -2.0)],
            5.0,
        );
        let n = 4;
        let mixed = temporal_mixup(
            &hist,
            &meta,
            &MixupConfig {
                lambda: 0.0,
                mix_window: n,
                pairing_seed: 0,
            },
        )
        .unwrap();
        for d in 0..6 {
            for c in 0..2 {
                // brute force: clamp the index range and average what remains
                let mut acc = 0.0;
                let mut count = 0.0;
                for j in 0..6_i64 {
                    if (j - d as i64).abs() <= (n / 2) as i64 {
                        acc += meta.step(j as usize)[c];
                        count += 1.0;
                    }
                }
                let expected = acc / count;
                let got = mixed.step(d)[c];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "step {d} channel {c}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn hist_dependence_is_affine_with_coefficient_lambda() {
        let meta = pair_from_steps(&[(0.3, 0.9), (1.7, -0.4), (2.2, 0.0)], 1.1);
        let h1 = pair_from_steps(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)], 7.0);
        let h2 = pair_from_steps(&[(0.5, -1.0), (2.5, 0.25), (4.0, 3.0)], 2.0);
        let lambda = 0.2;
        let a = temporal_mixup(&h1, &meta, &cfg(lambda)).unwrap();
        let b = temporal_mixup(&h2, &meta, &cfg(lambda)).unwrap();
        for ((va, vb), (x1, x2)) in a.x.iter().zip(b.x.iter()).zip(h1.x.iter().zip(h2.x.iter())) {
            assert!(
                ((va - vb) - lambda * (x1 - x2)).abs() < 1e-12,
                "difference must be lambda times the historical difference"
            );
        }
    }

    #[test]
    fn mixed_u_is_last_step_actuator_slice() {
        let hist = pair_from_steps(&[(1.0, 2.0), (3.0, 4.0)], 0.0);
        let meta = pair_from_steps(&[(5.0, 6.0), (7.0, 8.0)], 0.0);
        let mixed = temporal_mixup(&hist, &meta, &cfg(0.25)).unwrap();
        let channels = 2;
        let last_actuator = mixed.x[(mixed.window_len() - 1) * channels + 1];
        assert_eq!(mixed.u, vec![last_actuator]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let hist = pair_from_steps(&[(1.0, 2.0), (3.0, 4.0)], 0.0);
        let meta = pair_from_steps(&[(5.0, 6.0), (7.0, 8.0), (9.0, 1.0)], 0.0);
        assert!(temporal_mixup(&hist, &meta, &cfg(0.2)).is_err());
    }

    #[test]
    fn dataset_has_train_cardinality_and_normal_labels() {
        let d_train: Vec<WindowPair> = (0..10)
            .map(|i| {
                let mut p = pair_from_steps(&[(i as f64, 0.0), (i as f64, 0.0)], i as f64);
                p.label = Label::Anomalous; // must be overwritten in the output
                p
            })
            .collect();
        let d_meta: Vec<WindowPair> = (0..3)
            .map(|i| pair_from_steps(&[(-(i as f64), 1.0), (-(i as f64), 1.0)], 0.0))
            .collect();
        let out = build_mixed_dataset(&d_train, &d_meta, &cfg(0.2)).unwrap();
        assert_eq!(out.pairs.len(), 10);
        assert!(out.pairs.iter().all(|p| p.label == Label::Normal));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn same_seed_same_pairing() {
        let d_train: Vec<WindowPair> =
            (0..8).map(|i| pair_from_steps(&[(i as f64, 0.5); 3], 0.0)).collect();
        let d_meta: Vec<WindowPair> =
            (0..4).map(|i| pair_from_steps(&[(10.0 + i as f64, 0.1); 3], 1.0)).collect();
        let a = build_mixed_dataset(&d_train, &d_meta, &cfg(0.2)).unwrap();
        let b = build_mixed_dataset(&d_train, &d_meta, &cfg(0.2)).unwrap();
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn high_lambda_warns_but_proceeds() {
        let d_train = vec![pair_from_steps(&[(1.0, 0.0), (2.0, 0.0)], 3.0)];
        let d_meta = vec![pair_from_steps(&[(4.0, 1.0), (5.0, 1.0)], 6.0)];
        let out = build_mixed_dataset(&d_train, &d_meta, &cfg(0.6)).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.warnings.len(), 1, "expected a policy warning");
    }

    #[test]
    fn empty_inputs_fail() {
        let d = vec![pair_from_steps(&[(1.0, 0.0), (2.0, 0.0)], 3.0)];
        assert!(build_mixed_dataset(&[], &d, &cfg(0.2)).is_err());
        assert!(build_mixed_dataset(&d, &[], &cfg(0.2)).is_err());
    }
}
