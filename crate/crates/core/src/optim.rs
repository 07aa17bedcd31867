//! Adam optimizer and finite-difference gradient verification.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment tensors are keyed by parameter name and
/// updated in sorted name order, so repeated runs take identical steps.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if config.lr <= 0.0 {
            return Err(Error::numeric(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One update. `grads` must contain an entry for every trainable
    /// parameter in the store.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(String, Tensor<T>)]) -> Result<()> {
        let grad_map: BTreeMap<&str, &Tensor<T>> =
            grads.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let trainable = store.trainable_names();
        for name in &trainable {
            if !grad_map.contains_key(name.as_str()) {
                return Err(Error::data(format!(
                    "gradient missing for trainable parameter `{name}`"
                )));
            }
        }

        self.step += 1;
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let lr = T::from_f64(self.config.lr);
        let eps = T::from_f64(self.config.eps);
        let corr1 = T::from_f64(1.0 - self.config.beta1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - self.config.beta2.powi(self.step as i32));

        for name in &trainable {
            let grad = grad_map[name.as_str()];
            let param = store.tensor(name)?;
            if param.shape() != grad.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!(
                        "gradient for `{name}` has shape {:?}, parameter is {:?}",
                        grad.shape(),
                        param.shape()
                    ),
                });
            }
            let (rows, cols) = param.shape();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(rows, cols), Tensor::zeros(rows, cols)));

            let mut updated = param.clone();
            let one = T::one();
            for r in 0..rows {
                for c in 0..cols {
                    let g = grad.get(r, c);
                    let m_new = b1 * m.get(r, c) + (one - b1) * g;
                    let v_new = b2 * v.get(r, c) + (one - b2) * g * g;
                    m.set(r, c, m_new);
                    v.set(r, c, v_new);
                    let m_hat = m_new / corr1;
                    let v_hat = v_new / corr2;
                    let delta = lr * m_hat / (v_hat.sqrt() + eps);
                    updated.set(r, c, updated.get(r, c) - delta);
                }
            }
            if !updated.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite parameter `{name}` after adam step {}",
                    self.step
                )));
            }
            store.set_values(name, updated)?;
        }
        Ok(())
    }

    /// Persist step counter, hyperparameters and both moment blocks.
    pub fn save(&self, dir: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Meta {
            step: u64,
            config: AdamConfig,
        }
        std::fs::write(
            dir.join("adam.json"),
            serde_json::to_vec_pretty(&Meta {
                step: self.step,
                config: self.config,
            })?,
        )?;
        let mut blob = ParamStore::<T>::new();
        for (name, (m, v)) in &self.moments {
            blob.insert(&format!("{name}.m"), m.clone(), false)?;
            blob.insert(&format!("{name}.v"), v.clone(), false)?;
        }
        blob.save(&dir.join("adam_manifest.json"), &dir.join("adam_moments.bin"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            step: u64,
            config: AdamConfig,
        }
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join("adam.json"))?)?;
        let blob =
            ParamStore::<T>::load(&dir.join("adam_manifest.json"), &dir.join("adam_moments.bin"))?;
        let mut moments = BTreeMap::new();
        for (name, param) in blob.iter() {
            if let Some(base) = name.strip_suffix(".m") {
                let v = blob.tensor(&format!("{base}.v"))?.clone();
                moments.insert(base.to_string(), (param.tensor.clone(), v));
            }
        }
        let mut adam = Adam::new(meta.config)?;
        adam.step = meta.step;
        adam.moments = moments;
        Ok(adam)
    }
}

// ---- finite-difference verification ----------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_entry: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step_size: f64,
    pub checks: Vec<ParamCheck>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        let tol = self.tolerance;
        self.checks.iter().filter(move |c| c.max_rel_err > tol)
    }
}

/// Relative error with an absolute floor so near-zero gradients compare
/// against finite-difference noise sensibly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-5)
}

/// Compare analytic gradients against central finite differences of `loss_fn`
/// for every entry of every trainable parameter. Runs at f64; `loss_fn` must
/// be a pure function of the store contents.
pub fn finite_difference_check(
    store: &mut ParamStore<f64>,
    analytic: &[(String, Tensor<f64>)],
    h: f64,
    tolerance: f64,
    mut loss_fn: impl FnMut(&ParamStore<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let analytic_map: BTreeMap<&str, &Tensor<f64>> =
        analytic.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut checks = Vec::new();
    for name in store.trainable_names() {
        let grad = *analytic_map
            .get(name.as_str())
            .ok_or_else(|| Error::data(format!("no analytic gradient for `{name}`")))?;
        let (rows, cols) = store.tensor(&name)?.shape();
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_entry: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        };
        for r in 0..rows {
            for c in 0..cols {
                let original = store.tensor(&name)?.get(r, c);

                let mut bumped = store.tensor(&name)?.clone();
                bumped.set(r, c, original + h);
                store.set_values(&name, bumped)?;
                let plus = loss_fn(store)?;

                let mut bumped = store.tensor(&name)?.clone();
                bumped.set(r, c, original - h);
                store.set_values(&name, bumped)?;
                let minus = loss_fn(store)?;

                let mut restored = store.tensor(&name)?.clone();
                restored.set(r, c, original);
                store.set_values(&name, restored)?;

                let numeric = (plus - minus) / (2.0 * h);
                let rel = relative_error(grad.get(r, c), numeric);
                if rel > check.max_rel_err {
                    check.max_rel_err = rel;
                    check.worst_entry = (r, c);
                    check.analytic = grad.get(r, c);
                    check.numeric = numeric;
                }
            }
        }
        checks.push(check);
    }
    let pass = checks.iter().all(|c| c.max_rel_err <= tolerance);
    Ok(GradCheckReport {
        tolerance,
        step_size: h,
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::ones(2, 2), true).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3)).unwrap();
        let grads = vec![("w".to_string(), Tensor::ones(2, 2))];
        adam.step(&mut store, &grads).unwrap();
        for v in store.tensor("w").unwrap().iter() {
            // bias-corrected m_hat / sqrt(v_hat) == 1 on the first step
            assert!((v - (1.0 - 1e-3)).abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::ones(1, 3), true).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2)).unwrap();
        let grads = vec![("w".to_string(), Tensor::zeros(1, 3))];
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.tensor("w").unwrap().to_vec(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_steps_match_scalar_adam_trace() {
        // Independent scalar Adam, written directly from the update rule.
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let g = 0.37;
        let mut w = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2i32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - f64::powi(b1, t));
            let v_hat = v / (1.0 - f64::powi(b2, t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(2.0), true).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(lr)).unwrap();
        let grads = vec![("w".to_string(), Tensor::scalar(g))];
        adam.step(&mut store, &grads).unwrap();
        adam.step(&mut store, &grads).unwrap();
        assert!((store.tensor("w").unwrap().scalar_value() - w).abs() < 1e-12);
    }

    #[test]
    fn non_positive_lr_rejected() {
        assert!(Adam::<f64>::new(AdamConfig::with_lr(0.0)).is_err());
        assert!(Adam::<f64>::new(AdamConfig::with_lr(-1.0)).is_err());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::ones(1, 1), true).unwrap();
        store.insert("u", Tensor::ones(1, 1), true).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3)).unwrap();
        let grads = vec![("w".to_string(), Tensor::zeros(1, 1))];
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("`u`"));
    }

    #[test]
    fn finite_difference_agrees_on_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert("w", Tensor::from_vec(1, 2, vec![1.5, -0.5]).unwrap(), true)
            .unwrap();
        // loss = w0^2 + 3 w1  =>  grad = [2 w0, 3]
        let analytic = vec![(
            "w".to_string(),
            Tensor::from_vec(1, 2, vec![3.0, 3.0]).unwrap(),
        )];
        let report = finite_difference_check(&mut store, &analytic, 1e-5, 1e-6, |s| {
            let t = s.tensor("w")?;
            Ok(t.get(0, 0) * t.get(0, 0) + 3.0 * t.get(0, 1))
        })
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails_and_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.insert("good", Tensor::scalar(1.0), true).unwrap();
        store.insert("bad", Tensor::scalar(2.0), true).unwrap();
        let analytic = vec![
            ("good".to_string(), Tensor::scalar(2.0)),
            ("bad".to_string(), Tensor::scalar(99.0)), // wrong on purpose
        ];
        let report = finite_difference_check(&mut store, &analytic, 1e-5, 1e-4, |s| {
            let g = s.tensor("good")?.scalar_value();
            let b = s.tensor("bad")?.scalar_value();
            Ok(g * g + b * b)
        })
        .unwrap();
        assert!(!report.pass);
        let failures: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failures, vec!["bad"]);
    }
}
