use crate::error::{NnError, Result};
use crate::params::ParamStore;

/// How the "decay rate" hyperparameter is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    /// Decoupled weight decay: `w ← w·(1 − lr·decay)` before the Adam step.
    WeightDecay,
    /// Multiplicative learning-rate schedule: `lr_e = lr·(1 − decay)^e`.
    LrSchedule,
}

impl DecayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecayMode::WeightDecay => "weight_decay",
            DecayMode::LrSchedule => "lr_schedule",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weight_decay" => Some(DecayMode::WeightDecay),
            "lr_schedule" => Some(DecayMode::LrSchedule),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub decay: f32,
    pub decay_mode: DecayMode,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 1e-2,
            decay_mode: DecayMode::WeightDecay,
        }
    }
}

impl Adam {
    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.decay_mode {
            DecayMode::WeightDecay => self.lr,
            DecayMode::LrSchedule => self.lr * (1.0 - self.decay).powi(epoch as i32),
        }
    }

    /// One bias-corrected update of every parameter from its `grad` buffer.
    /// Validates all gradients before touching any parameter.
    pub fn step(&self, store: &mut ParamStore, epoch: usize) -> Result<()> {
        if let Some(p) = store
            .params()
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(NnError::Diverged(p.name.clone()));
        }
        let lr = self.lr_at(epoch);
        let wd = match self.decay_mode {
            DecayMode::WeightDecay => self.decay,
            DecayMode::LrSchedule => 0.0,
        };
        for p in store.params_mut() {
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let c1 = 1.0 - (self.beta1 as f64).powi(t);
            let c2 = 1.0 - (self.beta2 as f64).powi(t);
            let shrink = 1.0 - lr * wd;
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&p.grad)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m as f64 / c1;
                let v_hat = *v as f64 / c2;
                *w *= shrink;
                *w -= (lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
            }
        }
        Ok(())
    }
}
