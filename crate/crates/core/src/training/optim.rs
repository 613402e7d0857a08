//! Adam optimizer over named parameter groups.

use std::collections::BTreeMap;

use crate::tensor::ParamStore;

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they serialize alongside the weights for bit-exact resume.
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Steps taken so far (bias correction uses t = steps + 1).
    pub steps: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1: beta1 as f32,
            beta2: beta2 as f32,
            eps: eps as f32,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update over every (name, gradient) pair; `lr_for` selects the
    /// learning rate per parameter group. Parameters without a gradient are
    /// untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &BTreeMap<String, Vec<f32>>,
        mut lr_for: impl FnMut(&str) -> f32,
    ) {
        let t = self.steps + 1;
        let bc1 = 1.0 - self.beta1.powi(t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - self.beta2.powi(t.min(i32::MAX as u64) as i32);
        for (name, grad) in grads {
            let Ok(param) = params.get_mut(name) else { continue };
            let lr = lr_for(name);
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                param.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        self.steps = t;
    }

    /// Export moment buffers as named tensors ("opt.m.<name>", "opt.v.<name>").
    pub fn export(&self) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        let mut out = BTreeMap::new();
        for (name, (m, v)) in &self.moments {
            out.insert(format!("opt.m.{}", name), (vec![m.len()], m.clone()));
            out.insert(format!("opt.v.{}", name), (vec![v.len()], v.clone()));
        }
        out
    }

    /// Rebuild moment buffers from exported tensors.
    pub fn restore(
        &mut self,
        steps: u64,
        tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) {
        self.steps = steps;
        self.moments.clear();
        for (name, (_, data)) in tensors {
            if let Some(pname) = name.strip_prefix("opt.m.") {
                self.moments.entry(pname.to_string()).or_insert_with(|| (Vec::new(), Vec::new())).0 =
                    data.clone();
            } else if let Some(pname) = name.strip_prefix("opt.v.") {
                self.moments.entry(pname.to_string()).or_insert_with(|| (Vec::new(), Vec::new())).1 =
                    data.clone();
            }
        }
    }
}
