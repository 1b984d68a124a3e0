//! Central finite-difference gradient checking.
//!
//! The checked function is reduced to a scalar through a fixed random
//! projection `L = Σ r·f(x)`. Analytic gradients of `L` come from
//! [`Graph::backward`]; numeric ones from `(L(x + h) − L(x − h)) / 2h`
//! using forward evaluations only, with `L` accumulated in f64.
//!
//! The reported error for each input is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs.
    pub max_rel_error: f64,
    /// Per-input relative errors.
    pub per_input: Vec<f64>,
}

fn projected(out: &Tensor, r: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(r)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

pub fn check<F>(inputs: &[Tensor], h: f32, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f32> = (0..g.value(out).len())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let loss = g.weighted_sum(out, &r)?;
    let grads = g.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(projected(g.value(out), &r))
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0f32; inputs[i].len()];
        let analytic = grads.get(v).unwrap_or(&zeros);
        let mut work = inputs.to_vec();
        let mut max_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            // Use the perturbations actually representable in f32.
            let step = (x0 + h) as f64 - (x0 - h) as f64;
            let numeric = (plus - minus) / step;
            let a = analytic[j] as f64;
            max_diff = max_diff.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        per_input.push(if max_mag > 0.0 { max_diff / max_mag } else { 0.0 });
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
    })
}
