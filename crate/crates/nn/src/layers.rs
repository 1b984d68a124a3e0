use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Train mode uses batch statistics and updates running estimates; eval mode
/// reads the running estimates and changes nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Kaiming-uniform fan-in initialization (ReLU gain).
fn kaiming_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = kaiming_uniform(rng, &[cout, cin, kernel, kernel], cin * kernel * kernel);
        let weight = store.add_param(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.pad)
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub struct ConvTranspose2 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2 {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = kaiming_uniform(rng, &[cin, cout, 2, 2], cin);
        Ok(Self {
            weight: store.add_param(format!("{name}.weight"), w)?,
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose2(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batchnorm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                for (r, b) in store
                    .buffer_mut(self.running_mean)
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.mean)
                {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in store
                    .buffer_mut(self.running_var)
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.var_unbiased)
                {
                    *r = (1.0 - m) * *r + m * b;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).data().to_vec();
                let var = store.buffer(self.running_var).data().to_vec();
                g.batchnorm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ca = Conv2d::new(&mut a, "c", 4, 8, 3, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        Conv2d::new(&mut b, "c", 4, 8, 3, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let wa = &a.param(ca.weight).value;
        assert_eq!(wa, &b.params()[0].value);
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(wa.data().iter().all(|v| v.abs() <= bound));
        assert!(a.param(ca.bias.unwrap()).value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_update_only_in_train() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        bn.forward(&mut g, &mut store, xv, Mode::Eval).unwrap();
        assert_eq!(store.buffer(bn.running_mean).data(), &[0.0]);

        let mut g = Graph::new();
        let xv = g.constant(x);
        bn.forward(&mut g, &mut store, xv, Mode::Train).unwrap();
        assert!((store.buffer(bn.running_mean).data()[0] - 0.25).abs() < 1e-6);
        // unbiased var of {1,2,3,4} = 5/3
        let expect = 0.9 + 0.1 * (5.0 / 3.0);
        assert!((store.buffer(bn.running_var).data()[0] - expect).abs() < 1e-6);
    }
}
