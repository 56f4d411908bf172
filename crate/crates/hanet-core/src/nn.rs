//! Layers: thin structs holding parameter ids plus a `forward` that records
//! tape ops. Layers are immutable after construction; all mutable state
//! (weights, batch-norm running stats) lives in the [`ParamStore`].

use crate::error::Result;
use crate::ops;
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running stats updated.
    Train,
    /// Batch statistics; running stats untouched. For finite differencing,
    /// where repeated forwards must evaluate the same function.
    TrainFrozen,
    /// Running statistics; no side effects.
    Eval,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::TrainFrozen)
    }
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Stride-1 convolution; weights ~ N(0, init std), bias 0.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        ksize: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            init.normal(Shape::new(c_out, c_in, ksize, ksize)),
            true,
        )?;
        let bias = store.insert(
            format!("{name}.bias"),
            init.constant(Shape::new(1, c_out, 1, 1), 0.0),
            true,
        )?;
        Ok(Conv2d { weight, bias, stride: 1, padding })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.value(self.weight).shape.n
    }
}

#[derive(Debug)]
pub struct BatchNorm2d {
    name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Scalar count of training batches folded into the running stats,
    /// stored as a tensor so checkpoints carry it like any other state.
    pub batches: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c: usize,
        momentum: f64,
        eps: f64,
    ) -> Result<Self> {
        let cs = Shape::new(1, c, 1, 1);
        let gamma = store.insert(format!("{name}.gamma"), crate::tensor::Tensor::filled(cs, 1.0), true)?;
        let beta = store.insert(format!("{name}.beta"), crate::tensor::Tensor::zeros(cs), true)?;
        let running_mean = store.insert(format!("{name}.running_mean"), crate::tensor::Tensor::zeros(cs), false)?;
        let running_var = store.insert(format!("{name}.running_var"), crate::tensor::Tensor::filled(cs, 1.0), false)?;
        let batches = store.insert(format!("{name}.batches"), crate::tensor::Tensor::scalar(0.0), false)?;
        Ok(BatchNorm2d { name: name.to_string(), gamma, beta, running_mean, running_var, batches, momentum, eps })
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let s = tape.shape(x);
        let (mean, var) = if mode.uses_batch_stats() {
            ops::channel_mean_var(tape.value(x))
        } else {
            if store.value(self.batches).data[0] == 0.0 {
                log::warn!(
                    "batch norm '{}' running in eval mode before any training batch; using init stats (mean 0, var 1)",
                    self.name
                );
            }
            (
                store.value(self.running_mean).data.clone(),
                store.value(self.running_var).data.clone(),
            )
        };

        if mode == Mode::Train {
            // EMA with the unbiased batch variance, matching the usual
            // train/eval convention; a single-sample batch falls back to the
            // biased estimate to avoid dividing by zero.
            let nhw = (s.n * s.h * s.w) as f64;
            let correction = if nhw > 1.0 { nhw / (nhw - 1.0) } else { 1.0 };
            let m = self.momentum;
            {
                let rm = &mut store.value_mut(self.running_mean).data;
                for (r, &b) in rm.iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
            {
                let rv = &mut store.value_mut(self.running_var).data;
                for (r, &b) in rv.iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * (b * correction);
                }
            }
            store.value_mut(self.batches).data[0] += 1.0;
        }

        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, mean, invstd, mode.uses_batch_stats())
    }
}

#[derive(Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            init.normal(Shape::new(out_features, in_features, 1, 1)),
            true,
        )?;
        let bias = store.insert(
            format!("{name}.bias"),
            init.constant(Shape::new(1, out_features, 1, 1), 0.0),
            true,
        )?;
        Ok(Linear { weight, bias })
    }

    /// Input of any (N,C,H,W) with C*H*W == in_features; output (N,out,1,1).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.fully_connected(x, w, b)
    }
}

/// Conv -> BatchNorm -> ReLU, the building block of the backbone, backend,
/// and attention feature transforms.
#[derive(Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        ksize: usize,
        padding: usize,
        bn_momentum: f64,
        bn_eps: f64,
    ) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv2d::new(store, init, &format!("{name}.conv"), c_in, c_out, ksize, padding)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out, bn_momentum, bn_eps)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, mode)?;
        Ok(tape.relu(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use crate::tensor::Tensor;

    fn rng() -> rand_chacha::ChaCha8Rng {
        stream_rng(1, "nn-tests")
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2, 0.1, 1e-5).unwrap();
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 2 * 3 * 3).map(|i| (i as f64).sin() * 4.0 + 2.0).collect();
        let x = tape.leaf(Tensor::from_vec(Shape::new(2, 2, 3, 3), data).unwrap());
        let y = bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        // Per channel over (N,H,W): mean ~ 0, biased var ~ 1 (up to eps).
        let (mean, var) = ops::channel_mean_var(tape.value(y));
        for c in 0..2 {
            assert!(mean[c].abs() < 1e-10, "mean[{c}] = {}", mean[c]);
            assert!((var[c] - 1.0).abs() < 1e-3, "var[{c}] = {}", var[c]);
        }
        assert_eq!(store.value(bn.batches).data[0], 1.0);
    }

    #[test]
    fn batch_norm_running_stats_follow_ema() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1, 0.1, 1e-5).unwrap();
        let mut tape = Tape::new();
        // One channel, four values: mean 2.5, biased var 1.25, unbiased 5/3.
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        let rm = store.value(bn.running_mean).data[0];
        let rv = store.value(bn.running_var).data[0];
        assert!((rm - 0.1 * 2.5).abs() < 1e-12);
        assert!((rv - (0.9 + 0.1 * (1.25 * 4.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn frozen_mode_leaves_stats_untouched() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1, 0.1, 1e-5).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let y1 = bn.forward(&mut tape, &mut store, x, Mode::TrainFrozen).unwrap();
        assert_eq!(store.value(bn.batches).data[0], 0.0);
        assert_eq!(store.value(bn.running_mean).data[0], 0.0);
        // Same normalization as train mode.
        let y2 = bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert_eq!(tape.value(y1).data, tape.value(y2).data);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1, 1.0, 0.0).unwrap();
        // momentum 1.0: running stats become exactly the batch stats.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        let y = bn.forward(&mut tape, &mut store, x, Mode::Eval).unwrap();
        // Eval normalizes with mean 2.5, var 5/3 (unbiased).
        let invstd = 1.0 / (5.0f64 / 3.0).sqrt();
        for (i, &v) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let want = (v - 2.5) * invstd;
            assert!((tape.value(y).data[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_bn_relu_is_nonnegative() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let mut init = Init::new(&mut r, 0.5).unwrap();
        let block = ConvBnRelu::new(&mut store, &mut init, "b", 2, 4, 3, 1, 0.1, 1e-5).unwrap();
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| (i as f64 * 0.7).cos()).collect();
        let x = tape.leaf(Tensor::from_vec(Shape::new(2, 2, 6, 6), data).unwrap());
        let y = block.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert_eq!(tape.shape(y), Shape::new(2, 4, 6, 6));
        assert!(tape.value(y).data.iter().all(|&v| v >= 0.0));
    }
}
