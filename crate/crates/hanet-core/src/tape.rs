//! Reverse-mode autodiff over a linear tape.
//!
//! Every operation appends its output tensor to an arena and records an
//! entry naming its operands. `backward` walks the entries in reverse,
//! propagating vector-Jacobian products with the kernels in `ops`.
//!
//! A tape lives for one forward/backward pass. Parameters bind through
//! [`Tape::param`], which memoizes per `ParamId`: using a weight twice (the
//! shared context conv in spatial attention does) yields the same `Var`, so
//! both uses accumulate into one gradient.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, Broadcast};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Entry {
    Conv2d { x: Var, w: Var, b: Var, out: Var, stride: usize, padding: usize },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        out: Var,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        stats_from_batch: bool,
    },
    AdaptiveAvgPool { x: Var, out: Var, k: usize },
    MaxPool2 { x: Var, out: Var, argmax: Vec<usize> },
    BilinearResize { x: Var, out: Var },
    FullyConnected { x: Var, w: Var, b: Var, out: Var },
    Relu { x: Var, out: Var },
    Sigmoid { out_as_input: Var, x: Var, out: Var },
    ConcatChannels { a: Var, b: Var, out: Var },
    Add { a: Var, b: Var, out: Var, kind: Broadcast },
    Mul { a: Var, b: Var, out: Var, kind: Broadcast },
    Scale { x: Var, out: Var, factor: f64 },
    SumAll { x: Var, out: Var },
}

#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    entries: Vec<Entry>,
    grads: Vec<Option<Tensor>>,
    param_vars: HashMap<ParamId, Var>,
    bindings: Vec<(Var, ParamId)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a constant or input tensor (no gradient tracked back to the
    /// caller, but interior gradients still flow through it).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t)
    }

    /// Binds a stored parameter. Repeat bindings of the same id return the
    /// original `Var` so gradients from all uses accumulate together.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone());
        self.param_vars.insert(id, v);
        self.bindings.push((v, id));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.vals[v.0].shape
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, t: Tensor) -> Var {
        self.vals.push(t);
        Var(self.vals.len() - 1)
    }

    // ---------------------------------------------------------- operations

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d_fwd(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let o = self.push(out);
        self.entries.push(Entry::Conv2d { x, w, b, out: o, stride, padding });
        Ok(o)
    }

    /// Normalization with caller-supplied statistics. `stats_from_batch`
    /// marks them as functions of `x` (training mode), which changes the
    /// backward formula; in eval mode they are constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        stats_from_batch: bool,
    ) -> Result<Var> {
        let c = self.shape(x).c;
        let want = Shape::new(1, c, 1, 1);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != want {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} shape {} does not match {} channels", self.shape(v), c),
                ));
            }
        }
        if mean.len() != c || invstd.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("stats length {}/{} vs {} channels", mean.len(), invstd.len(), c),
            ));
        }
        let out = ops::bn_fwd(
            self.value(x),
            &self.value(gamma).data.clone(),
            &self.value(beta).data.clone(),
            &mean,
            &invstd,
        );
        let o = self.push(out);
        self.entries.push(Entry::BatchNorm { x, gamma, beta, out: o, mean, invstd, stats_from_batch });
        Ok(o)
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let out = ops::adaptive_avg_pool_fwd(self.value(x), k)?;
        let o = self.push(out);
        self.entries.push(Entry::AdaptiveAvgPool { x, out: o, k });
        Ok(o)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2_fwd(self.value(x))?;
        let o = self.push(out);
        self.entries.push(Entry::MaxPool2 { x, out: o, argmax });
        Ok(o)
    }

    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let out = ops::bilinear_resize_fwd(self.value(x), oh, ow)?;
        let o = self.push(out);
        self.entries.push(Entry::BilinearResize { x, out: o });
        Ok(o)
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::fully_connected_fwd(self.value(x), self.value(w), self.value(b))?;
        let o = self.push(out);
        self.entries.push(Entry::FullyConnected { x, w, b, out: o });
        Ok(o)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu_fwd(self.value(x));
        let o = self.push(out);
        self.entries.push(Entry::Relu { x, out: o });
        o
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid_fwd(self.value(x));
        let o = self.push(out);
        self.entries.push(Entry::Sigmoid { out_as_input: o, x, out: o });
        o
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels_fwd(self.value(a), self.value(b))?;
        let o = self.push(out);
        self.entries.push(Entry::ConcatChannels { a, b, out: o });
        Ok(o)
    }

    /// Elementwise add; `b` may be (N,C,H,W), (N,C,1,1), or (N,1,H,W)
    /// against `a`'s (N,C,H,W).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind("add", self.shape(a), self.shape(b))?;
        let out = ops::ewise_fwd(self.value(a), self.value(b), kind, false);
        let o = self.push(out);
        self.entries.push(Entry::Add { a, b, out: o, kind });
        Ok(o)
    }

    /// Elementwise multiply with the same broadcast rules as `add`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind("mul", self.shape(a), self.shape(b))?;
        let out = ops::ewise_fwd(self.value(a), self.value(b), kind, true);
        let o = self.push(out);
        self.entries.push(Entry::Mul { a, b, out: o, kind });
        Ok(o)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).scaled(factor);
        let o = self.push(out);
        self.entries.push(Entry::Scale { x, out: o, factor });
        o
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = ops::sum_all_fwd(self.value(x));
        let o = self.push(out);
        self.entries.push(Entry::SumAll { x, out: o });
        o
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep seeding d(loss)/d(loss) = 1. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.vals[loss.0].numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", self.vals[loss.0].shape),
            ));
        }
        self.grads = vec![None; self.vals.len()];
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        let Tape { vals, entries, grads, .. } = self;
        for e in entries.iter().rev() {
            match e {
                Entry::Conv2d { x, w, b, out, stride, padding } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let (dx, dw, db) =
                        ops::conv2d_bwd(&vals[x.0], &vals[w.0], *stride, *padding, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                    accumulate(grads, *w, dw);
                    accumulate(grads, *b, db);
                }
                Entry::BatchNorm { x, gamma, beta, out, mean, invstd, stats_from_batch } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let c = vals[x.0].shape.c;
                    let (dx, dgamma, dbeta) = ops::bn_bwd(
                        &vals[x.0],
                        &vals[gamma.0].data,
                        mean,
                        invstd,
                        &dout,
                        *stats_from_batch,
                    );
                    grads[out.0] = Some(dout);
                    let cs = Shape::new(1, c, 1, 1);
                    accumulate(grads, *x, dx);
                    accumulate(grads, *gamma, Tensor::from_vec(cs, dgamma).expect("bn dgamma shape"));
                    accumulate(grads, *beta, Tensor::from_vec(cs, dbeta).expect("bn dbeta shape"));
                }
                Entry::AdaptiveAvgPool { x, out, k } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::adaptive_avg_pool_bwd(vals[x.0].shape, *k, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::MaxPool2 { x, out, argmax } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::max_pool2_bwd(vals[x.0].shape, argmax, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::BilinearResize { x, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::bilinear_resize_bwd(vals[x.0].shape, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::FullyConnected { x, w, b, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let (dx, dw, db) = ops::fully_connected_bwd(&vals[x.0], &vals[w.0], &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                    accumulate(grads, *w, dw);
                    accumulate(grads, *b, db);
                }
                Entry::Relu { x, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::relu_bwd(&vals[x.0], &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::Sigmoid { out_as_input, x, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::sigmoid_bwd(&vals[out_as_input.0], &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::ConcatChannels { a, b, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let (da, db) = ops::concat_channels_bwd(vals[a.0].shape, vals[b.0].shape, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *a, da);
                    accumulate(grads, *b, db);
                }
                Entry::Add { a, b, out, kind } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let db = ops::reduce_to_broadcast(&dout, vals[b.0].shape, *kind);
                    let da = dout.clone();
                    grads[out.0] = Some(dout);
                    accumulate(grads, *a, da);
                    accumulate(grads, *b, db);
                }
                Entry::Mul { a, b, out, kind } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let da = ops::ewise_mul_grad_a(&dout, &vals[b.0], *kind);
                    let db = ops::ewise_mul_grad_b(&dout, &vals[a.0], vals[b.0].shape, *kind);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *a, da);
                    accumulate(grads, *b, db);
                }
                Entry::Scale { x, out, factor } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = dout.scaled(*factor);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
                Entry::SumAll { x, out } => {
                    let Some(dout) = grads[out.0].take() else { continue };
                    let dx = ops::sum_all_bwd(vals[x.0].shape, &dout);
                    grads[out.0] = Some(dout);
                    accumulate(grads, *x, dx);
                }
            }
        }
        Ok(())
    }

    /// Adds the computed parameter gradients into the store. Call after
    /// `backward`; parameters the loss does not reach are skipped.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for &(var, pid) in &self.bindings {
            if let Some(g) = self.grads.get(var.0).and_then(|g| g.as_ref()) {
                store.accumulate_grad(pid, g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g).expect("gradient shape fixed by forward"),
        slot @ None => *slot = Some(g),
    }
}
