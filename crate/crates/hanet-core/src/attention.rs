//! Hybrid attention: a spatial gate and a channel gate computed side by
//! side, each over half the channels, concatenated back to the input width.
//! Modules carry one pooling scale K each; a cascade applies them in the
//! configured order, so the channel count is preserved end to end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Linear, Mode};
use crate::params::{Init, ParamStore};
use crate::tape::{Tape, Var};

/// Knobs shared by every attention module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttnConfig {
    /// Bottleneck divisor for the channel-gate MLP.
    pub reduction: usize,
    /// Apply BN+ReLU after the 3x3 feature transforms (the 1x1 gate convs
    /// always stay raw so the sigmoid sees unnormalized logits).
    pub bn_relu: bool,
    /// Use one 3x3 conv (weights and bias) for both the feature branch and
    /// the pooled context branch of the spatial gate; gradients from the two
    /// uses sum. Each branch keeps its own normalization statistics either
    /// way, since the branches see different activation distributions.
    pub shared_context_transform: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for AttnConfig {
    fn default() -> Self {
        AttnConfig {
            reduction: 16,
            bn_relu: true,
            shared_context_transform: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// 3x3 conv (C -> C/2), optionally followed by BN+ReLU.
#[derive(Debug)]
struct FeatureBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

impl FeatureBlock {
    fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        cfg: &AttnConfig,
    ) -> Result<Self> {
        let conv = Conv2d::new(store, init, &format!("{name}.conv"), c_in, c_out, 3, 1)?;
        let bn = if cfg.bn_relu {
            Some(BatchNorm2d::new(store, &format!("{name}.bn"), c_out, cfg.bn_momentum, cfg.bn_eps)?)
        } else {
            None
        };
        Ok(FeatureBlock { conv, bn })
    }

    fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        match &self.bn {
            Some(bn) => {
                let y = bn.forward(tape, store, y, mode)?;
                Ok(tape.relu(y))
            }
            None => Ok(y),
        }
    }
}

/// Spatial gate at scale K: features and K-pooled context are mapped through
/// a 3x3 transform, summed, and squashed into a per-pixel mask. The two
/// branches can share the conv weights, but never the normalization stats:
/// raw features and upsampled pooled context are differently distributed,
/// and a blended running estimate would corrupt eval-mode forwards.
#[derive(Debug)]
pub struct SpatialAttention {
    pub k: usize,
    g3_conv: Conv2d,
    g3_bn: Option<BatchNorm2d>,
    /// Separate context conv when weights are not shared.
    ctx_conv: Option<Conv2d>,
    ctx_bn: Option<BatchNorm2d>,
    gate: Conv2d,
}

impl SpatialAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        k: usize,
        cfg: &AttnConfig,
    ) -> Result<Self> {
        let half = c_in / 2;
        let g3_conv = Conv2d::new(store, init, &format!("{name}.g3.conv"), c_in, half, 3, 1)?;
        let ctx_conv = if cfg.shared_context_transform {
            None
        } else {
            Some(Conv2d::new(store, init, &format!("{name}.g3_ctx.conv"), c_in, half, 3, 1)?)
        };
        let (g3_bn, ctx_bn) = if cfg.bn_relu {
            (
                Some(BatchNorm2d::new(store, &format!("{name}.g3.bn"), half, cfg.bn_momentum, cfg.bn_eps)?),
                Some(BatchNorm2d::new(store, &format!("{name}.g3_ctx.bn"), half, cfg.bn_momentum, cfg.bn_eps)?),
            )
        } else {
            (None, None)
        };
        let gate = Conv2d::new(store, init, &format!("{name}.gate"), half, 1, 1, 0)?;
        Ok(SpatialAttention { k, g3_conv, g3_bn, ctx_conv, ctx_bn, gate })
    }

    fn branch(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        conv: &Conv2d,
        bn: &Option<BatchNorm2d>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let y = conv.forward(tape, store, x)?;
        match bn {
            Some(bn) => {
                let y = bn.forward(tape, store, y, mode)?;
                Ok(tape.relu(y))
            }
            None => Ok(y),
        }
    }

    /// Returns (gated features (N,C/2,H,W), mask (N,1,H,W)).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(x);
        let f = self.branch(tape, store, &self.g3_conv, &self.g3_bn, x, mode)?;
        let pooled = tape.adaptive_avg_pool(x, self.k)?;
        let up = tape.bilinear_resize(pooled, s.h, s.w)?;
        let ctx_conv = self.ctx_conv.as_ref().unwrap_or(&self.g3_conv);
        let ctx = self.branch(tape, store, ctx_conv, &self.ctx_bn, up, mode)?;
        let fused = tape.add(f, ctx)?;
        let logits = self.gate.forward(tape, store, fused)?;
        let mask = tape.sigmoid(logits);
        let out = tape.mul(f, mask)?;
        Ok((out, mask))
    }
}

/// Channel gate at scale K: the K x K pooled input is flattened through a
/// bottleneck MLP into one weight per output channel.
#[derive(Debug)]
pub struct ChannelAttention {
    pub k: usize,
    g3: FeatureBlock,
    fc1: Linear,
    fc2: Linear,
}

impl ChannelAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        k: usize,
        cfg: &AttnConfig,
    ) -> Result<Self> {
        let half = c_in / 2;
        let flat = k * k * c_in;
        // Tiny configs can push flat/reduction to zero; keep at least one
        // hidden unit so the MLP stays well-formed.
        let hidden = (flat / cfg.reduction).max(1);
        let g3 = FeatureBlock::new(store, init, &format!("{name}.g3"), c_in, half, cfg)?;
        let fc1 = Linear::new(store, init, &format!("{name}.fc1"), flat, hidden)?;
        let fc2 = Linear::new(store, init, &format!("{name}.fc2"), hidden, half)?;
        Ok(ChannelAttention { k, g3, fc1, fc2 })
    }

    /// Returns (gated features (N,C/2,H,W), weights (N,C/2,1,1)).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let f = self.g3.forward(tape, store, x, mode)?;
        let pooled = tape.adaptive_avg_pool(x, self.k)?;
        let h = self.fc1.forward(tape, store, pooled)?;
        let h = tape.relu(h);
        let logits = self.fc2.forward(tape, store, h)?;
        let weights = tape.sigmoid(logits);
        let out = tape.mul(f, weights)?;
        Ok((out, weights))
    }
}

/// Gate activations of one hybrid module, exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct HamTrace {
    pub spatial_mask: Var,
    pub channel_weights: Var,
}

/// Hybrid attention module at scale K: [spatial half ‖ channel half].
#[derive(Debug)]
pub struct HybridAttention {
    pub k: usize,
    sam: SpatialAttention,
    cam: ChannelAttention,
}

impl HybridAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        k: usize,
        cfg: &AttnConfig,
    ) -> Result<Self> {
        if c_in % 2 != 0 {
            return Err(Error::invalid(
                "hybrid_attention",
                format!("input channels {c_in} must be even to split across the two gates"),
            ));
        }
        if k == 0 {
            return Err(Error::invalid("hybrid_attention", "pooling scale K must be >= 1"));
        }
        Ok(HybridAttention {
            k,
            sam: SpatialAttention::new(store, init, &format!("{name}.sam"), c_in, k, cfg)?,
            cam: ChannelAttention::new(store, init, &format!("{name}.cam"), c_in, k, cfg)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, HamTrace)> {
        let (sp, mask) = self.sam.forward(tape, store, x, mode)?;
        let (ch, weights) = self.cam.forward(tape, store, x, mode)?;
        let out = tape.concat_channels(sp, ch)?;
        Ok((out, HamTrace { spatial_mask: mask, channel_weights: weights }))
    }
}

/// The hybrid modules applied in configuration order (global-to-local for
/// the default scales [1,2,3,6]).
#[derive(Debug, Default)]
pub struct AttentionCascade {
    pub modules: Vec<HybridAttention>,
}

impl AttentionCascade {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c: usize,
        scales: &[usize],
        cfg: &AttnConfig,
    ) -> Result<Self> {
        let mut modules = Vec::with_capacity(scales.len());
        for (i, &k) in scales.iter().enumerate() {
            modules.push(HybridAttention::new(
                store,
                init,
                &format!("{name}.ham{i}_k{k}"),
                c,
                k,
                cfg,
            )?);
        }
        Ok(AttentionCascade { modules })
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(tape, store, x, mode)?.0)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<HamTrace>)> {
        let mut cur = x;
        let mut traces = Vec::with_capacity(self.modules.len());
        for m in &self.modules {
            let (next, trace) = m.forward(tape, store, cur, mode)?;
            traces.push(trace);
            cur = next;
        }
        Ok((cur, traces))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use crate::tensor::{Shape, Tensor};
    use rand::Rng;

    fn random_input(rng: &mut rand_chacha::ChaCha8Rng, shape: Shape) -> Tensor {
        let data = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn build(c: usize, scales: &[usize], cfg: &AttnConfig, seed: u64) -> (ParamStore, AttentionCascade) {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, "attn-init");
        let mut init = Init::new(&mut rng, 0.05).unwrap();
        let cascade = AttentionCascade::new(&mut store, &mut init, "ha", c, scales, cfg).unwrap();
        (store, cascade)
    }

    #[test]
    fn ham_preserves_shape_and_gates_stay_open() {
        let cfg = AttnConfig::default();
        let mut rng = stream_rng(3, "attn-data");
        for scales in [&[1][..], &[1, 2][..], &[1, 2, 3, 6][..]] {
            let (mut store, cascade) = build(8, scales, &cfg, 11);
            let mut tape = Tape::new();
            let shape = Shape::new(2, 8, 12, 12);
            let x = tape.leaf(random_input(&mut rng, shape));
            let (y, traces) = cascade.forward_traced(&mut tape, &mut store, x, Mode::Train).unwrap();
            assert_eq!(tape.shape(y), shape, "scales {scales:?}");
            assert_eq!(traces.len(), scales.len());
            for t in &traces {
                for &v in &tape.value(t.spatial_mask).data {
                    assert!(v > 0.0 && v < 1.0);
                }
                for &v in &tape.value(t.channel_weights).data {
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }

    #[test]
    fn scale_order_changes_the_function() {
        let cfg = AttnConfig::default();
        let mut rng = stream_rng(5, "attn-data");
        let x = random_input(&mut rng, Shape::new(1, 8, 12, 12));
        let run = |scales: &[usize]| {
            let (mut store, cascade) = build(8, scales, &cfg, 17);
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone());
            let y = cascade.forward(&mut tape, &mut store, v, Mode::Eval).unwrap();
            tape.value(y).data.clone()
        };
        let fwd = run(&[1, 2, 3]);
        let rev = run(&[3, 2, 1]);
        let max_diff = fwd
            .iter()
            .zip(&rev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-12, "reversed scale order produced an identical map");
    }

    #[test]
    fn channel_gate_bottleneck_never_collapses_to_zero_width() {
        // 8 channels, K=1, reduction 16 -> flat/r = 0, clamped to 1.
        let cfg = AttnConfig::default();
        let mut store = ParamStore::new();
        let mut rng = stream_rng(2, "attn-init");
        let mut init = Init::new(&mut rng, 0.05).unwrap();
        let cam = ChannelAttention::new(&mut store, &mut init, "cam", 8, 1, &cfg).unwrap();
        assert_eq!(store.value(cam.fc1.weight).shape, Shape::new(1, 8, 1, 1));
        assert_eq!(store.value(cam.fc2.weight).shape, Shape::new(4, 1, 1, 1));
    }

    #[test]
    fn odd_channel_count_is_rejected() {
        let cfg = AttnConfig::default();
        let mut store = ParamStore::new();
        let mut rng = stream_rng(2, "attn-init");
        let mut init = Init::new(&mut rng, 0.05).unwrap();
        assert!(HybridAttention::new(&mut store, &mut init, "h", 7, 1, &cfg).is_err());
    }

    #[test]
    fn unshared_context_transform_allocates_separate_weights() {
        let shared = AttnConfig::default();
        let unshared = AttnConfig { shared_context_transform: false, ..shared };
        let (store_a, _) = build(8, &[2], &shared, 9);
        let (store_b, _) = build(8, &[2], &unshared, 9);
        assert!(store_b.len() > store_a.len());
        assert!(store_b.lookup("ha.ham0_k2.sam.g3_ctx.conv.weight").is_some());
        assert!(store_a.lookup("ha.ham0_k2.sam.g3_ctx.conv.weight").is_none());
    }
}
