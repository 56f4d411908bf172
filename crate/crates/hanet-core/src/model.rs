//! Full network: backbone -> hybrid-attention cascade -> density head.
//!
//! The backbone is a VGG-style conv stack with a 2x2 max pool after every
//! stage except the last, so a four-stage plan downsamples by 8. The head is
//! either the three-block regression backend ending in a 1x1 conv, or (for
//! the cascade-bypass ablation) a bare 1x1 conv.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionCascade, AttnConfig, HamTrace};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Mode};
use crate::params::{Init, ParamStore};
use crate::seed::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Backbone stage list as (conv count, width) pairs.
///
/// "full" mirrors the first ten VGG16-BN convolutions; "toy" keeps the same
/// four-stage / three-pool geometry at desk-scale widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackbonePlan {
    Named(String),
    Stages(Vec<(usize, usize)>),
}

pub const FULL_PLAN: [(usize, usize); 4] = [(2, 64), (2, 128), (3, 256), (3, 512)];
pub const TOY_PLAN: [(usize, usize); 4] = [(1, 16), (1, 32), (1, 48), (1, 64)];

impl BackbonePlan {
    pub fn toy() -> Self {
        BackbonePlan::Named("toy".into())
    }

    pub fn full() -> Self {
        BackbonePlan::Named("full".into())
    }

    pub fn stages(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            BackbonePlan::Named(n) if n == "toy" => Ok(TOY_PLAN.to_vec()),
            BackbonePlan::Named(n) if n == "full" => Ok(FULL_PLAN.to_vec()),
            BackbonePlan::Named(n) => Err(Error::Config(format!(
                "unknown backbone plan '{n}' (expected \"toy\", \"full\", or a stage list)"
            ))),
            BackbonePlan::Stages(s) => {
                if s.is_empty() {
                    return Err(Error::Config("backbone plan must have at least one stage".into()));
                }
                if s.iter().any(|&(count, width)| count == 0 || width == 0) {
                    return Err(Error::Config("backbone stages need count >= 1 and width >= 1".into()));
                }
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackbonePlan,
    /// Pooling scales of the cascade, applied in order. Empty = no cascade.
    pub scales: Vec<usize>,
    /// With `false` the head is a bare 1x1 conv (cascade-bypass ablation).
    pub backend: bool,
    pub attn: AttnConfig,
    /// Std of the zero-mean Gaussian weight init.
    pub init_std: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackbonePlan::full(),
            scales: vec![1, 2, 3, 6],
            backend: true,
            attn: AttnConfig::default(),
            init_std: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Short human-readable architecture label, used for ablation rows.
    pub fn describe(&self) -> String {
        let mut parts = vec!["backbone".to_string()];
        if !self.scales.is_empty() {
            let ks: Vec<String> = self.scales.iter().map(|k| k.to_string()).collect();
            parts.push(format!("ham(pes-{})", ks.join(",")));
        }
        if self.backend {
            parts.push("backend".to_string());
        }
        parts.join("+")
    }
}

#[derive(Debug)]
struct BackboneStage {
    blocks: Vec<ConvBnRelu>,
    pool_after: bool,
}

#[derive(Debug)]
pub struct Backbone {
    stages: Vec<BackboneStage>,
    out_channels: usize,
    stride: usize,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        plan: &[(usize, usize)],
        bn_momentum: f64,
        bn_eps: f64,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(plan.len());
        let mut c_in = 3;
        for (si, &(count, width)) in plan.iter().enumerate() {
            let mut blocks = Vec::with_capacity(count);
            for bi in 0..count {
                blocks.push(ConvBnRelu::new(
                    store,
                    init,
                    &format!("{name}.stage{si}.block{bi}"),
                    c_in,
                    width,
                    3,
                    1,
                    bn_momentum,
                    bn_eps,
                )?);
                c_in = width;
            }
            stages.push(BackboneStage { blocks, pool_after: si + 1 < plan.len() });
        }
        let stride = 1usize << (plan.len() - 1);
        Ok(Backbone { stages, out_channels: c_in, stride })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Spatial downsampling factor (one 2x2 pool per stage boundary).
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let s = tape.shape(x);
        if s.c != 3 {
            return Err(Error::shape("backbone", format!("expected 3 input channels, got {}", s.c)));
        }
        if s.h % self.stride != 0 || s.w % self.stride != 0 {
            return Err(Error::shape(
                "backbone",
                format!(
                    "input {}x{} not divisible by the backbone stride {}; pad or crop first",
                    s.h, s.w, self.stride
                ),
            ));
        }
        let mut cur = x;
        for stage in &self.stages {
            for block in &stage.blocks {
                cur = block.forward(tape, store, cur, mode)?;
            }
            if stage.pool_after {
                cur = tape.max_pool2(cur)?;
            }
        }
        Ok(cur)
    }
}

/// Regression backend: three 3x3 Conv-BN-ReLU blocks halving the width each
/// time, then a 1x1 conv down to the single density channel. No final
/// activation; the training signal alone keeps the output near the
/// nonnegative targets.
#[derive(Debug)]
pub struct Backend {
    blocks: Vec<ConvBnRelu>,
    head: Conv2d,
}

impl Backend {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        bn_momentum: f64,
        bn_eps: f64,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(3);
        let mut c = c_in;
        for i in 0..3 {
            let c_out = (c / 2).max(1);
            blocks.push(ConvBnRelu::new(
                store,
                init,
                &format!("{name}.block{i}"),
                c,
                c_out,
                3,
                1,
                bn_momentum,
                bn_eps,
            )?);
            c = c_out;
        }
        let head = Conv2d::new(store, init, &format!("{name}.head"), c, 1, 1, 0)?;
        Ok(Backend { blocks, head })
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let mut cur = x;
        for block in &self.blocks {
            cur = block.forward(tape, store, cur, mode)?;
        }
        self.head.forward(tape, store, cur)
    }
}

#[derive(Debug)]
enum Head {
    /// Bare 1x1 conv to one channel.
    Direct(Conv2d),
    Backend(Backend),
}

#[derive(Debug)]
pub struct HaNet {
    pub store: ParamStore,
    backbone: Backbone,
    cascade: AttentionCascade,
    head: Head,
}

impl HaNet {
    /// Builds the network with weights drawn from a dedicated init stream of
    /// `seed`. Construction order is fixed, so equal (config, seed) pairs
    /// produce identical parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let plan = cfg.backbone.stages()?;
        for &k in &cfg.scales {
            if k == 0 {
                return Err(Error::Config("cascade scales must be >= 1".into()));
            }
        }
        if cfg.attn.reduction == 0 {
            return Err(Error::Config("attention reduction must be >= 1".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, "model-init");
        let mut init = Init::new(&mut rng, cfg.init_std)?;

        let backbone = Backbone::new(&mut store, &mut init, "backbone", &plan, cfg.bn_momentum, cfg.bn_eps)?;
        let c = backbone.out_channels();
        let attn = AttnConfig { bn_momentum: cfg.bn_momentum, bn_eps: cfg.bn_eps, ..cfg.attn };
        let cascade = AttentionCascade::new(&mut store, &mut init, "ha", c, &cfg.scales, &attn)?;
        let head = if cfg.backend {
            Head::Backend(Backend::new(&mut store, &mut init, "backend", c, cfg.bn_momentum, cfg.bn_eps)?)
        } else {
            Head::Direct(Conv2d::new(&mut store, &mut init, "head", c, 1, 1, 0)?)
        };
        Ok(HaNet { store, backbone, cascade, head })
    }

    pub fn stride(&self) -> usize {
        self.backbone.stride()
    }

    /// Density map prediction: (N,3,H,W) -> (N,1,H/stride,W/stride).
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(tape, x, mode)?.0)
    }

    /// Like `forward` but also returns the attention gate activations of
    /// every cascade module.
    pub fn forward_traced(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<HamTrace>)> {
        let store = &mut self.store;
        let feat = self.backbone.forward(tape, store, x, mode)?;
        let (attended, traces) = self.cascade.forward_traced(tape, store, feat, mode)?;
        let out = match &self.head {
            Head::Direct(conv) => conv.forward(tape, store, attended)?,
            Head::Backend(backend) => backend.forward(tape, store, attended, mode)?,
        };
        Ok((out, traces))
    }

    /// One eval-mode forward over a plain tensor; returns the density map.
    pub fn predict(&mut self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }
}

/// Per-image crowd count: the plain sum of the density map. Negative pixel
/// values are left as-is unless `clamp_negative` is set.
pub fn counts_from_map(map: &Tensor, clamp_negative: bool) -> Vec<f64> {
    let s = map.shape;
    let per = s.c * s.h * s.w;
    (0..s.n)
        .map(|n| {
            map.data[n * per..(n + 1) * per]
                .iter()
                .map(|&v| if clamp_negative && v < 0.0 { 0.0 } else { v })
                .sum()
        })
        .collect()
}
