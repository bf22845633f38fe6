//! The hierarchical backbone.
//!
//! An `H x W x 3` image is cut into 4×4 patches and embedded to `C1`
//! channels. Each following stage halves the resolution with a patch merging
//! layer and doubles the channels. Every stage stacks pairs of blocks: the
//! first of a pair attends in aligned windows, the second in shifted windows.
//! A classification head (layer norm, global average pool, linear) maps the
//! last stage to logits.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::attention::MswMsaParams;
use crate::dwm::{dwm_forward, DmswMode, DmswParams};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear, Module};
use crate::tensor::{io, Element, Param, Tape, Tensor, Var};
use crate::window::WindowSet;

/// Per-head query width of the reference configurations.
pub const REFERENCE_HEAD_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub heads: usize,
    /// Nominal window sizes, one per head group.
    pub windows: Vec<usize>,
    pub depth: usize,
}

fn image_size<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[usize; 2], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Size {
        Square(usize),
        Rect([usize; 2]),
    }
    Ok(match Size::deserialize(d)? {
        Size::Square(s) => [s, s],
        Size::Rect(r) => r,
    })
}

fn default_in_channels() -> usize {
    3
}

fn default_patch_size() -> usize {
    4
}

fn default_mlp_ratio() -> usize {
    4
}

/// Everything needed to build a model deterministically.
///
/// JSON form:
///
/// ```json
/// {"image_size": 224, "num_classes": 1000, "dmsw_mode": "dynamic",
///  "stages": [{"channels": 96, "heads": 3, "windows": [7, 14, 21], "depth": 2}]}
/// ```
///
/// `image_size` is either one side or `[height, width]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(deserialize_with = "image_size")]
    pub image_size: [usize; 2],
    pub num_classes: usize,
    pub dmsw_mode: DmswMode,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

impl ModelConfig {
    fn reference(channels: usize, heads: usize, windows: Vec<usize>, depths: [usize; 4]) -> Self {
        let stages = depths
            .iter()
            .enumerate()
            .map(|(i, &depth)| StageConfig {
                channels: channels << i,
                heads: heads << i,
                windows: windows.clone(),
                depth,
            })
            .collect();
        ModelConfig {
            image_size: [224, 224],
            num_classes: 1000,
            dmsw_mode: DmswMode::Dynamic,
            stages,
            in_channels: 3,
            patch_size: 4,
            mlp_ratio: 4,
        }
    }

    /// The tiny configuration: 96 channels, 3 heads, windows [7, 14, 21].
    pub fn dw_t() -> Self {
        Self::reference(96, 3, vec![7, 14, 21], [2, 2, 6, 2])
    }

    /// The base configuration: 128 channels, 4 heads, windows [7, 12, 17, 22].
    pub fn dw_b() -> Self {
        Self::reference(128, 4, vec![7, 12, 17, 22], [2, 2, 18, 2])
    }

    /// Tiny layout with a single window size and no dynamic weighting, i.e.
    /// a plain single-scale shifted-window backbone.
    pub fn single_window_t(win: usize) -> Self {
        let mut cfg = Self::reference(96, 3, vec![win], [2, 2, 6, 2]);
        cfg.dmsw_mode = DmswMode::Off;
        cfg
    }

    /// Two-stage configuration small enough for finite-difference checks.
    pub fn toy() -> Self {
        ModelConfig {
            image_size: [16, 16],
            num_classes: 10,
            dmsw_mode: DmswMode::Dynamic,
            stages: vec![
                StageConfig {
                    channels: 16,
                    heads: 2,
                    windows: vec![2, 4],
                    depth: 2,
                },
                StageConfig {
                    channels: 32,
                    heads: 2,
                    windows: vec![2, 4],
                    depth: 2,
                },
            ],
            in_channels: 3,
            patch_size: 4,
            mlp_ratio: 4,
        }
    }

    pub fn with_mode(mut self, mode: DmswMode) -> Self {
        self.dmsw_mode = mode;
        self
    }

    pub fn with_image_size(mut self, height: usize, width: usize) -> Self {
        self.image_size = [height, width];
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Spatial extent of every stage's feature map, rounding up where the
    /// input needs padding.
    pub fn stage_resolutions(&self) -> Vec<(usize, usize)> {
        let [h, w] = self.image_size;
        let mut res = (h.div_ceil(self.patch_size), w.div_ceil(self.patch_size));
        let mut out = Vec::with_capacity(self.stages.len());
        for i in 0..self.stages.len() {
            if i > 0 {
                res = (res.0.div_ceil(2), res.1.div_ceil(2));
            }
            out.push(res);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let [h, w] = self.image_size;
        if h == 0 || w == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return bad("image size, class count and input channels must be positive".into());
        }
        if self.patch_size == 0 || self.mlp_ratio == 0 {
            return bad("patch size and mlp ratio must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            WindowSet::new(s.windows.clone())?;
            let n_win = s.windows.len();
            if s.depth == 0 || s.depth % 2 != 0 {
                return bad(format!("stage {i}: depth {} must be a positive even number", s.depth));
            }
            if s.heads == 0 || s.heads % n_win != 0 {
                return bad(format!("stage {i}: {} heads do not split into {n_win} window groups", s.heads));
            }
            if s.channels % s.heads != 0 {
                return bad(format!("stage {i}: {} channels do not split into {} heads", s.channels, s.heads));
            }
            match self.dmsw_mode {
                DmswMode::Dynamic if s.channels % (2 * n_win) != 0 => {
                    return bad(format!(
                        "stage {i}: {} channels must be divisible by 2 * {n_win} for dynamic weighting",
                        s.channels
                    ));
                }
                _ => {}
            }
            if i > 0 && s.channels != 2 * self.stages[i - 1].channels {
                return bad(format!(
                    "stage {i}: patch merging doubles channels, expected {}",
                    2 * self.stages[i - 1].channels
                ));
            }
        }
        Ok(())
    }

    /// Additionally requires the reference per-head width of 32.
    pub fn validate_reference(&self) -> Result<()> {
        self.validate()?;
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels != s.heads * REFERENCE_HEAD_DIM {
                return Err(Error::Config(format!(
                    "stage {i}: {} channels with {} heads is not {REFERENCE_HEAD_DIM} per head",
                    s.channels, s.heads
                )));
            }
        }
        Ok(())
    }
}

/// Per-stage windows clamped to the stage resolution.
pub fn clamp_windows(nominal: &WindowSet, height: usize, width: usize) -> WindowSet {
    nominal.clamp(height, width)
}

#[derive(Debug, Clone)]
pub struct PatchEmbed<T> {
    pub patch: usize,
    pub proj: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Element> PatchEmbed<T> {
    /// `[H, W, Cin]` to `[H/p, W/p, C]`: each `p x p` patch is flattened in
    /// (row, column, channel) order, projected, then normalized.
    pub fn forward(&self, image: &Var<T>) -> Result<Var<T>> {
        let [h, w, c] = *image.shape() else {
            return Err(Error::InvalidShape {
                shape: image.shape().to_vec(),
                reason: "image must be [H, W, C]".into(),
            });
        };
        let p = self.patch;
        if self.proj.fan_in() != p * p * c {
            return Err(Error::ShapeMismatch {
                op: "patch_embed",
                lhs: image.shape().to_vec(),
                rhs: self.proj.weight.shape().to_vec(),
            });
        }
        let (hp, wp) = (h.div_ceil(p), w.div_ceil(p));
        let x = image.pad_end(0, hp * p - h)?.pad_end(1, wp * p - w)?;
        let patches = x
            .reshape([hp, p, wp, p, c])?
            .permute(&[0, 2, 1, 3, 4])?
            .reshape([hp, wp, p * p * c])?;
        self.norm.forward(&self.proj.forward(&patches)?)
    }
}

impl<T: Element> Module<T> for PatchEmbed<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.proj.visit(f);
        self.norm.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct PatchMerge<T> {
    pub norm: LayerNorm<T>,
    /// `4C -> 2C`, no bias.
    pub reduction: Linear<T>,
}

impl<T: Element> PatchMerge<T> {
    /// `[H, W, C]` to `[H/2, W/2, 2C]`. Each 2×2 neighborhood is concatenated
    /// as (top-left, bottom-left, top-right, bottom-right).
    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let [h, w, c] = *x.shape() else {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "patch merging expects [H, W, C]".into(),
            });
        };
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let x = x.pad_end(0, 2 * h2 - h)?.pad_end(1, 2 * w2 - w)?;
        let grouped = x
            .reshape([h2, 2, w2, 2, c])?
            .permute(&[0, 2, 3, 1, 4])?
            .reshape([h2, w2, 4 * c])?;
        self.reduction.forward(&self.norm.forward(&grouped)?)
    }
}

impl<T: Element> Module<T> for PatchMerge<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.norm.visit(f);
        self.reduction.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.reduction.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Element> Mlp<T> {
    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

impl<T: Element> Module<T> for Mlp<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// One transformer block around the dynamic window module.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub name: String,
    pub resolution: (usize, usize),
    /// Windows clamped to `resolution`.
    pub windows: WindowSet,
    pub shifted: bool,
    pub norm1: LayerNorm<T>,
    pub attn: MswMsaParams<T>,
    pub dmsw: DmswParams<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Element> Block<T> {
    /// `ẑ = DWM(LN(z)) + z`, then `z' = MLP(LN(ẑ)) + ẑ`.
    pub fn forward(&self, z: &Var<T>) -> Result<Var<T>> {
        let [h, w, _] = *z.shape() else {
            return Err(Error::InvalidShape {
                shape: z.shape().to_vec(),
                reason: "block expects [H, W, C]".into(),
            });
        };
        if (h, w) != self.resolution {
            return Err(Error::ShapeMismatch {
                op: "block",
                lhs: z.shape().to_vec(),
                rhs: vec![self.resolution.0, self.resolution.1],
            });
        }
        let attended = dwm_forward(&self.norm1.forward(z)?, &self.attn, &self.dmsw, &self.windows, self.shifted)?;
        let z_hat = attended.add(z)?;
        self.mlp.forward(&self.norm2.forward(&z_hat)?)?.add(&z_hat)
    }

    pub fn channels(&self) -> usize {
        self.attn.channels()
    }
}

impl<T: Element> Module<T> for Block<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.norm1.visit(f);
        self.attn.visit(f);
        self.dmsw.visit(f);
        self.norm2.visit(f);
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_mut(f);
        self.attn.visit_mut(f);
        self.dmsw.visit_mut(f);
        self.norm2.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

/// Runs a plain block followed by its shifted twin.
pub fn dw_block_pair<T: Element>(x: &Var<T>, plain: &Block<T>, shifted: &Block<T>) -> Result<Var<T>> {
    if plain.shifted || !shifted.shifted {
        return Err(Error::Params("a block pair is an unshifted block then a shifted one".into()));
    }
    shifted.forward(&plain.forward(x)?)
}

#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub resolution: (usize, usize),
    pub channels: usize,
    pub merge: Option<PatchMerge<T>>,
    pub blocks: Vec<Block<T>>,
}

impl<T: Element> Module<T> for Stage<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        if let Some(m) = &self.merge {
            m.visit(f);
        }
        for b in &self.blocks {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = &mut self.merge {
            m.visit_mut(f);
        }
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}

/// One line of a shape trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    /// Effective windows for attention blocks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<usize>>,
}

impl std::fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        write!(f, "{:<22} {:>14} -> {:<14}", self.name, dims(&self.input), dims(&self.output))?;
        if let Some(w) = &self.windows {
            write!(f, " windows={w:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub embed: PatchEmbed<T>,
    pub stages: Vec<Stage<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Element> Model<T> {
    /// Builds a model with parameters drawn deterministically from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_with(config, &mut Init::new(seed))
    }

    /// Same architecture with all weights zero, for shape and cost analysis.
    pub fn skeleton(config: &ModelConfig) -> Result<Self> {
        Self::build_with(config, &mut Init::shapes_only())
    }

    fn build_with(config: &ModelConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let p = config.patch_size;
        let c1 = config.stages[0].channels;
        let embed = PatchEmbed {
            patch: p,
            proj: Linear::init(init, "embed.proj", p * p * config.in_channels, c1, true)?,
            norm: LayerNorm::init(init, "embed.norm", c1)?,
        };
        let resolutions = config.stage_resolutions();
        let mut stages = Vec::with_capacity(config.stages.len());
        for (si, (sc, &res)) in config.stages.iter().zip(&resolutions).enumerate() {
            let c = sc.channels;
            let merge = if si == 0 {
                None
            } else {
                let prev = config.stages[si - 1].channels;
                Some(PatchMerge {
                    norm: LayerNorm::init(init, &format!("stages.{si}.merge.norm"), 4 * prev)?,
                    reduction: Linear::init(init, &format!("stages.{si}.merge.reduction"), 4 * prev, c, false)?,
                })
            };
            let windows = clamp_windows(&WindowSet::new(sc.windows.clone())?, res.0, res.1);
            let mut blocks = Vec::with_capacity(sc.depth);
            for bi in 0..sc.depth {
                let name = format!("stages.{si}.blocks.{bi}");
                let hidden = config.mlp_ratio * c;
                blocks.push(Block {
                    resolution: res,
                    windows: windows.clone(),
                    shifted: bi % 2 == 1,
                    norm1: LayerNorm::init(init, &format!("{name}.norm1"), c)?,
                    attn: MswMsaParams::init(init, &format!("{name}.attn"), c, sc.heads, &windows)?,
                    dmsw: DmswParams::init(init, &format!("{name}.dmsw"), c, windows.len(), config.dmsw_mode)?,
                    norm2: LayerNorm::init(init, &format!("{name}.norm2"), c)?,
                    mlp: Mlp {
                        fc1: Linear::init(init, &format!("{name}.mlp.fc1"), c, hidden, true)?,
                        fc2: Linear::init(init, &format!("{name}.mlp.fc2"), hidden, c, true)?,
                    },
                    name,
                });
            }
            stages.push(Stage {
                resolution: res,
                channels: c,
                merge,
                blocks,
            });
        }
        let last = config.stages.last().expect("validated").channels;
        Ok(Model {
            config: config.clone(),
            embed,
            stages,
            norm: LayerNorm::init(init, "norm", last)?,
            head: Linear::init(init, "head", last, config.num_classes, true)?,
        })
    }

    pub fn named_params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let [h, w] = self.config.image_size;
        if shape != [h, w, self.config.in_channels] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: shape.to_vec(),
                rhs: vec![h, w, self.config.in_channels],
            });
        }
        Ok(())
    }

    /// Logits `[num_classes]` for an image already living on a tape.
    pub fn forward_var(&self, image: &Var<T>) -> Result<Var<T>> {
        self.forward_impl(image, &mut |_| {})
    }

    fn forward_impl(&self, image: &Var<T>, trace: &mut dyn FnMut(TraceEntry)) -> Result<Var<T>> {
        self.check_image(image.shape())?;
        let mut record = |name: &str, input: &Var<T>, output: &Var<T>, windows: Option<&WindowSet>| {
            trace(TraceEntry {
                name: name.to_string(),
                input: input.shape().to_vec(),
                output: output.shape().to_vec(),
                windows: windows.map(|w| w.effective().to_vec()),
            })
        };
        let mut x = self.embed.forward(image)?;
        record("patch_embed", image, &x, None);
        for (si, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                let y = m.forward(&x)?;
                record(&format!("stages.{si}.merge"), &x, &y, None);
                x = y;
            }
            for block in &stage.blocks {
                let y = block.forward(&x)?;
                record(&block.name, &x, &y, Some(&block.windows));
                x = y;
            }
        }
        let pooled = self.norm.forward(&x)?.global_avg_pool()?;
        record("norm+pool", &x, &pooled, None);
        let logits = self.head.forward(&pooled)?.reshape([self.config.num_classes])?;
        record("head", &pooled, &logits, None);
        Ok(logits)
    }

    /// Inference forward pass: `[H, W, 3]` image to `[num_classes]` logits.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        Ok(self.forward_var(&tape.constant(image.clone()))?.value().clone())
    }

    /// Inference forward pass that also records every layer's shapes.
    pub fn forward_traced(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<TraceEntry>)> {
        let tape = Tape::inference();
        let mut entries = Vec::new();
        let logits = self.forward_impl(&tape.constant(image.clone()), &mut |e| entries.push(e))?;
        Ok((logits.value().clone(), entries))
    }

    /// Shape trace derived from the architecture alone, without running it.
    pub fn trace(&self) -> Vec<TraceEntry> {
        let cfg = &self.config;
        let [h, w] = cfg.image_size;
        let entry = |name: String, input: Vec<usize>, output: Vec<usize>, windows: Option<Vec<usize>>| TraceEntry {
            name,
            input,
            output,
            windows,
        };
        let mut out = Vec::new();
        let first = &self.stages[0];
        let mut shape = vec![first.resolution.0, first.resolution.1, first.channels];
        out.push(entry("patch_embed".into(), vec![h, w, cfg.in_channels], shape.clone(), None));
        for (si, stage) in self.stages.iter().enumerate() {
            let next = vec![stage.resolution.0, stage.resolution.1, stage.channels];
            if stage.merge.is_some() {
                out.push(entry(format!("stages.{si}.merge"), shape.clone(), next.clone(), None));
            }
            shape = next;
            for b in &stage.blocks {
                out.push(entry(b.name.clone(), shape.clone(), shape.clone(), Some(b.windows.effective().to_vec())));
            }
        }
        let c = *shape.last().expect("rank 3");
        out.push(entry("norm+pool".into(), shape, vec![1, 1, c], None));
        out.push(entry("head".into(), vec![1, 1, c], vec![cfg.num_classes], None));
        out
    }

    /// Writes every parameter as `<name>.dwt` plus a `manifest.json` listing
    /// names and shapes in build order.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for p in self.named_params() {
            io::write(dir.join(format!("{}.dwt", p.name())), p.value())?;
            manifest.push(ManifestEntry {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
            });
        }
        let manifest = Manifest {
            precision: T::PRECISION,
            params: manifest,
        };
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
    }

    /// Builds the architecture of `config` and fills it from a checkpoint.
    /// Tensors stored at another precision are converted.
    pub fn load_checkpoint(config: &ModelConfig, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut model = Model::build(config, 0)?;
        let listed: std::collections::BTreeMap<&str, &[usize]> =
            manifest.params.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
        let mut failure = None;
        model.visit_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let result = (|| -> Result<()> {
                let shape = listed
                    .get(p.name())
                    .ok_or_else(|| Error::Params(format!("checkpoint lacks {}", p.name())))?;
                if *shape != p.shape() {
                    return Err(Error::Params(format!(
                        "{}: manifest shape {shape:?}, model needs {:?}",
                        p.name(),
                        p.shape()
                    )));
                }
                let t = io::read(dir.join(format!("{}.dwt", p.name())))?;
                if t.shape() != p.shape() {
                    return Err(Error::Params(format!(
                        "{}: stored shape {:?} disagrees with the manifest",
                        p.name(),
                        t.shape()
                    )));
                }
                p.set(t.cast())
            })();
            failure = result.err();
        });
        match failure {
            Some(e) => Err(e),
            None if listed.len() != model.named_params().len() => Err(Error::Params(format!(
                "checkpoint lists {} tensors, model has {}",
                listed.len(),
                model.named_params().len()
            ))),
            None => Ok(model),
        }
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    precision: crate::tensor::Precision,
    params: Vec<ManifestEntry>,
}

impl<T: Element> Module<T> for Model<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.embed.visit(f);
        for s in &self.stages {
            s.visit(f);
        }
        self.norm.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.embed.visit_mut(f);
        for s in &mut self.stages {
            s.visit_mut(f);
        }
        self.norm.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w] = cfg.image_size;
        Tensor::from_fn([h, w, cfg.in_channels], |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn reference_configs_are_valid() {
        ModelConfig::dw_t().validate_reference().unwrap();
        ModelConfig::dw_b().validate_reference().unwrap();
        ModelConfig::single_window_t(7).validate_reference().unwrap();
        ModelConfig::toy().validate().unwrap();
        assert!(ModelConfig::toy().validate_reference().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut odd = ModelConfig::toy();
        odd.stages[0].depth = 3;
        assert!(odd.validate().is_err());
        let mut heads = ModelConfig::toy();
        heads.stages[0].heads = 3;
        assert!(heads.validate().is_err());
        let mut channels = ModelConfig::toy();
        channels.stages[1].channels = 48;
        assert!(channels.validate().is_err());
        let mut windows = ModelConfig::toy();
        windows.stages[0].windows.clear();
        assert!(windows.validate().is_err());
        let mut dyn_width = ModelConfig::toy();
        dyn_width.stages = vec![StageConfig { channels: 6, heads: 2, windows: vec![2, 4], depth: 2 }];
        assert!(dyn_width.validate().is_err());
        assert!(dyn_width.clone().with_mode(DmswMode::Off).validate().is_ok());
    }

    #[test]
    fn config_json_forms() {
        let cfg = ModelConfig::from_json(
            r#"{"image_size": 16, "num_classes": 10, "dmsw_mode": "equal",
                "stages": [{"channels": 16, "heads": 2, "windows": [2, 4], "depth": 2}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.image_size, [16, 16]);
        assert_eq!(cfg.dmsw_mode, DmswMode::EqualWeight);
        assert_eq!(cfg.mlp_ratio, 4);
        let back = ModelConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(ModelConfig::from_json(r#"{"image_size": 16}"#).is_err());
    }

    #[test]
    fn clamping_follows_stage_resolution() {
        let w = WindowSet::new(vec![7, 14, 21]).unwrap();
        assert_eq!(clamp_windows(&w, 14, 14).effective(), &[7, 14, 14]);
        assert_eq!(clamp_windows(&w, 7, 7).effective(), &[7, 7, 7]);
        assert_eq!(clamp_windows(&w, 56, 56).effective(), &[7, 14, 21]);
    }

    #[test]
    fn patch_embed_matches_gather_and_affine() {
        let mut cfg = ModelConfig::toy();
        cfg.image_size = [8, 8];
        let model = Model::<f64>::build(&cfg, 3).unwrap();
        let img = image(&cfg, 4);
        let tape = Tape::inference();
        let y = model.embed.forward(&tape.constant(img.clone())).unwrap();
        assert_eq!(y.shape(), &[2, 2, 16]);
        let w = model.embed.proj.weight.value();
        let b = model.embed.proj.bias.as_ref().unwrap().value();
        for py in 0..2 {
            for px in 0..2 {
                let mut row = [0.0; 16];
                for (o, r) in row.iter_mut().enumerate() {
                    let mut acc = b.data()[o];
                    let mut k = 0;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            for c in 0..3 {
                                acc += img.at(&[py * 4 + dy, px * 4 + dx, c]) * w.at(&[k, o]);
                                k += 1;
                            }
                        }
                    }
                    *r = acc;
                }
                let mean = row.iter().sum::<f64>() / 16.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
                for (o, r) in row.iter().enumerate() {
                    let want = (r - mean) / (var + 1e-5).sqrt();
                    assert!((y.value().at(&[py, px, o]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_image_embeds_to_constant_map() {
        let cfg = ModelConfig::toy();
        let model = Model::<f64>::build(&cfg, 5).unwrap();
        let img = Tensor::full([16, 16, 3], 0.7).unwrap();
        let y = model.embed.forward(&Tape::inference().constant(img)).unwrap();
        let first = &y.value().data()[..16];
        for chunk in y.value().data().chunks(16) {
            assert_eq!(chunk, first);
        }
    }

    #[test]
    fn patch_merge_regroups_neighborhoods() {
        let mut init = Init::new(0);
        let merge = PatchMerge::<f64> {
            norm: LayerNorm::init(&mut init, "n", 4).unwrap(),
            reduction: Linear::init(&mut init, "r", 4, 2, false).unwrap(),
        };
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = merge.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        // grouped order is (0,0), (1,0), (0,1), (1,1) = [1, 3, 2, 4]
        let grouped = [1.0, 3.0, 2.0, 4.0];
        let mean = 2.5;
        let rstd = 1.0 / (1.25f64 + 1e-5).sqrt();
        let w = merge.reduction.weight.value();
        for o in 0..2 {
            let want: f64 = (0..4).map(|k| (grouped[k] - mean) * rstd * w.at(&[k, o])).sum();
            assert!((y.value().at(&[0, 0, o]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_merge_matches_gather_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut init = Init::new(1);
        let merge = PatchMerge::<f64> {
            norm: LayerNorm::init(&mut init, "n", 8).unwrap(),
            reduction: Linear::init(&mut init, "r", 8, 4, false).unwrap(),
        };
        let xt = Tensor::from_fn([4, 4, 2], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let y = merge.forward(&Tape::inference().constant(xt.clone())).unwrap();
        let w = merge.reduction.weight.value();
        for i in 0..2 {
            for j in 0..2 {
                let mut g = Vec::new();
                for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    for c in 0..2 {
                        g.push(xt.at(&[2 * i + dy, 2 * j + dx, c]));
                    }
                }
                let mean = g.iter().sum::<f64>() / 8.0;
                let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                for o in 0..4 {
                    let want: f64 = (0..8).map(|k| (g[k] - mean) / (var + 1e-5).sqrt() * w.at(&[k, o])).sum();
                    assert!((y.value().at(&[i, j, o]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zeroed_residual_branches_make_pairs_identity() {
        let cfg = ModelConfig::toy();
        let mut model = Model::<f64>::build(&cfg, 6).unwrap();
        for b in &mut model.stages[0].blocks {
            // zero the last layer of each residual branch
            for p in [&mut b.mlp.fc2.weight, b.mlp.fc2.bias.as_mut().unwrap()] {
                let z = Tensor::zeros(p.shape().to_vec()).unwrap();
                p.set(z).unwrap();
            }
            for l in [&mut b.dmsw.fc1, b.dmsw.fc4.as_mut().unwrap()] {
                l.weight.set(Tensor::zeros(l.weight.shape().to_vec()).unwrap()).unwrap();
                let bias = l.bias.as_mut().unwrap();
                bias.set(Tensor::zeros(bias.shape().to_vec()).unwrap()).unwrap();
            }
        }
        let stage = &model.stages[0];
        let x = Tape::inference().constant(image(&ModelConfig::toy().with_image_size(4, 4), 7).map(|v| v * 2.0));
        let x = x.pad_end(2, 13).unwrap();
        let y = dw_block_pair(&x, &stage.blocks[0], &stage.blocks[1]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.value().max_abs_diff(x.value()).unwrap() < 1e-12);
        assert!(dw_block_pair(&x, &stage.blocks[1], &stage.blocks[0]).is_err());
    }

    #[test]
    fn stage_resolution_law() {
        let model = Model::<f32>::build(&ModelConfig::toy(), 0).unwrap();
        let trace = model.trace();
        assert_eq!(trace[0].output, vec![4, 4, 16]);
        assert_eq!(trace.iter().filter(|e| e.windows.is_some()).count(), 4);
        let merge = trace.iter().find(|e| e.name == "stages.1.merge").unwrap();
        assert_eq!(merge.output, vec![2, 2, 32]);
        assert_eq!(trace.last().unwrap().output, vec![10]);
    }

    #[test]
    fn recorded_trace_matches_structural_trace() {
        let cfg = ModelConfig::toy();
        let model = Model::<f64>::build(&cfg, 2).unwrap();
        let (logits, recorded) = model.forward_traced(&image(&cfg, 9)).unwrap();
        assert_eq!(logits.shape(), &[10]);
        assert_eq!(recorded, model.trace());
    }

    #[test]
    fn build_and_forward_are_deterministic() {
        let cfg = ModelConfig::toy();
        let a = Model::<f32>::build(&cfg, 11).unwrap();
        let b = Model::<f32>::build(&cfg, 11).unwrap();
        let pa: Vec<_> = a.named_params().into_iter().cloned().collect();
        let pb: Vec<_> = b.named_params().into_iter().cloned().collect();
        assert_eq!(pa, pb);
        let img = image(&cfg, 1).cast::<f32>();
        let la = a.forward(&img).unwrap();
        let lb = b.forward(&img).unwrap();
        assert!(la.data().iter().zip(lb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.forward(&Tensor::zeros([8, 8, 3]).unwrap()).is_err());
    }

    #[test]
    fn odd_inputs_are_padded() {
        let cfg = ModelConfig::toy().with_image_size(18, 13);
        let model = Model::<f64>::build(&cfg, 0).unwrap();
        let (logits, trace) = model.forward_traced(&image(&cfg, 3)).unwrap();
        assert_eq!(logits.shape(), &[10]);
        assert_eq!(trace[0].output, vec![5, 4, 16]);
        assert_eq!(trace, model.trace());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = ModelConfig::toy();
        let model = Model::<f32>::build(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save_checkpoint(dir.path()).unwrap();
        let loaded = Model::<f32>::load_checkpoint(&cfg, dir.path()).unwrap();
        let img = image(&cfg, 2).cast::<f32>();
        assert_eq!(model.forward(&img).unwrap(), loaded.forward(&img).unwrap());
        std::fs::write(dir.path().join("head.weight.dwt"), b"DWT0garbage").unwrap();
        assert!(Model::<f32>::load_checkpoint(&cfg, dir.path()).is_err());
    }
}
