//! Exact parameter and FLOP accounting.
//!
//! FLOPs follow the multiply-accumulate convention: one MAC is one FLOP and
//! bias additions are free. Only linear layers and the two attention products
//! make up the headline figure. Norms, activations, softmax, pooling, branch
//! weighting and the extra attention work on zero-padded windows are still
//! tallied, under "uncounted".
//!
//! The closed-form block costs are
//!
//! ```text
//! msw  = 4·hw·C² + 2·hw·(C/n)·Σ win_i²
//! dmsw = C²/n + hw·C²/n + hw·C²/n²
//! ```
//!
//! and [`compare`] checks them term by term against the measured walk.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dwm::DmswMode;
use crate::error::{Error, Result};
use crate::model::{Block, Model};
use crate::nn::Linear;
use crate::tensor::{Element, Param};
use crate::window::Padding;

/// One node of the parameter tree. Children partition the parent exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamNode {
    pub name: String,
    pub count: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ParamNode>,
}

impl ParamNode {
    fn insert(&mut self, path: &[&str], count: u64) {
        self.count += count;
        let Some((head, rest)) = path.split_first() else {
            return;
        };
        let pos = match self.children.iter().position(|c| c.name == *head) {
            Some(p) => p,
            None => {
                self.children.push(ParamNode {
                    name: head.to_string(),
                    count: 0,
                    children: Vec::new(),
                });
                self.children.len() - 1
            }
        };
        self.children[pos].insert(rest, count);
    }

    /// Follows a dotted path such as `stages.0.blocks`.
    pub fn get(&self, path: &str) -> Option<&ParamNode> {
        path.split('.')
            .try_fold(self, |node, seg| node.children.iter().find(|c| c.name == seg))
    }

    /// True when every node's count equals the sum of its children.
    pub fn is_consistent(&self) -> bool {
        self.children.is_empty()
            || (self.children.iter().map(|c| c.count).sum::<u64>() == self.count
                && self.children.iter().all(ParamNode::is_consistent))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub total: u64,
    pub tree: ParamNode,
    /// Totals per layer kind across all blocks, e.g. `attn.qkv` or `dmsw.fc3`.
    pub by_component: BTreeMap<String, u64>,
}

/// Component key of a parameter name: the stage and block prefix, indices
/// and the trailing `weight`/`bias` are dropped.
fn component_key(name: &str) -> String {
    let mut segs: Vec<&str> = name.split('.').collect();
    let mut i = 0;
    while i + 1 < segs.len() && matches!(segs[i], "stages" | "blocks") && segs[i + 1].parse::<usize>().is_ok() {
        i += 2;
    }
    segs.drain(..i);
    if segs.len() > 1 && matches!(segs.last(), Some(&("weight" | "bias"))) {
        segs.pop();
    }
    segs.retain(|s| s.parse::<usize>().is_err());
    segs.join(".")
}

pub fn count_params<T: Element>(model: &Model<T>) -> ParamReport {
    let mut tree = ParamNode {
        name: "model".into(),
        count: 0,
        children: Vec::new(),
    };
    let mut by_component = BTreeMap::new();
    for p in model.named_params() {
        let n = p.numel() as u64;
        let path: Vec<&str> = p.name().split('.').collect();
        tree.insert(&path, n);
        *by_component.entry(component_key(p.name())).or_insert(0) += n;
    }
    ParamReport {
        total: tree.count,
        tree,
        by_component,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopKind {
    Linear,
    /// `QKᵀ` and `attn·V` over the real tokens.
    Attention,
    /// The same products spent on zero-padded tokens.
    AttentionPadding,
    Norm,
    Activation,
    Softmax,
    Pool,
    Weighting,
}

impl FlopKind {
    pub fn counted(self) -> bool {
        matches!(self, FlopKind::Linear | FlopKind::Attention)
    }

    /// Whether the kind is computed by matrix products.
    pub fn is_product(self) -> bool {
        matches!(self, FlopKind::Linear | FlopKind::Attention | FlopKind::AttentionPadding)
    }
}

/// Which closed-form term a measured item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Msw,
    Dmsw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopItem {
    pub name: String,
    pub kind: FlopKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term: Option<Term>,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockFlops {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub windows: Vec<usize>,
    pub items: Vec<FlopItem>,
}

impl BlockFlops {
    pub fn term(&self, term: Term) -> u64 {
        self.items.iter().filter(|i| i.term == Some(term)).map(|i| i.flops).sum()
    }

    pub fn counted(&self) -> u64 {
        sum_kind(&self.items, true)
    }

    pub fn uncounted(&self) -> u64 {
        sum_kind(&self.items, false)
    }
}

fn sum_kind(items: &[FlopItem], counted: bool) -> u64 {
    items.iter().filter(|i| i.kind.counted() == counted).map(|i| i.flops).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub convention: String,
    pub image_size: [usize; 2],
    pub mode: DmswMode,
    /// Items outside the blocks: embedding, merging, head.
    pub items: Vec<FlopItem>,
    pub blocks: Vec<BlockFlops>,
    pub counted: u64,
    pub uncounted: u64,
}

impl FlopReport {
    pub fn all_items(&self) -> impl Iterator<Item = &FlopItem> {
        self.items.iter().chain(self.blocks.iter().flat_map(|b| &b.items))
    }

    pub fn total_of(&self, kind: FlopKind) -> u64 {
        self.all_items().filter(|i| i.kind == kind).map(|i| i.flops).sum()
    }

    /// Counted FLOPs of the blocks whose name starts with `stages.{stage}.`,
    /// including that stage's merge layer.
    pub fn stage_counted(&self, stage: usize) -> u64 {
        let prefix = format!("stages.{stage}.");
        self.all_items()
            .filter(|i| i.kind.counted() && i.name.starts_with(&prefix))
            .map(|i| i.flops)
            .sum()
    }
}

struct Walker {
    items: Vec<FlopItem>,
}

impl Walker {
    fn push(&mut self, name: String, kind: FlopKind, term: Option<Term>, flops: usize) {
        self.items.push(FlopItem {
            name,
            kind,
            term,
            flops: flops as u64,
        });
    }

    fn linear<T: Element>(&mut self, tokens: usize, l: &Linear<T>, term: Option<Term>) {
        let [fan_in, fan_out] = *l.weight.shape() else {
            unreachable!("linear weights are rank 2")
        };
        self.push(layer_name(&l.weight), FlopKind::Linear, term, tokens * fan_in * fan_out);
    }
}

fn layer_name<T: Element>(p: &Param<T>) -> String {
    p.name().trim_end_matches(".weight").to_string()
}

fn block_flops<T: Element>(block: &Block<T>) -> BlockFlops {
    let (h, w) = block.resolution;
    let hw = h * w;
    let c = block.channels();
    let n = block.windows.len();
    let attn = &block.attn;
    let group_width = c / n;
    let mut walk = Walker { items: Vec::new() };
    let name = &block.name;

    walk.push(format!("{name}.norm1"), FlopKind::Norm, None, hw * c);
    walk.linear(hw, &attn.qkv, Some(Term::Msw));
    for (i, &win) in block.windows.effective().iter().enumerate() {
        let pad = Padding::for_window(h, w, win);
        let (hp, wp) = pad.padded();
        let per_token = 2 * win * win * group_width;
        walk.push(format!("{name}.attn.branch{i}"), FlopKind::Attention, Some(Term::Msw), hw * per_token);
        if hp * wp > hw {
            walk.push(
                format!("{name}.attn.branch{i}.padding"),
                FlopKind::AttentionPadding,
                None,
                (hp * wp - hw) * per_token,
            );
        }
        let heads = attn.heads / n;
        walk.push(format!("{name}.attn.branch{i}.softmax"), FlopKind::Softmax, None, hp * wp * win * win * heads);
    }
    let d = &block.dmsw;
    walk.linear(hw, &d.fc1, Some(Term::Msw));
    if let Some(fc2) = &d.fc2 {
        walk.push(format!("{name}.dmsw.gelu1"), FlopKind::Activation, None, hw * c);
        walk.push(format!("{name}.dmsw.pool"), FlopKind::Pool, None, hw * c);
        walk.linear(1, fc2, Some(Term::Dmsw));
        walk.push(format!("{name}.dmsw.gelu2"), FlopKind::Activation, None, fc2.fan_out());
        for a in &d.alpha {
            walk.linear(1, a, Some(Term::Dmsw));
        }
        walk.push(format!("{name}.dmsw.alpha_softmax"), FlopKind::Softmax, None, c);
    }
    if let (Some(fc3), Some(fc4)) = (&d.fc3, &d.fc4) {
        walk.push(format!("{name}.dmsw.weighting"), FlopKind::Weighting, None, hw * c);
        walk.linear(hw, fc3, Some(Term::Dmsw));
        walk.linear(hw, fc4, Some(Term::Dmsw));
    }
    walk.push(format!("{name}.norm2"), FlopKind::Norm, None, hw * c);
    walk.linear(hw, &block.mlp.fc1, None);
    walk.push(format!("{name}.mlp.gelu"), FlopKind::Activation, None, hw * block.mlp.fc1.fan_out());
    walk.linear(hw, &block.mlp.fc2, None);

    BlockFlops {
        name: name.clone(),
        height: h,
        width: w,
        channels: c,
        windows: block.windows.effective().to_vec(),
        items: walk.items,
    }
}

/// Walks the model at its configured input size.
pub fn count_flops<T: Element>(model: &Model<T>) -> FlopReport {
    let cfg = &model.config;
    let mut walk = Walker { items: Vec::new() };
    let first = &model.stages[0];
    let tokens0 = first.resolution.0 * first.resolution.1;
    walk.linear(tokens0, &model.embed.proj, None);
    walk.push("embed.norm".into(), FlopKind::Norm, None, tokens0 * first.channels);
    let mut blocks = Vec::new();
    for (si, stage) in model.stages.iter().enumerate() {
        let tokens = stage.resolution.0 * stage.resolution.1;
        if let Some(m) = &stage.merge {
            walk.push(format!("stages.{si}.merge.norm"), FlopKind::Norm, None, tokens * m.reduction.fan_in());
            walk.linear(tokens, &m.reduction, None);
        }
        blocks.extend(stage.blocks.iter().map(block_flops));
    }
    let last = model.stages.last().expect("at least one stage");
    let tokens = last.resolution.0 * last.resolution.1;
    walk.push("norm".into(), FlopKind::Norm, None, tokens * last.channels);
    walk.push("pool".into(), FlopKind::Pool, None, tokens * last.channels);
    walk.linear(1, &model.head, None);

    let mut report = FlopReport {
        convention: "1 MAC = 1 FLOP; bias additions excluded".into(),
        image_size: cfg.image_size,
        mode: cfg.dmsw_mode,
        items: walk.items,
        blocks,
        counted: 0,
        uncounted: 0,
    };
    report.counted = sum_kind(&report.items, true) + report.blocks.iter().map(BlockFlops::counted).sum::<u64>();
    report.uncounted = sum_kind(&report.items, false) + report.blocks.iter().map(BlockFlops::uncounted).sum::<u64>();
    report
}

/// Closed-form block cost, exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClosedForm {
    pub msw: u128,
    pub dmsw: u128,
    pub total: u128,
}

fn exact_div(num: u128, den: u128, what: &str) -> Result<u128> {
    if den == 0 || !num.is_multiple_of(den) {
        return Err(Error::Config(format!("closed form: {what} = {num} is not divisible by {den}")));
    }
    Ok(num / den)
}

/// Evaluates the multi-scale window attention and dynamic weighting costs
/// for one block.
pub fn closed_form_dwm(h: usize, w: usize, c: usize, n_win: usize, wins: &[usize]) -> Result<ClosedForm> {
    if h == 0 || w == 0 || c == 0 || n_win == 0 || wins.len() != n_win || wins.contains(&0) {
        return Err(Error::Config(format!(
            "closed form needs positive h, w, C and {n_win} positive windows, got h={h} w={w} C={c} wins={wins:?}"
        )));
    }
    let (hw, c, n) = ((h * w) as u128, c as u128, n_win as u128);
    let group = exact_div(c, n, "C")?;
    let sum_sq: u128 = wins.iter().map(|&x| (x as u128).pow(2)).sum();
    let msw = 4 * hw * c * c + 2 * hw * group * sum_sq;
    let dmsw = exact_div((n + hw * n + hw) * c * c, n * n, "(n + hw·n + hw)·C²")?;
    Ok(ClosedForm {
        msw,
        dmsw,
        total: msw + dmsw,
    })
}

/// The closed form restricted to the layers a mode actually keeps: equal
/// weighting has no squeeze path, and with the module off only the output
/// projection (inside the attention term) remains.
pub fn closed_form_for_mode(
    h: usize,
    w: usize,
    c: usize,
    n_win: usize,
    wins: &[usize],
    mode: DmswMode,
) -> Result<ClosedForm> {
    let full = closed_form_dwm(h, w, c, n_win, wins)?;
    let (hw, c, n) = ((h * w) as u128, c as u128, n_win as u128);
    let dmsw = match mode {
        DmswMode::Dynamic => full.dmsw,
        DmswMode::EqualWeight => full.dmsw - c * c / n,
        DmswMode::Off => 0,
    };
    debug_assert!(mode != DmswMode::EqualWeight || dmsw == hw * c * c / n + hw * c * c / (n * n));
    Ok(ClosedForm {
        msw: full.msw,
        dmsw,
        total: full.msw + dmsw,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockComparison {
    pub name: String,
    pub measured_msw: u128,
    pub closed_msw: u128,
    pub measured_dmsw: u128,
    pub closed_dmsw: u128,
    pub delta_msw: i128,
    pub delta_dmsw: i128,
}

impl BlockComparison {
    pub fn matches(&self) -> bool {
        self.delta_msw == 0 && self.delta_dmsw == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub blocks: Vec<BlockComparison>,
    pub all_match: bool,
}

impl Comparison {
    pub fn mismatches(&self) -> impl Iterator<Item = &BlockComparison> {
        self.blocks.iter().filter(|b| !b.matches())
    }
}

/// Per-block deltas between measured and closed-form costs, evaluated with
/// effective windows and the unpadded token count.
pub fn compare(report: &FlopReport) -> Result<Comparison> {
    let mut blocks = Vec::with_capacity(report.blocks.len());
    for b in &report.blocks {
        let cf = closed_form_for_mode(b.height, b.width, b.channels, b.windows.len(), &b.windows, report.mode)?;
        let (mm, md) = (b.term(Term::Msw) as u128, b.term(Term::Dmsw) as u128);
        blocks.push(BlockComparison {
            name: b.name.clone(),
            measured_msw: mm,
            closed_msw: cf.msw,
            measured_dmsw: md,
            closed_dmsw: cf.dmsw,
            delta_msw: mm as i128 - cf.msw as i128,
            delta_dmsw: md as i128 - cf.dmsw as i128,
        });
    }
    let all_match = blocks.iter().all(BlockComparison::matches);
    Ok(Comparison { blocks, all_match })
}

/// Everything `analyze` reports for one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Analysis {
    pub params: ParamReport,
    pub flops: FlopReport,
    pub comparison: Comparison,
}

impl Analysis {
    pub fn of<T: Element>(model: &Model<T>) -> Result<Self> {
        let flops = count_flops(model);
        Ok(Analysis {
            params: count_params(model),
            comparison: compare(&flops)?,
            flops,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "parameters: {} ({:.2}M)", p.total, p.total as f64 / 1e6);
        fn walk(s: &mut String, node: &ParamNode, depth: usize, max: usize) {
            let _ = writeln!(s, "  {:<40} {:>12}", format!("{}{}", "  ".repeat(depth), node.name), node.count);
            if depth < max {
                for c in &node.children {
                    walk(s, c, depth + 1, max);
                }
            }
        }
        for c in &p.tree.children {
            walk(&mut s, c, 0, 2);
        }
        let _ = writeln!(s, "\nparameters by component:");
        for (k, v) in &p.by_component {
            let _ = writeln!(s, "  {k:<40} {v:>12}");
        }

        let f = &self.flops;
        let _ = writeln!(
            s,
            "\nflops at {}x{} ({}): counted {} ({:.2}G), uncounted {}",
            f.image_size[0],
            f.image_size[1],
            f.convention,
            f.counted,
            f.counted as f64 / 1e9,
            f.uncounted
        );
        let mut kinds: BTreeMap<FlopKind, u64> = BTreeMap::new();
        for i in f.all_items() {
            *kinds.entry(i.kind).or_insert(0) += i.flops;
        }
        for (k, v) in kinds {
            let tag = if k.counted() { "counted" } else { "uncounted" };
            let _ = writeln!(s, "  {:<40} {:>14}  {tag}", format!("{k:?}").to_lowercase(), v);
        }

        let _ = writeln!(s, "\nclosed form per block (delta = measured - closed):");
        let _ = writeln!(s, "  {:<22} {:>14} {:>8} {:>14} {:>8}", "block", "msw", "delta", "dmsw", "delta");
        for b in &self.comparison.blocks {
            let _ = writeln!(
                s,
                "  {:<22} {:>14} {:>8} {:>14} {:>8}",
                b.name, b.closed_msw, b.delta_msw, b.closed_dmsw, b.delta_dmsw
            );
        }
        let _ = writeln!(s, "  all matched terms agree: {}", self.comparison.all_match);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::{Init, Module};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn stage_one_closed_form() {
        let cf = closed_form_dwm(56, 56, 96, 3, &[7, 14, 21]).unwrap();
        assert_eq!(cf.msw, 253_288_448);
        // C²/n + hw·C²/n + hw·C²/n² evaluated by hand
        assert_eq!(cf.dmsw, 3072 + 3136 * 3072 + 3136 * 1024);
        assert_eq!(cf.total, cf.msw + cf.dmsw);
        let tiny = closed_form_dwm(1, 1, 8, 1, &[1]).unwrap();
        assert_eq!(tiny.msw, 4 * 64 + 2 * 8);
        assert!(closed_form_dwm(2, 2, 10, 3, &[1, 1, 1]).is_err());
        assert!(closed_form_dwm(2, 2, 12, 3, &[1, 1]).is_err());
    }

    #[test]
    fn single_linear_costs() {
        let mut init = Init::new(0);
        let l = Linear::<f32>::init(&mut init, "x", 96, 96, true).unwrap();
        assert_eq!(l.param_count(), 96 * 96 + 96);
        let mut w = Walker { items: Vec::new() };
        w.linear(56 * 56, &l, None);
        assert_eq!(w.items[0].flops, 28_901_376);
    }

    #[test]
    fn param_tree_is_consistent() {
        let m = Model::<f32>::build(&ModelConfig::toy(), 0).unwrap();
        let r = count_params(&m);
        assert!(r.tree.is_consistent());
        assert_eq!(r.total as usize, m.param_count());
        assert_eq!(r.by_component.values().sum::<u64>(), r.total);
        assert_eq!(r.by_component["attn.qkv"], 2 * (16 * 48 + 48) + 2 * (32 * 96 + 96));
        assert_eq!(r.tree.get("head").unwrap().count, 32 * 10 + 10);
        assert!(r.tree.get("stages.1.merge").is_some());
    }

    #[test]
    fn component_keys() {
        assert_eq!(component_key("stages.0.blocks.3.dmsw.alpha.1.weight"), "dmsw.alpha");
        assert_eq!(component_key("stages.0.blocks.3.attn.rel_bias.2"), "attn.rel_bias");
        assert_eq!(component_key("head.bias"), "head");
        assert_eq!(component_key("stages.1.merge.norm.weight"), "merge.norm");
    }

    #[test]
    fn toy_matches_closed_form_in_every_mode() {
        for mode in [DmswMode::Dynamic, DmswMode::EqualWeight, DmswMode::Off] {
            let m = Model::<f32>::build(&ModelConfig::toy().with_mode(mode), 1).unwrap();
            let cmp = compare(&count_flops(&m)).unwrap();
            assert!(cmp.all_match, "{mode}: {:?}", cmp.mismatches().collect::<Vec<_>>());
        }
    }

    #[test]
    fn missized_fc3_is_flagged() {
        let mut m = Model::<f32>::build(&ModelConfig::toy(), 1).unwrap();
        let fc3 = m.stages[0].blocks[0].dmsw.fc3.as_mut().unwrap();
        fc3.weight = Param::new(fc3.weight.name(), Tensor::zeros([8, 9]).unwrap());
        let cmp = compare(&count_flops(&m)).unwrap();
        assert!(!cmp.all_match);
        let bad: Vec<_> = cmp.mismatches().map(|b| b.name.as_str()).collect();
        assert_eq!(bad, ["stages.0.blocks.0"]);
        assert_eq!(cmp.blocks[0].delta_dmsw, 16 * 8);
    }

    #[test]
    fn structural_count_agrees_with_tape() {
        for cfg in [
            ModelConfig::toy(),
            ModelConfig::toy().with_image_size(20, 28),
            ModelConfig::toy().with_mode(DmswMode::EqualWeight).with_image_size(12, 24),
        ] {
            let m = Model::<f32>::build(&cfg, 2).unwrap();
            let r = count_flops(&m);
            let products: u64 = r.all_items().filter(|i| i.kind.is_product()).map(|i| i.flops).sum();
            let tape = Tape::<f32>::inference();
            let [h, w] = cfg.image_size;
            m.forward_var(&tape.constant(Tensor::ones([h, w, 3]).unwrap())).unwrap();
            assert_eq!(tape.macs(), products, "{:?}", cfg.image_size);
        }
    }

    #[test]
    fn flops_are_additive_and_linear_in_depth() {
        let cfg = ModelConfig::toy();
        let r = count_flops(&Model::<f32>::build(&cfg, 0).unwrap());
        let outside: u64 = r.items.iter().filter(|i| i.kind.counted()).map(|i| i.flops).sum();
        assert_eq!(r.counted, outside + r.blocks.iter().map(BlockFlops::counted).sum::<u64>());

        let mut deep = cfg.clone();
        deep.stages[1].depth = 4;
        let rd = count_flops(&Model::<f32>::build(&deep, 0).unwrap());
        let blocks = |r: &FlopReport, s: &str| -> u64 {
            r.blocks.iter().filter(|b| b.name.starts_with(s)).map(BlockFlops::counted).sum()
        };
        assert_eq!(blocks(&rd, "stages.1."), 2 * blocks(&r, "stages.1."));
        assert_eq!(blocks(&rd, "stages.0."), blocks(&r, "stages.0."));
        let dwm_params = |m: &Model<f32>| -> usize {
            m.stages[1].blocks.iter().map(|b| b.attn.param_count() + b.dmsw.param_count()).sum()
        };
        assert_eq!(
            dwm_params(&Model::build(&deep, 0).unwrap()),
            2 * dwm_params(&Model::build(&cfg, 0).unwrap())
        );
    }

    #[test]
    fn analysis_renders() {
        let a = Analysis::of(&Model::<f32>::build(&ModelConfig::toy(), 0).unwrap()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json["params"]["total"], a.params.total);
        assert!(a.to_table().contains("all matched terms agree: true"));
    }
}
