//! Brute-force references for the main code paths.
//!
//! Everything here works on plain `f64` slices with explicit loops and shares
//! no arithmetic with the tensor, window, attention or dwm modules. Parameter
//! values are read out of a model once and then treated as raw numbers.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dwm::DmswMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{Linear, Module};
use crate::tensor::Element;

/// Outcome of comparing one computed result with its oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub case: String,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    /// Whether `tolerance` bounds the absolute or the relative difference.
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    fn diffs(got: &[f64], want: &[f64], floor: f64) -> (f64, f64) {
        if got.len() != want.len() {
            return (f64::INFINITY, f64::INFINITY);
        }
        got.iter().zip(want).fold((0.0, 0.0), |(ma, mr), (&a, &b)| {
            let d = (a - b).abs();
            let scale = a.abs().max(b.abs());
            let r = if d == 0.0 { 0.0 } else { d / scale.max(floor) };
            (f64::max(ma, d), f64::max(mr, r))
        })
    }

    /// Passes when the largest absolute difference is within `tolerance`.
    pub fn absolute(case: impl Into<String>, got: &[f64], want: &[f64], tolerance: f64) -> Self {
        let (max_abs, max_rel) = Self::diffs(got, want, 0.0);
        OracleReport {
            case: case.into(),
            max_abs,
            max_rel,
            tolerance,
            relative: false,
            pass: max_abs <= tolerance,
        }
    }

    /// Passes when the largest relative difference is within `tolerance`.
    pub fn relative(case: impl Into<String>, got: &[f64], want: &[f64], tolerance: f64) -> Self {
        Self::relative_floor(case, got, want, tolerance, 0.0)
    }

    /// Like [`OracleReport::relative`], but the denominator never drops below
    /// `floor`, so values that are both essentially zero compare absolutely.
    pub fn relative_floor(case: impl Into<String>, got: &[f64], want: &[f64], tolerance: f64, floor: f64) -> Self {
        let (max_abs, max_rel) = Self::diffs(got, want, floor);
        OracleReport {
            case: case.into(),
            max_abs,
            max_rel,
            tolerance,
            relative: true,
            pass: max_rel <= tolerance,
        }
    }

    /// A pass/fail outcome with no numeric comparison behind it.
    pub fn check(case: impl Into<String>, pass: bool) -> Self {
        OracleReport {
            case: case.into(),
            max_abs: 0.0,
            max_rel: 0.0,
            tolerance: 0.0,
            relative: false,
            pass,
        }
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let metric = if self.relative { "rel" } else { "abs" };
        write!(
            f,
            "{verdict} {:<44} max_abs={:.3e} max_rel={:.3e} tol({metric})={:.1e}",
            self.case, self.max_abs, self.max_rel, self.tolerance
        )
    }
}

/// A dense layer as raw numbers: `weight` is `[fan_in, fan_out]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn from_linear<T: Element>(l: &Linear<T>) -> Self {
        let [fan_in, fan_out] = *l.weight.shape() else {
            unreachable!("linear weights are rank 2")
        };
        Dense {
            fan_in,
            fan_out,
            weight: l.weight.value().data().iter().map(|v| v.as_f64()).collect(),
            bias: l
                .bias
                .as_ref()
                .map(|b| b.value().data().iter().map(|v| v.as_f64()).collect()),
        }
    }

    /// Applies the layer to `rows` rows of `fan_in` values.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len() % self.fan_in, 0, "dense input width");
        let rows = x.len() / self.fan_in;
        let mut out = vec![0.0; rows * self.fan_out];
        for r in 0..rows {
            for o in 0..self.fan_out {
                let mut acc = 0.0;
                for i in 0..self.fan_in {
                    acc += x[r * self.fan_in + i] * self.weight[i * self.fan_out + o];
                }
                if let Some(b) = &self.bias {
                    acc += b[o];
                }
                out[r * self.fan_out + o] = acc;
            }
        }
        out
    }
}

fn layer_norm_rows(x: &[f64], width: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let denom = (var + 1e-5).sqrt();
        for (i, v) in row.iter().enumerate() {
            out.push((v - mean) / denom * gamma[i] + beta[i]);
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Relative position index of every token pair in an `m x m` window, by
/// direct enumeration of coordinates.
pub fn brute_rel_pos(m: usize) -> Vec<Vec<usize>> {
    let mut coords = Vec::new();
    for y in 0..m {
        for x in 0..m {
            coords.push((y as i64, x as i64));
        }
    }
    let side = 2 * m as i64 - 1;
    let mut out = Vec::new();
    for &(ay, ax) in &coords {
        let mut row = Vec::new();
        for &(by, bx) in &coords {
            let dy = ay - by + m as i64 - 1;
            let dx = ax - bx + m as i64 - 1;
            row.push((dy * side + dx) as usize);
        }
        out.push(row);
    }
    out
}

/// Plain softmax attention of one query over its keys.
fn attend(q: &[f64], keys: &[(&[f64], &[f64], f64)], d: usize, out: &mut [f64]) {
    let scale = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys
        .iter()
        .map(|(k, _, extra)| q.iter().zip(k.iter()).map(|(a, b)| a * b).sum::<f64>() * scale + extra)
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    out.iter_mut().for_each(|o| *o = 0.0);
    for ((_, v, _), wgt) in keys.iter().zip(&weights) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += wgt / total * x;
        }
    }
}

/// Global multi-head attention over `n` tokens of width `c`.
///
/// `wqkv` is the `c -> 3c` projection whose outputs are laid out as
/// (q|k|v, head, dim). `bias`, when given, is `[heads, n, n]`. Returns the
/// heads concatenated, `[n, c]`, with no output projection.
pub fn dense_msa(tokens: &[f64], n: usize, wqkv: &Dense, heads: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let c = wqkv.fan_in;
    assert_eq!(tokens.len(), n * c, "token count");
    assert_eq!(wqkv.fan_out, 3 * c, "qkv width");
    let d = c / heads;
    let qkv = wqkv.apply(tokens);
    let mut out = vec![0.0; n * c];
    for head in 0..heads {
        for i in 0..n {
            let at = |t: usize, which: usize| -> &[f64] {
                let s = t * 3 * c + which * c + head * d;
                &qkv[s..s + d]
            };
            let keys: Vec<(&[f64], &[f64], f64)> = (0..n)
                .map(|j| (at(j, 1), at(j, 2), bias.map_or(0.0, |b| b[(head * n + i) * n + j])))
                .collect();
            attend(at(i, 0), &keys, d, &mut out[i * c + head * d..i * c + (head + 1) * d]);
        }
    }
    out
}

/// Windowed attention of one head group by direct enumeration.
///
/// `q`, `k`, `v` are `[h, w, heads * d]`. The map is conceptually padded with
/// zero tokens to a multiple of `win` and cyclically shifted by `shift`
/// toward the top left. Each query attends to all tokens of its window, with
/// `-1e9` added between tokens that came from different regions of the
/// unshifted map. `table` is `[(2 win - 1)², heads]`.
#[allow(clippy::too_many_arguments)]
pub fn windowed_branch(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    h: usize,
    w: usize,
    heads: usize,
    win: usize,
    shift: usize,
    table: &[f64],
) -> Vec<f64> {
    let c = q.len() / (h * w);
    let d = c / heads;
    let hp = h.div_ceil(win) * win;
    let wp = w.div_ceil(win) * win;
    let zeros = vec![0.0; d];
    let rel = brute_rel_pos(win);
    // region label along one axis of the shifted frame
    let region = |p: usize, extent: usize| {
        if p < extent - win {
            0
        } else if p < extent - shift {
            1
        } else {
            2
        }
    };
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            // position of this token after the shift
            let (ry, rx) = ((y + hp - shift) % hp, (x + wp - shift) % wp);
            let (wy, wx) = (ry / win * win, rx / win * win);
            let label_q = (region(ry, hp), region(rx, wp));
            for head in 0..heads {
                let slot = |t: &[f64], yy: usize, xx: usize| -> Vec<f64> {
                    if yy < h && xx < w {
                        let s = (yy * w + xx) * c + head * d;
                        t[s..s + d].to_vec()
                    } else {
                        zeros.clone()
                    }
                };
                let qv = slot(q, y, x);
                let mut owned = Vec::new();
                for ky in wy..wy + win {
                    for kx in wx..wx + win {
                        let (oy, ox) = ((ky + shift) % hp, (kx + shift) % wp);
                        let pair = rel[(ry - wy) * win + (rx - wx)][(ky - wy) * win + (kx - wx)];
                        let mut extra = table[pair * heads + head];
                        if shift > 0 && (region(ky, hp), region(kx, wp)) != label_q {
                            extra += -1e9;
                        }
                        owned.push((slot(k, oy, ox), slot(v, oy, ox), extra));
                    }
                }
                let keys: Vec<(&[f64], &[f64], f64)> =
                    owned.iter().map(|(a, b, e)| (a.as_slice(), b.as_slice(), *e)).collect();
                let s = (y * w + x) * c + head * d;
                attend(&qv, &keys, d, &mut out[s..s + d]);
            }
        }
    }
    out
}

/// `(ŷ, y_fuse)`: `ŷ = fc1(y)`, `y_fuse = gelu(fc2(mean over tokens of gelu(ŷ)))`.
pub fn fuse_oracle(y_msw: &[f64], fc1: &Dense, fc2: &Dense) -> (Vec<f64>, Vec<f64>) {
    let c = fc1.fan_out;
    let y_hat = fc1.apply(y_msw);
    let tokens = y_hat.len() / c;
    let mut pooled = vec![0.0; c];
    for t in 0..tokens {
        for ch in 0..c {
            pooled[ch] += gelu(y_hat[t * c + ch]);
        }
    }
    for p in &mut pooled {
        *p /= tokens as f64;
    }
    let fused = fc2.apply(&pooled).into_iter().map(gelu).collect();
    (y_hat, fused)
}

/// `[n, C/n]` branch weights: each channel's logits across branches go
/// through a softmax.
pub fn select_weights_oracle(y_fuse: &[f64], alpha: &[Dense]) -> Vec<Vec<f64>> {
    let logits: Vec<Vec<f64>> = alpha.iter().map(|a| a.apply(y_fuse)).collect();
    let width = logits[0].len();
    let mut out = vec![vec![0.0; width]; alpha.len()];
    for ch in 0..width {
        let top = logits.iter().map(|l| l[ch]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l[ch] - top).exp()).sum();
        for (i, l) in logits.iter().enumerate() {
            out[i][ch] = (l[ch] - top).exp() / total;
        }
    }
    out
}

/// `fc4(fc3(Σ_i alpha_i ⊙ branch_i))`.
pub fn select_oracle(branches: &[Vec<f64>], alpha: &[Vec<f64>], fc3: &Dense, fc4: &Dense) -> Vec<f64> {
    let width = alpha[0].len();
    let mut mixed = vec![0.0; branches[0].len()];
    for (b, a) in branches.iter().zip(alpha) {
        for (i, v) in b.iter().enumerate() {
            mixed[i] += a[i % width] * v;
        }
    }
    fc4.apply(&fc3.apply(&mixed))
}

/// Central finite differences of `f` at the listed coordinates of `theta`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    coords: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        probe[i] = theta[i] + eps;
        let up = f(&probe)?;
        probe[i] = theta[i] - eps;
        let down = f(&probe)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_grad" });
        }
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Every parameter of a model as raw numbers, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Weights(BTreeMap<String, Vec<f64>>);

impl Weights {
    pub fn of<T: Element>(model: &Model<T>) -> Self {
        let mut map = BTreeMap::new();
        model.visit(&mut |p| {
            map.insert(p.name().to_string(), p.value().data().iter().map(|v| v.as_f64()).collect());
        });
        Weights(map)
    }

    fn get(&self, name: &str) -> &[f64] {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("oracle weights lack {name}"))
    }

    fn dense(&self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Dense {
        let weight = self.get(&format!("{name}.weight")).to_vec();
        assert_eq!(weight.len(), fan_in * fan_out, "{name} shape");
        Dense {
            fan_in,
            fan_out,
            weight,
            bias: bias.then(|| self.get(&format!("{name}.bias")).to_vec()),
        }
    }

    fn norm(&self, name: &str, x: &[f64], width: usize) -> Vec<f64> {
        layer_norm_rows(x, width, self.get(&format!("{name}.weight")), self.get(&format!("{name}.bias")))
    }
}

/// One transformer block computed straight from its definition. `x` is
/// `[h, w, c]`, `windows` are nominal sizes.
#[allow(clippy::too_many_arguments)]
pub fn block_oracle(
    weights: &Weights,
    name: &str,
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    heads: usize,
    windows: &[usize],
    shifted: bool,
    mode: DmswMode,
    mlp_ratio: usize,
) -> Vec<f64> {
    let n = windows.len();
    let group = heads / n;
    let d = c / heads;
    let gw = group * d;
    let normed = weights.norm(&format!("{name}.norm1"), x, c);
    let qkv = weights.dense(&format!("{name}.attn.qkv"), c, 3 * c, true).apply(&normed);
    let mut branches = Vec::with_capacity(n);
    for (i, &nominal) in windows.iter().enumerate() {
        let win = nominal.min(h).min(w);
        let shift = if shifted && win < h.min(w) { win / 2 } else { 0 };
        let take = |which: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(h * w * gw);
            for t in 0..h * w {
                let s = t * 3 * c + which * c + i * gw;
                out.extend_from_slice(&qkv[s..s + gw]);
            }
            out
        };
        let table = weights.get(&format!("{name}.attn.rel_bias.{i}"));
        branches.push(windowed_branch(&take(0), &take(1), &take(2), h, w, group, win, shift, table));
    }
    let mut concat = Vec::with_capacity(h * w * c);
    for t in 0..h * w {
        for b in &branches {
            concat.extend_from_slice(&b[t * gw..(t + 1) * gw]);
        }
    }
    let fc1 = weights.dense(&format!("{name}.dmsw.fc1"), c, c, true);
    let attended = match mode {
        DmswMode::Off => fc1.apply(&concat),
        DmswMode::Dynamic | DmswMode::EqualWeight => {
            let fc3 = weights.dense(&format!("{name}.dmsw.fc3"), gw, gw, true);
            let fc4 = weights.dense(&format!("{name}.dmsw.fc4"), gw, c, true);
            let (y_hat, alpha) = if mode == DmswMode::Dynamic {
                let reduced = c / (2 * n);
                let fc2 = weights.dense(&format!("{name}.dmsw.fc2"), c, reduced, true);
                let (y_hat, fused) = fuse_oracle(&concat, &fc1, &fc2);
                let alpha: Vec<Dense> = (0..n)
                    .map(|i| weights.dense(&format!("{name}.dmsw.alpha.{i}"), reduced, gw, true))
                    .collect();
                (y_hat, select_weights_oracle(&fused, &alpha))
            } else {
                (fc1.apply(&concat), vec![vec![1.0 / n as f64; gw]; n])
            };
            let selected = select_oracle(&branches, &alpha, &fc3, &fc4);
            selected.iter().zip(&y_hat).map(|(a, b)| a + b).collect()
        }
    };
    let z_hat: Vec<f64> = attended.iter().zip(x).map(|(a, b)| a + b).collect();
    let normed = weights.norm(&format!("{name}.norm2"), &z_hat, c);
    let hidden = weights
        .dense(&format!("{name}.mlp.fc1"), c, mlp_ratio * c, true)
        .apply(&normed)
        .into_iter()
        .map(gelu)
        .collect::<Vec<_>>();
    let mlp = weights.dense(&format!("{name}.mlp.fc2"), mlp_ratio * c, c, true).apply(&hidden);
    mlp.iter().zip(&z_hat).map(|(a, b)| a + b).collect()
}

/// Full forward pass from the configuration and raw weights. `image` is
/// `[H, W, in_channels]`.
pub fn model_oracle(cfg: &ModelConfig, weights: &Weights, image: &[f64]) -> Vec<f64> {
    let [ih, iw] = cfg.image_size;
    let cin = cfg.in_channels;
    let p = cfg.patch_size;
    let (mut h, mut w) = (ih.div_ceil(p), iw.div_ceil(p));
    let mut c = cfg.stages[0].channels;
    let mut patches = Vec::with_capacity(h * w * p * p * cin);
    for py in 0..h {
        for px in 0..w {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..cin {
                        let (y, x) = (py * p + dy, px * p + dx);
                        patches.push(if y < ih && x < iw { image[(y * iw + x) * cin + ch] } else { 0.0 });
                    }
                }
            }
        }
    }
    let embedded = weights.dense("embed.proj", p * p * cin, c, true).apply(&patches);
    let mut x = weights.norm("embed.norm", &embedded, c);
    for (si, stage) in cfg.stages.iter().enumerate() {
        if si > 0 {
            let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
            let mut grouped = Vec::with_capacity(h2 * w2 * 4 * c);
            for y in 0..h2 {
                for xx in 0..w2 {
                    for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                        for ch in 0..c {
                            grouped.push(if sy < h && sx < w { x[(sy * w + sx) * c + ch] } else { 0.0 });
                        }
                    }
                }
            }
            let normed = weights.norm(&format!("stages.{si}.merge.norm"), &grouped, 4 * c);
            x = weights
                .dense(&format!("stages.{si}.merge.reduction"), 4 * c, 2 * c, false)
                .apply(&normed);
            (h, w, c) = (h2, w2, 2 * c);
        }
        for bi in 0..stage.depth {
            x = block_oracle(
                weights,
                &format!("stages.{si}.blocks.{bi}"),
                &x,
                h,
                w,
                c,
                stage.heads,
                &stage.windows,
                bi % 2 == 1,
                cfg.dmsw_mode,
                cfg.mlp_ratio,
            );
        }
    }
    let normed = weights.norm("norm", &x, c);
    let mut pooled = vec![0.0; c];
    for t in 0..h * w {
        for ch in 0..c {
            pooled[ch] += normed[t * c + ch];
        }
    }
    for v in &mut pooled {
        *v /= (h * w) as f64;
    }
    weights.dense("head", c, cfg.num_classes, true).apply(&pooled)
}
