//! Windowed multi-head self-attention and its multi-scale composition.
//!
//! A single full-width projection produces queries, keys and values for all
//! `h` heads. The heads are then split into `n_win` consecutive groups and
//! group `i` attends inside windows of size `win_i`, with its own relative
//! position bias table. Group outputs are concatenated along channels in
//! window-list order.

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};
use crate::tensor::{Element, Param, Tensor, Var};
use crate::window::{self, graph, Padding, WindowSet};

/// Parameters of one multi-scale window attention layer.
#[derive(Debug, Clone)]
pub struct MswMsaParams<T> {
    /// `C -> 3C` projection, output laid out as `[q | k | v]`, each head-major.
    pub qkv: Linear<T>,
    /// One `[(2M_i - 1)², h / n_win]` table per branch.
    pub bias_tables: Vec<Param<T>>,
    pub heads: usize,
}

impl<T: Element> MswMsaParams<T> {
    /// Bias tables are sized by the effective windows and start at zero.
    pub fn init(
        init: &mut Init,
        name: &str,
        channels: usize,
        heads: usize,
        windows: &WindowSet,
    ) -> Result<Self> {
        check_layout(channels, heads, windows.len())?;
        let group = heads / windows.len();
        let qkv = Linear::init(init, &format!("{name}.qkv"), channels, 3 * channels, true)?;
        let bias_tables = windows
            .effective()
            .iter()
            .enumerate()
            .map(|(i, &m)| init.zeros(format!("{name}.rel_bias.{i}"), &[(2 * m - 1).pow(2), group]))
            .collect::<Result<_>>()?;
        Ok(MswMsaParams {
            qkv,
            bias_tables,
            heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.qkv.fan_in()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    /// Checks that the parameters fit `windows` (effective sizes).
    pub fn validate(&self, windows: &WindowSet) -> Result<()> {
        let c = self.channels();
        check_layout(c, self.heads, windows.len())?;
        if self.qkv.fan_out() != 3 * c {
            return Err(Error::Params(format!(
                "qkv projection maps {c} to {}, expected {}",
                self.qkv.fan_out(),
                3 * c
            )));
        }
        if self.bias_tables.len() != windows.len() {
            return Err(Error::Params(format!(
                "{} bias tables for {} windows",
                self.bias_tables.len(),
                windows.len()
            )));
        }
        let group = self.heads / windows.len();
        for (table, &m) in self.bias_tables.iter().zip(windows.effective()) {
            let want = [(2 * m - 1).pow(2), group];
            if table.shape() != want {
                return Err(Error::Params(format!(
                    "bias table {} has shape {:?}, window {m} needs {want:?}",
                    table.name(),
                    table.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for MswMsaParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.qkv.visit(f);
        for t in &self.bias_tables {
            f(t);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.qkv.visit_mut(f);
        for t in &mut self.bias_tables {
            f(t);
        }
    }
}

fn check_layout(channels: usize, heads: usize, n_win: usize) -> Result<()> {
    if n_win == 0 || heads == 0 || !heads.is_multiple_of(n_win) {
        return Err(Error::Config(format!(
            "{heads} heads cannot be split evenly into {n_win} window groups"
        )));
    }
    if !channels.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{channels} channels cannot be split evenly into {heads} heads"
        )));
    }
    Ok(())
}

/// Cyclic shift applied to a branch with effective window `win` on an
/// `height x width` map. A window covering the whole map attends globally and
/// is never shifted.
pub fn branch_shift(win: usize, height: usize, width: usize, shifted: bool) -> usize {
    if shifted && win < height.min(width) {
        win / 2
    } else {
        0
    }
}

/// Geometry of one attention branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub heads: usize,
    pub win: usize,
    pub shift: usize,
}

/// Attention of one head group inside `win x win` windows.
///
/// `q`, `k` and `v` are `[H, W, heads * d]`, already projected. The maps are
/// zero-padded to a multiple of the window, cyclically shifted by `-shift` on
/// both axes when `shift > 0`, attended per window as
/// `softmax(q kᵀ / √d + B + mask) v`, then shifted back and cropped.
/// `mask` must be `[nW, win², win²]` for the padded map; when `None` and
/// `shift > 0` it is built with [`window::shift_attention_mask`].
pub fn wmsa_branch<T: Element>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    branch: Branch,
    bias_table: &Var<T>,
    mask: Option<&Tensor<T>>,
) -> Result<Var<T>> {
    let Branch { heads, win, shift } = branch;
    let [h, w, c] = *q.shape() else {
        return Err(Error::InvalidShape {
            shape: q.shape().to_vec(),
            reason: "attention branch expects [H, W, C]".into(),
        });
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::ShapeMismatch {
            op: "wmsa_branch",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::NotDivisible { op: "wmsa_branch", what: c, by: heads });
    }
    let d = c / heads;
    let n = win * win;
    let table_rows = (2 * win - 1).pow(2);
    if bias_table.shape() != [table_rows, heads] {
        return Err(Error::Params(format!(
            "bias table shape {:?} does not match window {win} with {heads} heads",
            bias_table.shape()
        )));
    }
    if shift >= win && shift > 0 {
        return Err(Error::Config(format!("shift {shift} must be smaller than window {win}")));
    }
    let pad = Padding::for_window(h, w, win);
    let (hp, wp) = pad.padded();
    let nw = (hp / win) * (wp / win);
    let roll = shift as isize;

    let to_windows = |t: &Var<T>| -> Result<Var<T>> {
        let t = graph::shift(&graph::pad(t, &pad)?, -roll, -roll)?;
        graph::partition(&t, win)?
            .reshape([nw, n, heads, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape([nw * heads, n, d])
    };
    let (qw, kw, vw) = (to_windows(q)?, to_windows(k)?, to_windows(v)?);

    let logits = qw
        .bmm(&kw.transpose_last()?)?
        .scale(1.0 / (d as f64).sqrt())?
        .reshape([nw, heads, n, n])?;
    let index = window::rel_pos_index(win);
    let bias = bias_table
        .index_select(index.shared())?
        .reshape([n, n, heads])?
        .permute(&[2, 0, 1])?
        .reshape([1, heads, n, n])?;
    let mut logits = logits.add(&bias)?;
    if shift > 0 {
        let built;
        let mask = match mask {
            Some(m) => m,
            None => {
                built = window::shift_attention_mask::<T>(hp, wp, win, shift)?;
                &built
            }
        };
        if mask.shape() != [nw, n, n] {
            return Err(Error::ShapeMismatch {
                op: "wmsa_branch mask",
                lhs: vec![nw, n, n],
                rhs: mask.shape().to_vec(),
            });
        }
        let mask = q.tape().constant(mask.reshape([nw, 1, n, n])?);
        logits = logits.add(&mask)?;
    }
    let attn = logits.softmax(3)?.reshape([nw * heads, n, n])?;
    let out = attn
        .bmm(&vw)?
        .reshape([nw, heads, n, d])?
        .permute(&[0, 2, 1, 3])?
        .reshape([nw, n, c])?;
    let out = graph::reverse(&out, hp, wp)?;
    graph::crop(&graph::shift(&out, roll, roll)?, &pad)
}

/// Output of [`msw_msa`]: the channel concatenation and the per-branch maps.
pub struct MswOutput<T> {
    pub y: Var<T>,
    pub branches: Vec<Var<T>>,
}

/// Multi-scale window attention over an `[H, W, C]` map.
pub fn msw_msa<T: Element>(
    x: &Var<T>,
    params: &MswMsaParams<T>,
    windows: &WindowSet,
    shifted: bool,
) -> Result<MswOutput<T>> {
    params.validate(windows)?;
    let [h, w, c] = *x.shape() else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "msw_msa expects [H, W, C]".into(),
        });
    };
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            op: "msw_msa",
            lhs: x.shape().to_vec(),
            rhs: params.qkv.weight.shape().to_vec(),
        });
    }
    let n_win = windows.len();
    let heads = params.heads;
    let group = heads / n_win;
    let d = c / heads;
    let qkv = params.qkv.forward(x)?.reshape([h, w, 3, heads, d])?;
    let part = |which: usize, branch: usize| -> Result<Var<T>> {
        qkv.narrow(2, which, 1)?
            .reshape([h, w, heads, d])?
            .narrow(2, branch * group, group)?
            .reshape([h, w, group * d])
    };
    let tape = x.tape();
    let mut branches = Vec::with_capacity(n_win);
    for (i, &win) in windows.effective().iter().enumerate() {
        let branch = Branch {
            heads: group,
            win,
            shift: branch_shift(win, h, w, shifted),
        };
        let table = tape.param(&params.bias_tables[i]);
        branches.push(wmsa_branch(&part(0, i)?, &part(1, i)?, &part(2, i)?, branch, &table, None)?);
    }
    let y = Var::concat(&branches, 2)?;
    Ok(MswOutput { y, branches })
}
