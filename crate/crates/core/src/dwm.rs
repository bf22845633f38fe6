//! The dynamic window module: multi-scale attention followed by dynamic
//! per-channel weighting of its branches.
//!
//! ```text
//! ŷ_fuse   = fc1(y_msw)
//! y_fuse   = gelu(fc2(pool(gelu(ŷ_fuse))))                  [1, 1, C/(2n)]
//! α[i, c]  = softmax_i(alpha_i(y_fuse))[c]                   [n, C/n]
//! y_select = fc4(fc3(Σ_i α_i ⊙ branch_i))
//! y        = y_select + ŷ_fuse
//! ```

use serde::{Deserialize, Serialize};

use crate::attention::{msw_msa, MswMsaParams, MswOutput};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};
use crate::tensor::{Element, Param, Tensor, Var};
use crate::window::WindowSet;

/// How branch outputs are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmswMode {
    /// Weights generated from globally pooled features.
    Dynamic,
    /// Every branch weighted `1 / n_win`; no weight generator.
    #[serde(rename = "equal")]
    EqualWeight,
    /// No weighting at all: output projection of the concatenated branches.
    Off,
}

impl std::fmt::Display for DmswMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DmswMode::Dynamic => "dynamic",
            DmswMode::EqualWeight => "equal",
            DmswMode::Off => "off",
        })
    }
}

impl std::str::FromStr for DmswMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(DmswMode::Dynamic),
            "equal" => Ok(DmswMode::EqualWeight),
            "off" => Ok(DmswMode::Off),
            other => Err(Error::Config(format!("unknown dmsw mode {other:?}"))),
        }
    }
}

/// Parameters of the weighting stage.
///
/// `fc1` is always present and doubles as the attention output projection.
/// `fc2` and `alpha` exist only in [`DmswMode::Dynamic`]; `fc3` and `fc4`
/// exist in every mode except [`DmswMode::Off`].
#[derive(Debug, Clone)]
pub struct DmswParams<T> {
    pub mode: DmswMode,
    pub n_win: usize,
    /// `C -> C`
    pub fc1: Linear<T>,
    /// `C -> C / (2 n_win)`
    pub fc2: Option<Linear<T>>,
    /// `n_win` maps `C / (2 n_win) -> C / n_win`
    pub alpha: Vec<Linear<T>>,
    /// `C / n_win -> C / n_win`
    pub fc3: Option<Linear<T>>,
    /// `C / n_win -> C`
    pub fc4: Option<Linear<T>>,
}

/// Width of the fused descriptor, `C / (2 n_win)`.
pub fn fused_width(channels: usize, n_win: usize) -> Result<usize> {
    if n_win == 0 || !channels.is_multiple_of(2 * n_win) {
        return Err(Error::Config(format!(
            "dynamic weighting needs channels ({channels}) divisible by 2 * n_win ({})",
            2 * n_win
        )));
    }
    Ok(channels / (2 * n_win))
}

impl<T: Element> DmswParams<T> {
    pub fn init(init: &mut Init, name: &str, channels: usize, n_win: usize, mode: DmswMode) -> Result<Self> {
        if n_win == 0 || !channels.is_multiple_of(n_win) {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {n_win} branches"
            )));
        }
        let branch = channels / n_win;
        let fc1 = Linear::init(init, &format!("{name}.fc1"), channels, channels, true)?;
        let (fc2, alpha) = if mode == DmswMode::Dynamic {
            let fused = fused_width(channels, n_win)?;
            let fc2 = Linear::init(init, &format!("{name}.fc2"), channels, fused, true)?;
            let alpha = (0..n_win)
                .map(|i| Linear::init(init, &format!("{name}.alpha.{i}"), fused, branch, true))
                .collect::<Result<_>>()?;
            (Some(fc2), alpha)
        } else {
            (None, Vec::new())
        };
        let (fc3, fc4) = if mode == DmswMode::Off {
            (None, None)
        } else {
            (
                Some(Linear::init(init, &format!("{name}.fc3"), branch, branch, true)?),
                Some(Linear::init(init, &format!("{name}.fc4"), branch, channels, true)?),
            )
        };
        Ok(DmswParams {
            mode,
            n_win,
            fc1,
            fc2,
            alpha,
            fc3,
            fc4,
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1.fan_in()
    }

    fn require<'a>(layer: &'a Option<Linear<T>>, what: &str, mode: DmswMode) -> Result<&'a Linear<T>> {
        layer
            .as_ref()
            .ok_or_else(|| Error::Params(format!("{what} is absent in {mode} mode")))
    }
}

impl<T: Element> Module<T> for DmswParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.fc1.visit(f);
        if let Some(l) = &self.fc2 {
            l.visit(f);
        }
        for l in &self.alpha {
            l.visit(f);
        }
        if let Some(l) = &self.fc3 {
            l.visit(f);
        }
        if let Some(l) = &self.fc4 {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        if let Some(l) = &mut self.fc2 {
            l.visit_mut(f);
        }
        for l in &mut self.alpha {
            l.visit_mut(f);
        }
        if let Some(l) = &mut self.fc3 {
            l.visit_mut(f);
        }
        if let Some(l) = &mut self.fc4 {
            l.visit_mut(f);
        }
    }
}

/// Global fusion: returns `(ŷ_fuse, y_fuse)`.
pub fn fuse<T: Element>(y_msw: &Var<T>, p: &DmswParams<T>) -> Result<(Var<T>, Var<T>)> {
    if y_msw.shape().len() != 3 || y_msw.shape()[2] != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: y_msw.shape().to_vec(),
            rhs: vec![p.channels()],
        });
    }
    let fc2 = DmswParams::require(&p.fc2, "fc2", p.mode)?;
    let y_hat = p.fc1.forward(y_msw)?;
    let y_fuse = fc2.forward(&y_hat.gelu()?.global_avg_pool()?)?.gelu()?;
    Ok((y_hat, y_fuse))
}

/// Per-branch, per-channel weights `[n_win, C / n_win]`, normalized across
/// branches for every channel.
pub fn select_weights<T: Element>(y_fuse: &Var<T>, p: &DmswParams<T>) -> Result<Var<T>> {
    if p.alpha.len() != p.n_win {
        return Err(Error::Params(format!(
            "{} weight generators for {} branches",
            p.alpha.len(),
            p.n_win
        )));
    }
    let branch = p.channels() / p.n_win;
    let logits = p
        .alpha
        .iter()
        .map(|l| l.forward(y_fuse)?.reshape([1, branch]))
        .collect::<Result<Vec<_>>>()?;
    Var::concat(&logits, 0)?.softmax(0)
}

/// Weighted branch sum followed by `fc4(fc3(·))`.
pub fn select<T: Element>(branches: &[Var<T>], alpha: &Var<T>, p: &DmswParams<T>) -> Result<Var<T>> {
    if branches.len() != p.n_win {
        return Err(Error::Params(format!(
            "{} branch outputs for {} branches",
            branches.len(),
            p.n_win
        )));
    }
    let branch = p.channels() / p.n_win;
    if alpha.shape() != [p.n_win, branch] {
        return Err(Error::ShapeMismatch {
            op: "select",
            lhs: alpha.shape().to_vec(),
            rhs: vec![p.n_win, branch],
        });
    }
    let mut acc: Option<Var<T>> = None;
    for (i, b) in branches.iter().enumerate() {
        let weighted = b.mul(&alpha.narrow(0, i, 1)?.reshape([1, 1, branch])?)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => a.add(&weighted)?,
        });
    }
    let mixed = acc.expect("n_win >= 1");
    let fc3 = DmswParams::require(&p.fc3, "fc3", p.mode)?;
    let fc4 = DmswParams::require(&p.fc4, "fc4", p.mode)?;
    fc4.forward(&fc3.forward(&mixed)?)
}

/// Every intermediate of one module evaluation.
pub struct DwmOutput<T> {
    pub y: Var<T>,
    pub msw: MswOutput<T>,
    /// Branch weights; `None` in [`DmswMode::Off`].
    pub alpha: Option<Var<T>>,
}

/// Full module evaluation, keeping intermediates.
pub fn dwm_forward_detailed<T: Element>(
    x: &Var<T>,
    attn: &MswMsaParams<T>,
    dmsw: &DmswParams<T>,
    windows: &WindowSet,
    shifted: bool,
) -> Result<DwmOutput<T>> {
    if dmsw.n_win != windows.len() || dmsw.channels() != attn.channels() {
        return Err(Error::Params(format!(
            "weighting built for {} branches of {} channels, attention has {} windows of {} channels",
            dmsw.n_win,
            dmsw.channels(),
            windows.len(),
            attn.channels()
        )));
    }
    let msw = msw_msa(x, attn, windows, shifted)?;
    let (y, alpha) = match dmsw.mode {
        DmswMode::Off => (dmsw.fc1.forward(&msw.y)?, None),
        DmswMode::Dynamic => {
            let (y_hat, y_fuse) = fuse(&msw.y, dmsw)?;
            let alpha = select_weights(&y_fuse, dmsw)?;
            (select(&msw.branches, &alpha, dmsw)?.add(&y_hat)?, Some(alpha))
        }
        DmswMode::EqualWeight => {
            let y_hat = dmsw.fc1.forward(&msw.y)?;
            let n = dmsw.n_win;
            let equal = Tensor::full([n, dmsw.channels() / n], T::one() / T::of(n as f64))?;
            let alpha = x.tape().constant(equal);
            (select(&msw.branches, &alpha, dmsw)?.add(&y_hat)?, Some(alpha))
        }
    };
    Ok(DwmOutput { y, msw, alpha })
}

/// Module output, `[H, W, C]` for every mode.
pub fn dwm_forward<T: Element>(
    x: &Var<T>,
    attn: &MswMsaParams<T>,
    dmsw: &DmswParams<T>,
    windows: &WindowSet,
    shifted: bool,
) -> Result<Var<T>> {
    dwm_forward_detailed(x, attn, dmsw, windows, shifted).map(|o| o.y)
}
