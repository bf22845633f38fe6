//! Spatial window machinery over `[H, W, C]` feature maps.
//!
//! Windows and the tokens inside a window are both ordered row-major.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

/// Additive mask value for token pairs that must not attend to each other.
pub const MASK_NEG: f64 = -1e9;

/// Ordered window sizes for one stage, nominal and clamped to a feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    nominal: Vec<usize>,
    effective: Vec<usize>,
}

impl WindowSet {
    pub fn new(nominal: Vec<usize>) -> Result<Self> {
        if nominal.is_empty() || nominal.contains(&0) {
            return Err(Error::Config(format!(
                "window sizes must be a non-empty list of positive sizes, got {nominal:?}"
            )));
        }
        Ok(WindowSet {
            effective: nominal.clone(),
            nominal,
        })
    }

    /// Clamps every window to the feature extent: a window at least as large
    /// as the map turns into global attention over it.
    pub fn clamp(&self, height: usize, width: usize) -> WindowSet {
        let limit = height.min(width);
        WindowSet {
            nominal: self.nominal.clone(),
            effective: self.nominal.iter().map(|&w| w.min(limit)).collect(),
        }
    }

    pub fn nominal(&self) -> &[usize] {
        &self.nominal
    }

    pub fn effective(&self) -> &[usize] {
        &self.effective
    }

    pub fn len(&self) -> usize {
        self.nominal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nominal.is_empty()
    }
}

/// Bottom/right zero padding applied by [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub height: usize,
    pub width: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    pub fn for_window(height: usize, width: usize, win: usize) -> Self {
        Padding {
            height,
            width,
            bottom: height.next_multiple_of(win) - height,
            right: width.next_multiple_of(win) - width,
        }
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.height + self.bottom, self.width + self.right)
    }

    pub fn is_none(&self) -> bool {
        self.bottom == 0 && self.right == 0
    }
}

fn spatial<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("{op} expects [H, W, C]"),
        }),
    }
}

fn check_divisible(op: &'static str, h: usize, w: usize, win: usize) -> Result<()> {
    if win == 0 || !h.is_multiple_of(win) {
        return Err(Error::NotDivisible { op, what: h, by: win });
    }
    if !w.is_multiple_of(win) {
        return Err(Error::NotDivisible { op, what: w, by: win });
    }
    Ok(())
}

/// `[H, W, C]` to `[nW, win², C]`.
pub fn window_partition<T: Element>(x: &Tensor<T>, win: usize) -> Result<Tensor<T>> {
    let (h, w, c) = spatial(x, "window_partition")?;
    check_divisible("window_partition", h, w, win)?;
    x.reshape([h / win, win, w / win, win, c])?
        .permute(&[0, 2, 1, 3, 4])?
        .into_reshape([(h / win) * (w / win), win * win, c])
}

fn window_side(shape: &[usize], height: usize, width: usize) -> Result<usize> {
    let bad = || Error::InvalidShape {
        shape: shape.to_vec(),
        reason: format!("windows do not tile a {height}x{width} map"),
    };
    let [nw, tokens, _] = *shape else { return Err(bad()) };
    let win = (tokens as f64).sqrt().round() as usize;
    if win * win != tokens || !height.is_multiple_of(win) || !width.is_multiple_of(win) || nw * tokens != height * width {
        return Err(bad());
    }
    Ok(win)
}

/// `[nW, win², C]` back to `[H, W, C]`; exact inverse of [`window_partition`].
pub fn window_reverse<T: Element>(windows: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let win = window_side(windows.shape(), height, width)?;
    let c = windows.shape()[2];
    windows
        .reshape([height / win, width / win, win, win, c])?
        .permute(&[0, 2, 1, 3, 4])?
        .into_reshape([height, width, c])
}

/// Toroidal roll of the spatial grid by `(dy, dx)`.
pub fn cyclic_shift<T: Element>(x: &Tensor<T>, dy: isize, dx: isize) -> Result<Tensor<T>> {
    spatial(x, "cyclic_shift")?;
    x.roll(0, dy)?.roll(1, dx)
}

/// Zero-pads bottom/right up to the least multiples of `win`.
pub fn pad_to_multiple<T: Element>(x: &Tensor<T>, win: usize) -> Result<(Tensor<T>, Padding)> {
    let (h, w, _) = spatial(x, "pad_to_multiple")?;
    if win == 0 {
        return Err(Error::NotDivisible { op: "pad_to_multiple", what: h, by: 0 });
    }
    let pad = Padding::for_window(h, w, win);
    let y = x.pad_end(0, pad.bottom)?.pad_end(1, pad.right)?;
    Ok((y, pad))
}

/// Removes the padding recorded in `pad`.
pub fn crop<T: Element>(x: &Tensor<T>, pad: &Padding) -> Result<Tensor<T>> {
    let (h, w, _) = spatial(x, "crop")?;
    if (h, w) != pad.padded() {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("expected a padded {:?} map", pad.padded()),
        });
    }
    x.narrow(0, 0, pad.height)?.narrow(1, 0, pad.width)
}

/// Relative-position lookup for an `M x M` window: entry `(p, q)` indexes the
/// `(2M-1)²` bias table by the coordinate difference `coord(p) - coord(q)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelPosIndex {
    window: usize,
    index: Arc<Vec<usize>>,
}

impl RelPosIndex {
    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of tokens in the window, `M²`.
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Bias table rows, `(2M-1)²`.
    pub fn table_len(&self) -> usize {
        (2 * self.window - 1).pow(2)
    }

    pub fn get(&self, p: usize, q: usize) -> usize {
        self.index[p * self.tokens() + q]
    }

    /// Flattened `M² x M²` index matrix.
    pub fn as_slice(&self) -> &[usize] {
        &self.index
    }

    pub(crate) fn shared(&self) -> Arc<Vec<usize>> {
        self.index.clone()
    }
}

pub fn rel_pos_index(window: usize) -> RelPosIndex {
    assert!(window >= 1, "window must be positive");
    let m = window;
    let side = 2 * m - 1;
    let n = m * m;
    // coordinates are row-major within the window, so the difference of flat
    // positions p = (py, px), q = (qy, qx) decomposes per axis
    let index = (0..n * n)
        .map(|pq| {
            let (p, q) = (pq / n, pq % n);
            let dy = p / m + m - 1 - q / m;
            let dx = p % m + m - 1 - q % m;
            dy * side + dx
        })
        .collect();
    RelPosIndex {
        window,
        index: Arc::new(index),
    }
}

/// Additive mask `[nW, win², win²]` for attention after a cyclic shift of
/// `shift` patches toward the top left: 0 where both tokens come from the
/// same contiguous region of the unshifted map, [`MASK_NEG`] otherwise.
pub fn shift_attention_mask<T: Element>(
    height: usize,
    width: usize,
    win: usize,
    shift: usize,
) -> Result<Tensor<T>> {
    if shift >= win {
        return Err(Error::Config(format!("shift {shift} must be smaller than window {win}")));
    }
    check_divisible("shift_attention_mask", height, width, win)?;
    let region = |pos: usize, extent: usize| -> usize {
        if pos < extent - win {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    };
    let (wh, ww) = (height / win, width / win);
    let n = win * win;
    let mut data = Vec::with_capacity(wh * ww * n * n);
    let neg = T::of(MASK_NEG);
    for by in 0..wh {
        for bx in 0..ww {
            let labels: Vec<usize> = (0..n)
                .map(|t| {
                    let (y, x) = (by * win + t / win, bx * win + t % win);
                    region(y, height) * 3 + region(x, width)
                })
                .collect();
            for &a in &labels {
                data.extend(labels.iter().map(|&b| if a == b { T::zero() } else { neg }));
            }
        }
    }
    Tensor::new([wh * ww, n, n], data)
}

/// The same operations on tape values, so they participate in gradients.
pub mod graph {
    use super::*;

    fn spatial_var<T: Element>(x: &Var<T>, op: &'static str) -> Result<(usize, usize, usize)> {
        spatial(x.value(), op)
    }

    pub fn partition<T: Element>(x: &Var<T>, win: usize) -> Result<Var<T>> {
        let (h, w, c) = spatial_var(x, "window_partition")?;
        check_divisible("window_partition", h, w, win)?;
        x.reshape([h / win, win, w / win, win, c])?
            .permute(&[0, 2, 1, 3, 4])?
            .reshape([(h / win) * (w / win), win * win, c])
    }

    pub fn reverse<T: Element>(windows: &Var<T>, height: usize, width: usize) -> Result<Var<T>> {
        let win = window_side(windows.shape(), height, width)?;
        let c = windows.shape()[2];
        windows
            .reshape([height / win, width / win, win, win, c])?
            .permute(&[0, 2, 1, 3, 4])?
            .reshape([height, width, c])
    }

    pub fn shift<T: Element>(x: &Var<T>, dy: isize, dx: isize) -> Result<Var<T>> {
        spatial_var(x, "cyclic_shift")?;
        if dy == 0 && dx == 0 {
            return Ok(x.clone());
        }
        x.roll(0, dy)?.roll(1, dx)
    }

    pub fn pad<T: Element>(x: &Var<T>, pad: &Padding) -> Result<Var<T>> {
        x.pad_end(0, pad.bottom)?.pad_end(1, pad.right)
    }

    pub fn crop<T: Element>(x: &Var<T>, pad: &Padding) -> Result<Var<T>> {
        if pad.is_none() {
            return Ok(x.clone());
        }
        x.narrow(0, 0, pad.height)?.narrow(1, 0, pad.width)
    }
}
