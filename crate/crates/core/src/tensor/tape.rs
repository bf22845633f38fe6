//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Var::backward`] on a one-element result walks the recorded nodes in
//! reverse creation order (which is a reverse topological order, since a node
//! can only reference nodes created before it) and accumulates gradients.
//!
//! An inference tape ([`Tape::inference`]) records nothing: operations still
//! run through the same code, but intermediate values are freed as soon as
//! their `Var` is dropped.
//!
//! ```
//! use dwvit::tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.var(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(&x).unwrap().sum().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.of(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use super::{numel, ops, Element, Tensor};
use crate::error::{Error, Result};

/// A named learnable tensor.
///
/// The value is reference counted so binding it onto a tape never copies it.
#[derive(Clone, PartialEq)]
pub struct Param<T> {
    name: String,
    value: Arc<Tensor<T>>,
}

impl<T> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.name, self.value.shape)
    }
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            value: Arc::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Mutable access; clones the buffer first if it is shared.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn set(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                op: "Param::set",
                lhs: self.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = Arc::new(value);
        Ok(())
    }
}

type Backward<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    shape: Vec<usize>,
    backward: Option<Backward<T>>,
    leaf: Option<Leaf>,
}

#[derive(Clone)]
enum Leaf {
    Param(String),
    Input,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, (usize, Arc<Tensor<T>>)>,
    macs: u64,
}

/// Recorder of differentiable operations. Cloning yields another handle to
/// the same tape.
#[derive(Clone)]
pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
    record: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that evaluates without recording; `backward` is unavailable.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                params: BTreeMap::new(),
                macs: 0,
            })),
            record,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates executed by matrix products on this tape.
    pub fn macs(&self) -> u64 {
        self.inner.borrow().macs
    }

    pub(crate) fn add_macs(&self, n: usize) {
        self.inner.borrow_mut().macs += n as u64;
    }

    fn push_leaf(&self, shape: Vec<usize>, leaf: Leaf) -> Option<usize> {
        if !self.record {
            return None;
        }
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            inputs: Vec::new(),
            shape,
            backward: None,
            leaf: Some(leaf),
        });
        Some(inner.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn var(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push_leaf(value.shape().to_vec(), Leaf::Input);
        Var {
            tape: self.clone(),
            id,
            value: Arc::new(value),
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            tape: self.clone(),
            id: None,
            value: Arc::new(value),
        }
    }

    /// Binds a parameter. Binding the same name twice returns the same node,
    /// so gradients from every use accumulate under that name.
    pub fn param(&self, param: &Param<T>) -> Var<T> {
        if let Some((id, value)) = self.inner.borrow().params.get(param.name()) {
            return Var {
                tape: self.clone(),
                id: Some(*id),
                value: value.clone(),
            };
        }
        let id = self.push_leaf(param.shape().to_vec(), Leaf::Param(param.name.clone()));
        if let Some(id) = id {
            self.inner
                .borrow_mut()
                .params
                .insert(param.name.clone(), (id, param.value.clone()));
        }
        Var {
            tape: self.clone(),
            id,
            value: param.value.clone(),
        }
    }

    fn record(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Var<T> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        let id = if self.record && ids.iter().any(Option::is_some) {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                inputs: ids,
                shape: value.shape().to_vec(),
                backward: Some(Box::new(backward)),
                leaf: None,
            });
            Some(inner.nodes.len() - 1)
        } else {
            None
        };
        Var {
            tape: self.clone(),
            id,
            value: Arc::new(value),
        }
    }
}

/// Gradients produced by [`Var::backward`].
pub struct Gradients<T> {
    params: BTreeMap<String, Tensor<T>>,
    inputs: BTreeMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a named parameter bound on the tape.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Gradient of a variable created with [`Tape::var`] or [`Tape::param`].
    pub fn of(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        let id = var.id?;
        self.inputs.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// A tensor value living on a [`Tape`].
#[derive(Clone)]
pub struct Var<T> {
    tape: Tape<T>,
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

fn zeros_like<T: Element>(shape: &[usize]) -> Tensor<T> {
    Tensor::from_parts(shape.to_vec(), vec![T::zero(); numel(shape)])
}

/// Writes `g` into a zero tensor of `full` shape at `start` along `axis`.
fn embed<T: Element>(g: &Tensor<T>, full: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let outer = numel(&full[..axis]);
    let inner = numel(&full[axis + 1..]);
    let extent = full[axis];
    let len = g.shape()[axis];
    let mut out = vec![T::zero(); numel(full)];
    for o in 0..outer {
        let dst = (o * extent + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full.to_vec(), out)
}

fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Whether gradients can flow into this value.
    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let y = ops::matmul(&self.value, &other.value)?;
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        self.tape.add_macs(m * k * n);
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.tape.record(y, &[self, other], move |g| {
            Ok(vec![
                Some(ops::matmul(g, &b.transpose_last()?)?),
                Some(ops::matmul(&a.transpose_last()?, g)?),
            ])
        }))
    }

    /// Batched product of `[batch, m, k]` and `[batch, k, n]`.
    pub fn bmm(&self, other: &Var<T>) -> Result<Var<T>> {
        let y = ops::bmm(&self.value, &other.value)?;
        let s = self.shape();
        self.tape.add_macs(s[0] * s[1] * s[2] * other.shape()[2]);
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.tape.record(y, &[self, other], move |g| {
            Ok(vec![
                Some(ops::bmm(g, &b.transpose_last()?)?),
                Some(ops::bmm(&a.transpose_last()?, g)?),
            ])
        }))
    }

    /// Elementwise sum; `other` may broadcast onto `self`.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let y = ops::add(&self.value, &other.value)?;
        let bshape = other.shape().to_vec();
        Ok(self.tape.record(y, &[self, other], move |g| {
            Ok(vec![Some(g.clone()), Some(ops::sum_to_shape(g, &bshape)?)])
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let y = ops::sub(&self.value, &other.value)?;
        let bshape = other.shape().to_vec();
        Ok(self.tape.record(y, &[self, other], move |g| {
            let gb = ops::sum_to_shape(g, &bshape)?;
            Ok(vec![Some(g.clone()), Some(gb.map(|v| -v))])
        }))
    }

    /// Elementwise product; `other` may broadcast onto `self`.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let y = ops::mul(&self.value, &other.value)?;
        let (a, b) = (self.value.clone(), other.value.clone());
        let need_a = self.id.is_some();
        let need_b = other.id.is_some();
        Ok(self.tape.record(y, &[self, other], move |g| {
            let ga = if need_a { Some(ops::mul(g, &b)?) } else { None };
            let gb = if need_b {
                Some(ops::sum_to_shape(&ops::mul(g, &a)?, b.shape())?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }

    pub fn scale(&self, s: f64) -> Result<Var<T>> {
        let s = T::of(s);
        let y = ops::scale(&self.value, s)?;
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(ops::scale(g, s)?)])))
    }

    pub fn sum(&self) -> Result<Var<T>> {
        let y = ops::sum(&self.value)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            Ok(vec![Some(Tensor::full(shape.clone(), g.data()[0])?)])
        }))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let y = ops::softmax(&self.value, axis)?;
        let out = Arc::new(y.clone());
        Ok(self.tape.record(y, &[self], move |g| {
            let shape = out.shape();
            let outer = numel(&shape[..axis]);
            let extent = shape[axis];
            let inner = numel(&shape[axis + 1..]);
            let (yv, gv) = (out.data(), g.data());
            let mut dx = vec![T::zero(); out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |e: usize| (o * extent + e) * inner + i;
                    let dot = (0..extent).fold(T::zero(), |acc, e| acc + gv[at(e)] * yv[at(e)]);
                    for e in 0..extent {
                        dx[at(e)] = yv[at(e)] * (gv[at(e)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(shape.to_vec(), dx))])
        }))
    }

    /// Layer norm over the trailing axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let (y, xhat, rstd) =
            ops::layer_norm_parts(&self.value, &gamma.value, &beta.value, T::of(eps))?;
        let gam = gamma.value.clone();
        Ok(self.tape.record(y, &[self, gamma, beta], move |g| {
            let c = gam.len();
            let rows = g.len() / c;
            let inv_c = T::one() / T::of(c as f64);
            let mut dx = vec![T::zero(); g.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for r in 0..rows {
                let gr = &g.data()[r * c..(r + 1) * c];
                let hr = &xhat.data()[r * c..(r + 1) * c];
                let mut mean_d = T::zero();
                let mut mean_dh = T::zero();
                for j in 0..c {
                    let d = gr[j] * gam.data()[j];
                    mean_d = mean_d + d;
                    mean_dh = mean_dh + d * hr[j];
                    dgamma[j] = dgamma[j] + gr[j] * hr[j];
                    dbeta[j] = dbeta[j] + gr[j];
                }
                mean_d = mean_d * inv_c;
                mean_dh = mean_dh * inv_c;
                for j in 0..c {
                    let d = gr[j] * gam.data()[j];
                    dx[r * c + j] = rstd[r] * (d - mean_d - hr[j] * mean_dh);
                }
            }
            Ok(vec![
                Some(Tensor::from_parts(g.shape().to_vec(), dx)),
                Some(Tensor::from_parts(vec![c], dgamma)),
                Some(Tensor::from_parts(vec![c], dbeta)),
            ])
        }))
    }

    pub fn gelu(&self) -> Result<Var<T>> {
        let y = ops::gelu(&self.value)?;
        let x = self.value.clone();
        Ok(self.tape.record(y, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| gv * ops::gelu_grad_scalar(xv))
                .collect();
            Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
        }))
    }

    /// `self[..., Cin] @ weight[Cin, Cout] (+ bias[Cout])`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let cin = *self.shape().last().expect("rank >= 1");
        if weight.shape().len() != 2 || weight.shape()[0] != cin {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let cout = weight.shape()[1];
        let rows = self.value.len() / cin;
        let mut y = self.reshape([rows, cin])?.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add(&b.reshape([1, cout])?)?;
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = cout;
        y.reshape(shape)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let y = self.value.reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(g.reshape(orig.clone())?)])))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<T>> {
        let y = self.value.permute(axes)?;
        let inv = inverse_permutation(axes);
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(g.permute(&inv)?)])))
    }

    pub fn transpose_last(&self) -> Result<Var<T>> {
        let rank = self.shape().len();
        let mut axes: Vec<usize> = (0..rank).collect();
        if rank >= 2 {
            axes.swap(rank - 2, rank - 1);
        }
        self.permute(&axes)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let y = self.value.narrow(axis, start, len)?;
        let full = self.shape().to_vec();
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(embed(g, &full, axis, start))])))
    }

    pub fn split(&self, axis: usize, n: usize) -> Result<Vec<Var<T>>> {
        let extent = *self.shape().get(axis).ok_or(Error::InvalidAxis {
            op: "split",
            axis,
            rank: self.shape().len(),
        })?;
        if n == 0 || extent % n != 0 {
            return Err(Error::NotDivisible {
                op: "split",
                what: extent,
                by: n,
            });
        }
        let step = extent / n;
        (0..n).map(|i| self.narrow(axis, i * step, step)).collect()
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value.as_ref()).collect();
        let y = Tensor::concat_refs(&values, axis)?;
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(first.tape.record(y, &refs, move |g| {
            let mut start = 0;
            extents
                .iter()
                .map(|&len| {
                    let piece = g.narrow(axis, start, len)?;
                    start += len;
                    Ok(Some(piece))
                })
                .collect()
        }))
    }

    pub fn roll(&self, axis: usize, shift: isize) -> Result<Var<T>> {
        let y = self.value.roll(axis, shift)?;
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(g.roll(axis, -shift)?)])))
    }

    pub fn pad_end(&self, axis: usize, amount: usize) -> Result<Var<T>> {
        if amount == 0 {
            return Ok(self.clone());
        }
        let y = self.value.pad_end(axis, amount)?;
        let extent = self.shape()[axis];
        Ok(self
            .tape
            .record(y, &[self], move |g| Ok(vec![Some(g.narrow(axis, 0, extent)?)])))
    }

    /// Gathers rows of the leading axis.
    pub fn index_select(&self, indices: Arc<Vec<usize>>) -> Result<Var<T>> {
        let y = self.value.index_select(&indices)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            let inner = numel(&shape[1..]);
            let mut acc = zeros_like::<T>(&shape).into_data();
            for (row, &i) in indices.iter().enumerate() {
                let src = &g.data()[row * inner..(row + 1) * inner];
                for (a, &v) in acc[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                    *a = *a + v;
                }
            }
            Ok(vec![Some(Tensor::from_parts(shape.clone(), acc))])
        }))
    }

    /// Channel-wise spatial mean of `[H, W, C]`, shaped `[1, 1, C]`.
    pub fn global_avg_pool(&self) -> Result<Var<T>> {
        let y = ops::global_avg_pool(&self.value)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            let inv = T::one() / T::of((shape[0] * shape[1]) as f64);
            let c = shape[2];
            let data = (0..numel(&shape)).map(|i| g.data()[i % c] * inv).collect();
            Ok(vec![Some(Tensor::from_parts(shape.clone(), data))])
        }))
    }

    /// Propagates gradients from this one-element value to every leaf.
    ///
    /// Parameters bound on the tape but not reached receive zero gradients.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.value.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.tape.record {
            return Err(Error::Params("backward on an inference tape".into()));
        }
        let inner = self.tape.inner.borrow();
        let mut params = BTreeMap::new();
        let mut inputs = BTreeMap::new();
        for node in &inner.nodes {
            if let Some(Leaf::Param(name)) = &node.leaf {
                params.insert(name.clone(), zeros_like::<T>(&node.shape));
            }
        }
        let Some(root) = self.id else {
            return Ok(Gradients { params, inputs });
        };
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root + 1];
        grads[root] = Some(Tensor::full(self.shape().to_vec(), T::one())?);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            debug_assert_eq!(g.shape(), node.shape.as_slice());
            match (&node.leaf, &node.backward) {
                (Some(Leaf::Param(name)), _) => {
                    inputs.insert(id, g.clone());
                    params.insert(name.clone(), g);
                }
                (Some(Leaf::Input), _) => {
                    inputs.insert(id, g);
                }
                (None, Some(backward)) => {
                    let input_grads = backward(&g)?;
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let (Some(input), Some(ig)) = (input, ig) else { continue };
                        grads[*input] = Some(match grads[*input].take() {
                            Some(acc) => ops::add(&acc, &ig)?,
                            None => ig,
                        });
                    }
                }
                (None, None) => {}
            }
        }
        Ok(Gradients { params, inputs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Central differences of `f` at every coordinate of `x`.
    fn numeric_grad(x: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let eps = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += eps;
                let mut minus = x.clone();
                minus.data_mut()[i] -= eps;
                (f(&plus) - f(&minus)) / (2.0 * eps)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-10 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }

    /// Checks the gradient of `sum(w * op(x))` with respect to every input of
    /// `op` against central differences; the random `w` makes the loss generic.
    fn gradcheck(inputs: Vec<Tensor<f64>>, op: impl Fn(&[Var<f64>]) -> Var<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe = {
            let tape = Tape::inference();
            let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            op(&vars).value().clone()
        };
        let weights = random(&mut rng, probe.shape());
        let loss = |xs: &[Tensor<f64>]| -> f64 {
            let tape = Tape::inference();
            let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
            let y = op(&vars);
            ops::mul(y.value(), &weights).unwrap().data().iter().sum()
        };
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let w = tape.constant(weights.clone());
        let grads = op(&vars).mul(&w).unwrap().sum().unwrap().backward().unwrap();
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.of(var).expect("gradient reaches every input");
            let numeric = numeric_grad(&inputs[k], &|x| {
                let mut xs = inputs.clone();
                xs[k] = x.clone();
                loss(&xs)
            });
            for (a, n) in analytic.data().iter().zip(&numeric) {
                assert!(rel_err(*a, *n) < 1e-6, "input {k}: analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_fn([2, 3], |i| i as f64).unwrap());
        let g = x.sum().unwrap().backward().unwrap();
        assert!(g.of(&x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let tape = Tape::<f64>::new();
        let used = Param::new("used", Tensor::ones([2]).unwrap());
        let unused = Param::new("unused", Tensor::ones([3]).unwrap());
        let u = tape.param(&used);
        let _ = tape.param(&unused);
        let g = u.sum().unwrap().backward().unwrap();
        assert_eq!(g.param("used").unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.param("unused").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_param_accumulates() {
        let tape = Tape::<f64>::new();
        let p = Param::new("p", Tensor::new([1], vec![3.0]).unwrap());
        let a = tape.param(&p);
        let b = tape.param(&p);
        let g = a.mul(&b).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(g.param("p").unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::ones([2]).unwrap());
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn weight_gradient_of_linear_sum_is_outer_structure() {
        // loss = sum(x W): dW[i, j] = sum over rows of x[:, i]
        let x = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tape = Tape::<f64>::new();
        let w = tape.var(Tensor::new([2, 3], vec![0.5; 6]).unwrap());
        let xv = tape.constant(x);
        let g = xv.matmul(&w).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(g.of(&w).unwrap().data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let x = tape.var(Tensor::ones([2, 2]).unwrap());
        let y = x.matmul(&x).unwrap();
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
        assert_eq!(tape.macs(), 8);
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        gradcheck(vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])], |v| {
            v[0].matmul(&v[1]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 2])], |v| {
            v[0].bmm(&v[1]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[2, 3, 2]), random(&mut rng, &[2, 1, 2])], |v| {
            v[0].add(&v[1]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[2, 3]), random(&mut rng, &[1, 3])], |v| {
            v[0].sub(&v[1]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[2, 3, 2]), random(&mut rng, &[1, 3, 1])], |v| {
            v[0].mul(&v[1]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[3, 4])], |v| v[0].scale(-0.7).unwrap());
        gradcheck(vec![random(&mut rng, &[3, 4])], |v| v[0].softmax(1).unwrap());
        gradcheck(vec![random(&mut rng, &[3, 4, 2])], |v| v[0].softmax(1).unwrap());
        gradcheck(
            vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])],
            |v| v[0].layer_norm(&v[1], &v[2], 1e-5).unwrap(),
        );
        gradcheck(vec![random(&mut rng, &[7]).map(|x| 3.0 * x)], |v| v[0].gelu().unwrap());
        gradcheck(
            vec![random(&mut rng, &[2, 2, 3]), random(&mut rng, &[3, 4]), random(&mut rng, &[4])],
            |v| v[0].linear(&v[1], Some(&v[2])).unwrap(),
        );
        gradcheck(vec![random(&mut rng, &[2, 3, 4])], |v| {
            v[0].permute(&[2, 0, 1]).unwrap().reshape([8, 3]).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[4, 3])], |v| v[0].narrow(0, 1, 2).unwrap());
        gradcheck(vec![random(&mut rng, &[2, 2]), random(&mut rng, &[2, 3])], |v| {
            Var::concat(&[v[0].clone(), v[1].clone()], 1).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[5, 2])], |v| v[0].roll(0, 2).unwrap());
        gradcheck(vec![random(&mut rng, &[3, 2])], |v| v[0].pad_end(0, 2).unwrap());
        gradcheck(vec![random(&mut rng, &[4, 2])], |v| {
            v[0].index_select(Arc::new(vec![3, 0, 3, 1])).unwrap()
        });
        gradcheck(vec![random(&mut rng, &[3, 2, 4])], |v| v[0].global_avg_pool().unwrap());
        gradcheck(vec![random(&mut rng, &[3, 2])], |v| v[0].sum().unwrap());
    }
}
