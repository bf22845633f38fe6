//! Parameter containers shared by the model components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Element, Param, Tensor, Var};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Anything holding named parameters.
pub trait Module<T: Element> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }
}

/// Deterministic parameter factory. Parameters are drawn in creation order
/// from one seeded stream, so the same build sequence yields bit-identical
/// values.
pub struct Init {
    rng: Option<ChaCha8Rng>,
    normal: Normal<f64>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    /// Zero weights everywhere; for structural analysis where only shapes
    /// matter.
    pub fn shapes_only() -> Self {
        Init {
            rng: None,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    /// Normal(0, 0.02) truncated to ±2 standard deviations by resampling.
    pub fn weight<T: Element>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Param<T>> {
        let Some(rng) = self.rng.as_mut() else {
            return self.zeros(name, shape);
        };
        let limit = 2.0 * INIT_STD;
        let normal = self.normal;
        let t = Tensor::from_fn(shape.to_vec(), |_| loop {
            let v = normal.sample(rng);
            if v.abs() <= limit {
                break T::of(v);
            }
        })?;
        Ok(Param::new(name, t))
    }

    pub fn zeros<T: Element>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Param<T>> {
        Ok(Param::new(name, Tensor::zeros(shape.to_vec())?))
    }

    pub fn ones<T: Element>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Param<T>> {
        Ok(Param::new(name, Tensor::ones(shape.to_vec())?))
    }
}

/// Affine map `x @ weight + bias` with `weight` shaped `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Element> Linear<T> {
    pub fn init(init: &mut Init, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let weight = init.weight(format!("{name}.weight"), &[fan_in, fan_out])?;
        let bias = if bias {
            Some(init.zeros(format!("{name}.bias"), &[fan_out])?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        x.linear(&w, b.as_ref())
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Layer norm over the trailing axis.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn init(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.ones(format!("{name}.weight"), &[channels])?,
            beta: init.zeros(format!("{name}.bias"), &[channels])?,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        x.layer_norm(
            &tape.param(&self.gamma),
            &tape.param(&self.beta),
            crate::tensor::ops::LAYER_NORM_EPS,
        )
    }
}

impl<T: Element> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}
