//! Minimal layer stack with hand-written backward passes.
//!
//! Tensors are `[batch, channels, height, width]`, row-major. Layers cache
//! whatever their backward pass needs during `forward` in training mode.
//! Everything is generic over the float type so training runs in `f32` and
//! gradient checks run in `f64`.

mod conv;
mod layers;
mod train;

pub use conv::{SeparableConv, SpatioTemporalConv};
pub use layers::{Affine, AvgPoolW, BatchNorm, Dense, Dropout, Elu, LeakyRelu};
pub use train::{bce_with_logits, fit, Adam, TrainConfig, TrainReport};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn c(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Tensor { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }
}

/// A trainable parameter and its gradient buffer.
pub struct Param<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

pub trait Layer<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T>;

    /// Gradient w.r.t. the last training-mode input; parameter gradients are
    /// overwritten, not accumulated.
    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    fn params(&mut self) -> Vec<Param<'_, T>> {
        Vec::new()
    }

    /// Every persistent array (parameters and running statistics), by name.
    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        Vec::new()
    }

    /// Weight constraints applied after each optimiser step.
    fn constrain(&mut self) {}
}

/// Layers applied in order; the last one emits one logit per item.
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut h = self.layers[0].forward(x, mode);
        for l in self.layers.iter_mut().skip(1) {
            h = l.forward(&h, mode);
        }
        h
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    pub fn params(&mut self) -> Vec<Param<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.params()).collect()
    }

    pub fn n_params(&mut self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn constrain(&mut self) {
        self.layers.iter_mut().for_each(|l| l.constrain());
    }

    /// Flattened persistent state as `(name, values)`, names prefixed with the
    /// layer index.
    pub fn export_state(&mut self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let lname = l.name();
            for (name, v) in l.state() {
                out.push((format!("{i}.{lname}.{name}"), v.clone()));
            }
        }
        out
    }

    pub fn import_state(&mut self, state: &[(String, Vec<T>)]) -> Result<(), String> {
        let mut it = state.iter();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let lname = l.name();
            for (name, v) in l.state() {
                let key = format!("{i}.{lname}.{name}");
                let (k, src) = it.next().ok_or_else(|| format!("missing tensor {key}"))?;
                if *k != key || src.len() != v.len() {
                    return Err(format!("expected {key} ({}), found {k} ({})", v.len(), src.len()));
                }
                v.copy_from_slice(src);
            }
        }
        if let Some((k, _)) = it.next() {
            return Err(format!("unexpected tensor {k}"));
        }
        Ok(())
    }

    /// Positive-class probability per item, evaluation mode, in chunks.
    pub fn predict_proba(&mut self, x: &Tensor<T>) -> Vec<T> {
        const CHUNK: usize = 64;
        let n = x.batch();
        let il = x.item_len();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let chunk = Tensor::from_vec(
                [end - start, x.shape[1], x.shape[2], x.shape[3]],
                x.data[start * il..end * il].to_vec(),
            );
            let logits = self.forward(&chunk, Mode::Eval);
            out.extend(logits.data.iter().map(|&z| sigmoid(z)));
            start = end;
        }
        out
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Glorot-uniform initialisation.
pub fn glorot<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::c(rng.gen_range(-limit..limit))).collect()
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for j in 0..8 {
            acc[j] += ca[j] * cb[j];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference checks for layer gradients.
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Uses the scalar objective `sum(out * probe)` with a random probe.
    /// Returns the worst relative error over inputs and parameters.
    pub fn check_layer<L: Layer<f64>>(layer: &mut L, shape: [usize; 4], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, shape);
        let out = layer.forward(&x, Mode::Train);
        let probe = random_tensor(&mut rng, out.shape);
        let gx = layer.backward(&probe);
        let analytic: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.to_vec()).collect();

        let objective = |layer: &mut L, x: &Tensor<f64>| -> f64 {
            let y = layer.forward(x, Mode::Train);
            y.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut xp = x.clone();
        for i in 0..x.data.len() {
            let orig = xp.data[i];
            xp.data[i] = orig + h;
            let fp = objective(layer, &xp);
            xp.data[i] = orig - h;
            let fm = objective(layer, &xp);
            xp.data[i] = orig;
            worst = worst.max(rel_err((fp - fm) / (2.0 * h), gx.data[i]));
        }
        for (pi, grad) in analytic.iter().enumerate() {
            for j in 0..grad.len() {
                let orig = layer.params()[pi].value[j];
                layer.params()[pi].value[j] = orig + h;
                let fp = objective(layer, &x);
                layer.params()[pi].value[j] = orig - h;
                let fm = objective(layer, &x);
                layer.params()[pi].value[j] = orig;
                worst = worst.max(rel_err((fp - fm) / (2.0 * h), grad[j]));
            }
        }
        worst
    }
}
