use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axpy, dot, glorot, Layer, Mode, Param, Scalar, Tensor};

/// Fully connected layer over the flattened item; output `[n, out, 1, 1]`.
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `[n_out, n_in]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    /// Per-unit bound on the L2 norm of incoming weights.
    pub max_norm: Option<f64>,
    gw: Vec<T>,
    gb: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        Dense {
            n_in,
            n_out,
            weight: glorot(rng, n_in, n_out, n_in * n_out),
            bias: vec![T::zero(); n_out],
            max_norm: None,
            gw: vec![T::zero(); n_in * n_out],
            gb: vec![T::zero(); n_out],
            input: None,
        }
    }

    pub fn with_max_norm(mut self, v: f64) -> Self {
        self.max_norm = Some(v);
        self
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        assert_eq!(x.item_len(), self.n_in, "dense input width");
        let n = x.batch();
        let mut y = Tensor::zeros([n, self.n_out, 1, 1]);
        for b in 0..n {
            let xi = x.item(b);
            let yi = y.item_mut(b);
            for o in 0..self.n_out {
                yi[o] = self.bias[o] + dot(&self.weight[o * self.n_in..(o + 1) * self.n_in], xi);
            }
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("dense backward before forward");
        self.gw.iter_mut().for_each(|v| *v = T::zero());
        self.gb.iter_mut().for_each(|v| *v = T::zero());
        let mut gx = Tensor::zeros(x.shape);
        for b in 0..x.batch() {
            let xi = x.item(b);
            let gi = g.item(b);
            let gxi = gx.item_mut(b);
            for o in 0..self.n_out {
                let go = gi[o];
                self.gb[o] += go;
                axpy(go, xi, &mut self.gw[o * self.n_in..(o + 1) * self.n_in]);
                axpy(go, &self.weight[o * self.n_in..(o + 1) * self.n_in], gxi);
            }
        }
        gx
    }

    fn params(&mut self) -> Vec<Param<'_, T>> {
        vec![
            Param {
                value: &mut self.weight,
                grad: &mut self.gw,
            },
            Param {
                value: &mut self.bias,
                grad: &mut self.gb,
            },
        ]
    }

    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn constrain(&mut self) {
        if let Some(m) = self.max_norm {
            for row in self.weight.chunks_mut(self.n_in) {
                clip_norm(row, T::c(m));
            }
        }
    }
}

pub(super) fn clip_norm<T: Scalar>(v: &mut [T], max: T) {
    let norm = dot(v, v).sqrt();
    if norm > max {
        // Keras applies max / (eps + norm)
        let s = max / (T::c(1e-7) + norm);
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Trainable scale and shift per row (`channel * height` index), shared along
/// the last axis. Starts as the identity.
pub struct Affine<T> {
    pub rows: usize,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    gs: Vec<T>,
    gh: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Affine<T> {
    pub fn new(rows: usize) -> Self {
        Affine {
            rows,
            scale: vec![T::one(); rows],
            shift: vec![T::zero(); rows],
            gs: vec![T::zero(); rows],
            gh: vec![T::zero(); rows],
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Affine<T> {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        assert_eq!(x.shape[1] * x.shape[2], self.rows, "affine row count");
        let w = x.shape[3];
        let mut y = x.clone();
        for chunk in y.data.chunks_mut(self.rows * w) {
            for (r, row) in chunk.chunks_mut(w).enumerate() {
                let (s, h) = (self.scale[r], self.shift[r]);
                row.iter_mut().for_each(|v| *v = *v * s + h);
            }
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("affine backward before forward");
        let w = x.shape[3];
        self.gs.iter_mut().for_each(|v| *v = T::zero());
        self.gh.iter_mut().for_each(|v| *v = T::zero());
        let mut gx = g.clone();
        for (gchunk, xchunk) in gx.data.chunks_mut(self.rows * w).zip(x.data.chunks(self.rows * w)) {
            for (r, (grow, xrow)) in gchunk.chunks_mut(w).zip(xchunk.chunks(w)).enumerate() {
                self.gs[r] += dot(grow, xrow);
                self.gh[r] += grow.iter().copied().sum::<T>();
                let s = self.scale[r];
                grow.iter_mut().for_each(|v| *v *= s);
            }
        }
        gx
    }

    fn params(&mut self) -> Vec<Param<'_, T>> {
        vec![
            Param {
                value: &mut self.scale,
                grad: &mut self.gs,
            },
            Param {
                value: &mut self.shift,
                grad: &mut self.gh,
            },
        ]
    }

    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        vec![("scale", &mut self.scale), ("shift", &mut self.shift)]
    }
}

/// Batch normalisation per channel (axis 1) over batch, height and width.
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    gg: Vec<T>,
    gbeta: Vec<T>,
    xhat: Option<Tensor<T>>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.99,
            eps: 1e-3,
            gg: vec![T::zero(); channels],
            gbeta: vec![T::zero(); channels],
            xhat: None,
            inv_std: vec![T::zero(); channels],
        }
    }

    fn plane(x: &Tensor<T>) -> usize {
        x.shape[2] * x.shape[3]
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        assert_eq!(x.shape[1], self.channels, "batchnorm channel count");
        let (n, c, p) = (x.batch(), self.channels, Self::plane(x));
        let eps = T::c(self.eps);
        let mut y = x.clone();
        match mode {
            Mode::Eval => {
                for b in 0..n {
                    for ch in 0..c {
                        let s = self.gamma[ch] / (self.running_var[ch] + eps).sqrt();
                        let sh = self.beta[ch] - self.running_mean[ch] * s;
                        let off = (b * c + ch) * p;
                        y.data[off..off + p].iter_mut().for_each(|v| *v = *v * s + sh);
                    }
                }
            }
            Mode::Train => {
                let count = T::c((n * p) as f64);
                let mut xhat = x.clone();
                let m = T::c(self.momentum);
                for ch in 0..c {
                    let mut sum = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * p;
                        sum += x.data[off..off + p].iter().copied().sum::<T>();
                    }
                    let mean = sum / count;
                    let mut sq = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * p;
                        sq += x.data[off..off + p].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                    }
                    let var = sq / count;
                    let inv = T::one() / (var + eps).sqrt();
                    self.inv_std[ch] = inv;
                    for b in 0..n {
                        let off = (b * c + ch) * p;
                        for i in off..off + p {
                            let h = (x.data[i] - mean) * inv;
                            xhat.data[i] = h;
                            y.data[i] = self.gamma[ch] * h + self.beta[ch];
                        }
                    }
                    self.running_mean[ch] = m * self.running_mean[ch] + (T::one() - m) * mean;
                    self.running_var[ch] = m * self.running_var[ch] + (T::one() - m) * var;
                }
                self.xhat = Some(xhat);
            }
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let xhat = self.xhat.as_ref().expect("batchnorm backward before forward");
        let (n, c, p) = (xhat.batch(), self.channels, Self::plane(xhat));
        let count = T::c((n * p) as f64);
        let mut gx = Tensor::zeros(xhat.shape);
        for ch in 0..c {
            let (mut sg, mut sgx) = (T::zero(), T::zero());
            for b in 0..n {
                let off = (b * c + ch) * p;
                sg += g.data[off..off + p].iter().copied().sum::<T>();
                sgx += dot(&g.data[off..off + p], &xhat.data[off..off + p]);
            }
            self.gbeta[ch] = sg;
            self.gg[ch] = sgx;
            let k = self.gamma[ch] * self.inv_std[ch] / count;
            for b in 0..n {
                let off = (b * c + ch) * p;
                for i in off..off + p {
                    gx.data[i] = k * (count * g.data[i] - sg - xhat.data[i] * sgx);
                }
            }
        }
        gx
    }

    fn params(&mut self) -> Vec<Param<'_, T>> {
        vec![
            Param {
                value: &mut self.gamma,
                grad: &mut self.gg,
            },
            Param {
                value: &mut self.beta,
                grad: &mut self.gbeta,
            },
        ]
    }

    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        vec![
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }
}

pub struct LeakyRelu<T> {
    pub alpha: f64,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(alpha: f64) -> Self {
        LeakyRelu { alpha, input: None }
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let a = T::c(self.alpha);
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v *= a
            }
        });
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("leaky relu backward before forward");
        let a = T::c(self.alpha);
        let mut gx = g.clone();
        for (gv, &xv) in gx.data.iter_mut().zip(&x.data) {
            if xv < T::zero() {
                *gv *= a;
            }
        }
        gx
    }
}

/// Exponential linear unit with unit scale.
pub struct Elu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Elu<T> {
    pub fn new() -> Self {
        Elu { output: None }
    }
}

impl<T: Scalar> Default for Elu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Elu<T> {
    fn name(&self) -> &'static str {
        "elu"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| {
            if *v <= T::zero() {
                *v = v.exp_m1()
            }
        });
        if mode == Mode::Train {
            self.output = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let y = self.output.as_ref().expect("elu backward before forward");
        let mut gx = g.clone();
        for (gv, &yv) in gx.data.iter_mut().zip(&y.data) {
            if yv <= T::zero() {
                *gv *= yv + T::one();
            }
        }
        gx
    }
}

/// Inverted dropout; identity in evaluation mode.
pub struct Dropout<T> {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Vec<T>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: Vec::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = vec![T::one(); x.data.len()];
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = T::c(1.0 / keep);
        let rng = &mut self.rng;
        self.mask = (0..x.data.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let mut y = x.clone();
        y.data.iter_mut().zip(&self.mask).for_each(|(v, &m)| *v *= m);
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let mut gx = g.clone();
        gx.data.iter_mut().zip(&self.mask).for_each(|(v, &m)| *v *= m);
        gx
    }
}

/// Non-overlapping average pooling along the last axis; a trailing remainder
/// shorter than the pool is dropped.
pub struct AvgPoolW<T> {
    pub pool: usize,
    in_shape: [usize; 4],
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> AvgPoolW<T> {
    pub fn new(pool: usize) -> Self {
        AvgPoolW {
            pool,
            in_shape: [0; 4],
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for AvgPoolW<T> {
    fn name(&self) -> &'static str {
        "avgpool"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let wo = w / self.pool;
        let inv = T::c(1.0 / self.pool as f64);
        let mut y = Tensor::zeros([n, c, h, wo]);
        for (yrow, xrow) in y.data.chunks_mut(wo.max(1)).zip(x.data.chunks(w)) {
            for (j, v) in yrow.iter_mut().enumerate().take(wo) {
                *v = xrow[j * self.pool..(j + 1) * self.pool].iter().copied().sum::<T>() * inv;
            }
        }
        self.in_shape = x.shape;
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let w = self.in_shape[3];
        let wo = w / self.pool;
        let inv = T::c(1.0 / self.pool as f64);
        let mut gx = Tensor::zeros(self.in_shape);
        for (grow, xrow) in g.data.chunks(wo.max(1)).zip(gx.data.chunks_mut(w)) {
            for (j, &gv) in grow.iter().enumerate().take(wo) {
                xrow[j * self.pool..(j + 1) * self.pool]
                    .iter_mut()
                    .for_each(|v| *v = gv * inv);
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_layer;
    use super::*;

    const TOL: f64 = 1e-4;
    const CASES: u64 = 20;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_gradients() {
        for s in 0..CASES {
            let mut l = Dense::<f64>::new(6, 4, &mut rng(s));
            l.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
            let e = check_layer(&mut l, [3, 2, 1, 3], 100 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn affine_gradients() {
        for s in 0..CASES {
            let mut l = Affine::<f64>::new(4);
            l.scale = vec![0.5, -1.2, 2.0, 0.9];
            l.shift = vec![0.1, 0.0, -0.3, 1.0];
            let e = check_layer(&mut l, [2, 1, 4, 5], 200 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn batchnorm_gradients() {
        for s in 0..CASES {
            let mut l = BatchNorm::<f64>::new(3);
            l.gamma = vec![1.5, 0.7, -0.4];
            l.beta = vec![0.2, -0.1, 0.0];
            let e = check_layer(&mut l, [4, 3, 1, 5], 300 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn activation_gradients() {
        for s in 0..CASES {
            let e = check_layer(&mut LeakyRelu::<f64>::new(0.5), [2, 3, 2, 4], 400 + s);
            assert!(e < TOL, "leaky seed {s}: {e}");
            let e = check_layer(&mut Elu::<f64>::new(), [2, 3, 2, 4], 500 + s);
            assert!(e < TOL, "elu seed {s}: {e}");
        }
    }

    #[test]
    fn pooling_gradients() {
        for s in 0..CASES {
            let e = check_layer(&mut AvgPoolW::<f64>::new(4), [2, 3, 1, 18], 600 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut l = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec([4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = l.forward(&x, Mode::Eval);
        let s = 1.0 / (1.0f64 + 1e-3).sqrt();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b * s).abs() < 1e-12);
        }
        l.forward(&x, Mode::Train);
        assert!((l.running_mean[0] - 0.025).abs() < 1e-12);
        assert!((l.running_var[0] - (0.99 + 0.01 * 1.25)).abs() < 1e-12);
    }

    #[test]
    fn dropout_scales_and_is_identity_in_eval() {
        let mut d = Dropout::<f64>::new(0.5, 1);
        let x = Tensor::from_vec([1, 1000, 1, 1], vec![1.0; 1000]);
        assert_eq!(d.forward(&x, Mode::Eval), x);
        let y = d.forward(&x, Mode::Train);
        assert!(y.data.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn max_norm_clips_rows() {
        let mut l = Dense::<f64>::new(2, 2, &mut rng(0)).with_max_norm(0.25);
        l.weight = vec![3.0, 4.0, 0.1, 0.1];
        l.constrain();
        let n0 = (l.weight[0].powi(2) + l.weight[1].powi(2)).sqrt();
        assert!((n0 - 0.25).abs() < 1e-6);
        assert_eq!(&l.weight[2..], &[0.1, 0.1]);
    }
}
