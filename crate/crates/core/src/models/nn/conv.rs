use rand::Rng;

use super::layers::clip_norm;
use super::{axpy, dot, glorot, Layer, Mode, Param, Scalar, Tensor};

/// Temporal convolution (`f1` kernels of length `k`, 'same' padding, no bias)
/// followed by a depthwise spatial convolution across all `c` input rows with
/// depth multiplier `d`.
///
/// Input `[n, 1, c, t]`, output `[n, f1 * d, 1, t]`; output map `f * d + j`
/// uses temporal kernel `f` and spatial filter `f * d + j`. Both stages are
/// linear and act on different axes, so the spatial sum is taken first
/// (`f1 * d` rows instead of `f1 * c`), which gives identical results.
pub struct SpatioTemporalConv<T> {
    pub c: usize,
    pub t: usize,
    pub f1: usize,
    pub d: usize,
    pub k: usize,
    /// `[f1, k]`.
    pub temporal: Vec<T>,
    /// `[f1 * d, c]`.
    pub spatial: Vec<T>,
    pub spatial_max_norm: Option<f64>,
    g_temporal: Vec<T>,
    g_spatial: Vec<T>,
    input: Option<Tensor<T>>,
    /// Padded spatial mixtures per item, `[n, f1 * d, t + k - 1]`.
    mixed: Vec<T>,
}

impl<T: Scalar> SpatioTemporalConv<T> {
    pub fn new(c: usize, t: usize, f1: usize, d: usize, k: usize, rng: &mut impl Rng) -> Self {
        SpatioTemporalConv {
            c,
            t,
            f1,
            d,
            k,
            temporal: glorot(rng, k, f1 * k, f1 * k),
            spatial: glorot(rng, c, c * d, f1 * d * c),
            spatial_max_norm: None,
            g_temporal: vec![T::zero(); f1 * k],
            g_spatial: vec![T::zero(); f1 * d * c],
            input: None,
            mixed: Vec::new(),
        }
    }

    pub fn with_spatial_max_norm(mut self, v: f64) -> Self {
        self.spatial_max_norm = Some(v);
        self
    }

    fn maps(&self) -> usize {
        self.f1 * self.d
    }

    fn pad_left(&self) -> usize {
        (self.k - 1) / 2
    }

    fn padded(&self) -> usize {
        self.t + self.k - 1
    }
}

impl<T: Scalar> Layer<T> for SpatioTemporalConv<T> {
    fn name(&self) -> &'static str {
        "spatiotemporal_conv"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        assert_eq!(x.shape[1..], [1, self.c, self.t], "spatiotemporal conv input shape");
        let (n, m, t, tp, pl) = (x.batch(), self.maps(), self.t, self.padded(), self.pad_left());
        let mut mixed = vec![T::zero(); n * m * tp];
        let mut y = Tensor::zeros([n, m, 1, t]);
        for b in 0..n {
            let xi = x.item(b);
            let mb = &mut mixed[b * m * tp..(b + 1) * m * tp];
            for map in 0..m {
                let row = &mut mb[map * tp + pl..map * tp + pl + t];
                for ch in 0..self.c {
                    axpy(self.spatial[map * self.c + ch], &xi[ch * t..(ch + 1) * t], row);
                }
            }
            let yi = y.item_mut(b);
            for map in 0..m {
                let f = map / self.d;
                let src = &mb[map * tp..(map + 1) * tp];
                let out = &mut yi[map * t..(map + 1) * t];
                for kk in 0..self.k {
                    axpy(self.temporal[f * self.k + kk], &src[kk..kk + t], out);
                }
            }
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
            self.mixed = mixed;
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("spatiotemporal conv backward before forward");
        let (n, m, t, tp, pl) = (x.batch(), self.maps(), self.t, self.padded(), self.pad_left());
        self.g_temporal.iter_mut().for_each(|v| *v = T::zero());
        self.g_spatial.iter_mut().for_each(|v| *v = T::zero());
        let mut gx = Tensor::zeros(x.shape);
        let mut gmix = vec![T::zero(); tp];
        for b in 0..n {
            let xi = x.item(b);
            let gi = g.item(b);
            let mb = &self.mixed[b * m * tp..(b + 1) * m * tp];
            let gxi = gx.item_mut(b);
            for map in 0..m {
                let f = map / self.d;
                let src = &mb[map * tp..(map + 1) * tp];
                let go = &gi[map * t..(map + 1) * t];
                gmix.iter_mut().for_each(|v| *v = T::zero());
                for kk in 0..self.k {
                    self.g_temporal[f * self.k + kk] += dot(go, &src[kk..kk + t]);
                    axpy(self.temporal[f * self.k + kk], go, &mut gmix[kk..kk + t]);
                }
                let gm = &gmix[pl..pl + t];
                for ch in 0..self.c {
                    let xc = &xi[ch * t..(ch + 1) * t];
                    self.g_spatial[map * self.c + ch] += dot(gm, xc);
                    axpy(self.spatial[map * self.c + ch], gm, &mut gxi[ch * t..(ch + 1) * t]);
                }
            }
        }
        gx
    }

    fn params(&mut self) -> Vec<Param<'_, T>> {
        vec![
            Param {
                value: &mut self.temporal,
                grad: &mut self.g_temporal,
            },
            Param {
                value: &mut self.spatial,
                grad: &mut self.g_spatial,
            },
        ]
    }

    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        vec![("temporal", &mut self.temporal), ("spatial", &mut self.spatial)]
    }

    fn constrain(&mut self) {
        if let Some(v) = self.spatial_max_norm {
            for row in self.spatial.chunks_mut(self.c) {
                clip_norm(row, T::c(v));
            }
        }
    }
}

/// Depthwise temporal convolution (one length-`k` kernel per map, 'same'
/// padding) followed by a pointwise mix of `m` maps into `f2`; no biases.
/// Input `[n, m, 1, t]`, output `[n, f2, 1, t]`.
pub struct SeparableConv<T> {
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub f2: usize,
    /// `[m, k]`.
    pub depthwise: Vec<T>,
    /// `[f2, m]`.
    pub pointwise: Vec<T>,
    g_depthwise: Vec<T>,
    g_pointwise: Vec<T>,
    padded_input: Vec<T>,
    depth_out: Vec<T>,
    batch: usize,
}

impl<T: Scalar> SeparableConv<T> {
    pub fn new(m: usize, t: usize, k: usize, f2: usize, rng: &mut impl Rng) -> Self {
        SeparableConv {
            m,
            t,
            k,
            f2,
            depthwise: glorot(rng, k * m, k, m * k),
            pointwise: glorot(rng, m, f2, f2 * m),
            g_depthwise: vec![T::zero(); m * k],
            g_pointwise: vec![T::zero(); f2 * m],
            padded_input: Vec::new(),
            depth_out: Vec::new(),
            batch: 0,
        }
    }

    fn pad_left(&self) -> usize {
        (self.k - 1) / 2
    }

    fn padded(&self) -> usize {
        self.t + self.k - 1
    }
}

impl<T: Scalar> Layer<T> for SeparableConv<T> {
    fn name(&self) -> &'static str {
        "separable_conv"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        assert_eq!(x.shape[1..], [self.m, 1, self.t], "separable conv input shape");
        let (n, m, t, tp, pl) = (x.batch(), self.m, self.t, self.padded(), self.pad_left());
        let mut padded = vec![T::zero(); n * m * tp];
        let mut depth = vec![T::zero(); n * m * t];
        let mut y = Tensor::zeros([n, self.f2, 1, t]);
        for b in 0..n {
            let xi = x.item(b);
            for map in 0..m {
                let prow = &mut padded[(b * m + map) * tp..(b * m + map + 1) * tp];
                prow[pl..pl + t].copy_from_slice(&xi[map * t..(map + 1) * t]);
                let drow = &mut depth[(b * m + map) * t..(b * m + map + 1) * t];
                for kk in 0..self.k {
                    axpy(self.depthwise[map * self.k + kk], &prow[kk..kk + t], drow);
                }
            }
            let yi = y.item_mut(b);
            for o in 0..self.f2 {
                let out = &mut yi[o * t..(o + 1) * t];
                for map in 0..m {
                    let drow = &depth[(b * m + map) * t..(b * m + map + 1) * t];
                    axpy(self.pointwise[o * m + map], drow, out);
                }
            }
        }
        if mode == Mode::Train {
            self.padded_input = padded;
            self.depth_out = depth;
            self.batch = n;
        }
        y
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let (n, m, t, tp, pl) = (self.batch, self.m, self.t, self.padded(), self.pad_left());
        self.g_depthwise.iter_mut().for_each(|v| *v = T::zero());
        self.g_pointwise.iter_mut().for_each(|v| *v = T::zero());
        let mut gx = Tensor::zeros([n, m, 1, t]);
        let mut gdepth = vec![T::zero(); t];
        let mut gpad = vec![T::zero(); tp];
        for b in 0..n {
            let gi = g.item(b);
            for map in 0..m {
                let drow = &self.depth_out[(b * m + map) * t..(b * m + map + 1) * t];
                gdepth.iter_mut().for_each(|v| *v = T::zero());
                for o in 0..self.f2 {
                    let go = &gi[o * t..(o + 1) * t];
                    self.g_pointwise[o * m + map] += dot(go, drow);
                    axpy(self.pointwise[o * m + map], go, &mut gdepth);
                }
                let prow = &self.padded_input[(b * m + map) * tp..(b * m + map + 1) * tp];
                gpad.iter_mut().for_each(|v| *v = T::zero());
                for kk in 0..self.k {
                    self.g_depthwise[map * self.k + kk] += dot(&gdepth, &prow[kk..kk + t]);
                    axpy(self.depthwise[map * self.k + kk], &gdepth, &mut gpad[kk..kk + t]);
                }
                gx.item_mut(b)[map * t..(map + 1) * t].copy_from_slice(&gpad[pl..pl + t]);
            }
        }
        gx
    }

    fn params(&mut self) -> Vec<Param<'_, T>> {
        vec![
            Param {
                value: &mut self.depthwise,
                grad: &mut self.g_depthwise,
            },
            Param {
                value: &mut self.pointwise,
                grad: &mut self.g_pointwise,
            },
        ]
    }

    fn state(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        vec![("depthwise", &mut self.depthwise), ("pointwise", &mut self.pointwise)]
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_layer, random_tensor};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    /// Temporal convolution of every input row first, then the spatial sum.
    fn direct_order(l: &SpatioTemporalConv<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (c, t, k) = (l.c, l.t, l.k);
        let pl = (k - 1) / 2;
        let mut y = Tensor::zeros([x.batch(), l.f1 * l.d, 1, t]);
        for b in 0..x.batch() {
            let xi = x.item(b);
            for f in 0..l.f1 {
                let mut z = vec![0.0; c * t];
                for ch in 0..c {
                    for tt in 0..t {
                        let mut s = 0.0;
                        for kk in 0..k {
                            let src = tt as isize + kk as isize - pl as isize;
                            if src >= 0 && (src as usize) < t {
                                s += l.temporal[f * k + kk] * xi[ch * t + src as usize];
                            }
                        }
                        z[ch * t + tt] = s;
                    }
                }
                for j in 0..l.d {
                    let map = f * l.d + j;
                    for tt in 0..t {
                        let v: f64 = (0..c).map(|ch| l.spatial[map * c + ch] * z[ch * t + tt]).sum();
                        y.item_mut(b)[map * t + tt] = v;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn spatial_first_equals_temporal_first() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut l = SpatioTemporalConv::<f64>::new(5, 40, 3, 2, 10, &mut rng);
            let x = random_tensor(&mut rng, [2, 1, 5, 40]);
            let fast = l.forward(&x, Mode::Eval);
            let slow = direct_order(&l, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn same_padding_offsets() {
        // even kernel: 24 zeros on the left, 25 on the right, as in 'same' mode
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = SpatioTemporalConv::<f64>::new(1, 60, 1, 1, 50, &mut rng);
        l.spatial = vec![1.0];
        l.temporal = vec![0.0; 50];
        l.temporal[0] = 1.0;
        let mut x = Tensor::zeros([1, 1, 1, 60]);
        x.data[0] = 1.0;
        let y = l.forward(&x, Mode::Eval);
        assert_eq!(y.data[24], 1.0);
        assert_eq!(y.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn spatiotemporal_gradients() {
        for s in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut l = SpatioTemporalConv::<f64>::new(3, 12, 2, 2, 5, &mut rng);
            let e = check_layer(&mut l, [2, 1, 3, 12], 700 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn separable_gradients() {
        for s in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut l = SeparableConv::<f64>::new(3, 11, 4, 2, &mut rng);
            let e = check_layer(&mut l, [2, 3, 1, 11], 800 + s);
            assert!(e < TOL, "seed {s}: {e}");
        }
    }

    #[test]
    fn spatial_max_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = SpatioTemporalConv::<f64>::new(4, 8, 1, 2, 3, &mut rng).with_spatial_max_norm(1.0);
        l.spatial = vec![2.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1];
        l.constrain();
        assert!((l.spatial[0] - 1.0).abs() < 1e-6);
        assert_eq!(&l.spatial[4..], &[0.1; 4]);
    }
}
