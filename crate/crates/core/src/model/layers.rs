//! Layers with explicit forward caches and reverse-mode backward passes.

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Map, Scalar};
use crate::error::{Error, Result};

/// Square convolution, stride 1, same padding, optional fused ReLU.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub relu: bool,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input: Map<T>,
    output: Map<T>,
}

fn im2col<T: Scalar>(x: &Map<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.h, x.w);
    let pad = (k / 2) as isize;
    let mut col = vec![T::ZERO; x.c * k * k * h * w];
    let mut row = 0;
    for c in 0..x.c {
        let plane = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x0 < x1 {
                        let s0 = (x0 as isize + dx) as usize;
                        dst_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize) -> Map<T> {
    let pad = (k / 2) as isize;
    let mut out = Map::zeros(c, h, w);
    let mut row = 0;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = (ch * h + sy as usize) * w;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        out.data[base + (xx as isize + dx) as usize] += src[y * w + xx];
                    }
                }
                row += 1;
            }
        }
    }
    out
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight =
            store.add_he_uniform(format!("{name}.weight"), vec![cout, cin, k, k], fan_in, rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![cout]);
        Self {
            cin,
            cout,
            k,
            relu,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: Map<T>,
    ) -> Result<(Map<T>, ConvCache<T>)> {
        if x.c != self.cin {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.cin, x.c
            )));
        }
        let n = x.plane();
        let kk = self.cin * self.k * self.k;
        let mut y = Map::zeros(self.cout, x.h, x.w);
        let bias = p.get(self.bias);
        for (c, b) in bias.iter().enumerate() {
            y.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        if self.k == 1 {
            matmul(
                self.cout,
                kk,
                n,
                p.get(self.weight),
                &x.data,
                &mut y.data,
                true,
            );
        } else {
            let col = im2col(&x, self.k);
            matmul(
                self.cout,
                kk,
                n,
                p.get(self.weight),
                &col,
                &mut y.data,
                true,
            );
        }
        if self.relu {
            y.data.iter_mut().for_each(|v| {
                if !(*v > T::ZERO) {
                    *v = T::ZERO
                }
            });
        }
        Ok((
            y.clone(),
            ConvCache {
                input: x,
                output: y,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &ConvCache<T>,
        mut dy: Map<T>,
        grads: &mut Gradients<T>,
    ) -> Map<T> {
        let x = &cache.input;
        let n = x.plane();
        let kk = self.cin * self.k * self.k;
        if self.relu {
            for (g, o) in dy.data.iter_mut().zip(&cache.output.data) {
                if !(*o > T::ZERO) {
                    *g = T::ZERO;
                }
            }
        }
        {
            let db = grads.get_mut(self.bias);
            for (c, slot) in db.iter_mut().enumerate() {
                *slot += dy.data[c * n..(c + 1) * n].iter().copied().sum::<T>();
            }
        }
        let col_owned;
        let col: &[T] = if self.k == 1 {
            &x.data
        } else {
            col_owned = im2col(x, self.k);
            &col_owned
        };
        // dW (cout x kk) += dY (cout x n) * col^T (n x kk)
        matmul_a_bt(
            self.cout,
            n,
            kk,
            &dy.data,
            col,
            grads.get_mut(self.weight),
            true,
        );
        // dcol (kk x n) = W^T (kk x cout) * dY (cout x n)
        let mut dcol = vec![T::ZERO; kk * n];
        matmul_at_b(
            kk,
            self.cout,
            n,
            p.get(self.weight),
            &dy.data,
            &mut dcol,
            false,
        );
        if self.k == 1 {
            Map::from_vec(self.cin, x.h, x.w, dcol)
        } else {
            col2im(&dcol, self.cin, x.h, x.w, self.k)
        }
    }
}

/// Non-overlapping max pooling with independent frequency/time factors.
/// Trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub ph: usize,
    pub pw: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    in_shape: (usize, usize, usize),
    argmax: Vec<usize>,
}

impl MaxPool {
    pub const IDENTITY: MaxPool = MaxPool { ph: 1, pw: 1 };

    pub fn new(ph: usize, pw: usize) -> Self {
        Self { ph, pw }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.ph, w / self.pw)
    }

    pub fn forward<T: Scalar>(&self, x: Map<T>) -> Result<(Map<T>, PoolCache)> {
        let (oh, ow) = self.out_dims(x.h, x.w);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!(
                "pool {}x{} on {}x{} map",
                self.ph, self.pw, x.h, x.w
            )));
        }
        let mut out = Map::zeros(x.c, oh, ow);
        let mut argmax = vec![0; x.c * oh * ow];
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (c * x.h + oy * self.ph) * x.w + ox * self.pw;
                    for dy in 0..self.ph {
                        for dx in 0..self.pw {
                            let i = (c * x.h + oy * self.ph + dy) * x.w + ox * self.pw + dx;
                            if x.data[i] > x.data[best] {
                                best = i;
                            }
                        }
                    }
                    let o = (c * oh + oy) * ow + ox;
                    out.data[o] = x.data[best];
                    argmax[o] = best;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                in_shape: x.shape(),
                argmax,
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, cache: &PoolCache, dy: Map<T>) -> Map<T> {
        let (c, h, w) = cache.in_shape;
        let mut dx = Map::zeros(c, h, w);
        for (g, &i) in dy.data.iter().zip(&cache.argmax) {
            dx.data[i] += *g;
        }
        dx
    }
}

/// 3x3 max pooling with stride 1 and same output size (Inception pool branch).
#[derive(Debug, Clone, Copy)]
pub struct SamePool3;

impl SamePool3 {
    pub fn forward<T: Scalar>(x: &Map<T>) -> (Map<T>, PoolCache) {
        let mut out = Map::zeros(x.c, x.h, x.w);
        let mut argmax = vec![0; x.data.len()];
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut best = (c * x.h + y) * x.w + xx;
                    for yy in y.saturating_sub(1)..(y + 2).min(x.h) {
                        for xi in xx.saturating_sub(1)..(xx + 2).min(x.w) {
                            let i = (c * x.h + yy) * x.w + xi;
                            if x.data[i] > x.data[best] {
                                best = i;
                            }
                        }
                    }
                    let o = (c * x.h + y) * x.w + xx;
                    out.data[o] = x.data[best];
                    argmax[o] = best;
                }
            }
        }
        (
            out,
            PoolCache {
                in_shape: x.shape(),
                argmax,
            },
        )
    }

    pub fn backward<T: Scalar>(cache: &PoolCache, dy: &Map<T>) -> Map<T> {
        let (c, h, w) = cache.in_shape;
        let mut dx = Map::zeros(c, h, w);
        for (g, &i) in dy.data.iter().zip(&cache.argmax) {
            dx.data[i] += *g;
        }
        dx
    }
}

/// Fully connected layer on a flattened map.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight =
            store.add_he_uniform(format!("{name}.weight"), vec![outputs, inputs], inputs, rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![outputs]);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let mut y = p.get(self.bias).to_vec();
        matmul(
            self.outputs,
            self.inputs,
            1,
            p.get(self.weight),
            x,
            &mut y,
            true,
        );
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        dy: &[T],
        grads: &mut Gradients<T>,
    ) -> Vec<T> {
        for (b, g) in grads.get_mut(self.bias).iter_mut().zip(dy) {
            *b += *g;
        }
        matmul(
            self.outputs,
            1,
            self.inputs,
            dy,
            x,
            grads.get_mut(self.weight),
            true,
        );
        let mut dx = vec![T::ZERO; self.inputs];
        matmul_at_b(
            self.inputs,
            self.outputs,
            1,
            p.get(self.weight),
            dy,
            &mut dx,
            false,
        );
        dx
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `(e - mean) / sqrt(var + eps)` without learned affine parameters.
pub fn layer_norm<T: Scalar>(e: &[T]) -> Vec<T> {
    let n = T::from_f64(e.len() as f64);
    let mean = e.iter().copied().sum::<T>() / n;
    let var = e.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::ONE / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    e.iter().map(|&v| (v - mean) * inv).collect()
}

/// Backward of [`layer_norm`] given its input and upstream gradient.
pub fn layer_norm_backward<T: Scalar>(e: &[T], dy: &[T]) -> Vec<T> {
    let n = T::from_f64(e.len() as f64);
    let mean = e.iter().copied().sum::<T>() / n;
    let var = e.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::ONE / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    let y: Vec<T> = e.iter().map(|&v| (v - mean) * inv).collect();
    let mean_dy = dy.iter().copied().sum::<T>() / n;
    let mean_dy_y = dy.iter().zip(&y).map(|(&g, &v)| g * v).sum::<T>() / n;
    dy.iter()
        .zip(&y)
        .map(|(&g, &v)| inv * (g - mean_dy - v * mean_dy_y))
        .collect()
}
