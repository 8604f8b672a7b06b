//! Convolutional front end for acoustic features: three blocks of two 3×3
//! convolutions plus stride-2 max-pooling over time, for an overall 8×
//! time subsampling. Activations are `(channels, time, freq)` tensors.

use ndarray::{Array2, Array3};

use super::layers::Param;
use super::scalar::Real;

/// Sequence length after the three stride-2 time poolings (ceiling mode):
/// `ceil(ceil(ceil(t/2)/2)/2)`.
pub fn subsample_len(t: usize) -> usize {
    t.div_ceil(2).div_ceil(2).div_ceil(2)
}

/// 3×3 convolution, padding 1, arbitrary channel counts, via im2col.
#[derive(Debug, Clone)]
pub struct Conv3x3<T> {
    pub kernel: Param<T>, // (in_ch * 9, out_ch)
    pub bias: Param<T>,   // (1, out_ch)
    in_ch: usize,
    out_ch: usize,
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    h: usize,
    w: usize,
}

impl<T: Real> Conv3x3<T> {
    pub fn new(prefix: &str, in_ch: usize, out_ch: usize, seed: u64) -> Conv3x3<T> {
        Conv3x3 {
            kernel: Param::xavier(&format!("{prefix}.k"), in_ch * 9, out_ch, seed, true),
            bias: Param::zeros(&format!("{prefix}.b"), 1, out_ch, false),
            in_ch,
            out_ch,
        }
    }

    fn im2col(&self, x: &Array3<T>) -> Array2<T> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let mut cols = Array2::zeros((h * w, c * 9));
        for i in 0..h {
            for j in 0..w {
                let row = i * w + j;
                for ch in 0..c {
                    for (tap, (di, dj)) in taps().enumerate() {
                        let (si, sj) = (i as isize + di, j as isize + dj);
                        if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            cols[[row, ch * 9 + tap]] = x[[ch, si as usize, sj as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvCache<T>) {
        let (_, h, w) = x.dim();
        let cols = self.im2col(x);
        let flat = cols.dot(&self.kernel.value) + &self.bias.value;
        let mut y = Array3::zeros((self.out_ch, h, w));
        for o in 0..self.out_ch {
            for i in 0..h {
                for j in 0..w {
                    y[[o, i, j]] = flat[[i * w + j, o]];
                }
            }
        }
        (y, ConvCache { cols, h, w })
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Array3<T>) -> Array3<T> {
        let (h, w) = (cache.h, cache.w);
        let mut d_flat = Array2::zeros((h * w, self.out_ch));
        for o in 0..self.out_ch {
            for i in 0..h {
                for j in 0..w {
                    d_flat[[i * w + j, o]] = dy[[o, i, j]];
                }
            }
        }
        self.kernel.grad += &cache.cols.t().dot(&d_flat);
        for o in 0..self.out_ch {
            let mut acc = T::zero();
            for r in 0..h * w {
                acc += d_flat[[r, o]];
            }
            self.bias.grad[[0, o]] += acc;
        }
        let d_cols = d_flat.dot(&self.kernel.value.t());
        let mut dx = Array3::zeros((self.in_ch, h, w));
        for i in 0..h {
            for j in 0..w {
                let row = i * w + j;
                for ch in 0..self.in_ch {
                    for (tap, (di, dj)) in taps().enumerate() {
                        let (si, sj) = (i as isize + di, j as isize + dj);
                        if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            dx[[ch, si as usize, sj as usize]] += d_cols[[row, ch * 9 + tap]];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.kernel);
        f(&mut self.bias);
    }
}

fn taps() -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(|di| (-1..=1).map(move |dj| (di, dj)))
}

/// Max-pool with kernel and stride 2 over the time axis only, ceiling mode:
/// an odd trailing row pools alone.
pub struct TimePoolCache {
    /// For each output element, the input time index that won.
    argmax: Array3<usize>,
    in_time: usize,
}

pub fn time_pool_forward<T: Real>(x: &Array3<T>) -> (Array3<T>, TimePoolCache) {
    let (c, h, w) = x.dim();
    let ho = h.div_ceil(2);
    let mut y = Array3::zeros((c, ho, w));
    let mut argmax = Array3::zeros((c, ho, w));
    for ch in 0..c {
        for t in 0..ho {
            for j in 0..w {
                let i0 = 2 * t;
                let mut best = (i0, x[[ch, i0, j]]);
                if i0 + 1 < h && x[[ch, i0 + 1, j]] > best.1 {
                    best = (i0 + 1, x[[ch, i0 + 1, j]]);
                }
                y[[ch, t, j]] = best.1;
                argmax[[ch, t, j]] = best.0;
            }
        }
    }
    (y, TimePoolCache { argmax, in_time: h })
}

pub fn time_pool_backward<T: Real>(cache: &TimePoolCache, dy: &Array3<T>) -> Array3<T> {
    let (c, ho, w) = dy.dim();
    let mut dx = Array3::zeros((c, cache.in_time, w));
    for ch in 0..c {
        for t in 0..ho {
            for j in 0..w {
                dx[[ch, cache.argmax[[ch, t, j]], j]] += dy[[ch, t, j]];
            }
        }
    }
    dx
}

pub fn relu3_forward<T: Real>(x: &Array3<T>) -> (Array3<T>, Array3<T>) {
    let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
    (y, x.clone())
}

pub fn relu3_backward<T: Real>(pre: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.iter_mut().zip(pre.iter()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// One block: two ReLU convolutions then the stride-2 time pool.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv1: Conv3x3<T>,
    pub conv2: Conv3x3<T>,
}

pub struct ConvBlockCache<T> {
    c1: ConvCache<T>,
    pre1: Array3<T>,
    c2: ConvCache<T>,
    pre2: Array3<T>,
    pool: TimePoolCache,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(prefix: &str, in_ch: usize, out_ch: usize, seed: u64) -> ConvBlock<T> {
        ConvBlock {
            conv1: Conv3x3::new(&format!("{prefix}.c1"), in_ch, out_ch, seed),
            conv2: Conv3x3::new(&format!("{prefix}.c2"), out_ch, out_ch, seed),
        }
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvBlockCache<T>) {
        let (pre1, c1) = self.conv1.forward(x);
        let (a1, relu1) = relu3_forward(&pre1);
        let (pre2, c2) = self.conv2.forward(&a1);
        let (a2, relu2) = relu3_forward(&pre2);
        let (y, pool) = time_pool_forward(&a2);
        (
            y,
            ConvBlockCache {
                c1,
                pre1: relu1,
                c2,
                pre2: relu2,
                pool,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<T>, dy: &Array3<T>) -> Array3<T> {
        let d_a2 = time_pool_backward(&cache.pool, dy);
        let d_pre2 = relu3_backward(&cache.pre2, &d_a2);
        let d_a1 = self.conv2.backward(&cache.c2, &d_pre2);
        let d_pre1 = relu3_backward(&cache.pre1, &d_a1);
        self.conv1.backward(&cache.c1, &d_pre1)
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
    }
}
