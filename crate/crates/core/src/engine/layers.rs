//! Forward and backward kernels on NCHW buffers.

use super::tensor::{gemm, Mat, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cg(&self) -> usize {
        self.cin / self.groups
    }

    fn og(&self) -> usize {
        self.cout / self.groups
    }

    fn rows(&self) -> usize {
        self.cg() * self.k * self.k
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn source(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], geo: &ConvGeom, group: usize, col: &mut [T]) {
    let (k, hw) = (geo.k, geo.hw_out());
    let plane = geo.h * geo.w;
    for c in 0..geo.cg() {
        let src = &x[(group * geo.cg() + c) * plane..][..plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..geo.ho {
                    let line = &mut dst[oy * geo.wo..(oy + 1) * geo.wo];
                    let Some(iy) = geo.source(oy, ky, geo.h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    for (ox, v) in line.iter_mut().enumerate() {
                        *v = match geo.source(ox, kx, geo.w) {
                            Some(ix) => src[iy * geo.w + ix],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], geo: &ConvGeom, group: usize, dx: &mut [T]) {
    let (k, hw) = (geo.k, geo.hw_out());
    let plane = geo.h * geo.w;
    for c in 0..geo.cg() {
        let dst = &mut dx[(group * geo.cg() + c) * plane..][..plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..geo.ho {
                    let Some(iy) = geo.source(oy, ky, geo.h) else {
                        continue;
                    };
                    for ox in 0..geo.wo {
                        if let Some(ix) = geo.source(ox, kx, geo.w) {
                            dst[iy * geo.w + ix] = dst[iy * geo.w + ix] + src[oy * geo.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(x: &[T], n: usize, geo: &ConvGeom, weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (og, rows, hw) = (geo.og(), geo.rows(), geo.hw_out());
    let in_len = geo.cin * geo.h * geo.w;
    let out_len = geo.cout * hw;
    let mut out = vec![T::zero(); n * out_len];
    let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * hw }];
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        for g in 0..geo.groups {
            let cols: &[T] = if geo.is_pointwise() {
                &xs[g * geo.cg() * hw..(g + 1) * geo.cg() * hw]
            } else {
                im2col(xs, geo, g, &mut col);
                &col
            };
            let w = Mat::new(&weight[g * og * rows..(g + 1) * og * rows], og, rows);
            let dst = &mut out[s * out_len + g * og * hw..][..og * hw];
            gemm(w, Mat::new(cols, rows, hw), T::zero(), dst);
        }
        if let Some(b) = bias {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut out[s * out_len + c * hw..][..hw] {
                    *v = *v + bc;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    geo: &ConvGeom,
    weight: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let (og, rows, hw) = (geo.og(), geo.rows(), geo.hw_out());
    let in_len = geo.cin * geo.h * geo.w;
    let out_len = geo.cout * hw;
    let mut dx = vec![T::zero(); if need_dx { n * in_len } else { 0 }];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); geo.cout];
    let mut col = vec![T::zero(); rows * hw];
    let mut dcol = vec![T::zero(); rows * hw];
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        for g in 0..geo.groups {
            let dys = &dy[s * out_len + g * og * hw..][..og * hw];
            let cols: &[T] = if geo.is_pointwise() {
                &xs[g * geo.cg() * hw..(g + 1) * geo.cg() * hw]
            } else {
                im2col(xs, geo, g, &mut col);
                &col
            };
            gemm(
                Mat::new(dys, og, hw),
                Mat::new(cols, rows, hw).t(),
                T::one(),
                &mut dw[g * og * rows..(g + 1) * og * rows],
            );
            if need_dx {
                let w = Mat::new(&weight[g * og * rows..(g + 1) * og * rows], og, rows);
                if geo.is_pointwise() {
                    let dst = &mut dx[s * in_len + g * geo.cg() * hw..][..geo.cg() * hw];
                    gemm(w.t(), Mat::new(dys, og, hw), T::one(), dst);
                } else {
                    gemm(w.t(), Mat::new(dys, og, hw), T::zero(), &mut dcol);
                    col2im(&dcol, geo, g, &mut dx[s * in_len..(s + 1) * in_len]);
                }
            }
        }
        for (c, d) in db.iter_mut().enumerate() {
            *d = *d + dy[s * out_len + c * hw..][..hw].iter().copied().sum::<T>();
        }
    }
    ConvGrads { dx, dw, db }
}

/// `y[n, f] = x[n, :] . w[f, :] + b[f]`
pub(crate) fn fc_forward<T: Scalar>(x: &[T], n: usize, d: usize, f: usize, weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut y = vec![T::zero(); n * f];
    gemm(Mat::new(x, n, d), Mat::new(weight, f, d).t(), T::zero(), &mut y);
    if let Some(b) = bias {
        for row in y.chunks_mut(f) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
    }
    y
}

pub(crate) fn fc_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    d: usize,
    f: usize,
    weight: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); f * d];
    gemm(Mat::new(dy, n, f).t(), Mat::new(x, n, d), T::zero(), &mut dw);
    let mut db = vec![T::zero(); f];
    for row in dy.chunks(f) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![T::zero(); n * d];
        gemm(Mat::new(dy, n, f), Mat::new(weight, f, d), T::zero(), &mut dx);
    }
    (dx, dw, db)
}

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batch norm over `(n, hw)` for each of `c` channels.
pub(crate) fn bn_forward_train<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, BnCache<T>, BnBatchStats<T>) {
    let m = T::from_usize(n * hw).expect("count");
    let eps = T::from_f64_lossy(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let v = &x[(s * c + ch) * hw..][..hw];
            mean[ch] = mean[ch] + v.iter().copied().sum::<T>();
        }
    }
    for v in &mut mean {
        *v = *v / m;
    }
    for s in 0..n {
        for ch in 0..c {
            let v = &x[(s * c + ch) * hw..][..hw];
            var[ch] = var[ch] + v.iter().map(|&e| (e - mean[ch]) * (e - mean[ch])).sum::<T>();
        }
    }
    for v in &mut var {
        *v = *v / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std }, BnBatchStats { mean, var })
}

pub(crate) fn bn_forward_eval<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> Vec<T> {
    let eps = T::from_f64_lossy(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                y[i] = x[i] * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Scalar>(
    dy: &[T],
    cache: &BnCache<T>,
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = T::from_usize(n * hw).expect("count");
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] = dgamma[ch] + dy[i] * cache.xhat[i];
                dbeta[ch] = dbeta[ch] + dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for s in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = k * (m * dy[i] - dbeta[ch] - cache.xhat[i] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub stride: usize,
}

/// Max pooling; also returns the flat input index chosen for every output.
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], n: usize, g: &PoolGeom) -> (Vec<T>, Vec<u32>) {
    let mut y = Vec::with_capacity(n * g.c * g.ho * g.wo);
    let mut arg = Vec::with_capacity(y.capacity());
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut best = base + oy * g.stride * g.w + ox * g.stride;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let i = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Scalar>(dy: &[T], arg: &[u32], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&i, &d) in arg.iter().zip(dy) {
        dx[i as usize] = dx[i as usize] + d;
    }
    dx
}

pub(crate) fn avgpool_forward<T: Scalar>(x: &[T], n: usize, g: &PoolGeom) -> Vec<T> {
    let area = T::from_usize(g.k * g.k).expect("area");
    let mut y = Vec::with_capacity(n * g.c * g.ho * g.wo);
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = T::zero();
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        acc = acc + x[base + (oy * g.stride + ky) * g.w + ox * g.stride + kx];
                    }
                }
                y.push(acc / area);
            }
        }
    }
    y
}

pub(crate) fn avgpool_backward<T: Scalar>(dy: &[T], n: usize, g: &PoolGeom) -> Vec<T> {
    let area = T::from_usize(g.k * g.k).expect("area");
    let mut dx = vec![T::zero(); n * g.c * g.h * g.w];
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let d = dy[(plane * g.ho + oy) * g.wo + ox] / area;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let i = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        dx[i] = dx[i] + d;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn global_avg_forward<T: Scalar>(x: &[T], planes: usize, hw: usize) -> Vec<T> {
    let d = T::from_usize(hw).expect("hw");
    (0..planes).map(|p| x[p * hw..(p + 1) * hw].iter().copied().sum::<T>() / d).collect()
}

pub(crate) fn global_avg_backward<T: Scalar>(dy: &[T], hw: usize) -> Vec<T> {
    let d = T::from_usize(hw).expect("hw");
    dy.iter().flat_map(|&g| std::iter::repeat_n(g / d, hw)).collect()
}
