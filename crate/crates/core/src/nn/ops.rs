//! Layer kernels with their hand-written reverse passes.
//!
//! Convolutions use "same" zero padding (`k / 2`) and im2col over bounded
//! chunks of output pixels, so memory stays flat for large slices.

use super::tensor::{Real, Tensor};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::of(slope)
                }
            }
        }
    }

    /// Derivative given the activation's output (the sign of the output
    /// equals the sign of the input for all three).
    #[inline]
    pub fn slope_at_output<T: Real>(self, out: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
        }
    }
}

/// Multiplies `grad` by the activation slope read off `output`.
pub fn activation_backward<T: Real>(act: Activation, output: &Tensor<T>, grad: &mut Tensor<T>) {
    if act == Activation::Linear {
        return;
    }
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        *g = *g * act.slope_at_output(o);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// Fills `cols` (`patch_len x (p1 - p0)`, row-major) for output pixels
/// `p0..p1` of one item.
fn im2col<T: Real>(
    input: &[T],
    (h, w): (usize, usize),
    shape: &ConvShape,
    wo: usize,
    (p0, p1): (usize, usize),
    cols: &mut [T],
) {
    let (k, s, pad) = (shape.kernel, shape.stride, (shape.kernel / 2) as isize);
    let np = p1 - p0;
    for ci in 0..shape.c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * np;
                let dst = &mut cols[row..row + np];
                for (q, d) in dst.iter_mut().enumerate() {
                    let p = p0 + q;
                    let (oy, ox) = (p / wo, p % wo);
                    let iy = (oy * s) as isize + ky as isize - pad;
                    let ix = (ox * s) as isize + kx as isize - pad;
                    *d = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        plane[iy as usize * w + ix as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
}

fn col2im_add<T: Real>(
    cols: &[T],
    (h, w): (usize, usize),
    shape: &ConvShape,
    wo: usize,
    (p0, p1): (usize, usize),
    dinput: &mut [T],
) {
    let (k, s, pad) = (shape.kernel, shape.stride, (shape.kernel / 2) as isize);
    let np = p1 - p0;
    for ci in 0..shape.c_in {
        let plane = &mut dinput[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * np;
                for (q, &v) in cols[row..row + np].iter().enumerate() {
                    let p = p0 + q;
                    let (oy, ox) = (p / wo, p % wo);
                    let iy = (oy * s) as isize + ky as isize - pad;
                    let ix = (ox * s) as isize + kx as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        plane[iy as usize * w + ix as usize] += v;
                    }
                }
            }
        }
    }
}

/// `z = conv(input, weight) + bias`; `bias` may be omitted (tangent passes).
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    shape: &ConvShape,
    weight: &[T],
    bias: Option<&[T]>,
) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    assert_eq!(c, shape.c_in, "conv input channels");
    let (ho, wo) = shape.out_dims(h, w);
    let hw = ho * wo;
    let kk = shape.patch_len();
    let mut out = Tensor::zeros([n, shape.c_out, ho, wo]);
    let mut cols = vec![T::zero(); if shape.is_pointwise() { 0 } else { kk * CHUNK.min(hw) }];
    for item in 0..n {
        let x = input.item(item);
        let y = out.item_mut(item);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                y[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = bv);
            }
        }
        let mut p0 = 0;
        while p0 < hw {
            let p1 = (p0 + CHUNK).min(hw);
            let np = p1 - p0;
            let (src, rs): (*const T, isize) = if shape.is_pointwise() {
                (x[p0..].as_ptr(), hw as isize)
            } else {
                im2col(x, (h, w), shape, wo, (p0, p1), &mut cols);
                (cols.as_ptr(), np as isize)
            };
            // SAFETY: weight is c_out x kk row-major, src is kk x np with row
            // stride rs, destination is c_out rows of stride hw starting at p0.
            unsafe {
                T::gemm(
                    shape.c_out,
                    kk,
                    np,
                    T::one(),
                    weight.as_ptr(),
                    kk as isize,
                    1,
                    src,
                    rs,
                    1,
                    T::one(),
                    y[p0..].as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            p0 = p1;
        }
    }
    out
}

/// Reverse pass of a convolution given `dz`, the gradient at its
/// pre-activation output. `values` is the tensor the weight gradient pairs
/// with (the layer input, or its tangent for second-order terms).
pub fn conv2d_backward<T: Real>(
    values: &Tensor<T>,
    dz: &Tensor<T>,
    shape: &ConvShape,
    weight: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let [n, _, h, w] = values.shape();
    let (ho, wo) = (dz.height(), dz.width());
    let hw = ho * wo;
    let kk = shape.patch_len();
    let chunk = CHUNK.min(hw);
    let mut cols = vec![T::zero(); if shape.is_pointwise() { 0 } else { kk * chunk }];
    let mut dcols = vec![T::zero(); if want_input && !shape.is_pointwise() { kk * chunk } else { 0 }];
    let mut dinput = want_input.then(|| Tensor::zeros(values.shape()));
    for item in 0..n {
        let x = values.item(item);
        let g = dz.item(item);
        let mut p0 = 0;
        while p0 < hw {
            let p1 = (p0 + CHUNK).min(hw);
            let np = p1 - p0;
            let (src, rs): (*const T, isize) = if shape.is_pointwise() {
                (x[p0..].as_ptr(), hw as isize)
            } else {
                im2col(x, (h, w), shape, wo, (p0, p1), &mut cols);
                (cols.as_ptr(), np as isize)
            };
            // SAFETY: dW (c_out x kk) += dz_chunk (c_out x np, row stride hw)
            // · srcᵀ (np x kk, element (q, r) at r*rs + q).
            unsafe {
                T::gemm(
                    shape.c_out,
                    np,
                    kk,
                    T::one(),
                    g[p0..].as_ptr(),
                    hw as isize,
                    1,
                    src,
                    1,
                    rs,
                    T::one(),
                    dweight.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            if let Some(din) = dinput.as_mut() {
                let di = din.item_mut(item);
                if shape.is_pointwise() {
                    // SAFETY: dIn (kk x np at stride hw) += Wᵀ (kk x c_out) · dz_chunk.
                    unsafe {
                        T::gemm(
                            kk,
                            shape.c_out,
                            np,
                            T::one(),
                            weight.as_ptr(),
                            1,
                            kk as isize,
                            g[p0..].as_ptr(),
                            hw as isize,
                            1,
                            T::one(),
                            di[p0..].as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                } else {
                    // SAFETY: dcols (kk x np) = Wᵀ · dz_chunk.
                    unsafe {
                        T::gemm(
                            kk,
                            shape.c_out,
                            np,
                            T::one(),
                            weight.as_ptr(),
                            1,
                            kk as isize,
                            g[p0..].as_ptr(),
                            hw as isize,
                            1,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            np as isize,
                            1,
                        );
                    }
                    col2im_add(&dcols, (h, w), shape, wo, (p0, p1), di);
                }
            }
            p0 = p1;
        }
    }
    if let Some(db) = dbias {
        for item in 0..n {
            let g = dz.item(item);
            for (co, d) in db.iter_mut().enumerate() {
                *d += g[co * hw..(co + 1) * hw].iter().copied().sum();
            }
        }
    }
    dinput
}

/// Index (within the item) of the maximum of each 2x2 window; first wins ties.
fn pool_argmax<T: Real>(input: &Tensor<T>) -> Vec<usize> {
    let [n, c, h, w] = input.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for item in 0..n {
        let x = input.item(item);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let p = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if x[p] > x[best] {
                            best = p;
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    idx
}

pub fn maxpool2_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    gather_pool(input, input)
}

/// Routes `values` through the argmax positions of `primal` (used for the
/// tangent of a max-pool).
pub fn gather_pool<T: Real>(primal: &Tensor<T>, values: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = primal.shape();
    let idx = pool_argmax(primal);
    let per_item = c * (h / 2) * (w / 2);
    let mut data = Vec::with_capacity(idx.len());
    for (k, &p) in idx.iter().enumerate() {
        data.push(values.item(k / per_item)[p]);
    }
    Tensor::from_vec([n, c, h / 2, w / 2], data)
}

pub fn maxpool2_backward<T: Real>(primal: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let idx = pool_argmax(primal);
    let per_item = dout.item_len();
    let mut din = Tensor::zeros(primal.shape());
    for (k, &p) in idx.iter().enumerate() {
        let item = k / per_item;
        din.item_mut(item)[p] += dout.data()[k];
    }
    din
}

/// Source taps `(i0, i1, w1)` for 2x bilinear upsampling with half-pixel
/// centers and edge clamping: `out = (1 - w1)·x[i0] + w1·x[i1]`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let (ho, wo) = (2 * h, 2 * w);
    for item in 0..n {
        let x = input.item(item);
        let y = out.item_mut(item);
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            let dst = &mut y[ch * ho * wo..(ch + 1) * ho * wo];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::of(1.0 - wy), T::of(wy));
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::of(1.0 - wx), T::of(wx));
                    dst[oy * wo + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let [n, c, ho, wo] = dout.shape();
    let (h, w) = (ho / 2, wo / 2);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let mut din = Tensor::zeros([n, c, h, w]);
    for item in 0..n {
        let g = dout.item(item);
        let d = din.item_mut(item);
        for ch in 0..c {
            let src = &g[ch * ho * wo..(ch + 1) * ho * wo];
            let dst = &mut d[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::of(1.0 - wy), T::of(wy));
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::of(1.0 - wx), T::of(wx));
                    let v = src[oy * wo + ox];
                    dst[y0 * w + x0] += wy0 * wx0 * v;
                    dst[y0 * w + x1] += wy0 * wx1 * v;
                    dst[y1 * w + x0] += wy1 * wx0 * v;
                    dst[y1 * w + x1] += wy1 * wx1 * v;
                }
            }
        }
    }
    din
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    assert_eq!((n, h, w), (nb, hb, wb), "concat operands differ in shape");
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for item in 0..n {
        data.extend_from_slice(a.item(item));
        data.extend_from_slice(b.item(item));
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

pub fn concat_backward<T: Real>(dout: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dout.shape();
    let split = ca * h * w;
    let mut da = Vec::with_capacity(n * split);
    let mut db = Vec::with_capacity(n * (c - ca) * h * w);
    for item in 0..n {
        let g = dout.item(item);
        da.extend_from_slice(&g[..split]);
        db.extend_from_slice(&g[split..]);
    }
    (
        Tensor::from_vec([n, ca, h, w], da),
        Tensor::from_vec([n, c - ca, h, w], db),
    )
}

pub fn global_avg_pool_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = input.shape();
    let inv = T::one() / T::of(input.plane_len() as f64);
    let mut data = Vec::with_capacity(n * c);
    for item in 0..n {
        for ch in 0..c {
            data.push(input.plane(item, ch).iter().copied().sum::<T>() * inv);
        }
    }
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Real>(dout: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let hw = in_shape[2] * in_shape[3];
    let inv = T::one() / T::of(hw as f64);
    let mut din = Tensor::zeros(in_shape);
    for (k, chunk) in din.data_mut().chunks_mut(hw).enumerate() {
        let v = dout.data()[k] * inv;
        chunk.iter_mut().for_each(|d| *d = v);
    }
    din
}

/// Fully connected layer on `[n, in, 1, 1]`; weight is `out x in`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    out_features: usize,
) -> Tensor<T> {
    let n = input.batch();
    let inf = input.item_len();
    let mut out = Tensor::zeros([n, out_features, 1, 1]);
    for item in 0..n {
        let x = input.item(item);
        let y = out.item_mut(item);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &weight[o * inf..(o + 1) * inf];
            let mut acc: T = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
            if let Some(b) = bias {
                acc += b[o];
            }
            *yo = acc;
        }
    }
    out
}

pub fn dense_backward<T: Real>(
    values: &Tensor<T>,
    dz: &Tensor<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let n = values.batch();
    let inf = values.item_len();
    let outf = dz.item_len();
    for item in 0..n {
        let x = values.item(item);
        let g = dz.item(item);
        for (o, &go) in g.iter().enumerate() {
            for (dw, &xi) in dweight[o * inf..(o + 1) * inf].iter_mut().zip(x) {
                *dw += go * xi;
            }
        }
    }
    if let Some(db) = dbias {
        for item in 0..n {
            for (d, &g) in db.iter_mut().zip(dz.item(item)) {
                *d += g;
            }
        }
    }
    want_input.then(|| {
        let mut din = Tensor::zeros(values.shape());
        for item in 0..n {
            let g = dz.item(item);
            let d = din.item_mut(item);
            for o in 0..outf {
                for (di, &wv) in d.iter_mut().zip(&weight[o * inf..(o + 1) * inf]) {
                    *di += g[o] * wv;
                }
            }
        }
        din
    })
}
