//! Single-image tensor kernels on planar `C × H × W` buffers.
//!
//! Convolutions are "same"-padded with stride 1 and lowered to a GEMM through
//! an im2col buffer, which is kept for the backward pass.

use crate::num::Real;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Convolution layer descriptor with offsets into a flat parameter vector.
/// Weights are stored `cout × (cin·k·k)`, followed by `cout` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    /// Lays out a conv at `offset`; returns the descriptor and the next free offset.
    pub fn at(offset: usize, cin: usize, cout: usize, k: usize) -> (Self, usize) {
        assert!(k % 2 == 1, "odd kernels only");
        let w_len = cout * cin * k * k;
        let conv = Conv { cin, cout, k, w_off: offset, b_off: offset + w_len };
        (conv, offset + w_len + cout)
    }

    pub fn n_weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Lowered input kept for the backward pass.
#[derive(Clone, Debug)]
pub enum ConvInput<T> {
    /// im2col matrix `(cin·k·k) × (h·w)`.
    Cols(Vec<T>),
    /// 1×1 kernels read the input directly.
    Direct(Vec<T>),
}

impl<T> ConvInput<T> {
    fn matrix(&self) -> &[T] {
        match self {
            ConvInput::Cols(c) | ConvInput::Direct(c) => c,
        }
    }
}

pub fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..sy as usize * w + w];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let sx_hi = (x_hi as isize + dx) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src_row[sx_lo..sx_hi]);
                }
            }
        }
    }
    cols
}

pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = sy as usize * w;
                    for xx in x_lo..x_hi {
                        let sx = (xx as isize + dx) as usize;
                        plane[base + sx] += src[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

/// Forward convolution: returns the pre-activation output and the lowered input.
pub fn conv_forward<T: Real>(params: &[T], conv: &Conv, x: &[T], h: usize, w: usize) -> (Vec<T>, ConvInput<T>) {
    let hw = h * w;
    debug_assert_eq!(x.len(), conv.cin * hw);
    let input =
        if conv.k == 1 { ConvInput::Direct(x.to_vec()) } else { ConvInput::Cols(im2col(x, conv.cin, h, w, conv.k)) };
    let mut out = vec![T::zero(); conv.cout * hw];
    for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
        chunk.fill(params[conv.b_off + o]);
    }
    let weights = &params[conv.w_off..conv.w_off + conv.n_weights()];
    let rows = conv.rows();
    T::gemm(
        conv.cout,
        rows,
        hw,
        T::one(),
        weights,
        (rows as isize, 1),
        input.matrix(),
        (hw as isize, 1),
        T::one(),
        &mut out,
        (hw as isize, 1),
    );
    (out, input)
}

/// Accumulates weight/bias gradients into `grads`; returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    params: &[T],
    grads: &mut [T],
    conv: &Conv,
    input: &ConvInput<T>,
    dy: &[T],
    h: usize,
    w: usize,
    need_dx: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    let rows = conv.rows();
    let cols = input.matrix();
    // dW += dY · colsᵀ
    T::gemm(
        conv.cout,
        hw,
        rows,
        T::one(),
        dy,
        (hw as isize, 1),
        cols,
        (1, hw as isize),
        T::one(),
        &mut grads[conv.w_off..conv.w_off + conv.n_weights()],
        (rows as isize, 1),
    );
    for (o, chunk) in dy.chunks_exact(hw).enumerate() {
        let mut s = T::zero();
        for &v in chunk {
            s += v;
        }
        grads[conv.b_off + o] += s;
    }
    if !need_dx {
        return None;
    }
    let weights = &params[conv.w_off..conv.w_off + conv.n_weights()];
    let mut dcols = vec![T::zero(); rows * hw];
    T::gemm(
        rows,
        conv.cout,
        hw,
        T::one(),
        weights,
        (1, rows as isize),
        dy,
        (hw as isize, 1),
        T::zero(),
        &mut dcols,
        (hw as isize, 1),
    );
    Some(if conv.k == 1 { dcols } else { col2im(&dcols, conv.cin, h, w, conv.k) })
}

pub fn leaky_relu_inplace<T: Real>(x: &mut [T]) {
    let slope = T::lit(LEAKY_SLOPE);
    for v in x {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Multiplies `grad` by the leaky-ReLU derivative, read from the activated output.
pub fn leaky_relu_backward<T: Real>(out: &[T], grad: &mut [T]) {
    let slope = T::lit(LEAKY_SLOPE);
    for (g, &o) in grad.iter_mut().zip(out) {
        if o < T::zero() {
            *g *= slope;
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// 2×2 max pooling; returns the pooled map and the flat argmax index per output.
pub fn maxpool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let o = ch * oh * ow + y * ow + xx;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dy: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += *g;
    }
    dx
}

// Source taps for 2× bilinear upsampling with half-pixel centres
// (edge-clamped): output i reads inputs (lo, hi) with weights (1-f, f).
fn upsample_taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] += top * (T::one() - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bot * (T::one() - fx);
                d[y1 * w + x1] += bot * fx;
            }
        }
    }
    dx
}
