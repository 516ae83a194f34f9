use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};
use super::NumError;

/// One convolution layer: weights `(out_ch, in_ch, kh, kw)` plus a per-output
/// bias, stride 1, half ("same") padding. Odd kernel sides only, so the
/// padding is symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    weights: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, NumError> {
        if weights.ndim() != 4 {
            return Err(NumError::ShapeMismatch(format!(
                "conv weights must be 4-d, got {:?}",
                weights.shape()
            )));
        }
        let [out_ch, _in_ch, kh, kw] = [
            weights.shape()[0],
            weights.shape()[1],
            weights.shape()[2],
            weights.shape()[3],
        ];
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NumError::ShapeMismatch(format!(
                "kernel sides must be odd for symmetric half padding, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [out_ch] {
            return Err(NumError::ShapeMismatch(format!(
                "bias shape {:?} does not match {out_ch} output channels",
                bias.shape()
            )));
        }
        Ok(ConvLayer { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize), NumError> {
        if x.ndim() != 3 {
            return Err(NumError::ShapeMismatch(format!(
                "conv input must be (channels, h, w), got {:?}",
                x.shape()
            )));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.in_channels() {
            return Err(NumError::ShapeMismatch(format!(
                "input has {c} channels, layer expects {}",
                self.in_channels()
            )));
        }
        let (kh, kw) = self.kernel();
        if h + 2 * (kh / 2) < kh || w + 2 * (kw / 2) < kw {
            return Err(NumError::ShapeMismatch(format!(
                "input {h}x{w} smaller than kernel {kh}x{kw} after padding"
            )));
        }
        Ok((c, h, w))
    }
}

/// Direct stride-1 convolution with half padding; output spatial size equals
/// the input's. Accumulation order is fixed (bias, then input channel, then
/// kernel row/col), so results are bitwise reproducible.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>, NumError> {
    let (c_in, h, w) = layer.check_input(x)?;
    let c_out = layer.out_channels();
    let (kh, kw) = layer.kernel();
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let wd = layer.weights.data();
    let bd = layer.bias.data();
    let plane = h * w;

    let mut out = vec![T::zero(); c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(bd[o]);
        for c in 0..c_in {
            let src = &xd[c * plane..(c + 1) * plane];
            let wbase = (o * c_in + c) * kh * kw;
            for u in 0..kh {
                let di = u as isize - ph as isize;
                let i0 = (-di).max(0) as usize;
                let i1 = (h as isize - di).min(h as isize) as usize;
                for v in 0..kw {
                    let wv = wd[wbase + u * kw + v];
                    let dj = v as isize - pw as isize;
                    let j0 = (-dj).max(0) as usize;
                    let j1 = (w as isize - dj).min(w as isize) as usize;
                    for i in i0..i1 {
                        let srow = ((i as isize + di) as usize) * w;
                        let drow = i * w;
                        for j in j0..j1 {
                            dst[drow + j] += wv * src[srow + (j as isize + dj) as usize];
                        }
                    }
                }
            }
        }
    });

    let result = Tensor::from_vec(&[c_out, h, w], out)?;
    debug_assert!(!x.is_finite() || result.is_finite(), "conv produced non-finite values");
    Ok(result)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NumError> {
    let (c_in, h, w) = layer.check_input(x)?;
    let c_out = layer.out_channels();
    if grad_out.shape() != [c_out, h, w] {
        return Err(NumError::ShapeMismatch(format!(
            "grad_out {:?} does not match output ({c_out}, {h}, {w})",
            grad_out.shape()
        )));
    }
    let (kh, kw) = layer.kernel();
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let wd = layer.weights.data();
    let gd = grad_out.data();
    let plane = h * w;

    let mut grad_b = vec![T::zero(); c_out];
    for (o, gb) in grad_b.iter_mut().enumerate() {
        for &g in &gd[o * plane..(o + 1) * plane] {
            *gb += g;
        }
    }

    let mut grad_w = vec![T::zero(); c_out * c_in * kh * kw];
    grad_w
        .par_chunks_mut(c_in * kh * kw)
        .enumerate()
        .for_each(|(o, gw)| {
            let go = &gd[o * plane..(o + 1) * plane];
            for c in 0..c_in {
                let src = &xd[c * plane..(c + 1) * plane];
                for u in 0..kh {
                    let di = u as isize - ph as isize;
                    let i0 = (-di).max(0) as usize;
                    let i1 = (h as isize - di).min(h as isize) as usize;
                    for v in 0..kw {
                        let dj = v as isize - pw as isize;
                        let j0 = (-dj).max(0) as usize;
                        let j1 = (w as isize - dj).min(w as isize) as usize;
                        let mut acc = T::zero();
                        for i in i0..i1 {
                            let srow = ((i as isize + di) as usize) * w;
                            let grow = i * w;
                            for j in j0..j1 {
                                acc += go[grow + j] * src[srow + (j as isize + dj) as usize];
                            }
                        }
                        gw[(c * kh + u) * kw + v] = acc;
                    }
                }
            }
        });

    let mut grad_x = vec![T::zero(); c_in * plane];
    grad_x.par_chunks_mut(plane).enumerate().for_each(|(c, gx)| {
        for o in 0..c_out {
            let go = &gd[o * plane..(o + 1) * plane];
            let wbase = (o * c_in + c) * kh * kw;
            for u in 0..kh {
                let di = u as isize - ph as isize;
                let i0 = (-di).max(0) as usize;
                let i1 = (h as isize - di).min(h as isize) as usize;
                for v in 0..kw {
                    let wv = wd[wbase + u * kw + v];
                    let dj = v as isize - pw as isize;
                    let j0 = (-dj).max(0) as usize;
                    let j1 = (w as isize - dj).min(w as isize) as usize;
                    for i in i0..i1 {
                        let xrow = ((i as isize + di) as usize) * w;
                        let grow = i * w;
                        for j in j0..j1 {
                            gx[xrow + (j as isize + dj) as usize] += wv * go[grow + j];
                        }
                    }
                }
            }
        }
    });

    Ok((
        Tensor::from_vec(&[c_in, h, w], grad_x)?,
        Tensor::from_vec(&[c_out, c_in, kh, kw], grad_w)?,
        Tensor::from_vec(&[c_out], grad_b)?,
    ))
}

/// Elementwise `max(slope*x, x)`.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64_c(slope);
    x.map(|v| (s * v).max(v))
}

/// Gradient of [`leaky_relu`] given the forward *input*. The subgradient at
/// exactly zero is 1.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>, slope: f64) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad.shape());
    let s = T::from_f64_c(slope);
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v >= T::zero() { g } else { g * s })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of [`relu`]: passes `grad` only where `x > 0`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad.shape());
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Non-overlapping 2x2 max pooling over `(channels, h, w)`.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    let (c, h, w) = pool_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &xd[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = window_max(src, w, i, j).0;
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Routes each output gradient to its window's argmax; ties go to the first
/// element in row-major scan order.
pub fn maxpool2_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    let (c, h, w) = pool_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [c, oh, ow] {
        return Err(NumError::ShapeMismatch(format!(
            "pool grad_out {:?} does not match ({c}, {oh}, {ow})",
            grad_out.shape()
        )));
    }
    let xd = x.data();
    let gd = grad_out.data();
    let mut grad_x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let src = &xd[ch * h * w..(ch + 1) * h * w];
        let go = &gd[ch * oh * ow..(ch + 1) * oh * ow];
        let gx = &mut grad_x[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (_, arg) = window_max(src, w, i, j);
                gx[arg] += go[i * ow + j];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], grad_x)
}

fn pool_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize), NumError> {
    if x.ndim() != 3 {
        return Err(NumError::ShapeMismatch(format!(
            "pool input must be (channels, h, w), got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NumError::OddDimension { height: h, width: w });
    }
    Ok((c, h, w))
}

#[inline]
fn window_max<T: Scalar>(plane: &[T], w: usize, i: usize, j: usize) -> (T, usize) {
    let base = 2 * i * w + 2 * j;
    let idxs = [base, base + 1, base + w, base + w + 1];
    let mut best = idxs[0];
    for &k in &idxs[1..] {
        if plane[k] > plane[best] {
            best = k;
        }
    }
    (plane[best], best)
}
