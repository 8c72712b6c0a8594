//! Plain image-space CNN layers used as ground truth for the graph engine.
//!
//! Everything here works on `[C, H, W]` tensors with ordinary array
//! indexing and shares no code with the graph path.

use crate::error::{Error, Result};
use crate::layers::{Kernel2D, PaddingMode};
use crate::numerics::{matmul, Tensor};

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::DimensionMismatch(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

fn padded_value(img: &Tensor, c: usize, y: i64, x: i64, padding: &PaddingMode) -> f32 {
    let (_, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let at = |yy: usize, xx: usize| img.data()[(c * h + yy) * w + xx];
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        return at(y as usize, x as usize);
    }
    match padding {
        PaddingMode::Zero => 0.0,
        PaddingMode::Constant(v) => v[c],
        PaddingMode::Replicate => at(y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize),
        PaddingMode::Reflect => at(reflect_index(y, h), reflect_index(x, w)),
    }
}

fn check_conv(image: &Tensor, k: &Kernel2D, stride: usize, dilation: usize, padding: &PaddingMode) -> Result<(usize, usize, usize)> {
    let (c, h, w) = dims3(image)?;
    if c != k.in_channels {
        return Err(Error::DimensionMismatch(format!("image has {c} channels, kernel expects {}", k.in_channels)));
    }
    if stride == 0 || dilation == 0 {
        return Err(Error::InvalidArgument("stride and dilation must be positive".into()));
    }
    if k.height.is_multiple_of(2) || k.width.is_multiple_of(2) {
        return Err(Error::InvalidArgument("kernel dimensions must be odd".into()));
    }
    if let PaddingMode::Constant(v) = padding {
        if v.len() != c {
            return Err(Error::DimensionMismatch(format!("{} padding values for {c} channels", v.len())));
        }
    }
    Ok((c, h, w))
}

/// Output size of a "same"-padded convolution sampled every `stride` pixels.
pub fn strided_len(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Direct nested-loop cross-correlation with "same" padding of
/// `dilation * (k - 1) / 2` on each side, sampled at multiples of `stride`.
pub fn conv2d_ref(image: &Tensor, k: &Kernel2D, stride: usize, dilation: usize, padding: &PaddingMode) -> Result<Tensor> {
    let (c, h, w) = check_conv(image, k, stride, dilation, padding)?;
    let (oh, ow) = (strided_len(h, stride), strided_len(w, stride));
    let (pr, pc) = ((dilation * (k.height / 2)) as i64, (dilation * (k.width / 2)) as i64);
    let mut out = Tensor::zeros(vec![k.out_channels, oh, ow]);
    for o in 0..k.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for i in 0..c {
                    for r in 0..k.height {
                        for q in 0..k.width {
                            let y = (oy * stride) as i64 - pr + (r * dilation) as i64;
                            let x = (ox * stride) as i64 - pc + (q * dilation) as i64;
                            acc += k.weight(o, i, r, q) * padded_value(image, i, y, x, padding);
                        }
                    }
                }
                if let Some(b) = &k.bias {
                    acc += b.data()[o];
                }
                out.data_mut()[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Explicitly padded copy of the image, built row by row.
fn pad_image(image: &Tensor, pr: usize, pc: usize, padding: &PaddingMode) -> Tensor {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (ph, pw) = (h + 2 * pr, w + 2 * pc);
    let mut out = Tensor::zeros(vec![c, ph, pw]);
    let src_index = |i: i64, n: usize| -> Option<usize> {
        if (0..n as i64).contains(&i) {
            return Some(i as usize);
        }
        match padding {
            PaddingMode::Zero | PaddingMode::Constant(_) => None,
            PaddingMode::Replicate => Some(if i < 0 { 0 } else { n - 1 }),
            PaddingMode::Reflect => {
                // Bounce back and forth between the two edges.
                let mut j = i;
                while !(0..n as i64).contains(&j) && n > 1 {
                    j = if j < 0 { -j } else { 2 * (n as i64 - 1) - j };
                }
                Some(if n == 1 { 0 } else { j as usize })
            }
        }
    };
    for ch in 0..c {
        let fill = match padding {
            PaddingMode::Constant(v) => v[ch],
            _ => 0.0,
        };
        for y in 0..ph {
            let sy = src_index(y as i64 - pr as i64, h);
            for x in 0..pw {
                let sx = src_index(x as i64 - pc as i64, w);
                out.data_mut()[(ch * ph + y) * pw + x] = match (sy, sx) {
                    (Some(a), Some(b)) => image.data()[(ch * h + a) * w + b],
                    _ => fill,
                };
            }
        }
    }
    out
}

/// Same result as [`conv2d_ref`] computed as an im2col matrix product over
/// an explicitly padded image.
pub fn conv2d_im2col(image: &Tensor, k: &Kernel2D, stride: usize, dilation: usize, padding: &PaddingMode) -> Result<Tensor> {
    let (c, h, w) = check_conv(image, k, stride, dilation, padding)?;
    let (pr, pc) = (dilation * (k.height / 2), dilation * (k.width / 2));
    let padded = pad_image(image, pr, pc, padding);
    let pw = w + 2 * pc;
    let ph = h + 2 * pr;
    let (oh, ow) = (strided_len(h, stride), strided_len(w, stride));
    let patch = c * k.height * k.width;
    let mut cols = Tensor::zeros(vec![patch, oh * ow]);
    for ch in 0..c {
        for r in 0..k.height {
            for q in 0..k.width {
                let row = (ch * k.height + r) * k.width + q;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y, x) = (oy * stride + r * dilation, ox * stride + q * dilation);
                        cols.data_mut()[row * oh * ow + oy * ow + ox] = padded.data()[(ch * ph + y) * pw + x];
                    }
                }
            }
        }
    }
    let weights = k.weights.clone().reshape(vec![k.out_channels, patch])?;
    let mut out = matmul(&weights, &cols)?;
    if let Some(b) = &k.bias {
        for o in 0..k.out_channels {
            for v in out.row_mut(o) {
                *v += b.data()[o];
            }
        }
    }
    out.reshape(vec![k.out_channels, oh, ow])
}

fn pool2d(image: &Tensor, size: usize, reduce: impl Fn(&[f32]) -> f32) -> Result<Tensor> {
    let (c, h, w) = dims3(image)?;
    if size == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let mut window = Vec::with_capacity(size * size);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                window.clear();
                for y in oy * size..(oy + 1) * size {
                    for x in ox * size..(ox + 1) * size {
                        window.push(image.data()[(ch * h + y) * w + x]);
                    }
                }
                out.data_mut()[(ch * oh + oy) * ow + ox] = reduce(&window);
            }
        }
    }
    Ok(out)
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
pub fn maxpool2d(image: &Tensor, size: usize) -> Result<Tensor> {
    pool2d(image, size, |v| v.iter().copied().fold(f32::NEG_INFINITY, f32::max))
}

pub fn avgpool2d(image: &Tensor, size: usize) -> Result<Tensor> {
    pool2d(image, size, |v| v.iter().sum::<f32>() / v.len() as f32)
}

pub fn upsample_nearest(image: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = dims3(image)?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out.data_mut()[(ch * oh + y) * ow + x] = image.data()[(ch * h + y / factor) * w + x / factor];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RefLayer {
    Conv { kernel: Kernel2D, stride: usize, dilation: usize, padding: PaddingMode },
    Relu,
    MaxPool(usize),
    AvgPool(usize),
    Upsample(usize),
    Flatten,
    /// Weights `[out, in]`.
    Linear { weights: Tensor, bias: Option<Tensor> },
    AffineNorm { scale: Vec<f32>, shift: Vec<f32> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefNet {
    pub layers: Vec<RefLayer>,
}

/// Applies the layers in order. After `Flatten` the tensor is 1-D.
pub fn run_ref(net: &RefNet, image: &Tensor) -> Result<Tensor> {
    let mut x = image.clone();
    for layer in &net.layers {
        x = match layer {
            RefLayer::Conv { kernel, stride, dilation, padding } => conv2d_ref(&x, kernel, *stride, *dilation, padding)?,
            RefLayer::Relu => {
                let mut y = x;
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            RefLayer::MaxPool(s) => maxpool2d(&x, *s)?,
            RefLayer::AvgPool(s) => avgpool2d(&x, *s)?,
            RefLayer::Upsample(f) => upsample_nearest(&x, *f)?,
            RefLayer::Flatten => {
                let n = x.len();
                x.reshape(vec![n])?
            }
            RefLayer::Linear { weights, bias } => {
                let (o, i) = weights.dims2()?;
                if x.len() != i {
                    return Err(Error::DimensionMismatch(format!("linear expects {i} inputs, got {}", x.len())));
                }
                let mut y = vec![0.0f32; o];
                for (r, out) in y.iter_mut().enumerate() {
                    for q in 0..i {
                        *out += weights.data()[r * i + q] * x.data()[q];
                    }
                    if let Some(b) = bias {
                        *out += b.data()[r];
                    }
                }
                Tensor::new(vec![o], y)?
            }
            RefLayer::AffineNorm { scale, shift } => {
                let c = x.shape()[0];
                if scale.len() != c || shift.len() != c {
                    return Err(Error::DimensionMismatch(format!("affine norm for {} channels on {c}", scale.len())));
                }
                let plane = x.len() / c.max(1);
                let mut y = x;
                for (k, v) in y.data_mut().iter_mut().enumerate() {
                    let ch = k / plane;
                    *v = *v * scale[ch] + shift[ch];
                }
                y
            }
        };
    }
    Ok(x)
}
