//! Same-padded direct convolution with odd square kernels.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor3;

/// Weights are laid out `out x in x k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(out_ch: usize, in_ch: usize, k: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if k != 1 && k != 3 {
            return Err(NnError::invalid(format!("kernel size {k} is not 1 or 3")));
        }
        if out_ch == 0 || in_ch == 0 {
            return Err(NnError::invalid("convolution needs at least one channel each way"));
        }
        if weight.len() != out_ch * in_ch * k * k || bias.len() != out_ch {
            return Err(NnError::invalid(format!(
                "{out_ch}x{in_ch}x{k}x{k} convolution got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NnError::invalid("non-finite convolution parameter"));
        }
        Ok(Self {
            out_ch,
            in_ch,
            k,
            weight,
            bias,
        })
    }

    /// Weights and biases uniform in `[-scale, scale]`.
    pub fn uniform(out_ch: usize, in_ch: usize, k: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let weight = (0..out_ch * in_ch * k * k)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        let bias = (0..out_ch).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(out_ch, in_ch, k, weight, bias)
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(NnError::invalid(format!(
                "convolution expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Calls `f(oy, ox, iy, ix)` over the output range where the tap `(dy, dx)`
/// lands inside the input, with `iy = oy + dy`, `ix = ox + dx`.
#[inline]
fn for_valid(h: usize, w: usize, dy: isize, dx: isize, mut f: impl FnMut(usize, usize)) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            f(y, x);
        }
    }
}

pub fn conv(x: &Tensor3, p: &ConvParams) -> Result<Tensor3> {
    p.check_input(x)?;
    let (h, w) = (x.height(), x.width());
    let plane = h * w;
    let pad = (p.k / 2) as isize;
    let mut out = Tensor3::zeros(p.out_ch, h, w);
    let src = x.data();
    let dst = out.data_mut();
    for o in 0..p.out_ch {
        dst[o * plane..(o + 1) * plane].fill(p.bias[o]);
        for i in 0..p.in_ch {
            for ky in 0..p.k {
                for kx in 0..p.k {
                    let wv = p.weight_at(o, i, ky, kx);
                    let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                    for_valid(h, w, dy, dx, |y, xx| {
                        let iy = (y as isize + dy) as usize;
                        let ix = (xx as isize + dx) as usize;
                        dst[o * plane + y * w + xx] += wv * src[i * plane + iy * w + ix];
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Parameter gradients, plus the input gradient when `want_input` is set.
pub fn conv_backward(
    x: &Tensor3,
    p: &ConvParams,
    grad_out: &Tensor3,
    want_input: bool,
) -> Result<(ConvGrads, Option<Tensor3>)> {
    p.check_input(x)?;
    if grad_out.shape() != (p.out_ch, x.height(), x.width()) {
        return Err(NnError::invalid("convolution gradient has the wrong shape"));
    }
    let (h, w) = (x.height(), x.width());
    let plane = h * w;
    let pad = (p.k / 2) as isize;
    let g = grad_out.data();
    let src = x.data();
    let mut gw = vec![0.0; p.weight.len()];
    let bias = (0..p.out_ch)
        .map(|o| g[o * plane..(o + 1) * plane].iter().sum())
        .collect();
    let mut gx = want_input.then(|| Tensor3::zeros(p.in_ch, h, w));
    for o in 0..p.out_ch {
        for i in 0..p.in_ch {
            for ky in 0..p.k {
                for kx in 0..p.k {
                    let widx = ((o * p.in_ch + i) * p.k + ky) * p.k + kx;
                    let wv = p.weight[widx];
                    let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                    let mut acc = 0.0;
                    match gx.as_mut() {
                        Some(gx) => {
                            let gxd = gx.data_mut();
                            for_valid(h, w, dy, dx, |y, xx| {
                                let go = g[o * plane + y * w + xx];
                                let ii = i * plane + (y as isize + dy) as usize * w + (xx as isize + dx) as usize;
                                acc += go * src[ii];
                                gxd[ii] += wv * go;
                            });
                        }
                        None => for_valid(h, w, dy, dx, |y, xx| {
                            let ii = i * plane + (y as isize + dy) as usize * w + (xx as isize + dx) as usize;
                            acc += g[o * plane + y * w + xx] * src[ii];
                        }),
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok((ConvGrads { weight: gw, bias }, gx))
}
