//! Bilinear resizing with the align-corners-false convention.

use crate::error::{NnError, Result};
use crate::tensor::Tensor3;

/// Per-output-index source taps `(lo, hi, frac)` along one axis.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check(x: &Tensor3, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || x.height() == 0 || x.width() == 0 {
        return Err(NnError::invalid("upsampling needs non-zero extents"));
    }
    if out_h < x.height() || out_w < x.width() {
        return Err(NnError::invalid(format!(
            "cannot upsample {}x{} to the smaller {out_h}x{out_w}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the grid.
pub fn bilinear_upsample(x: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3> {
    check(x, out_h, out_w)?;
    let ty = axis_taps(x.height(), out_h);
    let tx = axis_taps(x.width(), out_w);
    Ok(Tensor3::from_fn(x.channels(), out_h, out_w, |c, i, j| {
        let (y0, y1, ly) = ty[i];
        let (x0, x1, lx) = tx[j];
        (1.0 - ly) * ((1.0 - lx) * x.get(c, y0, x0) + lx * x.get(c, y0, x1))
            + ly * ((1.0 - lx) * x.get(c, y1, x0) + lx * x.get(c, y1, x1))
    }))
}

/// Adjoint of [`bilinear_upsample`]: scatters `grad_out` back onto an
/// `in_h x in_w` grid.
pub fn bilinear_upsample_backward(grad_out: &Tensor3, in_h: usize, in_w: usize) -> Result<Tensor3> {
    let probe = Tensor3::zeros(grad_out.channels(), in_h, in_w);
    check(&probe, grad_out.height(), grad_out.width())?;
    let ty = axis_taps(in_h, grad_out.height());
    let tx = axis_taps(in_w, grad_out.width());
    let mut g = probe;
    for c in 0..grad_out.channels() {
        for (i, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (j, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = grad_out.get(c, i, j);
                for (y, wy) in [(y0, 1.0 - ly), (y1, ly)] {
                    for (xx, wx) in [(x0, 1.0 - lx), (x1, lx)] {
                        let cur = g.get(c, y, xx);
                        g.set(c, y, xx, cur + v * wy * wx);
                    }
                }
            }
        }
    }
    Ok(g)
}
