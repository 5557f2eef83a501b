//! Finite-difference gradient checks and the invariant suite behind
//! `hse nn-check`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv, ConvParams};
use crate::error::{NnError, Result};
use crate::loss::{co_isd_loss, BranchLossWeights};
use crate::params::{shared_grad_accumulate, ParamSet, Parameters};
use crate::samf::{samf_backward, samf_forward, stack_backward, stack_forward, SamfStage};
use crate::tensor::Tensor3;
use crate::toy::{CoIsdToy, SHARED_PREFIXES};
use crate::upsample::bilinear_upsample;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pass bound on the relative error of an analytic gradient.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Toys are redrawn until every ReLU input is at least this far from zero,
/// so no central difference straddles the kink.
pub const KINK_MARGIN: f64 = 10.0 * FD_STEP;
/// Seeds tried per toy before giving up on a kink-free draw.
pub const MAX_REDRAWS: u64 = 256;

/// Pass bound for quantities that should agree up to rounding.
pub const EXACT_TOLERANCE: f64 = 1e-12;

/// `max |a - n| / max(max |n|, 1e-12)` over one parameter tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

/// Central differences of `loss` with respect to every model parameter.
pub fn numeric_gradient<M: Parameters + ?Sized>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> Result<f64>,
) -> Result<ParamSet> {
    let params = model.params();
    let mut out = ParamSet::new();
    for (name, values) in params.iter() {
        let mut g = Vec::with_capacity(values.len());
        for (i, &orig) in values.iter().enumerate() {
            let slot = |m: &mut M, v: f64| {
                m.param_mut(name).expect("listed parameter")[i] = v;
            };
            slot(model, orig + FD_STEP);
            let lp = loss(model)?;
            slot(model, orig - FD_STEP);
            let lm = loss(model)?;
            slot(model, orig);
            g.push((lp - lm) / (2.0 * FD_STEP));
        }
        out.insert(name, g);
    }
    Ok(out)
}

/// Central differences of `f` with respect to each element of `x`.
pub fn numeric_tensor_gradient(x: &Tensor3, mut f: impl FnMut(&Tensor3) -> Result<f64>) -> Result<Tensor3> {
    let mut probe = x.clone();
    let mut g = Tensor3::zeros(x.channels(), x.height(), x.width());
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let lp = f(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let lm = f(&probe)?;
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (lp - lm) / (2.0 * FD_STEP);
    }
    Ok(g)
}

/// Worst per-tensor relative error and the tensor it occurs in.
pub fn worst_relative_error(analytic: &ParamSet, numeric: &ParamSet) -> Result<(String, f64)> {
    if analytic.names().ne(numeric.names()) {
        return Err(NnError::invalid("gradient sets are keyed differently"));
    }
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|((k, a), (_, n))| (k.to_string(), relative_error(a, n)))
        .fold((String::new(), 0.0), |best, cur| if cur.1 > best.1 { cur } else { best }))
}

/// Direct nested-loop convolution with explicit bounds checks.
pub fn naive_conv(x: &Tensor3, p: &ConvParams) -> Tensor3 {
    let k = p.kernel_size() as isize;
    let pad = k / 2;
    Tensor3::from_fn(p.out_channels(), x.height(), x.width(), |o, y, xx| {
        let mut acc = p.bias[o];
        for i in 0..p.in_channels() {
            for ky in 0..k {
                for kx in 0..k {
                    let (sy, sx) = (y as isize + ky - pad, xx as isize + kx - pad);
                    if sy >= 0 && sx >= 0 && (sy as usize) < x.height() && (sx as usize) < x.width() {
                        acc += p.weight_at(o, i, ky as usize, kx as usize) * x.get(i, sy as usize, sx as usize);
                    }
                }
            }
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn bound(name: &'static str, value: f64, limit: f64, what: &str) -> Self {
        Self {
            name,
            passed: value < limit,
            detail: format!("{what} = {value:.3e} (limit {limit:.0e})"),
        }
    }

    fn failed(name: &'static str, err: NnError) -> Self {
        Self {
            name,
            passed: false,
            detail: err.to_string(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn check_conv_oracle(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let x = Tensor3::uniform(4, 5, 5, 1.0, &mut r);
    let mut worst: f64 = 0.0;
    for k in [1, 3] {
        let p = ConvParams::uniform(3, 4, k, 1.0, &mut r)?;
        let a = conv(&x, &p)?;
        let b = naive_conv(&x, &p);
        worst = worst.max(a.zip_with(&b, |u, v| (u - v).abs())?.data().iter().copied().fold(0.0, f64::max));
    }
    Ok(CheckOutcome::bound("conv vs naive loops", worst, EXACT_TOLERANCE, "max abs diff"))
}

pub fn check_upsample_formula() -> Result<CheckOutcome> {
    let x = Tensor3::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0])?;
    let y = bilinear_upsample(&x, 4, 4)?;
    // Source coordinates along either axis are 0, 0.25, 0.75, 1 after clamping.
    let src = [0.0, 0.25, 0.75, 1.0];
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((y.get(0, i, j) - (2.0 * src[i] + src[j])).abs());
        }
    }
    Ok(CheckOutcome::bound("upsample 2x2 -> 4x4 formula", worst, EXACT_TOLERANCE, "max abs diff"))
}

pub fn check_gates_and_shapes(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let mut cases = 0;
    for c in [2, 4, 8] {
        for (h, w) in [(3, 3), (5, 7), (8, 6), (12, 12)] {
            for (ph, pw) in [(1, 1), (h / 2 + 1, w / 3 + 1), (h, w)] {
                let stage = SamfStage::uniform(c, 3, 4, &mut r)?;
                let x = Tensor3::uniform(c, h, w, 2.0, &mut r);
                let p = Tensor3::uniform(3, ph, pw, 2.0, &mut r);
                let (y, cache) = samf_forward(&x, &p, &stage)?;
                let gates_ok = cache.mul_gate().data().iter().all(|&g| g > 0.0 && g < 1.0)
                    && cache.add_gate().data().iter().all(|&g| g >= 0.0);
                if y.shape() != x.shape() || !gates_ok {
                    return Ok(CheckOutcome {
                        name: "gate ranges and shape preservation",
                        passed: false,
                        detail: format!("failed at C={c} H={h} W={w} prior {ph}x{pw}"),
                    });
                }
                cases += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: "gate ranges and shape preservation",
        passed: true,
        detail: format!("{cases} shape combinations"),
    })
}

struct StackToy {
    stages: Vec<SamfStage>,
    priors: Vec<Tensor3>,
    x: Tensor3,
    weight: Tensor3,
}

fn stack_toy(seed: u64, channels: usize, size: usize, prior_sizes: &[usize]) -> Result<StackToy> {
    for k in 0..MAX_REDRAWS {
        let mut r = rng(seed.wrapping_add(k));
        let stages: Vec<SamfStage> = prior_sizes
            .iter()
            .map(|_| SamfStage::uniform(channels, 3, 4, &mut r))
            .collect::<Result<_>>()?;
        let priors: Vec<Tensor3> = prior_sizes
            .iter()
            .map(|&s| Tensor3::uniform(3, s, s, 1.0, &mut r))
            .collect();
        let x = Tensor3::uniform(channels, size, size, 1.0, &mut r);
        let weight = Tensor3::uniform(channels, size, size, 1.0, &mut r);
        let (_, caches) = stack_forward(&x, &priors, &stages)?;
        if caches.iter().all(|c| c.relu_margin() >= KINK_MARGIN) {
            return Ok(StackToy { stages, priors, x, weight });
        }
    }
    Err(NnError::invalid("no kink-free toy stack found"))
}

/// Gradient check of a SAMF stack under the loss `<w, out>`: the worst
/// parameter tensor, its relative error, and the relative error of the
/// `f_top` gradient.
pub fn stack_gradient_error(
    seed: u64,
    channels: usize,
    size: usize,
    prior_sizes: &[usize],
) -> Result<(String, f64, f64)> {
    let StackToy {
        mut stages,
        priors,
        x,
        weight,
    } = stack_toy(seed, channels, size, prior_sizes)?;
    let (_, caches) = stack_forward(&x, &priors, &stages)?;
    let (g_x, analytic) = stack_backward(&weight, &caches, &stages)?;
    let numeric = numeric_gradient(&mut stages, |s| stack_forward(&x, &priors, s)?.0.dot(&weight))?;
    let (name, worst) = worst_relative_error(&analytic, &numeric)?;
    let g_x_num = numeric_tensor_gradient(&x, |xp| stack_forward(xp, &priors, &stages)?.0.dot(&weight))?;
    Ok((name, worst, relative_error(g_x.data(), g_x_num.data())))
}

pub fn check_samf_gradients(seed: u64) -> Result<CheckOutcome> {
    let (name, p, x) = stack_gradient_error(seed, 2, 6, &[2])?;
    let worst = p.max(x);
    let mut o = CheckOutcome::bound("SAMF stage gradients (2x6x6)", worst, FD_TOLERANCE, "worst relative error");
    o.detail.push_str(&format!("; params worst at {name}, f_top {x:.3e}"));
    Ok(o)
}

pub fn check_stack_gradients(seed: u64) -> Result<CheckOutcome> {
    let (name, p, x) = stack_gradient_error(seed, 8, 12, &[4, 3])?;
    let worst = p.max(x);
    let mut o = CheckOutcome::bound(
        "SAMF stack gradients (8x12x12, two priors)",
        worst,
        FD_TOLERANCE,
        "worst relative error",
    );
    o.detail.push_str(&format!("; params worst at {name}, f_top {x:.3e}"));
    Ok(o)
}

pub fn check_frozen_prior(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let stage = SamfStage::uniform(4, 3, 4, &mut r)?;
    let x = Tensor3::uniform(4, 6, 6, 1.0, &mut r);
    let p = Tensor3::uniform(3, 2, 2, 1.0, &mut r);
    let (y, cache) = samf_forward(&x, &p, &stage)?;
    let (_, grads) = samf_backward(&y, &cache, &stage)?;
    let own: Vec<String> = stage.params().names().map(String::from).collect();
    let extra = grads.names().filter(|n| !own.iter().any(|o| o == n)).count();
    let (gz, gzp) = samf_backward(&Tensor3::zeros(4, 6, 6), &cache, &stage)?;
    let zero = gz.data().iter().all(|&v| v == 0.0) && gzp.iter().all(|(_, v)| v.iter().all(|&g| g == 0.0));
    Ok(CheckOutcome {
        name: "frozen prior and zero upstream",
        passed: extra == 0 && grads.len() == own.len() && zero,
        detail: format!("{} gradient tensors, {extra} outside the stage parameters", grads.len()),
    })
}

pub fn check_loss_gradients(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let gt = Tensor3::from_fn(1, 6, 6, |_, y, x| f64::from(u8::from((2..4).contains(&y) && x > 2)));
    let a = Tensor3::uniform(1, 6, 6, 2.0, &mut r);
    let b = Tensor3::uniform(1, 6, 6, 2.0, &mut r);
    let mut worst: f64 = 0.0;
    for alpha in [1.0, 0.5] {
        let w = BranchLossWeights::new(alpha)?;
        let l = co_isd_loss(&a, &b, &gt, w)?;
        let na = numeric_tensor_gradient(&a, |t| Ok(co_isd_loss(t, &b, &gt, w)?.total))?;
        let nb = numeric_tensor_gradient(&b, |t| Ok(co_isd_loss(&a, t, &gt, w)?.total))?;
        worst = worst
            .max(relative_error(l.grad_main.data(), na.data()))
            .max(relative_error(l.grad_light.data(), nb.data()));
    }
    Ok(CheckOutcome::bound("two-branch loss gradients", worst, FD_TOLERANCE, "worst relative error"))
}

/// Toy input and ground truth used by the shared-gradient checks.
pub fn toy_problem(seed: u64, size: usize) -> (Tensor3, Tensor3) {
    let mut r = rng(seed ^ 0x7e57);
    let x = Tensor3::uniform(1, size, size, 1.0, &mut r);
    let c = size as f64 / 2.0;
    let gt = Tensor3::from_fn(1, size, size, |_, y, xx| {
        f64::from(u8::from((y as f64 - c).abs() < 2.0 && (xx as f64 - c + 2.0).abs() < 2.0))
    });
    (x, gt)
}

/// Results of the shared encoder-decoder contract at one alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedContract {
    /// max |accumulated - (g_main + alpha g_light)| from one joint backward pass.
    pub joint_diff: f64,
    /// Worst per-tensor relative error against differences of the total loss.
    pub fd_error: f64,
    pub fd_worst_tensor: String,
    /// max |accumulated shared - g_main| (zero when alpha is zero).
    pub light_contribution: f64,
}

/// Seeded toy and problem with every ReLU input clear of the kink.
pub fn kink_free_toy(seed: u64, channels: usize, size: usize) -> Result<(CoIsdToy, Tensor3, Tensor3)> {
    for k in 0..MAX_REDRAWS {
        let s = seed.wrapping_add(k);
        let toy = CoIsdToy::seeded(s, channels, size, size)?;
        let (x, gt) = toy_problem(s, size);
        if toy.relu_margin(&x)? >= KINK_MARGIN {
            return Ok((toy, x, gt));
        }
    }
    Err(NnError::invalid("no kink-free toy found"))
}

pub fn shared_contract(seed: u64, channels: usize, size: usize, alpha: f64) -> Result<SharedContract> {
    let (mut toy, x, gt) = kink_free_toy(seed, channels, size)?;
    let w = BranchLossWeights::new(alpha)?;
    let acc = toy.accumulated_gradient(&x, &gt, w)?;
    let (_, joint) = toy.joint_gradient(&x, &gt, w)?;
    let numeric = numeric_gradient(&mut toy, |m| m.total_loss(&x, &gt, w))?;
    let (fd_worst_tensor, fd_error) = worst_relative_error(&acc, &numeric)?;
    let b = toy.branch_gradients(&x, &gt)?;
    Ok(SharedContract {
        joint_diff: acc.max_abs_diff(&joint)?,
        fd_error,
        fd_worst_tensor,
        light_contribution: acc.select(&SHARED_PREFIXES).max_abs_diff(&b.main_shared)?,
    })
}

pub fn check_shared_gradients(seed: u64) -> Result<CheckOutcome> {
    let one = shared_contract(seed, 8, 12, 1.0)?;
    let zero = shared_contract(seed, 8, 12, 0.0)?;
    let passed = one.joint_diff <= EXACT_TOLERANCE
        && one.fd_error < FD_TOLERANCE
        && zero.fd_error < FD_TOLERANCE
        && zero.light_contribution == 0.0
        && one.light_contribution > 0.0;
    Ok(CheckOutcome {
        name: "shared encoder-decoder gradients",
        passed,
        detail: format!(
            "alpha=1: joint diff {:.1e}, relative error {:.3e}; alpha=0: light contribution {:.1e}",
            one.joint_diff, one.fd_error, zero.light_contribution
        ),
    })
}

pub fn check_accumulation_linearity(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let mut draw = || {
        let mut s = ParamSet::new();
        s.insert("encoder.weight", Tensor3::uniform(1, 3, 3, 1.0, &mut r).into_data());
        s.insert("decoder.bias", Tensor3::uniform(1, 1, 2, 1.0, &mut r).into_data());
        s
    };
    let (a, b, c, d) = (draw(), draw(), draw(), draw());
    let alpha = 0.7;
    let lhs = shared_grad_accumulate(&a, &b, alpha)?.axpy(1.0, &shared_grad_accumulate(&c, &d, alpha)?)?;
    let rhs = shared_grad_accumulate(&a.axpy(1.0, &c)?, &b.axpy(1.0, &d)?, alpha)?;
    let diff = lhs.max_abs_diff(&rhs)?;
    Ok(CheckOutcome::bound("accumulation linearity", diff, EXACT_TOLERANCE, "max abs diff"))
}

pub const SUITE_SEED: u64 = 20_241;

/// Every check, in a fixed order.
pub fn run_suite() -> Vec<CheckOutcome> {
    let s = SUITE_SEED;
    let checks: Vec<(&'static str, Box<dyn Fn() -> Result<CheckOutcome>>)> = vec![
        ("conv vs naive loops", Box::new(move || check_conv_oracle(s))),
        ("upsample 2x2 -> 4x4 formula", Box::new(check_upsample_formula)),
        ("gate ranges and shape preservation", Box::new(move || check_gates_and_shapes(s))),
        ("frozen prior and zero upstream", Box::new(move || check_frozen_prior(s))),
        ("SAMF stage gradients (2x6x6)", Box::new(move || check_samf_gradients(s))),
        ("SAMF stack gradients (8x12x12, two priors)", Box::new(move || check_stack_gradients(s))),
        ("two-branch loss gradients", Box::new(move || check_loss_gradients(s))),
        ("shared encoder-decoder gradients", Box::new(move || check_shared_gradients(s))),
        ("accumulation linearity", Box::new(move || check_accumulation_linearity(s))),
    ];
    checks
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| CheckOutcome::failed(name, e)))
        .collect()
}
