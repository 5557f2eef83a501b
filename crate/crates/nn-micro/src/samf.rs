//! Semantic alignment and modulated fusion (SAMF).
//!
//! One stage fuses a detector feature map `f_top` (C x H x W, C even) with a
//! frozen prior `f_dino` (C_d x h x w, h <= H, w <= W):
//!
//! ```text
//! P     = Up(Conv1x1_align(f_dino))                 C_p x H x W
//! M_mul = Sigmoid(Conv1x1_mul(P))                   C/2
//! M_add = ReLU(BN(Conv1x1_add(P)))                  C/2
//! F_A, F_B = split(f_top)
//! B_mul = Conv3x3_fuse_mul(F_A * M_mul)
//! B_add = Conv1x1_fuse_add(F_B + M_add)
//! out   = Conv3x3_out([B_mul, B_add] + f_top)       C x H x W
//! ```
//!
//! The backward pass returns gradients for `f_top` and every stage parameter.
//! Nothing is produced for `f_dino`.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;

use crate::conv::{conv, conv_backward, ConvGrads, ConvParams};
use crate::error::{NnError, Result};
use crate::norm::{batch_norm, batch_norm_backward, NormParams};
use crate::params::{ParamSet, Parameters};
use crate::tensor::Tensor3;
use crate::upsample::{bilinear_upsample, bilinear_upsample_backward};

/// Half-width of the uniform initializer.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SamfStage {
    pub align: ConvParams,
    pub mul_branch: ConvParams,
    pub add_branch: ConvParams,
    pub add_norm: NormParams,
    pub fuse_mul: ConvParams,
    pub fuse_add: ConvParams,
    pub out_fuse: ConvParams,
}

fn expect(p: &ConvParams, name: &str, out: usize, inp: usize, k: usize) -> Result<()> {
    if (p.out_channels(), p.in_channels(), p.kernel_size()) != (out, inp, k) {
        return Err(NnError::invalid(format!(
            "{name}: expected {out}x{inp}x{k}x{k}, got {}x{}x{k2}x{k2}",
            p.out_channels(),
            p.in_channels(),
            k2 = p.kernel_size()
        )));
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SamfStage {
    pub fn new(
        align: ConvParams,
        mul_branch: ConvParams,
        add_branch: ConvParams,
        add_norm: NormParams,
        fuse_mul: ConvParams,
        fuse_add: ConvParams,
        out_fuse: ConvParams,
    ) -> Result<Self> {
        let c = out_fuse.out_channels();
        if c % 2 != 0 {
            return Err(NnError::invalid(format!("feature channels {c} are not even")));
        }
        let (half, cp, cd) = (c / 2, align.out_channels(), align.in_channels());
        expect(&align, "align", cp, cd, 1)?;
        expect(&mul_branch, "mul_branch", half, cp, 1)?;
        expect(&add_branch, "add_branch", half, cp, 1)?;
        expect(&fuse_mul, "fuse_mul", half, half, 3)?;
        expect(&fuse_add, "fuse_add", half, half, 1)?;
        expect(&out_fuse, "out_fuse", c, c, 3)?;
        if add_norm.channels() != half {
            return Err(NnError::invalid("add_norm must cover half the feature channels"));
        }
        Ok(Self {
            align,
            mul_branch,
            add_branch,
            add_norm,
            fuse_mul,
            fuse_add,
            out_fuse,
        })
    }

    /// Seeded toy stage: weights uniform in `[-INIT_SCALE, INIT_SCALE]`,
    /// normalization statistics perturbed around the identity.
    pub fn uniform(channels: usize, prior_channels: usize, aligned_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels % 2 != 0 || channels == 0 {
            return Err(NnError::invalid(format!("feature channels {channels} are not even")));
        }
        let half = channels / 2;
        let s = INIT_SCALE;
        let align = ConvParams::uniform(aligned_channels, prior_channels, 1, s, rng)?;
        let mul_branch = ConvParams::uniform(half, aligned_channels, 1, s, rng)?;
        let add_branch = ConvParams::uniform(half, aligned_channels, 1, s, rng)?;
        let mut u = |base: f64| (0..half).map(|_| base + rng.random_range(-s..=s)).collect::<Vec<_>>();
        let gamma = u(1.0);
        let beta = u(0.0);
        let mean = u(0.0);
        let var = u(1.0);
        let add_norm = NormParams::new(gamma, beta, mean, var, crate::norm::DEFAULT_NORM_EPS)?;
        let fuse_mul = ConvParams::uniform(half, half, 3, s, rng)?;
        let fuse_add = ConvParams::uniform(half, half, 1, s, rng)?;
        let out_fuse = ConvParams::uniform(channels, channels, 3, s, rng)?;
        Self::new(align, mul_branch, add_branch, add_norm, fuse_mul, fuse_add, out_fuse)
    }

    pub fn channels(&self) -> usize {
        self.out_fuse.out_channels()
    }

    pub fn prior_channels(&self) -> usize {
        self.align.in_channels()
    }

    pub fn aligned_channels(&self) -> usize {
        self.align.out_channels()
    }

    fn convs(&self) -> [(&'static str, &ConvParams); 6] {
        [
            ("align", &self.align),
            ("mul", &self.mul_branch),
            ("add", &self.add_branch),
            ("fuse_mul", &self.fuse_mul),
            ("fuse_add", &self.fuse_add),
            ("out_fuse", &self.out_fuse),
        ]
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, p) in self.convs() {
            for v in p.weight.iter().chain(&p.bias) {
                h.write_u64(v.to_bits());
            }
        }
        for v in self.add_norm.gamma.iter().chain(&self.add_norm.beta) {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

impl Parameters for SamfStage {
    fn params(&self) -> ParamSet {
        let mut s = ParamSet::new();
        for (name, p) in self.convs() {
            s.insert(format!("{name}.weight"), p.weight.clone());
            s.insert(format!("{name}.bias"), p.bias.clone());
        }
        s.insert("add_norm.gamma", self.add_norm.gamma.clone());
        s.insert("add_norm.beta", self.add_norm.beta.clone());
        s
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (head, tail) = name.split_once('.')?;
        if head == "add_norm" {
            return match tail {
                "gamma" => Some(&mut self.add_norm.gamma),
                "beta" => Some(&mut self.add_norm.beta),
                _ => None,
            };
        }
        let p = match head {
            "align" => &mut self.align,
            "mul" => &mut self.mul_branch,
            "add" => &mut self.add_branch,
            "fuse_mul" => &mut self.fuse_mul,
            "fuse_add" => &mut self.fuse_add,
            "out_fuse" => &mut self.out_fuse,
            _ => return None,
        };
        match tail {
            "weight" => Some(&mut p.weight),
            "bias" => Some(&mut p.bias),
            _ => None,
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct SamfCache {
    fingerprint: u64,
    f_top: Tensor3,
    f_dino: Tensor3,
    aligned_hw: (usize, usize),
    p_tilde: Tensor3,
    m_mul: Tensor3,
    add_pre: Tensor3,
    add_norm: Tensor3,
    m_add: Tensor3,
    f_a: Tensor3,
    u: Tensor3,
    v: Tensor3,
    s: Tensor3,
}

impl SamfCache {
    /// Multiplicative gate `M_mul`.
    pub fn mul_gate(&self) -> &Tensor3 {
        &self.m_mul
    }

    /// Additive modulation `M_add`.
    pub fn add_gate(&self) -> &Tensor3 {
        &self.m_add
    }

    /// Smallest distance of a ReLU input to the kink at zero.
    pub fn relu_margin(&self) -> f64 {
        self.add_norm.data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Upsampled aligned prior `P`.
    pub fn aligned_prior(&self) -> &Tensor3 {
        &self.p_tilde
    }
}

pub fn samf_forward(f_top: &Tensor3, f_dino: &Tensor3, stage: &SamfStage) -> Result<(Tensor3, SamfCache)> {
    if f_top.channels() % 2 != 0 {
        return Err(NnError::invalid(format!(
            "f_top has {} channels; an even count is required",
            f_top.channels()
        )));
    }
    if f_top.channels() != stage.channels() {
        return Err(NnError::invalid(format!(
            "stage expects {} feature channels, f_top has {}",
            stage.channels(),
            f_top.channels()
        )));
    }
    if f_dino.channels() != stage.prior_channels() {
        return Err(NnError::invalid(format!(
            "stage expects {} prior channels, f_dino has {}",
            stage.prior_channels(),
            f_dino.channels()
        )));
    }
    let (h, w) = (f_top.height(), f_top.width());
    let aligned = conv(f_dino, &stage.align)?;
    let p_tilde = bilinear_upsample(&aligned, h, w)?;
    let m_mul = conv(&p_tilde, &stage.mul_branch)?.map(sigmoid);
    let add_pre = conv(&p_tilde, &stage.add_branch)?;
    let add_norm = batch_norm(&add_pre, &stage.add_norm)?;
    let m_add = add_norm.map(|v| v.max(0.0));
    let (f_a, f_b) = f_top.split_channels()?;
    let u = f_a.mul(&m_mul)?;
    let v = f_b.add(&m_add)?;
    let b_mul = conv(&u, &stage.fuse_mul)?;
    let b_add = conv(&v, &stage.fuse_add)?;
    let s = Tensor3::concat_channels(&b_mul, &b_add)?.add(f_top)?;
    let out = conv(&s, &stage.out_fuse)?;
    let cache = SamfCache {
        fingerprint: stage.fingerprint(),
        f_top: f_top.clone(),
        f_dino: f_dino.clone(),
        aligned_hw: (aligned.height(), aligned.width()),
        p_tilde,
        m_mul,
        add_pre,
        add_norm,
        m_add,
        f_a,
        u,
        v,
        s,
    };
    Ok((out, cache))
}

fn put(set: &mut ParamSet, name: &str, g: ConvGrads) {
    set.insert(format!("{name}.weight"), g.weight);
    set.insert(format!("{name}.bias"), g.bias);
}

/// Gradients of `<grad_out, out>` with respect to `f_top` and the stage
/// parameters. `stage` must be the one the cache was built with.
pub fn samf_backward(grad_out: &Tensor3, cache: &SamfCache, stage: &SamfStage) -> Result<(Tensor3, ParamSet)> {
    if grad_out.shape() != cache.f_top.shape() {
        return Err(NnError::InvalidState(format!(
            "upstream gradient {:?} does not match the cached output {:?}",
            grad_out.shape(),
            cache.f_top.shape()
        )));
    }
    if stage.fingerprint() != cache.fingerprint {
        return Err(NnError::InvalidState(
            "cache was produced by a different stage or stale parameters".into(),
        ));
    }
    let mut grads = ParamSet::new();

    let (g, g_s) = conv_backward(&cache.s, &stage.out_fuse, grad_out, true)?;
    put(&mut grads, "out_fuse", g);
    let g_s = g_s.expect("requested");
    let (g_bmul, g_badd) = g_s.split_channels()?;

    let (g, g_u) = conv_backward(&cache.u, &stage.fuse_mul, &g_bmul, true)?;
    put(&mut grads, "fuse_mul", g);
    let g_u = g_u.expect("requested");
    let (g, g_v) = conv_backward(&cache.v, &stage.fuse_add, &g_badd, true)?;
    put(&mut grads, "fuse_add", g);
    let g_v = g_v.expect("requested");

    let g_fa = g_u.mul(&cache.m_mul)?;
    let g_top = g_s.add(&Tensor3::concat_channels(&g_fa, &g_v)?)?;

    // Sigmoid: dM/dq = M (1 - M).
    let g_q = g_u.mul(&cache.f_a)?.zip_with(&cache.m_mul, |g, m| g * m * (1.0 - m))?;
    let (g, g_p1) = conv_backward(&cache.p_tilde, &stage.mul_branch, &g_q, true)?;
    put(&mut grads, "mul", g);

    let g_n = g_v.zip_with(&cache.add_norm, |g, n| if n > 0.0 { g } else { 0.0 })?;
    let (gn, g_z) = batch_norm_backward(&cache.add_pre, &stage.add_norm, &g_n)?;
    grads.insert("add_norm.gamma", gn.gamma);
    grads.insert("add_norm.beta", gn.beta);
    let (g, g_p2) = conv_backward(&cache.p_tilde, &stage.add_branch, &g_z, true)?;
    put(&mut grads, "add", g);

    let g_p = g_p1.expect("requested").add(&g_p2.expect("requested"))?;
    let (ah, aw) = cache.aligned_hw;
    let g_aligned = bilinear_upsample_backward(&g_p, ah, aw)?;
    // The prior is frozen: only the alignment parameters receive a gradient.
    let (g, _) = conv_backward(&cache.f_dino, &stage.align, &g_aligned, false)?;
    put(&mut grads, "align", g);

    Ok((g_top, grads))
}

fn check_stack(priors: &[Tensor3], stages: &[SamfStage]) -> Result<()> {
    if priors.is_empty() {
        return Err(NnError::invalid("a SAMF stack needs at least one prior"));
    }
    if priors.len() != stages.len() {
        return Err(NnError::invalid(format!(
            "{} priors for {} stages",
            priors.len(),
            stages.len()
        )));
    }
    Ok(())
}

/// Stage `k` fuses prior `k` into the output of stage `k - 1`.
pub fn stack_samf(f_top: &Tensor3, priors: &[Tensor3], stages: &[SamfStage]) -> Result<Tensor3> {
    Ok(stack_forward(f_top, priors, stages)?.0)
}

pub fn stack_forward(f_top: &Tensor3, priors: &[Tensor3], stages: &[SamfStage]) -> Result<(Tensor3, Vec<SamfCache>)> {
    check_stack(priors, stages)?;
    let mut x = f_top.clone();
    let mut caches = Vec::with_capacity(stages.len());
    for (prior, stage) in priors.iter().zip(stages) {
        let (y, c) = samf_forward(&x, prior, stage)?;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

/// Parameter names are prefixed `stage<k>.`.
pub fn stack_backward(grad_out: &Tensor3, caches: &[SamfCache], stages: &[SamfStage]) -> Result<(Tensor3, ParamSet)> {
    if caches.len() != stages.len() {
        return Err(NnError::InvalidState(format!(
            "{} caches for {} stages",
            caches.len(),
            stages.len()
        )));
    }
    let mut g = grad_out.clone();
    let mut all = ParamSet::new();
    for (k, (cache, stage)) in caches.iter().zip(stages).enumerate().rev() {
        let (g_prev, grads) = samf_backward(&g, cache, stage)?;
        all = all.union(grads.prefixed(&format!("stage{k}.")))?;
        g = g_prev;
    }
    Ok((g, all))
}

impl Parameters for Vec<SamfStage> {
    fn params(&self) -> ParamSet {
        self.iter()
            .enumerate()
            .map(|(k, s)| s.params().prefixed(&format!("stage{k}.")))
            .fold(ParamSet::new(), |acc, p| acc.union(p).expect("distinct prefixes"))
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let rest = name.strip_prefix("stage")?;
        let (k, tail) = rest.split_once('.')?;
        self.get_mut(k.parse::<usize>().ok()?)?.param_mut(tail)
    }
}
