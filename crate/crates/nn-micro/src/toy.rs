//! Tiny shared encoder-decoder with a main and a lightweight branch.
//!
//! ```text
//! enc     = ReLU(Conv3x3_encoder(x))
//! y_main  = Conv1x1_decoder(SAMF(enc, prior))
//! y_light = Conv1x1_decoder(enc)
//! ```
//!
//! Encoder and decoder are shared by both branches; the SAMF stage sits on
//! the main branch only and the prior is frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv, conv_backward, ConvParams};
use crate::error::{NnError, Result};
use crate::loss::{co_isd_loss, soft_dice, BranchLossWeights};
use crate::params::{shared_grad_accumulate, ParamSet, Parameters};
use crate::samf::{samf_backward, samf_forward, SamfCache, SamfStage, INIT_SCALE};
use crate::tensor::Tensor3;

/// Name prefixes of the parameters both branches use.
pub const SHARED_PREFIXES: [&str; 2] = ["encoder.", "decoder."];
pub const SAMF_PREFIX: &str = "samf.";

#[derive(Debug, Clone, PartialEq)]
pub struct CoIsdToy {
    pub encoder: ConvParams,
    pub stage: SamfStage,
    pub decoder: ConvParams,
    pub prior: Tensor3,
}

struct Forward {
    enc_pre: Tensor3,
    enc: Tensor3,
    fused: Tensor3,
    cache: SamfCache,
    y_main: Tensor3,
    y_light: Tensor3,
}

/// Unweighted per-branch gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub loss_main: f64,
    pub loss_light: f64,
    /// dL_main / d(shared parameters).
    pub main_shared: ParamSet,
    /// dL_light / d(shared parameters).
    pub light_shared: ParamSet,
    /// dL_main / d(SAMF parameters); the light branch does not reach them.
    pub samf: ParamSet,
}

impl CoIsdToy {
    /// Seeded toy with `channels` encoder features, a 4-channel prior at a
    /// third of the input extent, and uniform `[-0.1, 0.1]` weights.
    pub fn seeded(seed: u64, channels: usize, height: usize, width: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ConvParams::uniform(channels, 1, 3, INIT_SCALE, &mut rng)?;
        let stage = SamfStage::uniform(channels, 4, 4, &mut rng)?;
        let decoder = ConvParams::uniform(1, channels, 1, INIT_SCALE, &mut rng)?;
        let prior = Tensor3::uniform(4, (height / 3).max(1), (width / 3).max(1), 1.0, &mut rng);
        Ok(Self {
            encoder,
            stage,
            decoder,
            prior,
        })
    }

    fn forward(&self, x: &Tensor3) -> Result<Forward> {
        if x.channels() != 1 {
            return Err(NnError::invalid("toy input must have one channel"));
        }
        let enc_pre = conv(x, &self.encoder)?;
        let enc = enc_pre.map(|v| v.max(0.0));
        let (fused, cache) = samf_forward(&enc, &self.prior, &self.stage)?;
        let y_main = conv(&fused, &self.decoder)?;
        let y_light = conv(&enc, &self.decoder)?;
        Ok(Forward {
            enc_pre,
            enc,
            fused,
            cache,
            y_main,
            y_light,
        })
    }

    /// `(y_main, y_light)` logits.
    pub fn outputs(&self, x: &Tensor3) -> Result<(Tensor3, Tensor3)> {
        let f = self.forward(x)?;
        Ok((f.y_main, f.y_light))
    }

    /// Smallest distance of any ReLU input to zero for input `x`.
    pub fn relu_margin(&self, x: &Tensor3) -> Result<f64> {
        let f = self.forward(x)?;
        let enc = f.enc_pre.data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        Ok(enc.min(f.cache.relu_margin()))
    }

    pub fn total_loss(&self, x: &Tensor3, gt: &Tensor3, w: BranchLossWeights) -> Result<f64> {
        let (m, l) = self.outputs(x)?;
        Ok(co_isd_loss(&m, &l, gt, w)?.total)
    }

    fn encoder_grads(&self, x: &Tensor3, f: &Forward, g_enc: &Tensor3) -> Result<ParamSet> {
        let g_pre = g_enc.zip_with(&f.enc_pre, |g, z| if z > 0.0 { g } else { 0.0 })?;
        let (g, _) = conv_backward(x, &self.encoder, &g_pre, false)?;
        let mut s = ParamSet::new();
        s.insert("encoder.weight", g.weight);
        s.insert("encoder.bias", g.bias);
        Ok(s)
    }

    fn decoder_set(g: crate::conv::ConvGrads) -> ParamSet {
        let mut s = ParamSet::new();
        s.insert("decoder.weight", g.weight);
        s.insert("decoder.bias", g.bias);
        s
    }

    /// Backpropagates each branch loss separately.
    pub fn branch_gradients(&self, x: &Tensor3, gt: &Tensor3) -> Result<BranchGrads> {
        let f = self.forward(x)?;
        let (loss_main, g_ym) = soft_dice(&f.y_main, gt)?;
        let (loss_light, g_yl) = soft_dice(&f.y_light, gt)?;

        let (gd, g_fused) = conv_backward(&f.fused, &self.decoder, &g_ym, true)?;
        let (g_enc, samf) = samf_backward(&g_fused.expect("requested"), &f.cache, &self.stage)?;
        let main_shared = self.encoder_grads(x, &f, &g_enc)?.union(Self::decoder_set(gd))?;

        let (gd, g_enc) = conv_backward(&f.enc, &self.decoder, &g_yl, true)?;
        let light_shared = self
            .encoder_grads(x, &f, &g_enc.expect("requested"))?
            .union(Self::decoder_set(gd))?;

        Ok(BranchGrads {
            loss_main,
            loss_light,
            main_shared,
            light_shared,
            samf: samf.prefixed(SAMF_PREFIX),
        })
    }

    /// Full gradient of the total loss assembled from per-branch gradients:
    /// shared entries via [`shared_grad_accumulate`], SAMF entries from the
    /// main branch alone.
    pub fn accumulated_gradient(&self, x: &Tensor3, gt: &Tensor3, w: BranchLossWeights) -> Result<ParamSet> {
        let b = self.branch_gradients(x, gt)?;
        shared_grad_accumulate(&b.main_shared, &b.light_shared, w.alpha())?.union(b.samf)
    }

    /// Single backward pass of the total loss: the two branch gradients meet
    /// at the decoder and the encoder output and flow back together.
    pub fn joint_gradient(&self, x: &Tensor3, gt: &Tensor3, w: BranchLossWeights) -> Result<(f64, ParamSet)> {
        let f = self.forward(x)?;
        let l = co_isd_loss(&f.y_main, &f.y_light, gt, w)?;
        let (gd_main, g_fused) = conv_backward(&f.fused, &self.decoder, &l.grad_main, true)?;
        let (gd_light, g_enc_light) = conv_backward(&f.enc, &self.decoder, &l.grad_light, true)?;
        let (mut g_enc, samf) = samf_backward(&g_fused.expect("requested"), &f.cache, &self.stage)?;
        g_enc.add_assign(&g_enc_light.expect("requested"))?;
        let decoder = Self::decoder_set(crate::conv::ConvGrads {
            weight: gd_main.weight.iter().zip(&gd_light.weight).map(|(a, b)| a + b).collect(),
            bias: gd_main.bias.iter().zip(&gd_light.bias).map(|(a, b)| a + b).collect(),
        });
        let all = self
            .encoder_grads(x, &f, &g_enc)?
            .union(decoder)?
            .union(samf.prefixed(SAMF_PREFIX))?;
        Ok((l.total, all))
    }
}

impl Parameters for CoIsdToy {
    fn params(&self) -> ParamSet {
        let mut s = ParamSet::new();
        s.insert("encoder.weight", self.encoder.weight.clone());
        s.insert("encoder.bias", self.encoder.bias.clone());
        s.insert("decoder.weight", self.decoder.weight.clone());
        s.insert("decoder.bias", self.decoder.bias.clone());
        s.union(self.stage.params().prefixed(SAMF_PREFIX)).expect("distinct prefixes")
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match name {
            "encoder.weight" => Some(&mut self.encoder.weight),
            "encoder.bias" => Some(&mut self.encoder.bias),
            "decoder.weight" => Some(&mut self.decoder.weight),
            "decoder.bias" => Some(&mut self.decoder.bias),
            _ => self.stage.param_mut(name.strip_prefix(SAMF_PREFIX)?),
        }
    }
}
