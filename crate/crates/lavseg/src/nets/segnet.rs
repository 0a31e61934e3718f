//! SegNet-style network: the decoder upsamples by max unpooling with the
//! indices recorded by the matching encoder pool; no skip concatenation.

use crate::autodiff::{
    maxunpool2_bwd, maxunpool2_fwd, relu_bwd, relu_fwd, sigmoid_bwd, sigmoid_fwd, Parameter,
    Scalar, Scratch, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::layers::{Conv, EncoderCache, EncoderStage};
use super::ArchConfig;

/// Decoder stage: unpool, then two conv+ReLU (the second halves channels).
#[derive(Debug, Clone)]
struct DecoderStage<S> {
    conv1: Conv<S>,
    conv2: Conv<S>,
}

pub struct SegNet<S> {
    cfg: ArchConfig,
    encoder: Vec<EncoderStage<S>>,
    /// Deep-to-shallow order.
    decoder: Vec<DecoderStage<S>>,
    head: Conv<S>,
    scratch: Scratch<S>,
}

struct DecoderCache<S> {
    unpooled: Tensor<S>,
    pre1: Tensor<S>,
    act1: Tensor<S>,
    pre2: Tensor<S>,
}

pub struct SegNetCache<S> {
    encoder: Vec<EncoderCache<S>>,
    decoder: Vec<DecoderCache<S>>,
    head_in: Tensor<S>,
    pub output: Tensor<S>,
}

impl<S: Scalar> SegNet<S> {
    fn width(cfg: &ArchConfig, s: usize) -> usize {
        cfg.base_filters << s
    }

    pub fn build(cfg: &ArchConfig, rng: &mut RngStream) -> Result<SegNet<S>> {
        cfg.validate()?;
        let mut encoder = Vec::with_capacity(cfg.stages);
        let mut cin = cfg.in_channels;
        for s in 0..cfg.stages {
            let cout = Self::width(cfg, s);
            encoder.push(EncoderStage {
                conv1: Conv::new(&format!("enc{s}.conv1"), cin, cout, cfg.init, rng),
                conv2: Conv::new(&format!("enc{s}.conv2"), cout, cout, cfg.init, rng),
                dropout_rate: cfg.dropout_rate,
            });
            cin = cout;
        }
        let mut decoder = Vec::with_capacity(cfg.stages);
        for s in (0..cfg.stages).rev() {
            let c = Self::width(cfg, s);
            let c_next = if s == 0 { cfg.base_filters } else { Self::width(cfg, s - 1) };
            decoder.push(DecoderStage {
                conv1: Conv::new(&format!("dec{s}.conv1"), c, c, cfg.init, rng),
                conv2: Conv::new(&format!("dec{s}.conv2"), c, c_next, cfg.init, rng),
            });
        }
        let head = Conv::new("head", cfg.base_filters, 1, cfg.init, rng);
        Ok(SegNet {
            cfg: *cfg,
            encoder,
            decoder,
            head,
            scratch: Scratch::new(),
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn forward(
        &mut self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<(Tensor<S>, SegNetCache<S>)> {
        if x.c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                x.c, self.cfg.in_channels
            )));
        }
        let scratch = &mut self.scratch;
        let mut cur = x.clone();
        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            let (out, cache) = stage.forward(&cur, training, rng, scratch)?;
            enc_caches.push(cache);
            cur = out;
        }
        let mut dec_caches = Vec::with_capacity(self.decoder.len());
        for (i, stage) in self.decoder.iter().enumerate() {
            let enc_idx = self.encoder.len() - 1 - i;
            let unpooled = maxunpool2_fwd(&cur, &enc_caches[enc_idx].pool_idx)?;
            let pre1 = stage.conv1.forward(&unpooled, scratch)?;
            let act1 = relu_fwd(&pre1);
            let pre2 = stage.conv2.forward(&act1, scratch)?;
            let out = relu_fwd(&pre2);
            dec_caches.push(DecoderCache {
                unpooled,
                pre1,
                act1,
                pre2,
            });
            cur = out;
        }
        let head_in = cur;
        let logits = self.head.forward(&head_in, scratch)?;
        let output = sigmoid_fwd(&logits);
        Ok((
            output.clone(),
            SegNetCache {
                encoder: enc_caches,
                decoder: dec_caches,
                head_in,
                output,
            },
        ))
    }

    pub fn backward(&mut self, cache: &SegNetCache<S>, d_output: &Tensor<S>) -> Result<()> {
        let scratch = &mut self.scratch;
        let d_logits = sigmoid_bwd(&cache.output, d_output);
        let mut d_cur = self.head.backward(&cache.head_in, &d_logits, scratch)?;
        for (i, stage) in self.decoder.iter_mut().enumerate().rev() {
            let dc = &cache.decoder[i];
            let enc_idx = self.encoder.len() - 1 - i;
            let d_pre2 = relu_bwd(&dc.pre2, &d_cur);
            let d_act1 = stage.conv2.backward(&dc.act1, &d_pre2, scratch)?;
            let d_pre1 = relu_bwd(&dc.pre1, &d_act1);
            let d_unpooled = stage.conv1.backward(&dc.unpooled, &d_pre1, scratch)?;
            d_cur = maxunpool2_bwd(&d_unpooled, &cache.encoder[enc_idx].pool_idx)?;
        }
        for (s, stage) in self.encoder.iter_mut().enumerate().rev() {
            d_cur = stage.backward(&cache.encoder[s], &d_cur, None, scratch)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<S>> {
        let mut out = Vec::new();
        for stage in &mut self.encoder {
            out.extend(stage.params_mut());
        }
        for stage in &mut self.decoder {
            out.push(&mut stage.conv1.weight);
            out.push(&mut stage.conv1.bias);
            out.push(&mut stage.conv2.weight);
            out.push(&mut stage.conv2.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn params(&self) -> Vec<&Parameter<S>> {
        let mut out = Vec::new();
        for stage in &self.encoder {
            out.extend(stage.params());
        }
        for stage in &self.decoder {
            out.push(&stage.conv1.weight);
            out.push(&stage.conv1.bias);
            out.push(&stage.conv2.weight);
            out.push(&stage.conv2.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{ArchConfig, ArchKind};

    #[test]
    fn forward_shape_contract() {
        let cfg = ArchConfig::default_preset(ArchKind::SegNet, 14);
        let mut rng = RngStream::derive(4, "init", 0);
        let mut net: SegNet<f32> = SegNet::build(&cfg, &mut rng).unwrap();
        let mut data_rng = RngStream::derive(4, "data", 0);
        let mut x = Tensor::zeros(2, 14, 96, 96);
        for v in &mut x.data {
            *v = data_rng.uniform_f64() as f32;
        }
        let mut drop_rng = RngStream::derive(4, "dropout", 0);
        let (y, _) = net.forward(&x, false, &mut drop_rng).unwrap();
        assert_eq!(y.shape(), (2, 1, 96, 96));
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn decoder_channel_plan() {
        let cfg = ArchConfig::default_preset(ArchKind::SegNet, 14);
        let mut rng = RngStream::derive(5, "init", 0);
        let net: SegNet<f32> = SegNet::build(&cfg, &mut rng).unwrap();
        // Deep to shallow: 128->64, 64->32, 32->16, 16->16.
        let plan: Vec<(usize, usize)> = net
            .decoder
            .iter()
            .map(|d| (d.conv1.weight.value.n, d.conv2.weight.value.n))
            .collect();
        assert_eq!(plan, vec![(128, 64), (64, 32), (32, 16), (16, 16)]);
    }
}
