//! U-Net: encoder stages, bottleneck, and skip-concatenating decoder.

use crate::autodiff::{
    concat_channels_bwd, concat_channels_fwd, relu_bwd, relu_fwd, sigmoid_bwd, sigmoid_fwd,
    upsample2_bwd, upsample2_fwd, Parameter, Scalar, Scratch, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::layers::{Conv, EncoderCache, EncoderStage};
use super::ArchConfig;

/// Decoder stage: upsample, halving conv+ReLU, concat with the encoder
/// skip, then two conv+ReLU.
#[derive(Debug, Clone)]
struct DecoderStage<S> {
    up_conv: Conv<S>,
    conv1: Conv<S>,
    conv2: Conv<S>,
}

pub struct UNet<S> {
    cfg: ArchConfig,
    encoder: Vec<EncoderStage<S>>,
    bottleneck1: Conv<S>,
    bottleneck2: Conv<S>,
    /// Deep-to-shallow order (index 0 runs right after the bottleneck).
    decoder: Vec<DecoderStage<S>>,
    head: Conv<S>,
    scratch: Scratch<S>,
}

struct DecoderCache<S> {
    upsampled: Tensor<S>,
    pre0: Tensor<S>,
    act0_channels: usize,
    concat: Tensor<S>,
    pre1: Tensor<S>,
    act1: Tensor<S>,
    pre2: Tensor<S>,
}

pub struct UNetCache<S> {
    encoder: Vec<EncoderCache<S>>,
    bottleneck_in: Tensor<S>,
    bn_pre1: Tensor<S>,
    bn_act1: Tensor<S>,
    bn_pre2: Tensor<S>,
    decoder: Vec<DecoderCache<S>>,
    head_in: Tensor<S>,
    pub output: Tensor<S>,
}

impl<S: Scalar> UNet<S> {
    /// Channel width of encoder stage `s`.
    fn width(cfg: &ArchConfig, s: usize) -> usize {
        cfg.base_filters << s
    }

    pub fn build(cfg: &ArchConfig, rng: &mut RngStream) -> Result<UNet<S>> {
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
        let bn_width = Self::width(cfg, cfg.stages);
        let bottleneck1 = Conv::new("bottleneck.conv1", cin, bn_width, cfg.init, rng);
        let bottleneck2 = Conv::new("bottleneck.conv2", bn_width, bn_width, cfg.init, rng);
        let mut decoder = Vec::with_capacity(cfg.stages);
        for s in (0..cfg.stages).rev() {
            let c_in = Self::width(cfg, s + 1);
            let c_out = Self::width(cfg, s);
            decoder.push(DecoderStage {
                up_conv: Conv::new(&format!("dec{s}.up_conv"), c_in, c_out, cfg.init, rng),
                conv1: Conv::new(&format!("dec{s}.conv1"), c_in, c_out, cfg.init, rng),
                conv2: Conv::new(&format!("dec{s}.conv2"), c_out, c_out, cfg.init, rng),
            });
        }
        let head = Conv::new("head", cfg.base_filters, 1, cfg.init, rng);
        Ok(UNet {
            cfg: *cfg,
            encoder,
            bottleneck1,
            bottleneck2,
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
    ) -> Result<(Tensor<S>, UNetCache<S>)> {
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
        let bottleneck_in = cur;
        let bn_pre1 = self.bottleneck1.forward(&bottleneck_in, scratch)?;
        let bn_act1 = relu_fwd(&bn_pre1);
        let bn_pre2 = self.bottleneck2.forward(&bn_act1, scratch)?;
        let bn_out = relu_fwd(&bn_pre2);

        let mut cur = bn_out.clone();
        let mut dec_caches = Vec::with_capacity(self.decoder.len());
        for (i, stage) in self.decoder.iter().enumerate() {
            let enc_idx = self.encoder.len() - 1 - i;
            let skip = &enc_caches[enc_idx].skip;
            let upsampled = upsample2_fwd(&cur);
            let pre0 = stage.up_conv.forward(&upsampled, scratch)?;
            let act0 = relu_fwd(&pre0);
            let concat = concat_channels_fwd(&act0, skip)?;
            let pre1 = stage.conv1.forward(&concat, scratch)?;
            let act1 = relu_fwd(&pre1);
            let pre2 = stage.conv2.forward(&act1, scratch)?;
            let out = relu_fwd(&pre2);
            dec_caches.push(DecoderCache {
                upsampled,
                pre0,
                act0_channels: act0.c,
                concat,
                pre1,
                act1,
                pre2,
            });
            cur = out;
        }
        let head_in = cur;
        let logits = self.head.forward(&head_in, scratch)?;
        let output = sigmoid_fwd(&logits);
        let cache = UNetCache {
            encoder: enc_caches,
            bottleneck_in,
            bn_pre1,
            bn_act1,
            bn_pre2,
            decoder: dec_caches,
            head_in,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Accumulate parameter gradients for `d_output = dL/d(sigmoid out)`.
    pub fn backward(&mut self, cache: &UNetCache<S>, d_output: &Tensor<S>) -> Result<()> {
        let scratch = &mut self.scratch;
        let d_logits = sigmoid_bwd(&cache.output, d_output);
        let mut d_cur = self.head.backward(&cache.head_in, &d_logits, scratch)?;

        // Skip-connection gradients, indexed by encoder stage.
        let mut d_skips: Vec<Option<Tensor<S>>> = vec![None; self.encoder.len()];
        for (i, stage) in self.decoder.iter_mut().enumerate().rev() {
            let dc = &cache.decoder[i];
            let enc_idx = self.encoder.len() - 1 - i;
            // d_cur is the gradient at this stage's final ReLU output.
            let d_pre2 = relu_bwd(&dc.pre2, &d_cur);
            let d_act1 = stage.conv2.backward(&dc.act1, &d_pre2, scratch)?;
            let d_pre1 = relu_bwd(&dc.pre1, &d_act1);
            let d_concat = stage.conv1.backward(&dc.concat, &d_pre1, scratch)?;
            let (d_act0, d_skip) = concat_channels_bwd(&d_concat, dc.act0_channels)?;
            d_skips[enc_idx] = Some(d_skip);
            let d_pre0 = relu_bwd(&dc.pre0, &d_act0);
            let d_upsampled = stage.up_conv.backward(&dc.upsampled, &d_pre0, scratch)?;
            d_cur = upsample2_bwd(&d_upsampled)?;
        }

        let d_bn_pre2 = relu_bwd(&cache.bn_pre2, &d_cur);
        let d_bn_act1 = self.bottleneck2.backward(&cache.bn_act1, &d_bn_pre2, scratch)?;
        let d_bn_pre1 = relu_bwd(&cache.bn_pre1, &d_bn_act1);
        let mut d_enc = self
            .bottleneck1
            .backward(&cache.bottleneck_in, &d_bn_pre1, scratch)?;

        for (s, stage) in self.encoder.iter_mut().enumerate().rev() {
            d_enc = stage.backward(&cache.encoder[s], &d_enc, d_skips[s].as_ref(), scratch)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<S>> {
        let mut out = Vec::new();
        for stage in &mut self.encoder {
            out.extend(stage.params_mut());
        }
        out.push(&mut self.bottleneck1.weight);
        out.push(&mut self.bottleneck1.bias);
        out.push(&mut self.bottleneck2.weight);
        out.push(&mut self.bottleneck2.bias);
        for stage in &mut self.decoder {
            out.push(&mut stage.up_conv.weight);
            out.push(&mut stage.up_conv.bias);
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
        out.push(&self.bottleneck1.weight);
        out.push(&self.bottleneck1.bias);
        out.push(&self.bottleneck2.weight);
        out.push(&self.bottleneck2.bias);
        for stage in &self.decoder {
            out.push(&stage.up_conv.weight);
            out.push(&stage.up_conv.bias);
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
    fn encoder_channel_doubling() {
        let cfg = ArchConfig::tuned(ArchKind::UNet, 14);
        let mut rng = RngStream::derive(1, "init", 0);
        let net: UNet<f32> = UNet::build(&cfg, &mut rng).unwrap();
        let widths: Vec<usize> = (0..4).map(|s| net.encoder[s].conv1.weight.value.n).collect();
        assert_eq!(widths, vec![16, 32, 64, 128]);
        assert_eq!(net.bottleneck1.weight.value.n, 256);
    }

    #[test]
    fn forward_shape_and_range() {
        let cfg = ArchConfig::tuned(ArchKind::UNet, 14);
        let mut rng = RngStream::derive(2, "init", 0);
        let mut net: UNet<f32> = UNet::build(&cfg, &mut rng).unwrap();
        let mut data_rng = RngStream::derive(2, "data", 0);
        let mut x = Tensor::zeros(2, 14, 96, 96);
        for v in &mut x.data {
            *v = data_rng.uniform_f64() as f32;
        }
        let mut drop_rng = RngStream::derive(2, "dropout", 0);
        let (y, _) = net.forward(&x, false, &mut drop_rng).unwrap();
        assert_eq!(y.shape(), (2, 1, 96, 96));
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let cfg = ArchConfig::tuned(ArchKind::UNet, 14);
        let mut rng = RngStream::derive(3, "init", 0);
        let mut net: UNet<f32> = UNet::build(&cfg, &mut rng).unwrap();
        let x = Tensor::zeros(1, 3, 96, 96);
        let mut drop_rng = RngStream::derive(3, "dropout", 0);
        assert!(matches!(
            net.forward(&x, false, &mut drop_rng),
            Err(Error::Shape(_))
        ));
    }
}
