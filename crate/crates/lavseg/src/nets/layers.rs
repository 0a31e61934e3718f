//! Shared building blocks for the encoder-decoder architectures.

use crate::autodiff::{
    conv2d_bwd, conv2d_fwd, dropout_bwd, dropout_fwd, maxpool2_bwd, maxpool2_fwd, relu_bwd,
    relu_fwd, DropoutMask, Parameter, Scalar, Scratch, Tensor,
};
use crate::error::Result;
use crate::rng::RngStream;

use super::init::{init_conv_bias, init_conv_weight, InitScheme};

/// One 3×3 same-padding convolution with bias.
#[derive(Debug, Clone)]
pub(crate) struct Conv<S> {
    pub weight: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> Conv<S> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        scheme: InitScheme,
        rng: &mut RngStream,
    ) -> Conv<S> {
        let weight = Parameter::new(
            format!("{name}.weight"),
            init_conv_weight(cout, cin, scheme, rng),
            true,
        );
        let bias = Parameter::new(
            format!("{name}.bias"),
            Tensor::from_vec(1, 1, 1, cout, init_conv_bias(cout)),
            false,
        );
        Conv { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<S>, scratch: &mut Scratch<S>) -> Result<Tensor<S>> {
        conv2d_fwd(x, &self.weight.value, &self.bias.value.data, scratch)
    }

    /// Accumulates weight/bias gradients, returns the input gradient.
    pub fn backward(
        &mut self,
        x: &Tensor<S>,
        upstream: &Tensor<S>,
        scratch: &mut Scratch<S>,
    ) -> Result<Tensor<S>> {
        let (dx, dw, db) = conv2d_bwd(x, &self.weight.value, upstream, scratch)?;
        for (g, d) in self.weight.grad.data.iter_mut().zip(&dw.data) {
            *g += *d;
        }
        for (g, d) in self.bias.grad.data.iter_mut().zip(&db) {
            *g += *d;
        }
        Ok(dx)
    }
}

/// Encoder stage: two conv+ReLU, 2×2 max pool, dropout.
#[derive(Debug, Clone)]
pub(crate) struct EncoderStage<S> {
    pub conv1: Conv<S>,
    pub conv2: Conv<S>,
    pub dropout_rate: f64,
}

/// Forward intermediates one encoder stage needs for its backward pass.
pub(crate) struct EncoderCache<S> {
    pub input: Tensor<S>,
    pub pre1: Tensor<S>,
    pub act1: Tensor<S>,
    pub pre2: Tensor<S>,
    /// Pre-pool activation; the U-Net skip connection reads this.
    pub skip: Tensor<S>,
    pub pool_idx: Vec<u8>,
    pub dropout: DropoutMask,
}

impl<S: Scalar> EncoderStage<S> {
    pub fn forward(
        &self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut RngStream,
        scratch: &mut Scratch<S>,
    ) -> Result<(Tensor<S>, EncoderCache<S>)> {
        let pre1 = self.conv1.forward(x, scratch)?;
        let act1 = relu_fwd(&pre1);
        let pre2 = self.conv2.forward(&act1, scratch)?;
        let skip = relu_fwd(&pre2);
        let (pooled, pool_idx) = maxpool2_fwd(&skip)?;
        let (out, dropout) = dropout_fwd(&pooled, self.dropout_rate, training, rng)?;
        let cache = EncoderCache {
            input: x.clone(),
            pre1,
            act1,
            pre2,
            skip,
            pool_idx,
            dropout,
        };
        Ok((out, cache))
    }

    /// `d_skip` carries the gradient arriving through a skip connection
    /// (zero tensor shape-match not required; pass `None` when absent).
    pub fn backward(
        &mut self,
        cache: &EncoderCache<S>,
        upstream: &Tensor<S>,
        d_skip: Option<&Tensor<S>>,
        scratch: &mut Scratch<S>,
    ) -> Result<Tensor<S>> {
        let d_pooled = dropout_bwd(upstream, &cache.dropout);
        let mut d_skip_total =
            maxpool2_bwd(&d_pooled, &cache.pool_idx, cache.skip.h, cache.skip.w)?;
        if let Some(extra) = d_skip {
            for (d, e) in d_skip_total.data.iter_mut().zip(&extra.data) {
                *d += *e;
            }
        }
        let d_pre2 = relu_bwd(&cache.pre2, &d_skip_total);
        let d_act1 = self.conv2.backward(&cache.act1, &d_pre2, scratch)?;
        let d_pre1 = relu_bwd(&cache.pre1, &d_act1);
        self.conv1.backward(&cache.input, &d_pre1, scratch)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<S>> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }

    pub fn params(&self) -> Vec<&Parameter<S>> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
        ]
    }
}
