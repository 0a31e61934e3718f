//! Architecture-agnostic network handle: dispatch, prediction, and the
//! gradient-check adapter.

use crate::autodiff::{bce_loss, GradCheckTarget, Parameter, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::patchwork::{PatchSet, PATCH_SIZE};
use crate::raster::BandCombo;
use crate::rng::RngStream;

use super::segnet::{SegNet, SegNetCache};
use super::unet::{UNet, UNetCache};
use super::ArchConfig;

pub enum Network<S> {
    UNet(UNet<S>),
    SegNet(SegNet<S>),
}

pub enum ForwardCache<S> {
    UNet(UNetCache<S>),
    SegNet(SegNetCache<S>),
}

impl<S: Scalar> Network<S> {
    pub fn build(cfg: &ArchConfig, rng: &mut RngStream) -> Result<Network<S>> {
        Ok(match cfg.arch {
            super::ArchKind::UNet => Network::UNet(UNet::build(cfg, rng)?),
            super::ArchKind::SegNet => Network::SegNet(SegNet::build(cfg, rng)?),
        })
    }

    pub fn config(&self) -> &ArchConfig {
        match self {
            Network::UNet(n) => n.config(),
            Network::SegNet(n) => n.config(),
        }
    }

    pub fn forward(
        &mut self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<(Tensor<S>, ForwardCache<S>)> {
        match self {
            Network::UNet(n) => {
                let (y, c) = n.forward(x, training, rng)?;
                Ok((y, ForwardCache::UNet(c)))
            }
            Network::SegNet(n) => {
                let (y, c) = n.forward(x, training, rng)?;
                Ok((y, ForwardCache::SegNet(c)))
            }
        }
    }

    pub fn backward(&mut self, cache: &ForwardCache<S>, d_output: &Tensor<S>) -> Result<()> {
        match (self, cache) {
            (Network::UNet(n), ForwardCache::UNet(c)) => n.backward(c, d_output),
            (Network::SegNet(n), ForwardCache::SegNet(c)) => n.backward(c, d_output),
            _ => Err(Error::Argument("forward cache does not match architecture".into())),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<S>> {
        match self {
            Network::UNet(n) => n.params_mut(),
            Network::SegNet(n) => n.params_mut(),
        }
    }

    pub fn params(&self) -> Vec<&Parameter<S>> {
        match self {
            Network::UNet(n) => n.params(),
            Network::SegNet(n) => n.params(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total parameter count.
    pub fn param_elements(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Cast parameters into a freshly built network of another dtype.
    pub fn cast<T: Scalar>(&self) -> Result<Network<T>> {
        let mut rng = RngStream::derive(0, "cast", 0);
        let mut out: Network<T> = Network::build(self.config(), &mut rng)?;
        let src = self.params();
        let mut dst = out.params_mut();
        for (d, s) in dst.iter_mut().zip(&src) {
            d.value = s.value.cast();
        }
        drop(dst);
        Ok(out)
    }
}

/// Inference-mode probabilities for a batch tensor (dropout disabled).
pub fn predict_probs<S: Scalar>(net: &mut Network<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut rng = RngStream::derive(0, "predict", 0);
    let (y, _) = net.forward(x, false, &mut rng)?;
    Ok(y)
}

/// Select the channels a patch set should feed to a network.
///
/// A canonical 14-channel set is narrowed to the combo's channels;
/// a set already at the combo's channel count passes through.
pub fn select_input_channels(set: &PatchSet, combo: BandCombo) -> Result<PatchSet> {
    if set.channels() == combo.channel_count() {
        return Ok(set.clone());
    }
    if set.channels() == 14 {
        return set.select_channels(&combo.indices_in_all14());
    }
    Err(Error::Shape(format!(
        "patch set has {} channels; combo {} needs {} (or a canonical 14)",
        set.channels(),
        combo,
        combo.channel_count()
    )))
}

/// Predict binary masks for every patch in a set.
///
/// Returns `N×96×96` mask bytes; a pixel is positive when its sigmoid
/// probability strictly exceeds `threshold`.
pub fn predict_masks(
    net: &mut Network<f32>,
    patches: &PatchSet,
    combo: BandCombo,
    threshold: f32,
) -> Result<Vec<u8>> {
    let input = select_input_channels(patches, combo)?;
    if input.channels() != net.config().in_channels {
        return Err(Error::Shape(format!(
            "combo {} provides {} channels, network expects {}",
            combo,
            input.channels(),
            net.config().in_channels
        )));
    }
    let n = input.len();
    let c = input.channels();
    let area = PATCH_SIZE * PATCH_SIZE;
    let mut out = Vec::with_capacity(n * area);
    let batch = 16;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let b = end - start;
        let mut x = Tensor::zeros(b, c, PATCH_SIZE, PATCH_SIZE);
        for (bi, i) in (start..end).enumerate() {
            x.item_mut(bi).copy_from_slice(input.image(i));
        }
        let probs = predict_probs(net, &x)?;
        for bi in 0..b {
            out.extend(
                probs
                    .plane(bi, 0)
                    .iter()
                    .map(|&p| if p > threshold { 1u8 } else { 0u8 }),
            );
        }
        start = end;
    }
    Ok(out)
}

/// Adapter exposing a network's parameters and a BCE loss over one fixed
/// batch to the finite-difference harness.
pub struct NetworkGradCheck<'a, S: Scalar> {
    net: &'a mut Network<S>,
    x: Tensor<S>,
    target: Tensor<S>,
    offsets: Vec<usize>,
    rng: RngStream,
}

impl<'a, S: Scalar> NetworkGradCheck<'a, S> {
    pub fn new(net: &'a mut Network<S>, x: Tensor<S>, target: Tensor<S>) -> NetworkGradCheck<'a, S> {
        let mut offsets = vec![0usize];
        for p in net.params() {
            offsets.push(offsets.last().unwrap() + p.value.len());
        }
        NetworkGradCheck {
            net,
            x,
            target,
            offsets,
            rng: RngStream::derive(0, "gradcheck", 0),
        }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let p = self.offsets.partition_point(|&o| o <= i) - 1;
        (p, i - self.offsets[p])
    }
}

impl<S: Scalar> GradCheckTarget for NetworkGradCheck<'_, S> {
    fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn param(&self, i: usize) -> f64 {
        let (p, off) = self.locate(i);
        self.net.params()[p].value.data[off].to_f64()
    }

    fn set_param(&mut self, i: usize, v: f64) {
        let (p, off) = self.locate(i);
        self.net.params_mut()[p].value.data[off] = S::from_f64(v);
    }

    fn loss(&mut self) -> f64 {
        let (y, _) = self
            .net
            .forward(&self.x, false, &mut self.rng)
            .expect("gradient-check forward failed");
        let (loss, _) = bce_loss(&y, &self.target).expect("gradient-check loss failed");
        loss
    }

    fn analytic_grads(&mut self) -> Vec<f64> {
        self.net.zero_grads();
        let (y, cache) = self
            .net
            .forward(&self.x, false, &mut self.rng)
            .expect("gradient-check forward failed");
        let (_, d_pred) = bce_loss(&y, &self.target).expect("gradient-check loss failed");
        self.net
            .backward(&cache, &d_pred)
            .expect("gradient-check backward failed");
        let mut grads = Vec::with_capacity(self.param_count());
        for p in self.net.params() {
            grads.extend(p.grad.data.iter().map(|g| g.to_f64()));
        }
        grads
    }
}

/// Max relative error of a network's analytic gradients against central
/// finite differences on one batch. Run with an `f64` network and
/// dropout disabled.
pub fn grad_check_network<S: Scalar>(
    net: &mut Network<S>,
    x: Tensor<S>,
    target: Tensor<S>,
    eps: f64,
) -> f64 {
    let mut adapter = NetworkGradCheck::new(net, x, target);
    crate::autodiff::grad_check(&mut adapter, eps)
}
