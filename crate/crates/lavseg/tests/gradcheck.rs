//! Finite-difference oracles for every layer and for full toy networks.
//!
//! All checks run in f64 with dropout disabled. The oracle is the
//! central-difference quotient; the implementation under test is the
//! hand-written backward pass.

use lavseg::autodiff::{
    bce_loss, concat_channels_bwd, concat_channels_fwd, conv2d_bwd, conv2d_fwd, grad_check,
    maxpool2_bwd, maxpool2_fwd, maxunpool2_bwd, maxunpool2_fwd, relu_bwd, relu_fwd, sigmoid_bwd,
    sigmoid_fwd, upsample2_bwd, upsample2_fwd, GradCheckTarget, Scratch, Tensor,
};
use lavseg::nets::{grad_check_network, ArchConfig, ArchKind, InitScheme, Network};
use lavseg::RngStream;

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut RngStream) -> Tensor<f64> {
    let mut t = Tensor::zeros(n, c, h, w);
    for v in &mut t.data {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    t
}

/// Wraps a layer as a differentiable scalar function: parameters are the
/// flattened input tensors, the loss is a fixed random weighting of the
/// layer output.
struct LayerCheck<'a> {
    tensors: Vec<Tensor<f64>>,
    head: Vec<f64>,
    forward: Box<dyn Fn(&[Tensor<f64>]) -> Tensor<f64> + 'a>,
    backward: Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Vec<Tensor<f64>> + 'a>,
}

impl LayerCheck<'_> {
    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for t in &self.tensors {
            o.push(o.last().unwrap() + t.len());
        }
        o
    }
}

impl GradCheckTarget for LayerCheck<'_> {
    fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    fn param(&self, i: usize) -> f64 {
        let o = self.offsets();
        let t = o.partition_point(|&x| x <= i) - 1;
        self.tensors[t].data[i - o[t]]
    }

    fn set_param(&mut self, i: usize, v: f64) {
        let o = self.offsets();
        let t = o.partition_point(|&x| x <= i) - 1;
        self.tensors[t].data[i - o[t]] = v;
    }

    fn loss(&mut self) -> f64 {
        let y = (self.forward)(&self.tensors);
        y.data.iter().zip(&self.head).map(|(a, b)| a * b).sum()
    }

    fn analytic_grads(&mut self) -> Vec<f64> {
        let y = (self.forward)(&self.tensors);
        let upstream = Tensor::from_vec(y.n, y.c, y.h, y.w, self.head.clone());
        let grads = (self.backward)(&self.tensors, &upstream);
        grads.iter().flat_map(|g| g.data.iter().copied()).collect()
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut rng = RngStream::derive(100, "fd-conv", 0);
    let x = random_tensor(1, 2, 5, 5, &mut rng);
    let w = random_tensor(3, 2, 3, 3, &mut rng);
    let b = random_tensor(1, 1, 1, 3, &mut rng);
    let head: Vec<f64> = (0..1 * 3 * 5 * 5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x, w, b],
        head,
        forward: Box::new(|ts| {
            let mut scratch = Scratch::new();
            conv2d_fwd(&ts[0], &ts[1], &ts[2].data, &mut scratch).unwrap()
        }),
        backward: Box::new(|ts, up| {
            let mut scratch = Scratch::new();
            let (dx, dw, db) = conv2d_bwd(&ts[0], &ts[1], up, &mut scratch).unwrap();
            vec![dx, dw, Tensor::from_vec(1, 1, 1, 3, db)]
        }),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "conv2d max relative error {err}");
}

#[test]
fn single_linear_conv_is_near_exact() {
    // A lone convolution is linear in every parameter, so the central
    // difference is exact up to f64 rounding.
    let mut rng = RngStream::derive(101, "fd-conv-lin", 0);
    let x = random_tensor(1, 1, 4, 4, &mut rng);
    let w = random_tensor(1, 1, 3, 3, &mut rng);
    let b = random_tensor(1, 1, 1, 1, &mut rng);
    let head: Vec<f64> = (0..16).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x, w, b],
        head,
        forward: Box::new(|ts| {
            let mut scratch = Scratch::new();
            conv2d_fwd(&ts[0], &ts[1], &ts[2].data, &mut scratch).unwrap()
        }),
        backward: Box::new(|ts, up| {
            let mut scratch = Scratch::new();
            let (dx, dw, db) = conv2d_bwd(&ts[0], &ts[1], up, &mut scratch).unwrap();
            vec![dx, dw, Tensor::from_vec(1, 1, 1, 1, db)]
        }),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-7, "linear conv max relative error {err}");
}

#[test]
fn maxpool_matches_finite_differences() {
    // Values spaced well apart so the eps probe cannot flip an argmax.
    let data: Vec<f64> = (0..32).map(|i| ((i * 13) % 32) as f64 * 0.1).collect();
    let x = Tensor::from_vec(1, 2, 4, 4, data);
    let mut rng = RngStream::derive(102, "fd-pool", 0);
    let head: Vec<f64> = (0..8).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x],
        head,
        forward: Box::new(|ts| maxpool2_fwd(&ts[0]).unwrap().0),
        backward: Box::new(|ts, up| {
            let (_, idx) = maxpool2_fwd(&ts[0]).unwrap();
            vec![maxpool2_bwd(up, &idx, ts[0].h, ts[0].w).unwrap()]
        }),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "maxpool max relative error {err}");
}

#[test]
fn maxunpool_matches_finite_differences() {
    // Fixed indices from a reference pool; differentiate the unpool input.
    let mut rng = RngStream::derive(103, "fd-unpool", 0);
    let source = random_tensor(1, 2, 4, 4, &mut rng);
    let (_, indices) = maxpool2_fwd(&source).unwrap();
    let x = random_tensor(1, 2, 2, 2, &mut rng);
    let head: Vec<f64> = (0..32).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let idx = indices.clone();
    let idx2 = indices;
    let mut check = LayerCheck {
        tensors: vec![x],
        head,
        forward: Box::new(move |ts| maxunpool2_fwd(&ts[0], &idx).unwrap()),
        backward: Box::new(move |_, up| vec![maxunpool2_bwd(up, &idx2).unwrap()]),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "maxunpool max relative error {err}");
}

#[test]
fn upsample_matches_finite_differences() {
    let mut rng = RngStream::derive(104, "fd-upsample", 0);
    let x = random_tensor(1, 2, 3, 3, &mut rng);
    let head: Vec<f64> = (0..72).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x],
        head,
        forward: Box::new(|ts| upsample2_fwd(&ts[0])),
        backward: Box::new(|_, up| vec![upsample2_bwd(up).unwrap()]),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "upsample max relative error {err}");
}

#[test]
fn concat_matches_finite_differences() {
    let mut rng = RngStream::derive(105, "fd-concat", 0);
    let a = random_tensor(1, 2, 3, 3, &mut rng);
    let b = random_tensor(1, 3, 3, 3, &mut rng);
    let head: Vec<f64> = (0..45).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![a, b],
        head,
        forward: Box::new(|ts| concat_channels_fwd(&ts[0], &ts[1]).unwrap()),
        backward: Box::new(|ts, up| {
            let (da, db) = concat_channels_bwd(up, ts[0].c).unwrap();
            vec![da, db]
        }),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "concat max relative error {err}");
}

#[test]
fn relu_matches_finite_differences() {
    // Inputs kept away from the kink at zero.
    let data: Vec<f64> = (0..18)
        .map(|i| if i % 2 == 0 { 0.5 + i as f64 * 0.1 } else { -0.5 - i as f64 * 0.1 })
        .collect();
    let x = Tensor::from_vec(1, 2, 3, 3, data);
    let mut rng = RngStream::derive(106, "fd-relu", 0);
    let head: Vec<f64> = (0..18).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x],
        head,
        forward: Box::new(|ts| relu_fwd(&ts[0])),
        backward: Box::new(|ts, up| vec![relu_bwd(&ts[0], up)]),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "relu max relative error {err}");
}

#[test]
fn sigmoid_matches_finite_differences() {
    let mut rng = RngStream::derive(107, "fd-sigmoid", 0);
    let x = random_tensor(1, 2, 3, 3, &mut rng);
    let head: Vec<f64> = (0..18).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut check = LayerCheck {
        tensors: vec![x],
        head,
        forward: Box::new(|ts| sigmoid_fwd(&ts[0])),
        backward: Box::new(|ts, up| {
            let y = sigmoid_fwd(&ts[0]);
            vec![sigmoid_bwd(&y, up)]
        }),
    };
    let err = grad_check(&mut check, 1e-4);
    assert!(err < 1e-6, "sigmoid max relative error {err}");
}

/// BCE differentiates directly against its prediction argument.
struct BceCheck {
    pred: Tensor<f64>,
    target: Tensor<f64>,
}

impl GradCheckTarget for BceCheck {
    fn param_count(&self) -> usize {
        self.pred.len()
    }

    fn param(&self, i: usize) -> f64 {
        self.pred.data[i]
    }

    fn set_param(&mut self, i: usize, v: f64) {
        self.pred.data[i] = v;
    }

    fn loss(&mut self) -> f64 {
        bce_loss(&self.pred, &self.target).unwrap().0
    }

    fn analytic_grads(&mut self) -> Vec<f64> {
        bce_loss(&self.pred, &self.target).unwrap().1.data
    }
}

#[test]
fn bce_matches_finite_differences() {
    let mut rng = RngStream::derive(108, "fd-bce", 0);
    let mut pred = Tensor::zeros(1, 1, 4, 4);
    let mut target = Tensor::zeros(1, 1, 4, 4);
    for (p, t) in pred.data.iter_mut().zip(&mut target.data) {
        *p = rng.uniform_range(0.05, 0.95);
        *t = if rng.uniform_f64() < 0.5 { 0.0 } else { 1.0 };
    }
    let mut check = BceCheck { pred, target };
    let err = grad_check(&mut check, 1e-6);
    assert!(err < 1e-6, "bce max relative error {err}");
}

fn toy_config(arch: ArchKind, stages: usize) -> ArchConfig {
    ArchConfig {
        arch,
        in_channels: 3,
        stages,
        base_filters: 2,
        dropout_rate: 0.0,
        init: InitScheme::LecunNormal,
        l2_lambda: 0.0,
    }
}

fn toy_batch(rng: &mut RngStream) -> (Tensor<f64>, Tensor<f64>) {
    let mut x = Tensor::zeros(1, 3, 8, 8);
    for v in &mut x.data {
        *v = rng.uniform_range(0.0, 1.0);
    }
    let mut t = Tensor::zeros(1, 1, 8, 8);
    for v in &mut t.data {
        *v = if rng.uniform_f64() < 0.3 { 1.0 } else { 0.0 };
    }
    (x, t)
}

#[test]
fn toy_unet_gradients_verify() {
    let cfg = toy_config(ArchKind::UNet, 1);
    let mut rng = RngStream::derive(109, "init", 0);
    let mut net: Network<f64> = Network::build(&cfg, &mut rng).unwrap();
    let (x, t) = toy_batch(&mut RngStream::derive(109, "data", 0));
    let err = grad_check_network(&mut net, x, t, 1e-4);
    assert!(err < 1e-5, "toy U-Net max relative error {err}");
}

#[test]
fn toy_two_stage_unet_gradients_verify() {
    let cfg = toy_config(ArchKind::UNet, 2);
    let mut rng = RngStream::derive(110, "init", 0);
    let mut net: Network<f64> = Network::build(&cfg, &mut rng).unwrap();
    let (x, t) = toy_batch(&mut RngStream::derive(110, "data", 0));
    let err = grad_check_network(&mut net, x, t, 1e-4);
    assert!(err < 1e-5, "two-stage U-Net max relative error {err}");
}

#[test]
fn toy_segnet_gradients_verify() {
    let cfg = toy_config(ArchKind::SegNet, 1);
    let mut rng = RngStream::derive(111, "init", 0);
    let mut net: Network<f64> = Network::build(&cfg, &mut rng).unwrap();
    let (x, t) = toy_batch(&mut RngStream::derive(111, "data", 0));
    let err = grad_check_network(&mut net, x, t, 1e-4);
    assert!(err < 1e-5, "toy SegNet max relative error {err}");
}
