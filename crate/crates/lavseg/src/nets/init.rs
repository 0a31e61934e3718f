//! Weight initialization schemes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::rng::RngStream;

/// Standard deviation of a unit normal truncated to two standard
/// deviations. Lecun-normal draws divide by this so the *resulting*
/// sample std matches `sqrt(1 / fan_in)`.
const TRUNC2_STD: f64 = 0.879_625_661_034_239_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    LecunNormal,
    GlorotUniform,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::LecunNormal => "lecun_normal",
            InitScheme::GlorotUniform => "glorot_uniform",
        }
    }
}

/// Initialize one 3×3 convolution weight tensor (`cout×cin×3×3`).
///
/// Fan-in is `cin*9`, fan-out `cout*9`. Lecun-normal draws a truncated
/// normal (resampling beyond |z| = 2) scaled so its std is
/// `sqrt(1/fan_in)`; glorot-uniform draws uniformly on
/// `±sqrt(6/(fan_in+fan_out))`.
pub fn init_conv_weight<S: Scalar>(
    cout: usize,
    cin: usize,
    scheme: InitScheme,
    rng: &mut RngStream,
) -> Tensor<S> {
    let fan_in = (cin * 9) as f64;
    let fan_out = (cout * 9) as f64;
    let mut t = Tensor::zeros(cout, cin, 3, 3);
    match scheme {
        InitScheme::LecunNormal => {
            let sigma = (1.0 / fan_in).sqrt() / TRUNC2_STD;
            for v in &mut t.data {
                *v = S::from_f64(rng.truncated_normal(2.0) * sigma);
            }
        }
        InitScheme::GlorotUniform => {
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for v in &mut t.data {
                *v = S::from_f64(rng.uniform_range(-bound, bound));
            }
        }
    }
    t
}

/// Biases start at zero.
pub fn init_conv_bias<S: Scalar>(cout: usize) -> Vec<S> {
    vec![S::ZERO; cout]
}
