use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::exec::Network;
use super::graph::{NetworkDescription, ParamRole};
use crate::tensor::Scalar;

pub const WEIGHT_STD: f64 = 0.02;

/// Convolution weights ~ N(0, 0.02), biases 0, norm scale 1 and offset 0.
pub fn init_parameters<T: Scalar, R: Rng + ?Sized>(desc: Arc<NetworkDescription>, rng: &mut R) -> Network<T> {
    let normal = Normal::new(0.0, WEIGHT_STD).expect("valid std");
    let params = desc
        .params
        .iter()
        .map(|p| match p.role {
            ParamRole::Weight => (0..p.len()).map(|_| T::from_f64(normal.sample(rng))).collect(),
            ParamRole::Bias | ParamRole::Offset => vec![T::zero(); p.len()],
            ParamRole::Scale => vec![T::one(); p.len()],
        })
        .collect();
    Network::from_params(desc, params).expect("shapes derived from description")
}
