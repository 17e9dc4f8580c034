use serde::Serialize;

use super::{LayerModel, RateTuple, SynthesisError};
use crate::channel::SignChannel;
use crate::info::{self, BernoulliParams, MIMethod, MIResult, MixtureWeighting};
use crate::linalg;
use crate::tree::GaussianTree;

/// Margins of one layer's two inequalities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerBound {
    pub layer: usize,
    pub ry: f64,
    pub rb: f64,
    /// Information the Gaussian codebook alone must carry.
    pub i_y: MIResult,
    /// Information the Gaussian and sign codebooks must carry together.
    pub i_joint: MIResult,
    /// `R_Y - i_y`.
    pub margin_y: f64,
    /// `R_Y + R_B - i_joint`.
    pub margin_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub layers: Vec<LayerBound>,
}

impl BoundCheck {
    pub fn satisfied(&self) -> bool {
        self.layers.iter().all(|l| l.margin_y >= 0.0 && l.margin_joint >= 0.0)
    }

    /// All margins in order `(layer 1 Y, layer 1 joint, layer 2 Y, ...)`.
    pub fn margins(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| [l.margin_y, l.margin_joint]).collect()
    }
}

/// `ln(|S_O| / |C|) / 2` for a channel.
fn gaussian_mi(ch: &SignChannel) -> Result<MIResult, SynthesisError> {
    let lo = linalg::log_det_spd(&ch.out_cov).ok_or_else(|| info::InfoError::IllConditioned {
        context: "output covariance".into(),
        condition: f64::INFINITY,
    })?;
    let value = 0.5 * (lo - ch.noise_factor().log_det());
    Ok(MIResult { value, std_error: 0.0, method: MIMethod::DirectGaussian, samples_used: 0 })
}

/// Signed margins of the achievable-rate inequalities.
///
/// Layer 1: `R_Y >= I(X; Y1)` (Monte Carlo over the sign mixture) and
/// `R_Y + R_B >= I(X; Y1~)` (Gaussian). Layer `l >= 2`: the same pair with
/// layer `l-1` in place of `X`, i.e. `I(U_{l-1}; Y_l)` and
/// `I(U_{l-1}; Y_l~)`.
pub fn rate_region_check(
    tree: &GaussianTree,
    rates: &RateTuple,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
) -> Result<BoundCheck, SynthesisError> {
    rates.validate()?;
    let model = LayerModel::new(tree)?;
    if rates.layers.len() != model.top() {
        return Err(SynthesisError::LayerMismatch { expected: model.top(), got: rates.layers.len() });
    }
    let mut layers = Vec::with_capacity(model.top());
    for (l, r) in rates.layers.iter().enumerate() {
        let ch = if l == 0 {
            model.output.clone()
        } else {
            SignChannel::between(tree, &model.layers[l - 1], &model.layers[l])?
        };
        let p = pi.values_for(tree, &model.layers[l])?;
        let i_y = info::channel_mi_without_signs(
            &ch,
            &p,
            MixtureWeighting::Prior,
            samples,
            seed,
            info::STREAM_X_Y + 100 * l as u64,
        )?;
        let i_joint = gaussian_mi(&ch)?;
        layers.push(LayerBound {
            layer: l + 1,
            ry: r.ry,
            rb: r.rb,
            margin_y: r.ry - i_y.value,
            margin_joint: r.ry + r.rb - i_joint.value,
            i_y,
            i_joint,
        });
    }
    Ok(BoundCheck { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::synthesis::LayerRate;

    #[test]
    fn star_margins() {
        let s1 = fixtures::star();
        let pi = BernoulliParams::uniform(&s1, 0.5);
        let i_y = info::mi_x_y(&s1, &pi, 20_000, 3).unwrap().value;
        let total = info::mi_direct(&s1).unwrap().value;
        let rates = RateTuple::single(i_y + 0.2, total - i_y + 0.2, 4);
        let m = rate_region_check(&s1, &rates, &pi, 20_000, 3).unwrap();
        assert!((m.layers[0].margin_y - 0.2).abs() < 1e-9);
        assert!((m.layers[0].margin_joint - 0.4).abs() < 1e-9);
        assert!(m.satisfied());
        let low = RateTuple::single(i_y - 0.1, 1.0, 4);
        assert!(rate_region_check(&s1, &low, &pi, 20_000, 3).unwrap().layers[0].margin_y < 0.0);
    }

    #[test]
    fn two_layer_has_two_bounds() {
        let t = fixtures::two_layer();
        let pi = BernoulliParams::uniform(&t, 0.5);
        let rates = RateTuple { layers: vec![LayerRate { ry: 1.0, rb: 1.0 }; 2], block_len: 2 };
        let m = rate_region_check(&t, &rates, &pi, 5_000, 1).unwrap();
        assert_eq!(m.layers.len(), 2);
        for l in &m.layers {
            assert!(l.i_joint.value > 0.0);
            assert!(l.i_y.value < l.i_joint.value + 3.0 * l.i_y.std_error);
        }
    }
}
