//! Training objectives of the bridge, generic over precision so each can be
//! finite-difference checked in `f64`.

use crate::generator::{proxy, GeneratorModel};
use crate::numcore::{BoundMlp, Result, Scalar, Var};

/// `L_T = mean_b ‖T' − T‖²`.
pub fn topo_loss<'t, S: Scalar>(pred: Var<'t, S>, target: Var<'t, S>) -> Result<Var<'t, S>> {
    pred.sub(target)?.square()?.row_sum()?.mean()
}

/// `L_Precon = Σ_i mean_b ‖Dec_i(P'_i) − Dec_i(P_i)‖²`, with the decoded
/// ground truth passed in as `targets[i]`.
pub fn precon_loss<'t, S: Scalar>(
    decoders: &[BoundMlp<'t, S>],
    pred_geom: Var<'t, S>,
    targets: &[Var<'t, S>],
) -> Result<Var<'t, S>> {
    let z = pred_geom.shape()[1] / decoders.len();
    let mut total: Option<Var<'t, S>> = None;
    for (k, (dec, target)) in decoders.iter().zip(targets).enumerate() {
        let term = dec.forward(pred_geom.slice_cols(k * z, z)?)?.sub(*target)?.square()?.row_sum()?.mean()?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one part"))
}

/// `L_Vrecon = Σ_i mean_b ‖𝒯(Dec_i(P'_i)) − 𝒯(Dec_i(P_i))‖`; `𝒯` is linear up
/// to the anchor, which cancels, so it is a product with `kt`.
pub fn vrecon_loss<'t, S: Scalar>(
    decoders: &[BoundMlp<'t, S>],
    pred_geom: Var<'t, S>,
    targets: &[Var<'t, S>],
    kt: Var<'t, S>,
) -> Result<Var<'t, S>> {
    let z = pred_geom.shape()[1] / decoders.len();
    let mut total: Option<Var<'t, S>> = None;
    for (k, (dec, target)) in decoders.iter().zip(targets).enumerate() {
        let diff = dec.forward(pred_geom.slice_cols(k * z, z)?)?.sub(*target)?;
        let term = diff.matmul(kt)?.row_norm()?.mean()?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one part"))
}

/// `L_wrecon = proxy(G(w'), G(w))` with `G(w)` given as images.
pub fn wrecon_loss<'t, S: Scalar>(
    generator: &GeneratorModel,
    decoder: &BoundMlp<'t, S>,
    pred: Var<'t, S>,
    target_images: Var<'t, S>,
) -> Result<Var<'t, S>> {
    proxy(generator.decode_var(decoder, pred)?, target_images)
}

/// `L_wreg = mean_b ‖w'‖²`.
pub fn wreg_loss<'t, S: Scalar>(pred: Var<'t, S>) -> Result<Var<'t, S>> {
    pred.square()?.row_sum()?.mean()
}

/// `L_Preg = mean_b ‖P'(w) − P'_frozen(w)‖`.
pub fn preg_loss<'t, S: Scalar>(pred_geom: Var<'t, S>, frozen_geom: Var<'t, S>) -> Result<Var<'t, S>> {
    pred_geom.sub(frozen_geom)?.row_norm()?.mean()
}

/// `L_r = mean_b ‖F_r(w, r^P) − r^W‖²`.
pub fn trajectory_loss<'t, S: Scalar>(pred: Var<'t, S>, target: Var<'t, S>) -> Result<Var<'t, S>> {
    pred.sub(target)?.square()?.row_sum()?.mean()
}
