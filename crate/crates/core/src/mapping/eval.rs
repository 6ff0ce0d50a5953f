use std::collections::HashMap;

use super::{geom, Bridge, MappingModel, PairSet, ShapeAttr};
use crate::generator::proxy_per_image;
use crate::numcore::{Mlp, Result, Tape, Tensor};
use crate::seed;
use crate::shapegen::{chamfer, sample_surface, TopoAttr, Vec3};

pub const CHAMFER_SAMPLES: usize = 4000;

/// Surface samples of each ground-truth shape, keyed by shape id.
pub type GroundTruthSamples = HashMap<usize, Vec<Vec3>>;

/// A prediction with every existence flag below threshold keeps its most
/// confident part, so there is always a surface to score.
fn with_some_part(mut attr: ShapeAttr) -> ShapeAttr {
    let per = TopoAttr::PER_PART;
    let n = attr.topo.len() / per;
    if (0..n).all(|k| attr.topo[k * per] < 0.5) {
        let k = (0..n).max_by(|&a, &b| attr.topo[a * per].total_cmp(&attr.topo[b * per])).expect("at least one part");
        attr.topo[k * per] = 1.0;
    }
    attr
}

/// Chamfer error `E_s` of the shape decoded from `M_F(w)` for every pair.
pub fn shape_errors(
    bridge: &Bridge,
    forward: &Mlp<f32>,
    data: &PairSet,
    truth: &GroundTruthSamples,
    seed: u64,
) -> Result<Vec<f64>> {
    let pred = forward.infer(&data.latents)?;
    (0..data.len())
        .map(|i| {
            let attr = with_some_part(ShapeAttr::unpack(pred.row(i), bridge.n_c(), bridge.z())?);
            let shape = bridge.shape(&attr)?;
            let tris = shape.triangles();
            let s = seed::derive(seed, &[seed::tag("eval.chamfer"), i as u64]);
            let points = sample_surface(&tris, CHAMFER_SAMPLES, s).map_err(geom)?;
            let gt = truth.get(&data.shape_ids[i]).ok_or_else(|| crate::numcore::NumError::InvalidArgument {
                op: "shape_errors",
                msg: format!("no ground-truth samples for shape {}", data.shape_ids[i]),
            })?;
            chamfer(&points, gt).map_err(geom)
        })
        .collect()
}

fn proxies(bridge: &Bridge, latents: &Tensor<f32>, targets: &Tensor<f32>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(latents.rows());
    for lo in (0..latents.rows()).step_by(256) {
        let idx: Vec<usize> = (lo..(lo + 256).min(latents.rows())).collect();
        let images = bridge.generator.synthesize_batch(&latents.select_rows(&idx))?;
        let tape = Tape::new();
        let per = proxy_per_image(tape.constant(images), tape.constant(targets.select_rows(&idx)))?;
        out.extend(per.value().data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

/// `w' = M_B(M_F(w), v)` for every pair.
pub fn roundtrip_latents(model: &MappingModel, data: &PairSet) -> Result<Tensor<f32>> {
    let all: Vec<usize> = (0..data.len()).collect();
    model.backward_batch(&model.forward_batch(&data.latents)?, &data.one_hots(&all))
}

/// Image error `E_i`: proxy of `G(M_B(M_F(w), v))` against the dataset render.
pub fn image_errors(bridge: &Bridge, model: &MappingModel, data: &PairSet) -> Result<Vec<f64>> {
    proxies(bridge, &roundtrip_latents(model, data)?, &data.images)
}

/// Round-trip error: proxy of `G(M_B(M_F(w), v))` against `G(w)`.
pub fn roundtrip_errors(bridge: &Bridge, model: &MappingModel, data: &PairSet) -> Result<Vec<f64>> {
    let n = data.len();
    let mut gw = Vec::new();
    for lo in (0..n).step_by(256) {
        let idx: Vec<usize> = (lo..(lo + 256).min(n)).collect();
        gw.extend(bridge.generator.synthesize_batch(&data.latents.select_rows(&idx))?.into_data());
    }
    let s = bridge.generator.size;
    proxies(bridge, &roundtrip_latents(model, data)?, &Tensor::new(&[n, s, s], gw)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_predictions_keep_their_most_confident_part() {
        let topo = vec![0.1, 0., 0., 0., 1., 1., 1., 0.4, 0., 0., 0., 1., 1., 1.];
        let attr = with_some_part(ShapeAttr { geom: vec![], topo: topo.clone() });
        assert_eq!(attr.topo[7], 1.0);
        assert_eq!(attr.topo[0], 0.1);
        let present = ShapeAttr { geom: vec![], topo: [vec![0.9], topo[1..].to_vec()].concat() };
        assert_eq!(with_some_part(present.clone()), present);
    }
}
