use std::sync::OnceLock;

use partbridge::manipulate::{replace_part, resize_many, set_view, ResizeMode};
use partbridge::mapping::{shape_specific_finetune, ViewVector};
use partbridge::numcore::Tensor;
use partbridge::pipeline::{run_all, ModelSet, RunConfig, Workspace};
use partbridge::shapegen::{extract_feature, reconstruction_map, sample_part, Category, Template};

fn models() -> &'static ModelSet {
    static MODELS: OnceLock<(tempfile::TempDir, ModelSet)> = OnceLock::new();
    &MODELS
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let mut c = RunConfig::smoke();
            c.paths.data = dir.path().join("data");
            c.paths.models = dir.path().join("models");
            let ws = Workspace::new(c).unwrap();
            run_all(&ws).unwrap();
            let models = ModelSet::load(&ws).unwrap();
            (dir, models)
        })
        .1
}

fn latent(m: &ModelSet, id: usize) -> Vec<f32> {
    m.invert(&m.shape_image(id).unwrap().unwrap()).unwrap().0
}

/// Mean per-vertex norm of `rows · K` for a feature difference.
fn vertex_residual(kt: &[f32], v: usize, diff: &[f64]) -> f64 {
    let cols = 3 * v;
    let mut coords = vec![0f64; cols];
    for (r, d) in diff.iter().enumerate() {
        for c in 0..cols {
            coords[c] += d * kt[r * cols + c] as f64;
        }
    }
    coords.chunks(3).map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>() / v as f64
}

/// Uniformly scaling a part leaves the differential (Laplacian) coordinates
/// nearly unchanged while the vertex-space loss sees the full size change.
#[test]
fn uniform_scale_is_visible_in_vertex_space_only() {
    let t = Template::get(4).unwrap();
    let v = t.vertex_count();
    let kt = reconstruction_map(&t).unwrap();
    let (part, _) = sample_part(Category::Chair, 1, 3, None, &t).unwrap();
    let anchor = part.vertices[0];
    let mut scaled = part.clone();
    for p in &mut scaled.vertices {
        for a in 0..3 {
            p[a] = anchor[a] + 1.3 * (p[a] - anchor[a]);
        }
    }
    let (fa, _) = extract_feature(&part).unwrap();
    let (fb, _) = extract_feature(&scaled).unwrap();
    let diff: Vec<f64> = fb.as_slice().iter().zip(fa.as_slice()).map(|(b, a)| b - a).collect();
    let vrecon = vertex_residual(&kt, v, &diff);

    let laplacian = |verts: &[[f64; 3]]| -> Vec<[f64; 3]> {
        t.neighbors()
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut d = verts[i];
                for &j in nb {
                    for a in 0..3 {
                        d[a] -= verts[j][a] / nb.len() as f64;
                    }
                }
                d
            })
            .collect()
    };
    let (la, lb) = (laplacian(&part.vertices), laplacian(&scaled.vertices));
    let lap = la.iter().zip(&lb).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()).sum::<f64>() / v as f64;
    let displacement = part.vertices.iter().zip(&scaled.vertices).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()).sum::<f64>() / v as f64;

    assert!(vrecon > 0.0);
    assert!((vrecon - displacement).abs() < 1e-4 * displacement, "{vrecon} vs {displacement}");
    assert!(lap < 0.1 * vrecon, "laplacian residual {lap} vs vertex residual {vrecon}");
}

#[test]
fn replacement_takes_exactly_one_part() {
    let m = models();
    let (ws, wt) = (latent(m, 0), latent(m, 1));
    let k = 1;
    let out = replace_part(&m.generator, &m.mapping, &m.views, &ws, &wt, k).unwrap();
    let target = m.mapping.forward_map(&wt).unwrap();
    assert_eq!(out.edited.part_code(k), target.part_code(k));
    for j in (0..out.source.part_count()).filter(|&j| j != k) {
        assert_eq!(out.edited.part_code(j), out.source.part_code(j));
    }
    assert_eq!(out.view, m.views.predict_view(&ws).unwrap());
    let again = replace_part(&m.generator, &m.mapping, &m.views, &ws, &wt, k).unwrap();
    assert_eq!(again.latent, out.latent);
    assert!(replace_part(&m.generator, &m.mapping, &m.views, &ws, &wt, 99).is_err());
}

#[test]
fn view_edit_keeps_the_shape_attributes() {
    let m = models();
    let w = latent(m, 2);
    let view = ViewVector::new(5).unwrap();
    let out = set_view(&m.generator, &m.mapping, &w, view).unwrap();
    assert_eq!(out.view, view);
    assert_eq!(out.edited, out.source);
    assert_eq!(out.image.width(), m.generator.size);
    assert!(ViewVector::new(12).is_err());
}

#[test]
fn resize_modes() {
    let m = models();
    let w = latent(m, 3);
    let f = &m.finetuners[0];
    assert_eq!(f.resized_latent(&w, 0.0, ResizeMode::Raw).unwrap(), w);
    assert_ne!(f.resized_latent(&w, 1.0, ResizeMode::Raw).unwrap(), w);
    let single = f.resized_latent(&w, 0.7, ResizeMode::Finetuner).unwrap();
    let (many, image) = resize_many(&m.generator, &[(f, 0.7)], &w).unwrap();
    assert_eq!(single, many);
    assert_eq!(image, m.generator.synthesize(&single).unwrap());
    let (none, _) = resize_many(&m.generator, &[], &w).unwrap();
    assert_eq!(none, w);
    assert!(f.resized_latent(&w[1..], 1.0, ResizeMode::Raw).is_err());
}

#[test]
fn shape_specific_finetuning_never_worsens_the_reconstruction() {
    let m = models();
    let image = m.shape_image(4).unwrap().unwrap();
    let w = m.invert(&image).unwrap().0;
    let view = m.views.predict_view(&w).unwrap();
    let target = Tensor::new(&[1, image.height(), image.width()], image.data().to_vec()).unwrap();
    let mut config = partbridge::mapping::SpecificConfig {
        steps: 20,
        lr: 1e-3,
        ..Default::default()
    };
    let before_forward = m.mapping.forward.clone();
    let r = shape_specific_finetune(&m.generator, &m.mapping, &w, view, &target, &config).unwrap();
    assert!(r.after <= r.before + 1e-6, "{} -> {}", r.before, r.after);
    assert_eq!(m.mapping.forward, before_forward);
    config.steps = 0;
    let r0 = shape_specific_finetune(&m.generator, &m.mapping, &w, view, &target, &config).unwrap();
    assert_eq!(r0.forward_drift, 0.0);
    assert!((r0.after - r0.before).abs() < 1e-6);
}
