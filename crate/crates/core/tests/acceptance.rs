//! Acceptance suite: one PASS/FAIL line per criterion. Trains the desk-scale
//! chair pipeline twice in temporary directories (the second run checks
//! determinism), so a full run takes roughly a quarter of an hour on one core.
//! Failing criteria are reported, not turned into a failing exit status.

use std::path::Path;
use std::rc::Rc;
use std::time::{Duration, Instant};

use partbridge::generator::{invert, proxy};
use partbridge::imaging::GrayImage;
use partbridge::mapping::losses::{precon_loss, preg_loss, topo_loss, trajectory_loss, vrecon_loss, wrecon_loss, wreg_loss};
use partbridge::numcore::gradcheck::check_gradients;
use partbridge::numcore::{BoundMlp, Kernel, Mlp, Tape, Tensor, Var};
use partbridge::pipeline::{
    ablate_finetune, ablate_size, ablate_trajectory, replacement_oracle, run_all, view_oracle, FinetuneReport, RunConfig, Stage,
    Workspace,
};
use partbridge::shapegen::{
    chamfer, chamfer_brute_force, extract_feature, reconstruct_vertices, reconstruction_map, sample_part, Category, Template,
};
use partbridge::texture::{trace_contours, BorderKind, TpsWarp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const FD_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;
const SIZE_SEEDS: [u64; 3] = [7, 8, 9];
const ORACLE_SEED: u64 = 1;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn report(name: &str, outcome: Outcome, tally: &mut (usize, usize)) {
    tally.1 += 1;
    match outcome {
        Ok((true, detail)) => {
            tally.0 += 1;
            println!("PASS {name}: {detail}");
        }
        Ok((false, detail)) => println!("FAIL {name}: {detail}"),
        Err(e) => println!("FAIL {name}: error: {e}"),
    }
}

// ---- gradient suite ----

type Check = Box<dyn Fn(u64) -> Result<f64, String>>;

fn fd(inputs: &[Tensor<f64>], f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> partbridge::numcore::Result<Var<'t, f64>>) -> Result<f64, String> {
    Ok(check_gradients(inputs, FD_STEP, f).map_err(err)?.max_rel_error)
}

fn gradient_checks() -> Vec<(&'static str, Check)> {
    let kernel = Rc::new(Kernel::<f64>::binomial(3).unwrap());
    let micro = Template::get(2).unwrap();
    let v = micro.vertex_count();
    let kt: Tensor<f64> = Tensor::new(&[9 * v, 3 * v], reconstruction_map(&micro).unwrap().to_vec()).unwrap().cast();
    let mut checks: Vec<(&'static str, Check)> = vec![
        ("matmul/add/sub/mul", Box::new(|s| {
            let mut r = rng(s);
            let (a, b, c) = (Tensor::randn(&[3, 4], 1.0, &mut r), Tensor::randn(&[4, 2], 1.0, &mut r), Tensor::randn(&[2], 1.0, &mut r));
            let d = Tensor::randn(&[3, 2], 1.0, &mut r);
            fd(&[a, b, c, d], |_, x| x[0].matmul(x[1])?.add(x[2])?.sub(x[3])?.mul(x[3])?.sum())
        })),
        ("scale/add_scalar/leaky_relu/tanh", Box::new(|s| {
            let a = Tensor::randn(&[4, 5], 1.0, &mut rng(s));
            fd(&[a], |_, x| x[0].scale(1.7)?.add_scalar(-0.2)?.leaky_relu(0.2)?.tanh()?.mean())
        })),
        ("exp/log/square", Box::new(|s| {
            let a = Tensor::<f64>::randn(&[3, 3], 1.0, &mut rng(s)).map(|v| v.abs() + 0.3);
            fd(&[a], |_, x| x[0].log()?.square()?.add(x[0].scale(0.5)?.exp()?)?.sum())
        })),
        ("row_sum/row_mean/row_norm/slice_cols/concat/reshape", Box::new(|s| {
            let mut r = rng(s);
            let (a, b) = (Tensor::randn(&[2, 4], 1.0, &mut r), Tensor::randn(&[2, 2], 1.0, &mut r));
            fd(&[a, b], |t, x| {
                let c = t.concat(&[x[0], x[1]])?;
                let rows = c.reshape(&[2, 2, 3])?.row_mean()?.square()?.sum()?;
                c.slice_cols(1, 4)?.row_norm()?.sum()?.add(c.row_sum()?.square()?.mean()?)?.add(rows)
            })
        })),
        ("softmax_cross_entropy", Box::new(|s| {
            let a = Tensor::randn(&[3, 12], 1.0, &mut rng(s));
            let targets = [s as usize % 12, 4, 11];
            fd(&[a], |_, x| x[0].softmax_cross_entropy(&targets))
        })),
        ("conv2d/avg_pool2/upsample2", Box::new(move |s| {
            let a = Tensor::randn(&[2, 8, 8], 1.0, &mut rng(s));
            let k = kernel.clone();
            fd(&[a], move |_, x| x[0].conv2d(&k)?.avg_pool2()?.upsample2()?.square()?.mean())
        })),
        ("L_T", Box::new(|s| {
            let mut r = rng(s);
            let (a, b) = (Tensor::randn(&[4, 7], 1.0, &mut r), Tensor::randn(&[4, 7], 1.0, &mut r));
            fd(&[a], |t, x| topo_loss(x[0], t.constant(b.clone())))
        })),
        ("L_Precon", Box::new(|s| {
            let mut r = rng(s);
            let decs: Vec<Mlp<f64>> = (0..2).map(|_| Mlp::new(&[3, 8, 12], &mut r)).collect();
            let p = Tensor::randn(&[3, 6], 1.0, &mut r);
            let targets: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::randn(&[3, 12], 1.0, &mut r)).collect();
            fd(&[p], |t, x| {
                let d: Vec<_> = decs.iter().map(|m| m.bind(t, false)).collect();
                let tg: Vec<_> = targets.iter().map(|v| t.constant(v.clone())).collect();
                precon_loss(&d, x[0], &tg)
            })
        })),
        ("L_Preg", Box::new(|s| {
            let mut r = rng(s);
            let (a, b) = (Tensor::randn(&[3, 8], 1.0, &mut r), Tensor::randn(&[3, 8], 1.0, &mut r));
            fd(&[a], |t, x| preg_loss(x[0], t.constant(b.clone())))
        })),
        ("L_r", Box::new(|s| {
            let mut r = rng(s);
            let net = Mlp::<f64>::new(&[7, 5, 5, 5, 4], &mut r);
            let (x0, y) = (Tensor::randn(&[3, 7], 1.0, &mut r), Tensor::randn(&[3, 4], 1.0, &mut r));
            let params: Vec<Tensor<f64>> = net.layers().iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect();
            fd(&params, |t, x| trajectory_loss(BoundMlp::from_params(x).forward(t.constant(x0.clone()))?, t.constant(y.clone())))
        })),
        ("proxy", Box::new(|s| {
            let mut r = rng(s);
            let a = Tensor::<f64>::randn(&[2, 16, 16], 0.3, &mut r).map(|v| v + 0.5);
            let b = Tensor::<f64>::randn(&[2, 16, 16], 0.3, &mut r).map(|v| v + 0.5);
            fd(&[a], |t, x| proxy(x[0], t.constant(b.clone())))
        })),
        ("L_wrecon", Box::new(|s| {
            let config = partbridge::generator::GeneratorConfig {
                latent_dim: 4,
                hidden: vec![6],
                ..Default::default()
            };
            let g = partbridge::generator::GeneratorModel::new(8, &config, s).map_err(err)?;
            let dec = g.decoder.cast::<f64>();
            let mut r = rng(s);
            let w = Tensor::randn(&[2, 4], 1.0, &mut r);
            let target = Tensor::<f64>::randn(&[2, 8, 8], 0.3, &mut r).map(|v| v + 0.5);
            fd(&[w], |t, x| wrecon_loss(&g, &dec.bind(t, false), x[0], t.constant(target.clone()))?.add(wreg_loss(x[0])?))
        })),
    ];
    checks.push((
        "L_Vrecon (26-vertex template)",
        Box::new(move |s| {
            let mut r = rng(s);
            let f = kt.shape()[0];
            let decs: Vec<Mlp<f64>> = (0..2).map(|_| Mlp::new(&[3, 8, f], &mut r)).collect();
            let p = Tensor::randn(&[2, 6], 1.0, &mut r);
            let targets: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::randn(&[2, f], 1.0, &mut r)).collect();
            fd(&[p], |t, x| {
                let d: Vec<_> = decs.iter().map(|m| m.bind(t, false)).collect();
                let tg: Vec<_> = targets.iter().map(|v| t.constant(v.clone())).collect();
                vrecon_loss(&d, x[0], &tg, t.constant(kt.clone()))
            })
        }),
    ));
    checks
}

fn gradient_suite() -> Outcome {
    let mut worst = (0.0f64, "");
    for (name, check) in gradient_checks() {
        for seed in 0..5 {
            let e = check(seed)?;
            if e > worst.0 || !e.is_finite() {
                worst = (e, name);
            }
        }
    }
    Ok((worst.0 < FD_TOL, format!("max relative error {:.2e} ({}) over every op and loss, 5 seeds each", worst.0, worst.1)))
}

// ---- geometry oracles ----

fn mask(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> GrayImage {
    let mut m = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if on(x, y) {
                m.set(x, y, 1.0);
            }
        }
    }
    m
}

fn ring(lo: usize, hi: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in lo..=hi {
        for x in lo..=hi {
            if x == lo || x == hi || y == lo || y == hi {
                out.push((x, y));
            }
        }
    }
    out.sort();
    out
}

fn sorted(mut v: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    v.sort();
    v
}

fn contour_oracles() -> bool {
    // Filled square: its 36 perimeter pixels.
    let square = trace_contours(&mask(16, 16, |x, y| (3..13).contains(&x) && (3..13).contains(&y)));
    let a = square.len() == 1 && sorted(square[0].points.clone()) == ring(3, 12);
    // Square with a hole: outer perimeter plus the 16 pixels 4-adjacent to the hole.
    let holed = trace_contours(&mask(16, 16, |x, y| (2..14).contains(&x) && (2..14).contains(&y) && !((6..10).contains(&x) && (6..10).contains(&y))));
    let hole: Vec<(usize, usize)> = ring(5, 10).into_iter().filter(|&(x, y)| !((x == 5 || x == 10) && (y == 5 || y == 10))).collect();
    let b = holed.len() == 2
        && sorted(holed[0].points.clone()) == ring(2, 13)
        && holed[1].kind == BorderKind::Hole
        && holed[1].parent == Some(0)
        && sorted(holed[1].points.clone()) == hole;
    // Diagonal stroke: traced out and back.
    let diag = trace_contours(&mask(8, 8, |x, y| x == y && (2..5).contains(&x)));
    let c = diag.len() == 1 && diag[0].points == vec![(2, 2), (3, 3), (4, 4), (3, 3)];
    a && b && c
}

fn geometry_oracles() -> Outcome {
    let t = Template::get(4).map_err(err)?;
    let mut round_trip: f64 = 0.0;
    for seed in 0..50u64 {
        let category = if seed % 2 == 0 { Category::Chair } else { Category::Cup };
        let slot = seed as usize % category.part_count();
        let params = category.slot_ranges()[slot].widened(2.0).sample(&mut rng(seed));
        let (part, _) = sample_part(category, slot, seed, Some(params), &t).map_err(err)?;
        let (f, _) = extract_feature(&part).map_err(err)?;
        let back = reconstruct_vertices(&f, &t, part.vertices[0]).map_err(err)?;
        round_trip = round_trip.max(part.max_vertex_error(&back));
    }
    let mut r = rng(77);
    let mut chamfer_exact = true;
    for _ in 0..200 {
        let mut cloud = |n: usize| -> Vec<[f64; 3]> { (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect() };
        let (na, nb) = (1 + (cloud(1)[0][0].abs() * 49.0) as usize, 50);
        let (a, b) = (cloud(na), cloud(nb));
        chamfer_exact &= chamfer(&a, &b).map_err(err)? == chamfer_brute_force(&a, &b).map_err(err)?;
    }
    let v25 = Template::get(25).map_err(err)?.vertex_count();
    let src = [[2.0, 2.0], [20.0, 3.0], [4.0, 21.0], [22.0, 20.0], [12.0, 11.0], [7.0, 15.0]];
    let dst: Vec<[f64; 2]> = src.iter().enumerate().map(|(i, p)| [p[0] + (i as f64).sin() * 3.0, p[1] - (i as f64).cos()]).collect();
    let tps = TpsWarp::fit(&src, &dst, 0.0).map_err(err)?;
    let tps_err = src.iter().zip(&dst).map(|(s, d)| {
        let q = tps.apply(*s);
        (q[0] - d[0]).abs().max((q[1] - d[1]).abs())
    });
    let tps_err = tps_err.fold(0.0, f64::max);
    let contours = contour_oracles();
    let pass = round_trip < 1e-5 && chamfer_exact && v25 == 3752 && tps_err < 1e-6 && contours;
    Ok((
        pass,
        format!(
            "feature round trip {round_trip:.1e}; chamfer exact {chamfer_exact}; V(n=25) = {v25}; TPS control error {tps_err:.1e}; contours match {contours}"
        ),
    ))
}

// ---- desk pipeline criteria ----

fn desk(dir: &Path) -> Workspace {
    let mut c = RunConfig::default();
    c.paths.data = dir.join("data");
    c.paths.models = dir.join("models");
    Workspace::new(c).expect("default config is valid")
}

fn size_ablation(ws: &Workspace) -> Outcome {
    let runs = ablate_size(ws, &SIZE_SEEDS).map_err(err)?;
    let wins = runs.iter().filter(|r| r.improves()).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: E_s {:.5}->{:.5}, E_i {:.5}->{:.5} (before joint finetuning E_s {:.5}->{:.5}, E_i {:.5}->{:.5})",
                r.seed,
                r.without_joint.shape_error,
                r.with_joint.shape_error,
                r.without_joint.image_error,
                r.with_joint.image_error,
                r.without.shape_error,
                r.with.shape_error,
                r.without.image_error,
                r.with.image_error
            )
        })
        .collect();
    Ok((wins == runs.len(), format!("{wins}/{} seeds lower on both; {}", runs.len(), detail.join("; "))))
}

fn joint(ws: &Workspace) -> Outcome {
    let a = ablate_finetune(ws).map_err(err)?;
    let pass = a.relative_reduction >= 0.10 && a.deviation_without_preg > a.deviation;
    Ok((
        pass,
        format!(
            "held-out E_i {:.5}->{:.5} ({:.1}% lower); latent deviation {:.4} with λ={} vs {:.4} with λ=0",
            a.image_error_before,
            a.image_error_after,
            100.0 * a.relative_reduction,
            a.deviation,
            a.lambda_p,
            a.deviation_without_preg
        ),
    ))
}

fn trajectory_ablation(ws: &Workspace) -> Outcome {
    let rows = ablate_trajectory(ws).map_err(err)?;
    let pass = !rows.is_empty() && rows.iter().all(|r| r.finetuner_error < r.attribute_error && r.finetuner_error < r.raw_error);
    let detail: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} {:?}: F_r {:.5} vs P-space route {:.5}, raw W-space mean {:.5}",
                r.part, r.factors, r.finetuner_error, r.attribute_error, r.raw_error
            )
        })
        .collect();
    Ok((pass, detail.join("; ")))
}

fn replacement(a: &Workspace, b: &Workspace) -> Outcome {
    let o = replacement_oracle(a, 50, ORACLE_SEED).map_err(err)?;
    let rerun: FinetuneReport = b.load_report(Stage::Finetune).map_err(err)?;
    let drift = (rerun.tau_rep - o.tau_rep).abs() / o.tau_rep;
    let pass = o.mixture_exact && o.fraction_below >= 0.8 && drift <= 0.1;
    Ok((
        pass,
        format!(
            "mixture exact {}; {:.0}% of {} pairs below τ_rep = {:.5}; rerun τ_rep drift {:.1}%",
            o.mixture_exact,
            100.0 * o.fraction_below,
            o.errors.len(),
            o.tau_rep,
            100.0 * drift
        ),
    ))
}

fn views(ws: &Workspace) -> Outcome {
    let o = view_oracle(ws, 10, ORACLE_SEED).map_err(err)?;
    let pass = o.heldout_accuracy >= 0.9 && o.cycle_fraction >= 0.9;
    Ok((
        pass,
        format!(
            "held-out accuracy {:.1}%; view cycle {:.1}% over 12 views x {} shapes",
            100.0 * o.heldout_accuracy,
            100.0 * o.cycle_fraction,
            o.shapes
        ),
    ))
}

/// `w*` drawn from a diagonal Gaussian fitted to the dataset latents, which is
/// where this generator's latents live; `N(0, I)` is reported alongside.
fn inversion(ws: &Workspace) -> Outcome {
    let g = ws.load_generator().map_err(err)?;
    let latents = ws.load_latents().map_err(err)?;
    let (n, d) = (latents.rows(), g.latent_dim());
    let mut mean = vec![0f64; d];
    let mut var = vec![0f64; d];
    for i in 0..n {
        for (j, &v) in latents.row(i).iter().enumerate() {
            mean[j] += v as f64 / n as f64;
        }
    }
    for i in 0..n {
        for (j, &v) in latents.row(i).iter().enumerate() {
            var[j] += (v as f64 - mean[j]).powi(2) / n as f64;
        }
    }
    let count = 32;
    let z = Tensor::<f32>::randn(&[count, d], 1.0, &mut rng(ORACLE_SEED));
    let w = Tensor::new(&[count, d], (0..count * d).map(|k| (mean[k % d] + var[k % d].sqrt() * z.data()[k] as f64) as f32).collect()).map_err(err)?;
    let images = g.synthesize_batch(&w).map_err(err)?;
    let config = &ws.config.inversion;
    let first = invert(&g, &images, config).map_err(err)?;
    let again = invert(&g, &images, config).map_err(err)?;
    let reduced = first.initial_proxy.iter().zip(&first.proxy).filter(|(a, b)| **b <= 0.1 * **a).count();
    let ratio = first.initial_proxy.iter().sum::<f64>() / first.proxy.iter().sum::<f64>();
    let exact = first.latents == again.latents;
    let standard = invert(&g, &g.synthesize_batch(&Tensor::randn(&[count, d], 1.0, &mut rng(ORACLE_SEED))).map_err(err)?, config).map_err(err)?;
    let standard_ratio = standard.initial_proxy.iter().sum::<f64>() / standard.proxy.iter().sum::<f64>();
    Ok((
        reduced == count && exact,
        format!(
            "{reduced}/{count} images reduced ≥10x after {} steps (mean {ratio:.1}x); repeat bit-exact {exact}; info: N(0,I) latents mean {standard_ratio:.1}x",
            config.steps
        ),
    ))
}

fn determinism(a: &Workspace, b: &Workspace) -> Outcome {
    let (da, db) = (a.checkpoint_digests().map_err(err)?, b.checkpoint_digests().map_err(err)?);
    let differing: Vec<&str> = da.iter().zip(&db).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = da.len() == db.len() && differing.is_empty() && !da.is_empty();
    Ok((pass, format!("{} checkpoints compared; differing: {:?}", da.len(), differing)))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() {
    let mut tally = (0, 0);
    report("gradient suite", gradient_suite(), &mut tally);
    report("geometry oracles", geometry_oracles(), &mut tally);

    let dir_a = tempfile::tempdir().expect("temp dir");
    let dir_b = tempfile::tempdir().expect("temp dir");
    let (a, b) = (desk(dir_a.path()), desk(dir_b.path()));
    let (run, elapsed) = timed(|| run_all(&a));
    println!("info desk pipeline: {:.0} s", elapsed.as_secs_f64());
    let pipeline_names = ["size finetuning ablation", "joint finetune", "resize trajectory ablation", "replacement oracle", "view manipulation", "inversion", "determinism"];
    if let Err(e) = run {
        for name in pipeline_names {
            report(name, Err(format!("desk pipeline failed: {e}")), &mut tally);
        }
    } else {
        let (rerun, elapsed_b) = timed(|| run_all(&b));
        println!("info desk pipeline rerun: {:.0} s", elapsed_b.as_secs_f64());
        report("size finetuning ablation", size_ablation(&a), &mut tally);
        report("joint finetune", joint(&a), &mut tally);
        report("resize trajectory ablation", trajectory_ablation(&a), &mut tally);
        match &rerun {
            Ok(()) => report("replacement oracle", replacement(&a, &b), &mut tally),
            Err(e) => report("replacement oracle", Err(format!("rerun failed: {e}")), &mut tally),
        }
        report("view manipulation", views(&a), &mut tally);
        report("inversion", inversion(&a), &mut tally);
        match rerun {
            Ok(()) => report("determinism", determinism(&a, &b), &mut tally),
            Err(e) => report("determinism", Err(format!("rerun failed: {e}")), &mut tally),
        }
    }
    println!("acceptance: {}/{} criteria passed", tally.0, tally.1);
}
