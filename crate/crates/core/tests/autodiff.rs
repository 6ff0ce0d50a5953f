use std::rc::Rc;

use partbridge::numcore::gradcheck::check_gradients;
use partbridge::numcore::{Kernel, Mlp, NumError, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sum_of_squares_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let loss = x.square().unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(&x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn constant_loss_has_no_gradients() {
    let tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::scalar(3.0));
    let g = tape.backward(c.scale(2.0).unwrap()).unwrap();
    assert!(g.is_empty());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    assert!(matches!(tape.backward(x), Err(NumError::NonScalarLoss(_))));
}

#[test]
fn primitive_examples() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
    let x = tape.constant(Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    assert_eq!(eye.matmul(x).unwrap().value().data(), x.value().data());
    let neg = tape.constant(Tensor::new(&[1], vec![-1.0]).unwrap());
    assert!((neg.leaky_relu(0.2).unwrap().value().item() + 0.2).abs() < 1e-15);
    let m = tape.constant(Tensor::new(&[4], vec![1., 2., 3., 6.]).unwrap());
    assert_eq!(m.mean().unwrap().value().item(), 3.0);
}

#[test]
fn shape_mismatch_names_op() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = a.matmul(b).err().unwrap();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(err.to_string().contains("[2, 3]"), "{err}");
}

#[test]
fn non_finite_result_is_an_error() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(&[1], vec![-1.0]).unwrap());
    assert!(matches!(x.log(), Err(NumError::NonFinite { op: "log" })));
}

#[test]
fn broadcast_add_backward_sums_over_batch() {
    let mut r = rng(3);
    let a = Tensor::<f64>::randn(&[5, 4], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[4], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[5, 4], 1.0, &mut r);
    let tape = Tape::new();
    let (av, bv, wv) = (tape.param(a), tape.param(b), tape.constant(w.clone()));
    let loss = av.add(bv).unwrap().mul(wv).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    // d/db sum_ij w_ij (a_ij + b_j) = sum_i w_ij
    for j in 0..4 {
        let expected: f64 = (0..5).map(|i| w.data()[i * 4 + j]).sum();
        assert!((g.get(&bv).unwrap().data()[j] - expected).abs() < 1e-12);
    }
}

#[test]
fn elementwise_ops_pass_gradient_check_on_many_seeds() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
        let b = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
        let bias = Tensor::<f64>::randn(&[4], 1.0, &mut r);
        let pos = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r).map(|x| x.abs() + 0.5);
        let check = check_gradients(&[a, b, bias, pos], STEP, |_, v| {
            let t1 = v[0].add(v[2])?.leaky_relu(0.2)?.mul(v[1])?;
            let t2 = v[0].tanh()?.sub(v[1].exp()?.scale(0.3)?)?;
            let t3 = v[3].log()?.square()?.add_scalar(0.7)?;
            t1.add(t2)?.add(t3)?.mean()
        })
        .unwrap();
        assert!(check.max_rel_error < TOL, "seed {seed}: {check:?}");
    }
}

#[test]
fn structural_ops_pass_gradient_check_on_many_seeds() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let a = Tensor::<f64>::randn(&[2, 3], 1.0, &mut r);
        let b = Tensor::<f64>::randn(&[2, 5], 1.0, &mut r);
        let w = Tensor::<f64>::randn(&[8, 4], 1.0, &mut r);
        let targets = [seed as usize % 4, (seed as usize + 1) % 4];
        let check = check_gradients(&[a, b, w], STEP, |tape, v| {
            let cat = tape.concat(&[v[0], v[1]])?;
            let logits = cat.matmul(v[2])?;
            let ce = logits.softmax_cross_entropy(&targets)?;
            let norms = cat.slice_cols(1, 5)?.row_norm()?.sum()?;
            let rows = logits.reshape(&[2, 2, 2])?.row_mean()?.square()?.sum()?;
            ce.add(norms)?.add(rows)
        })
        .unwrap();
        assert!(check.max_rel_error < TOL, "seed {seed}: {check:?}");
    }
}

#[test]
fn image_ops_pass_gradient_check_on_many_seeds() {
    let kernel = Rc::new(Kernel::<f64>::binomial(5).unwrap());
    let k3 = Rc::new(Kernel::<f64>::new(3, vec![0.1, 0.3, -0.2, 0.5, 1.0, 0.25, -0.4, 0.2, 0.05]).unwrap());
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let img = Tensor::<f64>::randn(&[2, 6, 8], 1.0, &mut r);
        let weights = Tensor::<f64>::randn(&[2, 6, 8], 1.0, &mut r);
        let check = check_gradients(&[img], STEP, |tape, v| {
            let wts = tape.constant(weights.clone());
            let blurred = v[0].conv2d(&kernel)?.conv2d(&k3)?.mul(wts)?;
            let pooled = v[0].avg_pool2()?.upsample2()?.square()?;
            blurred.add(pooled)?.avg_pool2()?.sum()
        })
        .unwrap();
        assert!(check.max_rel_error < TOL, "seed {seed}: {check:?}");
    }
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let mlp = Mlp::<f64>::new(&[4, 6, 5, 3], &mut r);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
        let y = Tensor::<f64>::randn(&[3, 3], 1.0, &mut r);
        let params: Vec<Tensor<f64>> = mlp.layers().iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect();
        let check = check_gradients(&params, STEP, |tape, v| {
            let mut h = tape.constant(x.clone());
            for (i, pair) in v.chunks(2).enumerate() {
                h = h.matmul(pair[0])?.add(pair[1])?;
                if i < 2 {
                    h = h.leaky_relu(0.2)?;
                }
            }
            h.sub(tape.constant(y.clone()))?.square()?.mean()
        })
        .unwrap();
        assert!(check.max_rel_error < TOL, "seed {seed}: {check:?}");
    }
}

#[test]
fn identical_tapes_give_identical_gradients() {
    let run = || {
        let mut r = rng(9);
        let mlp = Mlp::<f32>::new(&[8, 16, 16, 2], &mut r);
        let x = Tensor::<f32>::randn(&[10, 8], 1.0, &mut r);
        let tape = Tape::new();
        let net = mlp.bind(&tape, true);
        let out = net.forward(tape.constant(x)).unwrap().square().unwrap().mean().unwrap();
        let g = tape.backward(out).unwrap();
        net.params().iter().flat_map(|p| g.get(p).unwrap().data().to_vec()).map(f32::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
