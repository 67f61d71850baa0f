use densecap_nn::gradcheck::check_inputs;
use densecap_nn::{Graph, NnError, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sum_and_dot_gradients() {
    let g = Graph::detached();
    let x = g.input_grad(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let g = Graph::detached();
    let x = g.input_grad(Tensor::vector(vec![2.0, -1.0]));
    let d = g.dot(x, x);
    assert_eq!(g.backward(d).unwrap().wrt(x).unwrap().data(), &[4.0, -2.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::detached();
    let x = g.input_grad(Tensor::vector(vec![1.0, 2.0]));
    let y = g.tanh(x);
    assert!(matches!(g.backward(y), Err(NnError::NonScalarLoss(_))));
}

#[test]
fn softmax_fixed_values() {
    let g = Graph::detached();
    let x = g.constant_vec(vec![0.0, 0.0, 0.0]);
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // 40-digit reference values
    let x = g.constant_vec(vec![1.0, 2.0, 3.0]);
    let y = g.softmax(x, 0).unwrap();
    let expect = [
        0.090_030_573_170_380_457_998_022_1,
        0.244_728_471_054_797_652_472_959_6,
        0.665_240_955_774_821_889_529_018_3,
    ];
    for (a, b) in g.value(y).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    assert!(matches!(g.softmax(x, 1), Err(NnError::Axis { axis: 1, rank: 1 })));
}

#[test]
fn sigmoid_at_zero_and_saturation() {
    let g = Graph::detached();
    let y = g.sigmoid(g.constant_vec(vec![0.0, 800.0, -800.0]));
    let v = g.value(y);
    assert_eq!(v.data()[0], 0.5);
    assert!(v.all_finite());
}

#[test]
fn embed_rejects_out_of_vocabulary_ids() {
    let g = Graph::detached();
    let table = g.input(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let e = g.embed(table, &[2, 0]).unwrap();
    assert_eq!(g.value(e).data(), &[5., 6., 1., 2.]);
    assert!(matches!(g.embed(table, &[3]), Err(NnError::OutOfVocabulary { id: 3, size: 3 })));
    assert!(g.embed_one(table, 7).is_err());
}

#[test]
fn bce_and_cross_entropy_stay_finite_when_saturated() {
    let g = Graph::detached();
    let l = g.input_grad(Tensor::vector(vec![1000.0, -1000.0]));
    let loss = g.bce_with_logits(l, &[0.0, 1.0], &[1.0, 1.0]);
    assert!((g.item(loss) - 2000.0).abs() < 1e-9);
    let ce = g.cross_entropy(l, 1).unwrap();
    assert!((g.item(ce) - 2000.0).abs() < 1e-9);
    let total = g.add(loss, ce);
    let grads = g.backward(total).unwrap();
    assert!(grads.wrt(l).unwrap().all_finite());
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Every primitive, composed into one scalar, checked against central differences.
#[test]
fn all_primitives_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let inputs = vec![
            rand_tensor(&mut rng, &[m, n]),
            rand_tensor(&mut rng, &[n]),
            rand_tensor(&mut rng, &[m]),
            rand_tensor(&mut rng, &[3, n]),
            Tensor::new(vec![n], (0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap(),
        ];
        let target = rng.random_range(0..m);
        let id = rng.random_range(0..3);
        let report = check_inputs(&inputs, 1e-5, |g, v| {
            let (w, x, b, table, pos) = (v[0], v[1], v[2], v[3], v[4]);
            let y = g.tanh(g.linear(w, b, x));
            let s = g.sigmoid(g.mul(y, b));
            let sm = g.softmax(s, 0)?;
            let ls = g.log_softmax(g.sub(y, g.one_minus(s)));
            let wt = g.matvec_t(w, sm);
            let rows = g.matmul_nt(w, table);
            let rows = g.add_row_vec(g.tanh(rows), g.constant_vec(vec![0.1, -0.2, 0.3]));
            let stacked = g.stack(&[x, wt]);
            let sm2 = g.softmax(stacked, 0)?;
            let emb = g.embed_one(table, id)?;
            let emb2 = g.embed(table, &[id, (id + 1) % 3])?;
            let cat = g.concat(&[ls, g.slice(x, 0, 1), emb]);
            let terms = [
                g.sum(cat),
                g.dot(emb, g.ln(pos)),
                g.scale(g.sum(g.exp(g.scale(rows, 0.3))), 0.5),
                g.index(wt, 0),
                g.sum(g.mul(sm2, g.stack(&[x, x]))),
                g.sum(g.softmax(emb2, 1)?),
                g.bce_with_logits(y, &vec![0.3; m], &vec![1.5; m]),
                g.cross_entropy(g.scale(s, 2.0), target)?,
                g.sum(g.add_const(s, &vec![0.5; m])),
            ];
            Ok(g.add_n(&terms))
        })
        .unwrap();
        assert!(report.passed(1e-4), "seed {seed}: {report:?}");
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let g = Graph::detached();
        let y = g.softmax(g.constant_vec(xs), 0).unwrap();
        let v = g.value(y);
        prop_assert!(v.all_finite());
        prop_assert!((v.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_in_open_unit_interval(xs in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
        let g = Graph::detached();
        let y = g.sigmoid(g.constant_vec(xs));
        prop_assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
