use proptest::prelude::*;

use latent_replay::autodiff::{finite_diff_check, optimizer_step, Graph, Optimizer, ParamStore, Tensor, Var};
use latent_replay::seed;
use latent_replay::Result;

fn two_layer(s: u64) -> ParamStore {
    let mut rng = seed::rng(s);
    let mut store = ParamStore::new();
    store.insert_weight("l0/w", 3, 4, &mut rng).unwrap();
    store.insert("l0/b", Tensor::vector(vec![0.1, -0.2, 0.05, 0.3])).unwrap();
    store.insert_weight("l1/w", 4, 2, &mut rng).unwrap();
    store.insert("l1/b", Tensor::vector(vec![-0.1, 0.2])).unwrap();
    store
}

fn inputs() -> Tensor {
    Tensor::matrix(5, 3, (0..15).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap()
}

/// Mean squared output of a tanh MLP.
fn loss(g: &mut Graph, store: &ParamStore) -> Result<Var> {
    let x = g.constant(inputs());
    let w0 = g.param(store, "l0/w")?;
    let b0 = g.param(store, "l0/b")?;
    let w1 = g.param(store, "l1/w")?;
    let b1 = g.param(store, "l1/b")?;
    let h = g.matmul(x, w0)?;
    let h = g.add(h, b0)?;
    let h = g.tanh(h)?;
    let y = g.matmul(h, w1)?;
    let y = g.add(y, b1)?;
    let sq = g.mul(y, y)?;
    g.mean(sq)
}

#[test]
fn two_layer_gradient_matches_finite_differences() {
    for s in 0..5 {
        let err = finite_diff_check(&two_layer(s), 1e-6, loss).unwrap();
        assert!(err <= 1e-6, "seed {s}: {err}");
    }
}

fn train(store: &mut ParamStore, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|_| {
            let mut g = Graph::new();
            let l = loss(&mut g, store).unwrap();
            let value = g.value(l).item();
            store.zero_grad();
            g.backward(l).unwrap();
            g.accumulate_into(store).unwrap();
            optimizer_step(store, 0.05, &Optimizer::default()).unwrap();
            value
        })
        .collect()
}

#[test]
fn identical_stores_stay_bitwise_identical() {
    let mut a = two_layer(3);
    let mut b = two_layer(3);
    let la = train(&mut a, 50);
    let lb = train(&mut b, 50);
    assert_eq!(la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.tensors(), b.tensors());
    assert!(la.last().unwrap() < &la[0]);
}

fn softmax_rows(rows: usize, cols: usize, data: Vec<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(rows, cols, data).unwrap());
    let s = g.softmax(x).unwrap();
    g.value(s).data().to_vec()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        cols in 1usize..8,
        rows in 1usize..4,
        seed_v in any::<u64>(),
        scale in 0.1f64..200.0,
        shift in -50.0f64..50.0,
    ) {
        let mut rng = seed::rng(seed_v);
        let data: Vec<f64> = (0..rows * cols).map(|_| scale * (rand::Rng::random::<f64>(&mut rng) - 0.5)).collect();
        let p = softmax_rows(rows, cols, data.clone());
        for r in p.chunks(cols) {
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = softmax_rows(rows, cols, data.iter().map(|v| v + shift).collect());
        for (a, b) in p.iter().zip(&shifted) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
