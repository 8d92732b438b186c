use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vattr_nn::{Adam, Dense, Graph, ParamStore, Tensor};

/// Two Gaussian blobs separated along a random direction.
fn toy_problem(seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim) = (64, 5);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        for d in 0..dim {
            let centre = if d == 0 { 2.0 * sign } else { 0.0 };
            data.push(centre + rng.random_range(-0.5..0.5));
        }
        labels.push(label);
    }
    (Tensor::new(&[n, dim], data).unwrap(), labels)
}

fn train(seed: u64) -> (Vec<f64>, Vec<u32>) {
    let (x, y) = toy_problem(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let hidden = Dense::new(&mut store, "hidden", 5, 8, &mut rng);
    let out = Dense::new(&mut store, "out", 8, 2, &mut rng);
    let mut adam = Adam::new(1e-2);
    let mut losses = Vec::new();
    for _ in 0..200 {
        store.zero_grads();
        let mut g = Graph::new(true);
        let xv = g.input(x.clone());
        let h = hidden.forward(&mut g, &store, xv).unwrap();
        let h = g.relu(h);
        let h = g.dropout(h, 0.1, &mut rng).unwrap();
        let logits = out.forward(&mut g, &store, h).unwrap();
        let loss = g.cross_entropy(logits, &y).unwrap();
        losses.push(g.value(loss).data()[0] as f64);
        g.backward(loss).unwrap();
        g.accumulate_param_grads(&mut store);
        adam.step(&mut store);
    }
    let bits = store.ids().flat_map(|id| store.value(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect();
    (losses, bits)
}

#[test]
fn adam_reduces_loss_on_separable_problem() {
    let (losses, _) = train(5);
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last <= 0.1 * first, "loss went from {first} to {last}");
}

#[test]
fn same_seed_gives_identical_trajectory() {
    let (la, pa) = train(11);
    let (lb, pb) = train(11);
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
}
