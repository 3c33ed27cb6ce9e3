//! Taped gradients against central finite differences on random networks.

mod common;

use common::{max_relative_error, Net, TOL};
use edgesplit_core::autodiff::Tape;
use edgesplit_core::model::Mode;

#[test]
fn random_networks_match_finite_differences() {
    for seed in 0..8 {
        let (worst, checked) = max_relative_error(seed);
        assert!(checked > 10);
        println!("seed {seed}: {checked} entries, max relative error {worst:.2e}");
        assert!(worst <= TOL, "seed {seed}: max relative error {worst:e} over {checked} entries");
    }
}

#[test]
fn gradient_of_combined_loss_is_linear() {
    let mut net = Net::new(42);
    let grads = |net: &mut Net, a: f64, b: f64| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(net.input.clone());
        let logits = net.seq.forward(&mut tape, &mut net.store, x, Mode::Train).unwrap();
        let l1 = tape.softmax_cross_entropy(logits, &net.labels).unwrap();
        let sq = tape.mul(logits, logits).unwrap();
        let l2 = tape.sum(sq).unwrap();
        let (s1, s2) = (tape.scale(l1, a).unwrap(), tape.scale(l2, b).unwrap());
        let total = tape.add(s1, s2).unwrap();
        net.store.zero_grad();
        tape.backward(total, &mut net.store).unwrap();
        net.store.params().iter().flat_map(|p| p.grad.data().to_vec()).collect()
    };
    let g1 = grads(&mut net, 1.0, 0.0);
    let g2 = grads(&mut net, 0.0, 1.0);
    let g = grads(&mut net, 2.5, -0.75);
    for ((x, y), z) in g1.iter().zip(&g2).zip(&g) {
        let expect = 2.5 * x - 0.75 * y;
        assert!((z - expect).abs() <= 1e-10 * (1.0 + expect.abs()), "{z} vs {expect}");
    }
}
