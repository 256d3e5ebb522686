use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uam_core::nn::{Mlp, OutputActivation};

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// `sum(g * net(x))`, the scalar whose gradient `backward(cache, g)` returns.
fn objective(net: &Mlp, x: &Array2<f64>, g: &Array2<f64>) -> f64 {
    (net.predict(x.view()).unwrap() * g).sum()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Worst relative error over every parameter and input coordinate.
fn worst_error(net: &Mlp, x: &Array2<f64>, g: &Array2<f64>) -> f64 {
    let cache = net.forward(x.view()).unwrap();
    let grads = net.backward(&cache, g.view()).unwrap();
    let analytic: Vec<f64> = grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
        .collect();

    let params = net.parameters();
    assert_eq!(params.len(), analytic.len());
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + H;
        probe.set_parameters(&p).unwrap();
        let up = objective(&probe, x, g);
        p[i] = params[i] - H;
        probe.set_parameters(&p).unwrap();
        let down = objective(&probe, x, g);
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * H)));
    }
    for ((r, c), &a) in grads.input.indexed_iter() {
        let mut xp = x.clone();
        xp[[r, c]] += H;
        let up = objective(net, &xp, g);
        xp[[r, c]] -= 2.0 * H;
        let down = objective(net, &xp, g);
        worst = worst.max(relative_error(a, (up - down) / (2.0 * H)));
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let depth = rng.random_range(0..=2);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=16));
        }
        sizes.push(rng.random_range(1..=2));
        let output = if k % 2 == 0 {
            OutputActivation::Linear
        } else {
            OutputActivation::TanhScaled(rng.random_range(0.5..3.0))
        };
        let mut net = Mlp::init_random(&sizes, output, &mut rng).unwrap();
        // non-zero biases so every bias gradient path is exercised
        for b in net.biases_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        let batch = rng.random_range(1..=4);
        let x = Array2::from_shape_simple_fn((batch, sizes[0]), || rng.random_range(-1.0..1.0));
        let g = Array2::from_shape_simple_fn((batch, *sizes.last().unwrap()), || {
            rng.random_range(-1.0..1.0)
        });
        let e = worst_error(&net, &x, &g);
        assert!(e < 1e-4, "net {k} {sizes:?}: relative error {e:e}");
        worst = worst.max(e);
    }
    // the largest admissible shape must be covered too
    let net = Mlp::init_random(&[6, 16, 16, 2], OutputActivation::TanhScaled(2.943), &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-1.0..1.0));
    let g = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0));
    worst = worst.max(worst_error(&net, &x, &g));
    assert!(worst < 1e-4, "relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
