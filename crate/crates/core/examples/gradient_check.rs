//! Central-difference check of a convolution + batch norm + leaky ReLU chain
//! on the autodiff tape, in f64.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcaseg::graph::{Tape, Var};
use vcaseg::tensor::{ConvSpec, Shape, Tensor};

fn randn(shape: Shape, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.numel();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn build(t: &mut Tape<f64>, v: &[Var]) -> Var {
    let spec = ConvSpec::new(2, 3, 3).padding(1);
    let y = t.conv2d(v[0], v[1], None, spec).unwrap();
    let (y, _) = t.batch_norm_train(y, v[2], v[3], 1e-5).unwrap();
    t.leaky_relu(y, 0.01)
}

fn weighted_sum(inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vars);
    t.value(out)
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(a, b)| a * b)
        .sum()
}

fn main() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        randn(Shape::new(2, 2, 6, 5), &mut r),
        randn(Shape::new(3, 2, 3, 3), &mut r),
        Tensor::full(Shape::new(3, 1, 1, 1), 1.0),
        Tensor::zeros(Shape::new(3, 1, 1, 1)),
    ];
    let names = ["input", "weight", "gamma", "beta"];

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let upstream = randn(tape.value(out).shape(), &mut r);
    let grads = tape.backward(out, upstream.clone()).unwrap();

    let h = 1e-5;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).unwrap();
        let mut worst = 0.0f64;
        for i in 0..x.len().min(12) {
            let (mut plus, mut minus) = (inputs.clone(), inputs.clone());
            plus[k].data_mut()[i] += h;
            minus[k].data_mut()[i] -= h;
            let numeric = (weighted_sum(&plus, &upstream) - weighted_sum(&minus, &upstream)) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5));
        }
        println!("{:<7} max relative error {worst:.2e}", names[k]);
    }
}
