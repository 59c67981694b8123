//! Central finite-difference checks of every tape operation.

use neurovis::diff::{BnArgs, BnMode, ConvGeom, Tape, Var};
use neurovis::error::Result;
use neurovis::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// One randomized instance: differentiable leaves plus the graph built on them.
pub struct Case {
    pub leaves: Vec<Tensor>,
    pub build: Box<Build>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are not straddled by `H`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalarizes `y` as `sum(y * r)` with a fixed random `r`, so every output
/// element carries a distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_tensor(&mut rng, tape.shape(y));
    let r = tape.input(r)?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn eval(case: &Case, leaves: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().enumerate().map(|(i, t)| tape.param(format!("p{i}"), t.clone()).unwrap()).collect();
    let loss = (case.build)(&mut tape, &vars).unwrap();
    tape.value(loss).data()[0]
}

/// Largest norm-wise relative error `|g - g_fd| / max(|g| + |g_fd|, 1e-12)`
/// over the leaves of `case`.
pub fn max_relative_error(case: &Case) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        case.leaves.iter().enumerate().map(|(i, t)| tape.param(format!("p{i}"), t.clone()).unwrap()).collect();
    let loss = (case.build)(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, leaf) in case.leaves.iter().enumerate() {
        let analytic = grads.get(&format!("p{i}")).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; leaf.len()]);
        let mut numeric = vec![0.0; leaf.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = case.leaves.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = case.leaves.clone();
            minus[i].data_mut()[j] -= H;
            *slot = (eval(case, &plus) - eval(case, &minus)) / (2.0 * H);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let a: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / (a + n).max(1e-12));
    }
    worst
}

fn binary(seed: u64, f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.gen_range(1..4), rng.gen_range(1..5)];
    Case {
        leaves: vec![rand_tensor(&mut rng, &shape), rand_tensor(&mut rng, &shape)],
        build: Box::new(move |t, v| {
            let y = f(t, v[0], v[1])?;
            project(t, y, seed)
        }),
    }
}

fn unary(seed: u64, leaf: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> Case {
    Case {
        leaves: vec![leaf],
        build: Box::new(move |t, v| {
            let y = f(t, v[0])?;
            if t.value(y).len() == 1 {
                Ok(y)
            } else {
                project(t, y, seed)
            }
        }),
    }
}

fn conv2d_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
    let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let geom = ConvGeom::new(
        (rng.gen_range(1..3), rng.gen_range(1..3)),
        (rng.gen_range(0..2), rng.gen_range(0..2)),
        (rng.gen_range(1..3), rng.gen_range(1..3)),
    );
    let h = geom.dilation.0 * (kh - 1) + 1 + rng.gen_range(0..4);
    let w = geom.dilation.1 * (kw - 1) + 1 + rng.gen_range(0..4);
    Case {
        leaves: vec![
            rand_tensor(&mut rng, &[b, cin, h, w]),
            rand_tensor(&mut rng, &[cout, cin, kh, kw]),
            rand_tensor(&mut rng, &[cout]),
        ],
        build: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), geom)?;
            project(t, y, seed)
        }),
    }
}

fn conv1d_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, cin, cout, k) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4));
    let (stride, dilation, padding) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(0..3));
    let len = dilation * (k - 1) + 1 + rng.gen_range(0..5);
    Case {
        leaves: vec![rand_tensor(&mut rng, &[b, cin, len]), rand_tensor(&mut rng, &[cout, cin, k])],
        build: Box::new(move |t, v| {
            let y = t.conv1d(v[0], v[1], None, stride, dilation, padding)?;
            project(t, y, seed)
        }),
    }
}

fn linear_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, m) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
    Case {
        leaves: vec![rand_tensor(&mut rng, &[b, n]), rand_tensor(&mut rng, &[m, n]), rand_tensor(&mut rng, &[m])],
        build: Box::new(move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, seed)
        }),
    }
}

fn batch_norm_case(seed: u64, mode: BnMode) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, f, l) = (rng.gen_range(2..4), rng.gen_range(1..3), rng.gen_range(1..4));
    let mean: Vec<f64> = (0..f).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..f).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut x = rand_tensor(&mut rng, &[b, f, l]);
    // Spread the batch so the variance is not tiny.
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += i as f64 * 0.3;
    }
    Case {
        leaves: vec![x, rand_tensor(&mut rng, &[f]), rand_tensor(&mut rng, &[f])],
        build: Box::new(move |t, v| {
            let running = (mode == BnMode::Eval).then_some((mean.as_slice(), var.as_slice()));
            let (y, _) = t.batch_norm(v[0], v[1], v[2], BnArgs { eps: 1e-5, mode, running })?;
            project(t, y, seed)
        }),
    }
}

fn concat_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = rng.gen_range(0..3);
    let mut s1 = vec![rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3)];
    let mut s2 = s1.clone();
    s1[axis] = rng.gen_range(1..3);
    s2[axis] = rng.gen_range(1..3);
    Case {
        leaves: vec![rand_tensor(&mut rng, &s1), rand_tensor(&mut rng, &s2)],
        build: Box::new(move |t, v| {
            let y = t.concat(&[v[0], v[1]], axis)?;
            project(t, y, seed)
        }),
    }
}

fn cross_entropy_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k) = (rng.gen_range(1..4), rng.gen_range(2..5));
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
    let mut logits = rand_tensor(&mut rng, &[b, k]);
    for v in logits.data_mut() {
        *v *= 3.0;
    }
    unary(seed, logits, move |t, x| t.softmax_cross_entropy(x, &labels))
}

/// Every checked operation with an instance generator.
pub fn operations() -> Vec<(&'static str, fn(u64) -> Case)> {
    vec![
        ("add", |s| binary(s, |t, a, b| t.add(a, b))),
        ("sub", |s| binary(s, |t, a, b| t.sub(a, b))),
        ("mul", |s| binary(s, |t, a, b| t.mul(a, b))),
        ("row_dot", |s| binary(s, |t, a, b| t.row_dot(a, b))),
        ("scale", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let k = rng.gen_range(-3.0..3.0);
            unary(s, rand_tensor(&mut rng, &[2, 3]), move |t, x| t.scale(x, k))
        }),
        ("sum", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
            unary(s, rand_tensor(&mut rng, &shape), |t, x| t.sum(x))
        }),
        ("mean", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
            unary(s, rand_tensor(&mut rng, &shape), |t, x| t.mean(x))
        }),
        ("relu", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            unary(s, away_from_zero(&mut rng, &[3, 4]), |t, x| t.relu(x))
        }),
        ("reshape", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            unary(s, rand_tensor(&mut rng, &[2, 6]), |t, x| t.reshape(x, &[3, 2, 2]))
        }),
        ("concat", concat_case),
        ("linear", linear_case),
        ("conv2d", conv2d_case),
        ("conv1d", conv1d_case),
        ("batch_norm_train", |s| batch_norm_case(s, BnMode::Train)),
        ("batch_norm_eval", |s| batch_norm_case(s, BnMode::Eval)),
        ("global_avg_pool", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)];
            unary(s, rand_tensor(&mut rng, &shape), |t, x| t.global_avg_pool(x))
        }),
        ("softmax_cross_entropy", cross_entropy_case),
        ("zero_feature", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let f = rng.gen_range(0..3);
            unary(s, rand_tensor(&mut rng, &[2, 3, 2]), move |t, x| t.zero_feature(x, f))
        }),
    ]
}
