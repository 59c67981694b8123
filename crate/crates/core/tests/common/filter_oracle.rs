//! Independent evaluation of a biquad cascade on the unit circle with real
//! arithmetic, plus a measured steady-state gain of the filter itself.

use neurovis::signal::FilterSpec;

/// `sum_k c_k e^{-i w k}` as (re, im).
fn eval(c: &[f64], w: f64) -> (f64, f64) {
    c.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, v)| {
        let a = w * k as f64;
        (re + v * a.cos(), im - v * a.sin())
    })
}

pub fn gain(spec: &FilterSpec, freq: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / spec.sample_rate;
    spec.sections
        .iter()
        .map(|s| {
            let (nr, ni) = eval(&s.b, w);
            let (dr, di) = eval(&s.a, w);
            ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
        })
        .product()
}

pub fn gain_db(spec: &FilterSpec, freq: f64) -> f64 {
    20.0 * gain(spec, freq).log10()
}

/// Steady-state amplitude of the filtered unit sinusoid, measured after the
/// transient has died out.
pub fn measured_gain(spec: &FilterSpec, freq: f64, seconds: f64) -> f64 {
    let n = (seconds * spec.sample_rate) as usize;
    let x: Vec<f64> =
        (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / spec.sample_rate).sin()).collect();
    let y = spec.filter(&x);
    let tail = &y[n / 2..];
    (2.0 * tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt()
}
