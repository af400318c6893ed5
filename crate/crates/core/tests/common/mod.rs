//! Function corpus and difference oracles shared by the autodiff suites.

#![allow(dead_code)]

use stackgrad::autodiff::{Tracer, Var};
use stackgrad::ScalarFunction;

pub const X: &str = "x";
pub const Y: &str = "y";
pub const DX: usize = 3;
pub const DY: usize = 2;

pub type Body = for<'t> fn(&'t Tracer, &[&[Var<'t>]]) -> Var<'t>;

pub fn sum_of_squares<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    t.sum(b[0].iter().chain(b[1]).map(|v| v.square()))
}

pub fn rosenbrock<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    let x = b[0];
    let chain = t.sum((0..x.len() - 1).map(|i| (x[i + 1] - x[i].square()).square() * 100.0 + (1.0 - x[i]).square()));
    chain + b[1][0] * b[1][1]
}

pub fn exp_coupling<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (t.sum(b[0].iter().copied()) * 0.3).exp() * (b[1][0].square() + 1.0)
}

pub fn log_mix<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (b[0][0].square() + b[1][1].square() + 1.0).ln() + b[0][1] * b[1][0]
}

pub fn rational<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (b[0][0] * b[1][0] + b[0][1] * b[1][1]) / (b[0][2].square() + 1.0)
}

pub fn power<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (b[0][0].square() + b[0][1].square() + 1.0).powf(1.5) - b[1][0] * b[0][2]
}

pub fn squared_dot<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    t.dot(&b[0][..2], b[1]).square()
}

pub fn affine_scaled<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    t.affine(&[0.5, -1.25, 2.0], b[0], 0.5).square() * b[1][1]
}

pub fn negated_gap<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    -(b[0][0] - b[1][0]).square() + b[0][2] * 3.0 - b[1][1] / 4.0
}

pub fn log_sum_exp<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (b[0][0].exp() + b[0][1].exp() + b[1][0].exp()).ln()
}

pub fn product_chain<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    b[0][0] * b[0][1] * b[0][2] * b[1][0] * b[1][1]
}

pub fn soft_norm<'t>(t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    (t.dot(b[0], b[0]) + 1.0).powf(0.5) * b[1][0]
}

pub fn reciprocals<'t>(_t: &'t Tracer, b: &[&[Var<'t>]]) -> Var<'t> {
    1.0 / (b[0][0].square() + 2.0) + b[1][1] / (b[1][0].square() + 1.0) - 2.0 * b[0][1]
}

pub const CORPUS: [(&str, Body); 13] = [
    ("sum_of_squares", sum_of_squares),
    ("rosenbrock", rosenbrock),
    ("exp_coupling", exp_coupling),
    ("log_mix", log_mix),
    ("rational", rational),
    ("power", power),
    ("squared_dot", squared_dot),
    ("affine_scaled", affine_scaled),
    ("negated_gap", negated_gap),
    ("log_sum_exp", log_sum_exp),
    ("product_chain", product_chain),
    ("soft_norm", soft_norm),
    ("reciprocals", reciprocals),
];

pub fn corpus() -> Vec<(&'static str, ScalarFunction)> {
    CORPUS
        .iter()
        .map(|&(name, body)| (name, ScalarFunction::record(&[(X, DX), (Y, DY)], body).unwrap()))
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / (1.0 + norm(b))
}

pub fn flat_gradient_fd(f: &ScalarFunction, point: &[f64]) -> Vec<f64> {
    let h0 = f64::EPSILON.sqrt();
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            let h = h0 * (1.0 + point[i].abs());
            probe[i] = point[i] + h;
            let up = f.at_flat(probe.clone()).unwrap().value();
            probe[i] = point[i] - h;
            let down = f.at_flat(probe.clone()).unwrap().value();
            probe[i] = point[i];
            (up - down) / ((point[i] + h) - (point[i] - h))
        })
        .collect()
}
