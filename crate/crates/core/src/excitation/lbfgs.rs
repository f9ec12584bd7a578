//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;

pub trait Objective {
    fn value(&mut self, x: &DVector<f64>) -> f64;
    fn value_grad(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when `‖g‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop after `stall_iters` iterations in a row each improving `f` by
    /// less than `f_tol·max(1, |f|)`.
    pub f_tol: f64,
    pub stall_iters: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iter: 1000, memory: 10, grad_tol: 1e-7, f_tol: 1e-10, stall_iters: 5, armijo: 1e-4, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Stalled,
    LineSearch,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn direction(g: &DVector<f64>, mem: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut d = -g;
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * s.dot(&d);
        d.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        d *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&d);
        d.axpy(a - b, s, 1.0);
    }
    d
}

pub fn minimize<O: Objective>(obj: &mut O, x0: DVector<f64>, opts: &LbfgsOptions) -> LbfgsResult {
    let mut x = x0;
    let (mut f, mut g) = obj.value_grad(&x);
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut stalled = 0;
    let mut iterations = 0;
    if !f.is_finite() {
        return LbfgsResult { x, f, iterations, termination: Termination::LineSearch };
    }
    let termination = loop {
        if g.amax() <= opts.grad_tol {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }
        let mut d = direction(&g, &mem);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            mem.clear();
            d = -&g;
            slope = -g.norm_squared();
        }
        let mut t = if mem.is_empty() { (1.0 / g.norm()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &d * t;
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + opts.armijo * t * slope {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(x_new) = accepted else {
            if mem.is_empty() {
                break Termination::LineSearch;
            }
            mem.clear();
            continue;
        };
        iterations += 1;
        let (f_new, g_new) = obj.value_grad(&x_new);
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, yv, 1.0 / sy));
        }
        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if improvement < opts.f_tol * f.abs().max(1.0) {
            stalled += 1;
            if stalled >= opts.stall_iters {
                break Termination::Stalled;
            }
        } else {
            stalled = 0;
        }
    };
    LbfgsResult { x, f, iterations, termination }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock(usize);

    impl Objective for Rosenbrock {
        fn value(&mut self, x: &DVector<f64>) -> f64 {
            self.value_grad(x).0
        }
        fn value_grad(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            self.0 += 1;
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (f, g)
        }
    }

    #[test]
    fn rosenbrock_converges() {
        let mut obj = Rosenbrock(0);
        let r = minimize(&mut obj, DVector::from_vec(vec![-1.2, 1.0]), &LbfgsOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r);
    }

    struct Quadratic;

    impl Objective for Quadratic {
        fn value(&mut self, x: &DVector<f64>) -> f64 {
            x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum()
        }
        fn value_grad(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            let g = DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v));
            (self.value(x), g)
        }
    }

    #[test]
    fn iteration_cap_respected() {
        let opts = LbfgsOptions { max_iter: 3, ..Default::default() };
        let r = minimize(&mut Quadratic, DVector::from_element(20, 1.0), &opts);
        assert!(r.iterations <= 3);
        assert_eq!(r.termination, Termination::MaxIter);
    }
}
