#![allow(dead_code)]

use lserc_core::ld::SmoothFn;
use lserc_core::model::{Expr, ExprFunction};
use num_complex::Complex64;
use rand::Rng;

/// Two-argument L-smooth functions built from every elemental kind.
pub const CORPUS: [&str; 13] = [
    "(abs (- (* x0 x0) (* x1 x1)))",
    "(max x0 x1)",
    "(min (* x0 x1) (sin x0))",
    "(mid x0 (neg x1) (cos x0))",
    "(max (abs x0) (abs x1))",
    "(+ (abs (- x0 1)) (* x1 (max 0 x0)))",
    "(exp (min x0 (neg x1)))",
    "(sqrt (+ 1 (abs (* x0 x1))))",
    "(max 0 (- 1 (exp (neg (- x0 x1)))))",
    "(- (max x0 (pow x1 3)) (min x0 (pow x1 5)))",
    "(* (abs x0) (abs x1))",
    "(mid (sin x0) (cos x1) (* x0 x1))",
    "(/ (abs x0) (+ 2 (cos x1)))",
];

pub fn corpus() -> Vec<ExprFunction> {
    CORPUS
        .iter()
        .map(|s| ExprFunction::parse(&[s], 2).expect("corpus parses"))
        .collect()
}

/// Points that sit on kinks of several corpus members.
pub const KINK_POINTS: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 1.0], [1.0, -1.0], [0.0, 1.0], [1.0, 0.0]];

/// A random smooth expression over `x0, x1` that is defined everywhere.
pub fn random_smooth(rng: &mut impl Rng, depth: usize) -> String {
    if depth == 0 || rng.gen_bool(0.2) {
        return match rng.gen_range(0..3) {
            0 => "x0".into(),
            1 => "x1".into(),
            _ => format!("{:.3}", rng.gen_range(-2.0..2.0)),
        };
    }
    let a = random_smooth(rng, depth - 1);
    match rng.gen_range(0..8) {
        0 => format!("(+ {a} {})", random_smooth(rng, depth - 1)),
        1 => format!("(- {a} {})", random_smooth(rng, depth - 1)),
        2 => format!("(* {a} {})", random_smooth(rng, depth - 1)),
        3 => format!("(sin {a})"),
        4 => format!("(cos {a})"),
        5 => format!("(exp (sin {a}))"),
        6 => format!("(sqrt (+ 2 (* {a} {a})))"),
        _ => format!("(log (+ 2 (cos {a})))"),
    }
}

/// Complex extension of a smooth expression over states only.
pub fn eval_complex(e: &Expr, x: &[Complex64]) -> Complex64 {
    match e {
        Expr::Const(c) => Complex64::new(*c, 0.0),
        Expr::State(i) => x[*i],
        Expr::Add(a, b) => eval_complex(a, x) + eval_complex(b, x),
        Expr::Sub(a, b) => eval_complex(a, x) - eval_complex(b, x),
        Expr::Mul(a, b) => eval_complex(a, x) * eval_complex(b, x),
        Expr::Div(a, b) => eval_complex(a, x) / eval_complex(b, x),
        Expr::Neg(a) => -eval_complex(a, x),
        Expr::Smooth(f, a) => {
            let z = eval_complex(a, x);
            match f {
                SmoothFn::Exp => z.exp(),
                SmoothFn::Log => z.ln(),
                SmoothFn::Sin => z.sin(),
                SmoothFn::Cos => z.cos(),
                SmoothFn::Sqrt => z.sqrt(),
                SmoothFn::Pow(p) => z.powf(*p),
            }
        }
        other => panic!("complex step needs a smooth expression, got {}", other.op_name()),
    }
}

/// Gradient by the complex-step method (exact to rounding for analytic functions).
pub fn complex_step_gradient(e: &Expr, x: &[f64]) -> Vec<f64> {
    let h = 1e-30;
    (0..x.len())
        .map(|j| {
            let z: Vec<Complex64> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| Complex64::new(v, if i == j { h } else { 0.0 }))
                .collect();
            eval_complex(e, &z).im / h
        })
        .collect()
}

/// Lexicographic `a >= b` by a plain scan.
pub fn lex_ge(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    true
}

/// Sign of the first nonzero entry by a plain scan.
pub fn first_sign(v: &[f64]) -> i8 {
    v.iter()
        .find(|x| **x != 0.0)
        .map_or(0, |x| if *x > 0.0 { 1 } else { -1 })
}

/// Every vector of length `n` with entries in {-1, 0, 1}.
pub fn ternary_vectors(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v: Vec<f64>| {
                [-1.0, 0.0, 1.0].into_iter().map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}
