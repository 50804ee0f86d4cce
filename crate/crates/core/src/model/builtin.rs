use super::{Expr, InputSignal, ModelDef, ModelSpec};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 6] = ["riot", "abs_toy", "maxpoly", "stommel", "stommel_obs", "linear2"];

pub fn builtin_names() -> &'static [&'static str] {
    &BUILTIN_NAMES
}

fn exprs(src: &[&str]) -> Vec<Expr> {
    src.iter()
        .map(|s| Expr::parse(s).expect("built-in expressions are well-formed"))
        .collect()
}

const STOMMEL_SAMPLES: [f64; 9] = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

/// Reference models: the riot example, the two static toys, the Stommel box in
/// identifiability and observability form, and a smooth linear control case.
pub fn builtin(name: &str) -> Result<ModelSpec> {
    let def = match name {
        "riot" => ModelDef {
            name: name.into(),
            n_x: 1,
            n_u: 0,
            n_p: 2,
            n_y: 1,
            f: exprs(&["(max 0 (- 1 (exp (neg (- x0 p0)))))"]),
            h: exprs(&["x0"]),
            f0: exprs(&["p1"]),
            inputs: vec![],
            theta_star: vec![1.0, 1.0],
            t0: 0.0,
            tf: 1.0,
            sample_times: Some(vec![0.0, 0.5]),
        },
        // Static output maps: the state is frozen at zero and h reads p only.
        "abs_toy" => ModelDef {
            name: name.into(),
            n_x: 1,
            n_u: 0,
            n_p: 1,
            n_y: 1,
            f: exprs(&["0"]),
            h: exprs(&["(abs p0)"]),
            f0: exprs(&["0"]),
            inputs: vec![],
            theta_star: vec![0.0],
            t0: 0.0,
            tf: 1.0,
            sample_times: None,
        },
        "maxpoly" => ModelDef {
            name: name.into(),
            n_x: 1,
            n_u: 0,
            n_p: 1,
            n_y: 1,
            f: exprs(&["0"]),
            h: exprs(&["(max (pow p0 3) (pow p0 5))"]),
            f0: exprs(&["0"]),
            inputs: vec![],
            theta_star: vec![0.0],
            t0: 0.0,
            tf: 1.0,
            sample_times: None,
        },
        "stommel" => ModelDef {
            name: name.into(),
            n_x: 2,
            n_u: 2,
            n_p: 3,
            n_y: 1,
            f: exprs(&[
                "(- (- (+ p0 u0) x0) (* x0 (abs (- x0 x1))))",
                "(- (- (+ p1 u1) (* x1 p2)) (* x1 (abs (- x0 x1))))",
            ]),
            h: exprs(&["(max x0 0.5)"]),
            f0: exprs(&["1", "2"]),
            inputs: vec![InputSignal::sine(2.0, 20.0), InputSignal::sine(1.0, 20.0)],
            theta_star: vec![3.0, 1.1, 0.3],
            t0: 0.0,
            tf: 1.0,
            sample_times: Some(STOMMEL_SAMPLES.to_vec()),
        },
        // Initial temperature and salinity are the unknowns; forcing parameters are fixed.
        "stommel_obs" => ModelDef {
            name: name.into(),
            n_x: 2,
            n_u: 2,
            n_p: 2,
            n_y: 1,
            f: exprs(&[
                "(- (- (+ 3 u0) x0) (* x0 (abs (- x0 x1))))",
                "(- (- (+ 1.1 u1) (* x1 0.3)) (* x1 (abs (- x0 x1))))",
            ]),
            h: exprs(&["(max x0 0.5)"]),
            f0: exprs(&["p0", "p1"]),
            inputs: vec![InputSignal::sine(2.0, 20.0), InputSignal::sine(1.0, 20.0)],
            theta_star: vec![1.0, 2.0],
            t0: 0.0,
            tf: 1.0,
            sample_times: Some(STOMMEL_SAMPLES.to_vec()),
        },
        "linear2" => ModelDef {
            name: name.into(),
            n_x: 1,
            n_u: 0,
            n_p: 2,
            n_y: 1,
            f: exprs(&["(neg (* p0 x0))"]),
            h: exprs(&["(* p1 x0)"]),
            f0: exprs(&["1"]),
            inputs: vec![],
            theta_star: vec![1.0, 2.0],
            t0: 0.0,
            tf: 1.0,
            sample_times: None,
        },
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    ModelSpec::new(def)
}

/// Closed-form solution of the riot model `x' = max(0, 1 - exp(-(x - p0)))`, `x(0) = p1`.
pub fn riot_closed_form(theta: &[f64], t: f64) -> Result<f64> {
    if theta.len() != 2 {
        return Err(Error::invalid(format!(
            "riot has 2 parameters, got {}",
            theta.len()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("riot closed form needs t >= 0, got {t}")));
    }
    let (p1, p2) = (theta[0], theta[1]);
    if p1 > p2 {
        return Ok(p2);
    }
    let arg = t.exp() + (p1 - p2).exp() - (t + p1 - p2).exp();
    if arg <= 0.0 {
        return Err(Error::domain(
            "riot closed form",
            format!("logarithm argument {arg} <= 0"),
        ));
    }
    Ok(arg.ln() + p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_validate() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            assert_eq!(m.name(), name);
        }
        assert!(matches!(builtin("lorenz"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn stommel_dimensions_and_inputs() {
        let m = builtin("stommel").unwrap();
        assert_eq!((m.n_x(), m.n_u(), m.n_p(), m.n_y()), (2, 2, 3, 1));
        assert_eq!(m.theta_star(), &[3.0, 1.1, 0.3]);
        let t = 0.037;
        assert_eq!(m.inputs()[0].at(t), 2.0 * (20.0 * t).sin());
        assert_eq!(m.inputs()[1].at(t), (20.0 * t).sin());
        assert_eq!(m.sample_times().unwrap().len(), 9);
    }

    #[test]
    fn riot_dimensions() {
        let m = builtin("riot").unwrap();
        assert_eq!((m.n_x(), m.n_p(), m.n_y()), (1, 2, 1));
        assert_eq!(m.theta_star(), &[1.0, 1.0]);
    }

    #[test]
    fn closed_form_values() {
        for t in [0.0, 0.3, 1.0, 4.0] {
            assert_eq!(riot_closed_form(&[1.0, 1.0], t).unwrap(), 1.0);
        }
        assert_eq!(riot_closed_form(&[2.0, 1.0], 0.7).unwrap(), 1.0);
        assert!((riot_closed_form(&[0.0, 1.0], 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(riot_closed_form(&[0.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn closed_form_solves_the_ode() {
        // x' = max(0, 1 - exp(-(x - p0))) by central differences
        let theta = [0.2, 0.9];
        for t in [0.1, 0.5, 0.9] {
            let h = 1e-5;
            let dx = (riot_closed_form(&theta, t + h).unwrap() - riot_closed_form(&theta, t - h).unwrap())
                / (2.0 * h);
            let x = riot_closed_form(&theta, t).unwrap();
            let rhs = f64::max(0.0, 1.0 - (-(x - theta[0])).exp());
            assert!((dx - rhs).abs() < 1e-8, "t={t}: {dx} vs {rhs}");
        }
    }
}
