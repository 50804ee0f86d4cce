use serde::{Deserialize, Serialize};

use super::{Expr, InputSignal, ModelDef, ModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsDoc {
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
}

/// On-disk model format. Expressions are s-expression strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub dims: DimsDoc,
    pub f: Vec<String>,
    pub h: Vec<String>,
    pub f0: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<InputDoc>,
    pub theta_star: Vec<f64>,
    pub t0: f64,
    pub tf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_times: Option<Vec<f64>>,
}

fn parse_list(key: &str, src: &[String]) -> Result<Vec<Expr>> {
    src.iter()
        .enumerate()
        .map(|(i, s)| {
            Expr::parse(s).map_err(|e| match e {
                Error::Model { path, message } => Error::model(format!("{key}[{i}] ({path})"), message),
                other => other,
            })
        })
        .collect()
}

impl ModelDocument {
    pub fn into_spec(self) -> Result<ModelSpec> {
        let def = ModelDef {
            f: parse_list("f", &self.f)?,
            h: parse_list("h", &self.h)?,
            f0: parse_list("f0", &self.f0)?,
            name: self.name,
            n_x: self.dims.n_x,
            n_u: self.dims.n_u,
            n_p: self.dims.n_p,
            n_y: self.dims.n_y,
            inputs: self
                .inputs
                .iter()
                .map(|i| InputSignal {
                    offset: i.offset,
                    amplitude: i.amplitude,
                    frequency: i.frequency,
                })
                .collect(),
            theta_star: self.theta_star,
            t0: self.t0,
            tf: self.tf,
            sample_times: self.sample_times,
        };
        ModelSpec::new(def)
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        let d = spec.def();
        let strs = |v: &[Expr]| v.iter().map(Expr::to_string).collect();
        ModelDocument {
            name: d.name.clone(),
            dims: DimsDoc {
                n_x: d.n_x,
                n_u: d.n_u,
                n_p: d.n_p,
                n_y: d.n_y,
            },
            f: strs(&d.f),
            h: strs(&d.h),
            f0: strs(&d.f0),
            inputs: d
                .inputs
                .iter()
                .map(|s| InputDoc {
                    offset: s.offset,
                    amplitude: s.amplitude,
                    frequency: s.frequency,
                })
                .collect(),
            theta_star: d.theta_star.clone(),
            t0: d.t0,
            tf: d.tf,
            sample_times: d.sample_times.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin, parse_model, BUILTIN_NAMES};

    const RIOT: &str = r#"{
        "name": "riot",
        "dims": {"n_x": 1, "n_u": 0, "n_p": 2, "n_y": 1},
        "f": ["(max 0 (- 1 (exp (neg (- x0 p0)))))"],
        "h": ["x0"],
        "f0": ["p1"],
        "inputs": [],
        "theta_star": [1, 1],
        "t0": 0,
        "tf": 1
    }"#;

    #[test]
    fn parses_riot_document() {
        let m = parse_model(RIOT).unwrap();
        assert_eq!((m.n_x(), m.n_u(), m.n_p(), m.n_y()), (1, 0, 2, 1));
        assert_eq!(
            m.exprs(super::super::Which::F),
            builtin("riot").unwrap().exprs(super::super::Which::F)
        );
    }

    #[test]
    fn out_of_range_param_is_reported_with_path() {
        let doc = RIOT.replace("\"h\": [\"x0\"]", "\"h\": [\"(* x0 p5)\"]");
        let err = parse_model(&doc).unwrap_err();
        assert!(err.is_model_error());
        assert!(err.to_string().contains("h[0]"), "{err}");
        assert!(err.to_string().contains("p5"), "{err}");
    }

    #[test]
    fn unknown_elemental_is_reported() {
        let doc = RIOT.replace("(exp ", "(expm1 ");
        let err = parse_model(&doc).unwrap_err();
        assert!(err.to_string().contains("f[0]"), "{err}");
        assert!(err.to_string().contains("expm1"), "{err}");
    }

    #[test]
    fn schema_violations_are_rejected() {
        assert!(parse_model("{}").is_err());
        assert!(parse_model(&RIOT.replace("\"tf\": 1", "\"tf\": 1, \"extra\": 3")).is_err());
        assert!(parse_model(&RIOT.replace("\"f0\": [\"p1\"]", "\"f0\": []")).is_err());
    }

    #[test]
    fn builtins_round_trip_through_json() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let back = parse_model(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m, "{name}");
        }
    }
}
