//! Built-in model spacetimes, defined through the same text format the CLI
//! reads, so library users and model files exercise one code path.

use crate::model::{Model, ModelFile};
use crate::Result;

/// 2-dimensional Minkowski space, L = (-v1^2 + v2^2)/2, unit density.
pub const MINKOWSKI2: &str = r#"
[model]
name = "minkowski2"
n = 2
family = "flat"
berwald = true
lagrangian = "(-(v1^2) + v2^2)/2"
weight = "1"
orientation = ["1", "0"]

[line]
base = [0.0, 0.0]
velocity = [1.0, 0.0]
horizon = 100.0
"#;

/// 4-dimensional Minkowski space.
pub const MINKOWSKI4: &str = r#"
[model]
name = "minkowski4"
n = 4
family = "flat"
berwald = true
lagrangian = "(-(v1^2) + v2^2 + v3^2 + v4^2)/2"
weight = "1"
orientation = ["1", "0", "0", "0"]

[line]
base = [0.0, 0.0, 0.0, 0.0]
velocity = [1.0, 0.0, 0.0, 0.0]
horizon = 100.0
"#;

/// Lorentzian warped product -dt^2 + e^{2t} dy^2 (time-dependent warp,
/// nonzero curvature); quadratic, so Chern = Levi-Civita.
pub const WARPED2: &str = r#"
[model]
name = "warped2"
n = 2
family = "generic"
berwald = false
lagrangian = "(-(v1^2) + exp(2*x1)*v2^2)/2"
weight = "1"
orientation = ["1", "0"]
"#;

/// Weighted Minkowski plane with density e^{-x1}.
pub const MINKOWSKI2_EXPWEIGHT: &str = r#"
[model]
name = "minkowski2-expweight"
n = 2
family = "flat"
berwald = true
lagrangian = "(-(v1^2) + v2^2)/2"
weight = "exp(-x1)"
orientation = ["1", "0"]

[line]
base = [0.0, 0.0]
velocity = [1.0, 0.0]
horizon = 100.0

[run]
N = "inf"
epsilon = 0.0
"#;

/// Weighted Minkowski plane with Gaussian density e^{-x1^2/2}.
pub const MINKOWSKI2_GAUSSWEIGHT: &str = r#"
[model]
name = "minkowski2-gaussweight"
n = 2
family = "flat"
berwald = true
lagrangian = "(-(v1^2) + v2^2)/2"
weight = "exp(-(x1^2)/2)"
orientation = ["1", "0"]
"#;

/// Flat Randers-type structure L = -(sqrt(v1^2 - v2^2) + a v1)^2 / 2 on the
/// cone v1 > 0, v1^2 > v2^2. Position-independent, hence Berwald with
/// vanishing connection, but irreversible.
pub const RANDERS_FLAT: &str = r#"
[model]
name = "randers-flat"
n = 2
family = "flat"
berwald = true
lagrangian = "-(sqrt(v1^2 - v2^2) + a*v1)^2/2"
weight = "1"
domain = ["v1", "v1^2 - v2^2"]
orientation = ["1", "0"]

[params]
a = 0.25

[line]
base = [0.0, 0.0]
velocity = [0.8, 0.0]
horizon = 100.0
"#;

/// Product spacetime -dt^2 + (1 + sin(y)^2/2) dy^2 with a vertical line.
pub const PRODUCT_SIN: &str = r#"
[model]
name = "product-sin"
n = 2
family = "product"
berwald = true
lagrangian = "(-(v1^2) + (1 + sin(x2)^2/2)*v2^2)/2"
weight = "1"
orientation = ["1", "0"]

[line]
base = [0.0, 0.0]
velocity = [1.0, 0.0]
horizon = 100.0
"#;

/// Warped non-Berwald perturbation: position- and direction-dependent
/// quartic term makes the Chern symbols vary over each fiber.
pub const WARPED_QUARTIC: &str = r#"
[model]
name = "warped-quartic"
n = 2
family = "generic"
berwald = false
lagrangian = "(-(v1^2) + exp(2*x1)*v2^2)/2 + eps*exp(x1)*v2^4/(v1^2)"
weight = "1"
domain = ["v1"]
orientation = ["1", "0"]

[params]
eps = 0.05
"#;

/// All built-in definitions, keyed by name.
pub fn builtin_sources() -> Vec<(&'static str, &'static str)> {
    vec![
        ("minkowski2", MINKOWSKI2),
        ("minkowski4", MINKOWSKI4),
        ("warped2", WARPED2),
        ("minkowski2-expweight", MINKOWSKI2_EXPWEIGHT),
        ("minkowski2-gaussweight", MINKOWSKI2_GAUSSWEIGHT),
        ("randers-flat", RANDERS_FLAT),
        ("product-sin", PRODUCT_SIN),
        ("warped-quartic", WARPED_QUARTIC),
    ]
}

fn build(source: &str) -> Model {
    ModelFile::parse(source)
        .and_then(|f| f.build())
        .expect("builtin model must build")
}

pub fn minkowski2() -> Model {
    build(MINKOWSKI2)
}

pub fn minkowski4() -> Model {
    build(MINKOWSKI4)
}

pub fn warped2() -> Model {
    build(WARPED2)
}

pub fn minkowski2_expweight() -> Model {
    build(MINKOWSKI2_EXPWEIGHT)
}

pub fn minkowski2_gaussweight() -> Model {
    build(MINKOWSKI2_GAUSSWEIGHT)
}

pub fn randers_flat() -> Model {
    build(RANDERS_FLAT)
}

pub fn product_sin() -> Model {
    build(PRODUCT_SIN)
}

pub fn warped_quartic() -> Model {
    build(WARPED_QUARTIC)
}

/// Parsed model file for a built-in (gives access to `[line]` and `[run]`).
pub fn builtin_file(name: &str) -> Option<ModelFile> {
    builtin_sources()
        .into_iter()
        .find(|(key, _)| *key == name)
        .map(|(_, src)| ModelFile::parse(src).expect("builtin model must parse"))
}

/// Builds a built-in model by name.
pub fn builtin(name: &str) -> Result<Model> {
    builtin_file(name)
        .ok_or_else(|| {
            crate::Error::InvalidModel(format!(
                "unknown builtin model `{name}`; available: {}",
                builtin_sources()
                    .iter()
                    .map(|(k, _)| *k)
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_builtins_build_and_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (name, _) in builtin_sources() {
            let model = builtin(name).unwrap();
            let report = validate_model(&model, 60, &mut rng);
            assert!(report.ok(1e-9), "{name} failed validation: {report:?}");
        }
    }
}
