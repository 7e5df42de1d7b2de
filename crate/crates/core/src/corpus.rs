//! Reference laws shipped with the crate.

use crate::model::ReplacementLaw;

pub const THREE_TYPE_JSON: &str = include_str!("../laws/three_type.json");
pub const ABOVE_JSON: &str = include_str!("../laws/above.json");
pub const BOUNDARY_JSON: &str = include_str!("../laws/boundary.json");
pub const BELOW_JSON: &str = include_str!("../laws/below.json");
pub const DOUBLING_JSON: &str = include_str!("../laws/doubling.json");

fn load(s: &str) -> ReplacementLaw {
    ReplacementLaw::from_json_str(s).expect("bundled law is valid")
}

/// Three-type deterministic law `L = [[1,0,2],[0,2,1],[1,1,1]]`
/// (types black, white, green).
pub fn three_type() -> ReplacementLaw {
    load(THREE_TYPE_JSON)
}

/// `A = [[7,2],[2,7]]`: `rho = 9`, second eigenvalue 5 above `sqrt(rho)`.
pub fn case_i() -> ReplacementLaw {
    load(ABOVE_JSON)
}

/// `A = [[3,1],[1,3]]`: `rho = 4`, second eigenvalue 2 on `sqrt(rho)`.
pub fn case_ii() -> ReplacementLaw {
    load(BOUNDARY_JSON)
}

/// `A = [[3,2],[2,3]]`: `rho = 5`, second eigenvalue 1 below `sqrt(rho)`.
pub fn case_iii() -> ReplacementLaw {
    load(BELOW_JSON)
}

/// Single type, every ball yields two balls.
pub fn doubling() -> ReplacementLaw {
    load(DOUBLING_JSON)
}

/// Named corpus used by the equivalence and convergence checks.
pub fn all() -> Vec<(&'static str, ReplacementLaw)> {
    vec![
        ("three_type", three_type()),
        ("above", case_i()),
        ("boundary", case_ii()),
        ("below", case_iii()),
    ]
}

/// Looks up a bundled law by name.
pub fn by_name(name: &str) -> Option<ReplacementLaw> {
    match name {
        "three_type" => Some(three_type()),
        "above" => Some(case_i()),
        "boundary" => Some(case_ii()),
        "below" => Some(case_iii()),
        "doubling" => Some(doubling()),
        _ => None,
    }
}
