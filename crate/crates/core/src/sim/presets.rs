//! Named study layouts and study files.
//!
//! | name    | designs                                             | methods        |
//! |---------|-----------------------------------------------------|----------------|
//! | table1  | linear IV null, n ∈ {200, 500, 1000, 2000, 3000}    | cmi            |
//! | table2  | Box-Cox IV null, λ ∈ {0, −1, 1}, n ∈ {200, 1000, 2000, 3000} | cmi   |
//! | table3  | linear IV power, L ∈ {0.1, 0.5, 1}, σ ∈ {1, 0.5, 0.25, 0.1}, n = 1000 | cmi |
//! | table4  | linear regressor-exogeneity null, n ∈ {200, 500, 1000, 2000} | cmi  |
//! | table5  | heteroskedastic power, ρ ∈ {0.1, …, 0.9}, n = 1000   | cmi            |
//! | table6  | linear regressor-exogeneity power, as table3        | cmi            |
//! | table7  | linear IV power, as table3                          | sargan         |
//! | table8  | Box-Cox IV power, as table3                         | hansen         |
//! | figure1 | linear IV power L = 0.5, σ = 0.25, n ∈ {250, 500, 1000, 2000} | cmi, sargan |
//! | figure2 | Box-Cox IV power L = 0.5, σ = 0.25, same sizes      | cmi, hansen    |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dgp::{DgpFamily, DgpSpec};
use super::study::{StudyResult, TestMethod};
use crate::error::{Error, Result};

pub const PRESET_NAMES: &[&str] =
    &["table1", "table2", "table3", "table4", "table5", "table6", "table7", "table8", "figure1", "figure2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub name: String,
    pub specs: Vec<DgpSpec>,
    pub methods: Vec<TestMethod>,
    /// Replications; the caller's default when absent.
    pub reps: Option<usize>,
    pub alpha_levels: Option<Vec<f64>>,
}

const L_VALUES: [f64; 3] = [0.1, 0.5, 1.0];
const SIGMA_VALUES: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

fn power_grid(make: impl Fn(f64, f64) -> DgpFamily) -> Vec<DgpSpec> {
    L_VALUES
        .iter()
        .flat_map(|&l| SIGMA_VALUES.iter().map(move |&s| (l, s)))
        .map(|(l, s)| DgpSpec::new(make(l, s), 1000))
        .collect()
}

pub fn preset(name: &str) -> Result<StudyPlan> {
    use DgpFamily::*;
    let curve_sizes = [250, 500, 1000, 2000];
    let (specs, methods): (Vec<DgpSpec>, Vec<TestMethod>) = match name {
        "table1" => ([200, 500, 1000, 2000, 3000].map(|n| DgpSpec::new(LinearIvNull, n)).to_vec(), vec![TestMethod::Cmi]),
        "table2" => (
            [0.0, -1.0, 1.0]
                .iter()
                .flat_map(|&lambda| [200, 1000, 2000, 3000].map(|n| DgpSpec::new(BoxCoxIvNull { lambda }, n)))
                .collect(),
            vec![TestMethod::Cmi],
        ),
        "table3" => (power_grid(|l, sigma| LinearIvPower { l, sigma }), vec![TestMethod::Cmi]),
        "table4" => ([200, 500, 1000, 2000].map(|n| DgpSpec::new(LinearOlsNull, n)).to_vec(), vec![TestMethod::Cmi]),
        "table5" => (
            [0.1, 0.3, 0.5, 0.7, 0.9].map(|rho| DgpSpec::new(HeteroPower { rho }, 1000)).to_vec(),
            vec![TestMethod::Cmi],
        ),
        "table6" => (power_grid(|l, sigma| LinearOlsPower { l, sigma }), vec![TestMethod::Cmi]),
        "table7" => (power_grid(|l, sigma| LinearIvPower { l, sigma }), vec![TestMethod::Sargan]),
        "table8" => (power_grid(|l, sigma| BoxCoxPower { l, sigma }), vec![TestMethod::HansenJ]),
        "figure1" => (
            curve_sizes.map(|n| DgpSpec::new(LinearIvPower { l: 0.5, sigma: 0.25 }, n)).to_vec(),
            vec![TestMethod::Cmi, TestMethod::Sargan],
        ),
        "figure2" => (
            curve_sizes.map(|n| DgpSpec::new(BoxCoxPower { l: 0.5, sigma: 0.25 }, n)).to_vec(),
            vec![TestMethod::Cmi, TestMethod::HansenJ],
        ),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown study `{other}`; presets are {} or a study file path",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(StudyPlan { name: name.to_string(), specs, methods, reps: None, alpha_levels: None })
}

/// A study file:
///
/// ```toml
/// reps = 100
/// methods = ["cmi", "sargan"]
/// alpha_levels = [0.10, 0.05, 0.01]
///
/// [[dgp]]
/// family = "linear-iv-power"
/// l = 0.5
/// sigma = 0.25
/// n = 1000
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    reps: Option<usize>,
    methods: Vec<TestMethod>,
    alpha_levels: Option<Vec<f64>>,
    dgp: Vec<DgpSpec>,
}

pub fn plan_from_toml(name: &str, text: &str) -> Result<StudyPlan> {
    let f: StudyFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if f.dgp.is_empty() || f.methods.is_empty() {
        return Err(Error::InvalidConfig("a study file needs at least one [[dgp]] and one method".into()));
    }
    Ok(StudyPlan { name: name.to_string(), specs: f.dgp, methods: f.methods, reps: f.reps, alpha_levels: f.alpha_levels })
}

/// A preset name or the path of a study file.
pub fn resolve(name_or_path: &str) -> Result<StudyPlan> {
    if PRESET_NAMES.contains(&name_or_path) {
        return preset(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        return plan_from_toml(stem, &std::fs::read_to_string(path)?);
    }
    preset(name_or_path)
}

/// Wide layout: one row per design and method, one rate column per level.
pub fn write_wide_csv(result: &StudyResult, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["dgp".to_string(), "n".to_string(), "method".to_string()];
    header.extend(result.alpha_levels.iter().map(|a| format!("rate_{a}")));
    w.write_record(&header)?;
    let per_row = result.alpha_levels.len();
    for chunk in result.cells.chunks(per_row) {
        let c = &chunk[0];
        let mut row = vec![c.dgp.clone(), c.spec.n.to_string(), c.method.clone()];
        row.extend(chunk.iter().map(|c| c.rate.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert!(!p.specs.is_empty() && !p.methods.is_empty());
            for s in &p.specs {
                s.validate().unwrap();
            }
        }
        assert_eq!(preset("table3").unwrap().specs.len(), 12);
        assert!(preset("table99").is_err());
    }

    #[test]
    fn study_file_round_trip() {
        let text = r#"
            reps = 60
            methods = ["cmi", "hansen-j"]
            [[dgp]]
            family = "box-cox-iv-null"
            lambda = -1.0
            n = 500
            [[dgp]]
            family = "hetero-power"
            rho = 0.5
            n = 1000
        "#;
        let p = plan_from_toml("mine", text).unwrap();
        assert_eq!(p.reps, Some(60));
        assert_eq!(p.methods, vec![TestMethod::Cmi, TestMethod::HansenJ]);
        assert_eq!(p.specs[0], DgpSpec::new(DgpFamily::BoxCoxIvNull { lambda: -1.0 }, 500));
        assert_eq!(p.specs[1], DgpSpec::new(DgpFamily::HeteroPower { rho: 0.5 }, 1000));
        assert!(plan_from_toml("bad", "methods = [\"cmi\"]\ndgp = []\nextra = 1").is_err());
    }
}
