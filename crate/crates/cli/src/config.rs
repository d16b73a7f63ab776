//! Experiment configuration: one JSON document, validated field by field
//! before anything is computed.

use std::path::{Path, PathBuf};

use perfhom::extension::FieldSpec;
use perfhom::geometry::{DomainParams, Generator, RealizationSeed};
use perfhom::homogenize::{KValue, LadderConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fhom,
    Ghom,
    ExtensionBattery,
    DensityStudy,
    OracleSuite,
}

/// How the holes enter the cell problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleWeightMode {
    /// Weights `1/k` for every entry of `k_ladder`, then weight 0.
    KLadder,
    /// Weight 0 only.
    HoleMasked,
    /// Weight `δ/t`.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtensionConfig {
    /// Cycled over the seeds: instance `i` uses `fields[i % len]`.
    pub fields: Vec<FieldSpec>,
    pub lambdas: Vec<f64>,
    /// Small-jump threshold; the calibrated default when absent.
    pub gamma: Option<f64>,
    /// Window side in units of δ.
    pub t_over_delta: f64,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self {
            fields: vec![
                FieldSpec::Constant { value: 1.0 },
                FieldSpec::Affine { xi: Vec::new() },
                FieldSpec::Mixed { amplitude: 0.3, jump: 1.0 },
            ],
            lambdas: vec![0.5, 2.0],
            gamma: None,
            t_over_delta: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub surface_instances: usize,
    pub volume_instances: usize,
    pub seed: u64,
    pub volume_rel_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            surface_instances: 200,
            volume_instances: 50,
            seed: 0,
            volume_rel_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub delta: f64,
    pub r_star: f64,
    pub generator: Generator,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Constant volume coefficient, in `[c1, c2]`.
    pub a: f64,
    /// Constant surface coefficient, in `[c3, c4]`.
    pub g: f64,
    pub hole_weight_mode: HoleWeightMode,
    pub k_ladder: Vec<f64>,
    pub t_over_delta: Vec<f64>,
    pub h_over_delta: f64,
    pub frame_width: usize,
    pub tol: f64,
    pub window_origin: Vec<f64>,
    /// Gradients for `fhom`; `e_1` when empty.
    pub xi: Vec<Vec<f64>>,
    /// Normals for `ghom`; `e_1` when empty.
    pub nu: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 means one per core. Never affects outputs.
    pub parallel: usize,
    pub extension: ExtensionConfig,
    pub oracle: OracleConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Fhom,
            n: 2,
            delta: 0.25,
            r_star: 0.45,
            generator: Generator::BernoulliLattice {
                spacing: 1.0,
                radius: 0.2,
                occupation_prob: 0.5,
            },
            p: 2.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            a: 1.0,
            g: 1.0,
            hole_weight_mode: HoleWeightMode::KLadder,
            k_ladder: vec![1.0, 2.0, 4.0, 8.0],
            t_over_delta: vec![8.0, 16.0, 32.0],
            h_over_delta: 0.25,
            frame_width: 1,
            tol: 1e-8,
            window_origin: Vec::new(),
            xi: Vec::new(),
            nu: Vec::new(),
            seeds: (0..16).collect(),
            parallel: 0,
            extension: ExtensionConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: None,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn unit(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    e
}

impl ExperimentConfig {
    /// Parse a JSON document; `kind` is required, everything else defaults.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        if value.get("kind").is_none() {
            return Err(invalid("kind", "missing experiment kind"));
        }
        serde_json::from_value(value).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fill the dimension-dependent defaults so the config describes the
    /// run completely.
    pub fn resolved(mut self) -> Self {
        if self.window_origin.is_empty() {
            self.window_origin = vec![0.0; self.n];
        }
        if self.xi.is_empty() {
            self.xi = vec![unit(self.n)];
        }
        if self.nu.is_empty() {
            self.nu = vec![unit(self.n)];
        }
        for f in &mut self.extension.fields {
            if let FieldSpec::Affine { xi } = f {
                if xi.is_empty() {
                    *xi = unit(self.n);
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n != 2 && self.n != 3 {
            return Err(invalid("n", format!("dimension must be 2 or 3, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", "must be positive"));
        }
        if !(self.r_star > 0.0 && self.r_star.is_finite()) {
            return Err(invalid("r_star", "must be positive"));
        }
        if !(self.h_over_delta > 0.0 && self.h_over_delta < 0.5) {
            return Err(invalid("h_over_delta", format!("need 0 < h/δ < 1/2, got {}", self.h_over_delta)));
        }
        if self.t_over_delta.is_empty() || self.t_over_delta.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("t_over_delta", "must be a nonempty list of positive sides"));
        }
        if self.t_over_delta.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("t_over_delta", "must be strictly increasing"));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("need p > 1, got {}", self.p)));
        }
        if !(self.c1 > 0.0 && self.c1 <= self.c2 && self.c2.is_finite()) {
            return Err(invalid("c1", "need 0 < c1 ≤ c2"));
        }
        if !(self.c3 > 0.0 && self.c3 <= self.c4 && self.c4.is_finite()) {
            return Err(invalid("c3", "need 0 < c3 ≤ c4"));
        }
        if !(self.c1 <= self.a && self.a <= self.c2) {
            return Err(invalid("a", "must lie in [c1, c2]"));
        }
        if !(self.c3 <= self.g && self.g <= self.c4) {
            return Err(invalid("g", "must lie in [c3, c4]"));
        }
        if self.k_ladder.iter().any(|k| !(*k >= 1.0 && k.is_finite())) {
            return Err(invalid("k_ladder", "finite k values must be ≥ 1"));
        }
        if self.frame_width == 0 {
            return Err(invalid("frame_width", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.window_origin.len() != self.n {
            return Err(invalid("window_origin", format!("must have {} components", self.n)));
        }
        for (field, list) in [("xi", &self.xi), ("nu", &self.nu)] {
            if list.iter().any(|v| v.len() != self.n || v.iter().any(|x| !x.is_finite())) {
                return Err(invalid(field, format!("every vector must have {} finite components", self.n)));
            }
        }
        if self.nu.iter().any(|v| v.iter().all(|x| *x == 0.0)) {
            return Err(invalid("nu", "normals must be nonzero"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must be nonempty"));
        }
        match &self.generator {
            Generator::Empty => {}
            Generator::BernoulliLattice {
                spacing,
                radius,
                occupation_prob,
            } => {
                if !(*spacing > 0.0 && *radius > 0.0 && (0.0..=1.0).contains(occupation_prob)) {
                    return Err(invalid("generator", "need spacing > 0, radius > 0, occupation_prob ∈ [0, 1]"));
                }
                if !(*radius < self.r_star) {
                    return Err(invalid("generator.radius", "must be below r_star"));
                }
            }
            Generator::HardcoreRejection { intensity, r_min, r_max } => {
                if !(*intensity >= 0.0 && *r_min > 0.0 && r_min <= r_max && *r_max < self.r_star) {
                    return Err(invalid("generator", "need intensity ≥ 0 and 0 < r_min ≤ r_max < r_star"));
                }
            }
        }
        if self.kind == ExperimentKind::ExtensionBattery {
            if self.extension.fields.is_empty() {
                return Err(invalid("extension.fields", "must be nonempty"));
            }
            if self.extension.lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err(invalid("extension.lambdas", "must be positive"));
            }
            if !(self.extension.t_over_delta > 0.0) {
                return Err(invalid("extension.t_over_delta", "must be positive"));
            }
            if self.extension.gamma.is_some_and(|g| !(g > 0.0)) {
                return Err(invalid("extension.gamma", "must be positive"));
            }
        }
        if self.kind == ExperimentKind::OracleSuite && !(self.oracle.volume_rel_tol > 0.0) {
            return Err(invalid("oracle.volume_rel_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn domain(&self) -> DomainParams {
        DomainParams::new(self.n, self.delta, self.r_star)
    }

    pub fn k_values(&self) -> Vec<KValue> {
        match self.hole_weight_mode {
            HoleWeightMode::KLadder => self
                .k_ladder
                .iter()
                .map(|&k| KValue::Finite(k))
                .chain(std::iter::once(KValue::Infinite))
                .collect(),
            HoleWeightMode::HoleMasked => vec![KValue::Infinite],
            HoleWeightMode::Soft => vec![KValue::Soft],
        }
    }

    pub fn ladder(&self) -> LadderConfig {
        LadderConfig {
            generator: RealizationSeed::new(0, self.generator.clone()),
            domain: self.domain(),
            t_values: self.t_over_delta.iter().map(|t| t * self.delta).collect(),
            k_values: self.k_values(),
            seeds: self.seeds.clone(),
            h_over_delta: self.h_over_delta,
            frame_width: self.frame_width,
            tol: self.tol,
            window_origin: self.window_origin.clone(),
        }
    }
}

/// `"0,3,5"`, `"0..16"` or a mix such as `"0..4,10"`.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>, CliError> {
    let bad = || invalid("seeds", format!("cannot parse seed list {list:?}"));
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a >= b {
                return Err(bad());
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_is_required_and_the_rest_defaults() {
        assert!(matches!(
            ExperimentConfig::from_json("{}"),
            Err(CliError::Validation { field, .. }) if field == "kind"
        ));
        let c = ExperimentConfig::from_json(r#"{"kind": "ghom"}"#).unwrap().resolved();
        assert_eq!(c.kind, ExperimentKind::Ghom);
        assert_eq!(c.nu, vec![vec![1.0, 0.0]]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"kind": "fhom", "hh": 1}"#).is_err());
    }

    #[test]
    fn coarse_resolution_names_the_field() {
        let c = ExperimentConfig::from_json(r#"{"kind": "fhom", "h_over_delta": 0.5}"#)
            .unwrap()
            .resolved();
        match c.validate() {
            Err(CliError::Validation { field, .. }) => assert_eq!(field, "h_over_delta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
