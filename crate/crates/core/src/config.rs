//! JSON run configuration.
//!
//! Parsing rejects unknown keys and reports the JSON path of the first
//! offending value. Semantic checks (grid shape, sequence fit, method
//! parameters) run before any computation and report paths the same way.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drift::{Coefficient, GaussianMixture, GmmFlowField, LinearField, MlpField, PfOdeField, SharedField};
use crate::engine::Termination;
use crate::error::{Error, Result};
use crate::grid::{InitSequence, TimeGrid};
use crate::schedule::{discretize_sequence, optimal_continuous_sequence, tuned_sequence, uniform_sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSpec,
    pub grid: GridSpec,
    pub method: Method,
    #[serde(default)]
    pub chords: ChordsSpec,
    #[serde(default)]
    pub picard: PicardSpec,
    #[serde(default)]
    pub parareal: PararealSpec,
    /// Master seed; repeat `r` uses `split_seed(seed, r)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub x0: X0Spec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sequential,
    Picard,
    Parareal,
    Chords,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sequential => "sequential",
            Method::Picard => "picard",
            Method::Parareal => "parareal",
            Method::Chords => "chords",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Linear {
        lambda: f64,
        dim: usize,
    },
    Mlp {
        seed: u64,
        dim: usize,
        width: usize,
        depth: usize,
    },
    GmmFlow {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mixture: Option<MixtureSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mixture_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ring: Option<RingSpec>,
    },
    PfOde {
        f: CoefSpec,
        g: CoefSpec,
        eps: Box<FieldSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// One `D x D` matrix per component.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture<f64>> {
        let covs = self.covariances.iter().map(|c| c.concat()).collect();
        GaussianMixture::new(self.weights.clone(), self.means.clone(), covs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub components: usize,
    pub dim: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for RingSpec {
    /// Eight components on a radius-3 circle in the plane.
    fn default() -> Self {
        Self {
            components: 8,
            dim: 2,
            radius: 3.0,
            std: 0.5,
        }
    }
}

impl RingSpec {
    pub fn build(&self) -> Result<GaussianMixture<f64>> {
        GaussianMixture::ring(self.components, self.dim, self.radius, self.std)
    }
}

/// Scalar schedule `t -> c(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefSpec {
    Constant(f64),
    /// `a + b t`
    Affine { a: f64, b: f64 },
}

impl CoefSpec {
    pub fn build(&self) -> Coefficient<f64> {
        match *self {
            CoefSpec::Constant(c) => Arc::new(move |_| c),
            CoefSpec::Affine { a, b } => Arc::new(move |t| a + b * t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn uniform(n: usize) -> Self {
        Self {
            n: Some(n),
            times: None,
        }
    }

    pub fn build(&self) -> Result<TimeGrid<f64>> {
        match (&self.n, &self.times) {
            (Some(n), None) => TimeGrid::uniform(*n).map_err(|e| Error::config("grid.N", e.to_string())),
            (None, Some(t)) => {
                TimeGrid::from_times(t.clone()).map_err(|e| Error::config("grid.times", e.to_string()))
            }
            _ => Err(Error::config("grid", "give exactly one of `N` or `times`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceSpec {
    /// Hand-tuned sequences for K = 4, 6, 8.
    #[default]
    Default,
    Uniform,
    Optimal { speedup: f64 },
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChordsSpec {
    #[serde(default)]
    pub sequence: SequenceSpec,
    /// Ignored for explicit indices.
    #[serde(default = "default_cores")]
    pub cores: usize,
    /// Defaults to stopping on the fastest core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(default)]
    pub verify_executors: bool,
}

fn default_cores() -> usize {
    8
}

impl Default for ChordsSpec {
    fn default() -> Self {
        Self {
            sequence: SequenceSpec::Default,
            cores: default_cores(),
            termination: None,
            verify_executors: false,
        }
    }
}

impl ChordsSpec {
    pub fn build_sequence(&self, n: usize) -> Result<InitSequence> {
        let path = "chords.sequence";
        let wrap = |e: Error| Error::config(path, e.to_string());
        if !matches!(self.sequence, SequenceSpec::Indices(_)) && self.cores > n {
            return Err(Error::config(
                path,
                format!("sequence needs {} cores but the grid has only N = {n} steps", self.cores),
            ));
        }
        match &self.sequence {
            SequenceSpec::Default => tuned_sequence(self.cores, n).map_err(wrap),
            SequenceSpec::Uniform => uniform_sequence(self.cores, n).map_err(wrap),
            SequenceSpec::Optimal { speedup } => {
                let cont = optimal_continuous_sequence(*speedup, self.cores).map_err(wrap)?;
                let grid = TimeGrid::uniform(n).map_err(wrap)?;
                discretize_sequence(&cont, &grid).map_err(wrap)
            }
            SequenceSpec::Indices(v) => {
                if v.len() > n {
                    return Err(Error::config(
                        path,
                        format!("sequence has {} cores but the grid has only N = {n} steps", v.len()),
                    ));
                }
                InitSequence::new(v.clone(), n).map_err(wrap)
            }
        }
    }

    pub fn termination(&self, cores: usize) -> Termination {
        self.termination.unwrap_or(Termination::fastest(cores))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSpec {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_window() -> usize {
    8
}

fn default_tol() -> f64 {
    1e-3
}

impl Default for PicardSpec {
    fn default() -> Self {
        Self {
            window: default_window(),
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PararealSpec {
    /// Defaults to `floor(sqrt(N))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_points: Option<usize>,
    /// Defaults to one iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

/// Starting latent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Spec {
    /// Standard normal draw from the run seed.
    #[default]
    Noise,
    Value(Vec<f64>),
}

impl FieldSpec {
    fn build_at(&self, path: &str) -> Result<SharedField<f64>> {
        let wrap = |e: Error| Error::config(path, e.to_string());
        Ok(match self {
            FieldSpec::Linear { lambda, dim } => {
                if *dim == 0 {
                    return Err(Error::config(format!("{path}.dim"), "dimension must be positive"));
                }
                Arc::new(LinearField::new(*lambda, *dim))
            }
            FieldSpec::Mlp {
                seed,
                dim,
                width,
                depth,
            } => Arc::new(MlpField::new(*seed, *dim, *width, *depth).map_err(wrap)?),
            FieldSpec::GmmFlow { .. } => Arc::new(GmmFlowField::new(self.mixture_at(path)?.expect("gmm field"))),
            FieldSpec::PfOde { f, g, eps } => {
                let inner = eps.build_at(&format!("{path}.eps"))?;
                Arc::new(PfOdeField::new(f.build(), g.build(), inner))
            }
        })
    }

    fn mixture_at(&self, path: &str) -> Result<Option<GaussianMixture<f64>>> {
        match self {
            FieldSpec::GmmFlow {
                mixture,
                mixture_path,
                ring,
            } => {
                let given = mixture.is_some() as u8 + mixture_path.is_some() as u8 + ring.is_some() as u8;
                if given > 1 {
                    return Err(Error::config(path, "give at most one of `mixture`, `mixture_path`, `ring`"));
                }
                let mix = if let Some(m) = mixture {
                    m.build().map_err(|e| Error::config(format!("{path}.mixture"), e.to_string()))?
                } else if let Some(p) = mixture_path {
                    let at = format!("{path}.mixture_path");
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| Error::config(&at, format!("{}: {e}", p.display())))?;
                    let spec: MixtureSpec = parse_json(&text).map_err(|e| match e {
                        Error::Config { path: inner, message } => {
                            Error::config(&at, format!("{} at `{inner}`: {message}", p.display()))
                        }
                        other => other,
                    })?;
                    spec.build().map_err(|e| Error::config(&at, e.to_string()))?
                } else {
                    ring.unwrap_or_default()
                        .build()
                        .map_err(|e| Error::config(format!("{path}.ring"), e.to_string()))?
                };
                Ok(Some(mix))
            }
            FieldSpec::PfOde { eps, .. } => eps.mixture_at(&format!("{path}.eps")),
            _ => Ok(None),
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(".", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Minimal configuration: `method` on `field` over a uniform `n`-step grid.
    pub fn new(field: FieldSpec, n: usize, method: Method) -> Self {
        Self {
            field,
            grid: GridSpec::uniform(n),
            method,
            chords: ChordsSpec::default(),
            picard: PicardSpec::default(),
            parareal: PararealSpec::default(),
            seed: 0,
            repeats: 1,
            x0: X0Spec::Noise,
            output_dir: None,
            workers: None,
        }
    }

    /// Checks everything that can be checked without running a solver.
    pub fn validate(&self) -> Result<()> {
        let grid = self.build_grid()?;
        let n = grid.steps();
        let field = self.build_field()?;
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if let X0Spec::Value(v) = &self.x0 {
            if v.len() != field.dim() {
                return Err(Error::config(
                    "x0.value",
                    format!("has dimension {}, field expects {}", v.len(), field.dim()),
                ));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be at least 1"));
        }
        match self.method {
            Method::Sequential => {}
            Method::Chords => {
                let seq = self.chords.build_sequence(n)?;
                let term = self.chords.termination(seq.cores());
                match term {
                    Termination::FixedCore { core } if core == 0 || core > seq.cores() => {
                        return Err(Error::config(
                            "chords.termination.core",
                            format!("must be in 1..={}", seq.cores()),
                        ))
                    }
                    Termination::Residual { tau } if !(tau > 0.0) => {
                        return Err(Error::config("chords.termination.tau", "must be > 0"))
                    }
                    _ => {}
                }
            }
            Method::Picard => {
                if self.picard.window == 0 || self.picard.window > n {
                    return Err(Error::config("picard.window", format!("must be in 1..={n}")));
                }
                if !(self.picard.tol > 0.0) {
                    return Err(Error::config("picard.tol", "must be > 0"));
                }
            }
            Method::Parareal => {
                let m = self.coarse_points(n);
                if m == 0 || m > n {
                    return Err(Error::config("parareal.coarse_points", format!("must be in 1..={n}")));
                }
                if self.parareal.iterations == Some(0) {
                    return Err(Error::config("parareal.iterations", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<TimeGrid<f64>> {
        self.grid.build()
    }

    pub fn build_field(&self) -> Result<SharedField<f64>> {
        self.field.build_at("field")
    }

    /// Target mixture when the field is (or wraps) a mixture flow.
    pub fn build_mixture(&self) -> Result<Option<GaussianMixture<f64>>> {
        self.field.mixture_at("field")
    }

    pub fn build_sequence(&self) -> Result<InitSequence> {
        let n = self.build_grid()?.steps();
        match self.method {
            Method::Chords => self.chords.build_sequence(n),
            _ => InitSequence::new(vec![0], n),
        }
    }

    pub fn coarse_points(&self, n: usize) -> usize {
        self.parareal
            .coarse_points
            .unwrap_or_else(|| crate::baselines::default_coarse_points(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_path(text: &str) -> String {
        match RunConfig::from_json(text).unwrap_err() {
            Error::Config { path, .. } => path,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_json(
            r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10}, "method": "sequential"}"#,
        )
        .unwrap();
        assert_eq!(c.method, Method::Sequential);
        assert_eq!(c.repeats, 1);
        assert_eq!(c.build_grid().unwrap().steps(), 10);
    }

    #[test]
    fn chords_sequence_forms() {
        let base = |seq: &str| {
            format!(
                r#"{{"field": {{"kind": "linear", "lambda": 1.0, "dim": 1}}, "grid": {{"N": 50}},
                   "method": "chords", "chords": {{"sequence": {seq}, "cores": 4}}}}"#
            )
        };
        let c = RunConfig::from_json(&base(r#""default""#)).unwrap();
        assert_eq!(c.build_sequence().unwrap().indices(), &[0, 8, 16, 32]);
        let c = RunConfig::from_json(&base(r#""uniform""#)).unwrap();
        assert_eq!(c.build_sequence().unwrap().indices(), &[0, 6, 12, 18]);
        let c = RunConfig::from_json(&base(r#"{"optimal": {"speedup": 2.0}}"#)).unwrap();
        assert_eq!(c.build_sequence().unwrap().cores(), 4);
        let c = RunConfig::from_json(&base(r#"{"indices": [0, 5, 9]}"#)).unwrap();
        assert_eq!(c.build_sequence().unwrap().indices(), &[0, 5, 9]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_paths() {
        let p = err_path(r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10}, "method": "sequential", "bogus": 1}"#);
        assert_eq!(p, "bogus");
        let p = err_path(r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10}, "method": "chords", "chords": {"cores": 2, "extra": true}}"#);
        assert_eq!(p, "chords.extra");
        let p = err_path(r#"{"field": {"kind": "linear", "lambda": "x", "dim": 1}, "grid": {"N": 10}, "method": "sequential"}"#);
        assert_eq!(p, "field");
        let p = err_path(r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": "ten"}, "method": "sequential"}"#);
        assert_eq!(p, "grid.N");
        let p = err_path(r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10}, "method": "warp"}"#);
        assert_eq!(p, "method");
    }

    #[test]
    fn too_many_cores_names_the_sequence() {
        let text = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 3},
                       "method": "chords", "chords": {"sequence": "uniform", "cores": 4}}"#;
        let e = RunConfig::from_json(text).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("sequence"), "{e}");
        let text = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 2},
                       "method": "chords", "chords": {"sequence": {"indices": [0, 1, 2]}}}"#;
        assert!(RunConfig::from_json(text).unwrap_err().to_string().contains("sequence"));
    }

    #[test]
    fn semantic_checks() {
        let bad_grid = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10, "times": [0, 1]}, "method": "sequential"}"#;
        assert_eq!(err_path(bad_grid), "grid");
        let bad_x0 = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 2}, "grid": {"N": 10}, "method": "sequential", "x0": {"value": [1.0]}}"#;
        assert_eq!(err_path(bad_x0), "x0.value");
        let bad_tol = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 10}, "method": "picard", "picard": {"tol": 0}}"#;
        assert_eq!(err_path(bad_tol), "picard.tol");
        let bad_core = r#"{"field": {"kind": "linear", "lambda": 1.0, "dim": 1}, "grid": {"N": 50}, "method": "chords",
                          "chords": {"cores": 4, "termination": {"mode": "fixed_core", "core": 9}}}"#;
        assert_eq!(err_path(bad_core), "chords.termination.core");
        let bad_mix = r#"{"field": {"kind": "gmm_flow", "mixture": {"weights": [0.5], "means": [[0, 0]], "covariances": [[[1, 0], [0, 1]]]}},
                         "grid": {"N": 10}, "method": "sequential"}"#;
        assert_eq!(err_path(bad_mix), "field.mixture");
    }

    #[test]
    fn fields_build() {
        let text = r#"{"field": {"kind": "pf_ode", "f": {"constant": 0.0}, "g": {"affine": {"a": 1.0, "b": 0.5}},
                                 "eps": {"kind": "gmm_flow", "ring": {"components": 3, "dim": 2, "radius": 1.0, "std": 0.3}}},
                       "grid": {"times": [0.0, 0.25, 1.0]}, "method": "sequential", "x0": {"value": [0.0, 0.0]}}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.build_field().unwrap().dim(), 2);
        assert_eq!(c.build_mixture().unwrap().unwrap().components(), 3);
        let text = r#"{"field": {"kind": "mlp", "seed": 3, "dim": 4, "width": 8, "depth": 2}, "grid": {"N": 5}, "method": "parareal"}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.coarse_points(5), 2);
        assert!(c.build_mixture().unwrap().is_none());
    }

    #[test]
    fn mixture_file_is_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mix.json");
        std::fs::write(
            &p,
            r#"{"weights": [0.25, 0.75], "means": [[1, 0], [-1, 0]], "covariances": [[[1, 0], [0, 1]], [[0.5, 0.1], [0.1, 0.5]]]}"#,
        )
        .unwrap();
        let text = format!(
            r#"{{"field": {{"kind": "gmm_flow", "mixture_path": {}}}, "grid": {{"N": 10}}, "method": "sequential"}}"#,
            serde_json::to_string(&p).unwrap()
        );
        let c = RunConfig::from_json(&text).unwrap();
        assert_eq!(c.build_mixture().unwrap().unwrap().weights(), &[0.25, 0.75]);
        std::fs::write(&p, r#"{"weights": [1.0], "means": [[0, 0]], "covariance": []}"#).unwrap();
        assert_eq!(err_path(&text), "field.mixture_path");
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = RunConfig::new(FieldSpec::GmmFlow { mixture: None, mixture_path: None, ring: None }, 50, Method::Chords);
        c.chords.sequence = SequenceSpec::Optimal { speedup: 2.5 };
        c.chords.termination = Some(Termination::Residual { tau: 1e-3 });
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
