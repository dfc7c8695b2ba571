//! Experiment configuration read from JSON. Unknown keys are rejected and
//! every error names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensitivity::{DivergenceMethod, ProbeKind};
use crate::solver::{SaddleMethod, SaddleOptions, SolveOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{file}: cannot read: {message}")]
    Read { file: String, message: String },
    #[error("{file}: at `{path}`: {message}")]
    Syntax { file: String, path: String, message: String },
    #[error("at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn invalid(path: &str, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Key path of the error, empty when the file could not be read.
    pub fn key_path(&self) -> &str {
        match self {
            Self::Read { .. } => "",
            Self::Syntax { path, .. } | Self::Invalid { path, .. } => path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub design: DesignSpec,
    pub penalty: PenaltySpec,
    pub truth: TruthSpec,
    pub grid: GridSpec,
    pub sigma: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub method: MethodSpec,
    /// Directory receiving `cells.csv`, `summary.csv` and `manifest.json`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    Identity { dim: usize },
    /// i.i.d. `N(0, 1/n)` entries drawn from the experiment seed.
    Gaussian { rows: usize, cols: usize },
    /// Periodic Gaussian blur of a `height × width` image.
    Deconvolution { height: usize, width: usize, blur: f64 },
    /// Periodic Gaussian blur followed by uniform sub-sampling of
    /// `round(ratio · height · width)` pixels.
    CompressiveSensing { height: usize, width: usize, blur: f64, ratio: f64 },
    /// Dense matrix read from a header-less CSV file.
    Csv { path: PathBuf },
}

impl DesignSpec {
    /// Image shape of the unknown, for image-based designs.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            Self::Deconvolution { height, width, .. } | Self::CompressiveSensing { height, width, .. } => {
                Some((*height, *width))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltySpec {
    Lasso,
    /// Contiguous blocks of `block_size`, or the `(index, block-id)` pairs
    /// of `blocks_csv`.
    GroupLasso {
        #[serde(default)]
        block_size: Option<usize>,
        #[serde(default)]
        blocks_csv: Option<PathBuf>,
    },
    /// `‖D* x‖₁` with `D*` read from CSV.
    GeneralLasso { analysis_csv: PathBuf },
    /// Isotropic total variation on the design's image grid.
    Tv,
    /// Anisotropic total variation on the design's image grid.
    AnisotropicTv,
    Linf,
    Nuclear { rows: usize, cols: usize },
    SphereHinge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    Sparse { nonzeros: usize, amplitude: f64 },
    GroupSparse { block_size: usize, active: usize, amplitude: f64 },
    PiecewiseConstant { rectangles: usize, amplitude: f64 },
    /// Coefficients read from a one-column CSV.
    Csv { path: PathBuf },
    /// Grayscale PGM image on the design's grid.
    Pgm { path: PathBuf },
    /// Observations given directly, one per CSV row; the risk is unknown.
    Observed { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default)]
    pub log: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub iterations: usize,
    pub kkt_tol: f64,
    pub gamma: f64,
    /// Data-scaled step, see [`SolveOptions::gamma_scale`].
    pub gamma_scale: Option<f64>,
    pub polish: bool,
    pub warm_start: bool,
    pub saddle: SaddleKind,
    pub krylov_tol: f64,
    pub krylov_maxit: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let s = SolveOptions::default();
        let k = SaddleOptions::default();
        Self {
            iterations: s.iterations,
            kkt_tol: s.kkt_tol,
            gamma: s.gamma,
            gamma_scale: s.gamma_scale,
            polish: s.polish,
            warm_start: true,
            saddle: SaddleKind::Auto,
            krylov_tol: k.tol,
            krylov_maxit: k.maxit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaddleKind {
    #[default]
    Auto,
    Dense,
    Krylov,
}

impl SolverSpec {
    pub fn saddle_options(&self) -> SaddleOptions {
        SaddleOptions {
            method: match self.saddle {
                SaddleKind::Auto => SaddleMethod::Auto,
                SaddleKind::Dense => SaddleMethod::Dense,
                SaddleKind::Krylov => SaddleMethod::Krylov,
            },
            tol: self.krylov_tol,
            maxit: self.krylov_maxit,
            ..SaddleOptions::default()
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            iterations: self.iterations,
            kkt_tol: self.kkt_tol,
            gamma: self.gamma,
            gamma_scale: self.gamma_scale,
            polish: self.polish,
            saddle: self.saddle_options(),
            ..SolveOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    #[default]
    Closed,
    Exact,
    Mc { probes: usize, seed: u64 },
    Fd {
        probes: usize,
        seed: u64,
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        canonical: bool,
    },
}

impl MethodSpec {
    pub fn to_method(&self) -> DivergenceMethod {
        match *self {
            Self::Closed => DivergenceMethod::ClosedForm,
            Self::Exact => DivergenceMethod::ExactTrace,
            Self::Mc { probes, seed } => DivergenceMethod::MonteCarlo { probes, seed },
            Self::Fd { probes, seed, eps, canonical } => DivergenceMethod::FiniteDifference {
                eps,
                probes,
                seed,
                probe: if canonical { ProbeKind::Canonical } else { ProbeKind::Gaussian },
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, file: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Syntax {
            file: file.to_string(),
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            file: file.clone(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text, &file)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Pretty JSON that parses back to an equal value.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration is always serializable")
    }

    /// Relative data paths are taken relative to the configuration file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DesignSpec::Csv { path } = &mut self.design {
            fix(path);
        }
        match &mut self.penalty {
            PenaltySpec::GroupLasso { blocks_csv: Some(p), .. } | PenaltySpec::GeneralLasso { analysis_csv: p } => fix(p),
            _ => {}
        }
        match &mut self.truth {
            TruthSpec::Csv { path } | TruthSpec::Pgm { path } | TruthSpec::Observed { path } => fix(path),
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) {
            return Err(ConfigError::invalid("sigma", "must be positive"));
        }
        if self.replications == 0 {
            return Err(ConfigError::invalid("replications", "must be at least 1"));
        }
        let g = &self.grid;
        if g.count == 0 {
            return Err(ConfigError::invalid("grid.count", "must be at least 1"));
        }
        if !(g.lo.is_finite() && g.lo >= 0.0) {
            return Err(ConfigError::invalid("grid.lo", "must be finite and nonnegative"));
        }
        if !(g.hi.is_finite() && g.hi >= g.lo) {
            return Err(ConfigError::invalid("grid.hi", "must be finite and at least grid.lo"));
        }
        if g.log && g.count > 1 && g.lo <= 0.0 {
            return Err(ConfigError::invalid("grid.lo", "must be positive for a logarithmic grid"));
        }
        match &self.design {
            DesignSpec::Identity { dim } if *dim == 0 => return Err(ConfigError::invalid("design.dim", "must be positive")),
            DesignSpec::Gaussian { rows, cols } if *rows == 0 || *cols == 0 => {
                return Err(ConfigError::invalid("design", "rows and cols must be positive"))
            }
            DesignSpec::Deconvolution { height, width, blur } | DesignSpec::CompressiveSensing { height, width, blur, .. } => {
                if *height == 0 || *width == 0 {
                    return Err(ConfigError::invalid("design", "height and width must be positive"));
                }
                if !positive(*blur) {
                    return Err(ConfigError::invalid("design.blur", "must be positive"));
                }
            }
            _ => {}
        }
        if let DesignSpec::CompressiveSensing { ratio, .. } = self.design {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(ConfigError::invalid("design.ratio", "must lie in (0, 1]"));
            }
        }
        let needs_image = matches!(self.penalty, PenaltySpec::Tv | PenaltySpec::AnisotropicTv)
            || matches!(self.truth, TruthSpec::PiecewiseConstant { .. } | TruthSpec::Pgm { .. });
        if needs_image && self.design.image_shape().is_none() {
            return Err(ConfigError::invalid("design.kind", "an image design is required by the penalty or the truth"));
        }
        if let PenaltySpec::GroupLasso { block_size, blocks_csv } = &self.penalty {
            if block_size.is_some() == blocks_csv.is_some() {
                return Err(ConfigError::invalid("penalty", "exactly one of block_size and blocks_csv is required"));
            }
            if *block_size == Some(0) {
                return Err(ConfigError::invalid("penalty.block_size", "must be positive"));
            }
        }
        match &self.method {
            MethodSpec::Mc { probes, .. } if *probes == 0 => return Err(ConfigError::invalid("method.probes", "must be positive")),
            MethodSpec::Fd { probes, canonical, eps, .. } => {
                if *probes == 0 && !canonical {
                    return Err(ConfigError::invalid("method.probes", "must be positive"));
                }
                if eps.is_some_and(|e| !positive(e)) {
                    return Err(ConfigError::invalid("method.eps", "must be positive"));
                }
            }
            _ => {}
        }
        let s = &self.solver;
        if s.iterations == 0 {
            return Err(ConfigError::invalid("solver.iterations", "must be positive"));
        }
        for (key, v) in [("solver.kkt_tol", s.kkt_tol), ("solver.gamma", s.gamma), ("solver.krylov_tol", s.krylov_tol)] {
            if !positive(v) {
                return Err(ConfigError::invalid(key, "must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "design": {"kind": "gaussian", "rows": 10, "cols": 20},
        "penalty": {"kind": "lasso"},
        "truth": {"kind": "sparse", "nonzeros": 3, "amplitude": 2.0},
        "grid": {"lo": 0.1, "hi": 1.0, "count": 4, "log": true},
        "sigma": 1.0,
        "replications": 5,
        "seed": 7
    }"#;

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_json(MINIMAL, "t").unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json(), "t").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.solver, SolverSpec::default());
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let text = MINIMAL.replace(r#""log": true"#, r#""log": true, "spacing": 2"#);
        let err = ExperimentConfig::from_json(&text, "t").unwrap_err();
        assert_eq!(err.key_path(), "grid.spacing");
        assert!(err.to_string().contains("spacing"));
    }

    #[test]
    fn unknown_variant_field_rejected() {
        let text = MINIMAL.replace(r#""rows": 10"#, r#""rows": 10, "blur": 1.5"#);
        assert!(ExperimentConfig::from_json(&text, "t").is_err());
    }

    #[test]
    fn wrong_type_reports_nested_path() {
        let text = MINIMAL.replace(r#""sigma": 1.0,"#, r#""sigma": 1.0, "solver": {"iterations": "many"},"#);
        let err = ExperimentConfig::from_json(&text, "t").unwrap_err();
        assert_eq!(err.key_path(), "solver.iterations");
    }

    #[test]
    fn semantic_checks_name_the_key() {
        let text = MINIMAL.replace(r#""sigma": 1.0"#, r#""sigma": -1.0"#);
        assert_eq!(ExperimentConfig::from_json(&text, "t").unwrap_err().key_path(), "sigma");
        let text = MINIMAL.replace(r#"{"kind": "lasso"}"#, r#"{"kind": "tv"}"#);
        assert_eq!(ExperimentConfig::from_json(&text, "t").unwrap_err().key_path(), "design.kind");
    }
}
