//! Configuration, data ingestion and the seeded experiment runner, plus the
//! invariant suites behind the `check` command.

mod checks;
pub mod config;

use std::path::PathBuf;

use rand::seq::index::sample;
use serde_json::json;

pub use checks::{run_check, run_checks, CheckLevel, CheckOutcome, CheckReport, CHECKS};
pub use config::{ConfigError, DesignSpec, ExperimentConfig, GridSpec, MethodSpec, PenaltySpec, SolverSpec, TruthSpec};

use crate::error::Result;
#[cfg(test)]
use crate::error::Error;
use crate::io::{self, IoError};
use crate::linop::{Conv2d, LinearMap};
use crate::penalty::{Blocks, PenaltyKind};
use crate::risk::{generators, lambda_grid, risk_curve, CurveOptions, Observations, RiskCurve, RiskProblem};
use crate::sensitivity::SensitivityOptions;
use crate::{seeds, Matrix, Vector};

const DESIGN_STREAM: u64 = 0xde;
const MASK_STREAM: u64 = 0xc5;
const TRUTH_STREAM: u64 = 0x7a;

/// Everything derived from a configuration before any solve.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: RiskProblem,
    pub lambdas: Vec<f64>,
    pub options: CurveOptions,
    /// Coefficients `x₀` when the truth is known.
    pub x0: Option<Vector>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub curve: RiskCurve,
    /// Files written, in order.
    pub files: Vec<PathBuf>,
}

fn design(cfg: &ExperimentConfig) -> Result<LinearMap> {
    let seed = cfg.seed;
    Ok(match &cfg.design {
        DesignSpec::Identity { dim } => LinearMap::identity(*dim),
        DesignSpec::Gaussian { rows, cols } => {
            let v = seeds::normal_vector(&mut seeds::rng(seed, &[DESIGN_STREAM]), rows * cols) / (*rows as f64).sqrt();
            LinearMap::dense(Matrix::from_column_slice(*rows, *cols, v.as_slice()))
        }
        DesignSpec::Deconvolution { height, width, blur } => LinearMap::conv2d(Conv2d::gaussian(*height, *width, *blur)?),
        DesignSpec::CompressiveSensing { height, width, blur, ratio } => {
            let p = height * width;
            let keep = ((ratio * p as f64).round() as usize).clamp(1, p);
            let mut mask = sample(&mut seeds::rng(seed, &[MASK_STREAM]), p, keep).into_vec();
            mask.sort_unstable();
            let blur = LinearMap::conv2d(Conv2d::gaussian(*height, *width, *blur)?);
            LinearMap::compose(LinearMap::subsample(p, mask)?, blur)?
        }
        DesignSpec::Csv { path } => LinearMap::dense(io::read_matrix_csv(path)?),
    })
}

fn penalty(cfg: &ExperimentConfig, p: usize) -> Result<PenaltyKind> {
    let grid = || cfg.design.image_shape().expect("validated image design");
    Ok(match &cfg.penalty {
        PenaltySpec::Lasso => PenaltyKind::Lasso,
        PenaltySpec::GroupLasso { block_size: Some(b), .. } => {
            if p % b != 0 {
                return Err(ConfigError::invalid("penalty.block_size", format!("does not divide the dimension {p}")).into());
            }
            PenaltyKind::GroupLasso { blocks: Blocks::uniform(p / b, *b)? }
        }
        PenaltySpec::GroupLasso { blocks_csv, .. } => {
            let path = blocks_csv.as_ref().expect("validated block source");
            PenaltyKind::GroupLasso { blocks: Blocks::new(io::read_blocks_csv(path, p)?, p)? }
        }
        PenaltySpec::GeneralLasso { analysis_csv } => {
            let d = io::read_matrix_csv(analysis_csv)?;
            if d.ncols() != p {
                return Err(ConfigError::invalid(
                    "penalty.analysis_csv",
                    format!("has {} columns, the design has {p}", d.ncols()),
                )
                .into());
            }
            PenaltyKind::GeneralLasso { analysis: LinearMap::dense(d) }
        }
        PenaltySpec::Tv => {
            let (h, w) = grid();
            PenaltyKind::GeneralGroupLasso {
                analysis: LinearMap::grad2d(h, w),
                blocks: Blocks::uniform(h * w, 2)?,
            }
        }
        PenaltySpec::AnisotropicTv => {
            let (h, w) = grid();
            PenaltyKind::GeneralLasso { analysis: LinearMap::grad2d(h, w) }
        }
        PenaltySpec::Linf => PenaltyKind::Linf,
        PenaltySpec::Nuclear { rows, cols } => {
            if rows * cols != p {
                return Err(ConfigError::invalid("penalty", format!("{rows}×{cols} does not match the dimension {p}")).into());
            }
            PenaltyKind::Nuclear { rows: *rows, cols: *cols }
        }
        PenaltySpec::SphereHinge => PenaltyKind::SphereHinge,
    })
}

fn truth(cfg: &ExperimentConfig, x: &LinearMap) -> Result<(Option<Vector>, Observations)> {
    let p = x.cols();
    let mut rng = seeds::rng(cfg.seed, &[TRUTH_STREAM]);
    let x0 = match &cfg.truth {
        TruthSpec::Sparse { nonzeros, amplitude } => generators::sparse(&mut rng, p, *nonzeros, *amplitude),
        TruthSpec::GroupSparse { block_size, active, amplitude } => {
            if *block_size == 0 || p % block_size != 0 {
                return Err(ConfigError::invalid("truth.block_size", format!("must divide the dimension {p}")).into());
            }
            let blocks = Blocks::uniform(p / block_size, *block_size)?;
            generators::group_sparse(&mut rng, blocks.groups(), *active, *amplitude)
        }
        TruthSpec::PiecewiseConstant { rectangles, amplitude } => {
            let (h, w) = cfg.design.image_shape().expect("validated image design");
            generators::piecewise_constant(&mut rng, h, w, *rectangles, *amplitude).map(|v| v.min(*amplitude))
        }
        TruthSpec::Csv { path } => {
            let v = io::read_vector_csv(path)?;
            if v.len() != p {
                return Err(ConfigError::invalid("truth.path", format!("has {} entries, the design has {p} columns", v.len())).into());
            }
            v
        }
        TruthSpec::Pgm { path } => {
            let img = io::read_pgm(path)?;
            if Some((img.height, img.width)) != cfg.design.image_shape() {
                return Err(ConfigError::invalid("truth.path", format!("image is {}×{}", img.height, img.width)).into());
            }
            Vector::from_vec(img.pixels)
        }
        TruthSpec::Observed { path } => {
            let m = io::read_matrix_csv(path)?;
            if m.ncols() != x.rows() || m.nrows() < cfg.replications {
                return Err(ConfigError::invalid(
                    "truth.path",
                    format!("needs {} rows of length {}, found {}×{}", cfg.replications, x.rows(), m.nrows(), m.ncols()),
                )
                .into());
            }
            let ys = m.row_iter().map(|r| r.transpose()).collect();
            return Ok((None, Observations::Given(ys)));
        }
    };
    let mu0 = x.apply(&x0)?;
    Ok((Some(x0), Observations::Synthetic { mu0 }))
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let x = design(config)?;
        let kind = penalty(config, x.cols())?;
        let (x0, observations) = truth(config, &x)?;
        let g = &config.grid;
        let options = CurveOptions {
            solve: config.solver.solve_options(),
            sensitivity: SensitivityOptions {
                saddle: config.solver.saddle_options(),
                ..SensitivityOptions::default()
            },
            method: config.method.to_method(),
            warm_start: config.solver.warm_start,
        };
        Ok(Self {
            config: config.clone(),
            problem: RiskProblem {
                design: x,
                penalty: kind,
                sigma: config.sigma,
                observations,
            },
            lambdas: lambda_grid(g.lo, g.hi, g.count, g.log),
            options,
            x0,
        })
    }

    /// Observation of replication `rep`.
    pub fn observation(&self, rep: usize) -> Vector {
        self.problem.observation(self.config.seed, rep)
    }
}

fn write(path: PathBuf, body: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, body).map_err(|source| IoError::File { path: path.clone(), source })?;
    files.push(path);
    Ok(())
}

/// Run manifest: configuration, seeds, grid and versions. Contains no
/// timestamps so that repeated runs produce identical files.
fn manifest(exp: &Experiment, curve: &RiskCurve, files: &[PathBuf]) -> String {
    let value = json!({
        "tool": "pssure",
        "version": env!("CARGO_PKG_VERSION"),
        "config": exp.config,
        "seeds": {
            "experiment": exp.config.seed,
            "design_stream": [DESIGN_STREAM, MASK_STREAM],
            "truth_stream": [TRUTH_STREAM],
            "noise_stream": "[0x5e, replication]",
        },
        "lambdas": curve.lambdas,
        "replications": curve.replications,
        "sure_argmin": curve.sure_argmin().map(|k| curve.lambdas[k]),
        "risk_argmin": curve.risk_argmin().map(|k| curve.lambdas[k]),
        "files": files.iter().map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&value).expect("manifest is serializable");
    s.push('\n');
    s
}

/// Builds the experiment, evaluates the risk curve and, when an output
/// directory is configured, writes `cells.csv`, `summary.csv` and
/// `manifest.json` there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let exp = Experiment::build(config)?;
    let curve = risk_curve(&exp.problem, &exp.lambdas, config.replications, config.seed, &exp.options)?;
    let mut files = Vec::new();
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.clone(), source })?;
        write(dir.join("cells.csv"), &curve.cells_csv(), &mut files)?;
        write(dir.join("summary.csv"), &curve.summary_csv(), &mut files)?;
        let mut listed = files.clone();
        listed.push(dir.join("manifest.json"));
        let body = manifest(&exp, &curve, &listed);
        write(dir.join("manifest.json"), &body, &mut files)?;
    }
    Ok(ExperimentOutput { curve, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: Option<PathBuf>) -> ExperimentConfig {
        ExperimentConfig {
            design: DesignSpec::Gaussian { rows: 10, cols: 20 },
            penalty: PenaltySpec::Lasso,
            truth: TruthSpec::Sparse { nonzeros: 3, amplitude: 2.0 },
            grid: GridSpec { lo: 0.2, hi: 2.0, count: 3, log: true },
            sigma: 1.0,
            replications: 4,
            seed: 11,
            solver: SolverSpec::default(),
            method: MethodSpec::Closed,
            output: dir,
        }
    }

    #[test]
    fn one_row_per_cell() {
        let mut cfg = config(None);
        cfg.replications = 1;
        cfg.grid.count = 1;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.curve.cells_csv().lines().count(), 2);
        assert!(out.files.is_empty());
    }

    #[test]
    fn compressive_sensing_keeps_half_the_pixels() {
        let mut cfg = config(None);
        cfg.design = DesignSpec::CompressiveSensing { height: 6, width: 6, blur: 1.0, ratio: 0.5 };
        cfg.penalty = PenaltySpec::Tv;
        cfg.truth = TruthSpec::PiecewiseConstant { rectangles: 2, amplitude: 10.0 };
        let exp = Experiment::build(&cfg).unwrap();
        assert_eq!(exp.problem.design.rows(), 18);
        assert_eq!(exp.problem.design.cols(), 36);
    }

    #[test]
    fn group_size_must_divide() {
        let mut cfg = config(None);
        cfg.penalty = PenaltySpec::GroupLasso { block_size: Some(3), blocks_csv: None };
        match Experiment::build(&cfg) {
            Err(Error::Config(e)) => assert_eq!(e.key_path(), "penalty.block_size"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
