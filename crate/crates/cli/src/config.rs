//! Experiment configuration: TOML-backed, fully defaulted, validated
//! before any compute starts.

use serde::{Deserialize, Serialize};
use warpfield::covariance::{CovKind, CovarianceModel};
use warpfield::deform::{Deformation, ScalarMap, SpiralSpec};
use warpfield::expr::Expr;
use warpfield::field::GridSpec;
use warpfield::geom::{Mat2, Vec2};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub deformation: DeformationConfig,
    pub grid: GridConfig,
    pub experiment: ExperimentConfig,
    pub estimate: EstimateConfig,
    pub isotropy: IsotropyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// "gaussian-exp" | "powered-exp" | "matern"
    pub kind: String,
    /// Exponent of the powered-exponential family, in (0, 2].
    pub power: f64,
    /// Matern smoothness, > 2.
    pub smoothness: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: "gaussian-exp".into(),
            power: 1.5,
            smoothness: 2.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationConfig {
    /// "identity" | "linear" | "scaled-rotation" | "tensorial" | "spiral"
    pub kind: String,
    /// Row-major 2x2 matrix for "linear".
    pub matrix: [[f64; 2]; 2],
    /// Scale and angle for "scaled-rotation".
    pub lambda: f64,
    pub alpha: f64,
    /// Coordinate expressions in `s` / `t` for "tensorial".
    pub theta1: String,
    pub theta2: String,
    /// Radial and angular expressions in `r` for "spiral".
    pub f: String,
    pub g: String,
    /// Half-extent of the positivity probe lattice.
    pub probe_box: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            kind: "identity".into(),
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            lambda: 1.0,
            alpha: 0.0,
            theta1: "s".into(),
            theta2: "t".into(),
            f: "r".into(),
            g: "0".into(),
            probe_box: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub shape: [usize; 2],
    /// Spectral upsampling factor for off-lattice evaluation.
    pub upsample: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            origin: [0.0, 0.0],
            spacing: 0.2,
            shape: [51, 51],
            upsample: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub reps: u64,
    pub levels: Vec<f64>,
    pub out_dir: String,
    /// Half-extent S of the identification square [-S, S]^2.
    pub s_max: f64,
    /// Uniform step of the partition sigma.
    pub sigma_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            reps: 100,
            levels: vec![1.0],
            out_dir: "out".into(),
            s_max: 0.5,
            sigma_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Base point in polar coordinates (r0, phi0).
    pub point: [f64; 2],
    pub schedule: Vec<usize>,
    pub u: f64,
    /// Lattice spacing of the estimator grids; 0 picks 1/(8 max N).
    pub spacing: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            point: [2.0, 0.0],
            schedule: vec![8, 12, 16, 24, 32],
            u: 1.0,
            spacing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsotropyConfig {
    /// Signed extents of the base rectangle.
    pub rect: [f64; 2],
    pub rect_translation: [f64; 2],
    pub angles: Vec<f64>,
    pub u: f64,
}

impl Default for IsotropyConfig {
    fn default() -> Self {
        IsotropyConfig {
            rect: [1.0, 1.0],
            rect_translation: [1.0, 0.0],
            angles: vec![0.3, std::f64::consts::FRAC_PI_4, 1.2, 2.4],
            u: 1.0,
        }
    }
}

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("cannot parse config: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical serialized config, stamped into
    /// outputs. The output directory is excluded: it addresses where
    /// results go, not what was computed.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.experiment.out_dir = String::new();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in canonical.to_toml().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn build_model(&self) -> Result<CovarianceModel, String> {
        let kind = match self.model.kind.as_str() {
            "gaussian-exp" => CovKind::GaussianExp,
            "powered-exp" => CovKind::PoweredExp(self.model.power),
            "matern" => CovKind::MaternLike(self.model.smoothness),
            other => return Err(format!("unknown model kind `{other}`")),
        };
        CovarianceModel::new(kind).map_err(|e| e.to_string())
    }

    pub fn build_deformation(&self) -> Result<Deformation, String> {
        let d = &self.deformation;
        match d.kind.as_str() {
            "identity" => Ok(Deformation::identity()),
            "linear" => {
                let m = Mat2::new(
                    d.matrix[0][0],
                    d.matrix[0][1],
                    d.matrix[1][0],
                    d.matrix[1][1],
                );
                Deformation::linear(m).map_err(|e| e.to_string())
            }
            "scaled-rotation" => {
                Deformation::scaled_rotation(d.lambda, d.alpha).map_err(|e| e.to_string())
            }
            "tensorial" => {
                let e1 = Expr::parse(&d.theta1, 's').map_err(|e| e.to_string())?;
                let e2 = Expr::parse(&d.theta2, 't').map_err(|e| e.to_string())?;
                Deformation::tensorial(
                    ScalarMap::from_expr(&e1),
                    ScalarMap::from_expr(&e2),
                    d.probe_box,
                )
                .map_err(|e| e.to_string())
            }
            "spiral" => {
                let ef = Expr::parse(&d.f, 'r').map_err(|e| e.to_string())?;
                let eg = Expr::parse(&d.g, 'r').map_err(|e| e.to_string())?;
                let spec = SpiralSpec::new(ScalarMap::from_expr(&ef), ScalarMap::from_expr(&eg))
                    .map_err(|e| e.to_string())?;
                Deformation::spiral(spec, d.probe_box).map_err(|e| e.to_string())
            }
            other => Err(format!("unknown deformation kind `{other}`")),
        }
    }

    pub fn build_grid(&self) -> Result<GridSpec, String> {
        GridSpec::new(
            Vec2::new(self.grid.origin[0], self.grid.origin[1]),
            self.grid.spacing,
            (self.grid.shape[0], self.grid.shape[1]),
        )
        .map_err(|e| e.to_string())
    }

    /// The uniform partition of [-S, S].
    pub fn sigma(&self) -> Result<Vec<f64>, String> {
        let s = self.experiment.s_max;
        let step = self.experiment.sigma_step;
        if !(s > 0.0) || !(step > 0.0) {
            return Err(format!(
                "invalid partition: s_max = {s}, sigma_step = {step}"
            ));
        }
        let n = (2.0 * s / step).round() as usize;
        if ((2.0 * s / step) - n as f64).abs() > 1e-9 {
            return Err(format!(
                "sigma_step {step} does not divide the square side {}",
                2.0 * s
            ));
        }
        Ok((0..=n).map(|i| -s + i as f64 * step).collect())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.build_model()?;
        self.build_deformation()?;
        self.build_grid()?;
        self.sigma()?;
        for &u in &self.experiment.levels {
            if !u.is_finite() {
                return Err(format!("level {u} is not finite"));
            }
        }
        if self.estimate.schedule.is_empty() {
            return Err("empty estimator schedule".into());
        }
        if self.estimate.u == 0.0 {
            return Err("estimator level u must be nonzero".into());
        }
        Ok(())
    }
}
