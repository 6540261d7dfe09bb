use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::OptimizerConfig;
use crate::physics_loss::{LossWeights, Reduction};
use crate::problem::{benchmark, singular_1d, FluxConvention, ProblemSpec};

/// How raw network outputs become basis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMapKind {
    /// Per-coefficient shift and scale from the oracle ranges.
    Range,
    /// Outputs in the singular coordinates of the weighted residual
    /// Jacobian, scaled by their oracle ranges.
    Jacobian,
}

/// Every knob of a run. Unknown keys are rejected when read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: String,
    /// Diffusion override for the 1d-singular family.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub train_resolution: [usize; 2],
    pub test_resolution: [usize; 2],
    pub length_scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub loss_weights: LossWeights,
    pub reduction: Reduction,
    pub flux_convention: FluxConvention,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Pins training to one thread.
    pub deterministic: bool,
    pub points_per_edge: usize,
    pub quad_order: usize,
    pub output_map: OutputMapKind,
    /// Oracle coefficient ranges are mapped into `±1/output_margin`.
    pub output_margin: f64,
    /// Reference grid refinement over the test resolution.
    pub reference_refine: usize,
    /// Samples whose profiles are written as plot data.
    pub plot_samples: usize,
}

impl RunConfig {
    /// Laptop-scale defaults: 200 training samples, 2000 steps. 1D runs
    /// use the whole training set as one batch.
    pub fn desk(benchmark: &str) -> Result<Self> {
        let spec = crate::problem::benchmark(benchmark)?;
        let two_d = spec.dim() == 2;
        Ok(RunConfig {
            benchmark: benchmark.to_string(),
            epsilon: None,
            train_resolution: if two_d { [16, 16] } else { [32, 1] },
            test_resolution: if two_d { [128, 128] } else { [256, 1] },
            length_scale: if two_d { 0.25 } else { 0.2 },
            n_train: 200,
            n_test: 20,
            loss_weights: LossWeights::default(),
            reduction: Reduction::Sum,
            flux_convention: FluxConvention::Derivative,
            optimizer: OptimizerConfig { lr: 1e-3, ..OptimizerConfig::default() },
            steps: 2000,
            batch_size: if two_d { 20 } else { 200 },
            seed: 0,
            deterministic: true,
            points_per_edge: 1,
            quad_order: 8,
            output_map: OutputMapKind::Jacobian,
            output_margin: 1.25,
            reference_refine: 1,
            plot_samples: 3,
        })
    }

    /// Full-scale preset: 1000/200 samples and 20000 steps.
    pub fn full(benchmark: &str) -> Result<Self> {
        let desk = Self::desk(benchmark)?;
        let batch_size = if desk.train_resolution[1] == 1 { 1000 } else { desk.batch_size };
        Ok(RunConfig { n_train: 1000, n_test: 200, steps: 20000, batch_size, optimizer: OptimizerConfig::default(), ..desk })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let mut spec = match (self.benchmark.as_str(), self.epsilon) {
            ("1d-singular", Some(eps)) => singular_1d(eps),
            (_, Some(_)) => return Err(Error::Config(format!("epsilon applies to 1d-singular only, not {}", self.benchmark))),
            (name, None) => benchmark(name)?,
        };
        spec.flux_convention = self.flux_convention;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.problem()?;
        let res_ok = |r: [usize; 2]| r[0] > 0 && r[1] > 0 && (spec.dim() == 2 || r[1] == 1);
        if !res_ok(self.train_resolution) || !res_ok(self.test_resolution) {
            return Err(Error::Config("resolutions must be positive, with a y count of 1 in 1D".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(Error::Config(format!("length scale must be positive, got {}", self.length_scale)));
        }
        if self.batch_size == 0 || self.points_per_edge == 0 || self.reference_refine == 0 {
            return Err(Error::Config("batch size, points per edge and refinement must be positive".into()));
        }
        if !(self.output_margin > 0.0) {
            return Err(Error::Config("output margin must be positive".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        self.loss_weights.validate()?;
        self.optimizer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = RunConfig::desk("1d-smooth").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        let extra = text.replacen('{', "{\"bogus\":1,", 1);
        assert!(matches!(RunConfig::from_json(&extra), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = RunConfig::desk("2d-interface").unwrap();
        c.n_train = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::desk("1d-smooth").unwrap();
        c.epsilon = Some(1e-3);
        assert!(c.validate().is_err());
        c.benchmark = "1d-singular".into();
        assert!(c.validate().is_ok());
        assert!(matches!(RunConfig::desk("nope"), Err(Error::UnknownBenchmark(_))));
    }
}
