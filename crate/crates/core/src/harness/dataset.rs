use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::container::{read_file, take, write_file, NamedArray, DATA_MAGIC};
use super::sampling::{FieldGrid, SourceSampler, SourceSpline};
use crate::error::{Error, Result};
use crate::physics_loss::Discretization;
use crate::problem::ProblemSpec;
use crate::reconstruction::evaluation_points;
use crate::reference::{solve_reference, Oracle};

/// Test samples draw from streams above this offset so that the splits
/// never share a source field.
pub const TEST_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub split: Split,
    pub benchmark: String,
    pub epsilon: Option<f64>,
    pub problem: ProblemSpec,
    pub train_resolution: [usize; 2],
    pub test_resolution: [usize; 2],
    pub field_grid: FieldGrid,
    pub length_scale: f64,
    /// Diagonal jitter the covariance factorization used.
    pub jitter: f64,
    pub seed: u64,
    pub first_index: u64,
    pub n_samples: usize,
    /// Finite-difference grid behind the reference arrays.
    pub reference_solve_resolution: Option<[usize; 2]>,
    pub created_by: String,
}

/// Source samples on the field grid with optional reference solutions on
/// the evaluation grid and optional least-squares coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub f: Vec<f64>,
    pub reference: Option<Vec<f64>>,
    pub oracle: Option<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.header.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self, i: usize) -> &[f64] {
        let n = self.header.field_grid.len();
        &self.f[i * n..(i + 1) * n]
    }

    pub fn source(&self, i: usize) -> Result<SourceSpline> {
        self.header.field_grid.interpolant(self.field(i))
    }

    pub fn n_eval_points(&self) -> usize {
        evaluation_points(&self.header.problem, self.header.test_resolution).len()
    }

    pub fn reference_row(&self, i: usize) -> Result<&[f64]> {
        let r = self.reference.as_ref().ok_or(Error::MissingReference)?;
        let n = self.n_eval_points();
        Ok(&r[i * n..(i + 1) * n])
    }

    /// Fails with a mesh mismatch when the file was made for another setup.
    pub fn check_against(&self, config: &RunConfig) -> Result<()> {
        let h = &self.header;
        let problem = config.problem()?;
        if h.benchmark != config.benchmark || h.epsilon != config.epsilon {
            return Err(Error::MeshMismatch(format!("dataset is for {} but the run is for {}", h.benchmark, config.benchmark)));
        }
        if h.problem != problem {
            return Err(Error::MeshMismatch("dataset problem definition differs from the run".into()));
        }
        if h.train_resolution != config.train_resolution || h.test_resolution != config.test_resolution {
            return Err(Error::MeshMismatch(format!(
                "dataset meshes {:?}/{:?}, run meshes {:?}/{:?}",
                h.train_resolution, h.test_resolution, config.train_resolution, config.test_resolution
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.len();
        let mut arrays = vec![NamedArray::new("f", vec![n, self.header.field_grid.len()], self.f.clone())?];
        if let Some(r) = &self.reference {
            arrays.push(NamedArray::new("reference", vec![n, self.n_eval_points()], r.clone())?);
        }
        if let Some(c) = &self.oracle {
            arrays.push(NamedArray::new("oracle", vec![n, c.len() / n.max(1)], c.clone())?);
        }
        write_file(path, DATA_MAGIC, &self.header, &arrays)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, mut arrays): (DatasetHeader, _) = read_file(path, DATA_MAGIC)?;
        let f = take(&mut arrays, "f").ok_or_else(|| Error::Format("no source array".into()))?;
        if f.spec.shape != [header.n_samples, header.field_grid.len()] {
            return Err(Error::Format(format!("source array shape {:?} disagrees with the header", f.spec.shape)));
        }
        let d = Dataset {
            reference: take(&mut arrays, "reference").map(|a| a.data),
            oracle: take(&mut arrays, "oracle").map(|a| a.data),
            header,
            f: f.data,
        };
        if let Some(r) = &d.reference {
            if r.len() != d.len() * d.n_eval_points() {
                return Err(Error::Format("reference array does not match the evaluation grid".into()));
            }
        }
        Ok(d)
    }
}

/// Least-squares coefficients of every sample, row-major.
pub fn oracle_coefficients(disc: &Discretization, oracle: &Oracle, data: &Dataset) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| oracle.solve(&disc.offsets(&data.source(i)?)?))
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Reference solutions on the evaluation grid and the solve resolution.
pub fn reference_solutions(spec: &ProblemSpec, data: &Dataset, resolution: [usize; 2], refine: usize) -> Result<(Vec<f64>, [usize; 2])> {
    let sols = (0..data.len())
        .into_par_iter()
        .map(|i| solve_reference(spec, &data.source(i)?, resolution, refine))
        .collect::<Result<Vec<_>>>()?;
    let solve = sols.first().map_or(resolution, |s| s.solve_resolution);
    Ok((sols.into_iter().flat_map(|s| s.values).collect(), solve))
}

/// Draws one split. Test splits carry references when `with_reference`.
pub fn generate(config: &RunConfig, split: Split, with_reference: bool, with_oracle: bool) -> Result<Dataset> {
    config.validate()?;
    let spec = config.problem()?;
    let grid = FieldGrid::for_spec(&spec);
    let sampler = SourceSampler::new(grid, config.length_scale)?;
    let (n, first) = match split {
        Split::Train => (config.n_train, 0),
        Split::Test => (config.n_test, TEST_STREAM_OFFSET),
    };
    let f: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| sampler.sample(config.seed, first + i))
        .collect::<Vec<_>>()
        .concat();
    let header = DatasetHeader {
        split,
        benchmark: config.benchmark.clone(),
        epsilon: config.epsilon,
        problem: spec.clone(),
        train_resolution: config.train_resolution,
        test_resolution: config.test_resolution,
        field_grid: grid,
        length_scale: config.length_scale,
        jitter: sampler.jitter(),
        seed: config.seed,
        first_index: first,
        n_samples: n,
        reference_solve_resolution: None,
        created_by: format!("tfponet {}", env!("CARGO_PKG_VERSION")),
    };
    let mut data = Dataset { header, f, reference: None, oracle: None };
    if with_reference {
        let (r, solve) = reference_solutions(&spec, &data, config.test_resolution, config.reference_refine)?;
        data.reference = Some(r);
        data.header.reference_solve_resolution = Some(solve);
    }
    if with_oracle {
        let disc = Discretization::new(&spec, config.train_resolution, config.points_per_edge, config.quad_order)?;
        let oracle = Oracle::new(&disc, &config.loss_weights, config.reduction)?;
        data.oracle = Some(oracle_coefficients(&disc, &oracle, &data)?);
    }
    Ok(data)
}

/// Writes `train.tfpo` and `test.tfpo` into `dir`.
pub fn gen_data(config: &RunConfig, dir: &Path, with_oracle: bool) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let train = generate(config, Split::Train, false, with_oracle)?;
    let test = generate(config, Split::Test, true, with_oracle)?;
    let (tp, sp) = (dir.join("train.tfpo"), dir.join("test.tfpo"));
    train.write(&tp)?;
    test.write(&sp)?;
    Ok((tp, sp))
}
