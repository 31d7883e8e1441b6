//! Random problem sampling, dataset generation and the `TOPD` dataset format.
//!
//! Draw order per sampling attempt (all from the caller's generator):
//! `N_x`, `N_y`, `N_L` counts, then `f0`, then the `N_x` x-fixed nodes, the
//! `N_y` y-fixed nodes and the `N_L` load nodes (each load node followed by a
//! direction bit when directions are sampled). An attempt with any zero count
//! or an ill-posed result is discarded and the next attempt starts afresh.

mod format;
mod generate;

pub use format::{
    parse_dataset, read_dataset, sidecar_path, write_dataset, Dataset, DatasetMeta, DatasetReader,
    DatasetRecord, DatasetWriter, FrameStack, GenerationInfo, RecordIndex, VerifyReport, MAGIC,
    VERSION,
};
pub use generate::{generate_dataset, generate_records, GenerationReport};

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, node_index, MaterialModel, Physics, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadDirection {
    /// Every load pushes down on the y dof.
    Down,
    /// Each load picks the x or y dof with equal probability.
    Uniform,
}

impl std::str::FromStr for LoadDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Self::Down),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown load direction '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub nelx: usize,
    pub nely: usize,
    pub physics: Physics,
    pub lambda_fixed_x: f64,
    pub lambda_fixed_y: f64,
    pub lambda_loads: f64,
    pub boundary_weight: f64,
    pub f0_mean: f64,
    pub f0_std: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub load_direction: LoadDirection,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            nelx: 40,
            nely: 40,
            physics: Physics::Mechanical,
            lambda_fixed_x: 2.0,
            lambda_fixed_y: 1.0,
            lambda_loads: 1.0,
            boundary_weight: 100.0,
            f0_mean: 0.5,
            f0_std: 0.1,
            f0_min: 0.2,
            f0_max: 0.8,
            load_direction: LoadDirection::Down,
            max_attempts: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, n) in [("nelx", self.nelx), ("nely", self.nely)] {
            if n < 4 || n % 4 != 0 || n > u16::MAX as usize {
                return bad(format!("{name} must be a multiple of 4 in [4, 65532], got {n}"));
            }
        }
        for (name, l) in [
            ("lambda_fixed_x", self.lambda_fixed_x),
            ("lambda_fixed_y", self.lambda_fixed_y),
            ("lambda_loads", self.lambda_loads),
        ] {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("{name} must be positive, got {l}"));
            }
        }
        if !(self.boundary_weight >= 1.0 && self.boundary_weight.is_finite()) {
            return bad(format!(
                "boundary_weight must be >= 1, got {}",
                self.boundary_weight
            ));
        }
        if !(self.f0_std >= 0.0 && self.f0_std.is_finite() && self.f0_mean.is_finite()) {
            return bad(format!(
                "f0 distribution N({}, {}) is invalid",
                self.f0_mean, self.f0_std
            ));
        }
        if !(self.f0_min > 0.0 && self.f0_min <= self.f0_max && self.f0_max < 1.0) {
            return bad(format!(
                "f0 clamp range [{}, {}] must lie inside (0, 1)",
                self.f0_min, self.f0_max
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        Ok(())
    }
}

/// Picks grid nodes with boundary nodes `boundary_weight` times as likely
/// as interior ones.
#[derive(Debug, Clone)]
pub struct NodeSampler {
    nelx: usize,
    nely: usize,
    dist: WeightedIndex<f64>,
}

impl NodeSampler {
    pub fn new(nelx: usize, nely: usize, boundary_weight: f64) -> Result<Self> {
        let mut w = vec![0.0; (nelx + 1) * (nely + 1)];
        for ix in 0..=nelx {
            for iy in 0..=nely {
                let edge = ix == 0 || ix == nelx || iy == 0 || iy == nely;
                w[node_index(ix, iy, nely)] = if edge { boundary_weight } else { 1.0 };
            }
        }
        let dist = WeightedIndex::new(&w)
            .map_err(|e| Error::InvalidParameter(format!("node weights: {e}")))?;
        Ok(Self { nelx, nely, dist })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (ix, iy) = (node / (self.nely + 1), node % (self.nely + 1));
        ix == 0 || ix == self.nelx || iy == 0 || iy == self.nely
    }

    /// Distinct nodes from `count` draws with replacement.
    fn sample_set(&self, count: usize, rng: &mut impl Rng) -> BTreeSet<usize> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Raw Poisson counts of one sampling attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountDraw {
    pub fixed_x: usize,
    pub fixed_y: usize,
    pub loads: usize,
}

impl CountDraw {
    fn has_zero(&self, physics: Physics) -> bool {
        let supports = match physics {
            Physics::Mechanical => self.fixed_x == 0 || self.fixed_y == 0,
            Physics::Heat => self.fixed_x + self.fixed_y == 0,
        };
        supports || self.loads == 0
    }
}

#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    nodes: NodeSampler,
    fixed_x: Poisson<f64>,
    fixed_y: Poisson<f64>,
    loads: Poisson<f64>,
    f0: Normal<f64>,
    material: MaterialModel,
}

/// Outcome of [`Sampler::sample`] with its rejection bookkeeping.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub problem: Problem,
    /// Counts of every attempt, including the accepted last one.
    pub draws: Vec<CountDraw>,
    pub zero_count_redraws: usize,
    pub ill_posed_rejections: usize,
    pub f0_clamped: bool,
}

impl Sampler {
    pub fn new(cfg: &SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let poisson = |l: f64| {
            Poisson::new(l).map_err(|e| Error::InvalidParameter(format!("Poisson({l}): {e}")))
        };
        Ok(Self {
            cfg: cfg.clone(),
            nodes: NodeSampler::new(cfg.nelx, cfg.nely, cfg.boundary_weight)?,
            fixed_x: poisson(cfg.lambda_fixed_x)?,
            fixed_y: poisson(cfg.lambda_fixed_y)?,
            loads: poisson(cfg.lambda_loads)?,
            f0: Normal::new(cfg.f0_mean, cfg.f0_std)
                .map_err(|e| Error::InvalidParameter(format!("f0 distribution: {e}")))?,
            material: MaterialModel::default(),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &NodeSampler {
        &self.nodes
    }

    pub fn draw_counts(&self, rng: &mut impl Rng) -> CountDraw {
        // Poisson samples are non-negative integers stored as f64.
        CountDraw {
            fixed_x: self.fixed_x.sample(rng) as usize,
            fixed_y: self.fixed_y.sample(rng) as usize,
            loads: self.loads.sample(rng) as usize,
        }
    }

    /// Samples until a well-posed problem appears or attempts run out.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<SampleTrace> {
        let mut draws = Vec::new();
        let (mut zero, mut ill) = (0, 0);
        for _ in 0..self.cfg.max_attempts {
            let counts = self.draw_counts(rng);
            draws.push(counts);
            let raw_f0 = self.f0.sample(rng);
            let f0 = raw_f0.clamp(self.cfg.f0_min, self.cfg.f0_max);
            let (fixed, loads) = self.place(counts, rng);
            if counts.has_zero(self.cfg.physics) {
                zero += 1;
                continue;
            }
            let problem = Problem::new(
                self.cfg.nelx,
                self.cfg.nely,
                self.cfg.physics,
                fixed,
                loads,
                f0,
            )?;
            match fem::check_well_posed(&problem, &self.material) {
                Ok(()) => {
                    return Ok(SampleTrace {
                        problem,
                        draws,
                        zero_count_redraws: zero,
                        ill_posed_rejections: ill,
                        f0_clamped: f0 != raw_f0,
                    })
                }
                Err(Error::IllPosed(_) | Error::SolverFailure { .. }) => ill += 1,
                Err(e) => return Err(e),
            }
        }
        Err(Error::SamplingFailure {
            attempts: self.cfg.max_attempts,
        })
    }

    fn place(&self, counts: CountDraw, rng: &mut impl Rng) -> (Vec<usize>, Vec<(usize, f64)>) {
        let nodes_x = self.nodes.sample_set(counts.fixed_x, rng);
        let nodes_y = self.nodes.sample_set(counts.fixed_y, rng);
        let mut load_dofs = BTreeSet::new();
        for _ in 0..counts.loads {
            let n = self.nodes.sample(rng);
            let dof = match (self.cfg.physics, self.cfg.load_direction) {
                (Physics::Heat, _) => n,
                (Physics::Mechanical, LoadDirection::Down) => 2 * n + 1,
                (Physics::Mechanical, LoadDirection::Uniform) => 2 * n + rng.random_range(0..2),
            };
            load_dofs.insert(dof);
        }
        let fixed = match self.cfg.physics {
            Physics::Mechanical => nodes_x
                .iter()
                .map(|n| 2 * n)
                .chain(nodes_y.iter().map(|n| 2 * n + 1))
                .collect(),
            // Both node sets hold the temperature at zero.
            Physics::Heat => nodes_x.union(&nodes_y).copied().collect(),
        };
        let loads = load_dofs.into_iter().map(|d| (d, -1.0)).collect();
        (fixed, loads)
    }
}

pub fn sample_problem(cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<Problem> {
    Ok(Sampler::new(cfg)?.sample(rng)?.problem)
}
