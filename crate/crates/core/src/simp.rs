//! The SIMP optimization loop: state solve, compliance sensitivities,
//! mesh-independency filtering and the optimality-criteria update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DensityField, MaterialModel, Problem};

/// Densities below this value are floored in the filter denominator.
const FILTER_DENSITY_FLOOR: f64 = 1e-3;
const OC_MAX_HALVINGS: usize = 200;
const OC_VOLUME_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpConfig {
    pub max_iters: usize,
    pub move_limit: f64,
    pub eta: f64,
    pub rmin: f64,
    pub material: MaterialModel,
}

impl Default for SimpConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            move_limit: 0.2,
            eta: 0.5,
            rmin: 1.5,
            material: MaterialModel::default(),
        }
    }
}

impl SimpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "move limit must lie in (0, 1], got {}",
                self.move_limit
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if !(self.rmin >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "filter radius must be >= 0, got {}",
                self.rmin
            )));
        }
        self.material.validate()
    }
}

/// Densities after every update of one SIMP run.
///
/// `frames[k]` is the design after update `k + 1`. `compliances[k]` is the
/// compliance of the design that entered update `k + 1` (so
/// `compliances[0]` belongs to the uniform starting field).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationHistory {
    pub problem: Problem,
    pub frames: Vec<DensityField>,
    pub compliances: Vec<f64>,
}

impl IterationHistory {
    /// The uniform `f0` field every run starts from.
    pub fn initial_frame(&self) -> DensityField {
        initial_design(&self.problem)
    }

    /// Design after `k` updates; `frame(0)` is the initial field.
    pub fn frame(&self, k: usize) -> DensityField {
        if k == 0 {
            self.initial_frame()
        } else {
            self.frames[k - 1].clone()
        }
    }

    pub fn final_frame(&self) -> &DensityField {
        self.frames.last().expect("history has at least one frame")
    }
}

pub fn initial_design(problem: &Problem) -> DensityField {
    DensityField::uniform(problem.nelx(), problem.nely(), problem.vol_frac())
        .expect("volume fraction is validated to lie in (0, 1)")
}

/// Radius-weighted average of `x_i dc_i`, divided by `x_j`.
pub fn filter_sensitivities(x: &DensityField, dc: &[f64], rmin: f64) -> Result<Vec<f64>> {
    let (nelx, nely) = (x.nelx(), x.nely());
    if dc.len() != nelx * nely {
        return Err(Error::shape(format!(
            "sensitivity has {} entries, field has {}",
            dc.len(),
            nelx * nely
        )));
    }
    if rmin <= 1.0 {
        return Ok(dc.to_vec());
    }
    let reach = rmin.ceil() as isize - 1;
    let xv = x.values();
    let mut out = vec![0.0; dc.len()];
    for ely in 0..nely as isize {
        for elx in 0..nelx as isize {
            let mut num = 0.0;
            let mut wsum = 0.0;
            for ky in (ely - reach).max(0)..=(ely + reach).min(nely as isize - 1) {
                for kx in (elx - reach).max(0)..=(elx + reach).min(nelx as isize - 1) {
                    let (dx, dy) = ((elx - kx) as f64, (ely - ky) as f64);
                    let w = rmin - (dx * dx + dy * dy).sqrt();
                    if w > 0.0 {
                        let i = ky as usize * nelx + kx as usize;
                        num += w * xv[i] * dc[i];
                        wsum += w;
                    }
                }
            }
            let j = ely as usize * nelx + elx as usize;
            out[j] = num / (wsum * xv[j].max(FILTER_DENSITY_FLOOR));
        }
    }
    Ok(out)
}

/// Optimality-criteria update with the volume multiplier found by geometric
/// bisection on `[1e-9, 1e9]`.
pub fn oc_update(
    x: &DensityField,
    dc: &[f64],
    f0: f64,
    move_limit: f64,
    eta: f64,
) -> Result<DensityField> {
    let xv = x.values();
    if dc.len() != xv.len() {
        return Err(Error::shape(format!(
            "sensitivity has {} entries, field has {}",
            dc.len(),
            xv.len()
        )));
    }
    if let Some(d) = dc.iter().find(|d| !(**d <= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "OC update needs nonpositive sensitivities, found {d}"
        )));
    }
    let n = xv.len() as f64;
    let mut xnew = vec![0.0; xv.len()];
    let update = |lambda: f64, out: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        for ((o, &xj), &dj) in out.iter_mut().zip(xv).zip(dc) {
            let lo = (xj - move_limit).max(0.0);
            let hi = (xj + move_limit).min(1.0);
            let ratio = -dj / lambda;
            let scale = if eta == 0.5 { ratio.sqrt() } else { ratio.powf(eta) };
            let v = (xj * scale).clamp(lo, hi);
            *o = v;
            sum += v;
        }
        sum / n
    };

    let (mut l1, mut l2) = (1e-9f64, 1e9f64);
    let mut vol = f64::NAN;
    for _ in 0..OC_MAX_HALVINGS {
        let mid = (l1 * l2).sqrt();
        vol = update(mid, &mut xnew);
        if (vol - f0).abs() < 1e-12 || mid <= l1 || mid >= l2 {
            break;
        }
        if vol > f0 {
            l1 = mid;
        } else {
            l2 = mid;
        }
    }
    if !((vol - f0).abs() <= OC_VOLUME_TOL) {
        return Err(Error::NumericFailure(format!(
            "OC bisection ended with volume {vol} (target {f0})"
        )));
    }
    DensityField::new(x.nelx(), x.nely(), xnew)
}

/// One SIMP iteration: solve, sensitivities, filter, OC update. Returns the
/// new design and the compliance of `x`.
pub fn step(problem: &Problem, x: &DensityField, cfg: &SimpConfig) -> Result<(DensityField, f64)> {
    let u = fem::assemble_and_solve(problem, x, &cfg.material)?;
    let (c, dc) = fem::compliance_and_sensitivity(problem, x, &cfg.material, &u)?;
    let dcf = filter_sensitivities(x, &dc, cfg.rmin)?;
    let xnew = oc_update(x, &dcf, problem.vol_frac(), cfg.move_limit, cfg.eta)?;
    Ok((xnew, c))
}

/// Runs exactly `cfg.max_iters` SIMP iterations from the uniform design.
pub fn optimize(problem: &Problem, cfg: &SimpConfig) -> Result<IterationHistory> {
    cfg.validate()?;
    let mut x = initial_design(problem);
    let mut frames = Vec::with_capacity(cfg.max_iters);
    let mut compliances = Vec::with_capacity(cfg.max_iters);
    for it in 1..=cfg.max_iters {
        let (next, c) = step(problem, &x, cfg).map_err(|e| e.at_iteration(it))?;
        compliances.push(c);
        frames.push(next.clone());
        x = next;
    }
    Ok(IterationHistory {
        problem: problem.clone(),
        frames,
        compliances,
    })
}
