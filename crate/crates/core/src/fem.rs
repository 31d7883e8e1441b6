//! Finite-element analysis on a regular grid of unit square bilinear elements.
//!
//! Numbering conventions (shared with the problem JSON format):
//!
//! * Nodes are column-major. Node `(ix, iy)`, with `ix` in `0..=nelx` counted
//!   from the left and `iy` in `0..=nely` counted from the top, has index
//!   `ix * (nely + 1) + iy`.
//! * Mechanical problems have two interleaved dofs per node: `2 * node` is the
//!   x translation and `2 * node + 1` the y translation (positive y points up,
//!   so a load of `-1` on a y dof pushes down).
//! * Heat problems have one dof per node, the nodal temperature.
//! * Element `(elx, ely)` lives at index `ely * nelx + elx` of a
//!   [`DensityField`] (row-major, top row first).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandedSpd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Physics {
    Mechanical,
    Heat,
}

impl Physics {
    pub fn dofs_per_node(self) -> usize {
        match self {
            Physics::Mechanical => 2,
            Physics::Heat => 1,
        }
    }

    fn dofs_per_element(self) -> usize {
        4 * self.dofs_per_node()
    }
}

impl std::fmt::Display for Physics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Physics::Mechanical => f.write_str("mechanical"),
            Physics::Heat => f.write_str("heat"),
        }
    }
}

impl std::str::FromStr for Physics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mechanical" => Ok(Physics::Mechanical),
            "heat" => Ok(Physics::Heat),
            other => Err(Error::InvalidParameter(format!("unknown physics '{other}'"))),
        }
    }
}

/// Index of node `(ix, iy)` on a grid with `nely` element rows.
#[inline]
pub fn node_index(ix: usize, iy: usize, nely: usize) -> usize {
    ix * (nely + 1) + iy
}

/// Corner nodes of element `(elx, ely)`, counterclockwise from lower-left:
/// `[LL, LR, UR, UL]`.
#[inline]
pub fn element_nodes(elx: usize, ely: usize, nely: usize) -> [usize; 4] {
    let ul = node_index(elx, ely, nely);
    let ur = node_index(elx + 1, ely, nely);
    [ul + 1, ur + 1, ur, ul]
}

/// A single-load-case design problem on an `nelx × nely` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct Problem {
    nelx: usize,
    nely: usize,
    physics: Physics,
    fixed_dofs: Vec<usize>,
    loads: Vec<(usize, f64)>,
    vol_frac: f64,
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    nelx: usize,
    nely: usize,
    physics: Physics,
    fixed_dofs: Vec<usize>,
    loads: Vec<(usize, f64)>,
    vol_frac: f64,
}

impl TryFrom<RawProblem> for Problem {
    type Error = Error;

    fn try_from(r: RawProblem) -> Result<Self> {
        Problem::new(r.nelx, r.nely, r.physics, r.fixed_dofs, r.loads, r.vol_frac)
    }
}

impl From<Problem> for RawProblem {
    fn from(p: Problem) -> Self {
        RawProblem {
            nelx: p.nelx,
            nely: p.nely,
            physics: p.physics,
            fixed_dofs: p.fixed_dofs,
            loads: p.loads,
            vol_frac: p.vol_frac,
        }
    }
}

impl Problem {
    /// Validates and normalizes a problem. Fixed dofs are sorted and
    /// deduplicated; loads keep their given order.
    pub fn new(
        nelx: usize,
        nely: usize,
        physics: Physics,
        mut fixed_dofs: Vec<usize>,
        loads: Vec<(usize, f64)>,
        vol_frac: f64,
    ) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(Error::InvalidProblem(format!(
                "grid must have at least one element, got {nelx}x{nely}"
            )));
        }
        if nelx > u16::MAX as usize || nely > u16::MAX as usize {
            return Err(Error::InvalidProblem(format!(
                "grid {nelx}x{nely} exceeds {} elements per side",
                u16::MAX
            )));
        }
        if !(vol_frac > 0.0 && vol_frac < 1.0) {
            return Err(Error::InvalidProblem(format!(
                "volume fraction must lie in (0, 1), got {vol_frac}"
            )));
        }
        if fixed_dofs.is_empty() {
            return Err(Error::InvalidProblem("no fixed dofs".into()));
        }
        if loads.is_empty() {
            return Err(Error::InvalidProblem("no loads".into()));
        }
        let ndof = (nelx + 1) * (nely + 1) * physics.dofs_per_node();
        if let Some(&d) = fixed_dofs.iter().find(|&&d| d >= ndof) {
            return Err(Error::InvalidProblem(format!(
                "fixed dof {d} out of range (dof count {ndof})"
            )));
        }
        for &(d, f) in &loads {
            if d >= ndof {
                return Err(Error::InvalidProblem(format!(
                    "load dof {d} out of range (dof count {ndof})"
                )));
            }
            if !f.is_finite() {
                return Err(Error::InvalidProblem(format!("load on dof {d} is not finite")));
            }
        }
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        Ok(Self {
            nelx,
            nely,
            physics,
            fixed_dofs,
            loads,
            vol_frac,
        })
    }

    /// The classic half MBB beam: symmetry rollers on the left edge, a roller
    /// at the bottom-right corner and a unit downward load at the top-left.
    pub fn half_mbb(nelx: usize, nely: usize, vol_frac: f64) -> Result<Self> {
        let mut fixed: Vec<usize> = (0..=nely).map(|iy| 2 * node_index(0, iy, nely)).collect();
        fixed.push(2 * node_index(nelx, nely, nely) + 1);
        let load = 2 * node_index(0, 0, nely) + 1;
        Self::new(nelx, nely, Physics::Mechanical, fixed, vec![(load, -1.0)], vol_frac)
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn physics(&self) -> Physics {
        self.physics
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    pub fn loads(&self) -> &[(usize, f64)] {
        &self.loads
    }

    pub fn vol_frac(&self) -> f64 {
        self.vol_frac
    }

    pub fn num_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn num_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn num_dofs(&self) -> usize {
        self.num_nodes() * self.physics.dofs_per_node()
    }

    /// Largest `|i - j|` over dof pairs sharing an element.
    pub fn half_bandwidth(&self) -> usize {
        match self.physics {
            Physics::Mechanical => 2 * self.nely + 5,
            Physics::Heat => self.nely + 2,
        }
    }

    /// Global dofs of element `e` in local matrix order; returns the count.
    pub fn element_dofs(&self, e: usize, out: &mut [usize; 8]) -> usize {
        let (elx, ely) = (e % self.nelx, e / self.nelx);
        let nodes = element_nodes(elx, ely, self.nely);
        match self.physics {
            Physics::Mechanical => {
                for (k, n) in nodes.iter().enumerate() {
                    out[2 * k] = 2 * n;
                    out[2 * k + 1] = 2 * n + 1;
                }
                8
            }
            Physics::Heat => {
                out[..4].copy_from_slice(&nodes);
                4
            }
        }
    }

    /// Global load vector with contributions on the same dof summed.
    pub fn load_vector(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.num_dofs()];
        for &(d, v) in &self.loads {
            f[d] += v;
        }
        f
    }

    fn fixed_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_dofs()];
        for &d in &self.fixed_dofs {
            mask[d] = true;
        }
        mask
    }
}

/// Element densities, row-major `nely × nelx`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    nelx: usize,
    nely: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(nelx: usize, nely: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nelx * nely {
            return Err(Error::shape(format!(
                "density field {nelx}x{nely} needs {} values, got {}",
                nelx * nely,
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(Error::InvalidParameter(format!(
                "density {v} at element {i} outside [0, 1]"
            )));
        }
        Ok(Self { nelx, nely, values })
    }

    pub fn uniform(nelx: usize, nely: usize, value: f64) -> Result<Self> {
        Self::new(nelx, nely, vec![value; nelx * nely])
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, elx: usize, ely: usize) -> f64 {
        self.values[ely * self.nelx + elx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub(crate) fn check_matches(&self, problem: &Problem) -> Result<()> {
        if self.nelx != problem.nelx || self.nely != problem.nely {
            return Err(Error::shape(format!(
                "density field is {}x{}, problem grid is {}x{}",
                self.nelx, self.nely, problem.nelx, problem.nely
            )));
        }
        Ok(())
    }
}

/// SIMP material interpolation `E(x) = Emin + x^p (E0 - Emin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub e0: f64,
    pub emin: f64,
    pub penal: f64,
    pub nu: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            e0: 1.0,
            emin: 1e-9,
            penal: 3.0,
            nu: 0.3,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.emin > 0.0 && self.emin < self.e0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < Emin < E0, got Emin={} E0={}",
                self.emin, self.e0
            )));
        }
        if !(self.penal >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalization must be >= 1, got {}",
                self.penal
            )));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::InvalidParameter(format!(
                "Poisson ratio must lie in [0, 0.5), got {}",
                self.nu
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn stiffness(&self, x: f64) -> f64 {
        self.emin + x.powf(self.penal) * (self.e0 - self.emin)
    }

    #[inline]
    pub fn stiffness_derivative(&self, x: f64) -> f64 {
        self.penal * x.powf(self.penal - 1.0) * (self.e0 - self.emin)
    }
}

/// Plane-stress stiffness of a unit square bilinear element with unit
/// Young's modulus and thickness, dofs ordered `[LLx, LLy, LRx, LRy, URx,
/// URy, ULx, ULy]`.
pub fn element_stiffness_quad(nu: f64) -> Result<[[f64; 8]; 8]> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidParameter(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    let s = 1.0 / (1.0 - nu * nu);
    let pattern: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let mut ke = [[0.0; 8]; 8];
    for (row, prow) in ke.iter_mut().zip(&pattern) {
        for (v, &p) in row.iter_mut().zip(prow) {
            *v = s * k[p];
        }
    }
    Ok(ke)
}

/// Unit-conductivity matrix of a unit square bilinear element, nodes
/// ordered `[LL, LR, UR, UL]`.
pub fn element_conductivity_quad() -> [[f64; 4]; 4] {
    let (d, a, o) = (2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0);
    [[d, a, o, a], [a, d, a, o], [o, a, d, a], [a, o, a, d]]
}

/// Flattened element matrix for the problem's physics.
#[derive(Debug, Clone)]
pub(crate) struct ElementMatrix {
    n: usize,
    data: [f64; 64],
}

impl ElementMatrix {
    pub(crate) fn for_physics(physics: Physics, material: &MaterialModel) -> Result<Self> {
        let mut data = [0.0; 64];
        let n = physics.dofs_per_element();
        match physics {
            Physics::Mechanical => {
                let ke = element_stiffness_quad(material.nu)?;
                for i in 0..8 {
                    data[i * 8..i * 8 + 8].copy_from_slice(&ke[i]);
                }
            }
            Physics::Heat => {
                let ke = element_conductivity_quad();
                for i in 0..4 {
                    data[i * 4..i * 4 + 4].copy_from_slice(&ke[i]);
                }
            }
        }
        Ok(Self { n, data })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `uᵀ KE u` for the element-local vector gathered from `u` at `dofs`.
    #[inline]
    fn energy(&self, u: &[f64], dofs: &[usize]) -> f64 {
        let mut ue = [0.0; 8];
        for (a, &d) in dofs.iter().enumerate() {
            ue[a] = u[d];
        }
        let mut e = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for (j, uj) in ue.iter().enumerate().take(self.n) {
                row += self.at(i, j) * uj;
            }
            e += ue[i] * row;
        }
        e
    }
}

fn check_inputs(problem: &Problem, x: &DensityField, m: &MaterialModel) -> Result<()> {
    m.validate()?;
    x.check_matches(problem)
}

/// Assembled global system with fixed dofs replaced by identity rows.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub matrix: BandedSpd,
    pub rhs: Vec<f64>,
    free: Vec<bool>,
}

impl GlobalSystem {
    /// Assembles element contributions in the given element order.
    pub fn assemble(
        problem: &Problem,
        x: &DensityField,
        m: &MaterialModel,
        order: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        check_inputs(problem, x, m)?;
        let ke = ElementMatrix::for_physics(problem.physics, m)?;
        let fixed = problem.fixed_mask();
        let mut matrix = BandedSpd::zeros(problem.num_dofs(), problem.half_bandwidth());
        let mut dofs = [0usize; 8];
        for e in order {
            let n = problem.element_dofs(e, &mut dofs);
            let stiff = m.stiffness(x.values[e]);
            for a in 0..n {
                let i = dofs[a];
                if fixed[i] {
                    continue;
                }
                for (b, &j) in dofs.iter().enumerate().take(n) {
                    if j <= i && !fixed[j] {
                        matrix.add_lower(i, j, stiff * ke.at(a, b));
                    }
                }
            }
        }
        let mut rhs = problem.load_vector();
        for (d, is_fixed) in fixed.iter().enumerate() {
            if *is_fixed {
                matrix.set_diag(d, 1.0);
                rhs[d] = 0.0;
            }
        }
        let free = fixed.into_iter().map(|f| !f).collect();
        Ok(Self { matrix, rhs, free })
    }

    /// Relative residual `‖F − K U‖ / ‖F‖` over free dofs.
    pub fn relative_residual(&self, u: &[f64]) -> f64 {
        let ku = self.matrix.mul_vec(u);
        let (mut r2, mut f2) = (0.0, 0.0);
        for ((k, f), free) in ku.iter().zip(&self.rhs).zip(&self.free) {
            if *free {
                r2 += (f - k) * (f - k);
                f2 += f * f;
            }
        }
        if f2 == 0.0 {
            r2.sqrt()
        } else {
            (r2 / f2).sqrt()
        }
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        let chol = self.matrix.cholesky()?;
        let mut u = chol.solve(&self.rhs);
        let mut residual = self.relative_residual(&u);
        // Iterative refinement for badly conditioned near-void designs.
        for _ in 0..3 {
            if residual < 1e-10 {
                break;
            }
            let ku = self.matrix.mul_vec(&u);
            let r: Vec<f64> = self.rhs.iter().zip(&ku).map(|(f, k)| f - k).collect();
            let du = chol.solve(&r);
            for (ui, di) in u.iter_mut().zip(&du) {
                *ui += di;
            }
            residual = self.relative_residual(&u);
        }
        if !(residual < 1e-8) {
            return Err(Error::SolverFailure { residual });
        }
        Ok(u)
    }
}

/// Solves `K(x) U = F` with fixed dofs held at zero.
pub fn assemble_and_solve(problem: &Problem, x: &DensityField, m: &MaterialModel) -> Result<Vec<f64>> {
    GlobalSystem::assemble(problem, x, m, 0..problem.num_elements())?.solve()
}

/// Compliance `Σ E(x_j) u_jᵀ k₀ u_j` and its derivative with respect to
/// each element density.
pub fn compliance_and_sensitivity(
    problem: &Problem,
    x: &DensityField,
    m: &MaterialModel,
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_inputs(problem, x, m)?;
    if u.len() != problem.num_dofs() {
        return Err(Error::shape(format!(
            "solution has {} entries, problem has {} dofs",
            u.len(),
            problem.num_dofs()
        )));
    }
    let ke = ElementMatrix::for_physics(problem.physics, m)?;
    let mut dofs = [0usize; 8];
    let mut c = 0.0;
    let mut dc = Vec::with_capacity(problem.num_elements());
    for (e, &xe) in x.values.iter().enumerate() {
        let n = problem.element_dofs(e, &mut dofs);
        // KE is positive semidefinite; clamp round-off so dc stays <= 0.
        let ce = ke.energy(u, &dofs[..n]).max(0.0);
        c += m.stiffness(xe) * ce;
        dc.push(-m.stiffness_derivative(xe) * ce);
    }
    Ok((c, dc))
}

/// Compliance of a design, solving the state equation first.
pub fn compliance(problem: &Problem, x: &DensityField, m: &MaterialModel) -> Result<f64> {
    let u = assemble_and_solve(problem, x, m)?;
    Ok(compliance_and_sensitivity(problem, x, m, &u)?.0)
}

/// Checks that the problem has a nonsingular stiffness matrix and a nonzero
/// load on its free dofs, using the uniform initial design.
pub fn check_well_posed(problem: &Problem, m: &MaterialModel) -> Result<()> {
    let fixed = problem.fixed_mask();
    let f = problem.load_vector();
    if f.iter().zip(&fixed).all(|(v, fx)| *fx || *v == 0.0) {
        return Err(Error::IllPosed("every load acts on a fixed dof".into()));
    }
    let x = DensityField::uniform(problem.nelx, problem.nely, problem.vol_frac)?;
    assemble_and_solve(problem, &x, m).map(|_| ())
}
