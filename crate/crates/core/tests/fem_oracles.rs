//! FEM checks against independently coded references: 2×2 Gauss quadrature
//! element matrices, a dense LU solve, and central finite differences.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topo_core::fem::{
    self, assemble_and_solve, compliance_and_sensitivity, element_conductivity_quad,
    element_stiffness_quad, DensityField, GlobalSystem, MaterialModel, Physics, Problem,
};

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
// Natural coordinates of LL, LR, UR, UL.
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Shape-function gradients in physical coordinates of a unit square
/// (x = (ξ + 1) / 2), plus the Jacobian determinant.
fn grads(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], f64) {
    let mut dx = [0.0; 4];
    let mut dy = [0.0; 4];
    for (a, (xa, ya)) in CORNERS.iter().enumerate() {
        dx[a] = 0.25 * xa * (1.0 + ya * eta) * 2.0;
        dy[a] = 0.25 * ya * (1.0 + xa * xi) * 2.0;
    }
    (dx, dy, 0.25)
}

fn quadrature_stiffness(nu: f64) -> DMatrix<f64> {
    let d = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0],
    ) / (1.0 - nu * nu);
    let mut k = DMatrix::zeros(8, 8);
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            let (dx, dy, det) = grads(xi, eta);
            let mut b = DMatrix::zeros(3, 8);
            for a in 0..4 {
                b[(0, 2 * a)] = dx[a];
                b[(1, 2 * a + 1)] = dy[a];
                b[(2, 2 * a)] = dy[a];
                b[(2, 2 * a + 1)] = dx[a];
            }
            k += b.transpose() * &d * b * det;
        }
    }
    k
}

fn quadrature_conductivity() -> DMatrix<f64> {
    let mut k = DMatrix::zeros(4, 4);
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            let (dx, dy, det) = grads(xi, eta);
            for a in 0..4 {
                for b in 0..4 {
                    k[(a, b)] += (dx[a] * dx[b] + dy[a] * dy[b]) * det;
                }
            }
        }
    }
    k
}

#[test]
fn stiffness_matches_quadrature() {
    for nu in [0.0, 0.3, 0.45] {
        let ke = element_stiffness_quad(nu).unwrap();
        let q = quadrature_stiffness(nu);
        for i in 0..8 {
            for j in 0..8 {
                assert!((ke[i][j] - q[(i, j)]).abs() < 1e-12, "nu={nu} ({i},{j})");
            }
        }
    }
}

#[test]
fn stiffness_is_positive_semidefinite_with_three_rigid_modes() {
    let ke = element_stiffness_quad(0.3).unwrap();
    let m = DMatrix::from_fn(8, 8, |i, j| ke[i][j]);
    let eig = m.symmetric_eigen().eigenvalues;
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(ev[..3].iter().all(|v| v.abs() < 1e-12));
    assert!(ev[3..].iter().all(|v| *v > 1e-3));
    // Rigid rotation about the element centre: u = (-y, x).
    let rot: Vec<f64> = CORNERS.iter().flat_map(|(x, y)| [-y, *x]).collect();
    for row in &ke {
        let s: f64 = row.iter().zip(&rot).map(|(a, b)| a * b).sum();
        assert!(s.abs() < 1e-14);
    }
}

#[test]
fn conductivity_matches_quadrature() {
    let k = element_conductivity_quad();
    let q = quadrature_conductivity();
    for i in 0..4 {
        for j in 0..4 {
            assert!((k[i][j] - q[(i, j)]).abs() < 1e-12);
        }
    }
}

/// Dense assembly written from scratch with quadrature matrices.
fn dense_oracle_solve(p: &Problem, x: &DensityField, m: &MaterialModel) -> Vec<f64> {
    let n = p.num_dofs();
    let (nelx, nely) = (p.nelx(), p.nely());
    let ke = match p.physics() {
        Physics::Mechanical => quadrature_stiffness(m.nu),
        Physics::Heat => quadrature_conductivity(),
    };
    let per = p.physics().dofs_per_node();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for ely in 0..nely {
        for elx in 0..nelx {
            let ul = elx * (nely + 1) + ely;
            let ur = (elx + 1) * (nely + 1) + ely;
            let nodes = [ul + 1, ur + 1, ur, ul];
            let dofs: Vec<usize> = nodes
                .iter()
                .flat_map(|nd| (0..per).map(move |c| per * nd + c))
                .collect();
            let e = m.emin + x.get(elx, ely).powf(m.penal) * (m.e0 - m.emin);
            for (a, &i) in dofs.iter().enumerate() {
                for (b, &j) in dofs.iter().enumerate() {
                    k[(i, j)] += e * ke[(a, b)];
                }
            }
        }
    }
    let mut f = vec![0.0; n];
    for &(d, v) in p.loads() {
        f[d] += v;
    }
    let free: Vec<usize> = (0..n).filter(|d| !p.fixed_dofs().contains(d)).collect();
    let kf = DMatrix::from_fn(free.len(), free.len(), |a, b| k[(free[a], free[b])]);
    let ff = DVector::from_iterator(free.len(), free.iter().map(|&d| f[d]));
    let uf = kf.lu().solve(&ff).expect("oracle system is nonsingular");
    let mut u = vec![0.0; n];
    for (a, &d) in free.iter().enumerate() {
        u[d] = uf[a];
    }
    u
}

fn cantilever(n: usize, physics: Physics) -> Problem {
    match physics {
        Physics::Mechanical => {
            let fixed: Vec<usize> = (0..=n).flat_map(|iy| [2 * iy, 2 * iy + 1]).collect();
            let tip = fem::node_index(n, n / 2, n);
            Problem::new(n, n, physics, fixed, vec![(2 * tip + 1, -1.0)], 0.5).unwrap()
        }
        Physics::Heat => {
            let fixed = vec![fem::node_index(0, 0, n), fem::node_index(0, n, n)];
            let src = fem::node_index(n, n / 2, n);
            Problem::new(n, n, physics, fixed, vec![(src, -1.0)], 0.5).unwrap()
        }
    }
}

fn random_field(nelx: usize, nely: usize, seed: u64) -> DensityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..nelx * nely).map(|_| rng.random_range(0.2..0.9)).collect();
    DensityField::new(nelx, nely, v).unwrap()
}

#[test]
fn solve_matches_dense_lu_uniform() {
    let p = cantilever(4, Physics::Mechanical);
    let x = DensityField::uniform(4, 4, 1.0).unwrap();
    let m = MaterialModel::default();
    let u = assemble_and_solve(&p, &x, &m).unwrap();
    let v = dense_oracle_solve(&p, &x, &m);
    for (a, b) in u.iter().zip(&v) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn solve_matches_dense_lu_random_fields() {
    let m = MaterialModel::default();
    for physics in [Physics::Mechanical, Physics::Heat] {
        for seed in 0..3 {
            let p = cantilever(6, physics);
            let x = random_field(6, 6, seed);
            let u = assemble_and_solve(&p, &x, &m).unwrap();
            let v = dense_oracle_solve(&p, &x, &m);
            let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for (a, b) in u.iter().zip(&v) {
                assert!((a - b).abs() < 1e-9 * scale.max(1.0), "{physics}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn half_mbb_matches_dense_lu() {
    let p = Problem::half_mbb(8, 4, 0.5).unwrap();
    let x = random_field(8, 4, 11);
    let m = MaterialModel::default();
    let u = assemble_and_solve(&p, &x, &m).unwrap();
    let v = dense_oracle_solve(&p, &x, &m);
    for (a, b) in u.iter().zip(&v) {
        assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
    }
}

fn fd_check(p: &Problem, x: &DensityField) {
    let m = MaterialModel::default();
    let u = assemble_and_solve(p, x, &m).unwrap();
    let (_, dc) = compliance_and_sensitivity(p, x, &m, &u).unwrap();
    let h = 1e-6;
    for e in 0..x.values().len() {
        let mut vp = x.values().to_vec();
        let mut vm = x.values().to_vec();
        vp[e] += h;
        vm[e] -= h;
        let cp = fem::compliance(p, &DensityField::new(x.nelx(), x.nely(), vp).unwrap(), &m).unwrap();
        let cm = fem::compliance(p, &DensityField::new(x.nelx(), x.nely(), vm).unwrap(), &m).unwrap();
        let fd = (cp - cm) / (2.0 * h);
        let rel = (fd - dc[e]).abs() / dc[e].abs().max(1e-10);
        assert!(rel < 1e-4, "{} element {e}: fd {fd} analytic {}", p.physics(), dc[e]);
    }
}

#[test]
fn sensitivity_matches_finite_differences_mechanical() {
    fd_check(&cantilever(4, Physics::Mechanical), &random_field(4, 4, 5));
    fd_check(&Problem::half_mbb(4, 4, 0.5).unwrap(), &random_field(4, 4, 6));
}

#[test]
fn sensitivity_matches_finite_differences_heat() {
    fd_check(&cantilever(4, Physics::Heat), &random_field(4, 4, 8));
}

#[test]
fn doubling_stiffness_halves_compliance() {
    let p = cantilever(4, Physics::Mechanical);
    let x = random_field(4, 4, 2);
    let m = MaterialModel::default();
    let m2 = MaterialModel {
        e0: 2.0 * m.e0,
        emin: 2.0 * m.emin,
        ..m
    };
    let c1 = fem::compliance(&p, &x, &m).unwrap();
    let c2 = fem::compliance(&p, &x, &m2).unwrap();
    assert!((c2 - c1 / 2.0).abs() < 1e-12 * c1);
}

#[test]
fn assembly_order_does_not_matter() {
    let p = Problem::half_mbb(10, 6, 0.5).unwrap();
    let x = random_field(10, 6, 4);
    let m = MaterialModel::default();
    let fwd = GlobalSystem::assemble(&p, &x, &m, 0..60).unwrap().solve().unwrap();
    let rev = GlobalSystem::assemble(&p, &x, &m, (0..60).rev()).unwrap().solve().unwrap();
    let mut order: Vec<usize> = (0..60).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let shuf = GlobalSystem::assemble(&p, &x, &m, order).unwrap().solve().unwrap();
    for ((a, b), c) in fwd.iter().zip(&rev).zip(&shuf) {
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        assert!((a - c).abs() < 1e-12 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn load_scaling_is_linear(seed in any::<u64>(), heat in any::<bool>()) {
        let physics = if heat { Physics::Heat } else { Physics::Mechanical };
        let p = cantilever(4, physics);
        let loads2: Vec<(usize, f64)> = p.loads().iter().map(|&(d, v)| (d, 2.0 * v)).collect();
        let p2 = Problem::new(4, 4, physics, p.fixed_dofs().to_vec(), loads2, 0.5).unwrap();
        let x = random_field(4, 4, seed);
        let m = MaterialModel::default();
        let u1 = assemble_and_solve(&p, &x, &m).unwrap();
        let u2 = assemble_and_solve(&p2, &x, &m).unwrap();
        for (a, b) in u1.iter().zip(&u2) {
            prop_assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn free_stiffness_is_spd_for_any_density(vals in prop::collection::vec(0.0f64..=1.0, 30)) {
        let p = Problem::half_mbb(6, 5, 0.5).unwrap();
        let x = DensityField::new(6, 5, vals).unwrap();
        let m = MaterialModel::default();
        let sys = GlobalSystem::assemble(&p, &x, &m, 0..30).unwrap();
        let n = sys.matrix.dim();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(sys.matrix.get(i, j), sys.matrix.get(j, i));
            }
        }
        prop_assert!(sys.matrix.cholesky().is_ok());
        let u = sys.solve().unwrap();
        prop_assert!(sys.relative_residual(&u) < 1e-8);
    }
}
