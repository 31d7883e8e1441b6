//! A from-scratch SIMP solver used only as a test oracle.
//!
//! It shares no code with the library: the element matrix is integrated
//! with 2×2 Gauss quadrature, the state equation is solved matrix-free with
//! Jacobi-preconditioned conjugate gradients, the filter is an explicit
//! pair list and the OC multiplier uses arithmetic bisection on `[0, 1e9]`.

pub struct ReferenceRun {
    pub final_x: Vec<f64>,
    pub final_compliance: f64,
    pub compliances: Vec<f64>,
}

pub struct MbbSetup {
    pub nelx: usize,
    pub nely: usize,
    pub volfrac: f64,
    pub penal: f64,
    pub rmin: f64,
    pub iters: usize,
}

const E0: f64 = 1.0;
const EMIN: f64 = 1e-9;
const NU: f64 = 0.3;

fn quad_ke() -> [[f64; 8]; 8] {
    let g = 1.0 / 3f64.sqrt();
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let c = 1.0 / (1.0 - NU * NU);
    let d = [[c, c * NU, 0.0], [c * NU, c, 0.0], [0.0, 0.0, c * (1.0 - NU) / 2.0]];
    let mut ke = [[0.0; 8]; 8];
    for xi in [-g, g] {
        for eta in [-g, g] {
            let mut b = [[0.0; 8]; 3];
            for (a, (xa, ya)) in corners.iter().enumerate() {
                let dx = 0.5 * xa * (1.0 + ya * eta);
                let dy = 0.5 * ya * (1.0 + xa * xi);
                b[0][2 * a] = dx;
                b[1][2 * a + 1] = dy;
                b[2][2 * a] = dy;
                b[2][2 * a + 1] = dx;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += b[p][i] * d[p][q] * b[q][j];
                        }
                    }
                    ke[i][j] += 0.25 * s;
                }
            }
        }
    }
    ke
}

pub fn run_half_mbb(s: &MbbSetup) -> ReferenceRun {
    let (nelx, nely) = (s.nelx, s.nely);
    let nel = nelx * nely;
    let ndof = 2 * (nelx + 1) * (nely + 1);
    let ke = quad_ke();
    // Element-to-dof table, elements enumerated column by column.
    let mut edof = vec![[0usize; 8]; nel];
    for elx in 0..nelx {
        for ely in 0..nely {
            let n1 = (nely + 1) * elx + ely;
            let n2 = (nely + 1) * (elx + 1) + ely;
            edof[ely + elx * nely] = [
                2 * n1 + 2,
                2 * n1 + 3,
                2 * n2 + 2,
                2 * n2 + 3,
                2 * n2,
                2 * n2 + 1,
                2 * n1,
                2 * n1 + 1,
            ];
        }
    }
    let mut fixed = vec![false; ndof];
    for iy in 0..=nely {
        fixed[2 * iy] = true;
    }
    fixed[ndof - 1] = true;
    let mut f = vec![0.0; ndof];
    f[1] = -1.0;

    // Filter pairs.
    let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nel];
    for i1 in 0..nelx as i64 {
        for j1 in 0..nely as i64 {
            let e1 = (i1 * nely as i64 + j1) as usize;
            for i2 in 0..nelx as i64 {
                for j2 in 0..nely as i64 {
                    let dist = (((i1 - i2).pow(2) + (j1 - j2).pow(2)) as f64).sqrt();
                    let w = s.rmin - dist;
                    if w > 0.0 {
                        pairs[e1].push(((i2 * nely as i64 + j2) as usize, w));
                    }
                }
            }
        }
    }

    let mut x = vec![s.volfrac; nel];
    let mut u = vec![0.0; ndof];
    let mut compliances = Vec::new();
    let solve_and_c = |x: &[f64], u: &mut Vec<f64>| -> (f64, Vec<f64>) {
        let young: Vec<f64> = x.iter().map(|v| EMIN + v.powf(s.penal) * (E0 - EMIN)).collect();
        cg_solve(&edof, &ke, &young, &fixed, &f, u);
        let mut c = 0.0;
        let mut ce = vec![0.0; nel];
        for e in 0..nel {
            let mut v = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    v += u[edof[e][a]] * ke[a][b] * u[edof[e][b]];
                }
            }
            ce[e] = v;
            c += young[e] * v;
        }
        (c, ce)
    };

    for _ in 0..s.iters {
        let (c, ce) = solve_and_c(&x, &mut u);
        compliances.push(c);
        let dc: Vec<f64> = (0..nel)
            .map(|e| -s.penal * x[e].powf(s.penal - 1.0) * (E0 - EMIN) * ce[e])
            .collect();
        let dcf: Vec<f64> = (0..nel)
            .map(|e| {
                let num: f64 = pairs[e].iter().map(|&(i, w)| w * x[i] * dc[i]).sum();
                let den: f64 = pairs[e].iter().map(|&(_, w)| w).sum();
                num / den / x[e].max(1e-3)
            })
            .collect();
        let (mut l1, mut l2) = (0.0f64, 1e9f64);
        let mv = 0.2;
        let mut xnew = x.clone();
        while (l2 - l1) / (l1 + l2) > 1e-12 {
            let lmid = 0.5 * (l2 + l1);
            for e in 0..nel {
                let cand = x[e] * (-dcf[e] / lmid).sqrt();
                xnew[e] = cand.min(x[e] + mv).min(1.0).max(x[e] - mv).max(0.0);
            }
            if xnew.iter().sum::<f64>() > s.volfrac * nel as f64 {
                l1 = lmid;
            } else {
                l2 = lmid;
            }
        }
        x = xnew;
    }
    let (c, _) = solve_and_c(&x, &mut u);
    // Back to row-major element order.
    let mut final_x = vec![0.0; nel];
    for elx in 0..nelx {
        for ely in 0..nely {
            final_x[ely * nelx + elx] = x[ely + elx * nely];
        }
    }
    ReferenceRun {
        final_x,
        final_compliance: c,
        compliances,
    }
}

fn cg_solve(
    edof: &[[usize; 8]],
    ke: &[[f64; 8]; 8],
    young: &[f64],
    fixed: &[bool],
    f: &[f64],
    u: &mut [f64],
) {
    let n = f.len();
    let matvec = |p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (e, dofs) in edof.iter().enumerate() {
            for a in 0..8 {
                let mut s = 0.0;
                for b in 0..8 {
                    s += ke[a][b] * p[dofs[b]];
                }
                out[dofs[a]] += young[e] * s;
            }
        }
        for (o, fx) in out.iter_mut().zip(fixed) {
            if *fx {
                *o = 0.0;
            }
        }
    };
    let mut diag = vec![0.0; n];
    for (e, dofs) in edof.iter().enumerate() {
        for a in 0..8 {
            diag[dofs[a]] += young[e] * ke[a][a];
        }
    }
    for (d, fx) in u.iter_mut().zip(fixed) {
        if *fx {
            *d = 0.0;
        }
    }
    let mut ap = vec![0.0; n];
    matvec(u, &mut ap);
    let mut r: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { f[i] - ap[i] }).collect();
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { r[i] / diag[i] }).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..200_000 {
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= 1e-12 * fnorm {
            return;
        }
        matvec(&p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = if fixed[i] { 0.0 } else { r[i] / diag[i] };
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    panic!("reference CG did not converge");
}
