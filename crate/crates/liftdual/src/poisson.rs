//! Inverse of the mixed Dirichlet-Neumann Laplacian on the cylinder:
//! zero phantom cells on the lateral boundary, mirrored (zero-flux) ghosts on
//! the horizontal slabs, `Delta^h = div^h grad^h`.
//!
//! Rectangle masks are solved directly by eigendecomposition (DST-I along the
//! spatial axes, DCT-II/III along t). Masked domains fall back to conjugate
//! gradients preconditioned by the bounding-box direct solve.
//!
//! A second vertical convention with zero phantom cells at the slabs is
//! provided for the divergence-projection iteration, whose `v`-update is the
//! exact least-squares projection onto discrete gradients only in that
//! metric (the slab faces are genuine coordinates of the pairing).

use std::sync::Arc;

use rustdct::{Dst1, TransformType2And3};
use thiserror::Error;

use crate::grid::{FaceKind, Grid, ScalarField};

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error("conjugate gradients did not converge within the iteration budget (relative residual {residual:.3e} after {iters} iterations)")]
    NonConvergence { residual: f64, iters: usize },
    #[error("field shape does not match grid")]
    ShapeMismatch,
}

/// Vertical boundary treatment at the two slabs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlabBc {
    /// Mirrored ghosts, zero flux (the inverse Dirichlet-Neumann Laplacian).
    Neumann,
    /// Zero phantom cells (the projection metric of the lifted pairing).
    Dirichlet,
}

/// Applies `Delta^h w` (lateral Dirichlet, vertical `bc`) into `out`.
pub fn apply_laplacian(grid: &Grid, w: &ScalarField, bc: SlabBc, out: &mut ScalarField) {
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let inv_h2 = 1.0 / (spec.h * spec.h);
    let inv_ht2 = 1.0 / (spec.h_t * spec.h_t);
    out.data.iter_mut().for_each(|x| *x = 0.0);

    for &s in &grid.inside_cells {
        let ix = spec.spatial_multi(s);
        let base = s * n_t;
        for k in 0..n_t {
            let wc = w.data[base + k];
            let mut acc = 0.0;
            if k > 0 {
                acc += (w.data[base + k - 1] - wc) * inv_ht2;
            } else if bc == SlabBc::Dirichlet {
                acc -= wc * inv_ht2;
            }
            if k + 1 < n_t {
                acc += (w.data[base + k + 1] - wc) * inv_ht2;
            } else if bc == SlabBc::Dirichlet {
                acc -= wc * inv_ht2;
            }
            for axis in 0..spec.dim() {
                let other = if spec.dim() == 1 { 0 } else { ix[1 - axis] };
                for (dir, fx) in [(-1isize, ix[axis]), (1, ix[axis] + 1)] {
                    let f = crate::grid::face_flat(spec, axis, fx, other);
                    match grid.mask.face_kind[axis][f] {
                        FaceKind::Interior => {
                            let mut jx = ix;
                            jx[axis] = (ix[axis] as isize + dir) as usize;
                            let nb = spec.spatial_flat(&jx[..spec.dim()]);
                            acc += (w.data[nb * n_t + k] - wc) * inv_h2;
                        }
                        FaceKind::Dirichlet => acc -= wc * inv_h2,
                        FaceKind::Neumann | FaceKind::Unused => {}
                    }
                }
            }
            out.data[base + k] = acc;
        }
    }
}

/// Applies the mixed Dirichlet-Neumann operator (mirrored slabs).
pub fn apply_dn_laplacian(grid: &Grid, w: &ScalarField, out: &mut ScalarField) {
    apply_laplacian(grid, w, SlabBc::Neumann, out);
}

/// Direct eigendecomposition plan on the full bounding box.
struct TensorPlan {
    bc: SlabBc,
    dst: Vec<Arc<dyn Dst1<f64>>>,
    dst_t: Arc<dyn Dst1<f64>>,
    dct2: Arc<dyn TransformType2And3<f64>>,
    dct3: Arc<dyn TransformType2And3<f64>>,
    /// `1 / eigenvalue` per box cell, in cell layout.
    inv_eig: Vec<f64>,
    line: Vec<f64>,
}

impl TensorPlan {
    fn new(grid: &Grid, bc: SlabBc) -> Self {
        let spec = &grid.spec;
        let mut planner = rustdct::DctPlanner::<f64>::new();
        let dst: Vec<_> = (0..spec.dim())
            .map(|a| planner.plan_dst1(spec.n_x[a]))
            .collect();
        let dst_t = planner.plan_dst1(spec.n_t);
        let dct2 = planner.plan_dct2(spec.n_t);
        let dct3 = planner.plan_dct3(spec.n_t);

        // eigenvalues: spatial Dirichlet -4/h^2 sin^2(pi (j+1) / (2(n+1))),
        // vertical Neumann -4/h_t^2 sin^2(pi j / (2 n))
        let spatial_eigs: Vec<Vec<f64>> = (0..spec.dim())
            .map(|a| {
                let n = spec.n_x[a];
                (0..n)
                    .map(|j| {
                        let s = (std::f64::consts::PI * (j + 1) as f64 / (2.0 * (n + 1) as f64)).sin();
                        -4.0 / (spec.h * spec.h) * s * s
                    })
                    .collect()
            })
            .collect();
        let t_eigs: Vec<f64> = (0..spec.n_t)
            .map(|j| {
                let s = match bc {
                    SlabBc::Neumann => {
                        (std::f64::consts::PI * j as f64 / (2.0 * spec.n_t as f64)).sin()
                    }
                    SlabBc::Dirichlet => {
                        (std::f64::consts::PI * (j + 1) as f64 / (2.0 * (spec.n_t + 1) as f64)).sin()
                    }
                };
                -4.0 / (spec.h_t * spec.h_t) * s * s
            })
            .collect();

        let ns = spec.n_spatial();
        let mut inv_eig = vec![0.0; ns * spec.n_t];
        for s in 0..ns {
            let ix = spec.spatial_multi(s);
            let mut mu_x = spatial_eigs[0][ix[0]];
            if spec.dim() == 2 {
                mu_x += spatial_eigs[1][ix[1]];
            }
            for k in 0..spec.n_t {
                inv_eig[s * spec.n_t + k] = 1.0 / (mu_x + t_eigs[k]);
            }
        }

        let max_line = spec.n_x.iter().copied().max().unwrap().max(spec.n_t);
        TensorPlan {
            bc,
            dst,
            dst_t,
            dct2,
            dct3,
            inv_eig,
            line: vec![0.0; max_line],
        }
    }

    /// Solves `Delta^h w = rhs` on the full box in place.
    fn solve(&mut self, grid: &Grid, data: &mut [f64]) {
        let spec = &grid.spec;
        let n_t = spec.n_t;
        let ns = spec.n_spatial();

        // forward transform along t (contiguous)
        for s in 0..ns {
            match self.bc {
                SlabBc::Neumann => self.dct2.process_dct2(&mut data[s * n_t..(s + 1) * n_t]),
                SlabBc::Dirichlet => self.dst_t.process_dst1(&mut data[s * n_t..(s + 1) * n_t]),
            }
        }
        // forward: DST-I along each spatial axis
        for axis in 0..spec.dim() {
            self.transform_axis(grid, data, axis, true);
        }
        for (x, inv) in data.iter_mut().zip(self.inv_eig.iter()) {
            *x *= inv;
        }
        // inverse: DST-I and renormalize per axis
        for axis in 0..spec.dim() {
            self.transform_axis(grid, data, axis, false);
        }
        // inverse transform along t, renormalize
        for s in 0..ns {
            match self.bc {
                SlabBc::Neumann => self.dct3.process_dct3(&mut data[s * n_t..(s + 1) * n_t]),
                SlabBc::Dirichlet => self.dst_t.process_dst1(&mut data[s * n_t..(s + 1) * n_t]),
            }
        }
        let mut norm = match self.bc {
            SlabBc::Neumann => 2.0 / n_t as f64,
            SlabBc::Dirichlet => 2.0 / (n_t + 1) as f64,
        };
        for axis in 0..spec.dim() {
            norm *= 2.0 / (spec.n_x[axis] + 1) as f64;
        }
        data.iter_mut().for_each(|x| *x *= norm);
    }

    fn transform_axis(&mut self, grid: &Grid, data: &mut [f64], axis: usize, _fwd: bool) {
        // DST-I is its own inverse up to the (n+1)/2 factor folded into solve()
        let spec = &grid.spec;
        let n_t = spec.n_t;
        let n = spec.n_x[axis];
        let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            for k in 0..n_t {
                for i in 0..n {
                    let s = if spec.dim() == 1 {
                        i
                    } else if axis == 0 {
                        spec.spatial_flat(&[i, other])
                    } else {
                        spec.spatial_flat(&[other, i])
                    };
                    self.line[i] = data[s * n_t + k];
                }
                self.dst[axis].process_dst1(&mut self.line[..n]);
                for i in 0..n {
                    let s = if spec.dim() == 1 {
                        i
                    } else if axis == 0 {
                        spec.spatial_flat(&[i, other])
                    } else {
                        spec.spatial_flat(&[other, i])
                    };
                    data[s * n_t + k] = self.line[i];
                }
            }
        }
    }
}

enum Backend {
    Direct(TensorPlan),
    Cg {
        precond: TensorPlan,
        box_buf: Vec<f64>,
    },
}

/// Reusable solver for `Delta^h w = rhs` with the chosen slab condition.
pub struct PoissonSolver {
    backend: Backend,
    bc: SlabBc,
    max_iters: usize,
}

/// Outcome statistics of one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iters: usize,
    pub residual: f64,
}

impl PoissonSolver {
    /// Mixed Dirichlet-Neumann solver (mirrored slabs).
    pub fn new(grid: &Grid) -> Self {
        Self::with_slab_bc(grid, SlabBc::Neumann)
    }

    pub fn with_slab_bc(grid: &Grid, bc: SlabBc) -> Self {
        let full = grid.mask.n_inside() == grid.spec.n_spatial() && !grid.mask.has_neumann();
        let max_iters = 10 * (grid.spec.n_cells() as f64).sqrt().ceil() as usize;
        let backend = if full {
            Backend::Direct(TensorPlan::new(grid, bc))
        } else {
            Backend::Cg {
                precond: TensorPlan::new(grid, bc),
                box_buf: vec![0.0; grid.spec.n_cells()],
            }
        };
        PoissonSolver { backend, bc, max_iters }
    }

    /// Solves to relative residual `tol` (absolute when `rhs = 0`), optionally
    /// warm-started. Returns the solution and solve statistics.
    pub fn solve(
        &mut self,
        grid: &Grid,
        rhs: &ScalarField,
        tol: f64,
        warm: Option<&ScalarField>,
    ) -> Result<(ScalarField, SolveStats), PoissonError> {
        if rhs.data.len() != grid.spec.n_cells() {
            return Err(PoissonError::ShapeMismatch);
        }
        match &mut self.backend {
            Backend::Direct(plan) => {
                let mut w = rhs.clone();
                plan.solve(grid, &mut w.data);
                Ok((
                    w,
                    SolveStats {
                        iters: 1,
                        residual: 0.0,
                    },
                ))
            }
            Backend::Cg { precond, box_buf } => {
                cg_solve(grid, rhs, tol, warm, self.bc, precond, box_buf, self.max_iters)
            }
        }
    }
}

/// One-shot solve at the default tolerance 1e-8.
pub fn solve_dn_laplacian(grid: &Grid, rhs: &ScalarField) -> Result<ScalarField, PoissonError> {
    let mut solver = PoissonSolver::new(grid);
    solver.solve(grid, rhs, 1e-8, None).map(|(w, _)| w)
}

fn dot_inside(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let n_t = grid.spec.n_t;
    let mut acc = 0.0;
    for &s in &grid.inside_cells {
        let base = s * n_t;
        for k in 0..n_t {
            acc += a[base + k] * b[base + k];
        }
    }
    acc
}

/// Preconditioned CG on `A = -Delta^h` (symmetric positive definite on the
/// Dirichlet-constrained inside cells), preconditioned by the box solve.
#[allow(clippy::too_many_arguments)]
fn cg_solve(
    grid: &Grid,
    rhs: &ScalarField,
    tol: f64,
    warm: Option<&ScalarField>,
    bc: SlabBc,
    precond: &mut TensorPlan,
    box_buf: &mut [f64],
    max_iters: usize,
) -> Result<(ScalarField, SolveStats), PoissonError> {

    let mut x = warm.cloned().unwrap_or_else(|| ScalarField::zeros(grid));
    let mut r = ScalarField::zeros(grid);
    let mut scratch = ScalarField::zeros(grid);

    // r = b - A x, with b = -rhs
    apply_laplacian(grid, &x, bc, &mut scratch);
    let n_t = grid.spec.n_t;
    for &s in &grid.inside_cells {
        for k in 0..n_t {
            let i = s * n_t + k;
            r.data[i] = -rhs.data[i] + scratch.data[i];
        }
    }
    let b_norm = dot_inside(grid, &rhs.data, &rhs.data).sqrt();
    let target = if b_norm > 0.0 { tol * b_norm } else { tol };

    let apply_precond = |plan: &mut TensorPlan, buf: &mut [f64], r: &ScalarField, z: &mut ScalarField| {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for &s in &grid.inside_cells {
            let base = s * n_t;
            buf[base..base + n_t].copy_from_slice(&r.data[base..base + n_t]);
        }
        plan.solve(grid, buf);
        z.data.iter_mut().for_each(|v| *v = 0.0);
        for &s in &grid.inside_cells {
            let base = s * n_t;
            for k in 0..n_t {
                z.data[base + k] = -buf[base + k];
            }
        }
    };

    let mut z = ScalarField::zeros(grid);
    apply_precond(precond, box_buf, &r, &mut z);
    let mut p = z.clone();
    let mut rho = dot_inside(grid, &r.data, &z.data);
    let mut res = dot_inside(grid, &r.data, &r.data).sqrt();
    let mut iters = 0usize;

    while res > target && iters < max_iters {
        // q = A p = -Delta p
        apply_laplacian(grid, &p, bc, &mut scratch);
        let pq = -dot_inside(grid, &p.data, &scratch.data);
        if pq <= 0.0 || !pq.is_finite() {
            break;
        }
        let alpha = rho / pq;
        for &s in &grid.inside_cells {
            let base = s * n_t;
            for k in 0..n_t {
                x.data[base + k] += alpha * p.data[base + k];
                r.data[base + k] += alpha * scratch.data[base + k];
            }
        }
        res = dot_inside(grid, &r.data, &r.data).sqrt();
        if res <= target {
            break;
        }
        apply_precond(precond, box_buf, &r, &mut z);
        let rho_new = dot_inside(grid, &r.data, &z.data);
        let beta = rho_new / rho;
        rho = rho_new;
        for &s in &grid.inside_cells {
            let base = s * n_t;
            for k in 0..n_t {
                p.data[base + k] = z.data[base + k] + beta * p.data[base + k];
            }
        }
        iters += 1;
    }

    // true residual
    apply_laplacian(grid, &x, bc, &mut scratch);
    let mut true_res = 0.0;
    for &s in &grid.inside_cells {
        let base = s * n_t;
        for k in 0..n_t {
            let d = scratch.data[base + k] - rhs.data[base + k];
            true_res += d * d;
        }
    }
    let rel = true_res.sqrt() / b_norm.max(1e-300);
    let final_res = if b_norm > 0.0 { rel } else { true_res.sqrt() };
    if final_res > tol * 10.0 && iters >= max_iters {
        return Err(PoissonError::NonConvergence {
            residual: final_res,
            iters,
        });
    }
    Ok((
        x,
        SolveStats {
            iters,
            residual: final_res,
        },
    ))
}
