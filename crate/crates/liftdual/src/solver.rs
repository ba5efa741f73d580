//! The two saddle-point iterations over the discrete Lagrangian
//! `L(v, sigma) = <sigma, grad^h v>`: an explicit primal-dual scheme and a
//! divergence-projection variant whose `v`-update applies the inverse
//! Dirichlet-Neumann Laplacian.

use thiserror::Error;

use crate::analysis::{extract_level, mid_value_stats, primal_energy};
use crate::grid::{
    divergence_into, dot_faces, gradient, gradient_into, norm_cells, FaceKind, FluxField, Ghosts,
    LiftedGhosts, ScalarField,
};
use crate::poisson::{PoissonError, PoissonSolver, SlabBc};
use crate::problem::Problem;
use crate::project::{apply_slice_constraints_in_place, project_dual_in_place, ProjectError};

/// Slack constant of the weak-duality invariant: every reported gap must
/// satisfy `gap >= -DUALITY_SLACK * h`.
pub const DUALITY_SLACK: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Explicit ascent/descent with the step condition `alpha beta L^2 <= 1`.
    Pd,
    /// Divergence-projection update via the inverse Laplacian; `alpha beta <= 1`.
    Proj,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("non-finite field detected at iteration {iter}")]
    NumericalBreakdown { iter: usize },
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Project(#[from] ProjectError),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Dual (sigma) step.
    pub alpha: f64,
    /// Primal (v) step.
    pub beta: f64,
    pub max_iters: usize,
    /// Fixed-point tolerance on `||v_next - v|| / (beta ||v|| + 1e-30)`.
    pub tol: f64,
    /// Reporting stride.
    pub check_every: usize,
    /// `v_bar = 2 v_next - v` extrapolation (on by default).
    pub overrelax: bool,
    /// Tolerance passed to the inner Poisson solves (Proj only).
    pub poisson_tol: f64,
    /// Clamp the iterate into [0, 1] after each step.
    pub clamp_v: bool,
}

impl SolverConfig {
    /// Default steps: `alpha = beta = 1/L` for the explicit scheme and
    /// `alpha = beta = 1` for the projection scheme.
    pub fn new(algorithm: Algorithm, problem: &Problem) -> Self {
        let (alpha, beta) = match algorithm {
            Algorithm::Pd => {
                let l = problem.grid.spec.operator_norm_bound();
                (1.0 / l, 1.0 / l)
            }
            Algorithm::Proj => (1.0, 1.0),
        };
        SolverConfig {
            algorithm,
            alpha,
            beta,
            max_iters: 20_000,
            tol: 1e-5,
            check_every: 25,
            overrelax: true,
            poisson_tol: 1e-8,
            clamp_v: false,
        }
    }

    pub fn validate(&self, problem: &Problem) -> Result<(), SolveError> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(SolveError::BadConfig("steps must be positive".into()));
        }
        match self.algorithm {
            Algorithm::Pd => {
                let l = problem.grid.spec.operator_norm_bound();
                if self.alpha * self.beta * l * l > 1.0 + 1e-9 {
                    return Err(SolveError::BadConfig(format!(
                        "explicit scheme requires alpha*beta*L^2 <= 1 (L = {l:.4})"
                    )));
                }
            }
            Algorithm::Proj => {
                if self.alpha * self.beta > 1.0 + 1e-9 {
                    return Err(SolveError::BadConfig(
                        "projection scheme requires alpha*beta <= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One saddle-point iterate.
#[derive(Debug, Clone)]
pub struct IterState {
    pub v: ScalarField,
    pub v_bar: ScalarField,
    pub sigma: FluxField,
    pub iter: usize,
}

/// Per-checkpoint progress plus the final diagnostics of a run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// Iteration number of each checkpoint.
    pub checkpoints: Vec<usize>,
    pub dual_history: Vec<f64>,
    pub primal_history: Vec<f64>,
    pub gap_history: Vec<f64>,
    /// `||v_next - v|| / beta` at each checkpoint.
    pub residual_history: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
    /// Declared discretization slack `DUALITY_SLACK * h` for the gap sign.
    pub eps_disc: f64,
    /// Fraction of the cylinder with `0.1 < v_bar < 0.9` at termination.
    pub mid_measure: f64,
    /// 20-bin histogram of the final `v_bar` values.
    pub histogram: [usize; 20],
}

/// Shared driver: owns the ghost table and the Poisson solver so repeated
/// steps reuse plans and warm starts.
pub struct Driver<'a> {
    pub problem: &'a Problem,
    pub config: SolverConfig,
    ghosts: LiftedGhosts,
    poisson: Option<PoissonSolver>,
    warm: Option<ScalarField>,
    grad_buf: FluxField,
    div_buf: ScalarField,
}

impl<'a> Driver<'a> {
    pub fn new(problem: &'a Problem, config: SolverConfig) -> Result<Self, SolveError> {
        config.validate(problem)?;
        // the v-update is the exact least-squares projection onto discrete
        // gradients only with zero phantom cells at the slabs; that metric is
        // what makes alpha*beta <= 1 sufficient
        let poisson = match config.algorithm {
            Algorithm::Proj => Some(PoissonSolver::with_slab_bc(&problem.grid, SlabBc::Dirichlet)),
            Algorithm::Pd => None,
        };
        Ok(Driver {
            problem,
            config,
            ghosts: problem.lifted_ghosts(),
            poisson,
            warm: None,
            grad_buf: FluxField::zeros(&problem.grid),
            div_buf: ScalarField::zeros(&problem.grid),
        })
    }

    /// `v_0 = 1_{t <= u0}`, `sigma_0 = 0` slice-clamped, `v_bar_0 = v_0`.
    pub fn init_state(&self) -> IterState {
        let grid = &self.problem.grid;
        let mut v = ScalarField::zeros(grid);
        for &s in &grid.inside_cells {
            for k in 0..grid.spec.n_t {
                v.data[grid.cell_index(s, k)] =
                    if grid.spec.t_center(k) <= self.problem.u0_fill { 1.0 } else { 0.0 };
            }
        }
        let mut sigma = FluxField::zeros(grid);
        apply_slice_constraints_in_place(self.problem, &mut sigma);
        IterState {
            v_bar: v.clone(),
            v,
            sigma,
            iter: 0,
        }
    }

    /// One iteration; returns the primal residual `||v_next - v||_2`.
    pub fn step(&mut self, state: &mut IterState) -> Result<f64, SolveError> {
        let grid = &self.problem.grid;
        let spec = &grid.spec;
        let alpha = self.config.alpha;
        let beta = self.config.beta;

        // dual ascent: sigma <- Pi_K(sigma + alpha grad v_bar)
        gradient_into(grid, &state.v_bar, &Ghosts::Lifted(&self.ghosts), &mut self.grad_buf);
        for axis in 0..spec.dim() {
            for (s, g) in state.sigma.sigma_x[axis]
                .iter_mut()
                .zip(self.grad_buf.sigma_x[axis].iter())
            {
                *s += alpha * g;
            }
        }
        for (s, g) in state.sigma.sigma_t.iter_mut().zip(self.grad_buf.sigma_t.iter()) {
            *s += alpha * g;
        }
        project_dual_in_place(self.problem, &mut state.sigma)?;

        // primal descent
        divergence_into(grid, &state.sigma, &mut self.div_buf);
        let div = &self.div_buf;
        let mut v_next = state.v.clone();
        match self.config.algorithm {
            Algorithm::Pd => {
                for &s in &grid.inside_cells {
                    for k in 0..spec.n_t {
                        let i = grid.cell_index(s, k);
                        v_next.data[i] += beta * div.data[i];
                    }
                }
            }
            Algorithm::Proj => {
                let poisson = self.poisson.as_mut().expect("poisson solver present");
                let (w, _) = poisson.solve(grid, div, self.config.poisson_tol, self.warm.as_ref())?;
                for &s in &grid.inside_cells {
                    for k in 0..spec.n_t {
                        let i = grid.cell_index(s, k);
                        v_next.data[i] -= beta * w.data[i];
                    }
                }
                self.warm = Some(w);
            }
        }
        if self.config.clamp_v {
            crate::project::project_primal_in_place(&mut v_next);
        }

        let mut res2 = 0.0;
        for &s in &grid.inside_cells {
            for k in 0..spec.n_t {
                let i = grid.cell_index(s, k);
                let d = v_next.data[i] - state.v.data[i];
                res2 += d * d;
            }
        }
        let residual = (res2 * spec.cell_vol()).sqrt();
        if !residual.is_finite() {
            return Err(SolveError::NumericalBreakdown { iter: state.iter });
        }

        // extrapolation
        if self.config.overrelax {
            for &s in &grid.inside_cells {
                for k in 0..spec.n_t {
                    let i = grid.cell_index(s, k);
                    state.v_bar.data[i] = 2.0 * v_next.data[i] - state.v.data[i];
                }
            }
        } else {
            state.v_bar.data.copy_from_slice(&v_next.data);
        }
        state.v = v_next;
        state.iter += 1;
        Ok(residual)
    }

    /// Iterates until the residual test or `max_iters`, recording checkpoints.
    pub fn run(&mut self, init: Option<IterState>) -> Result<(IterState, RunReport), SolveError> {
        let grid = &self.problem.grid;
        let mut state = init.unwrap_or_else(|| self.init_state());
        let mut report = RunReport {
            eps_disc: DUALITY_SLACK * grid.spec.h,
            ..Default::default()
        };

        let mut converged = false;
        while state.iter < self.config.max_iters {
            let v_norm = norm_cells(grid, &state.v);
            let residual = self.step(&mut state)?;
            let rel = residual / (self.config.beta * v_norm + 1e-30);

            if state.iter % self.config.check_every == 0 || rel <= self.config.tol {
                if !(state.v.is_finite() && state.sigma.is_finite()) {
                    return Err(SolveError::NumericalBreakdown { iter: state.iter });
                }
                let dual = dual_objective(self.problem, &state.sigma);
                let prof = extract_level(grid, &state.v, 0.5);
                let primal = primal_energy(self.problem, &prof);
                report.checkpoints.push(state.iter);
                report.dual_history.push(dual);
                report.primal_history.push(primal);
                report.gap_history.push(primal - dual);
                report.residual_history.push(residual / self.config.beta);
            }
            if rel <= self.config.tol {
                converged = true;
                break;
            }
        }

        report.iters_used = state.iter;
        report.converged = converged;
        let (mid, hist) = mid_value_stats(grid, &state.v_bar);
        report.mid_measure = mid;
        report.histogram = hist;
        Ok((state, report))
    }
}

/// Single explicit step (convenience wrapper over [`Driver`]).
pub fn step_pd(problem: &Problem, config: &SolverConfig, state: &IterState) -> Result<IterState, SolveError> {
    let mut cfg = config.clone();
    cfg.algorithm = Algorithm::Pd;
    let mut driver = Driver::new(problem, cfg)?;
    let mut next = state.clone();
    driver.step(&mut next)?;
    Ok(next)
}

/// Single projection step (convenience wrapper over [`Driver`]).
pub fn step_proj(problem: &Problem, config: &SolverConfig, state: &IterState) -> Result<IterState, SolveError> {
    let mut cfg = config.clone();
    cfg.algorithm = Algorithm::Proj;
    let mut driver = Driver::new(problem, cfg)?;
    let mut next = state.clone();
    driver.step(&mut next)?;
    Ok(next)
}

/// Dual objective: the discrete flux of `sigma` across the graph of `u0`
/// plus the `Gamma_1` term. For `u0 = M` this reduces to
/// `-sum_x sigma^t(x, M) h^N`.
pub fn dual_objective(problem: &Problem, sigma: &FluxField) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let ghosts = problem.lifted_ghosts();
    let mut v_u0 = ScalarField::zeros(grid);
    for &s in &grid.inside_cells {
        for k in 0..spec.n_t {
            v_u0.data[grid.cell_index(s, k)] =
                if spec.t_center(k) <= problem.u0_fill { 1.0 } else { 0.0 };
        }
    }
    let grad = gradient(grid, &v_u0, &Ghosts::Lifted(&ghosts));
    let mut acc = dot_faces(grid, &grad, sigma);
    if grid.mask.has_neumann() {
        let area = spec.h.powi(spec.dim() as i32 - 1);
        for axis in 0..spec.dim() {
            for (f, &kind) in grid.mask.face_kind[axis].iter().enumerate() {
                if kind == FaceKind::Neumann {
                    acc += (problem.boundary.gamma)(problem.u0_face[axis][f]) * area;
                }
            }
        }
    }
    acc
}

/// The discrete Lagrangian `<sigma, grad^h v>` (ghost conventions embed the
/// horizontal boundary terms) plus the `Gamma_1` integral of
/// `gamma'(t) (v - v_0)`.
pub fn lagrangian_value(problem: &Problem, v: &ScalarField, sigma: &FluxField) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let ghosts = problem.lifted_ghosts();
    let grad = gradient(grid, v, &Ghosts::Lifted(&ghosts));
    let mut acc = dot_faces(grid, &grad, sigma);
    if grid.mask.has_neumann() {
        let w = spec.h.powi(spec.dim() as i32 - 1) * spec.h_t;
        for axis in 0..spec.dim() {
            let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
            for other in 0..n_other {
                for fx in 0..=spec.n_x[axis] {
                    let f = crate::grid::face_flat(spec, axis, fx, other);
                    if grid.mask.face_kind[axis][f] != FaceKind::Neumann {
                        continue;
                    }
                    let cell = |pos: usize| -> usize {
                        if spec.dim() == 1 {
                            pos
                        } else if axis == 0 {
                            spec.spatial_flat(&[pos, other])
                        } else {
                            spec.spatial_flat(&[other, pos])
                        }
                    };
                    let s = if fx > 0 && grid.mask.inside[cell(fx - 1)] {
                        cell(fx - 1)
                    } else {
                        cell(fx)
                    };
                    for k in 0..spec.n_t {
                        let t = spec.t_center(k);
                        let v0 = if t <= 0.0 { 1.0 } else { 0.0 };
                        acc += (problem.boundary.gamma_prime)(t)
                            * (v.data[s * spec.n_t + k] - v0)
                            * w;
                    }
                }
            }
        }
    }
    acc
}
