//! Recovery of primal minimizers by slicing, energy evaluation on both levels
//! of the lifting, the generalized coarea check, and calibration verification.

use crate::grid::{FaceKind, FluxField, Grid, ScalarField};
use crate::problem::{h_f, Problem, HF_DOMAIN_TOL};

/// Values below `theta_pos = h_t` of the zero level are indistinguishable
/// from zero at grid resolution; the positivity indicator treats them as zero.
pub fn theta_pos(grid: &Grid) -> f64 {
    grid.spec.h_t
}

/// A candidate primal minimizer: one value per spatial cell (NaN outside Omega).
#[derive(Debug, Clone)]
pub struct Profile {
    pub u: Vec<f64>,
}

impl Profile {
    pub fn nan(grid: &Grid) -> Self {
        Profile {
            u: vec![f64::NAN; grid.spec.n_spatial()],
        }
    }
}

/// Smallest decreasing majorant of the column (running maximum from the top).
fn monotonize_column(col: &mut [f64]) {
    let mut acc = f64::NEG_INFINITY;
    for x in col.iter_mut().rev() {
        acc = acc.max(*x);
        *x = acc;
    }
}

/// `u_s(x) = inf { tau : v(x, tau) <= s }` with linear sub-cell interpolation.
///
/// Columns are monotonized first (iterates are only approximately decreasing
/// in `t`). Returns `M` where `v > s` throughout and `m` where `v <= s`
/// throughout.
pub fn extract_level(grid: &Grid, v: &ScalarField, s: f64) -> Profile {
    assert!(s > 0.0 && s < 1.0, "level must lie in (0, 1)");
    let spec = &grid.spec;
    let (m, big_m) = spec.t_range;
    let n_t = spec.n_t;
    let mut out = Profile::nan(grid);
    let mut col = vec![0.0f64; n_t];

    for &sc in &grid.inside_cells {
        let base = sc * n_t;
        col.copy_from_slice(&v.data[base..base + n_t]);
        monotonize_column(&mut col);

        let u = if col[0] <= s {
            // crosses below s before the first center: bracket with the bottom ghost 1
            let frac = (1.0 - s) / (1.0 - col[0]).max(1e-300);
            (m - 0.5 * spec.h_t + frac * spec.h_t).clamp(m, big_m)
        } else if col[n_t - 1] > s {
            big_m
        } else {
            let k = col.partition_point(|&x| !(x <= s)); // first index with col[k] <= s
            let hi = col[k - 1];
            let lo = col[k];
            let frac = (hi - s) / (hi - lo).max(1e-300);
            (spec.t_center(k - 1) + frac * spec.h_t).clamp(m, big_m)
        };
        out.u[sc] = u;
    }
    out
}

/// `sum over vertical neighbor pairs of max(0, v_above - v_below) h^N`;
/// zero iff every column is non-increasing in `t`.
pub fn monotonicity_defect(grid: &Grid, v: &ScalarField) -> f64 {
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let mut acc = 0.0;
    for &s in &grid.inside_cells {
        let base = s * n_t;
        for k in 0..n_t - 1 {
            let d = v.data[base + k + 1] - v.data[base + k];
            if d > 0.0 {
                acc += d;
            }
        }
    }
    acc * spec.cell_area()
}

/// Forward-difference gradient of a profile at one spatial cell. Dirichlet
/// ghosts sit on the face (half-mesh distance); Neumann faces carry zero flux.
fn profile_gradient(problem: &Problem, prof: &Profile, s: usize, z: &mut [f64; 2]) {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let ix = spec.spatial_multi(s);
    for axis in 0..spec.dim() {
        let other = if spec.dim() == 1 { 0 } else { ix[1 - axis] };
        let f_hi = crate::grid::face_flat(spec, axis, ix[axis] + 1, other);
        z[axis] = match grid.mask.face_kind[axis][f_hi] {
            FaceKind::Interior => {
                let mut jx = ix;
                jx[axis] = ix[axis] + 1;
                let nb = spec.spatial_flat(&jx[..spec.dim()]);
                (prof.u[nb] - prof.u[s]) / spec.h
            }
            FaceKind::Dirichlet => (problem.u0_face[axis][f_hi] - prof.u[s]) / (0.5 * spec.h),
            FaceKind::Neumann | FaceKind::Unused => 0.0,
        };
    }
}

/// Midpoint quadrature of `f(u, grad^h u)` over spatial cells plus the
/// `Gamma_1` boundary sum of `gamma(u)`. Values within `theta_pos` of the
/// zero level count as exactly zero in the integrand's `t`-slot.
pub fn primal_energy(problem: &Problem, prof: &Profile) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let thr = theta_pos(grid);
    let mut z = [0.0f64; 2];
    let mut acc = 0.0;
    for &s in &grid.inside_cells {
        profile_gradient(problem, prof, s, &mut z);
        let u = prof.u[s];
        let u_eff = if u.abs() <= thr { 0.0 } else { u };
        acc += problem.integrand.eval(u_eff, &z[..spec.dim()]);
    }
    acc *= spec.cell_area();
    acc + gamma_boundary_sum(problem, prof)
}

fn gamma_boundary_sum(problem: &Problem, prof: &Profile) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    if !grid.mask.has_neumann() {
        return 0.0;
    }
    let area = spec.h.powi(spec.dim() as i32 - 1);
    let mut acc = 0.0;
    for axis in 0..spec.dim() {
        let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            for fx in 0..=spec.n_x[axis] {
                let f = crate::grid::face_flat(spec, axis, fx, other);
                if grid.mask.face_kind[axis][f] != FaceKind::Neumann {
                    continue;
                }
                let s = adjacent_inside_cell(grid, axis, fx, other);
                acc += (problem.boundary.gamma)(prof.u[s]) * area;
            }
        }
    }
    acc
}

fn adjacent_inside_cell(grid: &Grid, axis: usize, fx: usize, other: usize) -> usize {
    let spec = &grid.spec;
    let cell = |pos: usize| -> usize {
        if spec.dim() == 1 {
            pos
        } else if axis == 0 {
            spec.spatial_flat(&[pos, other])
        } else {
            spec.spatial_flat(&[other, pos])
        }
    };
    if fx > 0 && grid.mask.inside[cell(fx - 1)] {
        cell(fx - 1)
    } else {
        cell(fx)
    }
}

/// Lifted energy `sum over cells of h_f(t_cell, q_cell) vol` plus the
/// bottom-slab jump charged at the exact level `m` and the discrete `Gamma_1`
/// term. Returns `+inf` when any vertical difference violates the `q^t <= 0`
/// domain of `h_f` beyond tolerance, or when a cell carries horizontal mass
/// with no vertical transition (a vertical graph wall).
///
/// Assembly: the horizontal part comes from the forward interior faces; the
/// vertical slot pairs it with the full local transition density, the sum of
/// the two vertical faces of the cell. The potential part `f(t, 0) |drop|`
/// is charged once per vertical face. Splitting `h_f` this way keeps every
/// piece positively 1-homogeneous and, on the monotone cone, convex, while
/// staying consistent for diffuse (cell-averaged) graphs of any slope.
///
/// The energy lives on the open cylinder: lateral boundary faces carry the
/// trace constraint of the admissible class, not an energy contribution, so
/// they are excluded here (the Lagrangian pairing does include them).
pub fn lifted_energy(problem: &Problem, v: &ScalarField) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let (m, _) = spec.t_range;
    let vol = spec.cell_vol();
    let area = spec.cell_area();
    let f = problem.integrand.as_ref();
    let tol = HF_DOMAIN_TOL;

    let mut qx = [0.0f64; 2];
    let mut z = [0.0f64; 2];
    let mut acc = 0.0;
    for &s in &grid.inside_cells {
        let ix = spec.spatial_multi(s);
        let base = s * n_t;

        // vertical face differences: slab ghosts 1 below, 0 above
        // face k sits below cell k; diff[k] = (v_k - v_{k-1}) / h_t
        for k in 0..=n_t {
            let above = if k < n_t { v.data[base + k] } else { 0.0 };
            let below = if k > 0 { v.data[base + k - 1] } else { 1.0 };
            let d = (above - below) / spec.h_t;
            if d > tol {
                return f64::INFINITY;
            }
            // potential part, charged once per face at the exact slab level
            // for the bottom and at the nearest cell level otherwise
            let level = if k == 0 { m } else { spec.t_center(k - 1) };
            acc += -f.neg_f0(level) * (-d).max(0.0) * spec.h_t * area;
        }

        for k in 0..n_t {
            let vc = v.data[base + k];
            let mut has_x = false;
            for axis in 0..spec.dim() {
                let other = if spec.dim() == 1 { 0 } else { ix[1 - axis] };
                let f_hi = crate::grid::face_flat(spec, axis, ix[axis] + 1, other);
                qx[axis] = match grid.mask.face_kind[axis][f_hi] {
                    FaceKind::Interior => {
                        let mut jx = ix;
                        jx[axis] = ix[axis] + 1;
                        let nb = spec.spatial_flat(&jx[..spec.dim()]);
                        (v.data[nb * n_t + k] - vc) / spec.h
                    }
                    FaceKind::Dirichlet | FaceKind::Neumann | FaceKind::Unused => 0.0,
                };
                has_x = has_x || qx[axis].abs() > tol;
            }
            if !has_x {
                continue;
            }
            // full local vertical density: both faces of the cell (the bottom
            // slab face is part of the cell-0 density as well)
            let below = if k > 0 { v.data[base + k - 1] } else { 1.0 };
            let above = if k + 1 < n_t { v.data[base + k + 1] } else { 0.0 };
            let q_t = (above - below) / spec.h_t;
            if q_t > -tol {
                return f64::INFINITY; // horizontal mass with no transition
            }
            let t = spec.t_center(k);
            for (zi, &q) in z.iter_mut().zip(qx.iter()) {
                *zi = -q / q_t;
            }
            // gradient part of h_f: |q_t| (f(t, p/|q_t|) - f(t, 0))
            let g = -q_t * (f.eval(t, &z[..spec.dim()]) - f.eval(t, &[0.0, 0.0][..spec.dim()]));
            if !g.is_finite() {
                return f64::INFINITY;
            }
            acc += g * vol;
        }
    }
    acc + gamma_lifted_sum(problem, v)
}

fn gamma_lifted_sum(problem: &Problem, v: &ScalarField) -> f64 {
    let grid = &problem.grid;
    let spec = &grid.spec;
    if !grid.mask.has_neumann() {
        return 0.0;
    }
    let w = spec.h.powi(spec.dim() as i32 - 1) * spec.h_t;
    let mut acc = 0.0;
    for axis in 0..spec.dim() {
        let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            for fx in 0..=spec.n_x[axis] {
                let f = crate::grid::face_flat(spec, axis, fx, other);
                if grid.mask.face_kind[axis][f] != FaceKind::Neumann {
                    continue;
                }
                let s = adjacent_inside_cell(grid, axis, fx, other);
                for k in 0..spec.n_t {
                    let t = spec.t_center(k);
                    let v0 = if t <= 0.0 { 1.0 } else { 0.0 };
                    acc += (problem.boundary.gamma_prime)(t) * (v.data[s * spec.n_t + k] - v0) * w;
                }
            }
        }
    }
    acc
}

/// Layer-cake comparison of the lifted energy: `lhs = E(v)` against the
/// average `rhs` of `E(1_{v > s_k})` over `n_levels` midpoint levels.
///
/// For two-valued `v` the defect is zero by per-cell 1-homogeneity; for
/// monotone `v` with values on the level lattice, convexity gives `lhs <= rhs`.
pub fn coarea_check(problem: &Problem, v: &ScalarField, n_levels: usize) -> (f64, f64, f64) {
    assert!(n_levels >= 2);
    let lhs = lifted_energy(problem, v);
    let mut rhs = 0.0;
    let mut ind = ScalarField::zeros(&problem.grid);
    for k in 0..n_levels {
        let s = (k as f64 + 0.5) / n_levels as f64;
        for (o, &x) in ind.data.iter_mut().zip(v.data.iter()) {
            *o = if x > s { 1.0 } else { 0.0 };
        }
        rhs += lifted_energy(problem, &ind);
    }
    rhs /= n_levels as f64;
    (lhs, rhs, lhs - rhs)
}

/// `primal_energy(u_s) - dual_objective(sigma)`; nonnegative up to the
/// declared discretization slack.
pub fn duality_gap(problem: &Problem, v: &ScalarField, sigma: &FluxField, s: f64) -> f64 {
    let prof = extract_level(&problem.grid, v, s);
    primal_energy(problem, &prof) - crate::solver::dual_objective(problem, sigma)
}

/// Bilinear interpolation of `sigma^x` (component `axis`) at `(x_cell, t)`.
fn interp_sigma_x(grid: &Grid, sig: &FluxField, axis: usize, s: usize, t: f64) -> f64 {
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let ix = spec.spatial_multi(s);
    let other = if spec.dim() == 1 { 0 } else { ix[1 - axis] };
    let f_lo = crate::grid::face_flat(spec, axis, ix[axis], other);
    let f_hi = crate::grid::face_flat(spec, axis, ix[axis] + 1, other);
    // clamp t to the center range, then linear in t between neighbor levels
    let pos = ((t - spec.t_range.0) / spec.h_t - 0.5).clamp(0.0, (n_t - 1) as f64);
    let k = (pos.floor() as usize).min(n_t - 2);
    let frac = pos - k as f64;
    let at = |f: usize| {
        let a = sig.sigma_x[axis][f * n_t + k];
        let b = sig.sigma_x[axis][f * n_t + k + 1];
        a + frac * (b - a)
    };
    0.5 * (at(f_lo) + at(f_hi))
}

/// Linear interpolation of `sigma^t` at `(x_cell, t)` between face levels.
fn interp_sigma_t(grid: &Grid, sig: &FluxField, s: usize, t: f64) -> f64 {
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let pos = ((t - spec.t_range.0) / spec.h_t).clamp(0.0, n_t as f64);
    let k = (pos.floor() as usize).min(n_t - 1);
    let frac = pos - k as f64;
    let base = s * (n_t + 1);
    sig.sigma_t[base + k] * (1.0 - frac) + sig.sigma_t[base + k + 1] * frac
}

/// Pointwise optimality residuals of a candidate pair `(u, sigma)` evaluated
/// on the graph of `u`, with area-weighted L1 and max norms.
#[derive(Debug, Clone, Default)]
pub struct CalibrationReport {
    /// `|sigma_x(x, u(x)) - d_z f(u, grad u)|` on the positivity set.
    pub r1: Vec<f64>,
    /// `|sigma_t(x, u(x)) - f*_z(u, sigma_x(x, u(x)))|` on the positivity set.
    pub r2: Vec<f64>,
    /// `|sigma_t(x, d) + f(d, 0)|` on plateau cells, per discontinuity level.
    pub r3: Vec<f64>,
    pub l1: [f64; 3],
    pub linf: [f64; 3],
    /// Total plateau cells feeding r3 (r3 stays empty below 5 cells).
    pub plateau_cells: usize,
}

pub fn calibration_residuals(problem: &Problem, prof: &Profile, sig: &FluxField) -> CalibrationReport {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let thr = theta_pos(grid);
    let f = problem.integrand.as_ref();
    let mut rep = CalibrationReport::default();
    let mut z = [0.0f64; 2];
    let mut sx = [0.0f64; 2];

    for &s in &grid.inside_cells {
        let u = prof.u[s];
        if u <= thr {
            continue;
        }
        profile_gradient(problem, prof, s, &mut z);
        for axis in 0..spec.dim() {
            sx[axis] = interp_sigma_x(grid, sig, axis, s, u);
        }
        let gz = f.grad_z(u, &z[..spec.dim()]);
        let r1: f64 = sx[..spec.dim()]
            .iter()
            .zip(gz.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let st = interp_sigma_t(grid, sig, s, u);
        let r2 = (st - f.conj_z(u, &sx[..spec.dim()])).abs();
        rep.r1.push(r1);
        rep.r2.push(r2);
    }

    for &d in f.disc_levels() {
        let (m, big_m) = spec.t_range;
        if d < m - 1e-12 || d > big_m + 1e-12 {
            continue;
        }
        let plateau: Vec<usize> = grid
            .inside_cells
            .iter()
            .copied()
            .filter(|&s| (prof.u[s] - d).abs() <= spec.h_t)
            .collect();
        if plateau.len() <= 4 {
            continue;
        }
        rep.plateau_cells += plateau.len();
        for s in plateau {
            let st = interp_sigma_t(grid, sig, s, d);
            rep.r3.push((st - f.neg_f0(d)).abs());
        }
    }

    let area = spec.cell_area();
    for (i, r) in [&rep.r1, &rep.r2, &rep.r3].into_iter().enumerate() {
        rep.l1[i] = r.iter().sum::<f64>() * area;
        rep.linf[i] = r.iter().cloned().fold(0.0, f64::max);
    }
    rep
}

/// Leftmost position where the profile drops below `theta_pos` (linear
/// interpolation between the bracketing cell centers along axis 0).
pub fn free_boundary_location(grid: &Grid, prof: &Profile) -> Option<f64> {
    let spec = &grid.spec;
    let thr = theta_pos(grid);
    let n0 = spec.n_x[0];
    // scan the first row (1D usage)
    for i in 0..n0 - 1 {
        let a = prof.u[i];
        let b = prof.u[i + 1];
        if a.is_nan() || b.is_nan() {
            continue;
        }
        if a > thr && b <= thr {
            let frac = (a - thr) / (a - b).max(1e-300);
            return Some(spec.x_center(0, i) + frac * spec.h);
        }
    }
    None
}

/// Fraction of the cylinder volume where `0.1 < v < 0.9`, and a 20-bin
/// histogram of the values: the multi-solution diagnostic.
pub fn mid_value_stats(grid: &Grid, v: &ScalarField) -> (f64, [usize; 20]) {
    let n_t = grid.spec.n_t;
    let mut mid = 0usize;
    let mut hist = [0usize; 20];
    let mut total = 0usize;
    for &s in &grid.inside_cells {
        for k in 0..n_t {
            let x = v.data[s * n_t + k];
            let bin = ((x.clamp(0.0, 1.0) * 20.0) as usize).min(19);
            hist[bin] += 1;
            if x > 0.1 && x < 0.9 {
                mid += 1;
            }
            total += 1;
        }
    }
    (mid as f64 / total.max(1) as f64, hist)
}
