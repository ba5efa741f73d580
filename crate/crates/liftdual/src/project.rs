//! Euclidean projections enforcing the dual pointwise constraints and the
//! primal box constraint.

use thiserror::Error;

use crate::grid::{FaceKind, FluxField, ScalarField};
use crate::problem::{ConstraintSet, Problem};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("paraboloid opening coefficient must be positive")]
    BadOpening,
    #[error("integrand has no closed-form constraint projector")]
    GenericIntegrand,
}

/// Euclidean projection of `q = (q_x, q_t)` onto `{p : p^t >= a |p^x|^2 + c}`.
///
/// Feasible points are returned unchanged. Otherwise the projection sits on
/// the paraboloid at radius `r`, the unique nonnegative root of
/// `2 a^2 r^3 + r (1 + 2a(c - q^t)) - |q^x| = 0`.
pub fn project_epigraph(q_x: &[f64], q_t: f64, a: f64, c: f64) -> Result<(Vec<f64>, f64), ProjectError> {
    if a <= 0.0 {
        return Err(ProjectError::BadOpening);
    }
    let s2: f64 = q_x.iter().map(|x| x * x).sum();
    if q_t >= a * s2 + c {
        return Ok((q_x.to_vec(), q_t));
    }
    let s = s2.sqrt();
    if s < 1e-300 {
        // axis point below the vertex
        return Ok((vec![0.0; q_x.len()], c));
    }
    let r = cubic_root(a, 1.0 + 2.0 * a * (c - q_t), s);
    let scale = r / s;
    Ok((q_x.iter().map(|x| x * scale).collect(), a * r * r + c))
}

/// Nonnegative root of `g(r) = 2 a^2 r^3 + b r - s`, `s > 0`, via safeguarded
/// Newton with bisection fallback; tolerance 1e-12, at most 60 iterations.
fn cubic_root(a: f64, b: f64, s: f64) -> f64 {
    let a2 = 2.0 * a * a;
    let g = |r: f64| a2 * r * r * r + b * r - s;
    let dg = |r: f64| 3.0 * a2 * r * r + b;

    let mut r = (s / a2).cbrt();
    // bracket [lo, hi] with g(lo) <= 0 <= g(hi)
    let mut lo = 0.0f64;
    let mut hi = r.max(1e-6);
    let mut guard = 0;
    while g(hi) < 0.0 && guard < 200 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
    }
    r = r.clamp(lo, hi);

    for _ in 0..60 {
        let gr = g(r);
        if gr.abs() <= 1e-12 * (1.0 + s) {
            break;
        }
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let d = dg(r);
        let mut next = if d.abs() > 1e-300 { r - gr / d } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-12 * (1.0 + r.abs()) {
            r = next;
            break;
        }
        r = next;
    }
    r
}

/// Per-cell constraint projection of a staggered flux field.
///
/// Each cell pairs its forward faces (one `sigma_x` face per axis, the
/// `sigma_t` face above) into one collocated sample of `sigma` and projects
/// it onto `K(t_cell)`. The pairs are disjoint, so this is an exact Euclidean
/// projection, idempotent and safe at any ascent amplitude. Faces that are
/// nobody's forward face (the bottom slab, the lateral faces on the minus
/// side) carry only their marginal constraints: `K(t)` never bounds
/// `sigma_x` alone, and the bottom plane is covered by the slice clamp below.
pub fn apply_k_projection(problem: &Problem, sig: &FluxField) -> Result<FluxField, ProjectError> {
    let mut out = sig.clone();
    apply_k_projection_in_place(problem, &mut out)?;
    Ok(out)
}

pub fn apply_k_projection_in_place(problem: &Problem, sig: &mut FluxField) -> Result<(), ProjectError> {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let dim = spec.dim();

    // paraboloid parameters per vertical level
    let mut params = Vec::with_capacity(n_t);
    for k in 0..n_t {
        match crate::problem::constraint_params(problem.integrand.as_ref(), spec.t_center(k)) {
            ConstraintSet::Paraboloid { a, c } => {
                if a <= 0.0 {
                    return Err(ProjectError::BadOpening);
                }
                params.push((a, c));
            }
            ConstraintSet::Generic => return Err(ProjectError::GenericIntegrand),
        }
    }

    project_k_pass(problem, sig, &params);
    // the face planes at D u {m, M} carry the stronger slice bound
    apply_slice_constraints_in_place(problem, sig);
    Ok(())
}

/// One exact pass: each cell groups its boundary-oriented x-face per axis
/// (forward on the near half of the row, backward past the midpoint) with
/// the upper t-face; the groups are disjoint.
fn project_k_pass(problem: &Problem, sig: &mut FluxField, params: &[(f64, f64)]) {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let n_t = spec.n_t;
    let dim = spec.dim();
    let mut qx = [0.0f64; 2];
    let mut fidx = [usize::MAX; 2];
    for &s in &grid.inside_cells {
        let ix = spec.spatial_multi(s);
        let t_base = s * (n_t + 1);
        for k in 0..n_t {
            let (a, c) = params[k];
            // lateral boundary faces stay out of the groups: the pointwise
            // set never bounds sigma_x alone, and capping them would starve
            // the near-wall influx that the (unbounded) continuum dual uses
            for axis in 0..dim {
                let other = if dim == 1 { 0 } else { ix[1 - axis] };
                let backward = grid.pair_backward[axis][s];
                let fx = if backward { ix[axis] } else { ix[axis] + 1 };
                let f = crate::grid::face_flat(spec, axis, fx, other);
                // a backward claim yields to the left neighbor's forward
                // claim at the row midpoint (each face in one group only)
                let claimed = if backward {
                    let mut jx = ix;
                    jx[axis] = ix[axis].wrapping_sub(1);
                    ix[axis] > 0 && {
                        let left = spec.spatial_flat(&jx[..dim]);
                        !grid.mask.inside[left] || grid.pair_backward[axis][left]
                    }
                } else {
                    true
                };
                if claimed && grid.mask.face_kind[axis][f] == crate::grid::FaceKind::Interior {
                    fidx[axis] = f * n_t + k;
                    qx[axis] = sig.sigma_x[axis][fidx[axis]];
                } else {
                    fidx[axis] = usize::MAX;
                    qx[axis] = 0.0;
                }
            }
            let qt = sig.sigma_t[t_base + k + 1];

            let s2: f64 = qx[..dim].iter().map(|x| x * x).sum();
            if qt >= a * s2 + c {
                continue;
            }
            let (px, pt) = project_one(&qx[..dim], qt, a, c);
            for axis in 0..dim {
                if fidx[axis] != usize::MAX {
                    sig.sigma_x[axis][fidx[axis]] = px[axis];
                }
            }
            sig.sigma_t[t_base + k + 1] = pt;
        }
    }
}

/// Infeasible-branch projection (no allocation; `a > 0` already checked).
fn project_one(q_x: &[f64], q_t: f64, a: f64, c: f64) -> ([f64; 2], f64) {
    let s2: f64 = q_x.iter().map(|x| x * x).sum();
    let s = s2.sqrt();
    let mut px = [0.0f64; 2];
    if s < 1e-300 {
        return (px, c);
    }
    let r = cubic_root(a, 1.0 + 2.0 * a * (c - q_t), s);
    let scale = r / s;
    for (i, &x) in q_x.iter().enumerate() {
        px[i] = x * scale;
    }
    (px, a * r * r + c)
}

/// Clamps `sigma^t` upward on each horizontal face plane at `d in D u {m, M}`:
/// `sigma^t := max(sigma^t, -f(d, 0))`.
pub fn apply_slice_constraints(problem: &Problem, sig: &FluxField) -> FluxField {
    let mut out = sig.clone();
    apply_slice_constraints_in_place(problem, &mut out);
    out
}

pub fn apply_slice_constraints_in_place(problem: &Problem, sig: &mut FluxField) {
    let grid = &problem.grid;
    let n_t = grid.spec.n_t;
    for (k_plane, d) in problem.slice_planes() {
        let bound = problem.integrand.neg_f0(d);
        for &s in &grid.inside_cells {
            let idx = s * (n_t + 1) + k_plane;
            if sig.sigma_t[idx] < bound {
                sig.sigma_t[idx] = bound;
            }
        }
    }
}

/// Clamp the lifted variable into `[0, 1]`.
pub fn project_primal(v: &ScalarField) -> ScalarField {
    let mut out = v.clone();
    project_primal_in_place(&mut out);
    out
}

pub fn project_primal_in_place(v: &mut ScalarField) {
    for x in &mut v.data {
        *x = x.clamp(0.0, 1.0);
    }
}

/// Hard assignment of the Neumann flux `sigma^x . nu = -gamma'(t)` on Gamma_1 faces.
pub fn project_neumann_trace(problem: &Problem, sig: &FluxField) -> FluxField {
    let mut out = sig.clone();
    project_neumann_trace_in_place(problem, &mut out);
    out
}

pub fn project_neumann_trace_in_place(problem: &Problem, sig: &mut FluxField) {
    let grid = &problem.grid;
    let spec = &grid.spec;
    let n_t = spec.n_t;
    for axis in 0..spec.dim() {
        let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            for fx in 0..=spec.n_x[axis] {
                let f = crate::grid::face_flat(spec, axis, fx, other);
                if grid.mask.face_kind[axis][f] != FaceKind::Neumann {
                    continue;
                }
                // outward normal is +e_axis when the inside cell is below the face
                let lo_in = fx > 0 && {
                    let s = if spec.dim() == 1 {
                        fx - 1
                    } else if axis == 0 {
                        spec.spatial_flat(&[fx - 1, other])
                    } else {
                        spec.spatial_flat(&[other, fx - 1])
                    };
                    grid.mask.inside[s]
                };
                let sign = if lo_in { 1.0 } else { -1.0 };
                for k in 0..n_t {
                    let gp = (problem.boundary.gamma_prime)(spec.t_center(k));
                    sig.sigma_x[axis][f * n_t + k] = -sign * gp;
                }
            }
        }
    }
}

/// Full dual feasibility pass used by the solver: constraint projection
/// (slice clamps included) and the Neumann trace when present.
pub fn project_dual_in_place(problem: &Problem, sig: &mut FluxField) -> Result<(), ProjectError> {
    apply_k_projection_in_place(problem, sig)?;
    if problem.grid.mask.has_neumann() {
        project_neumann_trace_in_place(problem, sig);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec, Shape};
    use crate::problem::AltCaffarelli;
    use std::sync::Arc;

    fn rng_seq(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).max(3);
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        }
    }

    /// Brute-force projection oracle: scan paraboloid points `(r q_hat, a r^2 + c)`.
    fn grid_search_oracle(q_x: f64, q_t: f64, a: f64, c: f64) -> (f64, f64) {
        let mut best = (0.0, c);
        let mut best_d = f64::INFINITY;
        let mut r = 0.0;
        let dir = if q_x >= 0.0 { 1.0 } else { -1.0 };
        while r <= 4.0 {
            let p = (dir * r, a * r * r + c);
            let d = (p.0 - q_x).powi(2) + (p.1 - q_t).powi(2);
            if d < best_d {
                best_d = d;
                best = p;
            }
            r += 1e-5;
        }
        best
    }

    #[test]
    fn feasible_point_is_fixed() {
        let (px, pt) = project_epigraph(&[1.0], 5.0, 0.5, -1.0).unwrap();
        assert_eq!(px[0], 1.0);
        assert_eq!(pt, 5.0);
    }

    #[test]
    fn axis_point_below_vertex_projects_to_vertex() {
        let (px, pt) = project_epigraph(&[0.0], -2.0, 0.5, -1.0).unwrap();
        assert_eq!(px[0], 0.0);
        assert!((pt - -1.0).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_opening_rejected() {
        assert!(project_epigraph(&[1.0], 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn matches_grid_search_oracle() {
        let (px, pt) = project_epigraph(&[2.0], -3.0, 0.5, -1.0).unwrap();
        let (ox, ot) = grid_search_oracle(2.0, -3.0, 0.5, -1.0);
        assert!((px[0] - ox).abs() < 1e-4 && (pt - ot).abs() < 1e-4);

        let mut next = rng_seq(41);
        let mut tested = 0;
        while tested < 100 {
            let a = 0.25 + next().abs();
            let c = 2.0 * next();
            let q = (3.0 * next(), c - 0.2 - 3.0 * next().abs());
            let s2 = q.0 * q.0;
            if q.1 >= a * s2 + c {
                continue;
            }
            let (px, pt) = project_epigraph(&[q.0], q.1, a, c).unwrap();
            let (ox, ot) = grid_search_oracle(q.0, q.1, a, c);
            assert!(
                (px[0] - ox).abs() < 1e-4 && (pt - ot).abs() < 1e-4,
                "q = {q:?}, a = {a}, c = {c}: got ({}, {pt}), oracle ({ox}, {ot})",
                px[0]
            );
            tested += 1;
        }
    }

    #[test]
    fn projection_properties_random() {
        let mut next = rng_seq(43);
        for _ in 0..10_000 {
            let a = 0.1 + next().abs() * 2.0;
            let c = 3.0 * next();
            let q = ([4.0 * next(), 4.0 * next()], 4.0 * next());
            let (px, pt) = project_epigraph(&q.0, q.1, a, c).unwrap();
            // feasibility
            let s2: f64 = px.iter().map(|x| x * x).sum();
            assert!(pt >= a * s2 + c - 1e-10);
            // idempotence
            let (ppx, ppt) = project_epigraph(&px, pt, a, c).unwrap();
            assert!((ppx[0] - px[0]).abs() < 1e-10 && (ppx[1] - px[1]).abs() < 1e-10);
            assert!((ppt - pt).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_nonexpansive() {
        let mut next = rng_seq(47);
        for _ in 0..5_000 {
            let a = 0.1 + next().abs() * 2.0;
            let c = 3.0 * next();
            let p = ([4.0 * next()], 4.0 * next());
            let q = ([4.0 * next()], 4.0 * next());
            let pp = project_epigraph(&p.0, p.1, a, c).unwrap();
            let qq = project_epigraph(&q.0, q.1, a, c).unwrap();
            let d_in = ((p.0[0] - q.0[0]).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            let d_out = ((pp.0[0] - qq.0[0]).powi(2) + (pp.1 - qq.1).powi(2)).sqrt();
            assert!(d_out <= d_in + 1e-10);
        }
    }

    #[test]
    fn kkt_alignment_for_infeasible_points() {
        let mut next = rng_seq(53);
        let mut tested = 0;
        while tested < 2_000 {
            let a = 0.1 + next().abs() * 2.0;
            let c = 3.0 * next();
            let q = ([4.0 * next()], 4.0 * next());
            if q.1 >= a * q.0[0] * q.0[0] + c - 1e-9 {
                continue;
            }
            let (px, pt) = project_epigraph(&q.0, q.1, a, c).unwrap();
            // q - p must be parallel to the outward normal (2 a p^x, -1)
            let dx = q.0[0] - px[0];
            let dt = q.1 - pt;
            let n = (2.0 * a * px[0], -1.0);
            let cross = dx * n.1 - dt * n.0;
            let scale = ((dx * dx + dt * dt).sqrt() * (n.0 * n.0 + n.1 * n.1).sqrt()).max(1e-30);
            assert!(cross.abs() / scale <= 1e-8, "cross = {cross}");
            tested += 1;
        }
    }

    fn small_problem(lambda: f64) -> Problem {
        let spec = GridSpec::new(&[6], 6, 1.0 / 6.0, &[0.0], (0.0, 1.0)).unwrap();
        let grid = make_grid(spec, Shape::Rectangle).unwrap();
        Problem::with_constant_u0(Arc::new(AltCaffarelli::new(lambda)), grid, 1.0)
    }

    #[test]
    fn feasible_field_unchanged_by_k_projection() {
        let p = small_problem(1.0);
        let sig = FluxField::zeros(&p.grid); // zero is feasible: 0 >= -lambda (t > 0) and 0 >= 0
        let out = apply_k_projection(&p, &sig).unwrap();
        assert_eq!(out, sig);
    }

    #[test]
    fn deep_infeasible_constant_field_snaps_to_vertex() {
        let lambda = 2.0;
        let p = small_problem(lambda);
        let mut sig = FluxField::zeros(&p.grid);
        sig.sigma_t.iter_mut().for_each(|x| *x = -10.0 * lambda);
        let out = apply_k_projection(&p, &sig).unwrap();
        // interior horizontal faces collect half-corrections from both cells: -lambda
        for &s in &p.grid.inside_cells {
            for k in 1..p.grid.spec.n_t {
                let v = out.sigma_t[FluxField::t_index(&p.grid, s, k)];
                assert!((v - -lambda).abs() < 1e-9, "sigma_t = {v}");
            }
            // slab planes carry the slice bounds -f(d, 0)
            assert_eq!(out.sigma_t[FluxField::t_index(&p.grid, s, 0)], 0.0);
            let top = out.sigma_t[FluxField::t_index(&p.grid, s, p.grid.spec.n_t)];
            assert!((top - -lambda).abs() < 1e-9);
        }
        // sigma_x untouched
        assert!(out.sigma_x[0].iter().all(|&x| x == 0.0));
        // second application changes nothing beyond 1e-10
        let out2 = apply_k_projection(&p, &out).unwrap();
        for (a, b) in out.sigma_t.iter().zip(out2.sigma_t.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn slice_constraints_clamp_slabs() {
        let lambda = 2.0;
        let p = small_problem(lambda);
        let mut sig = FluxField::zeros(&p.grid);
        let n_t = p.grid.spec.n_t;
        for &s in &p.grid.inside_cells {
            sig.sigma_t[s * (n_t + 1)] = -0.3;
            sig.sigma_t[s * (n_t + 1) + n_t] = -5.0;
        }
        let out = apply_slice_constraints(&p, &sig);
        for &s in &p.grid.inside_cells {
            assert_eq!(out.sigma_t[s * (n_t + 1)], 0.0); // -f(0,0) = 0
            assert_eq!(out.sigma_t[s * (n_t + 1) + n_t], -lambda); // -f(1,0) = -lambda
        }
        // already-feasible plane unchanged
        let again = apply_slice_constraints(&p, &out);
        assert_eq!(again, out);
    }

    #[test]
    fn primal_clamp() {
        let p = small_problem(1.0);
        let mut v = ScalarField::zeros(&p.grid);
        v.data[0] = 1.7;
        v.data[1] = -0.2;
        v.data[2] = 0.4;
        let out = project_primal(&v);
        assert_eq!(out.data[0], 1.0);
        assert_eq!(out.data[1], 0.0);
        assert_eq!(out.data[2], 0.4);

        // nonexpansiveness spot check against points already in [0, 1]
        let mut next = rng_seq(59);
        for _ in 0..1000 {
            let x = 3.0 * next();
            let w = next().abs().min(1.0);
            assert!((x.clamp(0.0, 1.0) - w).abs() <= (x - w).abs() + 1e-15);
        }
    }

    #[test]
    fn neumann_trace_assignment() {
        let spec = GridSpec::new(&[6], 4, 1.0 / 6.0, &[0.0], (0.0, 1.0)).unwrap();
        let mut grid = make_grid(spec, Shape::Rectangle).unwrap();
        // make the right end Neumann
        grid.set_neumann_where(|x| x[0] > 0.99);
        let mut p = Problem::with_constant_u0(Arc::new(AltCaffarelli::new(1.0)), grid, 1.0);
        p.boundary.gamma_prime = Box::new(|_| 1.0);

        let mut sig = FluxField::zeros(&p.grid);
        sig.sigma_x[0].iter_mut().for_each(|x| *x = 7.0);
        let out = project_neumann_trace(&p, &sig);
        let n_t = p.grid.spec.n_t;
        for k in 0..n_t {
            // outward normal +1 at the right face: flux = -gamma' = -1
            assert_eq!(out.sigma_x[0][6 * n_t + k], -1.0);
        }
        // interior faces untouched
        assert_eq!(out.sigma_x[0][3 * n_t], 7.0);

        // gamma' = 0 zeroes the flux; no Neumann faces -> identity
        p.boundary.gamma_prime = Box::new(|_| 0.0);
        let out2 = project_neumann_trace(&p, &sig);
        for k in 0..n_t {
            assert_eq!(out2.sigma_x[0][6 * n_t + k], 0.0);
        }
        let p2 = small_problem(1.0);
        let sig2 = FluxField::zeros(&p2.grid);
        assert_eq!(project_neumann_trace(&p2, &sig2), sig2);
    }
}
