//! Variational problem description: the integrand `f(t, z)`, its partial
//! Fenchel conjugate, the pointwise constraint sets `K(t)` of the dual
//! problem, and the one-homogeneous lifted integrand `h_f`.

use std::sync::Arc;

use crate::grid::{FaceKind, Grid, LiftedGhosts};

/// Growth certificate `f(t,z) >= alpha |z|^p - r(t)` with `0 <= r <= r_bound`.
#[derive(Debug, Clone, Copy)]
pub struct Growth {
    pub alpha: f64,
    pub p: f64,
    pub r_bound: f64,
}

/// Behavioural description of the energy density `f(t, z)`.
///
/// `z` has the spatial dimension of the grid (1 or 2). Implementations must
/// be pure and reentrant; they are shared across threads behind an `Arc`.
pub trait Integrand: Send + Sync {
    fn eval(&self, t: f64, z: &[f64]) -> f64;

    /// Partial Fenchel conjugate `f*_z(t, z*) = sup_z [z . z* - f(t, z)]`.
    fn conj_z(&self, t: f64, z_star: &[f64]) -> f64;

    /// Paraboloid parameters `(a, c)` with `K(t) = {q : q^t >= a |q^x|^2 + c}`
    /// when `f` is quadratic in `z`; `None` for generic integrands.
    fn parab(&self, t: f64) -> Option<(f64, f64)>;

    /// Discontinuity levels `D` of `t -> f(t, .)`.
    fn disc_levels(&self) -> &[f64];

    /// `-f(t, 0)`, the right-hand side of the slice constraints.
    fn neg_f0(&self, t: f64) -> f64;

    fn growth(&self) -> Growth;

    /// Whether the explicit convex calibration construction applies.
    fn convex_differentiable(&self) -> bool {
        false
    }

    /// `d/dz f(t, z)` for integrands quadratic in `z` (`2 a z`).
    fn grad_z(&self, _t: f64, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }

    /// `d/dt f(t, z)` where defined (used by the convex calibration).
    fn grad_t(&self, _t: f64, _z: &[f64]) -> f64 {
        f64::NAN
    }
}

fn sq_norm(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum()
}

/// `f(t, z) = 1/2 |z|^2 + lambda chi_{(0, inf)}(t)`.
#[derive(Debug, Clone)]
pub struct AltCaffarelli {
    pub lambda: f64,
    disc: [f64; 1],
}

impl AltCaffarelli {
    pub fn new(lambda: f64) -> Self {
        AltCaffarelli { lambda, disc: [0.0] }
    }

    #[inline]
    fn chi(&self, t: f64) -> f64 {
        if t > 0.0 {
            self.lambda
        } else {
            0.0
        }
    }
}

impl Integrand for AltCaffarelli {
    fn eval(&self, t: f64, z: &[f64]) -> f64 {
        0.5 * sq_norm(z) + self.chi(t)
    }

    fn conj_z(&self, t: f64, z_star: &[f64]) -> f64 {
        0.5 * sq_norm(z_star) - self.chi(t)
    }

    fn parab(&self, t: f64) -> Option<(f64, f64)> {
        Some((0.5, -self.chi(t)))
    }

    fn disc_levels(&self) -> &[f64] {
        &self.disc
    }

    fn neg_f0(&self, t: f64) -> f64 {
        -self.chi(t)
    }

    fn growth(&self) -> Growth {
        Growth { alpha: 0.5, p: 2.0, r_bound: 0.0 }
    }
}

/// `f(t, z) = 1/2 |z|^2 + 1/2 t^2`, the smooth convex oracle case.
#[derive(Debug, Clone, Default)]
pub struct QuadraticConvex;

impl Integrand for QuadraticConvex {
    fn eval(&self, t: f64, z: &[f64]) -> f64 {
        0.5 * sq_norm(z) + 0.5 * t * t
    }

    fn conj_z(&self, t: f64, z_star: &[f64]) -> f64 {
        0.5 * sq_norm(z_star) - 0.5 * t * t
    }

    fn parab(&self, t: f64) -> Option<(f64, f64)> {
        Some((0.5, -0.5 * t * t))
    }

    fn disc_levels(&self) -> &[f64] {
        &[]
    }

    fn neg_f0(&self, t: f64) -> f64 {
        -0.5 * t * t
    }

    fn growth(&self) -> Growth {
        Growth { alpha: 0.5, p: 2.0, r_bound: 0.0 }
    }

    fn convex_differentiable(&self) -> bool {
        true
    }

    fn grad_t(&self, t: f64, _z: &[f64]) -> f64 {
        t
    }
}

/// `f(t, z) = eps |z|^2 + W(t) - lambda t` with a two-well potential `W`.
pub struct TwoWell {
    pub eps: f64,
    pub lambda: f64,
    pub w: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub r_bound: f64,
}

impl Integrand for TwoWell {
    fn eval(&self, t: f64, z: &[f64]) -> f64 {
        self.eps * sq_norm(z) + (self.w)(t) - self.lambda * t
    }

    fn conj_z(&self, t: f64, z_star: &[f64]) -> f64 {
        sq_norm(z_star) / (4.0 * self.eps) - (self.w)(t) + self.lambda * t
    }

    fn parab(&self, t: f64) -> Option<(f64, f64)> {
        Some((1.0 / (4.0 * self.eps), -(self.w)(t) + self.lambda * t))
    }

    fn disc_levels(&self) -> &[f64] {
        &[]
    }

    fn neg_f0(&self, t: f64) -> f64 {
        -(self.w)(t) + self.lambda * t
    }

    fn growth(&self) -> Growth {
        Growth { alpha: self.eps, p: 2.0, r_bound: self.r_bound }
    }

    fn grad_z(&self, _t: f64, z: &[f64]) -> Vec<f64> {
        z.iter().map(|x| 2.0 * self.eps * x).collect()
    }
}

/// Domain tolerance of `h_f`: vertical components above this are infeasible.
pub const HF_DOMAIN_TOL: f64 = 1e-12;

/// The positively 1-homogeneous integrand of the lifted energy: the support
/// function of the epigraph `K(t)` of `f*_z(t, .)`.
///
/// `h_f(t, q) = -q^t f(t, -q^x / q^t)` when `q^t < 0`, `+inf` when `q^t > 0`
/// or (`q^t = 0`, `q^x != 0`), and `0` at the origin.
pub fn h_f(f: &dyn Integrand, t: f64, q_x: &[f64], q_t: f64) -> f64 {
    if q_t > HF_DOMAIN_TOL {
        return f64::INFINITY;
    }
    if q_t > -HF_DOMAIN_TOL {
        return if sq_norm(q_x) <= HF_DOMAIN_TOL * HF_DOMAIN_TOL {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let mut z = [0.0f64; 2];
    for (i, &qx) in q_x.iter().enumerate() {
        z[i] = -qx / q_t;
    }
    -q_t * f.eval(t, &z[..q_x.len()])
}

/// Pointwise constraint set of the dual problem at level `t`.
#[derive(Debug, Clone, Copy)]
pub enum ConstraintSet {
    /// `{q : q^t >= a |q^x|^2 + c}` with `a > 0`.
    Paraboloid { a: f64, c: f64 },
    /// Only membership/conjugate callables available (no closed-form projector).
    Generic,
}

/// Parameters of `K(t)`; paraboloid when the integrand is quadratic in `z`.
pub fn constraint_params(f: &dyn Integrand, t: f64) -> ConstraintSet {
    match f.parab(t) {
        Some((a, c)) => ConstraintSet::Paraboloid { a, c },
        None => ConstraintSet::Generic,
    }
}

/// `q in K(t)` membership test via the conjugate, usable for any integrand.
pub fn k_member(f: &dyn Integrand, t: f64, q_x: &[f64], q_t: f64, slack: f64) -> bool {
    q_t + slack >= f.conj_z(t, q_x)
}

/// Neumann boundary density: `gamma` and its derivative. `gamma(0) = 0`.
pub struct BoundaryDensity {
    pub gamma: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub gamma_prime: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl BoundaryDensity {
    pub fn zero() -> Self {
        BoundaryDensity {
            gamma: Box::new(|_| 0.0),
            gamma_prime: Box::new(|_| 0.0),
        }
    }
}

impl std::fmt::Debug for BoundaryDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryDensity{..}")
    }
}

/// The full problem instance: integrand, grid, Dirichlet datum, Neumann density.
pub struct Problem {
    pub integrand: Arc<dyn Integrand>,
    pub grid: Grid,
    /// Dirichlet datum per lateral face (NaN on non-boundary faces); clamped to `[m, M]`.
    pub u0_face: Vec<Vec<f64>>,
    /// Constant used to fill the initial subgraph and the interior extension of `u0`.
    pub u0_fill: f64,
    pub boundary: BoundaryDensity,
}

impl Problem {
    /// Problem with a constant Dirichlet datum on every Dirichlet face.
    pub fn with_constant_u0(integrand: Arc<dyn Integrand>, grid: Grid, u0: f64) -> Self {
        let (m, big_m) = grid.spec.t_range;
        let u0 = u0.clamp(m, big_m);
        let u0_face = grid
            .mask
            .face_kind
            .iter()
            .map(|kinds| {
                kinds
                    .iter()
                    .map(|&k| if k == FaceKind::Dirichlet { u0 } else { f64::NAN })
                    .collect()
            })
            .collect();
        Problem {
            integrand,
            grid,
            u0_face,
            u0_fill: u0,
            boundary: BoundaryDensity::zero(),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.grid.spec.t_range
    }

    /// Ghost table for the lifted gradient: lateral ghost `1_{t <= u0}`.
    pub fn lifted_ghosts(&self) -> LiftedGhosts {
        LiftedGhosts {
            u0_face: self.u0_face.clone(),
        }
    }

    /// Slice levels where the constraint `sigma^t >= -f(d, 0)` is enforced:
    /// the horizontal face plane nearest each `d in D` inside `[m, M]`,
    /// plus the two slabs `m` and `M`.
    pub fn slice_planes(&self) -> Vec<(usize, f64)> {
        let spec = &self.grid.spec;
        let (m, big_m) = spec.t_range;
        let mut planes = vec![(0usize, m), (spec.n_t, big_m)];
        for &d in self.integrand.disc_levels() {
            if d < m - 1e-12 || d > big_m + 1e-12 {
                continue;
            }
            let k = ((d - m) / spec.h_t).round().clamp(0.0, spec.n_t as f64) as usize;
            if planes.iter().all(|&(kk, _)| kk != k) {
                planes.push((k, d));
            }
        }
        planes.sort_by_key(|&(k, _)| k);
        planes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec, Shape};

    fn rng_seq(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(6364136223846793005).max(3);
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn h_f_with_unit_negative_vertical_recovers_f() {
        let f = AltCaffarelli::new(1.5);
        let mut next = rng_seq(5);
        for _ in 0..100 {
            let t = 2.0 * next();
            let z = [3.0 * next()];
            let v = h_f(&f, t, &z, -1.0);
            assert!((v - f.eval(t, &z)).abs() < 1e-12);
        }
    }

    #[test]
    fn h_f_at_origin_and_outside_domain() {
        let f = AltCaffarelli::new(1.0);
        assert_eq!(h_f(&f, 0.3, &[0.0], 0.0), 0.0);
        assert_eq!(h_f(&f, 0.3, &[1.0], 0.0), f64::INFINITY);
        assert_eq!(h_f(&f, 0.3, &[0.2], 0.5), f64::INFINITY);
    }

    #[test]
    fn h_f_alt_caffarelli_example() {
        // lambda = 1, t = 0.5, q = (1, -2): 2 f(0.5, 0.5) = 2 (0.125 + 1) = 2.25
        let f = AltCaffarelli::new(1.0);
        let v = h_f(&f, 0.5, &[1.0], -2.0);
        assert!((v - 2.25).abs() < 1e-14);
    }

    #[test]
    fn h_f_positively_one_homogeneous() {
        let f = QuadraticConvex;
        let mut next = rng_seq(11);
        for _ in 0..300 {
            let t = next();
            let q_x = [next(), next()];
            let q_t = -next().abs() - 1e-3;
            let lam = 2.0 * next().abs();
            let a = h_f(&f, t, &q_x, q_t);
            let b = h_f(&f, t, &[lam * q_x[0], lam * q_x[1]], lam * q_t);
            assert!((b - lam * a).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn h_f_midpoint_convexity() {
        let f = AltCaffarelli::new(0.7);
        let mut next = rng_seq(17);
        for _ in 0..300 {
            let t = next();
            let p = ([next()], -next().abs() - 0.1);
            let q = ([next()], -next().abs() - 0.1);
            let mid = ([(p.0[0] + q.0[0]) / 2.0], (p.1 + q.1) / 2.0);
            let lhs = h_f(&f, t, &mid.0, mid.1);
            let rhs = 0.5 * h_f(&f, t, &p.0, p.1) + 0.5 * h_f(&f, t, &q.0, q.1);
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn fenchel_young_inequality_sampled() {
        let integrands: Vec<Box<dyn Integrand>> = vec![
            Box::new(AltCaffarelli::new(2.0)),
            Box::new(QuadraticConvex),
        ];
        let mut next = rng_seq(23);
        for f in &integrands {
            for _ in 0..1000 {
                let t = 2.0 * next();
                let z = [3.0 * next()];
                let zs = [3.0 * next()];
                let lhs = f.eval(t, &z) + f.conj_z(t, &zs);
                assert!(lhs >= z[0] * zs[0] - 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_matches_paraboloid_params() {
        let integrands: Vec<Box<dyn Integrand>> = vec![
            Box::new(AltCaffarelli::new(2.0)),
            Box::new(QuadraticConvex),
        ];
        let mut next = rng_seq(29);
        for f in &integrands {
            for _ in 0..200 {
                let t = 2.0 * next();
                let zs = [3.0 * next()];
                let (a, c) = f.parab(t).unwrap();
                assert!((f.conj_z(t, &zs) - (a * zs[0] * zs[0] + c)).abs() < 1e-12);
                // inf over z* of the conjugate is attained at 0 and equals -f(t, 0)
                assert!((c - f.neg_f0(t)).abs() < 1e-12);
                assert!((f.neg_f0(t) + f.eval(t, &[0.0])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constraint_params_examples() {
        let ac = AltCaffarelli::new(2.0);
        match constraint_params(&ac, 0.5) {
            ConstraintSet::Paraboloid { a, c } => {
                assert!((a - 0.5).abs() < 1e-15 && (c + 2.0).abs() < 1e-15);
            }
            _ => panic!("expected paraboloid"),
        }
        match constraint_params(&ac, -1.0) {
            ConstraintSet::Paraboloid { a, c } => {
                assert!((a - 0.5).abs() < 1e-15 && c.abs() < 1e-15);
            }
            _ => panic!("expected paraboloid"),
        }
        let q = QuadraticConvex;
        match constraint_params(&q, 1.0) {
            ConstraintSet::Paraboloid { a, c } => {
                assert!((a - 0.5).abs() < 1e-15 && (c + 0.5).abs() < 1e-15);
            }
            _ => panic!("expected paraboloid"),
        }
    }

    #[test]
    fn slice_planes_for_alt_caffarelli_on_unit_band() {
        let spec = GridSpec::new(&[4], 8, 0.25, &[0.0], (0.0, 1.0)).unwrap();
        let grid = make_grid(spec, Shape::Rectangle).unwrap();
        let p = Problem::with_constant_u0(Arc::new(AltCaffarelli::new(2.0)), grid, 1.0);
        let planes = p.slice_planes();
        // D = {0} coincides with the bottom slab; planes are {0, n_t}
        assert_eq!(planes.len(), 2);
        assert_eq!(planes[0].0, 0);
        assert!((planes[0].1 - 0.0).abs() < 1e-15);
        assert_eq!(planes[1].0, 8);
        assert!((planes[1].1 - 1.0).abs() < 1e-15);
    }
}
