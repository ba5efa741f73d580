//! Staggered (MAC) grids on the cylinder `Omega x [m, M]`.
//!
//! The scalar unknown `v` lives on cell centers, the flux `sigma` on faces:
//! `sigma_x` on faces normal to a spatial axis, `sigma_t` on horizontal faces
//! (including the two slab faces at `t = m` and `t = M`). With this layout the
//! forward-difference gradient and the face divergence form an exact adjoint
//! pair, `<grad v, sigma> = -<v, div sigma>`, once ghost values are zero.
//!
//! Spatial axes support 1 or 2 dimensions; the vertical axis is always last
//! and has the fastest-varying index so that column scans are contiguous.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("mesh sizes and cell counts must be positive (counts >= 2)")]
    BadSpec,
    #[error("domain descriptor does not fit inside the grid bounding box")]
    DescriptorOutOfBounds,
    #[error("domain interior is empty")]
    EmptyInterior,
    #[error("domain interior is disconnected")]
    Disconnected,
    #[error("field shape does not match grid")]
    ShapeMismatch,
}

/// Discretization of the bounding box of `Omega x [m, M]`.
#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Spatial cell counts, one entry per axis (1 or 2 axes).
    pub n_x: Vec<usize>,
    /// Vertical cell count.
    pub n_t: usize,
    /// Spatial mesh size (isotropic across spatial axes).
    pub h: f64,
    /// Vertical mesh size.
    pub h_t: f64,
    /// Lower-left corner of the spatial box.
    pub origin: Vec<f64>,
    /// Vertical bounds `(m, M)`.
    pub t_range: (f64, f64),
}

impl GridSpec {
    /// Builds a spec with `h_t = (M - m) / n_t`, so the vertical extent is met exactly.
    pub fn new(n_x: &[usize], n_t: usize, h: f64, origin: &[f64], t_range: (f64, f64)) -> Result<Self, GridError> {
        let dim = n_x.len();
        if dim == 0 || dim > 2 || origin.len() != dim {
            return Err(GridError::BadSpec);
        }
        if h <= 0.0 || n_t < 2 || n_x.iter().any(|&n| n < 2) || t_range.0 >= t_range.1 {
            return Err(GridError::BadSpec);
        }
        let h_t = (t_range.1 - t_range.0) / n_t as f64;
        Ok(GridSpec {
            n_x: n_x.to_vec(),
            n_t,
            h,
            h_t,
            origin: origin.to_vec(),
            t_range,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_x.len()
    }

    /// Number of spatial cells in the bounding box.
    pub fn n_spatial(&self) -> usize {
        self.n_x.iter().product()
    }

    /// Total cells in the bounding box (spatial x vertical).
    pub fn n_cells(&self) -> usize {
        self.n_spatial() * self.n_t
    }

    /// Spatial cell area `h^N`.
    pub fn cell_area(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    /// Cell volume `h^N * h_t`.
    pub fn cell_vol(&self) -> f64 {
        self.cell_area() * self.h_t
    }

    /// Center coordinate of spatial cell index along `axis`.
    pub fn x_center(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.h
    }

    /// Center level of vertical cell `k`.
    pub fn t_center(&self, k: usize) -> f64 {
        self.t_range.0 + (k as f64 + 0.5) * self.h_t
    }

    /// Level of the horizontal face below cell `k` (face `k` of `0..=n_t`).
    pub fn t_face(&self, k: usize) -> f64 {
        self.t_range.0 + k as f64 * self.h_t
    }

    /// Decompose a flat spatial index into per-axis indices (axis 0 fastest).
    pub fn spatial_multi(&self, s: usize) -> [usize; 2] {
        match self.dim() {
            1 => [s, 0],
            _ => [s % self.n_x[0], s / self.n_x[0]],
        }
    }

    pub fn spatial_flat(&self, ix: &[usize]) -> usize {
        match self.dim() {
            1 => ix[0],
            _ => ix[0] + ix[1] * self.n_x[0],
        }
    }

    /// Upper bound on the operator norm of the forward-difference gradient,
    /// `2 * sqrt(sum over all N+1 axes of 1/mesh^2)`.
    pub fn operator_norm_bound(&self) -> f64 {
        let mut s = self.dim() as f64 / (self.h * self.h);
        s += 1.0 / (self.h_t * self.h_t);
        2.0 * s.sqrt()
    }
}

/// Classification of one lateral face (a face normal to a spatial axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceKind {
    /// Both neighbor cells inside Omega.
    Interior,
    /// Inside/outside interface on the Dirichlet part `Gamma_0`.
    Dirichlet,
    /// Inside/outside interface on the Neumann part `Gamma_1`.
    Neumann,
    /// Neither side inside.
    Unused,
}

/// Domain descriptor accepted by [`make_grid`].
#[derive(Debug, Clone)]
pub enum Shape {
    /// The whole bounding box.
    Rectangle,
    /// Cells whose centers satisfy `|x - center| < radius`.
    Disc { center: Vec<f64>, radius: f64 },
    /// Explicit inside flags, one per spatial cell of the box.
    Explicit(Vec<bool>),
}

/// Cell mask plus boundary-face classification for a (possibly non-rectangular) Omega.
#[derive(Debug, Clone)]
pub struct DomainMask {
    /// Per spatial cell of the bounding box.
    pub inside: Vec<bool>,
    /// Per axis, per lateral face: the face classification.
    pub face_kind: Vec<Vec<FaceKind>>,
    n_inside: usize,
}

impl DomainMask {
    pub fn n_inside(&self) -> usize {
        self.n_inside
    }

    pub fn has_neumann(&self) -> bool {
        self.face_kind
            .iter()
            .any(|fk| fk.iter().any(|&k| k == FaceKind::Neumann))
    }
}

/// Grid spec, mask and a few precomputed index tables bundled together.
#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: GridSpec,
    pub mask: DomainMask,
    /// Flat indices of inside spatial cells.
    pub inside_cells: Vec<usize>,
    /// Per axis, per spatial cell: use the cell's backward (minus-side) face
    /// in its constraint group. Faces pair with the adjacent cell nearer the
    /// lateral boundary of their row, where the Dirichlet data anchors the
    /// graph; cells on the far half of a row therefore group their backward
    /// face, and the row midpoint column groups no face along that axis.
    pub pair_backward: Vec<Vec<bool>>,
}

/// Number of lateral faces (box-wide) along `axis`.
pub fn n_faces(spec: &GridSpec, axis: usize) -> usize {
    let mut n = spec.n_x[axis] + 1;
    for (a, &nx) in spec.n_x.iter().enumerate() {
        if a != axis {
            n *= nx;
        }
    }
    n
}

/// Flat face index along `axis` for face position `fx` (0..=n_x\[axis\]) and
/// transverse cell index `other` (ignored in 1D).
pub fn face_flat(spec: &GridSpec, axis: usize, fx: usize, other: usize) -> usize {
    match spec.dim() {
        1 => fx,
        _ => {
            if axis == 0 {
                fx + other * (spec.n_x[0] + 1)
            } else {
                other + fx * spec.n_x[0]
            }
        }
    }
}

/// Builds the grid: masks the cells, checks connectivity, classifies boundary
/// faces (all Dirichlet by default, matching a pure Dirichlet condition).
pub fn make_grid(spec: GridSpec, shape: Shape) -> Result<Grid, GridError> {
    let ns = spec.n_spatial();
    let inside: Vec<bool> = match &shape {
        Shape::Rectangle => vec![true; ns],
        Shape::Disc { center, radius } => {
            if center.len() != spec.dim() || *radius <= 0.0 {
                return Err(GridError::BadSpec);
            }
            for a in 0..spec.dim() {
                let lo = spec.origin[a];
                let hi = spec.origin[a] + spec.n_x[a] as f64 * spec.h;
                if center[a] - radius < lo - 1e-12 || center[a] + radius > hi + 1e-12 {
                    return Err(GridError::DescriptorOutOfBounds);
                }
            }
            (0..ns)
                .map(|s| {
                    let ix = spec.spatial_multi(s);
                    let mut d2 = 0.0;
                    for a in 0..spec.dim() {
                        let dx = spec.x_center(a, ix[a]) - center[a];
                        d2 += dx * dx;
                    }
                    d2 < radius * radius
                })
                .collect()
        }
        Shape::Explicit(flags) => {
            if flags.len() != ns {
                return Err(GridError::ShapeMismatch);
            }
            flags.clone()
        }
    };

    let n_inside = inside.iter().filter(|&&b| b).count();
    if n_inside == 0 {
        return Err(GridError::EmptyInterior);
    }
    check_connected(&spec, &inside, n_inside)?;

    // Classify lateral faces.
    let mut face_kind = Vec::with_capacity(spec.dim());
    for axis in 0..spec.dim() {
        let nf = n_faces(&spec, axis);
        let mut kinds = vec![FaceKind::Unused; nf];
        let n_other: usize = if spec.dim() == 1 {
            1
        } else {
            spec.n_x[1 - axis]
        };
        for other in 0..n_other {
            for fx in 0..=spec.n_x[axis] {
                let lo = if fx > 0 {
                    Some(cell_of(&spec, axis, fx - 1, other))
                } else {
                    None
                };
                let hi = if fx < spec.n_x[axis] {
                    Some(cell_of(&spec, axis, fx, other))
                } else {
                    None
                };
                let lo_in = lo.map(|s| inside[s]).unwrap_or(false);
                let hi_in = hi.map(|s| inside[s]).unwrap_or(false);
                let f = face_flat(&spec, axis, fx, other);
                kinds[f] = match (lo_in, hi_in) {
                    (true, true) => FaceKind::Interior,
                    (false, false) => FaceKind::Unused,
                    _ => FaceKind::Dirichlet,
                };
            }
        }
        face_kind.push(kinds);
    }

    let inside_cells: Vec<usize> = (0..ns).filter(|&s| inside[s]).collect();

    // boundary-oriented pairing: cell uses its forward face on the near half
    // of its row, its backward face on the far half, neither at the midpoint
    let mut pair_backward = Vec::with_capacity(spec.dim());
    for axis in 0..spec.dim() {
        let mut table = vec![false; ns];
        let n_other: usize = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            let mut lo = None;
            let mut hi = None;
            for pos in 0..spec.n_x[axis] {
                let s = cell_of(&spec, axis, pos, other);
                if inside[s] {
                    if lo.is_none() {
                        lo = Some(pos);
                    }
                    hi = Some(pos);
                }
            }
            if let (Some(lo), Some(hi)) = (lo, hi) {
                for pos in 0..spec.n_x[axis] {
                    let s = cell_of(&spec, axis, pos, other);
                    // strictly past the midpoint: group the backward face
                    table[s] = (pos as f64) > (lo + hi) as f64 / 2.0;
                }
            }
        }
        pair_backward.push(table);
    }

    Ok(Grid {
        spec,
        mask: DomainMask {
            inside,
            face_kind,
            n_inside,
        },
        inside_cells,
        pair_backward,
    })
}

fn cell_of(spec: &GridSpec, axis: usize, pos: usize, other: usize) -> usize {
    match spec.dim() {
        1 => pos,
        _ => {
            if axis == 0 {
                spec.spatial_flat(&[pos, other])
            } else {
                spec.spatial_flat(&[other, pos])
            }
        }
    }
}

fn check_connected(spec: &GridSpec, inside: &[bool], n_inside: usize) -> Result<(), GridError> {
    let start = inside.iter().position(|&b| b).ok_or(GridError::EmptyInterior)?;
    let mut seen = vec![false; inside.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0usize;
    while let Some(s) = stack.pop() {
        count += 1;
        let ix = spec.spatial_multi(s);
        for a in 0..spec.dim() {
            for d in [-1isize, 1] {
                let q = ix[a] as isize + d;
                if q < 0 || q as usize >= spec.n_x[a] {
                    continue;
                }
                let mut jx = ix;
                jx[a] = q as usize;
                let t = spec.spatial_flat(&jx[..spec.dim()]);
                if inside[t] && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    if count != n_inside {
        return Err(GridError::Disconnected);
    }
    Ok(())
}

impl Grid {
    pub fn cell_index(&self, s: usize, k: usize) -> usize {
        s * self.spec.n_t + k
    }

    /// Marks as Neumann every Dirichlet face whose midpoint satisfies `pred`.
    pub fn set_neumann_where<F: Fn(&[f64]) -> bool>(&mut self, pred: F) {
        for axis in 0..self.spec.dim() {
            let n_other = if self.spec.dim() == 1 { 1 } else { self.spec.n_x[1 - axis] };
            for other in 0..n_other {
                for fx in 0..=self.spec.n_x[axis] {
                    let f = face_flat(&self.spec, axis, fx, other);
                    if self.mask.face_kind[axis][f] != FaceKind::Dirichlet {
                        continue;
                    }
                    let mut pos = [0.0f64; 2];
                    pos[axis] = self.spec.origin[axis] + fx as f64 * self.spec.h;
                    if self.spec.dim() == 2 {
                        pos[1 - axis] = self.spec.x_center(1 - axis, other);
                    }
                    if pred(&pos[..self.spec.dim()]) {
                        self.mask.face_kind[axis][f] = FaceKind::Neumann;
                    }
                }
            }
        }
    }
}

/// Cell-centered scalar field over the bounding box (outside cells are dead storage).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            data: vec![0.0; grid.spec.n_cells()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField {
            data: vec![c; grid.spec.n_cells()],
        }
    }

    pub fn at(&self, grid: &Grid, s: usize, k: usize) -> f64 {
        self.data[grid.cell_index(s, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Face-centered flux field: one array per spatial axis plus the vertical component.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    /// `sigma_x[axis][face * n_t + k]`.
    pub sigma_x: Vec<Vec<f64>>,
    /// `sigma_t[s * (n_t + 1) + k]`, `k = 0..=n_t` (bottom and top slabs included).
    pub sigma_t: Vec<f64>,
}

impl FluxField {
    pub fn zeros(grid: &Grid) -> Self {
        let spec = &grid.spec;
        let sigma_x = (0..spec.dim())
            .map(|a| vec![0.0; n_faces(spec, a) * spec.n_t])
            .collect();
        FluxField {
            sigma_x,
            sigma_t: vec![0.0; spec.n_spatial() * (spec.n_t + 1)],
        }
    }

    pub fn t_index(grid: &Grid, s: usize, k: usize) -> usize {
        s * (grid.spec.n_t + 1) + k
    }

    pub fn is_finite(&self) -> bool {
        self.sigma_x.iter().all(|c| c.iter().all(|x| x.is_finite()))
            && self.sigma_t.iter().all(|x| x.is_finite())
    }
}

/// Ghost-value conventions for [`gradient`].
#[derive(Debug, Clone)]
pub enum Ghosts<'a> {
    /// Every ghost value zero (adjointness checks, operator norms).
    Zero,
    /// Lifted-problem convention: lateral Dirichlet ghost is the subgraph
    /// indicator of the boundary datum, bottom ghost 1, top ghost 0,
    /// Neumann lateral faces mirror the inside value.
    Lifted(&'a LiftedGhosts),
    /// Mixed Dirichlet-Neumann Laplacian convention: zero phantom cells on
    /// all lateral boundary faces, mirrored (zero-difference) slab faces.
    Poisson,
}

/// Precomputed boundary datum per lateral Dirichlet face.
#[derive(Debug, Clone)]
pub struct LiftedGhosts {
    /// Per axis, per face: the Dirichlet datum `u0` (NaN when not a Dirichlet face).
    pub u0_face: Vec<Vec<f64>>,
}

impl LiftedGhosts {
    /// Ghost value of `v` outside a Dirichlet face at level `t`: `1_{t <= u0}`.
    #[inline]
    pub fn value(&self, axis: usize, face: usize, t: f64) -> f64 {
        if t <= self.u0_face[axis][face] {
            1.0
        } else {
            0.0
        }
    }
}

/// Forward-difference gradient of `v` onto faces, `(neighbor - cell) / mesh`,
/// with ghost values supplying the outside neighbor on boundary faces.
pub fn gradient(grid: &Grid, v: &ScalarField, ghosts: &Ghosts) -> FluxField {
    let mut out = FluxField::zeros(grid);
    gradient_into(grid, v, ghosts, &mut out);
    out
}

/// Allocation-free [`gradient`].
pub fn gradient_into(grid: &Grid, v: &ScalarField, ghosts: &Ghosts, out: &mut FluxField) {
    let spec = &grid.spec;
    assert_eq!(v.data.len(), spec.n_cells(), "scalar field shape mismatch");
    let n_t = spec.n_t;

    for axis in 0..spec.dim() {
        let comp = &mut out.sigma_x[axis];
        let n_other = if spec.dim() == 1 { 1 } else { spec.n_x[1 - axis] };
        for other in 0..n_other {
            for fx in 0..=spec.n_x[axis] {
                let f = face_flat(spec, axis, fx, other);
                let kind = grid.mask.face_kind[axis][f];
                if kind == FaceKind::Unused {
                    continue;
                }
                let lo = if fx > 0 { Some(cell_of(spec, axis, fx - 1, other)) } else { None };
                let hi = if fx < spec.n_x[axis] { Some(cell_of(spec, axis, fx, other)) } else { None };
                for k in 0..n_t {
                    let idx = f * n_t + k;
                    comp[idx] = match kind {
                        FaceKind::Interior => {
                            (v.data[grid.cell_index(hi.unwrap(), k)]
                                - v.data[grid.cell_index(lo.unwrap(), k)])
                                / spec.h
                        }
                        FaceKind::Dirichlet => {
                            let lo_in = lo.map(|s| grid.mask.inside[s]).unwrap_or(false);
                            let ghost = match ghosts {
                                Ghosts::Zero => 0.0,
                                Ghosts::Poisson => 0.0,
                                Ghosts::Lifted(lg) => lg.value(axis, f, spec.t_center(k)),
                            };
                            if lo_in {
                                (ghost - v.data[grid.cell_index(lo.unwrap(), k)]) / spec.h
                            } else {
                                (v.data[grid.cell_index(hi.unwrap(), k)] - ghost) / spec.h
                            }
                        }
                        FaceKind::Neumann => match ghosts {
                            // mirror ghost: zero difference
                            Ghosts::Lifted(_) | Ghosts::Poisson => 0.0,
                            Ghosts::Zero => {
                                let lo_in = lo.map(|s| grid.mask.inside[s]).unwrap_or(false);
                                if lo_in {
                                    (0.0 - v.data[grid.cell_index(lo.unwrap(), k)]) / spec.h
                                } else {
                                    v.data[grid.cell_index(hi.unwrap(), k)] / spec.h
                                }
                            }
                        },
                        FaceKind::Unused => unreachable!(),
                    };
                }
            }
        }
    }

    for &s in &grid.inside_cells {
        let (bottom, top) = match ghosts {
            Ghosts::Zero => (0.0, 0.0),
            Ghosts::Lifted(_) => (1.0, 0.0),
            Ghosts::Poisson => (
                v.data[grid.cell_index(s, 0)],
                v.data[grid.cell_index(s, n_t - 1)],
            ),
        };
        let base = s * (n_t + 1);
        out.sigma_t[base] = (v.data[grid.cell_index(s, 0)] - bottom) / spec.h_t;
        for k in 1..n_t {
            out.sigma_t[base + k] = (v.data[grid.cell_index(s, k)]
                - v.data[grid.cell_index(s, k - 1)])
                / spec.h_t;
        }
        out.sigma_t[base + n_t] = (top - v.data[grid.cell_index(s, n_t - 1)]) / spec.h_t;
    }
}

/// Face divergence onto cells; the exact negative adjoint of [`gradient`]
/// with zero ghosts.
pub fn divergence(grid: &Grid, sig: &FluxField) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    divergence_into(grid, sig, &mut out);
    out
}

/// Allocation-free [`divergence`].
pub fn divergence_into(grid: &Grid, sig: &FluxField, out: &mut ScalarField) {
    let spec = &grid.spec;
    let n_t = spec.n_t;
    out.data.iter_mut().for_each(|x| *x = 0.0);

    for &s in &grid.inside_cells {
        let ix = spec.spatial_multi(s);
        let base = s * (n_t + 1);
        for k in 0..n_t {
            let mut d = (sig.sigma_t[base + k + 1] - sig.sigma_t[base + k]) / spec.h_t;
            for axis in 0..spec.dim() {
                let other = if spec.dim() == 1 { 0 } else { ix[1 - axis] };
                let f_lo = face_flat(spec, axis, ix[axis], other);
                let f_hi = face_flat(spec, axis, ix[axis] + 1, other);
                d += (sig.sigma_x[axis][f_hi * n_t + k] - sig.sigma_x[axis][f_lo * n_t + k]) / spec.h;
            }
            out.data[grid.cell_index(s, k)] = d;
        }
    }
}

/// `sum over inside cells of u * v * cell_vol`.
pub fn dot_cells(grid: &Grid, u: &ScalarField, v: &ScalarField) -> f64 {
    let vol = grid.spec.cell_vol();
    let n_t = grid.spec.n_t;
    let mut acc = 0.0;
    for &s in &grid.inside_cells {
        let base = s * n_t;
        for k in 0..n_t {
            acc += u.data[base + k] * v.data[base + k];
        }
    }
    acc * vol
}

/// `sum over active faces of f * g * cell_vol` (each face weighted like one cell).
pub fn dot_faces(grid: &Grid, f: &FluxField, g: &FluxField) -> f64 {
    let spec = &grid.spec;
    let vol = spec.cell_vol();
    let n_t = spec.n_t;
    let mut acc = 0.0;
    for axis in 0..spec.dim() {
        for (i, &kind) in grid.mask.face_kind[axis].iter().enumerate() {
            if kind == FaceKind::Unused {
                continue;
            }
            for k in 0..n_t {
                acc += f.sigma_x[axis][i * n_t + k] * g.sigma_x[axis][i * n_t + k];
            }
        }
    }
    for &s in &grid.inside_cells {
        let base = s * (n_t + 1);
        for k in 0..=n_t {
            acc += f.sigma_t[base + k] * g.sigma_t[base + k];
        }
    }
    acc * vol
}

/// L2 norm over inside cells.
pub fn norm_cells(grid: &Grid, u: &ScalarField) -> f64 {
    dot_cells(grid, u, u).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(n_x: usize, n_t: usize, len: f64) -> Grid {
        let spec = GridSpec::new(&[n_x], n_t, len / n_x as f64, &[0.0], (0.0, 1.0)).unwrap();
        make_grid(spec, Shape::Rectangle).unwrap()
    }

    fn grid_2d(n: usize, n_t: usize) -> Grid {
        let spec = GridSpec::new(&[n, n], n_t, 2.0 / n as f64, &[-1.0, -1.0], (0.0, 1.0)).unwrap();
        make_grid(spec, Shape::Rectangle).unwrap()
    }

    #[test]
    fn rectangle_mask_counts() {
        let g = grid_1d(4, 2, 2.0);
        assert_eq!(g.mask.n_inside(), 4);
        assert_eq!(g.spec.n_cells(), 8);
        // all lateral boundary faces Dirichlet
        assert_eq!(g.mask.face_kind[0][0], FaceKind::Dirichlet);
        assert_eq!(g.mask.face_kind[0][4], FaceKind::Dirichlet);
        for f in 1..4 {
            assert_eq!(g.mask.face_kind[0][f], FaceKind::Interior);
        }
    }

    #[test]
    fn disc_mask_cell_count_near_pi_quarter() {
        let spec = GridSpec::new(&[64, 64], 4, 2.0 / 64.0, &[-1.0, -1.0], (0.0, 1.0)).unwrap();
        let g = make_grid(
            spec,
            Shape::Disc {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        let frac = g.mask.n_inside() as f64 / (64.0 * 64.0);
        let target = std::f64::consts::PI / 4.0;
        assert!((frac - target).abs() / target < 0.05, "frac = {frac}");
    }

    #[test]
    fn disconnected_explicit_mask_rejected() {
        let spec = GridSpec::new(&[5], 2, 0.2, &[0.0], (0.0, 1.0)).unwrap();
        // two blobs separated by an excluded cell
        let flags = vec![true, true, false, true, true];
        match make_grid(spec, Shape::Explicit(flags)) {
            Err(GridError::Disconnected) => {}
            other => panic!("expected Disconnected, got {other:?}"),
        }
    }

    #[test]
    fn disc_must_fit_in_box() {
        let spec = GridSpec::new(&[8, 8], 2, 0.25, &[0.0, 0.0], (0.0, 1.0)).unwrap();
        let r = make_grid(
            spec,
            Shape::Disc {
                center: vec![1.0, 1.0],
                radius: 1.5,
            },
        );
        assert!(matches!(r, Err(GridError::DescriptorOutOfBounds)));
    }

    #[test]
    fn gradient_of_constant_with_matching_ghosts_is_zero() {
        let g = grid_1d(4, 4, 1.0);
        let v = ScalarField::zeros(&g);
        let grad = gradient(&g, &v, &Ghosts::Zero);
        assert!(grad.sigma_x[0].iter().all(|&x| x == 0.0));
        assert!(grad.sigma_t.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_of_linear_t_is_one() {
        let g = grid_1d(3, 5, 1.0);
        let mut v = ScalarField::zeros(&g);
        for s in 0..3 {
            for k in 0..5 {
                v.data[g.cell_index(s, k)] = g.spec.t_center(k);
            }
        }
        let grad = gradient(&g, &v, &Ghosts::Zero);
        // interior t-faces see slope exactly 1
        for s in 0..3 {
            for k in 1..5 {
                let d = grad.sigma_t[FluxField::t_index(&g, s, k)];
                assert!((d - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bottom_ghost_stencil_on_single_column() {
        // 1 x 2 column, v = 0 inside, lifted ghosts: bottom face sees (0 - 1)/h_t
        let spec = GridSpec::new(&[2], 2, 0.5, &[0.0], (0.0, 1.0)).unwrap();
        let g = make_grid(spec, Shape::Rectangle).unwrap();
        let v = ScalarField::zeros(&g);
        let lg = LiftedGhosts {
            u0_face: vec![vec![f64::NAN, f64::NAN, f64::NAN]],
        };
        let grad = gradient(&g, &v, &Ghosts::Lifted(&lg));
        let h_t = g.spec.h_t;
        assert!((grad.sigma_t[FluxField::t_index(&g, 0, 0)] - (0.0 - 1.0) / h_t).abs() < 1e-15);
        // top face: ghost 0, v = 0 -> zero difference
        assert_eq!(grad.sigma_t[FluxField::t_index(&g, 0, 2)], 0.0);
    }

    #[test]
    fn divergence_of_constant_field_vanishes() {
        let g = grid_2d(6, 4);
        let mut sig = FluxField::zeros(&g);
        for c in &mut sig.sigma_x {
            c.iter_mut().for_each(|x| *x = 3.25);
        }
        sig.sigma_t.iter_mut().for_each(|x| *x = -1.5);
        let div = divergence(&g, &sig);
        for &s in &g.inside_cells {
            for k in 0..g.spec.n_t {
                assert!(div.at(&g, s, k).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_of_linear_sigma_t_is_one() {
        let g = grid_1d(3, 8, 1.0);
        let mut sig = FluxField::zeros(&g);
        for s in 0..3 {
            for k in 0..=8 {
                sig.sigma_t[FluxField::t_index(&g, s, k)] = g.spec.t_face(k);
            }
        }
        let div = divergence(&g, &sig);
        for &s in &g.inside_cells {
            for k in 0..g.spec.n_t {
                assert!((div.at(&g, s, k) - 1.0).abs() < 1e-12);
            }
        }
    }

    fn pseudo_random_fill(data: &mut [f64], seed: u64) {
        // deterministic xorshift fill in [-1, 1]
        let mut state = seed.wrapping_mul(2685821657736338717).max(1);
        for x in data.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *x = (state as f64 / u64::MAX as f64) * 2.0 - 1.0;
        }
    }

    #[test]
    fn adjointness_on_random_fields() {
        // <grad v, sigma> = -<v, div sigma> exactly (up to roundoff) with zero ghosts
        for (g, seed) in [
            (grid_1d(3, 3, 1.0), 7u64),
            (grid_2d(3, 3), 11),
            (grid_2d(5, 4), 13),
        ] {
            let mut v = ScalarField::zeros(&g);
            pseudo_random_fill(&mut v.data, seed);
            let mut sig = FluxField::zeros(&g);
            for c in &mut sig.sigma_x {
                pseudo_random_fill(c, seed + 1);
            }
            pseudo_random_fill(&mut sig.sigma_t, seed + 2);

            let lhs = dot_faces(&g, &gradient(&g, &v, &Ghosts::Zero), &sig);
            let rhs = -dot_cells(&g, &v, &divergence(&g, &sig));
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!(
                (lhs - rhs).abs() / scale < 1e-13,
                "adjointness violated: {lhs} vs {rhs}"
            );
        }
    }

    /// Power iteration on -div grad estimates ||grad||^2.
    fn power_iteration_norm(g: &Grid) -> f64 {
        let mut v = ScalarField::zeros(g);
        pseudo_random_fill(&mut v.data, 3);
        // keep outside cells at zero
        for (s, &ins) in g.mask.inside.iter().enumerate() {
            if !ins {
                for k in 0..g.spec.n_t {
                    v.data[g.cell_index(s, k)] = 0.0;
                }
            }
        }
        let mut lam = 0.0;
        for _ in 0..300 {
            let w = divergence(g, &gradient(g, &v, &Ghosts::Zero));
            let nrm = norm_cells(g, &w);
            if nrm == 0.0 {
                return 0.0;
            }
            lam = nrm / norm_cells(g, &v);
            for x in w.data.iter().zip(v.data.iter_mut()) {
                *x.1 = -x.0 / nrm;
            }
        }
        lam.sqrt()
    }

    #[test]
    fn operator_norm_bound_dominates_power_iteration() {
        let spec1 = GridSpec::new(&[12], 12, 1.0, &[0.0], (0.0, 12.0)).unwrap(); // h = h_t = 1
        let g1 = make_grid(spec1, Shape::Rectangle).unwrap();
        let bound1 = g1.spec.operator_norm_bound();
        assert!((bound1 - 2.0 * 2.0f64.sqrt()).abs() < 1e-12);
        let est1 = power_iteration_norm(&g1);
        assert!(est1 <= bound1 + 1e-9, "est {est1} > bound {bound1}");
        assert!(est1 > 0.8 * bound1, "power iteration too small: {est1}");

        let spec = GridSpec::new(&[8, 8], 8, 1.0, &[0.0, 0.0], (0.0, 8.0)).unwrap();
        let g2 = make_grid(spec, Shape::Rectangle).unwrap();
        let bound2 = g2.spec.operator_norm_bound();
        assert!((bound2 - 2.0 * 3.0f64.sqrt()).abs() < 1e-12);
        let est2 = power_iteration_norm(&g2);
        assert!(est2 <= bound2 + 1e-9);
        assert!(est2 > 0.8 * bound2);
    }

    #[test]
    fn halving_mesh_doubles_norm_bound() {
        let a = GridSpec::new(&[8], 8, 0.5, &[0.0], (0.0, 4.0)).unwrap();
        let b = GridSpec::new(&[16], 16, 0.25, &[0.0], (0.0, 4.0)).unwrap();
        assert!((b.operator_norm_bound() - 2.0 * a.operator_norm_bound()).abs() < 1e-12);
    }

    #[test]
    fn empty_interior_rejected() {
        let spec = GridSpec::new(&[4], 2, 0.25, &[0.0], (0.0, 1.0)).unwrap();
        let r = make_grid(spec, Shape::Explicit(vec![false; 4]));
        assert!(matches!(r, Err(GridError::EmptyInterior)));
    }
}
