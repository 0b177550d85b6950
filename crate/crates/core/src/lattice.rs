//! Control lattices, mesh embedding and deformation.
//!
//! A lattice with `dims = [l, m, n]` carries `(l+1)(m+1)(n+1)` control points
//! on a uniform axis-aligned grid. Embedding a mesh means finding, for every
//! vertex, the parameters `(s, t, u)` at which the undeformed trivariate volume
//! passes through that vertex. Because the undeformed grid is a tensor grid,
//! the volume map splits into three independent monotone 1-D maps, each
//! inverted with a bracketed Newton iteration. The coefficient matrix built at
//! those parameters is then fixed, and any displacement of the control points
//! deforms the mesh by a single sparse product.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{flat_index, AxisBasis, BasisError, BasisKind, SparseRow, TensorBasis};
use crate::mesh::{Mesh, MeshError};

pub const DEFAULT_DIMS: [usize; 3] = [6, 19, 4];
pub const DEFAULT_PADDING: f64 = 0.05;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("mesh bounding box has zero extent along world axis {axis}")]
    DegenerateBox { axis: usize },
    #[error("padding must be a finite non-negative fraction, got {0}")]
    InvalidPadding(f64),
    #[error("axis map {0:?} is not a permutation of x, y, z")]
    InvalidAxisMap([usize; 3]),
    #[error("vertex {vertex} at {position:?} lies outside the lattice box")]
    OutsideBox { vertex: usize, position: [f64; 3] },
    #[error(
        "parameterization did not converge: worst vertex {vertex}, residual {residual:e} (tolerance {tolerance:e})"
    )]
    NotConverged {
        vertex: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("expected {expected} entries, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("control point {index} out of range ({count} points)")]
    ControlPointOutOfRange { index: usize, count: usize },
    #[error("displacement {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("coefficient row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
}

pub type LatticeResult<T> = Result<T, LatticeError>;

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub origin: Point3<f64>,
    pub lengths: Vector3<f64>,
}

impl LatticeBox {
    pub fn diagonal(&self) -> f64 {
        self.lengths.norm()
    }

    pub fn max_corner(&self) -> Point3<f64> {
        self.origin + self.lengths
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    /// Divisions along the S, T, U lattice axes.
    pub dims: [usize; 3],
    pub kind: BasisKind,
    pub bbox: LatticeBox,
    /// World axis (0 = x, 1 = y, 2 = z) carrying each of S, T, U.
    pub axis_map: [usize; 3],
}

impl LatticeConfig {
    pub fn new(
        dims: [usize; 3],
        kind: BasisKind,
        bbox: LatticeBox,
        axis_map: [usize; 3],
    ) -> LatticeResult<Self> {
        let mut sorted = axis_map;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(LatticeError::InvalidAxisMap(axis_map));
        }
        for axis in 0..3 {
            if !(bbox.lengths[axis] > 0.0) || !bbox.lengths[axis].is_finite() {
                return Err(LatticeError::DegenerateBox { axis });
            }
        }
        // validates dims against the degree
        TensorBasis::new(dims, kind)?;
        Ok(Self {
            dims,
            kind,
            bbox,
            axis_map,
        })
    }

    pub fn control_point_count(&self) -> usize {
        self.dims.iter().map(|d| d + 1).product()
    }

    /// B-spline degree, or `None` for Bernstein lattices.
    pub fn degree(&self) -> Option<usize> {
        match self.kind {
            BasisKind::BSpline { degree } => Some(degree),
            BasisKind::Bernstein => None,
        }
    }

    pub fn basis(&self) -> TensorBasis {
        TensorBasis::new(self.dims, self.kind).expect("validated at construction")
    }

    /// Undeformed position of control point `(i, j, k)`.
    pub fn rest_position(&self, ijk: [usize; 3]) -> Point3<f64> {
        let mut p = self.bbox.origin;
        for (lat, &world) in self.axis_map.iter().enumerate() {
            let frac = ijk[lat] as f64 / self.dims[lat] as f64;
            p[world] = self.bbox.origin[world] + frac * self.bbox.lengths[world];
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    config: LatticeConfig,
    points: Vec<Point3<f64>>,
}

impl ControlGrid {
    /// The undeformed uniform grid, flat-indexed with `k` fastest.
    pub fn undeformed(config: LatticeConfig) -> Self {
        let [l, m, n] = config.dims;
        let mut points = Vec::with_capacity(config.control_point_count());
        for i in 0..=l {
            for j in 0..=m {
                for k in 0..=n {
                    points.push(config.rest_position([i, j, k]));
                }
            }
        }
        Self { config, points }
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.points[flat_index(i, j, k, self.config.dims)]
    }

    /// Control points displaced by `field`.
    pub fn displaced(&self, field: &DeformationField) -> LatticeResult<Vec<Point3<f64>>> {
        field.check_len(self.len())?;
        Ok(self
            .points
            .iter()
            .zip(&field.delta)
            .map(|(p, d)| p + d)
            .collect())
    }
}

/// Lattice around `mesh`: its bounding box grown by `padding` times the
/// extent on each side of every axis, S/T/U mapped to x/y/z.
pub fn build_lattice(
    mesh: &Mesh,
    dims: [usize; 3],
    kind: BasisKind,
    padding: f64,
) -> LatticeResult<ControlGrid> {
    build_lattice_with_axes(mesh, dims, kind, padding, [0, 1, 2])
}

pub fn build_lattice_with_axes(
    mesh: &Mesh,
    dims: [usize; 3],
    kind: BasisKind,
    padding: f64,
    axis_map: [usize; 3],
) -> LatticeResult<ControlGrid> {
    if !(padding >= 0.0) || !padding.is_finite() {
        return Err(LatticeError::InvalidPadding(padding));
    }
    let (lo, hi) = mesh.bounding_box();
    let extent = hi - lo;
    if let Some(axis) = (0..3).find(|&a| !(extent[a] > 0.0)) {
        return Err(LatticeError::DegenerateBox { axis });
    }
    let margin = extent * padding;
    let bbox = LatticeBox {
        origin: lo - margin,
        lengths: extent + 2.0 * margin,
    };
    let config = LatticeConfig::new(dims, kind, bbox, axis_map)?;
    Ok(ControlGrid::undeformed(config))
}

/// Control-point displacements, flat-indexed like [`ControlGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub delta: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn zeros(count: usize) -> Self {
        Self {
            delta: vec![Vector3::zeros(); count],
        }
    }

    pub fn constant(count: usize, c: Vector3<f64>) -> Self {
        Self {
            delta: vec![c; count],
        }
    }

    pub fn new(delta: Vec<Vector3<f64>>) -> LatticeResult<Self> {
        if let Some(index) = delta.iter().position(|d| !d.iter().all(|c| c.is_finite())) {
            return Err(LatticeError::NonFinite { index });
        }
        Ok(Self { delta })
    }

    /// Displacement that moves every control point `p` to `linear * p + offset`.
    pub fn from_affine(grid: &ControlGrid, linear: &Matrix3<f64>, offset: &Vector3<f64>) -> Self {
        let delta = grid
            .points()
            .iter()
            .map(|p| linear * p.coords + offset - p.coords)
            .collect();
        Self { delta }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn scaled_add(&self, a: f64, other: &Self, b: f64) -> Self {
        Self {
            delta: self
                .delta
                .iter()
                .zip(&other.delta)
                .map(|(x, y)| x * a + y * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.iter().map(|d| d.amax()).fold(0.0, f64::max)
    }

    pub fn norm_squared(&self) -> f64 {
        self.delta.iter().map(|d| d.norm_squared()).sum()
    }

    fn check_len(&self, expected: usize) -> LatticeResult<()> {
        if self.delta.len() == expected {
            Ok(())
        } else {
            Err(LatticeError::DimensionMismatch {
                expected,
                actual: self.delta.len(),
            })
        }
    }
}

/// Row-compressed N x M coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    cols: usize,
    row_ptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn from_rows(rows: &[SparseRow], cols: usize) -> Self {
        let nnz = rows.iter().map(SparseRow::nnz).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for r in rows {
            indices.extend_from_slice(&r.indices);
            values.extend_from_slice(&r.values);
            row_ptr.push(indices.len());
        }
        Self {
            cols,
            row_ptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, q: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[q]..self.row_ptr[q + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, q: usize, col: usize) -> f64 {
        let (idx, val) = self.row(q);
        match idx.binary_search(&(col as u32)) {
            Ok(p) => val[p],
            Err(_) => 0.0,
        }
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.rows())
            .map(|q| self.row_ptr[q + 1] - self.row_ptr[q])
            .max()
            .unwrap_or(0)
    }

    /// `sum_c B[q][c] * x[c]` for every row.
    pub fn mul_points(&self, x: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        (0..self.rows())
            .into_par_iter()
            .map(|q| {
                let (idx, val) = self.row(q);
                idx.iter()
                    .zip(val)
                    .fold(Vector3::zeros(), |acc, (&c, &w)| acc + x[c as usize] * w)
            })
            .collect()
    }

    /// `B^T y`.
    pub fn transpose_mul(&self, y: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.cols];
        for (q, yq) in y.iter().enumerate() {
            let (idx, val) = self.row(q);
            for (&c, &w) in idx.iter().zip(val) {
                out[c as usize] += yq * w;
            }
        }
        out
    }

    /// Nonzero entries of column `col` as `(row, value)`.
    pub fn column(&self, col: usize) -> Vec<(usize, f64)> {
        let target = col as u32;
        (0..self.rows())
            .filter_map(|q| {
                let (idx, val) = self.row(q);
                idx.binary_search(&target)
                    .ok()
                    .map(|p| (q, val[p]))
                    .filter(|&(_, v)| v != 0.0)
            })
            .collect()
    }
}

/// A reference mesh embedded in a lattice: per-vertex parameters and the
/// fixed coefficient matrix tying vertices to control points.
#[derive(Debug, Clone)]
pub struct ParameterizedMesh {
    mesh: Mesh,
    grid: ControlGrid,
    params: Vec<[f64; 3]>,
    coeffs: CoefficientMatrix,
    /// `coeffs * grid.points`, the reference mesh as the lattice reproduces it.
    reference: Vec<Point3<f64>>,
    max_residual: f64,
}

impl ParameterizedMesh {
    /// Assembles the coefficient matrix from already-solved parameters.
    pub fn assemble(mesh: Mesh, grid: ControlGrid, params: Vec<[f64; 3]>) -> LatticeResult<Self> {
        if params.len() != mesh.vertex_count() {
            return Err(LatticeError::DimensionMismatch {
                expected: mesh.vertex_count(),
                actual: params.len(),
            });
        }
        let basis = grid.config().basis();
        let rows = params
            .par_iter()
            .map(|&stu| basis.row(stu))
            .collect::<Result<Vec<_>, _>>()?;
        let coeffs = CoefficientMatrix::from_rows(&rows, grid.len());
        let rest: Vec<Vector3<f64>> = grid.points().iter().map(|p| p.coords).collect();
        let reference: Vec<Point3<f64>> = coeffs
            .mul_points(&rest)
            .into_iter()
            .map(Point3::from)
            .collect();
        let max_residual = reference
            .iter()
            .zip(mesh.vertices())
            .map(|(r, v)| (r - v).amax())
            .fold(0.0, f64::max);
        Ok(Self {
            mesh,
            grid,
            params,
            coeffs,
            reference,
            max_residual,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn params(&self) -> &[[f64; 3]] {
        &self.params
    }

    pub fn coeffs(&self) -> &CoefficientMatrix {
        &self.coeffs
    }

    pub fn reference_points(&self) -> &[Point3<f64>] {
        &self.reference
    }

    /// Largest `|B P - V|_inf` over all vertices.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn control_point_count(&self) -> usize {
        self.grid.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn box_diagonal(&self) -> f64 {
        self.grid.config().bbox.diagonal()
    }

    /// Deformed vertex positions `B (P + dP)`, evaluated as `B P + B dP`.
    pub fn deform_points(&self, field: &DeformationField) -> LatticeResult<Vec<Point3<f64>>> {
        field.check_len(self.grid.len())?;
        let offsets = self.coeffs.mul_points(&field.delta);
        Ok(self
            .reference
            .iter()
            .zip(offsets)
            .map(|(r, d)| r + d)
            .collect())
    }

    pub fn deform(&self, field: &DeformationField) -> LatticeResult<Mesh> {
        Ok(self.mesh.with_vertices(self.deform_points(field)?)?)
    }

    /// Vertices whose coefficient for control point `flat` is nonzero.
    pub fn support_mask(&self, flat: usize) -> LatticeResult<Vec<usize>> {
        if flat >= self.grid.len() {
            return Err(LatticeError::ControlPointOutOfRange {
                index: flat,
                count: self.grid.len(),
            });
        }
        Ok(self
            .coeffs
            .column(flat)
            .into_iter()
            .map(|(q, _)| q)
            .collect())
    }

    pub fn check_row_sums(&self, tolerance: f64) -> LatticeResult<()> {
        for q in 0..self.coeffs.rows() {
            let sum: f64 = self.coeffs.row(q).1.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(LatticeError::RowSum { row: q, sum });
            }
        }
        Ok(())
    }
}

/// Solves `sum_i B_i(s) * i / d = target` for `s` in `[0, 1]`.
fn invert_axis(basis: &AxisBasis, target: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let d = (basis.function_count() - 1) as f64;
    let eval = |s: f64| {
        let (first, v, dv) = basis.nonzero_with_derivatives(s);
        let mut g = 0.0;
        let mut dg = 0.0;
        for (r, (b, db)) in v.iter().zip(&dv).enumerate() {
            let c = (first + r) as f64 / d;
            g += b * c;
            dg += db * c;
        }
        (g - target, dg)
    };

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut s = target.clamp(0.0, 1.0);
    let (mut f, mut df) = eval(s);
    let goal = tol * 1e-3;
    for _ in 0..max_iter {
        if f.abs() <= goal {
            break;
        }
        if f < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f / df;
        let next = if df > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == s {
            break;
        }
        s = next;
        (f, df) = eval(s);
    }
    (s, f.abs())
}

/// Embeds `mesh` in the undeformed `grid`. `tol` is relative to each axis
/// length; the assembled coefficients must reproduce every vertex to within
/// `tol` times the longest box side.
pub fn parameterize(
    mesh: &Mesh,
    grid: &ControlGrid,
    tol: f64,
    max_iter: usize,
) -> LatticeResult<ParameterizedMesh> {
    let config = grid.config();
    let basis = config.basis();
    let origin = config.bbox.origin;
    let lengths = config.bbox.lengths;
    // vertices at the box boundary may sit a rounding error outside
    let slack = 1e-12;

    let solved: Vec<Result<([f64; 3], f64), LatticeError>> = mesh
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(q, v)| {
            let mut stu = [0.0; 3];
            let mut worst: f64 = 0.0;
            for lat in 0..3 {
                let w = config.axis_map[lat];
                let xi = (v[w] - origin[w]) / lengths[w];
                if !(xi >= -slack && xi <= 1.0 + slack) {
                    return Err(LatticeError::OutsideBox {
                        vertex: q,
                        position: [v.x, v.y, v.z],
                    });
                }
                let (s, residual) = invert_axis(basis.axis(lat), xi.clamp(0.0, 1.0), tol, max_iter);
                stu[lat] = s;
                worst = worst.max(residual);
            }
            Ok((stu, worst))
        })
        .collect();

    let mut params = Vec::with_capacity(solved.len());
    let mut worst = (0usize, 0.0f64);
    for (q, r) in solved.into_iter().enumerate() {
        let (stu, residual) = r?;
        if residual > worst.1 {
            worst = (q, residual);
        }
        params.push(stu);
    }
    if worst.1 > tol {
        return Err(LatticeError::NotConverged {
            vertex: worst.0,
            residual: worst.1,
            tolerance: tol,
        });
    }

    let pm = ParameterizedMesh::assemble(mesh.clone(), grid.clone(), params)?;
    let limit = tol * lengths.amax();
    if pm.max_residual() > limit {
        let (vertex, residual) = pm
            .reference
            .iter()
            .zip(mesh.vertices())
            .map(|(r, v)| (r - v).amax())
            .enumerate()
            .fold((0, 0.0), |a, (q, e)| if e > a.1 { (q, e) } else { a });
        return Err(LatticeError::NotConverged {
            vertex,
            residual,
            tolerance: limit,
        });
    }
    Ok(pm)
}
