//! Univariate Bernstein and B-spline bases and their tensor products.
//!
//! B-spline knot vectors are clamped (the first and last `p + 1` knots sit at
//! 0 and 1) with uniformly spaced interior knots. Spans are half-open,
//! `[t_i, t_{i+1})`, except the last non-empty span which is closed at 1 so
//! that the final basis function evaluates to 1 there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("basis index {index} out of range (function count {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("{divisions} divisions cannot carry a degree-{degree} basis (dims must be >= degree)")]
    TooFewDivisions { divisions: usize, degree: usize },
    #[error("B-spline degree must be at least 1, got {0}")]
    InvalidDegree(usize),
}

pub type BasisResult<T> = Result<T, BasisError>;

fn check_parameter(u: f64) -> BasisResult<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(BasisError::ParameterOutOfRange(u))
    }
}

/// Clamped knot vector over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> BasisResult<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(BasisError::InvalidKnots(format!(
                "{} knots cannot hold a clamped degree-{p} vector",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(BasisError::InvalidKnots(
                "knots must be nondecreasing".into(),
            ));
        }
        let n = knots.len();
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[n - p - 1..].iter().any(|&k| k != 1.0) {
            return Err(BasisError::InvalidKnots(format!(
                "first and last {} knots must be exactly 0 and 1",
                p + 1
            )));
        }
        Ok(Self { degree, knots })
    }

    /// `count` basis functions of degree `degree`, uniform interior knots.
    pub fn clamped_uniform(count: usize, degree: usize) -> BasisResult<Self> {
        if count < degree + 1 {
            return Err(BasisError::TooFewDivisions {
                divisions: count.saturating_sub(1),
                degree,
            });
        }
        let interior = count - degree - 1;
        let mut knots = vec![0.0; degree + 1];
        let spans = (interior + 1) as f64;
        knots.extend((1..=interior).map(|k| k as f64 / spans));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn function_count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Index `s` with `t_s <= u < t_{s+1}`; `u == 1` maps to the last
    /// non-empty span.
    pub fn find_span(&self, u: f64) -> usize {
        let n = self.function_count() - 1;
        let p = self.degree;
        if u >= self.knots[n + 1] {
            return n;
        }
        if u <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n + 1);
        let mut mid = (lo + hi) / 2;
        while u < self.knots[mid] || u >= self.knots[mid + 1] {
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// The `degree + 1` possibly-nonzero values at `u`, for functions
    /// `span - degree ..= span`.
    fn local_values(&self, span: usize, u: f64, degree: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut values = vec![0.0; degree + 1];
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        values[0] = 1.0;
        for j in 1..=degree {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { values[r] / denom };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        values
    }

    /// First function index and the values of functions
    /// `first ..= first + degree` at `u`.
    pub fn nonzero(&self, u: f64) -> (usize, Vec<f64>) {
        let span = self.find_span(u);
        (span - self.degree, self.local_values(span, u, self.degree))
    }

    /// Like [`nonzero`](Self::nonzero), with first derivatives alongside.
    /// At `u == 1` the derivative is the left limit.
    pub fn nonzero_with_derivatives(&self, u: f64) -> (usize, Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let span = self.find_span(u);
        let values = self.local_values(span, u, p);
        let mut ders = vec![0.0; p + 1];
        if p > 0 {
            // lower[r] is B_{span-p+1+r, p-1}(u)
            let lower = self.local_values(span, u, p - 1);
            let t = &self.knots;
            let pf = p as f64;
            for (r, d) in ders.iter_mut().enumerate() {
                let k = span - p + r;
                let a = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b = if r < p { lower[r] } else { 0.0 };
                let da = t[k + p] - t[k];
                let db = t[k + p + 1] - t[k + 1];
                let ta = if da == 0.0 { 0.0 } else { a / da };
                let tb = if db == 0.0 { 0.0 } else { b / db };
                *d = pf * (ta - tb);
            }
        }
        (span - p, values, ders)
    }

    fn check_index(&self, i: usize) -> BasisResult<()> {
        let count = self.function_count();
        if i < count {
            Ok(())
        } else {
            Err(BasisError::IndexOutOfRange { index: i, count })
        }
    }
}

/// `B_{i,p}(u)` by the Cox-de Boor triangle, restricted to the span of `u`.
pub fn bspline_basis(i: usize, u: f64, kv: &KnotVector) -> BasisResult<f64> {
    kv.check_index(i)?;
    check_parameter(u)?;
    let (first, values) = kv.nonzero(u);
    Ok(if (first..first + values.len()).contains(&i) {
        values[i - first]
    } else {
        0.0
    })
}

pub fn bspline_basis_derivative(i: usize, u: f64, kv: &KnotVector) -> BasisResult<f64> {
    kv.check_index(i)?;
    check_parameter(u)?;
    let (first, _, ders) = kv.nonzero_with_derivatives(u);
    Ok(if (first..first + ders.len()).contains(&i) {
        ders[i - first]
    } else {
        0.0
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `C(n,i) u^i (1-u)^(n-i)`.
pub fn bernstein_basis(i: usize, n: usize, u: f64) -> BasisResult<f64> {
    if i > n {
        return Err(BasisError::IndexOutOfRange {
            index: i,
            count: n + 1,
        });
    }
    check_parameter(u)?;
    Ok(binomial(n, i) * u.powi(i as i32) * (1.0 - u).powi((n - i) as i32))
}

/// All `n + 1` Bernstein polynomials of degree `n` at `u`, built by the
/// de Casteljau recurrence.
pub fn bernstein_all(n: usize, u: f64) -> Vec<f64> {
    let mut b = vec![0.0; n + 1];
    b[0] = 1.0;
    let v = 1.0 - u;
    for k in 1..=n {
        let mut saved = 0.0;
        for j in 0..k {
            let temp = b[j];
            b[j] = saved + v * temp;
            saved = u * temp;
        }
        b[k] = saved;
    }
    b
}

fn bernstein_all_with_derivatives(n: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    let values = bernstein_all(n, u);
    let mut ders = vec![0.0; n + 1];
    if n > 0 {
        let lower = bernstein_all(n - 1, u);
        let nf = n as f64;
        for (i, d) in ders.iter_mut().enumerate() {
            let a = if i >= 1 { lower[i - 1] } else { 0.0 };
            let b = if i < n { lower[i] } else { 0.0 };
            *d = nf * (a - b);
        }
    }
    (values, ders)
}

/// Which family of polynomials weights the control points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    /// One global polynomial per axis, degree equal to the division count.
    Bernstein,
    /// Clamped uniform B-splines of the given degree.
    BSpline { degree: usize },
}

impl Default for BasisKind {
    fn default() -> Self {
        BasisKind::BSpline { degree: 3 }
    }
}

impl BasisKind {
    pub fn validate(self) -> BasisResult<()> {
        match self {
            BasisKind::BSpline { degree: 0 } => Err(BasisError::InvalidDegree(0)),
            _ => Ok(()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Bernstein => "bernstein",
            BasisKind::BSpline { .. } => "bspline",
        }
    }
}

/// The 1-D basis along one lattice axis with `divisions + 1` functions.
#[derive(Debug, Clone)]
pub enum AxisBasis {
    BSpline(KnotVector),
    Bernstein { degree: usize },
}

impl AxisBasis {
    pub fn new(kind: BasisKind, divisions: usize) -> BasisResult<Self> {
        kind.validate()?;
        match kind {
            BasisKind::Bernstein => {
                if divisions == 0 {
                    return Err(BasisError::TooFewDivisions {
                        divisions,
                        degree: 1,
                    });
                }
                Ok(AxisBasis::Bernstein { degree: divisions })
            }
            BasisKind::BSpline { degree } => {
                if divisions < degree {
                    return Err(BasisError::TooFewDivisions { divisions, degree });
                }
                Ok(AxisBasis::BSpline(KnotVector::clamped_uniform(
                    divisions + 1,
                    degree,
                )?))
            }
        }
    }

    pub fn function_count(&self) -> usize {
        match self {
            AxisBasis::BSpline(kv) => kv.function_count(),
            AxisBasis::Bernstein { degree } => degree + 1,
        }
    }

    pub fn nonzero(&self, u: f64) -> (usize, Vec<f64>) {
        match self {
            AxisBasis::BSpline(kv) => kv.nonzero(u),
            AxisBasis::Bernstein { degree } => (0, bernstein_all(*degree, u)),
        }
    }

    pub fn nonzero_with_derivatives(&self, u: f64) -> (usize, Vec<f64>, Vec<f64>) {
        match self {
            AxisBasis::BSpline(kv) => kv.nonzero_with_derivatives(u),
            AxisBasis::Bernstein { degree } => {
                let (v, d) = bernstein_all_with_derivatives(*degree, u);
                (0, v, d)
            }
        }
    }
}

/// One row of the coefficient matrix: sorted flat control-point indices and
/// their weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn get(&self, flat: usize) -> f64 {
        match self.indices.binary_search(&(flat as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }
}

/// Flat control-point index, `k` fastest.
pub fn flat_index(i: usize, j: usize, k: usize, dims: [usize; 3]) -> usize {
    (i * (dims[1] + 1) + j) * (dims[2] + 1) + k
}

/// Inverse of [`flat_index`].
pub fn unflatten(flat: usize, dims: [usize; 3]) -> [usize; 3] {
    let nk = dims[2] + 1;
    let nj = dims[1] + 1;
    [flat / (nj * nk), (flat / nk) % nj, flat % nk]
}

/// Trivariate basis for a lattice with `dims = [l, m, n]` divisions.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    dims: [usize; 3],
    kind: BasisKind,
    axes: [AxisBasis; 3],
}

impl TensorBasis {
    pub fn new(dims: [usize; 3], kind: BasisKind) -> BasisResult<Self> {
        let axes = [
            AxisBasis::new(kind, dims[0])?,
            AxisBasis::new(kind, dims[1])?,
            AxisBasis::new(kind, dims[2])?,
        ];
        Ok(Self { dims, kind, axes })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn axis(&self, a: usize) -> &AxisBasis {
        &self.axes[a]
    }

    pub fn control_point_count(&self) -> usize {
        self.dims.iter().map(|d| d + 1).product()
    }

    /// Products `B_i(s) B_j(t) B_k(u)`. B-spline rows keep only nonzero
    /// products; Bernstein rows are stored dense.
    pub fn row(&self, stu: [f64; 3]) -> BasisResult<SparseRow> {
        for &x in &stu {
            check_parameter(x)?;
        }
        let (fi, bi) = self.axes[0].nonzero(stu[0]);
        let (fj, bj) = self.axes[1].nonzero(stu[1]);
        let (fk, bk) = self.axes[2].nonzero(stu[2]);
        let dense = matches!(self.kind, BasisKind::Bernstein);
        let mut row = SparseRow {
            indices: Vec::with_capacity(bi.len() * bj.len() * bk.len()),
            values: Vec::with_capacity(bi.len() * bj.len() * bk.len()),
        };
        for (di, &vi) in bi.iter().enumerate() {
            for (dj, &vj) in bj.iter().enumerate() {
                let vij = vi * vj;
                for (dk, &vk) in bk.iter().enumerate() {
                    let v = vij * vk;
                    if dense || v != 0.0 {
                        row.indices
                            .push(flat_index(fi + di, fj + dj, fk + dk, self.dims) as u32);
                        row.values.push(v);
                    }
                }
            }
        }
        Ok(row)
    }
}

/// One coefficient row for parameters `stu` on a `dims` lattice.
pub fn tensor_row(stu: [f64; 3], dims: [usize; 3], kind: BasisKind) -> BasisResult<SparseRow> {
    TensorBasis::new(dims, kind)?.row(stu)
}
