//! Homogeneous-coordinate primitives and the per-kernel geometric errors.
//!
//! Every kernel maps a feature association to an error vector that is zero
//! exactly when the geometric constraint holds. Those vectors are the control
//! signals handed to the servo loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{norm, Real};

/// Smallest endpoint separation (pixels) accepted when building a line.
pub const COINCIDENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("points coincide (separation {0:e} px); no unique line through them")]
    CoincidentPoints(f64),
    #[error("line coefficients (a, b) are both zero")]
    DegenerateLine,
    #[error("conic matrix is not symmetric")]
    AsymmetricConic,
    #[error("conic matrix is zero or the points do not determine a unique conic")]
    DegenerateConic,
}

/// The basic geometric constraints a kernel can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Two points coincide.
    P2p,
    /// A point lies on a line.
    P2l,
    /// A segment is collinear with a line.
    L2l,
    /// A point lies on a conic.
    P2c,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [KernelKind::P2p, KernelKind::P2l, KernelKind::L2l, KernelKind::P2c];

    /// Dimension of the error vector this kernel produces.
    pub fn error_dim(self) -> usize {
        match self {
            KernelKind::P2p | KernelKind::L2l => 2,
            KernelKind::P2l | KernelKind::P2c => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::P2p => "p2p",
            KernelKind::P2l => "p2l",
            KernelKind::L2l => "l2l",
            KernelKind::P2c => "p2c",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p2p" => Ok(KernelKind::P2p),
            "p2l" => Ok(KernelKind::P2l),
            "l2l" => Ok(KernelKind::L2l),
            "p2c" => Ok(KernelKind::P2c),
            other => Err(format!("unknown kernel kind `{other}` (expected p2p, p2l, l2l or p2c)")),
        }
    }
}

/// A pixel location. Its homogeneous lift is `(u, v, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ImagePoint<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> ImagePoint<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn lift(&self) -> [T; 3] {
        [self.u, self.v, T::one()]
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Homogeneous line `a·u + b·v + c = 0`, kept with `a² + b² = 1` and the
/// first nonzero of `(a, b)` positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct HomLine<T> {
    a: T,
    b: T,
    c: T,
}

impl<T: Real> HomLine<T> {
    pub fn new(a: T, b: T, c: T) -> Result<Self, GeometryError> {
        let n = a.hypot(b);
        if !(n > T::zero()) {
            return Err(GeometryError::DegenerateLine);
        }
        let s = if a > T::zero() || (a == T::zero() && b > T::zero()) { n } else { -n };
        Ok(Self { a: a / s, b: b / s, c: c / s })
    }

    pub fn coefficients(&self) -> [T; 3] {
        [self.a, self.b, self.c]
    }
}

/// Line through two distinct image points (cross product of their lifts).
pub fn line_through<T: Real>(p: ImagePoint<T>, q: ImagePoint<T>) -> Result<HomLine<T>, GeometryError> {
    let sep = p.distance(&q);
    if !(sep >= T::lit(COINCIDENT_TOL)) {
        return Err(GeometryError::CoincidentPoints(sep.to_f64_lossy()));
    }
    let [x1, y1, w1] = p.lift();
    let [x2, y2, w2] = q.lift();
    HomLine::new(y1 * w2 - w1 * y2, w1 * x2 - x1 * w2, x1 * y2 - y1 * x2)
}

/// Symmetric 3x3 conic matrix normalized to unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Conic<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Conic<T> {
    pub fn new(m: [[T; 3]; 3]) -> Result<Self, GeometryError> {
        let fro = m.iter().flatten().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if !(fro > T::zero()) {
            return Err(GeometryError::DegenerateConic);
        }
        let tol = fro * T::lit(1e-9);
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (m[i][j] - m[j][i]).abs() > tol {
                    return Err(GeometryError::AsymmetricConic);
                }
            }
        }
        Ok(Self { m: m.map(|row| row.map(|x| x / fro)) })
    }

    /// Conic `A u² + B uv + C v² + D u + E v + F = 0`.
    pub fn from_coefficients(coef: [T; 6]) -> Result<Self, GeometryError> {
        let h = T::lit(0.5);
        let [a, b, c, d, e, f] = coef;
        Self::new([[a, h * b, h * d], [h * b, c, h * e], [h * d, h * e, f]])
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.m
    }

    /// Algebraic residual `xᵀ C x` of a homogeneous point.
    pub fn residual(&self, x: [T; 3]) -> T {
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc = acc + x[i] * self.m[i][j] * x[j];
            }
        }
        acc
    }
}

/// The unique conic through five points in general position.
///
/// Points are first moved to zero centroid and unit mean distance, the null
/// vector of the 5x6 design matrix is read off its signed 5x5 minors, and the
/// result is mapped back to pixel coordinates.
pub fn conic_through<T: Real>(pts: &[ImagePoint<T>; 5]) -> Result<Conic<T>, GeometryError> {
    let five = T::lit(5.0);
    let cu = pts.iter().map(|p| p.u).sum::<T>() / five;
    let cv = pts.iter().map(|p| p.v).sum::<T>() / five;
    let mean_dist = pts.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<T>() / five;
    if !(mean_dist > T::lit(COINCIDENT_TOL)) {
        return Err(GeometryError::DegenerateConic);
    }
    let s = T::SQRT_2() / mean_dist;
    let rows: Vec<[T; 6]> = pts
        .iter()
        .map(|p| {
            let (x, y) = ((p.u - cu) * s, (p.v - cv) * s);
            [x * x, x * y, y * y, x, y, T::one()]
        })
        .collect();
    let mut coef = [T::zero(); 6];
    for (skip, out) in coef.iter_mut().enumerate() {
        let mut minor = [[T::zero(); 5]; 5];
        for (r, row) in rows.iter().enumerate() {
            let mut c = 0;
            for (k, &x) in row.iter().enumerate() {
                if k != skip {
                    minor[r][c] = x;
                    c += 1;
                }
            }
        }
        let d = det5(minor);
        *out = if skip % 2 == 0 { d } else { -d };
    }
    if !(norm(&coef) > T::lit(1e-12)) {
        return Err(GeometryError::DegenerateConic);
    }
    let normalized = Conic::from_coefficients(coef)?;
    // x_n = N x with N = [[s, 0, -s cu], [0, s, -s cv], [0, 0, 1]]; C_pix = Nᵀ C_n N.
    let n = [[s, T::zero(), -s * cu], [T::zero(), s, -s * cv], [T::zero(), T::zero(), T::one()]];
    let cn = normalized.matrix();
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    acc = acc + n[a][i] * cn[a][b] * n[b][j];
                }
            }
            out[i][j] = acc;
        }
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = (out[i][j] + out[j][i]) * T::lit(0.5);
            out[i][j] = avg;
            out[j][i] = avg;
        }
    }
    Conic::new(out)
}

fn det5<T: Real>(m: [[T; 5]; 5]) -> T {
    let mut a = m;
    let mut det = T::one();
    for k in 0..5 {
        let p = (k..5).fold(k, |best, i| if a[i][k].abs() > a[best][k].abs() { i } else { best });
        if a[p][k] == T::zero() {
            return T::zero();
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det = det * a[k][k];
        for i in (k + 1)..5 {
            let f = a[i][k] / a[k][k];
            for j in k..5 {
                a[i][j] = a[i][j] - f * a[k][j];
            }
        }
    }
    det
}

/// Error vector of one kernel on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ErrorSignal<T> {
    pub kernel_kind: KernelKind,
    pub values: Vec<T>,
    pub frame_index: usize,
}

impl<T: Real> ErrorSignal<T> {
    fn new(kernel_kind: KernelKind, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), kernel_kind.error_dim());
        Self { kernel_kind, values, frame_index: 0 }
    }

    pub fn at_frame(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }
}

pub fn p2p_error<T: Real>(p1: ImagePoint<T>, p2: ImagePoint<T>) -> ErrorSignal<T> {
    ErrorSignal::new(KernelKind::P2p, vec![p1.u - p2.u, p1.v - p2.v])
}

/// Signed point-line distance (the line is kept unit-normalized).
pub fn p2l_error<T: Real>(p: ImagePoint<T>, l: &HomLine<T>) -> ErrorSignal<T> {
    ErrorSignal::new(KernelKind::P2l, vec![l.a * p.u + l.b * p.v + l.c])
}

/// Residuals of both segment endpoints against `line`.
pub fn l2l_error<T: Real>(
    seg: (ImagePoint<T>, ImagePoint<T>),
    line: &HomLine<T>,
) -> Result<ErrorSignal<T>, GeometryError> {
    let sep = seg.0.distance(&seg.1);
    if !(sep >= T::lit(COINCIDENT_TOL)) {
        return Err(GeometryError::CoincidentPoints(sep.to_f64_lossy()));
    }
    let r = |p: ImagePoint<T>| p2l_error(p, line).values[0];
    Ok(ErrorSignal::new(KernelKind::L2l, vec![r(seg.0), r(seg.1)]))
}

pub fn p2c_error<T: Real>(p: ImagePoint<T>, c: &Conic<T>) -> ErrorSignal<T> {
    ErrorSignal::new(KernelKind::P2c, vec![c.residual(p.lift())])
}
