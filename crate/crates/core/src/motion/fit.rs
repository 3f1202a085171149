//! Point correspondences and the linear affine solve.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::AffineTransform;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: (f64, f64),
    pub target: (f64, f64),
}

impl Correspondence {
    pub fn new(source: (f64, f64), target: (f64, f64)) -> Self {
        Self { source, target }
    }

    /// Constructor that also checks both points lie inside a `w x h` frame.
    pub fn within(source: (f64, f64), target: (f64, f64), w: usize, h: usize) -> Result<Self> {
        let ok = |p: (f64, f64)| {
            p.0.is_finite() && p.1.is_finite() && p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= (w - 1) as f64 && p.1 <= (h - 1) as f64
        };
        if !ok(source) || !ok(target) {
            return Err(Error::invalid(format!("correspondence {source:?} -> {target:?} outside {w}x{h}")));
        }
        Ok(Self::new(source, target))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>) -> Self {
        Self { items }
    }

    pub fn from_pairs(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::dims(format!("{} targets", src.len()), format!("{} targets", dst.len())));
        }
        Ok(Self::new(src.iter().zip(dst).map(|(&s, &d)| Correspondence::new(s, d)).collect()))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Correspondence] {
        &self.items
    }

    /// Subset selected by a boolean mask of the same length.
    pub fn select(&self, mask: &[bool]) -> CorrespondenceSet {
        Self::new(
            self.items
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(c, _)| *c)
                .collect(),
        )
    }

    /// Swap source and target of every pair.
    pub fn reversed(&self) -> CorrespondenceSet {
        Self::new(self.items.iter().map(|c| Correspondence::new(c.target, c.source)).collect())
    }
}

impl<'a> IntoIterator for &'a CorrespondenceSet {
    type Item = &'a Correspondence;
    type IntoIter = std::slice::Iter<'a, Correspondence>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// The stacked linear system `A X = B` for six affine coefficients.
///
/// Rows `0..n` are `[x, y, 1, 0, 0, 0]`, rows `n..2n` are `[0, 0, 0, x, y, 1]`;
/// the right-hand side is `[x'_1..x'_n, y'_1..y'_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFitSystem {
    pub design: Vec<[f64; 6]>,
    pub rhs: Vec<f64>,
}

impl AffineFitSystem {
    pub fn rows(&self) -> usize {
        self.design.len()
    }
}

pub fn build_affine_system(set: &CorrespondenceSet) -> Result<AffineFitSystem> {
    let n = set.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let mut design = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    for c in set {
        design.push([c.source.0, c.source.1, 1.0, 0.0, 0.0, 0.0]);
        rhs.push(c.target.0);
    }
    for c in set {
        design.push([0.0, 0.0, 0.0, c.source.0, c.source.1, 1.0]);
        rhs.push(c.target.1);
    }
    Ok(AffineFitSystem { design, rhs })
}

/// Relative pivot floor below which the system is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of the affine system.
///
/// Columns are equilibrated, then the normal equations are solved by Cholesky.
/// If that factorization is missing or poorly conditioned the scaled system is
/// solved by QR, whose diagonal decides rank.
pub fn solve_affine_lsq(system: &AffineFitSystem) -> Result<AffineTransform> {
    let rows = system.rows();
    if rows < 6 || system.rhs.len() != rows {
        return Err(Error::InsufficientPoints { needed: 3, got: rows / 2 });
    }
    let mut scale = [0.0f64; 6];
    for r in &system.design {
        for j in 0..6 {
            scale[j] += r[j] * r[j];
        }
    }
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateGeometry("design matrix has a zero column".into()));
    }
    for s in scale.iter_mut() {
        *s = 1.0 / s.sqrt();
    }

    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for (r, &b) in system.design.iter().zip(&system.rhs) {
        let row: [f64; 6] = std::array::from_fn(|j| r[j] * scale[j]);
        for i in 0..6 {
            if row[i] == 0.0 {
                continue;
            }
            atb[i] += row[i] * b;
            for j in 0..6 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }

    let via_cholesky = ata.cholesky().and_then(|ch| {
        let l = ch.l();
        let d: Vec<f64> = (0..6).map(|i| l[(i, i)]).collect();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        // cond(AtA) = cond(L)^2, keep a wide margin before trusting it
        (lo / hi > 1e-6).then(|| ch.solve(&atb))
    });

    let y = match via_cholesky {
        Some(y) => y,
        None => {
            let a = DMatrix::from_fn(rows, 6, |i, j| system.design[i][j] * scale[j]);
            let b = DVector::from_column_slice(&system.rhs);
            let qr = a.qr();
            let r = qr.r();
            let diag: Vec<f64> = (0..6).map(|i| r[(i, i)].abs()).collect();
            let hi = diag.iter().cloned().fold(0.0, f64::max);
            if diag.iter().any(|&v| v <= RANK_TOL * hi) {
                return Err(Error::DegenerateGeometry("rank-deficient affine system (collinear points?)".into()));
            }
            let qtb = qr.q().transpose() * b;
            let sol = r
                .solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::DegenerateGeometry("triangular solve failed".into()))?;
            Vector6::from_iterator(sol.iter().cloned())
        }
    };
    let coeffs: [f64; 6] = std::array::from_fn(|j| y[j] * scale[j]);
    AffineTransform::new(coeffs).map_err(|_| Error::DegenerateGeometry("non-finite affine solution".into()))
}

/// Build and solve in one step.
pub fn fit_affine(set: &CorrespondenceSet) -> Result<AffineTransform> {
    solve_affine_lsq(&build_affine_system(set)?)
}

/// Euclidean reprojection error of one correspondence.
#[inline]
pub fn residual(a: &AffineTransform, c: &Correspondence) -> f64 {
    let (x, y) = a.apply(c.source.0, c.source.1);
    ((x - c.target.0).powi(2) + (y - c.target.1).powi(2)).sqrt()
}
