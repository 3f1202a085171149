//! Planar motion models: 2x3 affine transforms and 3x3 homographies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homographies with `|det|` at or below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// `(x, y) -> (a1*x + a2*y + a3, a4*x + a5*y + a6)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub coeffs: [f64; 6],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        coeffs: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn new(coeffs: [f64; 6]) -> Result<Self> {
        let a = Self { coeffs };
        a.check_finite()?;
        Ok(a)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            coeffs: [1.0, 0.0, tx, 0.0, 1.0, ty],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self {
            coeffs: [sx, 0.0, 0.0, 0.0, sy, 0.0],
        }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            coeffs: [c, -s, 0.0, s, c, 0.0],
        }
    }

    /// `x -> center + scale * R(theta) * (x - center) + (tx, ty)`.
    pub fn similarity_about(center: (f64, f64), theta: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let (a, b, d, e) = (scale * c, -scale * s, scale * s, scale * c);
        let (cx, cy) = center;
        Self {
            coeffs: [
                a,
                b,
                cx - a * cx - b * cy + tx,
                d,
                e,
                cy - d * cx - e * cy + ty,
            ],
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.coeffs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite affine coefficients {:?}", self.coeffs)))
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.coeffs;
        (a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5])
    }

    pub fn det(&self) -> f64 {
        self.coeffs[0] * self.coeffs[4] - self.coeffs[1] * self.coeffs[3]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.coeffs;
        let b = &other.coeffs;
        AffineTransform {
            coeffs: [
                a[0] * b[0] + a[1] * b[3],
                a[0] * b[1] + a[1] * b[4],
                a[0] * b[2] + a[1] * b[5] + a[2],
                a[3] * b[0] + a[4] * b[3],
                a[3] * b[1] + a[4] * b[4],
                a[3] * b[2] + a[4] * b[5] + a[5],
            ],
        }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix { det });
        }
        let a = &self.coeffs;
        let (i0, i1, i3, i4) = (a[4] / det, -a[1] / det, -a[3] / det, a[0] / det);
        Ok(AffineTransform {
            coeffs: [
                i0,
                i1,
                -(i0 * a[2] + i1 * a[5]),
                i3,
                i4,
                -(i3 * a[2] + i4 * a[5]),
            ],
        })
    }

    pub fn to_homography(&self) -> Homography {
        let a = &self.coeffs;
        Homography {
            m: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [0.0, 0.0, 1.0]],
        }
    }

    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Compose a list of transforms where later entries are applied last.
pub fn compose_all<'a>(ts: impl IntoIterator<Item = &'a AffineTransform>) -> AffineTransform {
    ts.into_iter()
        .fold(AffineTransform::IDENTITY, |acc, t| t.compose(&acc))
}

/// 3x3 projective transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validate, then scale so the bottom-right entry is 1 when it is nonzero.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite homography entry"));
        }
        let h = Homography { m }.normalized();
        let det = h.det();
        if det.abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix { det });
        }
        Ok(h)
    }

    pub fn normalized(&self) -> Homography {
        let s = self.m[2][2];
        if s == 0.0 || s == 1.0 {
            return *self;
        }
        let mut m = self.m;
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Homography { m }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul(&self, other: &Homography) -> Homography {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Homography { m }
    }

    pub fn invert(&self) -> Result<Homography> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix { det });
        }
        let m = &self.m;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = adj[i][j] / det;
            }
        }
        Ok(Homography { m: inv }.normalized())
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    /// Upper-left 2x2 block after normalization, `[[a, b], [c, d]]`.
    pub fn linear_part(&self) -> [[f64; 2]; 2] {
        let n = self.normalized();
        [[n.m[0][0], n.m[0][1]], [n.m[1][0], n.m[1][1]]]
    }

    /// Affine factor: projective row replaced by `(0, 0, 1)`.
    pub fn affine_part(&self) -> AffineTransform {
        let n = self.normalized();
        AffineTransform {
            coeffs: [n.m[0][0], n.m[0][1], n.m[0][2], n.m[1][0], n.m[1][1], n.m[1][2]],
        }
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<AffineTransform> for Homography {
    fn from(a: AffineTransform) -> Self {
        a.to_homography()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_affine(rng: &mut ChaCha8Rng) -> AffineTransform {
        AffineTransform {
            coeffs: std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
        }
    }

    fn embed(a: &AffineTransform) -> [[f64; 3]; 3] {
        let c = a.coeffs;
        [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [0.0, 0.0, 1.0]]
    }

    fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn compose_identity_and_translations() {
        let a = AffineTransform::new([1.2, 0.3, -4.0, 0.1, 0.9, 2.0]).unwrap();
        assert_eq!(a.compose(&AffineTransform::IDENTITY), a);
        assert_eq!(AffineTransform::IDENTITY.compose(&a), a);
        let t = AffineTransform::translation(1.0, 0.0).compose(&AffineTransform::translation(0.0, 1.0));
        assert_eq!(t, AffineTransform::translation(1.0, 1.0));
    }

    #[test]
    fn compose_matches_3x3_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_affine(&mut rng);
            let b = random_affine(&mut rng);
            let c = a.compose(&b);
            let m = matmul3(&embed(&a), &embed(&b));
            let expect = [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]];
            for (x, y) in c.coeffs.iter().zip(expect) {
                assert!((x - y).abs() < 1e-12);
            }
            // b first, then a
            let p = (0.7, -1.3);
            let (bx, by) = b.apply(p.0, p.1);
            let direct = a.apply(bx, by);
            let via = c.apply(p.0, p.1);
            assert!((direct.0 - via.0).abs() < 1e-12 && (direct.1 - via.1).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (a, b, c) = (random_affine(&mut rng), random_affine(&mut rng), random_affine(&mut rng));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!(l.max_abs_diff(&r) < 1e-9);
        }
    }

    #[test]
    fn homography_embedding_and_inverse() {
        assert_eq!(AffineTransform::IDENTITY.to_homography(), Homography::IDENTITY);
        let s = AffineTransform::scale(2.0, 2.0).to_homography();
        assert_eq!(s.m, [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut m = [[0.0; 3]; 3];
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
            m[2][2] = 1.0 + rng.random_range(0.0..1.0);
            let Ok(h) = Homography::new(m) else { continue };
            if h.det().abs() < 1e-3 {
                continue;
            }
            let prod = h.mul(&h.invert().unwrap());
            // h * h^-1 is a scalar multiple of I after normalization of h^-1
            let p = prod.normalized();
            assert!(p.max_abs_diff(&Homography::IDENTITY) < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn singular_inputs_are_rejected() {
        let a = AffineTransform::new([1.0, 2.0, 0.0, 2.0, 4.0, 0.0]).unwrap();
        assert!(matches!(a.inverse(), Err(Error::SingularMatrix { .. })));
        assert!(matches!(
            Homography::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(Error::SingularMatrix { .. })
        ));
        assert!(AffineTransform::new([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn affine_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = random_affine(&mut rng);
            if a.det().abs() < 0.1 {
                continue;
            }
            let id = a.compose(&a.inverse().unwrap());
            assert!(id.max_abs_diff(&AffineTransform::IDENTITY) < 1e-9);
        }
    }
}
