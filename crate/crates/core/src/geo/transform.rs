use super::{GeoError, Result};

/// Pixel `(col, row)` to world `(x, y)`:
///
/// ```text
/// x = a·col + b·row + c
/// y = d·col + e·row + f
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
}

const MIN_DETERMINANT: f64 = 1e-12;

impl AffineTransform {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Result<Self> {
        let det = a * e - b * d;
        if !det.is_finite() || det.abs() < MIN_DETERMINANT || ![a, b, c, d, e, f].iter().all(|v| v.is_finite()) {
            return Err(GeoError::SingularTransform(det));
        }
        Ok(AffineTransform { a, b, c, d, e, f })
    }

    pub fn from_coefficients(coeffs: [f64; 6]) -> Result<Self> {
        let [a, b, c, d, e, f] = coeffs;
        Self::new(a, b, c, d, e, f)
    }

    pub fn identity() -> Self {
        AffineTransform {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: 1.0,
            f: 0.0,
        }
    }

    /// North-up grid whose top-left corner sits at `(origin_x, origin_y)`.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        Self::new(pixel_size, 0.0, origin_x, 0.0, -pixel_size, origin_y)
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let det = self.determinant();
        let dx = x - self.c;
        let dy = y - self.f;
        (
            (self.e * dx - self.b * dy) / det,
            (self.a * dy - self.d * dx) / det,
        )
    }

    /// World coordinates of the centre of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// Fractional `(col, row)` of world point `(x, y)`.
pub fn world_to_pixel(t: &AffineTransform, x: f64, y: f64) -> (f64, f64) {
    t.world_to_pixel(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_case() {
        assert_eq!(world_to_pixel(&AffineTransform::identity(), 3.0, 7.0), (3.0, 7.0));
    }

    #[test]
    fn north_up_ten_metre() {
        let t = AffineTransform::new(10.0, 0.0, 500000.0, 0.0, -10.0, 3200000.0).unwrap();
        let (c, r) = world_to_pixel(&t, 500025.0, 3199975.0);
        assert!((c - 2.5).abs() < 1e-12);
        assert!((r - 2.5).abs() < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        assert!(AffineTransform::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0).is_err());
        assert!(AffineTransform::new(1e-7, 0.0, 0.0, 0.0, 1e-7, 0.0).is_err());
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let coeffs: [f64; 6] = [
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-1e6..1e6),
            ];
            let Ok(t) = AffineTransform::from_coefficients(coeffs) else {
                continue;
            };
            if t.determinant().abs() < 1e-3 {
                continue;
            }
            let (col, row) = (rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
            let (x, y) = t.pixel_to_world(col, row);
            let (c2, r2) = t.world_to_pixel(x, y);
            assert!((c2 - col).abs() < 1e-9 * col.abs().max(1.0), "{col} vs {c2}");
            assert!((r2 - row).abs() < 1e-9 * row.abs().max(1.0), "{row} vs {r2}");
            let (x2, y2) = t.pixel_to_world(c2, r2);
            assert!((x2 - x).abs() <= 1e-9 * x.abs().max(1.0));
            assert!((y2 - y).abs() <= 1e-9 * y.abs().max(1.0));
            checked += 1;
        }
    }
}
