use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

/// Point / vector in the plane. Field order is (x, y) everywhere.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product (signed parallelogram area).
    #[inline]
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Counterclockwise rotation by 90 degrees: (x, y) -> (-y, x).
    #[inline]
    pub fn perp(self) -> Point2 {
        Point2 { x: -self.y, y: self.x }
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        if n == 0.0 {
            Point2::ZERO
        } else {
            Point2 { x: self.x / n, y: self.y / n }
        }
    }

    #[inline]
    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    #[inline]
    fn mul(self, p: Point2) -> Point2 {
        p * self
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Point2 {
    #[inline]
    fn sub_assign(&mut self, o: Point2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// 2x2 matrix, row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { a: 0.0, b: 0.0, c: 0.0, d: 0.0 };

    #[inline]
    pub fn identity() -> Mat2 {
        Mat2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 }
    }

    #[inline]
    pub fn scale(s: f64) -> Mat2 {
        Mat2 { a: s, b: 0.0, c: 0.0, d: s }
    }

    #[inline]
    pub fn apply(self, v: Point2) -> Point2 {
        Point2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    #[inline]
    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Spectral norm (largest singular value), closed form for 2x2.
    pub fn op_norm(self) -> f64 {
        // Singular values from the eigenvalues of M^T M.
        let p = self.a * self.a + self.c * self.c;
        let q = self.b * self.b + self.d * self.d;
        let r = self.a * self.b + self.c * self.d;
        let tr = p + q;
        let disc = ((p - q) * (p - q) + 4.0 * r * r).sqrt();
        (0.5 * (tr + disc)).max(0.0).sqrt()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    #[inline]
    fn add(self, o: Mat2) -> Mat2 {
        Mat2 { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c, d: self.d + o.d }
    }
}
