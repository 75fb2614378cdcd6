//! Scalar boundary data on the walls: trigonometric series in the angular
//! variable, optionally multiplied by a smooth window supported on an arc.
//!
//! The window is built from the classic smooth step
//!   s(u) = f(u) / (f(u) + f(1-u)),   f(u) = exp(-1/u) for u > 0, else 0,
//! so windowed data is infinitely differentiable and vanishes identically
//! outside its arc. That matters: the trace-back representation of the
//! vorticity needs pointwise values *and* arc-length derivatives of the
//! data, and certificates quote sup bounds of both.

use alloc::vec::Vec;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::geometry::{RadialCurve, TWO_PI};

fn smooth_f(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

/// Smooth step: 0 for u <= 0, 1 for u >= 1, strictly increasing between.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = smooth_f(u);
        let b = smooth_f(1.0 - u);
        a / (a + b)
    }
}

/// d/du of `smooth_step`.
pub fn smooth_step_d1(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        let a = smooth_f(u);
        let b = smooth_f(1.0 - u);
        let da = a / (u * u);
        let db = b / ((1.0 - u) * (1.0 - u));
        (da * b + a * db) / ((a + b) * (a + b))
    }
}

/// Trigonometric polynomial c0 + sum_k (a_k cos k theta + b_k sin k theta).
#[derive(Clone, Debug, Default)]
pub struct FourierSeries {
    pub constant: f64,
    pub cos_coeffs: Vec<f64>,
    pub sin_coeffs: Vec<f64>,
}

impl FourierSeries {
    pub fn constant(c: f64) -> Self {
        FourierSeries { constant: c, cos_coeffs: Vec::new(), sin_coeffs: Vec::new() }
    }

    pub fn value(&self, theta: f64) -> f64 {
        let mut v = self.constant;
        for (k, &a) in self.cos_coeffs.iter().enumerate() {
            v += a * ((k + 1) as f64 * theta).cos();
        }
        for (k, &b) in self.sin_coeffs.iter().enumerate() {
            v += b * ((k + 1) as f64 * theta).sin();
        }
        v
    }

    pub fn deriv(&self, theta: f64) -> f64 {
        let mut v = 0.0;
        for (k, &a) in self.cos_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            v -= a * m * (m * theta).sin();
        }
        for (k, &b) in self.sin_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            v += b * m * (m * theta).cos();
        }
        v
    }
}

/// Arc [start, start + width] (radians, wrapping) with smooth ramps of the
/// given length at both ends. Requires 0 < width <= 2 pi, 0 < ramp <= width/2.
#[derive(Clone, Copy, Debug)]
pub struct SupportArc {
    pub start: f64,
    pub width: f64,
    pub ramp: f64,
}

impl SupportArc {
    fn local(&self, theta: f64) -> f64 {
        let mut phi = (theta - self.start) % TWO_PI;
        if phi < 0.0 {
            phi += TWO_PI;
        }
        phi
    }

    pub fn value(&self, theta: f64) -> f64 {
        let phi = self.local(theta);
        if phi >= self.width {
            return 0.0;
        }
        smooth_step(phi / self.ramp) * smooth_step((self.width - phi) / self.ramp)
    }

    pub fn deriv(&self, theta: f64) -> f64 {
        let phi = self.local(theta);
        if phi >= self.width {
            return 0.0;
        }
        let ui = phi / self.ramp;
        let uo = (self.width - phi) / self.ramp;
        (smooth_step_d1(ui) * smooth_step(uo) - smooth_step(ui) * smooth_step_d1(uo)) / self.ramp
    }
}

/// Scalar data on one wall: scale * series(theta) * window(theta).
#[derive(Clone, Debug)]
pub struct CurveData {
    pub series: FourierSeries,
    pub window: Option<SupportArc>,
    pub scale: f64,
}

impl CurveData {
    pub fn zero() -> Self {
        CurveData { series: FourierSeries::default(), window: None, scale: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        CurveData { series: FourierSeries::constant(c), window: None, scale: 1.0 }
    }

    pub fn value(&self, theta: f64) -> f64 {
        let v = self.scale * self.series.value(theta);
        match &self.window {
            Some(w) => v * w.value(theta),
            None => v,
        }
    }

    /// d/dtheta.
    pub fn deriv(&self, theta: f64) -> f64 {
        let s = self.series.value(theta);
        let ds = self.series.deriv(theta);
        match &self.window {
            Some(w) => self.scale * (ds * w.value(theta) + s * w.deriv(theta)),
            None => self.scale * ds,
        }
    }

    /// Derivative along the wall with respect to arc length.
    pub fn deriv_arclength(&self, wall: &RadialCurve, theta: f64) -> f64 {
        self.deriv(theta) / wall.arc_speed(theta)
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
            || (self.series.constant == 0.0
                && self.series.cos_coeffs.iter().all(|&c| c == 0.0)
                && self.series.sin_coeffs.iter().all(|&c| c == 0.0))
    }

    /// sup |value| by dense sampling (the data is analytic in theta apart
    /// from the window, which is tame; 8192 samples resolve every mode the
    /// configuration format accepts).
    pub fn sup_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for s in 0..8192 {
            m = m.max(self.value(TWO_PI * s as f64 / 8192.0).abs());
        }
        m
    }

    /// sup |d/ds value| along the wall, by dense sampling.
    pub fn sup_abs_deriv_arclength(&self, wall: &RadialCurve) -> f64 {
        let mut m = 0.0f64;
        for s in 0..8192 {
            let theta = TWO_PI * s as f64 / 8192.0;
            m = m.max(self.deriv_arclength(wall, theta).abs());
        }
        m
    }
}

/// All prescribed data of one problem instance: stream values on both walls
/// and vorticity on the data wall.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub stream_inner: CurveData,
    pub stream_outer: CurveData,
    pub vorticity: CurveData,
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData {
            stream_inner: CurveData::zero(),
            stream_outer: CurveData::zero(),
            vorticity: CurveData::zero(),
        }
    }
}
