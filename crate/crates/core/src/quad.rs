//! Globally adaptive Gauss–Kronrod (7/15) quadrature for scalar and
//! matrix-valued integrands.

use std::collections::BinaryHeap;
use std::ops::{Add, Sub};

use num_complex::Complex64;

use crate::linalg::{frobenius, CMatrix};

/// Values that can be integrated: a vector space with a norm.
pub trait QuadValue: Clone + Add<Output = Self> + Sub<Output = Self> {
    fn scale(self, factor: f64) -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl QuadValue for CMatrix {
    fn scale(mut self, factor: f64) -> Self {
        self.iter_mut().for_each(|z| *z *= factor);
        self
    }
    fn magnitude(&self) -> f64 {
        frobenius(self)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-12, max_intervals: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    pub converged: bool,
}

fn gk15<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc.clone().scale(WGK[7]);
    let mut gauss = fc.scale(WG[3]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let pair = f1 + f2;
        kronrod = kronrod + pair.clone().scale(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + pair.scale(WG[j / 2]);
        }
    }
    let kronrod = kronrod.scale(half);
    let gauss = gauss.scale(half);
    let err = (kronrod.clone() - gauss).magnitude();
    (kronrod, err)
}

struct Segment<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T> Eq for Segment<T> {}
impl<T> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, optionally pre-split into `initial` equal panels.
pub fn integrate<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    initial: usize,
    tol: Tolerance,
) -> QuadResult<T> {
    let panels = initial.max(1);
    let h = (b - a) / panels as f64;
    let mut heap = BinaryHeap::with_capacity(tol.max_intervals + panels);
    for k in 0..panels {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == panels { b } else { lo + h };
        let (value, error) = gk15(&mut f, lo, hi);
        heap.push(Segment { a: lo, b: hi, value, error });
    }
    loop {
        let (total, err) = summarize(&heap);
        let target = tol.abs.max(tol.rel * total.magnitude());
        if err <= target {
            return QuadResult { value: total, error: err, converged: true };
        }
        if heap.len() >= tol.max_intervals {
            return QuadResult { value: total, error: err, converged: false };
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            let (total, err) = summarize(&heap);
            return QuadResult { value: total, error: err, converged: false };
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
}

fn summarize<T: QuadValue>(heap: &BinaryHeap<Segment<T>>) -> (T, f64) {
    let mut iter = heap.iter();
    let first = iter.next().expect("heap is never empty");
    let mut total = first.value.clone();
    let mut err = first.error;
    for s in iter {
        total = total + s.value.clone();
        err += s.error;
    }
    (total, err)
}

/// Integrates `f` over `[a, ∞)` using `x = a + s / (1 − s)`.
pub fn integrate_to_infinity<T: QuadValue, F: FnMut(f64) -> T>(mut f: F, a: f64, tol: Tolerance) -> QuadResult<T> {
    integrate(
        |s: f64| {
            let one_minus = 1.0 - s;
            let x = a + s / one_minus;
            f(x).scale(1.0 / (one_minus * one_minus))
        },
        0.0,
        1.0,
        4,
        tol,
    )
}
