//! One-dimensional bracketed minimization.

use crate::scalar::Scalar;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[a, b]`, stopping once the
/// bracket is narrower than `tol`.
///
/// Returns `(x_min, f_min)`. On exact ties between the two interior probes
/// the left sub-bracket is kept, so among equal minima the smaller abscissa
/// is preferred.
pub fn golden_section_minimize<T, F>(mut f: F, mut a: T, mut b: T, tol: T) -> (T, T)
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    if b < a {
        std::mem::swap(&mut a, &mut b);
    }
    let r = T::lit(INV_PHI);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);

    // 200 iterations shrink any finite bracket below f64 resolution.
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }

    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimize `f` over the integers in `[lo, hi]`: golden-section on the
/// continuous relaxation, then an exhaustive check of the integers around
/// the continuous optimum. Ties resolve to the smallest integer.
pub fn integer_minimize<F>(mut f: F, lo: i64, hi: i64) -> (i64, f64)
where
    F: FnMut(i64) -> f64,
{
    debug_assert!(lo <= hi);
    if hi - lo <= 8 {
        return scan_min(&mut f, lo, hi);
    }
    let (x, _) = golden_section_minimize(|x: f64| f(x.round() as i64), lo as f64, hi as f64, 1.0);
    let centre = x.round() as i64;
    scan_min(&mut f, (centre - 3).max(lo), (centre + 3).min(hi))
}

fn scan_min<F: FnMut(i64) -> f64>(f: &mut F, lo: i64, hi: i64) -> (i64, f64) {
    let mut best = (lo, f(lo));
    for t in lo + 1..=hi {
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_vertex() {
        let (x, fx) = golden_section_minimize(|x: f64| (x - 1.3).powi(2) + 2.0, -4.0, 9.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let (x, _) = golden_section_minimize(|x: f32| (x + 0.5).abs(), -3.0, 3.0, 1e-4);
        assert!((x + 0.5).abs() < 1e-3);
    }

    #[test]
    fn integer_minimum_of_v_shape() {
        let (x, fx) = integer_minimize(|t| ((t - 1234) as f64).abs(), 0, 86_400);
        assert_eq!(x, 1234);
        assert_eq!(fx, 0.0);
    }

    #[test]
    fn integer_ties_go_left() {
        let (x, _) = integer_minimize(|t| if (10..=12).contains(&t) { 0.0 } else { 1.0 }, 0, 5);
        assert_eq!(x, 0);
        let (x, _) = integer_minimize(|t| if (10..=12).contains(&t) { 0.0 } else { 1.0 }, 8, 14);
        assert_eq!(x, 10);
    }
}
