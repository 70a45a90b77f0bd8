//! Scalar maximisation on a bracket.

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
///
/// Returns `(argmax, max)` after the bracket shrinks below `tol` or
/// `max_iter` reductions, whichever comes first. Errors from `f` abort the
/// search.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    if b - a <= tol {
        let x = 0.5 * (a + b);
        return Ok((x, f(x)?));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..max_iter {
        if b - a <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| Ok(3.0 - (x - 0.7).powi(2)), -2.0, 5.0, 1e-10, 200).unwrap();
        assert!((x - 0.7).abs() < 1e-6);
        assert!((fx - 3.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_function_goes_to_the_edge() {
        let (x, _) = golden_section_max(|x| Ok(x), 0.0, 1.0, 1e-9, 200).unwrap();
        assert!(x > 1.0 - 1e-8);
    }

    #[test]
    fn degenerate_bracket() {
        let (x, _) = golden_section_max(|x| Ok(-x * x), 0.25, 0.25, 1e-9, 10).unwrap();
        assert_eq!(x, 0.25);
    }
}
