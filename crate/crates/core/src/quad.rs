//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

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
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (estimate, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_panels: 4000,
        }
    }
}

/// `int_a^b f` by global adaptive bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    integrate_with(f, a, b, QuadOptions::default())
}

pub fn integrate_with<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate_with(f, b, a, opts).map(|v| -v);
    }
    let (v, e) = gk15(&f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if panels.len() >= opts.max_panels {
            return Err(Error::numeric(
                "quad",
                format!("no convergence on [{a}, {b}]: estimate {total}, error {err}"),
            ));
        }
        // split the panel with the largest error
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (pa, pb, pv, pe) = panels.swap_remove(idx);
        let m = 0.5 * (pa + pb);
        if !(m > pa && m < pb) {
            // interval exhausted at machine precision; accept
            panels.push((pa, pb, pv, 0.0));
            err -= pe;
            continue;
        }
        let (v1, e1) = gk15(&f, pa, m);
        let (v2, e2) = gk15(&f, m, pb);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        panels.push((pa, m, v1, e1));
        panels.push((m, pb, v2, e2));
        if !total.is_finite() {
            return Err(Error::numeric("quad", "non-finite integrand"));
        }
    }
    // re-sum to shed accumulated rounding from the running updates
    Ok(panels.iter().map(|p| p.2).sum())
}

/// `int_a^inf f` for an integrand with (at least) exponential decay, summing
/// geometrically growing panels until a panel contributes negligibly.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, first_width: f64) -> Result<f64> {
    integrate_to_infinity_with(f, a, first_width, QuadOptions::default())
}

pub fn integrate_to_infinity_with<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    first_width: f64,
    opts: QuadOptions,
) -> Result<f64> {
    let mut total = 0.0;
    let mut lo = a;
    let mut width = first_width;
    let mut small = 0;
    for _ in 0..200 {
        let part = integrate_with(&f, lo, lo + width, opts)?;
        total += part;
        if part.abs() <= 1e-15 * total.abs().max(1e-300) {
            small += 1;
            if small >= 2 {
                return Ok(total);
            }
        } else {
            small = 0;
        }
        lo += width;
        width *= 2.0;
    }
    Err(Error::numeric("quad", "semi-infinite integral did not settle"))
}

/// `int_{-inf}^b f`.
pub fn integrate_from_neg_infinity<F: Fn(f64) -> f64>(f: F, b: f64, first_width: f64) -> Result<f64> {
    integrate_to_infinity(|y| f(-y), -b, first_width)
}

pub fn integrate_from_neg_infinity_with<F: Fn(f64) -> f64>(
    f: F,
    b: f64,
    first_width: f64,
    opts: QuadOptions,
) -> Result<f64> {
    integrate_to_infinity_with(|y| f(-y), -b, first_width, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0).unwrap();
        assert!((v - (64.0 / 6.0 - 1.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_and_kinked() {
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let v = integrate(|x: f64| x.abs().sqrt(), -1.0, 1.0).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn semi_infinite() {
        let v = integrate_to_infinity(|x: f64| (-2.0 * x).exp(), 0.0, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-13);
        let v = integrate_from_neg_infinity(|x: f64| x.exp(), 1.0, 1.0).unwrap();
        assert!((v - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits() {
        let v = integrate(|x| x, 1.0, 0.0).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
    }
}
