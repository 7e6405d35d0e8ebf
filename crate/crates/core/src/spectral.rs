//! Character transform on F_p^m.
//!
//! Normalization: `f^(xi) = E_x f(x) e_p(-xi . x)` and
//! `f(x) = sum_xi f^(xi) e_p(xi . x)`, so Parseval reads
//! `E_x |f|^2 = sum_xi |f^(xi)|^2`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{AffineSubspace, GroupVector, Space};
use crate::par;
use crate::table::{roots_of_unity, FunctionTable};

/// Relative tolerance under which two coefficient moduli count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Fourier coefficients, indexed like the input table.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum(FunctionTable);

/// One tensor pass of the p-point transform along axis `k`. `sign` is -1 for
/// the forward direction and +1 for the inverse; no normalization.
fn dft_pass(
    space: &Space,
    input: &[Complex64],
    k: usize,
    sign: i64,
    roots: &[Complex64],
) -> Vec<Complex64> {
    let p = space.p() as usize;
    let stride = p.pow(k as u32);
    par::map_indexed(input.len(), |i| {
        let j = (i / stride) % p;
        let base = i - j * stride;
        let mut acc = Complex64::new(0.0, 0.0);
        for t in 0..p {
            let e = if sign < 0 {
                (p - (j * t) % p) % p
            } else {
                (j * t) % p
            };
            acc += input[base + t * stride] * roots[e];
        }
        acc
    })
}

fn transform(f: &FunctionTable, sign: i64) -> Vec<Complex64> {
    let space = f.space();
    let roots = roots_of_unity(space.p());
    let mut cur = f.values().to_vec();
    for k in 0..space.dim() {
        cur = dft_pass(space, &cur, k, sign, &roots);
    }
    cur
}

pub fn dft(f: &FunctionTable) -> Spectrum {
    let n = f.len() as f64;
    let mut v = transform(f, -1);
    for c in v.iter_mut() {
        *c /= n;
    }
    Spectrum(FunctionTable::new(f.space(), v).expect("same length"))
}

impl Spectrum {
    pub fn table(&self) -> &FunctionTable {
        &self.0
    }

    pub fn space(&self) -> &Space {
        self.0.space()
    }

    pub fn coefficients(&self) -> &[Complex64] {
        self.0.values()
    }

    pub fn at(&self, xi: &GroupVector) -> Result<Complex64> {
        Ok(self.0.get(self.space().encode(xi)?))
    }

    /// Inversion: `f(x) = sum_xi f^(xi) e_p(xi . x)`.
    pub fn inverse(&self) -> FunctionTable {
        let v = transform(&self.0, 1);
        FunctionTable::new(self.space(), v).expect("same length")
    }

    /// `sum_xi |f^(xi)|^2`.
    pub fn energy(&self) -> f64 {
        par::sum_f64(
            &self
                .0
                .values()
                .iter()
                .map(|c| c.norm_sqr())
                .collect::<Vec<_>>(),
        )
    }

    /// `sum_xi |f^(xi)|^4`, which equals `||f||_{U^2}^4`.
    pub fn fourth_moment(&self) -> f64 {
        par::sum_f64(
            &self
                .0
                .values()
                .iter()
                .map(|c| c.norm_sqr() * c.norm_sqr())
                .collect::<Vec<_>>(),
        )
    }

    /// Index of the largest |coefficient|, smallest index among near-ties.
    pub fn argmax(&self) -> (usize, f64) {
        let moduli: Vec<f64> = self.0.values().iter().map(|c| c.norm()).collect();
        let max = moduli.iter().copied().fold(0.0, f64::max);
        let tol = TIE_TOL * max.max(1.0);
        let i = moduli.iter().position(|&m| m >= max - tol).unwrap_or(0);
        (i, moduli[i])
    }
}

/// Direct O(p^{2m}) evaluation of the defining sum; used as an oracle.
pub fn dft_direct(f: &FunctionTable) -> Spectrum {
    let space = f.space();
    let roots = roots_of_unity(space.p());
    let ar = space.arith();
    let p = space.p() as usize;
    let vals = f.values();
    let n = f.len();
    let v = par::map_indexed(n, |xi| {
        let terms: Vec<Complex64> = (0..n)
            .map(|x| vals[x] * roots[(p - ar.dot(xi, x) as usize) % p])
            .collect();
        par::mean_c64(&terms)
    });
    Spectrum(FunctionTable::new(space, v).expect("same length"))
}

/// `(f * g)(x) = E_y f(y) g(x - y)`, through the transform.
pub fn convolve(f: &FunctionTable, g: &FunctionTable) -> Result<FunctionTable> {
    f.same_shape(g)?;
    let (a, b) = (dft(f), dft(g));
    let prod = a.0.mul(&b.0)?;
    Ok(Spectrum(prod).inverse())
}

/// `||f||_{U^2}^4` via the transform.
pub fn u2_fourth_power(f: &FunctionTable) -> f64 {
    dft(f).fourth_moment()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InverseU2 {
    pub xi: GroupVector,
    pub xi_index: usize,
    /// `|f^(xi)|`, the largest coefficient modulus.
    pub corr: f64,
    pub u2_norm: f64,
    pub one_bounded: bool,
    /// Whether `||f||_{U^2} >= delta` implies `corr >= delta^2` held here.
    pub guarantee_holds: bool,
}

/// Returns the frequency of largest correlation. For 1-bounded f,
/// `corr >= ||f||_{U^2}^2`, so `||f||_{U^2} >= delta` forces `corr >= delta^2`.
pub fn inverse_u2(f: &FunctionTable, delta: f64) -> Result<InverseU2> {
    let one_bounded = f.is_one_bounded();
    if !one_bounded {
        log::warn!(
            "inverse_u2: input has max modulus {} > 1; the correlation guarantee does not apply",
            f.max_modulus()
        );
    }
    let spec = dft(f);
    let (i, corr) = spec.argmax();
    let u2_norm = spec.fourth_moment().max(0.0).powf(0.25);
    let guarantee_holds = !(u2_norm >= delta) || corr >= delta * delta - 1e-12;
    Ok(InverseU2 {
        xi: f.space().decode(i)?,
        xi_index: i,
        corr,
        u2_norm,
        one_bounded,
        guarantee_holds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubspaceAverageReport {
    pub codim: usize,
    /// `|E_{x in w+V} f(x)|`.
    pub average_abs: f64,
    /// `p^d ||f||_{U^2}`.
    pub bound: f64,
    pub holds: bool,
}

/// Compares the average of f over a coset of codimension d with
/// `p^d ||f||_{U^2}`.
pub fn subspace_average_bound_check(
    f: &FunctionTable,
    c: &AffineSubspace,
) -> Result<SubspaceAverageReport> {
    if c.space() != f.space() {
        return Err(Error::DimensionMismatch {
            expected: f.space().dim(),
            found: c.ambient_dim(),
        });
    }
    let r = f.restrict(c)?;
    let average_abs = r.mean().norm();
    let d = c.codim();
    let u2 = u2_fourth_power(f).max(0.0).powf(0.25);
    let bound = (f.space().p() as f64).powi(d as i32) * u2;
    Ok(SubspaceAverageReport {
        codim: d,
        average_abs,
        bound,
        holds: average_abs <= bound + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::PrimeField;
    use crate::table::IndicatorSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(p: u64, m: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), m).unwrap()
    }

    fn random_table(space: &Space, seed: u64, bounded: bool) -> FunctionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..space.size())
            .map(|_| {
                if bounded {
                    Complex64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..6.3))
                } else {
                    Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
                }
            })
            .collect();
        FunctionTable::new(space, v).unwrap()
    }

    #[test]
    fn dft_examples() {
        let s = sp(3, 3);
        let d = dft(&FunctionTable::delta_at(&s, 0).unwrap());
        assert!(d
            .coefficients()
            .iter()
            .all(|c| (c - Complex64::new(1.0 / 27.0, 0.0)).norm() < 1e-15));
        let one = dft(&FunctionTable::ones(&s));
        for (i, c) in one.coefficients().iter().enumerate() {
            let want = if i == 0 { 1.0 } else { 0.0 };
            assert!((c - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
        let f = random_table(&s, 3, false);
        let (a, b) = (dft(&f), dft_direct(&f));
        for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn inverse_u2_examples() {
        let s = sp(5, 2);
        let xi0 = GroupVector::from_digits(vec![2, 3]);
        let r = inverse_u2(&FunctionTable::character(&s, &xi0).unwrap(), 0.5).unwrap();
        assert_eq!(r.xi, xi0);
        assert!((r.corr - 1.0).abs() < 1e-12);

        for p in [3u64, 5] {
            let s = sp(p, 2);
            let h = IndicatorSet::from_pred(&s, |i| i % p as usize == 0);
            let r = inverse_u2(&h.balanced(), 0.1).unwrap();
            assert_eq!(r.xi.digits()[1], 0);
            assert_ne!(r.xi.digits()[0], 0);
            assert!((r.corr - 1.0 / p as f64).abs() < 1e-12);
            // ties across multiples of e_1: the smallest index wins
            assert_eq!(r.xi_index, 1);
        }

        let z = inverse_u2(&FunctionTable::zeros(&s), 0.1).unwrap();
        assert_eq!(z.xi_index, 0);
        assert_eq!(z.corr, 0.0);
    }

    #[test]
    fn subspace_average_examples() {
        let s = sp(3, 2);
        let c = AffineSubspace::from_normals(&s, &[GroupVector::from_digits(vec![1, 1])], &[0])
            .unwrap();
        let r = subspace_average_bound_check(&FunctionTable::zeros(&s), &c).unwrap();
        assert_eq!((r.average_abs, r.bound), (0.0, 0.0));
        assert!(r.holds);
        let xi = GroupVector::from_digits(vec![1, 2]);
        let perp = AffineSubspace::linear(&s, std::slice::from_ref(&xi)).unwrap();
        let r = subspace_average_bound_check(&FunctionTable::character(&s, &xi).unwrap(), &perp)
            .unwrap();
        assert!((r.average_abs - 1.0).abs() < 1e-12);
        assert!((r.bound - 3.0).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn subspace_average_random_batch() {
        let s = sp(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in 0..200 {
            let f = random_table(&s, 1000 + k, true);
            let mut normal = vec![0u64; 3];
            while normal.iter().all(|&d| d == 0) {
                normal = (0..3).map(|_| rng.gen_range(0..3)).collect();
            }
            let c = AffineSubspace::from_normals(
                &s,
                &[GroupVector::from_digits(normal)],
                &[rng.gen_range(0..3)],
            )
            .unwrap();
            assert!(subspace_average_bound_check(&f, &c).unwrap().holds);
        }
    }

    #[test]
    fn convolution_matches_direct() {
        let s = sp(3, 2);
        let f = random_table(&s, 4, false);
        let g = random_table(&s, 5, false);
        let h = convolve(&f, &g).unwrap();
        let ar = s.arith();
        for x in 0..s.size() {
            let direct: Complex64 = (0..s.size())
                .map(|y| f.get(y) * g.get(ar.sub(x, y)))
                .sum::<Complex64>()
                / s.size() as f64;
            assert!((h.get(x) - direct).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_parseval(seed in any::<u64>(), p in prop::sample::select(vec![3u64, 5]), m in 1usize..=4) {
            let s = sp(p, m);
            let f = random_table(&s, seed, false);
            let spec = dft(&f);
            let back = spec.inverse();
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert!((a - b).norm() < 1e-9);
            }
            let lhs = f.mean_sq();
            prop_assert!((lhs - spec.energy()).abs() <= 1e-9 * lhs.max(1.0));
        }

        #[test]
        fn inverse_u2_correlation_bound(seed in any::<u64>(), m in 1usize..=3) {
            let s = sp(3, m);
            let f = random_table(&s, seed, true);
            let r = inverse_u2(&f, 0.0).unwrap();
            prop_assert!(r.corr >= r.u2_norm * r.u2_norm - 1e-12);
        }
    }
}
