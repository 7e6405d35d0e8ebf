//! Multiplicative derivatives, Gowers norms, box and directional norms.
//!
//! Convention: `Delta_h f(x) = f(x) conj(f(x + h))`, stacked as
//! `Delta_{h1, h2} = Delta_{h1} Delta_{h2}`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{AffineSubspace, GroupVector, IndexArith, Space};
use crate::par;
use crate::spectral;
use crate::table::FunctionTable;

/// Radicands down to this value are clamped to zero.
pub const RADICAND_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormValue {
    pub value: f64,
    /// The power at which the defining average is taken.
    pub power: u32,
    /// The average before taking the root.
    pub raw_average: f64,
}

impl NormValue {
    pub fn from_raw(raw_average: f64, power: u32) -> Result<Self> {
        if raw_average < -RADICAND_TOL || raw_average.is_nan() {
            return Err(Error::NegativeRadicand(raw_average));
        }
        Ok(Self {
            value: raw_average.max(0.0).powf(1.0 / power as f64),
            power,
            raw_average,
        })
    }
}

pub fn delta(f: &FunctionTable, h: &GroupVector) -> Result<FunctionTable> {
    let hi = f.space().encode(h)?;
    Ok(delta_index(f, &f.space().arith(), hi))
}

pub(crate) fn delta_index(f: &FunctionTable, ar: &IndexArith, h: usize) -> FunctionTable {
    let v = f.values();
    FunctionTable::from_fn(f.space(), |x| v[x] * v[ar.add(x, h)].conj())
}

/// Estimated work of the recursive U^s evaluation on a space of size `size`.
pub fn gowers_work(size: usize, dim: usize, p: u64, s: u32) -> u128 {
    let base = size as u128 * (dim as u128 * p as u128 + 1);
    if s <= 2 {
        base
    } else {
        (size as u128).saturating_pow(s - 2).saturating_mul(base)
    }
}

/// `||f||_{U^s}^{2^s}` by the derivative recursion, bottoming out at U^2
/// through the transform.
fn gowers_raw(f: &FunctionTable, s: u32, ar: &IndexArith) -> f64 {
    match s {
        1 => f.mean().norm_sqr(),
        2 => spectral::u2_fourth_power(f),
        _ => {
            let inner =
                par::map_indexed_coarse(f.len(), |h| gowers_raw(&delta_index(f, ar, h), s - 1, ar));
            par::mean_f64(&inner)
        }
    }
}

/// `||f||_{U^s}`, optionally on the coset `domain` (through its
/// parameterization).
pub fn gowers_u(f: &FunctionTable, s: u32, domain: Option<&AffineSubspace>) -> Result<NormValue> {
    if s == 0 {
        return Err(Error::InvalidArgument("U^s needs s >= 1".into()));
    }
    let restricted;
    let f = match domain {
        Some(c) => {
            restricted = f.restrict(c)?;
            &restricted
        }
        None => f,
    };
    let sp = f.space();
    sp.check_work("gowers_u", gowers_work(f.len(), sp.dim(), sp.p(), s))?;
    NormValue::from_raw(gowers_raw(f, s, &sp.arith()), 1 << s)
}

/// n-dimensional factor of a product space F_p^n x F_p^n.
pub fn factor_space(space: &Space) -> Result<Space> {
    if !space.dim().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "table of dimension {} is not on a product space",
            space.dim()
        )));
    }
    space.with_dim(space.dim() / 2)
}

/// `E_{x, x'} |E_y g(x, y) conj g(x', y)|^2`.
fn box_raw(g: &FunctionTable, n_size: usize) -> f64 {
    let v = g.values();
    let rows = par::map_indexed_coarse(n_size, |x| {
        let per: Vec<f64> = (0..n_size)
            .map(|x2| {
                let terms: Vec<Complex64> = (0..n_size)
                    .map(|y| v[x + n_size * y] * v[x2 + n_size * y].conj())
                    .collect();
                par::mean_c64(&terms).norm_sqr()
            })
            .collect();
        par::mean_f64(&per)
    });
    par::mean_f64(&rows)
}

pub fn box_norm(g: &FunctionTable) -> Result<NormValue> {
    let ns = factor_space(g.space())?;
    g.space()
        .check_work("box_norm", (ns.size() as u128).pow(3))?;
    NormValue::from_raw(box_raw(g, ns.size()), 4)
}

/// `G(a, b) = g(a, b - a)`: the coordinates in which the second star norm
/// becomes the box norm.
pub fn shear(g: &FunctionTable) -> Result<FunctionTable> {
    let ns = factor_space(g.space())?;
    let n = ns.size();
    let ar = ns.arith();
    let v = g.values();
    Ok(FunctionTable::from_fn(g.space(), |i| {
        let (a, b) = (i % n, i / n);
        v[a + n * ar.sub(b, a)]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Star {
    One,
    Two,
    Three,
}

impl Star {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(Star::One),
            2 => Ok(Star::Two),
            3 => Ok(Star::Three),
            _ => Err(Error::InvalidArgument(format!("no star norm {i}"))),
        }
    }

    /// Directions `Delta_{(0,h1),(0,h2),(h3,0)}`, `Delta_{(0,h1),(-h2,h2)}`,
    /// `Delta_{(-h1,2h1)}` respectively.
    pub fn directions(self, p: u64) -> DirectionSet {
        let pats = match self {
            Star::One => vec![(0, 1), (0, 1), (1, 0)],
            Star::Two => vec![(0, 1), (p - 1, 1)],
            Star::Three => vec![(p - 1, 2)],
        };
        DirectionSet::new(pats, p).expect("fixed patterns are valid")
    }
}

pub fn star_norm(g: &FunctionTable, which: Star) -> Result<NormValue> {
    let ns = factor_space(g.space())?;
    let n = ns.size();
    let v = g.values();
    match which {
        Star::One => {
            g.space().check_work(
                "star_norm",
                (n as u128).pow(3) * (ns.dim() as u128 * ns.p() as u128 + 1),
            )?;
            let ar = ns.arith();
            let per = par::map_indexed_coarse(n * n, |k| {
                let (x, h3) = (k % n, k / n);
                let x2 = ar.add(x, h3);
                let m = FunctionTable::from_fn(&ns, |y| v[x + n * y] * v[x2 + n * y].conj());
                spectral::u2_fourth_power(&m)
            });
            NormValue::from_raw(par::mean_f64(&per), 8)
        }
        Star::Two => {
            g.space().check_work("star_norm", (n as u128).pow(3))?;
            NormValue::from_raw(box_raw(&shear(g)?, n), 4)
        }
        Star::Three => {
            let ar = ns.arith();
            let per = par::map_indexed(n, |z| {
                let terms: Vec<Complex64> =
                    (0..n).map(|x| v[x + n * ar.sub(z, ar.add(x, x))]).collect();
                par::mean_c64(&terms).norm_sqr()
            });
            NormValue::from_raw(par::mean_f64(&per), 2)
        }
    }
}

/// Differencing directions `h -> (a h, b h)` on F_p^n x F_p^n.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DirectionSet {
    patterns: Vec<(u64, u64)>,
}

/// At most this many directions are accepted.
pub const MAX_DIRECTIONS: usize = 3;

impl DirectionSet {
    pub fn new(patterns: Vec<(u64, u64)>, p: u64) -> Result<Self> {
        if patterns.len() > MAX_DIRECTIONS {
            return Err(Error::ResourceLimit {
                what: "directions",
                needed: patterns.len() as u128,
                cap: MAX_DIRECTIONS as u128,
            });
        }
        let patterns: Vec<(u64, u64)> = patterns.into_iter().map(|(a, b)| (a % p, b % p)).collect();
        if patterns.iter().any(|&(a, b)| a == 0 && b == 0) {
            return Err(Error::InvalidArgument("zero direction pattern".into()));
        }
        Ok(Self { patterns })
    }

    pub fn patterns(&self) -> &[(u64, u64)] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// `(0, h)`.
    pub fn vertical(p: u64) -> Self {
        Self::new(vec![(0, 1)], p).unwrap()
    }

    /// `(h, 0)`.
    pub fn horizontal(p: u64) -> Self {
        Self::new(vec![(1, 0)], p).unwrap()
    }

    /// `(-h, h)`.
    pub fn antidiagonal(p: u64) -> Self {
        Self::new(vec![(p - 1, 1)], p).unwrap()
    }
}

/// Shifts `(x, y)` by the direction `(a h, b h)`.
#[inline]
pub(crate) fn shift_pair(ar: &IndexArith, n: usize, i: usize, a: u64, b: u64, h: usize) -> usize {
    let (x, y) = (i % n, i / n);
    ar.add(x, ar.scale(a, h)) + n * ar.add(y, ar.scale(b, h))
}

/// Complex value of `E_{x,y,h_1..h_k} Delta_{v_1 h_1, .., v_k h_k} g(x,y)`.
pub fn directional_average_complex(g: &FunctionTable, dirs: &DirectionSet) -> Result<Complex64> {
    let ns = factor_space(g.space())?;
    let n = ns.size();
    g.space().check_work(
        "directional_average",
        (g.len() as u128) * (n as u128).pow(dirs.len() as u32),
    )?;
    let ar = ns.arith();
    fn rec(g: &FunctionTable, pats: &[(u64, u64)], ar: &IndexArith, n: usize) -> Complex64 {
        match pats.split_first() {
            None => g.mean(),
            Some((&(a, b), rest)) => {
                let per = par::map_indexed_coarse(n, |h| {
                    let v = g.values();
                    let d = FunctionTable::from_fn(g.space(), |i| {
                        v[i] * v[shift_pair(ar, n, i, a, b, h)].conj()
                    });
                    rec(&d, rest, ar, n)
                });
                par::mean_c64(&per)
            }
        }
    }
    Ok(rec(g, dirs.patterns(), &ar, n))
}

/// Real part of the directional average. For real-valued g the imaginary
/// part must vanish; a residue above 1e-9 is reported as an error.
pub fn directional_average(g: &FunctionTable, dirs: &DirectionSet) -> Result<f64> {
    let c = directional_average_complex(g, dirs)?;
    if g.kind() != crate::table::Kind::Complex && c.im.abs() >= 1e-9 {
        return Err(Error::Invariant(format!(
            "directional average of a real table has imaginary part {}",
            c.im
        )));
    }
    Ok(c.re)
}

/// `E_{x, h} prod_w C^{|w|} f_w(x + w . h)` over `w in {0,1}^s`, where C is
/// complex conjugation. `family[w]` is indexed by the bitmask of w.
pub fn cube_average(family: &[FunctionTable], s: u32) -> Result<Complex64> {
    let count = 1usize << s;
    if family.len() != count {
        return Err(Error::InvalidArgument(format!(
            "need {count} functions for s = {s}, got {}",
            family.len()
        )));
    }
    for f in &family[1..] {
        family[0].same_shape(f)?;
    }
    let sp = family[0].space();
    let size = sp.size();
    let work = (size as u128)
        .saturating_pow(s + 1)
        .saturating_mul(count as u128);
    sp.check_work("cube_average", work)?;
    let ar = sp.arith();
    let tuples = size.pow(s);
    let per_x = par::map_indexed_coarse(size, |x| {
        let mut hs = vec![0usize; s as usize];
        let mut terms = Vec::with_capacity(tuples);
        for mut t in 0..tuples {
            for h in hs.iter_mut() {
                *h = t % size;
                t /= size;
            }
            let mut prod = Complex64::new(1.0, 0.0);
            for (w, f) in family.iter().enumerate() {
                let mut pt = x;
                for (j, &h) in hs.iter().enumerate() {
                    if w >> j & 1 == 1 {
                        pt = ar.add(pt, h);
                    }
                }
                let val = f.get(pt);
                prod *= if w.count_ones() % 2 == 1 {
                    val.conj()
                } else {
                    val
                };
            }
            terms.push(prod);
        }
        par::mean_c64(&terms)
    });
    Ok(par::mean_c64(&per_x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GcsReport {
    pub lhs: f64,
    pub rhs: f64,
    pub norms: Vec<f64>,
    pub holds: bool,
}

/// Both sides of `|E prod_w C^{|w|} f_w(x + w.h)| <= prod_w ||f_w||_{U^s}`.
pub fn gcs_check(family: &[FunctionTable], s: u32) -> Result<GcsReport> {
    let lhs = cube_average(family, s)?.norm();
    let norms = family
        .iter()
        .map(|f| gowers_u(f, s, None).map(|v| v.value))
        .collect::<Result<Vec<_>>>()?;
    let rhs = norms.iter().product::<f64>();
    Ok(GcsReport {
        lhs,
        rhs,
        norms,
        holds: lhs <= rhs + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::PrimeField;
    use crate::oracle;
    use crate::table::IndicatorSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(p: u64, m: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), m).unwrap()
    }

    fn random_bounded(space: &Space, seed: u64) -> FunctionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..space.size())
            .map(|_| Complex64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..6.3)))
            .collect();
        FunctionTable::new(space, v).unwrap()
    }

    #[test]
    fn delta_examples() {
        let s = sp(3, 2);
        let f = random_bounded(&s, 1);
        let d0 = delta(&f, &s.zero()).unwrap();
        for i in 0..9 {
            assert!((d0.get(i) - Complex64::new(f.get(i).norm_sqr(), 0.0)).norm() < 1e-15);
        }
        let xi = GroupVector::from_digits(vec![1, 2]);
        let h = GroupVector::from_digits(vec![2, 2]);
        let ch = FunctionTable::character(&s, &xi).unwrap();
        let dh = delta(&ch, &h).unwrap();
        let want = crate::table::roots_of_unity(3)[(3 - s.dot(&xi, &h).unwrap() as usize) % 3];
        assert!(dh.values().iter().all(|v| (v - want).norm() < 1e-12));
        let h2 = GroupVector::from_digits(vec![1, 0]);
        let a = delta(&delta(&f, &h).unwrap(), &h2).unwrap();
        let b = delta(&delta(&f, &h2).unwrap(), &h).unwrap();
        // same four factors, multiplied in a different order
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn gowers_examples() {
        let s = sp(3, 2);
        for k in 1..=4 {
            assert!(
                (gowers_u(&FunctionTable::ones(&s), k, None).unwrap().value - 1.0).abs() < 1e-12
            );
        }
        let ch = FunctionTable::character(&s, &GroupVector::from_digits(vec![2, 1])).unwrap();
        assert!((gowers_u(&ch, 2, None).unwrap().value - 1.0).abs() < 1e-12);
        let f = random_bounded(&s, 7);
        let fast = gowers_u(&f, 3, None).unwrap();
        let slow = oracle::gowers_u_definition(&f, 3).unwrap();
        assert!((fast.raw_average - slow.raw_average).abs() < 1e-9);
    }

    #[test]
    fn gowers_resource_guard() {
        let s = Space::with_limits(
            PrimeField::new(3).unwrap(),
            3,
            crate::group::Limits {
                max_entries: 1 << 20,
                max_work: 1000,
            },
        )
        .unwrap();
        assert!(matches!(
            gowers_u(&FunctionTable::ones(&s), 4, None),
            Err(Error::ResourceLimit { .. })
        ));
    }

    #[test]
    fn gowers_on_coset_uses_restriction() {
        let s = sp(3, 3);
        let f = random_bounded(&s, 2);
        let c = AffineSubspace::from_normals(&s, &[GroupVector::from_digits(vec![1, 1, 0])], &[1])
            .unwrap();
        let a = gowers_u(&f, 2, Some(&c)).unwrap();
        let b = gowers_u(&f.restrict(&c).unwrap(), 2, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn box_examples() {
        let s = sp(3, 2);
        let c = Complex64::new(0.3, -0.4);
        assert!((box_norm(&FunctionTable::constant(&s, c)).unwrap().value - 0.5).abs() < 1e-12);

        let n = sp(3, 1);
        let a = IndicatorSet::from_indices(&n, &[0, 2]).unwrap();
        let b = IndicatorSet::from_indices(&n, &[1]).unwrap();
        let ab = IndicatorSet::from_pred(&s, |i| a.contains(i % 3) && b.contains(i / 3));
        let want = (a.density() * b.density()).sqrt();
        assert!((box_norm(ab.table()).unwrap().value - want).abs() < 1e-12);
        assert!((oracle::box_norm_definition(ab.table()).unwrap().value - want).abs() < 1e-12);

        let g = random_bounded(&s, 3);
        let fast = box_norm(&g).unwrap().raw_average;
        let slow = oracle::box_norm_definition(&g).unwrap().raw_average;
        assert!((fast - slow).abs() < 1e-10);
    }

    #[test]
    fn star_examples() {
        let s = sp(3, 2);
        let c = Complex64::new(0.6, 0.0);
        for w in [Star::One, Star::Two, Star::Three] {
            assert!(
                (star_norm(&FunctionTable::constant(&s, c), w).unwrap().value - 0.6).abs() < 1e-12
            );
        }
        let n = sp(3, 1);
        let ey = FunctionTable::character(&n, &GroupVector::from_digits(vec![1]))
            .unwrap()
            .product_lift(crate::table::Slot::Y)
            .unwrap();
        assert!(star_norm(&ey, Star::Three).unwrap().value < 1e-6);
        let g = random_bounded(&s, 11);
        for w in [Star::One, Star::Two, Star::Three] {
            let fast = star_norm(&g, w).unwrap().raw_average;
            let slow = oracle::star_norm_definition(&g, w).unwrap().raw_average;
            assert!((fast - slow).abs() < 1e-9, "{w:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn star_two_is_box_of_shear_exhaustive() {
        let s = sp(3, 2);
        for mask in 0u32..512 {
            let set = IndicatorSet::from_pred(&s, |i| mask >> i & 1 == 1);
            let a = star_norm(set.table(), Star::Two).unwrap();
            let b = box_norm(&shear(set.table()).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn directional_examples() {
        let s = sp(3, 2);
        let full = IndicatorSet::full(&s).balanced();
        assert_eq!(
            directional_average(&full, &DirectionSet::vertical(3)).unwrap(),
            0.0
        );
        let n = sp(3, 1);
        let a = FunctionTable::from_real(&n, vec![0.5, -0.2, 0.9]).unwrap();
        let g = a.product_lift(crate::table::Slot::X).unwrap();
        let want = (0.25 + 0.04 + 0.81) / 3.0;
        assert!(
            (directional_average(&g, &DirectionSet::vertical(3)).unwrap() - want).abs() < 1e-12
        );
        let g = random_bounded(&s, 5);
        let dirs = DirectionSet::new(vec![(0, 1), (1, 0)], 3).unwrap();
        let fast = directional_average_complex(&g, &dirs).unwrap();
        let slow = oracle::directional_average_definition(&g, &dirs).unwrap();
        assert!((fast - slow).norm() < 1e-10);
        assert!(DirectionSet::new(vec![(0, 1); 4], 3).is_err());
        assert!(DirectionSet::new(vec![(3, 0)], 3).is_err());
    }

    #[test]
    fn gcs_examples() {
        let s = sp(3, 2);
        let f = random_bounded(&s, 6);
        let fam = vec![f.clone(); 4];
        let r = gcs_check(&fam, 2).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-10);
        let mut fam = fam;
        fam[2] = FunctionTable::zeros(&s);
        let r = gcs_check(&fam, 2).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn norms_are_monotone(seed in any::<u64>()) {
            let s = sp(3, 2);
            let f = random_bounded(&s, seed);
            let vals: Vec<f64> = (1..=4).map(|k| gowers_u(&f, k, None).unwrap().value).collect();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-12);
            }
        }

        #[test]
        fn u2_is_fourier_fourth_moment(seed in any::<u64>(), m in 1usize..=3) {
            let s = sp(3, m);
            let f = random_bounded(&s, seed);
            let via_def = oracle::gowers_u_definition(&f, 2).unwrap().raw_average;
            let via_fourier = gowers_u(&f, 2, None).unwrap().raw_average;
            prop_assert!((via_def - via_fourier).abs() < 1e-9);
        }

        #[test]
        fn star_triangle_inequality(a in any::<u64>(), b in any::<u64>()) {
            let s = sp(3, 2);
            let f = random_bounded(&s, a);
            let g = random_bounded(&s, b);
            let sum = f.add(&g).unwrap();
            for w in [Star::One, Star::Two, Star::Three] {
                let lhs = star_norm(&sum, w).unwrap().value;
                let rhs = star_norm(&f, w).unwrap().value + star_norm(&g, w).unwrap().value;
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }

        #[test]
        fn gcs_holds_on_random_families(seed in any::<u64>(), m in 1usize..=2) {
            let s = sp(3, m);
            let fam: Vec<FunctionTable> = (0..4).map(|k| random_bounded(&s, seed ^ (k * 7919))).collect();
            prop_assert!(gcs_check(&fam, 2).unwrap().holds);
        }
    }
}
