//! Counting L-shapes and corners, the telescoping bound, and the example
//! sets whose L-counts are far from random.
//!
//! An L-shape is `(x,y), (x,y+z), (x,y+2z), (x+z,y)`; a corner drops the
//! third point. Both are nontrivial when `z != 0`. Averages run over
//! `(x, y, z) in (F_p^n)^3`, so counts are averages times `p^{3n}`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::group::{PrimeField, Space};
use crate::linear_systems::{system_average, LinearFormSystem, SystemAverage};
use crate::norms::factor_space;
use crate::par;
use crate::table::{FunctionTable, IndicatorSet, Kind};

/// Serializes an exact count as a decimal string.
pub fn as_string<S: Serializer>(v: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(c) => s.serialize_str(&c.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaResult {
    /// Real part of the normalized average.
    pub average: f64,
    pub imag: f64,
    #[serde(serialize_with = "as_string")]
    pub exact_count: Option<u64>,
    #[serde(serialize_with = "as_string")]
    pub nontrivial_count: Option<u64>,
}

impl LambdaResult {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.average, self.imag)
    }

    pub fn abs(&self) -> f64 {
        self.value().norm()
    }
}

/// Offsets of the pattern's points relative to `(x, y)`, as
/// `(dx coefficient of z, dy coefficient of z)`.
const L_SHAPE: [(u64, u64); 4] = [(0, 0), (0, 1), (0, 2), (1, 0)];
const CORNER: [(u64, u64); 3] = [(0, 0), (0, 1), (1, 0)];

fn pattern_average(tables: &[&FunctionTable], pattern: &[(u64, u64)]) -> Result<LambdaResult> {
    for t in &tables[1..] {
        tables[0].same_shape(t)?;
    }
    let big = tables[0].space();
    let ns = factor_space(big)?;
    let n = ns.size();
    big.check_work("pattern count", (n as u128).pow(3) * pattern.len() as u128)?;
    let ar = ns.arith();
    let indicator = tables.iter().all(|t| t.kind() == Kind::Indicator);
    let total = (n as f64).powi(3);
    if indicator {
        let masks: Vec<Vec<bool>> = tables
            .iter()
            .map(|t| t.values().iter().map(|v| v.re == 1.0).collect())
            .collect();
        let row_nonempty: Vec<Vec<bool>> = masks
            .iter()
            .map(|m| (0..n).map(|x| (0..n).any(|y| m[x + n * y])).collect())
            .collect();
        let per_x = par::map_indexed_coarse(n, |x| {
            let (mut all, mut z0) = (0u64, 0u64);
            for z in 0..n {
                let cols: Vec<usize> = pattern
                    .iter()
                    .map(|&(a, _)| ar.add(x, ar.scale(a, z)))
                    .collect();
                if cols.iter().zip(&row_nonempty).any(|(&c, ne)| !ne[c]) {
                    continue;
                }
                let shifts: Vec<usize> = pattern.iter().map(|&(_, b)| ar.scale(b, z)).collect();
                for y in 0..n {
                    let hit =
                        (0..pattern.len()).all(|k| masks[k][cols[k] + n * ar.add(y, shifts[k])]);
                    if hit {
                        all += 1;
                        if z == 0 {
                            z0 += 1;
                        }
                    }
                }
            }
            (all, z0)
        });
        let count: u64 = per_x.iter().map(|c| c.0).sum();
        let trivial: u64 = per_x.iter().map(|c| c.1).sum();
        Ok(LambdaResult {
            average: count as f64 / total,
            imag: 0.0,
            exact_count: Some(count),
            nontrivial_count: Some(count - trivial),
        })
    } else {
        let per_x = par::map_indexed_coarse(n, |x| {
            let mut terms = Vec::with_capacity(n * n);
            for z in 0..n {
                let cols: Vec<usize> = pattern
                    .iter()
                    .map(|&(a, _)| ar.add(x, ar.scale(a, z)))
                    .collect();
                let shifts: Vec<usize> = pattern.iter().map(|&(_, b)| ar.scale(b, z)).collect();
                for y in 0..n {
                    let mut prod = Complex64::new(1.0, 0.0);
                    for k in 0..pattern.len() {
                        prod *= tables[k].get(cols[k] + n * ar.add(y, shifts[k]));
                    }
                    terms.push(prod);
                }
            }
            par::sum_c64(&terms)
        });
        let avg = par::sum_c64(&per_x) / total;
        Ok(LambdaResult {
            average: avg.re,
            imag: avg.im,
            exact_count: None,
            nontrivial_count: None,
        })
    }
}

/// `E_{x,y,z} g0(x,y) g1(x,y+z) g2(x,y+2z) g3(x+z,y)`.
pub fn lambda_l(
    g0: &FunctionTable,
    g1: &FunctionTable,
    g2: &FunctionTable,
    g3: &FunctionTable,
) -> Result<LambdaResult> {
    pattern_average(&[g0, g1, g2, g3], &L_SHAPE)
}

/// `E_{x,y,z} g0(x,y) g1(x,y+z) g2(x+z,y)`.
pub fn lambda_corner(
    g0: &FunctionTable,
    g1: &FunctionTable,
    g2: &FunctionTable,
) -> Result<LambdaResult> {
    pattern_average(&[g0, g1, g2], &CORNER)
}

/// L-shapes in a set.
pub fn count_l(s: &IndicatorSet) -> Result<LambdaResult> {
    let t = s.table();
    lambda_l(t, t, t, t)
}

pub fn count_corners(s: &IndicatorSet) -> Result<LambdaResult> {
    let t = s.table();
    lambda_corner(t, t, t)
}

/// Whether `s` has no L-shape with `z != 0`.
pub fn is_l_free(s: &IndicatorSet) -> Result<bool> {
    Ok(count_l(s)?.nontrivial_count == Some(0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelescopeReport {
    pub sigma: f64,
    /// `|Lambda(S,S,S,S) - sigma^4|`.
    pub lhs: f64,
    /// `|Lambda(1,1,g,S)|, |Lambda(1,g,S,S)|, |Lambda(g,S,S,S)|`.
    pub terms: [f64; 3],
    /// `sigma^2 t0 + sigma t1 + t2`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn telescope_check(s: &IndicatorSet) -> Result<TelescopeReport> {
    let sigma = s.density();
    let st = s.table();
    let g = s.balanced();
    let one = FunctionTable::ones(s.space());
    let lhs = (lambda_l(st, st, st, st)?.average - sigma.powi(4)).abs();
    let terms = [
        lambda_l(&one, &one, &g, st)?.abs(),
        lambda_l(&one, &g, st, st)?.abs(),
        lambda_l(&g, st, st, st)?.abs(),
    ];
    let rhs = sigma * sigma * terms[0] + sigma * terms[1] + terms[2];
    Ok(TelescopeReport {
        sigma,
        lhs,
        terms,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstructionKind {
    /// `{(x,y) : x . y = 0}`.
    Dot,
    /// `{(x,y) : phi(x) . y = 0}` with phi uniformly random.
    RandomPhi,
    /// `{(x,y) : y_0 = u(x)}` with u uniformly random.
    Coordinate,
}

impl std::str::FromStr for ObstructionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "random_phi" | "random-phi" => Ok(Self::RandomPhi),
            "coordinate" => Ok(Self::Coordinate),
            other => Err(Error::InvalidArgument(format!(
                "unknown obstruction kind {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Obstruction {
    pub kind: ObstructionKind,
    pub set: IndicatorSet,
    /// Closed-form density (dot) or the heuristic `1/p` (random kinds).
    pub predicted_density: f64,
    /// Closed-form L-count for the dot kind.
    pub predicted_count: Option<u64>,
    /// Heuristic L-count `N^3 / p^3` for the random kinds.
    pub heuristic_count: Option<f64>,
}

/// `{(x,y) : phi(x) . y = 0}` for an explicit map given per x index.
pub fn phi_dot_set(ns: &Space, phi: &[usize]) -> Result<IndicatorSet> {
    let n = ns.size();
    if phi.len() != n {
        return Err(Error::TableMismatch(format!(
            "phi has {} entries, need {n}",
            phi.len()
        )));
    }
    let ar = ns.arith();
    Ok(IndicatorSet::from_pred(&ns.squared()?, |i| {
        ar.dot(phi[i % n], i / n) == 0
    }))
}

/// `{(x,y) : y_0 = u(x)}`.
pub fn coordinate_set(ns: &Space, u: &[u64]) -> Result<IndicatorSet> {
    let n = ns.size();
    if u.len() != n || ns.dim() == 0 {
        return Err(Error::TableMismatch("u must have one residue per x".into()));
    }
    let p = ns.p() as usize;
    Ok(IndicatorSet::from_pred(&ns.squared()?, |i| {
        ((i / n) % p) as u64 == u[i % n]
    }))
}

/// `((N-1) N/p + N) / N^2`.
pub fn dot_density(p: u64, n: usize) -> f64 {
    let big_n = (p as f64).powi(n as i32);
    ((big_n - 1.0) * big_n / p as f64 + big_n) / (big_n * big_n)
}

/// `[(N-1)-(p-1)](N/p-1)N/p^2 + (N/p-1)(p-1)N/p + N + 2(N-1)N/p`, exact for
/// n >= 2.
pub fn dot_count_formula(p: u64, n: usize) -> u64 {
    let p = p as u128;
    let big_n = p.pow(n as u32);
    let v = ((big_n - 1) - (p - 1)) * (big_n / p - 1) * big_n / (p * p)
        + (big_n / p - 1) * (p - 1) * big_n / p
        + big_n
        + 2 * (big_n - 1) * big_n / p;
    v as u64
}

pub fn obstruction_example(
    kind: ObstructionKind,
    p: u64,
    n: usize,
    seed: u64,
) -> Result<Obstruction> {
    let ns = Space::new(PrimeField::new(p)?, n)?;
    let big_n = ns.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heuristic = Some((big_n as f64).powi(3) / (p as f64).powi(3));
    match kind {
        ObstructionKind::Dot => {
            if n < 3 {
                return Err(Error::Precondition("the dot example needs n >= 3".into()));
            }
            let phi: Vec<usize> = (0..big_n).collect();
            Ok(Obstruction {
                kind,
                set: phi_dot_set(&ns, &phi)?,
                predicted_density: dot_density(p, n),
                predicted_count: Some(dot_count_formula(p, n)),
                heuristic_count: None,
            })
        }
        ObstructionKind::RandomPhi => {
            let phi: Vec<usize> = (0..big_n).map(|_| rng.gen_range(0..big_n)).collect();
            Ok(Obstruction {
                kind,
                set: phi_dot_set(&ns, &phi)?,
                predicted_density: 1.0 / p as f64,
                predicted_count: None,
                heuristic_count: heuristic,
            })
        }
        ObstructionKind::Coordinate => {
            let u: Vec<u64> = (0..big_n).map(|_| rng.gen_range(0..p)).collect();
            Ok(Obstruction {
                kind,
                set: coordinate_set(&ns, &u)?,
                predicted_density: 1.0 / p as f64,
                predicted_count: None,
                heuristic_count: heuristic,
            })
        }
    }
}

/// Tuples of a linear system landing in the given sets (or the weighted
/// average for general tables).
pub fn count_system(tables: &[&FunctionTable], sys: &LinearFormSystem) -> Result<SystemAverage> {
    system_average(tables, sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::LinearMap;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn ns(p: u64, n: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), n).unwrap()
    }

    /// Direct count over all (x, y, z).
    fn brute_l(s: &IndicatorSet, n: usize) -> (u64, u64) {
        let space = ns(s.space().p(), n);
        let ar = space.arith();
        let big = space.size();
        let at = |x: usize, y: usize| s.contains(x + big * y);
        let (mut all, mut nontriv) = (0, 0);
        for x in 0..big {
            for y in 0..big {
                for z in 0..big {
                    let y1 = ar.add(y, z);
                    let y2 = ar.add(y1, z);
                    if at(x, y) && at(x, y1) && at(x, y2) && at(ar.add(x, z), y) {
                        all += 1;
                        if z != 0 {
                            nontriv += 1;
                        }
                    }
                }
            }
        }
        (all, nontriv)
    }

    #[test]
    fn lambda_examples() {
        let s = ns(3, 2);
        let big = s.squared().unwrap();
        let full = IndicatorSet::full(&big);
        let r = count_l(&full).unwrap();
        assert_eq!(r.average, 1.0);
        assert_eq!(r.exact_count, Some(729));
        let pt = IndicatorSet::from_indices(&big, &[40]).unwrap();
        let r = count_l(&pt).unwrap();
        assert_eq!((r.exact_count, r.nontrivial_count), (Some(1), Some(0)));
        let r = count_corners(&pt).unwrap();
        assert_eq!((r.exact_count, r.nontrivial_count), (Some(1), Some(0)));
        assert_eq!(count_corners(&full).unwrap().average, 1.0);
    }

    #[test]
    fn dot_obstruction_matches_brute_force() {
        let ob = obstruction_example(ObstructionKind::Dot, 3, 3, 0).unwrap();
        assert_eq!(ob.set.cardinality(), 261);
        assert_eq!(ob.predicted_density, 261.0 / 729.0);
        let r = count_l(&ob.set).unwrap();
        let (all, nontriv) = brute_l(&ob.set, 3);
        assert_eq!(r.exact_count, Some(all));
        assert_eq!(r.nontrivial_count, Some(nontriv));
        assert_eq!(ob.predicted_count, Some(1215));
        assert_eq!(all, 1215);
        assert!(obstruction_example(ObstructionKind::Dot, 3, 2, 0).is_err());
    }

    #[test]
    fn coordinate_with_zero_u() {
        let s = ns(3, 2);
        let set = coordinate_set(&s, &[0; 9]).unwrap();
        assert_eq!(set.density(), 1.0 / 3.0);
        for i in set.members() {
            assert_eq!((i / 9) % 3, 0);
        }
    }

    #[test]
    fn corners_as_system() {
        let fl = PrimeField::new(3).unwrap();
        let big = ns(3, 1).squared().unwrap();
        let s = IndicatorSet::from_indices(&big, &[0, 1, 3, 4, 5, 8]).unwrap();
        let t = s.table();
        let via_sys = count_system(&[t, t, t], &LinearFormSystem::corners(&fl)).unwrap();
        assert_eq!(via_sys.exact_count, count_corners(&s).unwrap().exact_count);
        let via_sys = count_system(&[t, t, t, t], &LinearFormSystem::l_shapes(&fl)).unwrap();
        assert_eq!(via_sys.exact_count, count_l(&s).unwrap().exact_count);
    }

    #[test]
    fn l_free_sets_count_only_trivial() {
        let big = ns(3, 1).squared().unwrap();
        // y != x has no nontrivial L-shapes
        let s = IndicatorSet::from_pred(&big, |i| i % 3 != i / 3);
        let r = count_l(&s).unwrap();
        assert_eq!(r.nontrivial_count, Some(0));
        assert_eq!(r.exact_count, Some(s.cardinality()));
    }

    #[test]
    fn invariance_under_diagonal_affine_maps() {
        let s1 = ns(3, 1);
        let big = s1.squared().unwrap();
        let fl = *s1.field();
        for mask in (0u32..512).step_by(7) {
            let s = IndicatorSet::from_pred(&big, |i| mask >> i & 1 == 1);
            let base = count_l(&s).unwrap().exact_count;
            for t in [1u64, 2] {
                let m = LinearMap::new(fl, vec![vec![t]], 1).unwrap();
                for (a, b) in [(0u64, 0u64), (1, 2), (2, 0)] {
                    let img: Vec<usize> = s
                        .members()
                        .into_iter()
                        .map(|i| {
                            let (x, y) = ((i % 3) as u64, (i / 3) as u64);
                            let tx = m
                                .apply(&crate::group::GroupVector::from_digits(vec![x]))
                                .unwrap()
                                .digits()[0];
                            let ty = m
                                .apply(&crate::group::GroupVector::from_digits(vec![y]))
                                .unwrap()
                                .digits()[0];
                            (((tx + a) % 3) + 3 * ((ty + b) % 3)) as usize
                        })
                        .collect();
                    let moved = IndicatorSet::from_indices(&big, &img).unwrap();
                    assert_eq!(count_l(&moved).unwrap().exact_count, base);
                }
            }
        }
    }

    #[test]
    fn telescope_edge_cases() {
        let big = ns(3, 1).squared().unwrap();
        for s in [IndicatorSet::full(&big), IndicatorSet::empty(&big)] {
            let r = telescope_check(&s).unwrap();
            assert!(r.lhs.abs() < 1e-15 && r.rhs.abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(mask in 0u32..(1 << 9)) {
            let big = ns(3, 1).squared().unwrap();
            let s = IndicatorSet::from_pred(&big, |i| mask >> i & 1 == 1);
            let r = count_l(&s).unwrap();
            let (all, nontriv) = brute_l(&s, 1);
            prop_assert_eq!(r.exact_count, Some(all));
            prop_assert_eq!(r.nontrivial_count, Some(nontriv));
            prop_assert!((r.average * 27.0 - all as f64).abs() < 1e-6);
            prop_assert!(telescope_check(&s).unwrap().holds);
        }

        #[test]
        fn complex_and_indicator_paths_agree(seed in any::<u64>()) {
            let big = ns(3, 2).squared().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<bool> = (0..big.size()).map(|_| rng.gen_bool(0.5)).collect();
            let s = IndicatorSet::from_mask(&big, &mask);
            let scaled = s.table().scale(Complex64::new(1.0, 0.0)).map(|v| v * 0.5);
            let r = lambda_l(&scaled, &scaled, &scaled, &scaled).unwrap();
            let c = count_l(&s).unwrap().exact_count.unwrap();
            prop_assert!((r.average * 16.0 * 729.0 - c as f64).abs() < 1e-6);
        }
    }
}
