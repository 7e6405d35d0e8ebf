//! Randomized property suites. Each assertion aggregates its trials into a
//! violation count and the worst observed margin.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::configurations::{count_corners, count_l, lambda_l, telescope_check};
use crate::error::{Error, Result};
use crate::group::{AffineSubspace, GroupVector, Limits, PrimeField, Space};
use crate::increment::{
    align_translate, deg1_increment, energy_monotone_check, planted_instance, pseudorandomize_u2,
    refine_on_character, star3_fiber_split, Planted, ProductCosetPartition, Witness,
};
use crate::linear_systems::{
    cs_complexity, gvn_check, usuniformity_check, Complexity, LinearFormSystem,
};
use crate::norms::{box_norm, gcs_check, gowers_u, star_norm, Star};
use crate::oracle::gowers_u_definition;
use crate::spectral::{dft, inverse_u2, subspace_average_bound_check};
use crate::structured::{
    build_phi, build_t, phi_uniformity_transfer_check, random_nonzero_map, PhiSpec, TDescriptor,
};
use crate::table::{FunctionTable, IndicatorSet};

pub const SUITES: [&str; 13] = [
    "spectral",
    "control",
    "trivial",
    "gcs",
    "gvn",
    "uniformity",
    "subspace",
    "transfer",
    "telescope",
    "recursion",
    "inverse",
    "energy",
    "increments",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub anchor: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` (inequalities) or error (identities) observed.
    pub worst: f64,
    pub passed: bool,
}

pub(crate) struct Tally {
    anchor: &'static str,
    trials: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    pub(crate) fn new(anchor: &'static str) -> Self {
        Self {
            anchor,
            trials: 0,
            violations: 0,
            worst: f64::NEG_INFINITY,
        }
    }

    /// `lhs <= rhs + slack`.
    pub(crate) fn le(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.trials += 1;
        let m = lhs - rhs;
        if m.is_nan() || m > slack {
            self.violations += 1;
        }
        if m.is_nan() || m > self.worst {
            self.worst = m;
        }
    }

    pub(crate) fn check(&mut self, ok: bool) {
        self.le(if ok { 0.0 } else { 1.0 }, 0.0, 0.0);
    }

    pub(crate) fn finish(self) -> Assertion {
        Assertion {
            anchor: self.anchor.into(),
            trials: self.trials,
            violations: self.violations,
            worst: if self.trials == 0 { 0.0 } else { self.worst },
            passed: self.violations == 0 && self.trials > 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteParams {
    pub p: u64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub limits: Limits,
}

impl SuiteParams {
    pub fn new(p: u64, n: usize, trials: usize, seed: u64) -> Self {
        Self {
            p,
            n,
            trials,
            seed,
            tol: 1e-9,
            limits: Limits::default(),
        }
    }

    fn space(&self, m: usize) -> Result<Space> {
        Space::with_limits(PrimeField::new(self.p)?, m, self.limits)
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Values with uniform modulus in [0, 1] and uniform phase.
pub fn random_bounded(space: &Space, rng: &mut impl Rng) -> FunctionTable {
    let vals = (0..space.size())
        .map(|_| Complex64::from_polar(rng.gen::<f64>(), rng.gen::<f64>() * TAU))
        .collect();
    FunctionTable::new(space, vals).expect("sized to the space")
}

pub fn random_set(space: &Space, density: f64, rng: &mut impl Rng) -> IndicatorSet {
    let mask: Vec<bool> = (0..space.size()).map(|_| rng.gen_bool(density)).collect();
    IndicatorSet::from_mask(space, &mask)
}

fn random_vector(space: &Space, rng: &mut impl Rng) -> GroupVector {
    GroupVector::from_digits(
        (0..space.dim())
            .map(|_| rng.gen_range(0..space.p()))
            .collect(),
    )
}

fn random_t(ns: &Space, d: usize, rng: &mut impl Rng) -> Result<TDescriptor> {
    let mut dense = || random_set(ns, rng.gen_range(0.6..0.95), rng);
    let (a, b, c, dd) = (dense(), dense(), dense(), dense());
    let spec = match d {
        0 => PhiSpec::Full,
        _ => PhiSpec::Map(random_nonzero_map(ns, rng.gen())),
    };
    let phi = build_phi(&a, &spec, &ns.zero(), d.min(1))?;
    build_t(&b, &c, &dd, &phi)
}

pub fn run_suite(name: &str, prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let out = match name {
        "spectral" => spectral(prm)?,
        "control" => control(prm)?,
        "trivial" => trivial(prm)?,
        "gcs" => gcs(prm)?,
        "gvn" => systems(prm, false)?,
        "uniformity" => systems(prm, true)?,
        "subspace" => subspace(prm)?,
        "transfer" => transfer(prm)?,
        "telescope" => telescope(prm)?,
        "recursion" => recursion(prm)?,
        "inverse" => inverse(prm)?,
        "energy" => energy(prm)?,
        "increments" => increments(prm)?,
        "all" => {
            let mut all = Vec::new();
            for s in SUITES {
                all.extend(run_suite(s, prm)?);
            }
            all
        }
        other => return Err(Error::InvalidArgument(format!("unknown suite {other:?}"))),
    };
    Ok(out)
}

fn spectral(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let sp = prm.space(prm.n)?;
    let mut rng = prm.rng(1);
    let mut parseval = Tally::new("parseval");
    let mut inversion = Tally::new("fourier-inversion");
    let mut fourth = Tally::new("u2-fourth-moment");
    for _ in 0..prm.trials {
        let f = random_bounded(&sp, &mut rng);
        let spec = dft(&f);
        let l2 = f.mean_sq();
        parseval.le((spec.energy() - l2).abs(), 0.0, prm.tol * l2.max(1.0));
        let back = spec.inverse();
        let err = back
            .values()
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        inversion.le(err, 0.0, prm.tol * f.max_modulus().max(1.0));
        let def = gowers_u_definition(&f, 2)?.raw_average;
        fourth.le(
            (spec.fourth_moment() - def).abs(),
            0.0,
            prm.tol * def.abs().max(1.0),
        );
    }
    Ok(vec![parseval.finish(), inversion.finish(), fourth.finish()])
}

fn control(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let big = prm.space(prm.n)?.squared()?;
    let one = FunctionTable::ones(&big);
    let mut rng = prm.rng(2);
    let mut t = [
        Tally::new("control-star1"),
        Tally::new("control-star2"),
        Tally::new("control-star3"),
    ];
    for _ in 0..prm.trials {
        let f: Vec<FunctionTable> = (0..4).map(|_| random_bounded(&big, &mut rng)).collect();
        t[0].le(
            lambda_l(&f[0], &f[1], &f[2], &f[3])?.abs(),
            star_norm(&f[0], Star::One)?.value,
            prm.tol,
        );
        t[1].le(
            lambda_l(&one, &f[1], &f[2], &f[3])?.abs(),
            star_norm(&f[1], Star::Two)?.value,
            prm.tol,
        );
        t[2].le(
            lambda_l(&one, &one, &f[2], &f[3])?.abs(),
            star_norm(&f[2], Star::Three)?.value,
            prm.tol,
        );
    }
    Ok(t.into_iter().map(Tally::finish).collect())
}

fn trivial(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let sp = prm.space(prm.n)?;
    let big = sp.squared()?;
    let mut rng = prm.rng(3);
    let mut constants = Tally::new("constant-norms");
    let mut ones = Tally::new("all-ones-average");
    let mut empty = Tally::new("empty-set-counts");
    let mut u1 = Tally::new("u1-is-density");
    for _ in 0..prm.trials.clamp(1, 20) {
        let c = Complex64::from_polar(rng.gen::<f64>(), rng.gen::<f64>() * TAU);
        let f = FunctionTable::constant(&big, c);
        for s in 1..=3 {
            constants.le(
                (gowers_u(&f, s, None)?.value - c.norm()).abs(),
                0.0,
                prm.tol,
            );
        }
        for k in 1..=3 {
            constants.le(
                (star_norm(&f, Star::from_index(k)?)?.value - c.norm()).abs(),
                0.0,
                prm.tol,
            );
        }
        constants.le((box_norm(&f)?.value - c.norm()).abs(), 0.0, prm.tol);
        let one = FunctionTable::ones(&big);
        ones.le(
            (lambda_l(&one, &one, &one, &one)?.average - 1.0).abs(),
            0.0,
            prm.tol,
        );
        let e = IndicatorSet::empty(&big);
        empty.check(
            count_l(&e)?.exact_count == Some(0) && count_corners(&e)?.exact_count == Some(0),
        );
        let s = random_set(&sp, rng.gen(), &mut rng);
        u1.le(
            (gowers_u(s.table(), 1, None)?.value - s.density()).abs(),
            0.0,
            prm.tol,
        );
    }
    Ok(vec![
        constants.finish(),
        ones.finish(),
        empty.finish(),
        u1.finish(),
    ])
}

fn gcs(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let mut rng = prm.rng(4);
    let mut t = Tally::new("gowers-cauchy-schwarz");
    for k in 0..prm.trials {
        let s = 1 + (k % 3) as u32;
        let sp = prm.space(1 + (k / 3) % prm.n.min(2))?;
        let fam: Vec<FunctionTable> = (0..1 << s).map(|_| random_bounded(&sp, &mut rng)).collect();
        let r = gcs_check(&fam, s)?;
        t.le(r.lhs, r.rhs, prm.tol);
    }
    Ok(vec![t.finish()])
}

fn random_system(
    field: &PrimeField,
    rng: &mut impl Rng,
) -> Result<Option<(LinearFormSystem, usize)>> {
    let r = rng.gen_range(2..=3);
    let d = rng.gen_range(3..=4);
    let p = field.p() as i64;
    let forms: Vec<Vec<i64>> = (0..d)
        .map(|_| loop {
            let row: Vec<i64> = (0..r).map(|_| rng.gen_range(0..p)).collect();
            if row.iter().any(|&c| c != 0) {
                break row;
            }
        })
        .collect();
    let sys = LinearFormSystem::new(field, r, forms)?;
    Ok(match cs_complexity(&sys)? {
        Complexity::Finite(cert)
            if (1..=3).contains(&cert.s) && cert.distinct_forms.len() == sys.d() =>
        {
            Some((sys, cert.s))
        }
        _ => None,
    })
}

fn systems(prm: &SuiteParams, centered: bool) -> Result<Vec<Assertion>> {
    let field = PrimeField::new(prm.p)?;
    let mut rng = prm.rng(if centered { 6 } else { 5 });
    let mut t = Tally::new(if centered {
        "uniformity-counting"
    } else {
        "generalized-von-neumann"
    });
    let mut attempts = 0;
    while t.trials < prm.trials && attempts < 50 * prm.trials.max(1) {
        attempts += 1;
        let Some((sys, c)) = random_system(&field, &mut rng)? else {
            continue;
        };
        let sp = prm.space(1 + attempts % prm.n.min(2))?;
        let fs: Vec<FunctionTable> = (0..sys.d())
            .map(|_| {
                if centered {
                    random_set(&sp, rng.gen_range(0.1..0.9), &mut rng).into_table()
                } else {
                    random_bounded(&sp, &mut rng)
                }
            })
            .collect();
        let refs: Vec<&FunctionTable> = fs.iter().collect();
        if centered {
            let r = usuniformity_check(&sys, &refs, c)?;
            t.le(r.lhs, r.rhs, prm.tol);
        } else {
            let r = gvn_check(&sys, &refs, c)?;
            t.le(r.lhs, r.rhs, prm.tol);
        }
    }
    Ok(vec![t.finish()])
}

fn subspace(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let sp = prm.space(prm.n)?;
    let mut rng = prm.rng(7);
    let mut t = Tally::new("subspace-average");
    while t.trials < prm.trials {
        let f = random_bounded(&sp, &mut rng);
        let d = rng.gen_range(0..=sp.dim());
        let normals: Vec<GroupVector> = (0..d).map(|_| random_vector(&sp, &mut rng)).collect();
        let offsets: Vec<u64> = (0..d).map(|_| rng.gen_range(0..sp.p())).collect();
        let c = AffineSubspace::from_normals(&sp, &normals, &offsets)?;
        if c.is_empty() {
            continue;
        }
        let r = subspace_average_bound_check(&f, &c)?;
        t.le(r.average_abs, r.bound, prm.tol);
    }
    Ok(vec![t.finish()])
}

fn transfer(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let sp = prm.space(prm.n)?;
    let mut rng = prm.rng(8);
    let mut t = Tally::new("phi-uniformity-transfer");
    for k in 0..prm.trials {
        let a = random_set(&sp, rng.gen_range(0.2..0.9), &mut rng);
        let d = k % 2;
        let spec = if d == 0 {
            PhiSpec::Full
        } else {
            PhiSpec::Map(random_nonzero_map(&sp, rng.gen()))
        };
        let u = random_vector(&sp, &mut rng);
        let phi = build_phi(&a, &spec, &u, d)?;
        let s = 1 + (k / 2 % 3) as u32;
        let r = phi_uniformity_transfer_check(&phi, s)?;
        t.le(r.lhs, r.rhs, prm.tol);
    }
    Ok(vec![t.finish()])
}

fn telescope(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let big = prm.space(prm.n)?.squared()?;
    let mut rng = prm.rng(9);
    let mut t = Tally::new("telescoping-identity");
    for _ in 0..prm.trials {
        let s = random_set(&big, rng.gen(), &mut rng);
        let r = telescope_check(&s)?;
        t.le(r.lhs, r.rhs, prm.tol);
    }
    Ok(vec![t.finish()])
}

fn recursion(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let mut rng = prm.rng(10);
    let mut t = Tally::new("gowers-recursion-vs-definition");
    let max_s = if prm.p == 3 { 4 } else { 3 };
    let max_m = if prm.p == 3 { prm.n.min(2) } else { 1 };
    for k in 0..prm.trials {
        let s = 1 + (k % max_s) as u32;
        let sp = prm.space(1 + (k / max_s) % max_m)?;
        let f = random_bounded(&sp, &mut rng);
        let a = gowers_u(&f, s, None)?.raw_average;
        let b = gowers_u_definition(&f, s)?.raw_average;
        t.le((a - b).abs(), 0.0, prm.tol * b.abs().max(1.0));
    }
    Ok(vec![t.finish()])
}

fn inverse(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let mut rng = prm.rng(11);
    let mut t = Tally::new("inverse-u2-correlation");
    for k in 0..prm.trials {
        let sp = prm.space(1 + k % prm.n)?;
        let f = random_bounded(&sp, &mut rng);
        let r = inverse_u2(&f, 0.0)?;
        // the contract is exact; only the final rounding of the root is excused
        t.le(r.u2_norm * r.u2_norm, r.corr, 1e-12);
    }
    Ok(vec![t.finish()])
}

fn energy(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let ns = prm.space(prm.n)?;
    let mut rng = prm.rng(12);
    let mut mono = Tally::new("energy-monotone-under-refinement");
    for k in 0..prm.trials {
        let t = random_t(&ns, k % 2, &mut rng)?;
        let mut chain = vec![ProductCosetPartition::trivial(&t)?];
        for _ in 0..3 {
            let cur = chain.last().expect("nonempty");
            let idx = rng.gen_range(0..cur.len());
            let xi = random_vector(&ns, &mut rng);
            match refine_on_character(cur, idx, &xi, &t) {
                Ok(next) => chain.push(next),
                Err(Error::ZeroCharacter | Error::CharacterNotInDual) => {}
                Err(e) => return Err(e),
            }
        }
        for w in chain.windows(2) {
            mono.check(
                energy_monotone_check(&w[0], &w[1])?.holds
                    && w[1].energy() >= w[0].energy() - 1e-12,
            );
        }
        if chain.len() > 2 {
            mono.check(energy_monotone_check(&chain[0], chain.last().expect("nonempty"))?.holds);
        }
    }
    let mut pseudo = Tally::new("pseudorandomize-terminates-with-energy-gain");
    for k in 0..prm.trials.min(20) {
        let t = random_t(&ns, k % 2, &mut rng)?;
        let s = random_set(t.set().space(), 0.5, &mut rng).intersect(t.set())?;
        match pseudorandomize_u2(&t, &s, 0.1, 0.1) {
            Ok(pr) => {
                let r = &pr.report;
                let strictly = r.rounds.iter().all(|x| x.energy_after > x.energy_before);
                pseudo.check(strictly && r.rounds.len() as f64 <= r.round_bound);
            }
            Err(Error::Invariant(_)) => pseudo.check(false),
            Err(e) => return Err(e),
        }
    }
    Ok(vec![mono.finish(), pseudo.finish()])
}

fn increments(prm: &SuiteParams) -> Result<Vec<Assertion>> {
    let ns = prm.space(prm.n)?;
    let n = ns.size();
    let full = crate::increment::full_t(&ns)?;
    let mut deg1 = Tally::new("deg1-increment-planted-rows");
    let mut star3 = Tally::new("star3-split-planted-lines");
    for k in 0..prm.trials.clamp(1, 5) {
        let seed = prm.seed.wrapping_add(k as u64);
        let s = planted_instance(Planted::HalfA, &ns, seed, false)?;
        let r = deg1_increment(&s, &full, 0.1)?;
        deg1.check(
            r.gain > 0.0
                && recount(&r.witness, &s, n, |x, _| x)
                    .is_some_and(|d| (d - r.after).abs() <= 1e-12),
        );
        let s = planted_instance(Planted::HalfD, &ns, seed, false)?;
        let ar = ns.arith();
        let r = star3_fiber_split(&s, &full, 0.1)?;
        star3.check(
            r.gain > 0.0
                && recount(&r.witness, &s, n, |x, y| ar.add(ar.add(x, x), y))
                    .is_some_and(|d| (d - r.after).abs() <= 1e-12),
        );
    }
    let mut ident = Tally::new("align-offset-identity");
    let mut rng = prm.rng(13);
    for k in 0..prm.trials.clamp(1, 50) {
        let a = random_set(&ns, rng.gen_range(0.3..1.0), &mut rng);
        let d = k % (ns.dim() + 1);
        let spec = match d {
            0 => PhiSpec::Full,
            1 => PhiSpec::Map(random_nonzero_map(&ns, rng.gen())),
            _ => PhiSpec::Normals(
                (0..n)
                    .map(|_| loop {
                        let v: Vec<GroupVector> =
                            (0..d).map(|_| random_vector(&ns, &mut rng)).collect();
                        let rows: Vec<&[u64]> = v.iter().map(|x| x.digits()).collect();
                        if crate::group::rank(ns.field(), &rows) == d {
                            break v;
                        }
                    })
                    .collect(),
            ),
        };
        let phi = build_phi(&a, &spec, &random_vector(&ns, &mut rng), d)?;
        let s = random_set(phi.table().space(), 0.5, &mut rng);
        let r = align_translate(&phi, phi.table(), &s, 0.1)?;
        ident.check(r.identity_holds);
    }
    Ok(vec![deg1.finish(), star3.finish(), ident.finish()])
}

/// Density of S on the fibers `key(x, y)` named by a subset witness, by
/// direct enumeration of F x F.
fn recount(
    w: &Option<Witness>,
    s: &IndicatorSet,
    n: usize,
    key: impl Fn(usize, usize) -> usize,
) -> Option<f64> {
    let Some(Witness::Subset { members, .. }) = w else {
        return None;
    };
    let (mut tc, mut sc) = (0u64, 0u64);
    for x in 0..n {
        for y in 0..n {
            if members.contains(&key(x, y)) {
                tc += 1;
                sc += s.contains(x + n * y) as u64;
            }
        }
    }
    (tc > 0).then(|| sc as f64 / tc as f64)
}
