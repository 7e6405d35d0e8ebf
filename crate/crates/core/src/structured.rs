//! Structured sets on F_p^n x F_p^n: the fibered sets
//! `Phi = {(x,y) : x in A, y in u + V_x}`, the sets
//! `T = {(x,y) : B(y) C(x+y) D(2x+y) Phi(x,y) = 1}`, product-coset cells and
//! the codimension levels of Phi inside a cell, plus the statistics built on
//! additive derivatives of maps `A -> F_p^n`.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{rank, AffineSubspace, GroupVector, PrimeField, Space};
use crate::linear_systems::LinearFormSystem;
use crate::norms::gowers_u;
use crate::par;
use crate::table::{FunctionTable, IndicatorSet};

/// How a Phi was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiGenerator {
    PhiMap,
    Explicit,
    Full,
    /// Built from arbitrary fibers (restrictions, level sets).
    Fibers,
}

/// Input for [`build_phi`].
#[derive(Clone, Debug)]
pub enum PhiSpec {
    /// `phi(x) . (y - u) = 0`; one normal per x, given as an index.
    Map(Vec<usize>),
    /// For each x (indexed by canonical index), the d normals of `V_x`.
    Normals(Vec<Vec<GroupVector>>),
    /// `Phi = A x F_p^n`.
    Full,
}

/// A set `{(x,y) : x in A, y in F_x}` where every fiber `F_x` is a nonempty
/// affine subspace of F_p^n.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiDescriptor {
    space: Space,
    a: IndicatorSet,
    fibers: Vec<Option<AffineSubspace>>,
    d: usize,
    uniform: bool,
    common_offset: Option<GroupVector>,
    generator: PhiGenerator,
    table: IndicatorSet,
}

fn fibers_table(space: &Space, fibers: &[Option<AffineSubspace>]) -> Result<IndicatorSet> {
    let n = space.size();
    let big = space.squared()?;
    let mut mask = vec![false; big.size()];
    for (x, f) in fibers.iter().enumerate() {
        if let Some(f) = f {
            for y in f.enumerate_indices() {
                mask[x + n * y] = true;
            }
        }
    }
    Ok(IndicatorSet::from_mask(&big, &mask))
}

/// Builds `Phi = {(x,y) in A x F_p^n : y in u + V_x}` with every `V_x` of
/// codimension `d`.
pub fn build_phi(
    a: &IndicatorSet,
    spec: &PhiSpec,
    u: &GroupVector,
    d: usize,
) -> Result<PhiDescriptor> {
    let space = a.space().clone();
    space.encode(u)?;
    let n = space.size();
    let mut fibers: Vec<Option<AffineSubspace>> = vec![None; n];
    let generator = match spec {
        PhiSpec::Full => {
            if d != 0 {
                return Err(Error::InvalidArgument("a full Phi has d = 0".into()));
            }
            PhiGenerator::Full
        }
        PhiSpec::Map(_) => {
            if d != 1 {
                return Err(Error::InvalidArgument(
                    "a map-generated Phi has d = 1".into(),
                ));
            }
            PhiGenerator::PhiMap
        }
        PhiSpec::Normals(_) => PhiGenerator::Explicit,
    };
    for x in 0..n {
        if !a.contains(x) {
            continue;
        }
        let normals: Vec<GroupVector> = match spec {
            PhiSpec::Full => vec![],
            PhiSpec::Map(phi) => {
                let idx = *phi
                    .get(x)
                    .ok_or_else(|| Error::TableMismatch("phi map too short".into()))?;
                vec![space.decode(idx)?]
            }
            PhiSpec::Normals(all) => all
                .get(x)
                .cloned()
                .ok_or_else(|| Error::TableMismatch("normal list too short".into()))?,
        };
        if normals.len() != d {
            return Err(Error::InvalidArgument(format!(
                "x = {x} has {} normals, expected {d}",
                normals.len()
            )));
        }
        if normals.iter().any(|v| v.is_zero()) {
            return Err(Error::ZeroNormal(x));
        }
        let rows: Vec<&[u64]> = normals.iter().map(|v| v.digits()).collect();
        if rank(space.field(), &rows) != d {
            return Err(Error::DependentNormals(x));
        }
        let offsets = normals
            .iter()
            .map(|v| space.dot(v, u))
            .collect::<Result<Vec<_>>>()?;
        let fiber = AffineSubspace::from_normals(&space, &normals, &offsets)?;
        debug_assert_eq!(fiber.codim(), d);
        fibers[x] = Some(fiber);
    }
    let table = fibers_table(&space, &fibers)?;
    let p = space.p();
    let expected = a.cardinality() * p.pow((space.dim() - d) as u32);
    if table.cardinality() != expected {
        return Err(Error::Invariant(format!(
            "|Phi| = {} but |A| p^(n-d) = {expected}",
            table.cardinality()
        )));
    }
    Ok(PhiDescriptor {
        space,
        a: a.clone(),
        fibers,
        d,
        uniform: true,
        common_offset: Some(u.clone()),
        generator,
        table,
    })
}

impl PhiDescriptor {
    /// A Phi from arbitrary per-x fibers; empty fibers drop x from A. The
    /// codimension d is the largest fiber codimension.
    pub fn from_fibers(space: &Space, fibers: Vec<Option<AffineSubspace>>) -> Result<Self> {
        if fibers.len() != space.size() {
            return Err(Error::TableMismatch(
                "one fiber slot per x is required".into(),
            ));
        }
        let fibers: Vec<Option<AffineSubspace>> = fibers
            .into_iter()
            .map(|f| f.filter(|f| !f.is_empty()))
            .collect();
        for f in fibers.iter().flatten() {
            if f.space() != space {
                return Err(Error::DimensionMismatch {
                    expected: space.dim(),
                    found: f.ambient_dim(),
                });
            }
        }
        let a = IndicatorSet::from_pred(space, |x| fibers[x].is_some());
        let codims: Vec<usize> = fibers.iter().flatten().map(|f| f.codim()).collect();
        let d = codims.iter().copied().max().unwrap_or(0);
        let uniform = codims.iter().all(|&c| c == d);
        let table = fibers_table(space, &fibers)?;
        Ok(Self {
            space: space.clone(),
            a,
            fibers,
            d,
            uniform,
            common_offset: None,
            generator: PhiGenerator::Fibers,
            table,
        })
    }

    /// Drops the fibers over x outside `keep`; d, offset and generator are kept.
    pub fn restrict_a(&self, keep: &IndicatorSet) -> Result<Self> {
        if keep.space() != &self.space {
            return Err(Error::TableMismatch(
                "restriction set lives on another space".into(),
            ));
        }
        let fibers: Vec<Option<AffineSubspace>> = self
            .fibers
            .iter()
            .enumerate()
            .map(|(x, f)| if keep.contains(x) { f.clone() } else { None })
            .collect();
        let table = fibers_table(&self.space, &fibers)?;
        let a = IndicatorSet::from_pred(&self.space, |x| fibers[x].is_some());
        Ok(Self {
            a,
            fibers,
            table,
            ..self.clone()
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn a(&self) -> &IndicatorSet {
        &self.a
    }

    pub fn alpha(&self) -> f64 {
        self.a.density()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `p^{-d}`.
    pub fn rho(&self) -> f64 {
        (self.space.p() as f64).powi(-(self.d as i32))
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn common_offset(&self) -> Option<&GroupVector> {
        self.common_offset.as_ref()
    }

    pub fn generator(&self) -> PhiGenerator {
        self.generator
    }

    pub fn fiber(&self, x: usize) -> Option<&AffineSubspace> {
        self.fibers.get(x).and_then(|f| f.as_ref())
    }

    pub fn fibers(&self) -> &[Option<AffineSubspace>] {
        &self.fibers
    }

    /// Indicator on F_p^n x F_p^n.
    pub fn table(&self) -> &IndicatorSet {
        &self.table
    }

    pub fn density(&self) -> f64 {
        self.table.density()
    }

    /// Writes `p=<p> n=<n> d=<d> u=<digits>` and one line per x in A:
    /// `x : normal ; normal`. Without a common offset the header carries
    /// `u=-` and each line ends in `@ offsets`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let digits = |v: &[u64]| {
            v.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let u = match &self.common_offset {
            Some(u) => digits(u.digits()),
            None => "-".into(),
        };
        writeln!(
            w,
            "p={} n={} d={} u={}",
            self.space.p(),
            self.space.dim(),
            self.d,
            u
        )?;
        for (x, f) in self.fibers.iter().enumerate() {
            let Some(f) = f else { continue };
            let normals: Vec<String> = f.normals().iter().map(|v| digits(v.digits())).collect();
            if self.common_offset.is_some() {
                writeln!(w, "{x} : {}", normals.join(" ; "))?;
            } else {
                writeln!(w, "{x} : {} @ {}", normals.join(" ; "), digits(f.offsets()))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty() && !s.trim_start().starts_with('#'),
            Err(_) => true,
        });
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header = header?;
        let mut p = None;
        let mut n = None;
        let mut d = None;
        let mut u: Option<Option<Vec<u64>>> = None;
        let bad = |line: usize, msg: String| Error::Parse { line, msg };
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(1, format!("bad token {tok:?}")))?;
            match k {
                "p" => p = Some(v.parse::<u64>().map_err(|e| bad(1, e.to_string()))?),
                "n" => n = Some(v.parse::<usize>().map_err(|e| bad(1, e.to_string()))?),
                "d" => d = Some(v.parse::<usize>().map_err(|e| bad(1, e.to_string()))?),
                "u" => {
                    u = Some(if v == "-" {
                        None
                    } else {
                        Some(parse_digits(v).map_err(|e| bad(1, e))?)
                    })
                }
                _ => {}
            }
        }
        let (Some(p), Some(n), Some(d), Some(u)) = (p, n, d, u) else {
            return Err(bad(1, "header needs p, n, d and u".into()));
        };
        let space = Space::new(PrimeField::new(p)?, n)?;
        let mut normals: Vec<Vec<GroupVector>> = vec![Vec::new(); space.size()];
        let mut offsets: Vec<Vec<u64>> = vec![Vec::new(); space.size()];
        let mut in_a = vec![false; space.size()];
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let (x, rest) = line
                .split_once(':')
                .ok_or_else(|| bad(lineno, "expected `x : normals`".into()))?;
            let x: usize = x
                .trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(lineno, e.to_string()))?;
            if x >= space.size() {
                return Err(bad(lineno, format!("x = {x} out of range")));
            }
            let (body, offs) = match rest.split_once('@') {
                Some((b, o)) => (b, Some(o)),
                None => (rest, None),
            };
            let vs = body
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let digits = parse_digits(s).map_err(|e| bad(lineno, e))?;
                    space.vector(digits).map_err(|e| bad(lineno, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(o) = offs {
                offsets[x] = parse_digits(o.trim()).map_err(|e| bad(lineno, e))?;
            }
            normals[x] = vs;
            in_a[x] = true;
        }
        let a = IndicatorSet::from_mask(&space, &in_a);
        match u {
            Some(u) => {
                let u = space.vector(u)?;
                let spec = if d == 0 {
                    PhiSpec::Full
                } else {
                    PhiSpec::Normals(normals)
                };
                build_phi(&a, &spec, &u, d)
            }
            None => {
                let fibers = (0..space.size())
                    .map(|x| {
                        if in_a[x] {
                            AffineSubspace::from_normals(&space, &normals[x], &offsets[x]).map(Some)
                        } else {
                            Ok(None)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::from_fibers(&space, fibers)
            }
        }
    }
}

fn parse_digits(s: &str) -> std::result::Result<Vec<u64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|d| d.trim().parse::<u64>().map_err(|e| e.to_string()))
        .collect()
}

/// `T = {(x,y) : B(y) C(x+y) D(2x+y) Phi(x,y) = 1}` with its factors.
#[derive(Clone, Debug, PartialEq)]
pub struct TDescriptor {
    pub b: IndicatorSet,
    pub c: IndicatorSet,
    pub d: IndicatorSet,
    pub phi: PhiDescriptor,
    t: IndicatorSet,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TDensityReport {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
    pub density: f64,
    /// `alpha beta gamma delta rho`.
    pub product_density: f64,
    pub gap: f64,
}

pub fn build_t(
    b: &IndicatorSet,
    c: &IndicatorSet,
    d: &IndicatorSet,
    phi: &PhiDescriptor,
) -> Result<TDescriptor> {
    let ns = phi.space();
    for s in [b, c, d] {
        if s.space() != ns {
            return Err(Error::TableMismatch(
                "factor sets must live on the same F_p^n".into(),
            ));
        }
    }
    let n = ns.size();
    let ar = ns.arith();
    let big = ns.squared()?;
    let pm = phi.table();
    let t = IndicatorSet::from_pred(&big, |i| {
        let (x, y) = (i % n, i / n);
        pm.contains(i)
            && b.contains(y)
            && c.contains(ar.add(x, y))
            && d.contains(ar.add(ar.add(x, x), y))
    });
    // the same set as a product of lifted tables
    let mut prod = pm.table().clone();
    for (s, slot) in [
        (b, crate::table::Slot::Y),
        (c, crate::table::Slot::XPlusY),
        (d, crate::table::Slot::TwoXPlusY),
    ] {
        prod = prod.mul(&s.table().product_lift(slot)?)?;
    }
    if prod.values() != t.table().values() {
        return Err(Error::Invariant(
            "T differs from the product of its factors".into(),
        ));
    }
    Ok(TDescriptor {
        b: b.clone(),
        c: c.clone(),
        d: d.clone(),
        phi: phi.clone(),
        t,
    })
}

impl TDescriptor {
    pub fn set(&self) -> &IndicatorSet {
        &self.t
    }

    pub fn space(&self) -> &Space {
        self.phi.space()
    }

    pub fn density_report(&self) -> TDensityReport {
        let (alpha, beta, gamma, delta, rho) = (
            self.phi.alpha(),
            self.b.density(),
            self.c.density(),
            self.d.density(),
            self.phi.rho(),
        );
        let product_density = alpha * beta * gamma * delta * rho;
        TDensityReport {
            alpha,
            beta,
            gamma,
            delta,
            rho,
            density: self.t.density(),
            product_density,
            gap: (self.t.density() - product_density).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberFamily {
    /// `rows`, `columns`, `antidiagonals` or `lines`.
    pub name: &'static str,
    /// `alpha beta gamma delta rho` with the indexing factor's density left out.
    pub expected: f64,
    /// Fiber densities for members of the indexing set, in index order.
    pub densities: Vec<f64>,
    pub mean: f64,
    /// Proportion of indexing members whose density deviates by more than eps'.
    pub deviating_proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberStats {
    pub eps_prime: f64,
    pub families: Vec<FiberFamily>,
}

/// Densities of the four fiber families of T: `T(x,.)` for x in A,
/// `T(.,y)` for y in B, `T(., z - .)` for z in C, `T(., w - 2.)` for w in D.
pub fn fiber_stats(t: &TDescriptor, eps_prime: f64) -> FiberStats {
    let ns = t.space();
    let n = ns.size();
    let ar = ns.arith();
    let set = t.set();
    let r = t.density_report();
    let fam = |name: &'static str,
               index: &IndicatorSet,
               expected: f64,
               count: &(dyn Fn(usize) -> usize + Sync)| {
        let members = index.members();
        let densities: Vec<f64> = members
            .iter()
            .map(|&k| count(k) as f64 / n as f64)
            .collect();
        let dev = densities
            .iter()
            .filter(|&&v| (v - expected).abs() > eps_prime)
            .count();
        FiberFamily {
            name,
            expected,
            mean: par::mean_f64(&densities),
            deviating_proportion: if members.is_empty() {
                0.0
            } else {
                dev as f64 / members.len() as f64
            },
            densities,
        }
    };
    let families = vec![
        fam(
            "rows",
            t.phi.a(),
            r.beta * r.gamma * r.delta * r.rho,
            &|x| (0..n).filter(|&y| set.contains(x + n * y)).count(),
        ),
        fam("columns", &t.b, r.alpha * r.gamma * r.delta * r.rho, &|y| {
            (0..n).filter(|&x| set.contains(x + n * y)).count()
        }),
        fam(
            "antidiagonals",
            &t.c,
            r.alpha * r.beta * r.delta * r.rho,
            &|z| {
                (0..n)
                    .filter(|&x| set.contains(x + n * ar.sub(z, x)))
                    .count()
            },
        ),
        fam("lines", &t.d, r.alpha * r.beta * r.gamma * r.rho, &|w| {
            (0..n)
                .filter(|&x| set.contains(x + n * ar.sub(w, ar.add(x, x))))
                .count()
        }),
    ];
    FiberStats {
        eps_prime,
        families,
    }
}

/// A product coset `(u + V) x (w + V)`; u and w are kept as canonical
/// representatives (parameter zero of their cosets).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    v: AffineSubspace,
    u: GroupVector,
    w: GroupVector,
}

impl Cell {
    pub fn new(v: &AffineSubspace, u: &GroupVector, w: &GroupVector) -> Result<Self> {
        let v = v.direction();
        let u = v.coset_through(u)?.base_point().ok_or(Error::EmptyCoset)?;
        let w = v.coset_through(w)?.base_point().ok_or(Error::EmptyCoset)?;
        Ok(Self { v, u, w })
    }

    pub fn full(ns: &Space) -> Self {
        Self {
            v: AffineSubspace::full(ns),
            u: ns.zero(),
            w: ns.zero(),
        }
    }

    pub fn space(&self) -> &Space {
        self.v.space()
    }

    pub fn subspace(&self) -> &AffineSubspace {
        &self.v
    }

    pub fn u(&self) -> &GroupVector {
        &self.u
    }

    pub fn w(&self) -> &GroupVector {
        &self.w
    }

    pub fn codim(&self) -> usize {
        self.v.codim()
    }

    /// `mu(C) = p^{-2 codim V}`.
    pub fn measure(&self) -> f64 {
        (self.space().p() as f64).powi(-2 * self.codim() as i32)
    }

    fn coset(&self, base: &GroupVector) -> AffineSubspace {
        self.v.coset_through(base).expect("same space")
    }

    /// `u + V`.
    pub fn x_coset(&self) -> AffineSubspace {
        self.coset(&self.u)
    }

    /// `w + V`, where B is restricted.
    pub fn y_coset(&self) -> AffineSubspace {
        self.coset(&self.w)
    }

    /// `u + w + V`, where C is restricted.
    pub fn c_coset(&self) -> AffineSubspace {
        let s = self.space();
        self.coset(&s.add(&self.u, &self.w).expect("same space"))
    }

    /// `2u + w + V`, where D is restricted.
    pub fn d_coset(&self) -> AffineSubspace {
        let s = self.space();
        let two_u = s.scale(2, &self.u).expect("same space");
        self.coset(&s.add(&two_u, &self.w).expect("same space"))
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let s = self.space();
        let (Ok(xv), Ok(yv)) = (s.decode(x), s.decode(y)) else {
            return false;
        };
        let f = s.field();
        self.v.normals().iter().all(|nm| {
            crate::group::dot_digits(f, nm.digits(), xv.digits())
                == crate::group::dot_digits(f, nm.digits(), self.u.digits())
                && crate::group::dot_digits(f, nm.digits(), yv.digits())
                    == crate::group::dot_digits(f, nm.digits(), self.w.digits())
        })
    }

    /// Product indices `x + N y` of the cell, x-major in parameter order.
    pub fn points(&self) -> Vec<usize> {
        let n = self.space().size();
        let xs = self.x_coset().enumerate_indices();
        let ys = self.y_coset().enumerate_indices();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                out.push(x + n * y);
            }
        }
        out
    }
}

/// Relative codimension of `Phi(x, .)` inside `w + V` for each x in
/// `u + V` (in parameter order); `None` when the fiber misses `w + V`.
pub fn fiber_levels(phi: &PhiDescriptor, cell: &Cell) -> Result<Vec<(usize, Option<usize>)>> {
    let wv = cell.y_coset();
    let base = cell.codim();
    cell.x_coset()
        .enumerate_indices()
        .into_iter()
        .map(|x| {
            let lvl = match phi.fiber(x) {
                None => None,
                Some(f) => {
                    let inter = f.intersect(&wv)?;
                    if inter.is_empty() {
                        None
                    } else {
                        Some(inter.codim() - base)
                    }
                }
            };
            Ok((x, lvl))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhiLevel {
    pub i: usize,
    /// Points of `Phi` in the cell whose fiber has relative codimension <= i.
    pub at_most: IndicatorSet,
    /// Relative codimension exactly i.
    pub exact: IndicatorSet,
}

/// The nested sets `Phi^{<=i}` and their differences `Phi^i` inside a cell,
/// for `0 <= i <= phi.d()`.
pub fn phi_levels(phi: &PhiDescriptor, cell: &Cell) -> Result<Vec<PhiLevel>> {
    let ns = phi.space();
    let n = ns.size();
    let big = ns.squared()?;
    let levels = fiber_levels(phi, cell)?;
    let mut level_of = vec![usize::MAX; big.size()];
    let wv = cell.y_coset();
    for (x, lvl) in levels {
        let (Some(l), Some(f)) = (lvl, phi.fiber(x)) else {
            continue;
        };
        for y in f.intersect(&wv)?.enumerate_indices() {
            level_of[x + n * y] = l;
        }
    }
    let out: Vec<PhiLevel> = (0..=phi.d())
        .map(|i| PhiLevel {
            i,
            at_most: IndicatorSet::from_pred(&big, |k| level_of[k] <= i),
            exact: IndicatorSet::from_pred(&big, |k| level_of[k] == i),
        })
        .collect();
    // Phi in the cell is the disjoint union of the exact levels
    let in_cell = phi.table().cardinality_in(|k| cell.contains(k % n, k / n));
    let total: u64 = out.iter().map(|l| l.exact.cardinality()).sum();
    if total != in_cell {
        return Err(Error::Invariant(format!(
            "levels cover {total} points but Phi has {in_cell} in the cell"
        )));
    }
    Ok(out)
}

impl IndicatorSet {
    /// Members satisfying `pred`.
    pub fn cardinality_in<F: Fn(usize) -> bool + Sync + Send>(&self, pred: F) -> u64 {
        par::sum_indexed_u64(self.table().len(), |k| {
            u64::from(self.contains(k) && pred(k))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub s: u32,
    /// `||A - alpha||_{U^s(F_p^n)}`.
    pub lhs: f64,
    /// `rho^{-1} ||Phi - alpha rho||_{U^s(F_p^n x F_p^n)}`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn phi_uniformity_transfer_check(phi: &PhiDescriptor, s: u32) -> Result<TransferReport> {
    if !phi.is_uniform() {
        return Err(Error::Precondition(
            "fibers must share one codimension".into(),
        ));
    }
    let alpha = phi.alpha();
    let rho = phi.rho();
    let lhs = gowers_u(
        &phi.a().table().sub_const(Complex64::new(alpha, 0.0)),
        s,
        None,
    )?
    .value;
    let dev = phi
        .table()
        .table()
        .sub_const(Complex64::new(alpha * rho, 0.0));
    let rhs = gowers_u(&dev, s, None)?.value / rho;
    Ok(TransferReport {
        s,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Exact enumeration or seeded sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    /// Exact when within the work cap, otherwise Monte Carlo.
    Auto {
        samples: u64,
        seed: u64,
    },
    Exact,
    MonteCarlo {
        samples: u64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProportionReport {
    pub proportion: f64,
    /// Admissible tuples counted (exact) or sampled (Monte Carlo).
    pub admissible: u64,
    pub hits: u64,
    pub exact: bool,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    /// Binomial standard error for Monte Carlo runs.
    pub standard_error: Option<f64>,
}

/// Runs `visit(point_of)` over tuples `(x, h_1..h_k)`: the closure receives
/// the tuple and returns `None` for inadmissible tuples, else whether the
/// event holds.
fn tuple_proportion<F>(
    ns: &Space,
    k: usize,
    corners: usize,
    sampling: Sampling,
    visit: F,
) -> Result<ProportionReport>
where
    F: Fn(&[usize]) -> Option<bool> + Sync + Send,
{
    let n = ns.size();
    let work = (n as u128)
        .saturating_pow(k as u32 + 1)
        .saturating_mul(corners as u128);
    let exact = match sampling {
        Sampling::Exact => {
            ns.check_work("tuple enumeration", work)?;
            true
        }
        Sampling::MonteCarlo { .. } => false,
        Sampling::Auto { .. } => work <= ns.limits().max_work,
    };
    if exact {
        let inner = n.pow(k as u32);
        let per = par::map_indexed_coarse(n, |x| {
            let mut tuple = vec![0usize; k + 1];
            tuple[0] = x;
            let (mut adm, mut hit) = (0u64, 0u64);
            for mut t in 0..inner {
                for h in tuple[1..].iter_mut() {
                    *h = t % n;
                    t /= n;
                }
                if let Some(ok) = visit(&tuple) {
                    adm += 1;
                    hit += u64::from(ok);
                }
            }
            (adm, hit)
        });
        let admissible: u64 = per.iter().map(|c| c.0).sum();
        let hits: u64 = per.iter().map(|c| c.1).sum();
        Ok(ProportionReport {
            proportion: if admissible == 0 {
                0.0
            } else {
                hits as f64 / admissible as f64
            },
            admissible,
            hits,
            exact: true,
            samples: None,
            seed: None,
            standard_error: None,
        })
    } else {
        let (samples, seed) = match sampling {
            Sampling::Auto { samples, seed } | Sampling::MonteCarlo { samples, seed } => {
                (samples, seed)
            }
            Sampling::Exact => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tuple = vec![0usize; k + 1];
        let (mut admissible, mut hits) = (0u64, 0u64);
        for _ in 0..samples {
            for t in tuple.iter_mut() {
                *t = rng.gen_range(0..n);
            }
            if let Some(ok) = visit(&tuple) {
                admissible += 1;
                hits += u64::from(ok);
            }
        }
        let q = if admissible == 0 {
            0.0
        } else {
            hits as f64 / admissible as f64
        };
        Ok(ProportionReport {
            proportion: q,
            admissible,
            hits,
            exact: false,
            samples: Some(samples),
            seed: Some(seed),
            standard_error: Some(if admissible == 0 {
                0.0
            } else {
                (q * (1.0 - q) / admissible as f64).sqrt()
            }),
        })
    }
}

/// Corners `x + w . h` of the cube spanned by `tuple = (x, h_1..h_k)`,
/// indexed by the bitmask w.
fn cube_corners(ar: &crate::group::IndexArith, tuple: &[usize]) -> Vec<usize> {
    let k = tuple.len() - 1;
    let mut pts = vec![0usize; 1 << k];
    pts[0] = tuple[0];
    for j in 0..k {
        for w in 0..(1usize << j) {
            pts[w | 1 << j] = ar.add(pts[w], tuple[j + 1]);
        }
    }
    pts
}

/// `sum_{w in mask} (-1)^{|w|} phi(corner_w)` as a group element.
fn signed_sum(
    ar: &crate::group::IndexArith,
    phi: &[usize],
    pts: &[usize],
    include: impl Fn(usize) -> bool,
) -> usize {
    let mut acc = 0;
    for (w, &pt) in pts.iter().enumerate() {
        if !include(w) {
            continue;
        }
        acc = if w.count_ones() % 2 == 1 {
            ar.sub(acc, phi[pt])
        } else {
            ar.add(acc, phi[pt])
        };
    }
    acc
}

/// Proportion of `(x, h_1..h_s)` with all cube corners in A for which
/// `partial_{h_1..h_s} phi(x) = sum_w (-1)^{|w|} phi(x + w.h)` vanishes.
pub fn approx_poly_proportion(
    a: &IndicatorSet,
    phi: &[usize],
    s: usize,
    sampling: Sampling,
) -> Result<ProportionReport> {
    let ns = a.space();
    if phi.len() != ns.size() {
        return Err(Error::TableMismatch("phi needs one value per x".into()));
    }
    if a.cardinality() == 0 {
        return Err(Error::Precondition("A is empty".into()));
    }
    let ar = ns.arith();
    tuple_proportion(ns, s, 1 << s, sampling, |tuple| {
        let pts = cube_corners(&ar, tuple);
        if !pts.iter().all(|&x| a.contains(x)) {
            return None;
        }
        Some(signed_sum(&ar, phi, &pts, |_| true) == 0)
    })
}

/// Proportion of `(2s+2)`-dimensional parallelepipeds in A on which every
/// `(2s+1)`-dimensional face derivative of phi vanishes.
pub fn face_derivative_statistic(
    a: &IndicatorSet,
    phi: &[usize],
    s: usize,
    sampling: Sampling,
) -> Result<ProportionReport> {
    let ns = a.space();
    if phi.len() != ns.size() {
        return Err(Error::TableMismatch("phi needs one value per x".into()));
    }
    let k = 2 * s + 2;
    let ar = ns.arith();
    tuple_proportion(ns, k, 1 << k, sampling, |tuple| {
        let pts = cube_corners(&ar, tuple);
        if !pts.iter().all(|&x| a.contains(x)) {
            return None;
        }
        let ok = (0..k)
            .all(|i| (0..2).all(|eps| signed_sum(&ar, phi, &pts, |w| (w >> i & 1) == eps) == 0));
        Some(ok)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntersectionReport {
    /// Expected codimension `r d` of a generic intersection.
    pub generic_codim: usize,
    pub admissible: u64,
    pub degenerate: u64,
    pub proportion: f64,
    /// Histogram of observed codimensions (index = codim, empty counted as n).
    pub codim_histogram: Vec<u64>,
}

/// Over variable tuples with every `psi_i(x)` in A, the proportion whose
/// fiber intersection `{y : prod_i Phi(psi_i(x), y + w_i) = 1}` has
/// codimension other than `r d`.
pub fn intersection_codim_statistic(
    phi: &PhiDescriptor,
    sys: &LinearFormSystem,
    shifts: &[GroupVector],
) -> Result<IntersectionReport> {
    let ns = phi.space();
    if sys.blocks() != 1 {
        return Err(Error::InvalidArgument("forms must map into F_p^n".into()));
    }
    let r = sys.d();
    if r > 3 {
        return Err(Error::ResourceLimit {
            what: "forms in intersection statistic",
            needed: r as u128,
            cap: 3,
        });
    }
    if shifts.len() != r {
        return Err(Error::InvalidArgument(format!(
            "{r} forms but {} shifts",
            shifts.len()
        )));
    }
    let n = ns.size();
    let vars = sys.r();
    let tuples = (n as u128).pow(vars as u32);
    ns.check_work(
        "intersection statistic",
        tuples * (r as u128) * (ns.dim() as u128).pow(2),
    )?;
    let ar = ns.arith();
    let neg_shifts: Vec<GroupVector> = shifts.iter().map(|w| ns.neg(w)).collect::<Result<_>>()?;
    let per = par::map_indexed_coarse(tuples as usize, |t| -> Result<Option<usize>> {
        let mut v = vec![0usize; vars];
        let mut rest = t;
        for x in v.iter_mut() {
            *x = rest % n;
            rest /= n;
        }
        let mut inter = AffineSubspace::full(ns);
        for (row, shift) in sys.forms().iter().zip(&neg_shifts) {
            let img = v
                .iter()
                .zip(row)
                .fold(0usize, |acc, (&x, &c)| ar.add(acc, ar.scale(c, x)));
            let Some(f) = phi.fiber(img) else {
                return Ok(None);
            };
            inter = inter.intersect(&f.translate(shift)?)?;
        }
        Ok(Some(inter.codim()))
    });
    let mut hist = vec![0u64; ns.dim() + 1];
    let generic = r * phi.d();
    let (mut admissible, mut degenerate) = (0u64, 0u64);
    for c in per {
        if let Some(c) = c? {
            admissible += 1;
            hist[c] += 1;
            if c != generic {
                degenerate += 1;
            }
        }
    }
    Ok(IntersectionReport {
        generic_codim: generic,
        admissible,
        degenerate,
        proportion: if admissible == 0 {
            0.0
        } else {
            degenerate as f64 / admissible as f64
        },
        codim_histogram: hist,
    })
}

/// A seeded random map `F_p^n -> F_p^n \ {0}`.
pub fn random_nonzero_map(ns: &Space, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ns.size())
        .map(|_| rng.gen_range(1..ns.size()))
        .collect()
}

/// Table of a lifted factor product, used by tests and reports.
pub fn factor_product(
    ns: &Space,
    b: &IndicatorSet,
    c: &IndicatorSet,
    d: &IndicatorSet,
) -> Result<FunctionTable> {
    let _ = ns;
    let mut prod = b.table().product_lift(crate::table::Slot::Y)?;
    prod = prod.mul(&c.table().product_lift(crate::table::Slot::XPlusY)?)?;
    prod.mul(&d.table().product_lift(crate::table::Slot::TwoXPlusY)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(p: u64, n: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), n).unwrap()
    }

    fn random_set(ns: &Space, density: f64, seed: u64) -> IndicatorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..ns.size()).map(|_| rng.gen_bool(density)).collect();
        IndicatorSet::from_mask(ns, &mask)
    }

    #[test]
    fn build_phi_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let v = 4; // digits [1, 1]
        let phi = build_phi(&full, &PhiSpec::Map(vec![v; 9]), &ns.zero(), 1).unwrap();
        assert!((phi.density() - 1.0 / 3.0).abs() < 1e-15);
        let a = IndicatorSet::from_indices(&ns, &[0, 4, 5]).unwrap();
        let phi0 = build_phi(&a, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        for k in 0..81 {
            assert_eq!(phi0.table().contains(k), a.contains(k % 9));
        }
        let mut map = vec![v; 9];
        map[4] = 0;
        assert_eq!(
            build_phi(&full, &PhiSpec::Map(map), &ns.zero(), 1),
            Err(Error::ZeroNormal(4))
        );
        let dep = vec![
            vec![
                GroupVector::from_digits(vec![1, 2]),
                GroupVector::from_digits(vec![2, 1])
            ];
            9
        ];
        assert_eq!(
            build_phi(&full, &PhiSpec::Normals(dep), &ns.zero(), 2),
            Err(Error::DependentNormals(0))
        );
    }

    #[test]
    fn random_phi_density_exact() {
        let ns = sp(3, 3);
        let a = random_set(&ns, 0.6, 3);
        let u = GroupVector::from_digits(vec![1, 0, 2]);
        let phi = build_phi(&a, &PhiSpec::Map(random_nonzero_map(&ns, 4)), &u, 1).unwrap();
        assert_eq!(phi.table().cardinality(), a.cardinality() * 9);
        for x in a.members() {
            let f = phi.fiber(x).unwrap();
            let ys: Vec<usize> = (0..27)
                .filter(|&y| phi.table().contains(x + 27 * y))
                .collect();
            assert_eq!(ys.len(), 9);
            assert!(ys.iter().all(|&y| f.contains_index(y)));
            assert!(f.contains(&u));
        }
    }

    #[test]
    fn phi_file_round_trip() {
        let ns = sp(3, 2);
        let a = random_set(&ns, 0.5, 1);
        let phi = build_phi(
            &a,
            &PhiSpec::Map(random_nonzero_map(&ns, 2)),
            &GroupVector::from_digits(vec![2, 1]),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        phi.write_to(&mut buf).unwrap();
        let back = PhiDescriptor::read_from(&buf[..]).unwrap();
        assert_eq!(back.table(), phi.table());
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);

        let fib = PhiDescriptor::from_fibers(&ns, phi.fibers().to_vec()).unwrap();
        let mut buf3 = Vec::new();
        fib.write_to(&mut buf3).unwrap();
        assert_eq!(
            PhiDescriptor::read_from(&buf3[..]).unwrap().table(),
            phi.table()
        );
    }

    #[test]
    fn build_t_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let phi = build_phi(&full, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        let t = build_t(&full, &full, &full, &phi).unwrap();
        assert_eq!(t.set().density(), 1.0);
        let empty = IndicatorSet::empty(&ns);
        assert_eq!(
            build_t(&empty, &full, &full, &phi)
                .unwrap()
                .set()
                .cardinality(),
            0
        );
        let ns3 = sp(3, 3);
        let (b, c, d) = (
            random_set(&ns3, 0.7, 1),
            random_set(&ns3, 0.7, 2),
            random_set(&ns3, 0.7, 3),
        );
        let a = random_set(&ns3, 0.7, 4);
        let phi = build_phi(
            &a,
            &PhiSpec::Map(random_nonzero_map(&ns3, 5)),
            &ns3.zero(),
            1,
        )
        .unwrap();
        let t = build_t(&b, &c, &d, &phi).unwrap();
        let want = factor_product(&ns3, &b, &c, &d)
            .unwrap()
            .mul(phi.table().table())
            .unwrap();
        let count = want.values().iter().filter(|v| v.re == 1.0).count() as u64;
        assert_eq!(t.set().cardinality(), count);
        let r = t.density_report();
        assert!(r.gap >= 0.0 && r.density > 0.0);
    }

    #[test]
    fn fiber_stats_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let phi = build_phi(&full, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        let t = build_t(&full, &full, &full, &phi).unwrap();
        let st = fiber_stats(&t, 0.01);
        for f in &st.families {
            assert!(f.densities.iter().all(|&v| v == 1.0));
            assert_eq!(f.deviating_proportion, 0.0);
        }
        let b = IndicatorSet::from_indices(&ns, &[0, 1, 5]).unwrap();
        let t = build_t(&b, &full, &full, &phi).unwrap();
        let rows = &fiber_stats(&t, 0.0).families[0];
        assert!(rows.densities.iter().all(|&v| v == b.density()));
    }

    #[test]
    fn phi_levels_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let phi = build_phi(
            &full,
            &PhiSpec::Map(random_nonzero_map(&ns, 8)),
            &ns.zero(),
            1,
        )
        .unwrap();
        let lv = phi_levels(&phi, &Cell::full(&ns)).unwrap();
        assert_eq!(lv.len(), 2);
        assert_eq!(lv[0].at_most.cardinality(), 0);
        assert_eq!(lv[1].at_most, *phi.table());
        let phi0 = build_phi(&full, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        let lv = phi_levels(&phi0, &Cell::full(&ns)).unwrap();
        assert_eq!(lv.len(), 1);
        assert_eq!(lv[0].exact, *phi0.table());

        // codim-1 cell: fibers parallel to V land in level 0
        let v = AffineSubspace::linear(&ns, &[GroupVector::from_digits(vec![1, 0])]).unwrap();
        let cell = Cell::new(
            &v,
            &GroupVector::from_digits(vec![1, 0]),
            &GroupVector::from_digits(vec![0, 1]),
        )
        .unwrap();
        let lv = phi_levels(&phi, &cell).unwrap();
        for l in &lv {
            assert!(l
                .at_most
                .members()
                .iter()
                .all(|&k| cell.contains(k % 9, k / 9)));
        }
        assert!(lv[0]
            .at_most
            .members()
            .iter()
            .all(|k| lv[1].at_most.contains(*k)));
        // per-x oracle: level i iff the fiber density in w+V is p^-i
        let wv = cell.y_coset().enumerate_indices();
        for l in &lv {
            for k in l.exact.members() {
                let x = k % 9;
                let hits = wv
                    .iter()
                    .filter(|&&y| phi.table().contains(x + 9 * y))
                    .count();
                assert_eq!(hits * 3usize.pow(l.i as u32), wv.len());
            }
        }
    }

    #[test]
    fn transfer_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let phi = build_phi(&full, &PhiSpec::Map(vec![1; 9]), &ns.zero(), 1).unwrap();
        let r = phi_uniformity_transfer_check(&phi, 2).unwrap();
        assert!(r.lhs < 1e-12 && r.holds);
        let a = random_set(&ns, 0.5, 3);
        let phi0 = build_phi(&a, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        let r = phi_uniformity_transfer_check(&phi0, 2).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-12);
        for seed in 0..20 {
            let a = random_set(&ns, 0.6, seed);
            if a.cardinality() == 0 {
                continue;
            }
            let phi = build_phi(
                &a,
                &PhiSpec::Map(random_nonzero_map(&ns, seed + 100)),
                &ns.zero(),
                1,
            )
            .unwrap();
            assert!(phi_uniformity_transfer_check(&phi, 2).unwrap().holds);
        }
    }

    #[test]
    fn approx_poly_examples() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let ar = ns.arith();
        // affine map x -> 2x + b
        let affine: Vec<usize> = (0..9).map(|x| ar.add(ar.scale(2, x), 5)).collect();
        let r = approx_poly_proportion(&full, &affine, 2, Sampling::Exact).unwrap();
        assert_eq!(r.proportion, 1.0);
        // coordinates quadratic in x
        let quad: Vec<usize> = (0..9)
            .map(|x| {
                let v = ns.decode(x).unwrap();
                let (a, b) = (v.digits()[0], v.digits()[1]);
                ns.index_of(&[(a * a + b) % 3, (a * b + 2) % 3])
            })
            .collect();
        assert_eq!(
            approx_poly_proportion(&full, &quad, 3, Sampling::Exact)
                .unwrap()
                .proportion,
            1.0
        );
        assert!(
            approx_poly_proportion(&IndicatorSet::empty(&ns), &quad, 2, Sampling::Exact).is_err()
        );
    }

    #[test]
    fn face_derivative_examples() {
        let ns = sp(3, 1);
        let full = IndicatorSet::full(&ns);
        let r = face_derivative_statistic(&full, &[2, 2, 2], 0, Sampling::Exact).unwrap();
        assert_eq!(r.proportion, 1.0);
        // s = 0: all four parallelogram corners share a value
        let phi = [0usize, 0, 1];
        let r = face_derivative_statistic(&full, &phi, 0, Sampling::Exact).unwrap();
        let mut via_u2 = 0.0;
        for z in 0..3 {
            let level = IndicatorSet::from_pred(&ns, |x| phi[x] == z);
            via_u2 += gowers_u(level.table(), 2, None).unwrap().raw_average;
        }
        assert!((r.proportion - via_u2).abs() < 1e-12);
    }

    #[test]
    fn intersection_examples() {
        let ns = sp(3, 3);
        let fl = *ns.field();
        let full = IndicatorSet::full(&ns);
        let phi = build_phi(
            &full,
            &PhiSpec::Map(random_nonzero_map(&ns, 1)),
            &ns.zero(),
            1,
        )
        .unwrap();
        let one = LinearFormSystem::parse(&fl, "[[1]]").unwrap();
        let r = intersection_codim_statistic(&phi, &one, &[ns.zero()]).unwrap();
        assert_eq!(r.proportion, 0.0);
        let constant = build_phi(&full, &PhiSpec::Map(vec![5; 27]), &ns.zero(), 1).unwrap();
        let two = LinearFormSystem::parse(&fl, "[[1,0],[1,1]]").unwrap();
        let r = intersection_codim_statistic(&constant, &two, &[ns.zero(), ns.zero()]).unwrap();
        assert_eq!(r.proportion, 1.0);
        let r = intersection_codim_statistic(&phi, &two, &[ns.zero(), ns.zero()]).unwrap();
        assert!(r.proportion < 0.5);
    }
}
