//! Dense complex-valued functions on F_p^m and indicator sets.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{AffineSubspace, GroupVector, PrimeField, Space};
use crate::par;

/// Tolerance used by the 1-bounded predicate.
pub const ONE_BOUNDED_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Complex,
    Real,
    Indicator,
}

/// `e_p(k) = exp(2 pi i k / p)` for k in `0..p`.
pub fn roots_of_unity(p: u64) -> Vec<Complex64> {
    (0..p)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / p as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionTable {
    space: Space,
    values: Vec<Complex64>,
    kind: Kind,
}

impl FunctionTable {
    /// Builds a table, checking the length. The kind is inferred: indicator
    /// when every value is exactly 0 or 1, real when all imaginary parts are
    /// zero, complex otherwise.
    pub fn new(space: &Space, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != space.size() {
            return Err(Error::TableMismatch(format!(
                "expected {} values, got {}",
                space.size(),
                values.len()
            )));
        }
        let kind = infer_kind(&values);
        Ok(Self {
            space: space.clone(),
            values,
            kind,
        })
    }

    pub fn from_real(space: &Space, values: Vec<f64>) -> Result<Self> {
        Self::new(
            space,
            values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn from_fn<F>(space: &Space, f: F) -> Self
    where
        F: Fn(usize) -> Complex64 + Sync + Send,
    {
        let values = par::map_indexed(space.size(), f);
        let kind = infer_kind(&values);
        Self {
            space: space.clone(),
            values,
            kind,
        }
    }

    pub fn constant(space: &Space, c: Complex64) -> Self {
        Self::from_fn(space, |_| c)
    }

    pub fn zeros(space: &Space) -> Self {
        Self::constant(space, Complex64::new(0.0, 0.0))
    }

    pub fn ones(space: &Space) -> Self {
        Self::constant(space, Complex64::new(1.0, 0.0))
    }

    /// The character `x -> e_p(xi . x)`.
    pub fn character(space: &Space, xi: &GroupVector) -> Result<Self> {
        let xi_idx = space.encode(xi)?;
        let roots = roots_of_unity(space.p());
        let ar = space.arith();
        Ok(Self::from_fn(space, |x| roots[ar.dot(xi_idx, x) as usize]))
    }

    /// Point mass at index `i`.
    pub fn delta_at(space: &Space, i: usize) -> Result<Self> {
        if i >= space.size() {
            return Err(Error::IndexOutOfRange {
                index: i,
                size: space.size(),
            });
        }
        Ok(Self::from_fn(space, |x| {
            Complex64::new(if x == i { 1.0 } else { 0.0 }, 0.0)
        }))
    }

    #[inline]
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn field(&self) -> &PrimeField {
        self.space.field()
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize) -> Complex64 {
        self.values[i]
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_one_bounded(&self) -> bool {
        self.max_modulus() <= 1.0 + ONE_BOUNDED_TOL
    }

    pub fn mean(&self) -> Complex64 {
        par::mean_c64(&self.values)
    }

    /// `E_x |f(x)|^2`.
    pub fn mean_sq(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        par::mean_f64(&sq)
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::TableMismatch(format!(
                "p={} m={} vs p={} m={}",
                self.space.p(),
                self.space.dim(),
                other.space.p(),
                other.space.dim()
            )));
        }
        Ok(())
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Sync + Send,
    {
        let v = &self.values;
        Self::from_fn(&self.space, |i| f(v[i]))
    }

    pub fn zip_with<F>(&self, other: &Self, f: F) -> Result<Self>
    where
        F: Fn(Complex64, Complex64) -> Complex64 + Sync + Send,
    {
        self.same_shape(other)?;
        let (a, b) = (&self.values, &other.values);
        Ok(Self::from_fn(&self.space, |i| f(a[i], b[i])))
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sub_const(&self, c: Complex64) -> Self {
        self.map(|v| v - c)
    }

    /// `x -> f(x + v)`.
    pub fn translate(&self, v: &GroupVector) -> Result<Self> {
        let vi = self.space.encode(v)?;
        let ar = self.space.arith();
        let vals = &self.values;
        Ok(Self::from_fn(&self.space, |x| vals[ar.add(x, vi)]))
    }

    /// Pulls `f` back through the parameterization of `c`, giving a table on
    /// F_p^{dim c}. Parameter index t maps to `c.point_index(t)`.
    pub fn restrict(&self, c: &AffineSubspace) -> Result<Self> {
        if c.space() != &self.space {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: c.ambient_dim(),
            });
        }
        if c.is_empty() {
            return Err(Error::EmptyCoset);
        }
        let ps = c.param_space()?;
        let idx = c.enumerate_indices();
        let vals = &self.values;
        Ok(Self::from_fn(&ps, |t| vals[idx[t]]))
    }

    /// Lifts a table on F_p^n to F_p^n x F_p^n via `(x, y) -> a(slot(x, y))`.
    pub fn product_lift(&self, slot: Slot) -> Result<Self> {
        let big = self.space.squared()?;
        let n_size = self.space.size();
        let ar = self.space.arith();
        let vals = &self.values;
        Ok(Self::from_fn(&big, |i| {
            let (x, y) = (i % n_size, i / n_size);
            vals[slot.apply(&ar, x, y)]
        }))
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Writes `p=<p> m=<m> kind=<kind>` followed by one `re im` line per index.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let kind = match self.kind {
            Kind::Complex => "complex",
            Kind::Real => "real",
            Kind::Indicator => "indicator",
        };
        writeln!(
            w,
            "p={} m={} kind={}",
            self.space.p(),
            self.space.dim(),
            kind
        )?;
        for v in &self.values {
            // {:?} on f64 prints the shortest string that round-trips
            writeln!(w, "{:?} {:?}", v.re, v.im)?;
        }
        Ok(())
    }

    /// Reads a function file. A set file (header without `kind=`) is also
    /// accepted and yields its indicator.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (p, m, kind) = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "missing header".into(),
                    })
                }
                Some((i, l)) => {
                    let l = l?;
                    if l.trim().is_empty() || l.trim_start().starts_with('#') {
                        continue;
                    }
                    break parse_header(&l, i + 1)?;
                }
            }
        };
        let space = Space::new(PrimeField::new(p)?, m)?;
        if kind.is_none() {
            let rest: Vec<(usize, String)> = lines
                .map(|(i, l)| l.map(|s| (i, s)))
                .collect::<std::io::Result<_>>()?;
            return Ok(IndicatorSet::parse_members(&space, rest)?.into_table());
        }
        let mut values = Vec::with_capacity(space.size());
        for (i, l) in lines {
            let l = l?;
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut parts = t.split_whitespace();
            let re = parse_f64(parts.next(), i + 1)?;
            let im = match parts.next() {
                Some(s) => parse_f64(Some(s), i + 1)?,
                None => 0.0,
            };
            values.push(Complex64::new(re, im));
        }
        Self::new(&space, values)
    }
}

fn parse_f64(s: Option<&str>, line: usize) -> Result<f64> {
    s.ok_or_else(|| Error::Parse {
        line,
        msg: "missing value".into(),
    })?
    .parse::<f64>()
    .map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

/// Parses `p=<p> m=<m> [kind=<kind>]`.
pub(crate) fn parse_header(line: &str, lineno: usize) -> Result<(u64, usize, Option<Kind>)> {
    let mut p = None;
    let mut m = None;
    let mut kind = None;
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("bad header token {tok:?}"),
        })?;
        let bad = |e: String| Error::Parse {
            line: lineno,
            msg: e,
        };
        match k {
            "p" => p = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "m" | "n" => m = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "kind" => {
                kind = Some(match v {
                    "complex" => Kind::Complex,
                    "real" => Kind::Real,
                    "indicator" => Kind::Indicator,
                    other => return Err(bad(format!("unknown kind {other:?}"))),
                })
            }
            _ => {}
        }
    }
    match (p, m) {
        (Some(p), Some(m)) => Ok((p, m, kind)),
        _ => Err(Error::Parse {
            line: lineno,
            msg: "header must contain p=<p> m=<m>".into(),
        }),
    }
}

fn infer_kind(values: &[Complex64]) -> Kind {
    if values
        .iter()
        .all(|v| v.im == 0.0 && (v.re == 0.0 || v.re == 1.0))
    {
        Kind::Indicator
    } else if values.iter().all(|v| v.im == 0.0) {
        Kind::Real
    } else {
        Kind::Complex
    }
}

/// The four linear maps F_p^n x F_p^n -> F_p^n used to lift functions of one
/// variable to the product space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Y,
    XPlusY,
    TwoXPlusY,
    X,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Y, Slot::XPlusY, Slot::TwoXPlusY, Slot::X];

    /// Evaluates the slot on canonical indices of x and y.
    #[inline]
    pub fn apply(&self, ar: &crate::group::IndexArith, x: usize, y: usize) -> usize {
        match self {
            Slot::Y => y,
            Slot::X => x,
            Slot::XPlusY => ar.add(x, y),
            Slot::TwoXPlusY => ar.add(ar.add(x, x), y),
        }
    }
}

/// A subset of F_p^m stored as its indicator table.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorSet {
    table: FunctionTable,
    cardinality: u64,
}

impl IndicatorSet {
    pub fn from_table(table: FunctionTable) -> Result<Self> {
        if table.kind != Kind::Indicator {
            return Err(Error::InvalidArgument("table is not 0/1-valued".into()));
        }
        let cardinality = table.values.iter().filter(|v| v.re == 1.0).count() as u64;
        Ok(Self { table, cardinality })
    }

    pub fn from_pred<F>(space: &Space, pred: F) -> Self
    where
        F: Fn(usize) -> bool + Sync + Send,
    {
        let mut table = FunctionTable::from_fn(space, |i| {
            Complex64::new(if pred(i) { 1.0 } else { 0.0 }, 0.0)
        });
        table.kind = Kind::Indicator;
        let cardinality = table.values.iter().filter(|v| v.re == 1.0).count() as u64;
        Self { table, cardinality }
    }

    pub fn from_indices(space: &Space, members: &[usize]) -> Result<Self> {
        let mut mask = vec![false; space.size()];
        for &i in members {
            if i >= space.size() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    size: space.size(),
                });
            }
            mask[i] = true;
        }
        Ok(Self::from_mask(space, &mask))
    }

    pub fn from_mask(space: &Space, mask: &[bool]) -> Self {
        Self::from_pred(space, |i| mask[i])
    }

    pub fn empty(space: &Space) -> Self {
        Self::from_pred(space, |_| false)
    }

    pub fn full(space: &Space) -> Self {
        Self::from_pred(space, |_| true)
    }

    pub fn from_subspace(c: &AffineSubspace) -> Self {
        Self::from_pred(c.space(), |i| c.contains_index(i))
    }

    pub fn space(&self) -> &Space {
        self.table.space()
    }

    pub fn table(&self) -> &FunctionTable {
        &self.table
    }

    pub fn into_table(self) -> FunctionTable {
        self.table
    }

    pub fn cardinality(&self) -> u64 {
        self.cardinality
    }

    pub fn density(&self) -> f64 {
        self.cardinality as f64 / self.table.len() as f64
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.table.values[i].re == 1.0
    }

    pub fn mask(&self) -> Vec<bool> {
        self.table.values.iter().map(|v| v.re == 1.0).collect()
    }

    pub fn members(&self) -> Vec<usize> {
        (0..self.table.len())
            .filter(|&i| self.contains(i))
            .collect()
    }

    /// `S - mu(S)`.
    pub fn balanced(&self) -> FunctionTable {
        self.table.sub_const(Complex64::new(self.density(), 0.0))
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.table.same_shape(&other.table)?;
        Ok(Self::from_pred(self.space(), |i| {
            self.contains(i) && other.contains(i)
        }))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.table.same_shape(&other.table)?;
        Ok(Self::from_pred(self.space(), |i| {
            self.contains(i) || other.contains(i)
        }))
    }

    pub fn complement(&self) -> Self {
        Self::from_pred(self.space(), |i| !self.contains(i))
    }

    /// Writes the header followed by one canonical index per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p={} m={}", self.space().p(), self.space().dim())?;
        for i in self.members() {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut rest = Vec::new();
        for (i, l) in r.lines().enumerate() {
            let l = l?;
            if header.is_none() {
                if l.trim().is_empty() || l.trim_start().starts_with('#') {
                    continue;
                }
                header = Some(parse_header(&l, i + 1)?);
            } else {
                rest.push((i, l));
            }
        }
        let (p, m, kind) = header.ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        if kind.is_some() {
            return Err(Error::Parse {
                line: 1,
                msg: "expected a set file, found a function file".into(),
            });
        }
        let space = Space::new(PrimeField::new(p)?, m)?;
        Self::parse_members(&space, rest)
    }

    /// Parses member lines: a decimal index or comma-separated digits.
    fn parse_members(space: &Space, lines: Vec<(usize, String)>) -> Result<Self> {
        let mut members = Vec::new();
        for (i, l) in lines {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let idx = if t.contains(',') {
                let digits = t
                    .split(',')
                    .map(|d| d.trim().parse::<u64>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                let v = space.vector(digits).map_err(|e| bad(e.to_string()))?;
                space.encode(&v)?
            } else {
                let idx = t.parse::<usize>().map_err(|e| bad(e.to_string()))?;
                if idx >= space.size() {
                    return Err(bad(format!("index {idx} out of range")));
                }
                idx
            };
            members.push(idx);
        }
        Self::from_indices(space, &members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(p: u64, m: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), m).unwrap()
    }

    fn random_table(space: &Space, seed: u64) -> FunctionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..space.size())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        FunctionTable::new(space, v).unwrap()
    }

    #[test]
    fn balanced_examples() {
        let s = sp(3, 2);
        assert!(IndicatorSet::full(&s)
            .balanced()
            .values()
            .iter()
            .all(|v| v.norm() == 0.0));
        assert!(IndicatorSet::empty(&s)
            .balanced()
            .values()
            .iter()
            .all(|v| v.norm() == 0.0));
        let h = IndicatorSet::from_pred(&s, |i| i % 3 == 0);
        let g = h.balanced();
        for i in 0..9 {
            let want = if i % 3 == 0 { 2.0 / 3.0 } else { -1.0 / 3.0 };
            assert!((g.get(i).re - want).abs() < 1e-15);
        }
        assert!(g.mean().norm() < 1e-12);
    }

    #[test]
    fn restrict_examples() {
        let s = sp(3, 3);
        let f = random_table(&s, 1);
        assert_eq!(f.restrict(&AffineSubspace::full(&s)).unwrap(), f);
        let one = FunctionTable::ones(&s);
        let c = AffineSubspace::from_normals(&s, &[GroupVector::from_digits(vec![1, 2, 1])], &[2])
            .unwrap();
        let r = one.restrict(&c).unwrap();
        assert!(r.values().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let rf = f.restrict(&c).unwrap();
        assert_eq!(rf.len(), 9);
        for (t, x) in c.enumerate().enumerate() {
            assert_eq!(rf.get(t), f.get(s.encode(&x).unwrap()));
        }
        let e = AffineSubspace::from_normals(
            &s,
            &[
                GroupVector::from_digits(vec![1, 0, 0]),
                GroupVector::from_digits(vec![2, 0, 0]),
            ],
            &[1, 1],
        )
        .unwrap();
        assert_eq!(f.restrict(&e), Err(Error::EmptyCoset));
    }

    #[test]
    fn restrict_translate_consistent() {
        let s = sp(3, 3);
        let f = random_table(&s, 2);
        let v = GroupVector::from_digits(vec![2, 1, 0]);
        let c = AffineSubspace::from_normals(&s, &[GroupVector::from_digits(vec![0, 1, 1])], &[1])
            .unwrap();
        let lhs = f.translate(&v).unwrap().restrict(&c).unwrap();
        let shifted = c.translate(&v).unwrap();
        for (t, x) in c.enumerate().enumerate() {
            let xv = s.add(&x, &v).unwrap();
            assert!(shifted.contains(&xv));
            assert_eq!(lhs.get(t), f.get(s.encode(&xv).unwrap()));
        }
    }

    #[test]
    fn product_lift_examples() {
        let s = sp(3, 2);
        let big = s.squared().unwrap();
        let one = FunctionTable::ones(&s).product_lift(Slot::Y).unwrap();
        assert_eq!(one, FunctionTable::ones(&big));
        let d0 = IndicatorSet::from_indices(&s, &[0]).unwrap();
        let lift = IndicatorSet::from_table(d0.table().product_lift(Slot::Y).unwrap()).unwrap();
        assert!((lift.density() - 1.0 / 9.0).abs() < 1e-15);
        for i in lift.members() {
            assert_eq!(i / 9, 0);
        }
        let h = IndicatorSet::from_pred(&s, |i| i % 3 == 0);
        let lift =
            IndicatorSet::from_table(h.table().product_lift(Slot::TwoXPlusY).unwrap()).unwrap();
        assert_eq!(lift.cardinality(), 27);
    }

    #[test]
    fn lift_preserves_density_exhaustively() {
        let s = sp(3, 1);
        for mask in 0u32..8 {
            let a = IndicatorSet::from_pred(&s, |i| mask >> i & 1 == 1);
            for slot in Slot::ALL {
                let l = IndicatorSet::from_table(a.table().product_lift(slot).unwrap()).unwrap();
                assert_eq!(l.cardinality(), 3 * a.cardinality());
            }
        }
    }

    #[test]
    fn set_file_round_trip() {
        let s = sp(5, 2);
        let a = IndicatorSet::from_indices(&s, &[0, 3, 7, 24]).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = IndicatorSet::read_from(&buf[..]).unwrap();
        assert_eq!(a, b);
        let mut buf2 = Vec::new();
        b.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        let digits = "p=5 m=2\n3,0\n2,1\n";
        let c = IndicatorSet::read_from(digits.as_bytes()).unwrap();
        assert_eq!(c.members(), vec![3, 7]);
        assert!(IndicatorSet::read_from("p=5 m=2\n5,0\n".as_bytes()).is_err());
    }

    #[test]
    fn function_file_round_trip() {
        let s = sp(3, 2);
        let f = random_table(&s, 9);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = FunctionTable::read_from(&buf[..]).unwrap();
        assert_eq!(f, g);
    }
}
