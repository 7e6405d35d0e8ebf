//! Arithmetic, enumeration and subspace geometry for F_p^m.
//!
//! Elements are encoded little-endian base p: the vector `(x_0, .., x_{m-1})`
//! has canonical index `x_0 + x_1 p + .. + x_{m-1} p^{m-1}`. Every table,
//! transform and file format in the crate keys on this index. A pair
//! `(x, y)` in F_p^n x F_p^n is the 2n-digit vector `x ++ y`, so its index is
//! `index(x) + p^n * index(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The prime field F_p. Only odd primes are accepted since the maps
/// `y + 2z` and `2x + y` need 2 to be invertible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeField {
    p: u64,
    strict: bool,
    inv2: u64,
}

fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

impl PrimeField {
    /// Non-strict field; small primes are allowed with a logged warning.
    pub fn new(p: u64) -> Result<Self> {
        Self::with_mode(p, false)
    }

    /// Strict field: additionally rejects p < 11.
    pub fn strict(p: u64) -> Result<Self> {
        Self::with_mode(p, true)
    }

    pub fn with_mode(p: u64, strict: bool) -> Result<Self> {
        if p < 3 || p.is_multiple_of(2) || !is_prime(p) {
            return Err(Error::NotOddPrime(p));
        }
        if p > u32::MAX as u64 {
            return Err(Error::InvalidArgument(format!("p = {p} too large")));
        }
        if p < 11 {
            if strict {
                return Err(Error::StrictModeViolation(p));
            }
            log::warn!("p = {p} < 11: running outside the large-prime regime");
        }
        Ok(Self {
            p,
            strict,
            inv2: p.div_ceil(2),
        })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// Cached inverse of 2.
    #[inline]
    pub fn inv2(&self) -> u64 {
        self.inv2
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        (a + b) % self.p
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        (a + self.p - b % self.p) % self.p
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        (self.p - a % self.p) % self.p
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        (a * b) % self.p
    }

    /// Reduces a signed integer into `[0, p)`.
    #[inline]
    pub fn reduce(&self, a: i64) -> u64 {
        a.rem_euclid(self.p as i64) as u64
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.p;
        base %= self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = a % self.p;
        if a == 0 {
            None
        } else if a == 2 {
            Some(self.inv2)
        } else {
            Some(self.pow(a, self.p - 2))
        }
    }
}

/// Resource caps applied to every guarded computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Maximum number of entries in a dense table.
    pub max_entries: usize,
    /// Maximum estimated elementary operations for a single guarded call.
    pub max_work: u128,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_entries: 1 << 24,
            max_work: 4_000_000_000,
        }
    }
}

/// An element of F_p^m as a digit vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupVector(Vec<u64>);

impl GroupVector {
    pub fn from_digits(digits: Vec<u64>) -> Self {
        Self(digits)
    }

    pub fn zero(m: usize) -> Self {
        Self(vec![0; m])
    }

    pub fn digits(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&d| d == 0)
    }

    pub fn into_digits(self) -> Vec<u64> {
        self.0
    }
}

/// The group F_p^m together with the encoding and resource caps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Space {
    field: PrimeField,
    dim: usize,
    size: usize,
    powers: Vec<usize>,
    limits: Limits,
}

impl Space {
    pub fn new(field: PrimeField, dim: usize) -> Result<Self> {
        Self::with_limits(field, dim, Limits::default())
    }

    pub fn with_limits(field: PrimeField, dim: usize, limits: Limits) -> Result<Self> {
        let p = field.p() as u128;
        let mut size: u128 = 1;
        let mut powers = Vec::with_capacity(dim + 1);
        for _ in 0..=dim {
            powers.push(size.min(usize::MAX as u128) as usize);
            if powers.len() <= dim {
                size *= p;
                if size > limits.max_entries as u128 {
                    return Err(Error::ResourceLimit {
                        what: "table entries",
                        needed: p.saturating_pow(dim as u32),
                        cap: limits.max_entries as u128,
                    });
                }
            }
        }
        powers.truncate(dim);
        Ok(Self {
            field,
            dim,
            size: size as usize,
            powers,
            limits,
        })
    }

    /// The same field and limits in a different dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::with_limits(self.field, dim, self.limits)
    }

    /// F_p^m x F_p^m as a 2m-dimensional space.
    pub fn squared(&self) -> Result<Self> {
        self.with_dim(2 * self.dim)
    }

    #[inline]
    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.field.p()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// p^m.
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    /// Fails with [`Error::ResourceLimit`] when `needed` exceeds the work cap.
    pub fn check_work(&self, what: &'static str, needed: u128) -> Result<()> {
        if needed > self.limits.max_work {
            Err(Error::ResourceLimit {
                what,
                needed,
                cap: self.limits.max_work,
            })
        } else {
            Ok(())
        }
    }

    pub fn vector(&self, digits: Vec<u64>) -> Result<GroupVector> {
        self.check_len(digits.len())?;
        for &d in &digits {
            if d >= self.p() {
                return Err(Error::ResidueOutOfRange {
                    value: d,
                    p: self.p(),
                });
            }
        }
        Ok(GroupVector(digits))
    }

    fn check_len(&self, found: usize) -> Result<()> {
        if found != self.dim {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            })
        } else {
            Ok(())
        }
    }

    pub fn zero(&self) -> GroupVector {
        GroupVector::zero(self.dim)
    }

    /// The i-th standard basis vector.
    pub fn unit(&self, i: usize) -> GroupVector {
        let mut d = vec![0; self.dim];
        d[i] = 1;
        GroupVector(d)
    }

    pub fn encode(&self, v: &GroupVector) -> Result<usize> {
        self.check_len(v.len())?;
        Ok(self.index_of(v.digits()))
    }

    #[inline]
    pub fn index_of(&self, digits: &[u64]) -> usize {
        digits
            .iter()
            .zip(&self.powers)
            .map(|(&d, &pw)| d as usize * pw)
            .sum()
    }

    pub fn decode(&self, index: usize) -> Result<GroupVector> {
        if index >= self.size {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.size,
            });
        }
        let mut d = vec![0; self.dim];
        self.digits_into(index, &mut d);
        Ok(GroupVector(d))
    }

    #[inline]
    pub fn digits_into(&self, mut index: usize, out: &mut [u64]) {
        let p = self.p() as usize;
        for slot in out.iter_mut().take(self.dim) {
            *slot = (index % p) as u64;
            index /= p;
        }
    }

    pub fn add(&self, a: &GroupVector, b: &GroupVector) -> Result<GroupVector> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        let f = &self.field;
        Ok(GroupVector(
            a.0.iter().zip(&b.0).map(|(&x, &y)| f.add(x, y)).collect(),
        ))
    }

    pub fn sub(&self, a: &GroupVector, b: &GroupVector) -> Result<GroupVector> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        let f = &self.field;
        Ok(GroupVector(
            a.0.iter().zip(&b.0).map(|(&x, &y)| f.sub(x, y)).collect(),
        ))
    }

    pub fn neg(&self, a: &GroupVector) -> Result<GroupVector> {
        self.check_len(a.len())?;
        Ok(GroupVector(
            a.0.iter().map(|&x| self.field.neg(x)).collect(),
        ))
    }

    pub fn scale(&self, c: u64, a: &GroupVector) -> Result<GroupVector> {
        self.check_len(a.len())?;
        let c = c % self.p();
        Ok(GroupVector(
            a.0.iter().map(|&x| self.field.mul(c, x)).collect(),
        ))
    }

    pub fn dot(&self, a: &GroupVector, b: &GroupVector) -> Result<u64> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        Ok(dot_digits(&self.field, a.digits(), b.digits()))
    }

    /// All elements in canonical index order.
    pub fn iter(&self) -> impl Iterator<Item = GroupVector> + '_ {
        (0..self.size).map(move |i| {
            let mut d = vec![0; self.dim];
            self.digits_into(i, &mut d);
            GroupVector(d)
        })
    }

    /// Index-level arithmetic helper for hot loops.
    pub fn arith(&self) -> IndexArith {
        IndexArith::new(self)
    }
}

#[inline]
pub(crate) fn dot_digits(f: &PrimeField, a: &[u64], b: &[u64]) -> u64 {
    let p = f.p();
    a.iter()
        .zip(b)
        .fold(0u64, |acc, (&x, &y)| (acc + x * y) % p)
}

/// Group operations on canonical indices. Small spaces use a precomputed
/// addition table; larger ones fall back to digit loops.
#[derive(Clone, Debug)]
pub struct IndexArith {
    p: usize,
    dim: usize,
    size: usize,
    powers: Vec<usize>,
    add_table: Option<Vec<u32>>,
    neg_table: Vec<u32>,
}

const ADD_TABLE_MAX: usize = 256;

impl IndexArith {
    pub fn new(space: &Space) -> Self {
        let p = space.p() as usize;
        let size = space.size();
        let mut me = Self {
            p,
            dim: space.dim(),
            size,
            powers: space.powers.clone(),
            add_table: None,
            neg_table: Vec::new(),
        };
        me.neg_table = (0..size).map(|i| me.neg_slow(i) as u32).collect();
        if size <= ADD_TABLE_MAX {
            let mut t = vec![0u32; size * size];
            for i in 0..size {
                for j in 0..size {
                    t[i * size + j] = me.add_slow(i, j) as u32;
                }
            }
            me.add_table = Some(t);
        }
        me
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn add_slow(&self, mut a: usize, mut b: usize) -> usize {
        let mut r = 0;
        for k in 0..self.dim {
            let d = (a % self.p + b % self.p) % self.p;
            r += d * self.powers[k];
            a /= self.p;
            b /= self.p;
        }
        r
    }

    fn neg_slow(&self, mut a: usize) -> usize {
        let mut r = 0;
        for k in 0..self.dim {
            let d = (self.p - a % self.p) % self.p;
            r += d * self.powers[k];
            a /= self.p;
        }
        r
    }

    #[inline]
    pub fn add(&self, a: usize, b: usize) -> usize {
        match &self.add_table {
            Some(t) => t[a * self.size + b] as usize,
            None => self.add_slow(a, b),
        }
    }

    #[inline]
    pub fn neg(&self, a: usize) -> usize {
        self.neg_table[a] as usize
    }

    #[inline]
    pub fn sub(&self, a: usize, b: usize) -> usize {
        self.add(a, self.neg(b))
    }

    /// `c * a` for a residue `c`.
    pub fn scale(&self, c: u64, mut a: usize) -> usize {
        let c = (c % self.p as u64) as usize;
        let mut r = 0;
        for k in 0..self.dim {
            r += ((a % self.p) * c % self.p) * self.powers[k];
            a /= self.p;
        }
        r
    }

    /// Dot product of two indices, as a residue.
    pub fn dot(&self, mut a: usize, mut b: usize) -> u64 {
        let mut r = 0;
        for _ in 0..self.dim {
            r = (r + (a % self.p) * (b % self.p)) % self.p;
            a /= self.p;
            b /= self.p;
        }
        r as u64
    }
}

/// Row-reduces `rows` in place over F_p, using only the first `pivot_cols`
/// columns for pivots (the rest are carried along, e.g. an augmented column).
/// Zero rows are dropped. Returns the pivot column of each remaining row.
pub fn row_reduce(field: &PrimeField, rows: &mut Vec<Vec<u64>>, pivot_cols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..pivot_cols {
        let Some(sel) = (r..rows.len()).find(|&i| rows[i][c] != 0) else {
            continue;
        };
        rows.swap(r, sel);
        let inv = field.inv(rows[r][c]).expect("nonzero pivot");
        for v in rows[r].iter_mut() {
            *v = field.mul(*v, inv);
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && row[c] != 0 {
                let factor = row[c];
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x = field.sub(*x, field.mul(factor, y));
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    // rows past r have zero pivot part; keep them only if they carry a
    // nonzero augmented entry (caller inspects those).
    let tail: Vec<Vec<u64>> = rows
        .drain(r..)
        .filter(|row| row.iter().any(|&v| v != 0))
        .collect();
    rows.extend(tail);
    pivots
}

/// Rank of a list of vectors over F_p.
pub fn rank(field: &PrimeField, vectors: &[&[u64]]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let cols = vectors[0].len();
    let mut rows: Vec<Vec<u64>> = vectors.iter().map(|v| v.to_vec()).collect();
    row_reduce(field, &mut rows, cols).len()
}

/// Whether `v` lies in the span of `vectors`.
pub fn in_span(field: &PrimeField, vectors: &[&[u64]], v: &[u64]) -> bool {
    if v.iter().all(|&x| x == 0) {
        return true;
    }
    let base = rank(field, vectors);
    let mut all: Vec<&[u64]> = vectors.to_vec();
    all.push(v);
    rank(field, &all) == base
}

/// An affine subset `{x : normals[j] . x = offsets[j] for all j}` of F_p^m,
/// kept in reduced row-echelon form. Inconsistent systems give an explicit
/// empty set rather than an error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineSubspace {
    space: Space,
    normals: Vec<GroupVector>,
    offsets: Vec<u64>,
    pivots: Vec<usize>,
    free: Vec<usize>,
    empty: bool,
}

impl AffineSubspace {
    pub fn from_normals(space: &Space, normals: &[GroupVector], offsets: &[u64]) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals but {} offsets",
                normals.len(),
                offsets.len()
            )));
        }
        let m = space.dim();
        let f = space.field();
        let mut rows = Vec::with_capacity(normals.len());
        for (n, &o) in normals.iter().zip(offsets) {
            space.check_len(n.len())?;
            let mut row: Vec<u64> = n.digits().iter().map(|&d| d % f.p()).collect();
            row.push(o % f.p());
            rows.push(row);
        }
        let pivots = row_reduce(f, &mut rows, m);
        let empty = rows.len() > pivots.len();
        rows.truncate(pivots.len());
        let free = (0..m).filter(|c| !pivots.contains(c)).collect();
        let (normals, offsets) = rows
            .into_iter()
            .map(|mut r| {
                let o = r.pop().unwrap();
                (GroupVector(r), o)
            })
            .unzip();
        Ok(Self {
            space: space.clone(),
            normals,
            offsets,
            pivots,
            free,
            empty,
        })
    }

    pub fn full(space: &Space) -> Self {
        Self::from_normals(space, &[], &[]).expect("empty system is valid")
    }

    /// A linear subspace (all offsets zero).
    pub fn linear(space: &Space, normals: &[GroupVector]) -> Result<Self> {
        Self::from_normals(space, normals, &vec![0; normals.len()])
    }

    /// The coset `point + V` of the direction space of `self`.
    pub fn coset_through(&self, point: &GroupVector) -> Result<Self> {
        let offsets = self
            .normals
            .iter()
            .map(|n| self.space.dot(n, point))
            .collect::<Result<Vec<_>>>()?;
        Self::from_normals(&self.space, &self.normals, &offsets)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn ambient_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Codimension; the empty set reports the ambient dimension.
    pub fn codim(&self) -> usize {
        if self.empty {
            self.space.dim()
        } else {
            self.pivots.len()
        }
    }

    pub fn dim(&self) -> usize {
        if self.empty {
            0
        } else {
            self.free.len()
        }
    }

    pub fn cardinality(&self) -> usize {
        if self.empty {
            0
        } else {
            self.space.p().pow(self.free.len() as u32) as usize
        }
    }

    /// Reduced normals (empty for the full space).
    pub fn normals(&self) -> &[GroupVector] {
        &self.normals
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn free_columns(&self) -> &[usize] {
        &self.free
    }

    /// The parallel linear subspace V.
    pub fn direction(&self) -> Self {
        Self::linear(&self.space, &self.normals).expect("reduced normals are valid")
    }

    pub fn contains(&self, x: &GroupVector) -> bool {
        if self.empty || x.len() != self.space.dim() {
            return false;
        }
        let f = self.space.field();
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, &o)| dot_digits(f, n.digits(), x.digits()) == o)
    }

    pub fn contains_index(&self, index: usize) -> bool {
        match self.space.decode(index) {
            Ok(v) => self.contains(&v),
            Err(_) => false,
        }
    }

    /// Parameter space F_p^dim of this coset.
    pub fn param_space(&self) -> Result<Space> {
        self.space.with_dim(self.dim())
    }

    /// The member with parameter digits `t` (free coordinates = t).
    pub fn point_from_params(&self, t: &[u64]) -> GroupVector {
        let f = self.space.field();
        let mut x = vec![0u64; self.space.dim()];
        for (&c, &tv) in self.free.iter().zip(t) {
            x[c] = tv % f.p();
        }
        for (row, (&pc, &o)) in self
            .normals
            .iter()
            .zip(self.pivots.iter().zip(&self.offsets))
        {
            let mut acc = o;
            for &c in &self.free {
                acc = f.sub(acc, f.mul(row.digits()[c], x[c]));
            }
            x[pc] = acc;
        }
        GroupVector(x)
    }

    /// Ambient index of the member with parameter index `t`.
    pub fn point_index(&self, t: usize) -> usize {
        let mut digits = vec![0; self.free.len()];
        let p = self.space.p() as usize;
        let mut r = t;
        for d in digits.iter_mut() {
            *d = (r % p) as u64;
            r /= p;
        }
        self.space
            .index_of(self.point_from_params(&digits).digits())
    }

    /// Parameter index of a member (its free coordinates).
    pub fn param_index(&self, x: &GroupVector) -> usize {
        let p = self.space.p() as usize;
        self.free
            .iter()
            .rev()
            .fold(0usize, |acc, &c| acc * p + x.digits()[c] as usize)
    }

    /// Member whose parameters are all zero.
    pub fn base_point(&self) -> Option<GroupVector> {
        if self.empty {
            None
        } else {
            Some(self.point_from_params(&vec![0; self.free.len()]))
        }
    }

    /// Direction basis: the j-th vector has a 1 in the j-th free column and
    /// zeros in the other free columns.
    pub fn basis(&self) -> Vec<GroupVector> {
        let f = self.space.field();
        (0..self.free.len())
            .map(|j| {
                let mut x = vec![0u64; self.space.dim()];
                x[self.free[j]] = 1;
                for (row, &pc) in self.normals.iter().zip(&self.pivots) {
                    x[pc] = f.neg(row.digits()[self.free[j]]);
                }
                GroupVector(x)
            })
            .collect()
    }

    /// Members in ascending parameter order.
    pub fn enumerate(&self) -> impl Iterator<Item = GroupVector> + '_ {
        let count = self.cardinality();
        let p = self.space.p() as usize;
        let k = self.free.len();
        (0..count).map(move |t| {
            let mut digits = vec![0u64; k];
            let mut r = t;
            for d in digits.iter_mut() {
                *d = (r % p) as u64;
                r /= p;
            }
            self.point_from_params(&digits)
        })
    }

    pub fn enumerate_indices(&self) -> Vec<usize> {
        (0..self.cardinality())
            .map(|t| self.point_index(t))
            .collect()
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        let normals: Vec<GroupVector> =
            self.normals.iter().chain(&other.normals).cloned().collect();
        let offsets: Vec<u64> = self.offsets.iter().chain(&other.offsets).copied().collect();
        let mut r = Self::from_normals(&self.space, &normals, &offsets)?;
        r.empty |= self.empty || other.empty;
        Ok(r)
    }

    /// `self + v`.
    pub fn translate(&self, v: &GroupVector) -> Result<Self> {
        let f = self.space.field();
        let offsets = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, &o)| Ok(f.add(o, self.space.dot(n, v)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut r = Self::from_normals(&self.space, &self.normals, &offsets)?;
        r.empty = self.empty;
        Ok(r)
    }

    /// Whether the direction space of `self` lies inside that of `other`.
    pub fn direction_within(&self, other: &Self) -> bool {
        let f = self.space.field();
        self.basis().iter().all(|b| {
            other
                .normals
                .iter()
                .all(|n| dot_digits(f, n.digits(), b.digits()) == 0)
        })
    }

    /// Ambient character agreeing with `eta` on the direction basis; lets a
    /// frequency found on the parameter space act on the ambient space.
    pub fn pullback_character(&self, eta: &[u64]) -> GroupVector {
        let mut xi = vec![0u64; self.space.dim()];
        for (&c, &e) in self.free.iter().zip(eta) {
            xi[c] = e;
        }
        GroupVector(xi)
    }
}

/// A linear map F_p^m -> F_p^k given by a k x m matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearMap {
    field: PrimeField,
    rows: Vec<Vec<u64>>,
    cols: usize,
}

impl LinearMap {
    pub fn new(field: PrimeField, rows: Vec<Vec<u64>>, cols: usize) -> Result<Self> {
        for r in &rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
        }
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v % field.p()).collect())
            .collect();
        Ok(Self { field, rows, cols })
    }

    pub fn identity(field: PrimeField, m: usize) -> Self {
        let rows = (0..m)
            .map(|i| (0..m).map(|j| u64::from(i == j)).collect())
            .collect();
        Self {
            field,
            rows,
            cols: m,
        }
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn apply(&self, v: &GroupVector) -> Result<GroupVector> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok(GroupVector(
            self.rows
                .iter()
                .map(|r| dot_digits(&self.field, r, v.digits()))
                .collect(),
        ))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if other.rows.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows.len(),
            });
        }
        let f = &self.field;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                (0..other.cols)
                    .map(|j| {
                        r.iter()
                            .enumerate()
                            .fold(0, |acc, (k, &a)| f.add(acc, f.mul(a, other.rows[k][j])))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            field: self.field,
            rows,
            cols: other.cols,
        })
    }

    pub fn is_invertible(&self) -> bool {
        self.rows.len() == self.cols && {
            let refs: Vec<&[u64]> = self.rows.iter().map(|r| r.as_slice()).collect();
            rank(&self.field, &refs) == self.cols
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        if !self.is_invertible() {
            return None;
        }
        let m = self.cols;
        let mut aug: Vec<Vec<u64>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..m).map(|j| u64::from(i == j)));
                row
            })
            .collect();
        row_reduce(&self.field, &mut aug, m);
        let rows = aug.into_iter().map(|r| r[m..].to_vec()).collect();
        Some(Self {
            field: self.field,
            rows,
            cols: m,
        })
    }
}
