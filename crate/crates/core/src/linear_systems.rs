//! Systems of linear forms, Cauchy-Schwarz complexity, and numeric checks of
//! the von Neumann-type bounds that complexity buys.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{in_span, PrimeField, Space};
use crate::norms::gowers_u;
use crate::par;
use crate::table::{FunctionTable, Kind};

/// Largest number of forms accepted by the complexity search.
pub const MAX_FORMS: usize = 12;

/// Forms `(F_p^n)^r -> (F_p^n)^blocks` with scalar coefficients. Row j holds
/// `blocks * r` residues; block b of the image is
/// `sum_i row[b * r + i] * v_i`. Single-block systems are the usual forms
/// into F_p^n; two-block systems describe patterns in F_p^n x F_p^n.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LinearFormSystem {
    p: u64,
    r: usize,
    blocks: usize,
    forms: Vec<Vec<u64>>,
}

impl LinearFormSystem {
    pub fn new(field: &PrimeField, r: usize, forms: Vec<Vec<i64>>) -> Result<Self> {
        Self::with_blocks(field, r, 1, forms)
    }

    pub fn with_blocks(
        field: &PrimeField,
        r: usize,
        blocks: usize,
        forms: Vec<Vec<i64>>,
    ) -> Result<Self> {
        if r == 0 || blocks == 0 {
            return Err(Error::InvalidArgument(
                "need at least one variable and block".into(),
            ));
        }
        let mut out = Vec::with_capacity(forms.len());
        for row in forms {
            if row.len() != r * blocks {
                return Err(Error::DimensionMismatch {
                    expected: r * blocks,
                    found: row.len(),
                });
            }
            let row: Vec<u64> = row.into_iter().map(|c| field.reduce(c)).collect();
            if row.iter().all(|&c| c == 0) {
                return Err(Error::InvalidArgument("zero form".into()));
            }
            out.push(row);
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("empty system".into()));
        }
        Ok(Self {
            p: field.p(),
            r,
            blocks,
            forms: out,
        })
    }

    /// Parses a literal such as `[[1,0,0],[1,1,0]]` (negative entries allowed).
    pub fn parse(field: &PrimeField, literal: &str) -> Result<Self> {
        let rows: Vec<Vec<i64>> =
            serde_json::from_str(literal.trim()).map_err(|e| Error::Parse {
                line: 1,
                msg: format!("bad form literal: {e}"),
            })?;
        let r = rows.first().map(|r| r.len()).unwrap_or(0);
        Self::new(field, r, rows)
    }

    /// `x, x+y, .., x+(k-1)y`.
    pub fn progression(field: &PrimeField, k: usize) -> Self {
        Self::new(field, 2, (0..k as i64).map(|i| vec![1, i]).collect()).expect("valid")
    }

    /// Corners `(x,y), (x,y+z), (x+z,y)` in variables (x, y, z).
    pub fn corners(field: &PrimeField) -> Self {
        Self::with_blocks(
            field,
            3,
            2,
            vec![
                vec![1, 0, 0, 0, 1, 0],
                vec![1, 0, 0, 0, 1, 1],
                vec![1, 0, 1, 0, 1, 0],
            ],
        )
        .expect("valid")
    }

    /// L-shapes `(x,y), (x,y+z), (x,y+2z), (x+z,y)` in variables (x, y, z).
    pub fn l_shapes(field: &PrimeField) -> Self {
        Self::with_blocks(
            field,
            3,
            2,
            vec![
                vec![1, 0, 0, 0, 1, 0],
                vec![1, 0, 0, 0, 1, 1],
                vec![1, 0, 0, 0, 1, 2],
                vec![1, 0, 1, 0, 1, 0],
            ],
        )
        .expect("valid")
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn d(&self) -> usize {
        self.forms.len()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn forms(&self) -> &[Vec<u64>] {
        &self.forms
    }

    /// Applies the change of variables `v = M w`; form rows become `row M`.
    pub fn change_variables(&self, m: &[Vec<u64>]) -> Result<Self> {
        let f = PrimeField::new(self.p)?;
        let forms = self
            .forms
            .iter()
            .map(|row| {
                (0..self.blocks)
                    .flat_map(|b| {
                        let blk = &row[b * self.r..(b + 1) * self.r];
                        (0..self.r)
                            .map(|j| {
                                blk.iter()
                                    .enumerate()
                                    .fold(0, |acc, (i, &c)| f.add(acc, f.mul(c, m[i][j])))
                                    as i64
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        Self::with_blocks(&f, self.r, self.blocks, forms)
    }
}

/// For form j, a partition of the other (distinct) forms into classes none
/// of whose spans contains form j. Indices refer to `distinct_forms`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComplexityCertificate {
    pub s: usize,
    pub distinct_forms: Vec<Vec<u64>>,
    pub partitions: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Complexity {
    Finite(ComplexityCertificate),
    /// Form `form` is a scalar multiple of the distinct form `parallel_to`,
    /// so every class holding the latter spans the former.
    Infinite {
        form: usize,
        parallel_to: usize,
    },
}

impl Complexity {
    pub fn value(&self) -> Option<usize> {
        match self {
            Complexity::Finite(c) => Some(c.s),
            Complexity::Infinite { .. } => None,
        }
    }
}

impl ComplexityCertificate {
    /// Re-checks every class with an independent rank test.
    pub fn verify(&self, field: &PrimeField) -> bool {
        let d = self.distinct_forms.len();
        if self.partitions.len() != d {
            return false;
        }
        self.partitions.iter().enumerate().all(|(j, classes)| {
            if classes.len() > self.s + 1 && !(d == 1 && classes.is_empty()) {
                return false;
            }
            let mut seen = vec![false; d];
            for c in classes {
                for &k in c {
                    if k == j || k >= d || seen[k] {
                        return false;
                    }
                    seen[k] = true;
                }
                let vecs: Vec<&[u64]> = c
                    .iter()
                    .map(|&k| self.distinct_forms[k].as_slice())
                    .collect();
                if in_span(field, &vecs, &self.distinct_forms[j]) {
                    return false;
                }
            }
            seen.iter().enumerate().all(|(k, &s)| s || k == j)
        })
    }
}

fn dedup_forms(forms: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let mut out: Vec<Vec<u64>> = Vec::new();
    for f in forms {
        if !out.contains(f) {
            out.push(f.clone());
        }
    }
    out
}

/// Backtracking search for a partition of `others` into at most `k` classes
/// avoiding `target` in every span.
fn partition_into(
    field: &PrimeField,
    forms: &[Vec<u64>],
    target: usize,
    others: &[usize],
    k: usize,
) -> Option<Vec<Vec<usize>>> {
    fn rec(
        field: &PrimeField,
        forms: &[Vec<u64>],
        target: usize,
        others: &[usize],
        k: usize,
        pos: usize,
        classes: &mut Vec<Vec<usize>>,
    ) -> bool {
        if pos == others.len() {
            return true;
        }
        let f = others[pos];
        for c in 0..classes.len() {
            classes[c].push(f);
            let vecs: Vec<&[u64]> = classes[c].iter().map(|&i| forms[i].as_slice()).collect();
            if !in_span(field, &vecs, &forms[target])
                && rec(field, forms, target, others, k, pos + 1, classes)
            {
                return true;
            }
            classes[c].pop();
        }
        if classes.len() < k {
            classes.push(vec![f]);
            if rec(field, forms, target, others, k, pos + 1, classes) {
                return true;
            }
            classes.pop();
        }
        false
    }
    let mut classes = Vec::new();
    if rec(field, forms, target, others, k, 0, &mut classes) {
        Some(classes)
    } else {
        None
    }
}

/// Greedy first-fit partition; gives an upper bound on the class count.
fn greedy_partition(
    field: &PrimeField,
    forms: &[Vec<u64>],
    target: usize,
    others: &[usize],
) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for &f in others {
        let slot = classes.iter().position(|c| {
            let mut vecs: Vec<&[u64]> = c.iter().map(|&i| forms[i].as_slice()).collect();
            vecs.push(&forms[f]);
            !in_span(field, &vecs, &forms[target])
        });
        match slot {
            Some(i) => classes[i].push(f),
            None => classes.push(vec![f]),
        }
    }
    classes
}

/// Smallest s for which the system has Cauchy-Schwarz complexity at most s.
pub fn cs_complexity(sys: &LinearFormSystem) -> Result<Complexity> {
    if sys.blocks() != 1 {
        return Err(Error::InvalidArgument(
            "complexity is defined for forms into F_p^n (one block)".into(),
        ));
    }
    if sys.d() > MAX_FORMS {
        return Err(Error::ResourceLimit {
            what: "forms in complexity search",
            needed: sys.d() as u128,
            cap: MAX_FORMS as u128,
        });
    }
    let field = PrimeField::new(sys.p())?;
    let forms = dedup_forms(sys.forms());
    let d = forms.len();
    for j in 0..d {
        for k in 0..d {
            if k != j && in_span(&field, &[forms[k].as_slice()], &forms[j]) {
                return Ok(Complexity::Infinite {
                    form: j,
                    parallel_to: k,
                });
            }
        }
    }
    let partitions: Vec<Vec<Vec<usize>>> = par::map_indexed_coarse(d, |j| {
        let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
        let mut best = greedy_partition(&field, &forms, j, &others);
        let mut k = best.len();
        while k > 1 {
            match partition_into(&field, &forms, j, &others, k - 1) {
                Some(p) => {
                    best = p;
                    k -= 1;
                }
                None => break,
            }
        }
        best
    });
    let s = partitions
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(0)
        .saturating_sub(1);
    Ok(Complexity::Finite(ComplexityCertificate {
        s,
        distinct_forms: forms,
        partitions,
    }))
}

/// `E_{v in (F_p^n)^r} prod_j f_j(psi_j(v))`, with the exact tuple count when
/// every table is an indicator. Tables live on F_p^{blocks * n}.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemAverage {
    pub average: Complex64,
    pub exact_count: Option<u64>,
}

pub fn system_average(tables: &[&FunctionTable], sys: &LinearFormSystem) -> Result<SystemAverage> {
    if tables.len() != sys.d() {
        return Err(Error::InvalidArgument(format!(
            "{} tables for {} forms",
            tables.len(),
            sys.d()
        )));
    }
    let big = tables[0].space();
    for t in &tables[1..] {
        tables[0].same_shape(t)?;
    }
    if big.p() != sys.p() || !big.dim().is_multiple_of(sys.blocks()) {
        return Err(Error::TableMismatch(
            "tables do not match the system".into(),
        ));
    }
    let ns: Space = big.with_dim(big.dim() / sys.blocks())?;
    let n = ns.size();
    let r = sys.r();
    let tuples = (n as u128).pow(r as u32);
    big.check_work("system_average", tuples * sys.d() as u128 * r as u128)?;
    let ar = ns.arith();
    let p = sys.p() as usize;
    let scaled: Vec<Vec<usize>> = (0..p)
        .map(|c| (0..n).map(|v| ar.scale(c as u64, v)).collect())
        .collect();
    let indicator = tables.iter().all(|t| t.kind() == Kind::Indicator);
    let inner = n.pow(r as u32 - 1);
    let image = |vars: &[usize], row: &[u64]| -> usize {
        let mut idx = 0;
        let mut mult = 1;
        for b in 0..sys.blocks() {
            let mut acc = 0;
            for (i, &v) in vars.iter().enumerate() {
                let c = row[b * r + i] as usize;
                if c != 0 {
                    acc = ar.add(acc, scaled[c][v]);
                }
            }
            idx += acc * mult;
            mult *= n;
        }
        idx
    };
    let per = par::map_indexed_coarse(n, |v0| {
        let mut vars = vec![0usize; r];
        vars[0] = v0;
        let mut count = 0u64;
        let mut terms = Vec::with_capacity(if indicator { 0 } else { inner });
        for mut t in 0..inner {
            for v in vars[1..].iter_mut() {
                *v = t % n;
                t /= n;
            }
            if indicator {
                if sys
                    .forms()
                    .iter()
                    .zip(tables)
                    .all(|(row, tb)| tb.get(image(&vars, row)).re == 1.0)
                {
                    count += 1;
                }
            } else {
                let mut prod = Complex64::new(1.0, 0.0);
                for (row, tb) in sys.forms().iter().zip(tables) {
                    prod *= tb.get(image(&vars, row));
                }
                terms.push(prod);
            }
        }
        (count, par::sum_c64(&terms))
    });
    if indicator {
        let total: u64 = per.iter().map(|x| x.0).sum();
        Ok(SystemAverage {
            average: Complex64::new(total as f64 / tuples as f64, 0.0),
            exact_count: Some(total),
        })
    } else {
        let sums: Vec<Complex64> = per.into_iter().map(|x| x.1).collect();
        Ok(SystemAverage {
            average: par::sum_c64(&sums) / tuples as f64,
            exact_count: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GvnReport {
    pub complexity: Option<usize>,
    pub lhs: f64,
    pub norms: Vec<f64>,
    pub rhs: f64,
    pub holds: bool,
}

fn require_complexity(sys: &LinearFormSystem, s: usize) -> Result<Option<usize>> {
    let cx = cs_complexity(sys)?;
    // a repeated form multiplies two functions at one point, which the
    // norms of the separate factors do not control
    if let Complexity::Finite(cert) = &cx {
        if cert.distinct_forms.len() < sys.d() {
            return Err(Error::Precondition("the system repeats a form".into()));
        }
    }
    let c = cx.value();
    match c {
        Some(c) if c <= s => Ok(Some(c)),
        _ => Err(Error::Precondition(format!(
            "system complexity {c:?} exceeds s = {s}"
        ))),
    }
}

fn require_bounded(fs: &[&FunctionTable]) -> Result<()> {
    if let Some(i) = fs.iter().position(|f| !f.is_one_bounded()) {
        return Err(Error::Precondition(format!("f_{i} is not 1-bounded")));
    }
    Ok(())
}

/// `|E prod_j f_j(psi_j)| <= min_j ||f_j||_{U^{s+1}}`.
pub fn gvn_check(sys: &LinearFormSystem, fs: &[&FunctionTable], s: usize) -> Result<GvnReport> {
    let complexity = require_complexity(sys, s)?;
    require_bounded(fs)?;
    let lhs = system_average(fs, sys)?.average.norm();
    let norms = fs
        .iter()
        .map(|f| gowers_u(f, s as u32 + 1, None).map(|v| v.value))
        .collect::<Result<Vec<_>>>()?;
    let rhs = norms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GvnReport {
        complexity,
        lhs,
        norms,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityReport {
    pub complexity: Option<usize>,
    pub means: Vec<Complex64>,
    /// `||f_j - alpha_j||_{U^{s+1}}`.
    pub deviations: Vec<f64>,
    /// `|E prod f_j(psi_j) - prod alpha_j|`.
    pub lhs: f64,
    /// `d * max_j deviation_j`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn usuniformity_check(
    sys: &LinearFormSystem,
    fs: &[&FunctionTable],
    s: usize,
) -> Result<UniformityReport> {
    let complexity = require_complexity(sys, s)?;
    require_bounded(fs)?;
    let means: Vec<Complex64> = fs.iter().map(|f| f.mean()).collect();
    let deviations = fs
        .iter()
        .zip(&means)
        .map(|(f, &a)| gowers_u(&f.sub_const(a), s as u32 + 1, None).map(|v| v.value))
        .collect::<Result<Vec<_>>>()?;
    let avg = system_average(fs, sys)?.average;
    let prod: Complex64 = means.iter().product();
    let lhs = (avg - prod).norm();
    let rhs = fs.len() as f64 * deviations.iter().copied().fold(0.0, f64::max);
    Ok(UniformityReport {
        complexity,
        means,
        deviations,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

/// A factor `f(a x + b y)` of a product function on F_p^n x F_p^n.
#[derive(Clone, Debug)]
pub struct Factor {
    pub table: FunctionTable,
    pub a: u64,
    pub b: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cs2Report {
    pub complexity: Option<usize>,
    /// `prod_j beta_j`.
    pub beta: f64,
    /// `max_j ||f_j - beta_j||_{U^s}`.
    pub factor_deviation: f64,
    pub threshold: f64,
    /// Proportion of x with `||F(x, .) - beta||_{U^2} >= eps^{1/8}`.
    pub proportion: f64,
    /// `E_x ||F(x, .) - beta||_{U^2}^4`.
    pub mean_fourth_power: f64,
    pub sqrt_eps: f64,
}

/// Forms `l(x,y), l(x,y+h), l(x,y+k), l(x,y+h+k)` in variables (x, y, h, k)
/// for every factor slot `l = a x + b y`.
pub fn cs2_system(field: &PrimeField, factors: &[Factor]) -> Result<LinearFormSystem> {
    let mut rows = Vec::new();
    for f in factors {
        let (a, b) = (f.a as i64, f.b as i64);
        rows.push(vec![a, b, 0, 0]);
        rows.push(vec![a, b, b, 0]);
        rows.push(vec![a, b, 0, b]);
        rows.push(vec![a, b, b, b]);
    }
    LinearFormSystem::new(field, 4, rows)
}

/// Exact proportion of x whose fiber function `F(x, .)` is far from its
/// expected mean in U^2, where `F(x,y) = prod_j f_j(a_j x + b_j y)`.
pub fn cs2_statistic(factors: &[Factor], s: u32, eps: f64) -> Result<Cs2Report> {
    if factors.is_empty() || s == 0 {
        return Err(Error::InvalidArgument("need factors and s >= 1".into()));
    }
    let ns = factors[0].table.space().clone();
    for f in &factors[1..] {
        factors[0].table.same_shape(&f.table)?;
    }
    let field = *ns.field();
    let sys = cs2_system(&field, factors)?;
    let complexity = cs_complexity(&sys)?.value();
    match complexity {
        Some(c) if c < s as usize => {}
        _ => {
            return Err(Error::Precondition(format!(
                "fiber system complexity {complexity:?} exceeds s - 1 = {}",
                s - 1
            )))
        }
    }
    let means: Vec<f64> = factors.iter().map(|f| f.table.mean().re).collect();
    let beta: f64 = means.iter().product();
    let factor_deviation = factors
        .iter()
        .zip(&means)
        .map(|(f, &m)| {
            gowers_u(&f.table.sub_const(Complex64::new(m, 0.0)), s, None).map(|v| v.value)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let n = ns.size();
    let ar = ns.arith();
    let threshold = eps.powf(0.125);
    let fourth = par::map_indexed_coarse(n, |x| {
        let fiber = FunctionTable::from_fn(&ns, |y| {
            let mut v = Complex64::new(1.0, 0.0);
            for f in factors {
                v *= f.table.get(ar.add(ar.scale(f.a, x), ar.scale(f.b, y)));
            }
            v - beta
        });
        crate::spectral::u2_fourth_power(&fiber)
    });
    let far = fourth
        .iter()
        .filter(|&&q| q.max(0.0).powf(0.25) >= threshold)
        .count();
    Ok(Cs2Report {
        complexity,
        beta,
        factor_deviation,
        threshold,
        proportion: far as f64 / n as f64,
        mean_fourth_power: par::mean_f64(&fourth),
        sqrt_eps: eps.sqrt(),
    })
}
