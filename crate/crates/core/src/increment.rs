//! Product-coset partitions and their energy, U^2 pseudorandomization, the
//! constructive density-increment steps, extremal L-free search and the
//! iteration driver that chains them.
//!
//! Thresholds that the underlying arguments leave as unspecified constants
//! are parameters; the defaults are the explicit intermediate constants
//! (`sqrt(tau)/4`, `tau/4`, `tau alpha beta gamma rho / 4`, `eps^4` gain).
//! Uniformity of the restricted sets is measured in U^2 throughout.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::configurations::is_l_free;
use crate::error::{Error, Result};
use crate::group::{in_span, AffineSubspace, GroupVector, PrimeField, Space};
use crate::norms::{factor_space, gowers_u};
use crate::par;
use crate::spectral::inverse_u2;
use crate::structured::{
    build_phi, build_t, fiber_levels, Cell, PhiDescriptor, PhiSpec, TDescriptor,
};
use crate::table::{FunctionTable, IndicatorSet};

const GAIN_SLACK: f64 = 1e-9;

/// Restricted densities of one cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellStats {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `phi^{<=i}(C)` for `0 <= i <= d`.
    pub phi_le: Vec<f64>,
    pub measure: f64,
}

fn coset_density(set: &IndicatorSet, c: &AffineSubspace) -> f64 {
    let idx = c.enumerate_indices();
    idx.iter().filter(|&&i| set.contains(i)).count() as f64 / idx.len() as f64
}

pub fn cell_stats(t: &TDescriptor, cell: &Cell) -> Result<CellStats> {
    let d = t.phi.d();
    let p = cell.space().p();
    let dim = cell.subspace().dim();
    let mut counts = vec![0u64; d + 1];
    for (_, lvl) in fiber_levels(&t.phi, cell)? {
        if let Some(l) = lvl {
            let size = p.pow((dim - l) as u32);
            for c in counts.iter_mut().skip(l) {
                *c += size;
            }
        }
    }
    let cell_size = p.pow(2 * dim as u32) as f64;
    Ok(CellStats {
        beta: coset_density(&t.b, &cell.y_coset()),
        gamma: coset_density(&t.c, &cell.c_coset()),
        delta: coset_density(&t.d, &cell.d_coset()),
        phi_le: counts.iter().map(|&c| c as f64 / cell_size).collect(),
        measure: cell.measure(),
    })
}

/// `sum_C stat(C)^2 mu(C)` for each of the energy terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergySums {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub phi_le: Vec<f64>,
}

impl EnergySums {
    fn total(&self) -> f64 {
        let phi: Vec<f64> = self.phi_le.clone();
        let mut terms = vec![self.beta, self.gamma, self.delta];
        terms.extend(phi);
        par::sum_f64(&terms) / (3 + self.phi_le.len()) as f64
    }
}

/// Cells `(u+V) x (w+V)` covering F_p^n x F_p^n exactly once.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductCosetPartition {
    space: Space,
    d: usize,
    cells: Vec<Cell>,
    stats: Vec<CellStats>,
}

impl ProductCosetPartition {
    pub fn trivial(t: &TDescriptor) -> Result<Self> {
        Self::new(t, vec![Cell::full(t.space())])
    }

    /// Audits membership exhaustively and computes the per-cell stats.
    pub fn new(t: &TDescriptor, cells: Vec<Cell>) -> Result<Self> {
        let ns = t.space();
        let big = ns.size() * ns.size();
        let mut hits = vec![0u32; big];
        for c in &cells {
            if c.space() != ns {
                return Err(Error::PartitionAudit("cell on another space".into()));
            }
            for k in c.points() {
                hits[k] += 1;
            }
        }
        if let Some(k) = hits.iter().position(|&h| h != 1) {
            return Err(Error::PartitionAudit(format!(
                "point {k} is covered {} times",
                hits[k]
            )));
        }
        let stats = par::map_indexed_coarse(cells.len(), |i| cell_stats(t, &cells[i]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space: ns.clone(),
            d: t.phi.d(),
            cells,
            stats,
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn stats(&self) -> &[CellStats] {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sums(&self) -> EnergySums {
        let w = |f: &dyn Fn(&CellStats) -> f64| {
            par::sum_f64(
                &self
                    .stats
                    .iter()
                    .map(|s| f(s) * f(s) * s.measure)
                    .collect::<Vec<_>>(),
            )
        };
        EnergySums {
            beta: w(&|s| s.beta),
            gamma: w(&|s| s.gamma),
            delta: w(&|s| s.delta),
            phi_le: (0..=self.d).map(|i| w(&|s| s.phi_le[i])).collect(),
        }
    }

    /// `1/(4+d) sum_C (beta^2 + gamma^2 + delta^2 + sum_i phi^{<=i}^2) mu(C)`.
    pub fn energy(&self) -> f64 {
        self.sums().total()
    }
}

pub fn energy(partition: &ProductCosetPartition) -> f64 {
    partition.energy()
}

/// Canonical representatives of the cosets of `finer` inside `coset`.
fn sub_cosets(coset: &AffineSubspace, finer: &AffineSubspace) -> Result<Vec<GroupVector>> {
    let ns = coset.space();
    let mut reps = BTreeMap::new();
    for x in coset.enumerate() {
        let b = finer
            .coset_through(&x)?
            .base_point()
            .ok_or(Error::EmptyCoset)?;
        reps.insert(ns.encode(&b)?, b);
    }
    Ok(reps.into_values().collect())
}

/// Splits a cell along every character in `chars` that is nonconstant on
/// its subspace; both factors are re-producted over the common `V'`.
fn split_cell(cell: &Cell, chars: &[GroupVector]) -> Result<Vec<Cell>> {
    let ns = cell.space();
    let field = *ns.field();
    let mut normals = cell.subspace().normals().to_vec();
    for xi in chars {
        let rows: Vec<&[u64]> = normals.iter().map(|v| v.digits()).collect();
        if !xi.is_zero() && !in_span(&field, &rows, xi.digits()) {
            normals.push(xi.clone());
        }
    }
    if normals.len() == cell.codim() {
        return Err(Error::CharacterNotInDual);
    }
    let v2 = AffineSubspace::linear(ns, &normals)?;
    let us = sub_cosets(&cell.x_coset(), &v2)?;
    let ws = sub_cosets(&cell.y_coset(), &v2)?;
    let mut out = Vec::with_capacity(us.len() * ws.len());
    for u in &us {
        for w in &ws {
            out.push(Cell::new(&v2, u, w)?);
        }
    }
    Ok(out)
}

/// Replaces cell `index` by the `p^2` cells of `V' = V cap xi^perp`. For a
/// linear phase the product recipes for the first and second factor (and
/// the C and D slots) give the same cells.
pub fn refine_on_character(
    partition: &ProductCosetPartition,
    index: usize,
    xi: &GroupVector,
    t: &TDescriptor,
) -> Result<ProductCosetPartition> {
    partition.cells.get(index).ok_or(Error::IndexOutOfRange {
        index,
        size: partition.len(),
    })?;
    partition.space.encode(xi)?;
    if xi.is_zero() {
        return Err(Error::ZeroCharacter);
    }
    refine_cells(partition, &[(index, vec![xi.clone()])], t)
}

fn refine_cells(
    partition: &ProductCosetPartition,
    splits: &[(usize, Vec<GroupVector>)],
    t: &TDescriptor,
) -> Result<ProductCosetPartition> {
    let mut by_index: BTreeMap<usize, &[GroupVector]> = BTreeMap::new();
    for (i, chars) in splits {
        by_index.insert(*i, chars);
    }
    let mut cells = Vec::new();
    for (i, c) in partition.cells.iter().enumerate() {
        match by_index.get(&i) {
            Some(chars) => cells.extend(split_cell(c, chars)?),
            None => cells.push(c.clone()),
        }
    }
    ProductCosetPartition::new(t, cells)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub coarse: EnergySums,
    pub fine: EnergySums,
    pub holds: bool,
}

/// Checks that `fine` refines `coarse` and that every energy term is
/// non-decreasing.
pub fn energy_monotone_check(
    coarse: &ProductCosetPartition,
    fine: &ProductCosetPartition,
) -> Result<MonotoneReport> {
    if coarse.space != fine.space || coarse.d != fine.d {
        return Err(Error::NotARefinement);
    }
    for f in &fine.cells {
        let inside = coarse.cells.iter().any(|c| {
            f.subspace().direction_within(c.subspace())
                && c.x_coset().contains(f.u())
                && c.y_coset().contains(f.w())
        });
        if !inside {
            return Err(Error::NotARefinement);
        }
    }
    let (a, b) = (coarse.sums(), fine.sums());
    let ge = |x: f64, y: f64| y >= x - GAIN_SLACK;
    let holds = ge(a.beta, b.beta)
        && ge(a.gamma, b.gamma)
        && ge(a.delta, b.delta)
        && a.phi_le.iter().zip(&b.phi_le).all(|(&x, &y)| ge(x, y));
    Ok(MonotoneReport {
        coarse: a,
        fine: b,
        holds,
    })
}

/// The largest U^2 deviation among the restricted sets of a cell and the
/// ambient characters that refine it away.
#[derive(Clone, Debug, PartialEq)]
struct Deviation {
    slot: String,
    value: f64,
    chars: Vec<GroupVector>,
}

fn set_deviation(
    set: &IndicatorSet,
    coset: &AffineSubspace,
    mean: f64,
    slot: &str,
) -> Result<Deviation> {
    let f = set.table().restrict(coset)?.sub_const(mean.into());
    let value = gowers_u(&f, 2, None)?.value;
    let inv = inverse_u2(&f, 0.0)?;
    Ok(Deviation {
        slot: slot.into(),
        value,
        chars: vec![coset.pullback_character(inv.xi.digits())],
    })
}

/// Indicator of `Phi^{<=i}_C` on the parameter square of the cell.
fn phi_level_table(
    t: &TDescriptor,
    cell: &Cell,
    levels: &[(usize, Option<usize>)],
    i: usize,
) -> Result<FunctionTable> {
    let xs = cell.x_coset();
    let ys = cell.y_coset();
    let ps = xs.param_space()?;
    let m = ps.size();
    let mut vals = vec![0.0; m * m];
    for (tx, &(x, lvl)) in levels.iter().enumerate() {
        if !matches!(lvl, Some(l) if l <= i) {
            continue;
        }
        let fiber = t
            .phi
            .fiber(x)
            .expect("leveled x has a fiber")
            .intersect(&ys)?;
        for y in fiber.enumerate() {
            vals[tx + m * ys.param_index(&y)] = 1.0;
        }
    }
    FunctionTable::from_real(&ps.squared()?, vals)
}

fn cell_deviation(t: &TDescriptor, cell: &Cell, st: &CellStats) -> Result<Option<Deviation>> {
    if cell.subspace().dim() == 0 {
        return Ok(None);
    }
    let mut devs = vec![
        set_deviation(&t.b, &cell.y_coset(), st.beta, "B")?,
        set_deviation(&t.c, &cell.c_coset(), st.gamma, "C")?,
        set_deviation(&t.d, &cell.d_coset(), st.delta, "D")?,
    ];
    let levels = fiber_levels(&t.phi, cell)?;
    let dim = cell.subspace().dim();
    for i in 0..=t.phi.d() {
        let f = phi_level_table(t, cell, &levels, i)?.sub_const(st.phi_le[i].into());
        let value = gowers_u(&f, 2, None)?.value;
        let inv = inverse_u2(&f, 0.0)?;
        let (eta_x, eta_y) = inv.xi.digits().split_at(dim);
        devs.push(Deviation {
            slot: format!("Phi<={i}"),
            value,
            chars: vec![
                cell.x_coset().pullback_character(eta_x),
                cell.y_coset().pullback_character(eta_y),
            ],
        });
    }
    // first maximal slot wins
    let best = devs
        .into_iter()
        .fold(None::<Deviation>, |acc, d| match acc {
            Some(a) if a.value >= d.value => Some(a),
            _ => Some(d),
        });
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PseudoRound {
    pub round: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub refined_cells: usize,
    pub refined_measure: f64,
    /// Energy gain divided by the refined measure.
    pub gain_per_measure: f64,
    /// `eps^4 / (4 + d)`.
    pub required_gain: f64,
    pub triggers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub codim: usize,
    pub u: Vec<u64>,
    pub w: Vec<u64>,
    pub level: usize,
    pub s_count: u64,
    pub t_count: u64,
    pub density: f64,
    /// `(sigma + tau/4)` with `sigma = density of S in T - tau`.
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PseudoReport {
    pub eps: f64,
    pub tau: f64,
    pub d: usize,
    /// Restricted sets are tested in U^2 rather than higher norms.
    pub uniformity_norm: &'static str,
    pub rounds: Vec<PseudoRound>,
    /// `(4 + d) / eps^4`.
    pub round_bound: f64,
    pub final_energy: f64,
    pub cells: usize,
    pub expired_measure: f64,
    pub uniform_measure: f64,
    pub nonuniform_measure: f64,
    pub selection: Option<Selection>,
    /// `selected`, `dimension_exhausted` or `no_increment_cell`.
    pub outcome: &'static str,
}

pub struct Pseudorandomized {
    pub partition: ProductCosetPartition,
    pub cell: Option<Cell>,
    pub level: Option<usize>,
    pub report: PseudoReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CellClass {
    Expired,
    Uniform,
    NonUniform,
}

/// Refines into product cosets until the non-expired, non-uniform cells
/// carry less than `tau mu(T) / 2`, then picks a uniform cell and level on
/// which S keeps relative density at least `sigma + tau/4`.
pub fn pseudorandomize_u2(
    t: &TDescriptor,
    s: &IndicatorSet,
    eps: f64,
    tau: f64,
) -> Result<Pseudorandomized> {
    if !(eps > 0.0 && eps < 1.0 && tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(
            "eps and tau must lie in (0, 1)".into(),
        ));
    }
    check_subset(s, t)?;
    let d = t.phi.d();
    let mu_t = t.set().density();
    let expire = tau * mu_t / 4.0;
    let required = eps.powi(4) / (4 + d) as f64;
    let round_bound = (4 + d) as f64 / eps.powi(4);
    let mut part = ProductCosetPartition::trivial(t)?;
    let mut rounds = Vec::new();
    let classify = |part: &ProductCosetPartition| -> Result<Vec<(CellClass, Option<Deviation>)>> {
        par::map_indexed_coarse(part.len(), |i| {
            let st = &part.stats[i];
            if st.beta.min(st.gamma).min(st.delta).min(st.phi_le[d]) < expire {
                return Ok((CellClass::Expired, None));
            }
            match cell_deviation(t, &part.cells[i], st)? {
                Some(dev) if dev.value >= eps => Ok((CellClass::NonUniform, Some(dev))),
                _ => Ok((CellClass::Uniform, None)),
            }
        })
        .into_iter()
        .collect()
    };
    let mut classes = classify(&part)?;
    loop {
        let eta_n: f64 = part
            .stats
            .iter()
            .zip(&classes)
            .filter(|(_, c)| c.0 == CellClass::NonUniform)
            .map(|(s, _)| s.measure)
            .sum();
        if eta_n == 0.0 || eta_n < tau * mu_t / 2.0 {
            break;
        }
        if rounds.len() as f64 >= round_bound {
            return Err(Error::Invariant("round bound exceeded".into()));
        }
        let splits: Vec<(usize, Vec<GroupVector>)> = classes
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.1.as_ref().map(|dev| (i, dev.chars.clone())))
            .collect();
        let triggers = classes
            .iter()
            .filter_map(|c| c.1.as_ref().map(|d| d.slot.clone()))
            .collect();
        let before = part.energy();
        let next = refine_cells(&part, &splits, t)?;
        let after = next.energy();
        let gain_per_measure = (after - before) / eta_n;
        if gain_per_measure < required - GAIN_SLACK {
            return Err(Error::Invariant(format!(
                "energy gain {gain_per_measure} per unit measure is below {required}"
            )));
        }
        rounds.push(PseudoRound {
            round: rounds.len() + 1,
            energy_before: before,
            energy_after: after,
            refined_cells: splits.len(),
            refined_measure: eta_n,
            gain_per_measure,
            required_gain: required,
            triggers,
        });
        part = next;
        classes = classify(&part)?;
    }

    let measure_of = |k: CellClass| -> f64 {
        part.stats
            .iter()
            .zip(&classes)
            .filter(|(_, c)| c.0 == k)
            .map(|(s, _)| s.measure)
            .sum()
    };
    let sigma0 = s.cardinality() as f64 / t.set().cardinality() as f64;
    let target = sigma0 - 0.75 * tau;
    let mut best: Option<(usize, usize, u64, u64)> = None;
    for (ci, (cell, class)) in part.cells.iter().zip(&classes).enumerate() {
        if class.0 != CellClass::Uniform || cell.subspace().dim() == 0 {
            continue;
        }
        let (tc, sc) = level_counts(t, s, cell)?;
        for i in 0..=d {
            if tc[i] > 0 && sc[i] as f64 >= target * tc[i] as f64 - 1e-12 {
                let better = match best {
                    None => true,
                    Some((_, _, bt, _)) => tc[i] > bt,
                };
                if better {
                    best = Some((ci, i, tc[i], sc[i]));
                }
            }
        }
    }
    let (cell, level, selection, outcome) = match best {
        Some((ci, i, tc, sc)) => {
            let c = part.cells[ci].clone();
            let sel = Selection {
                codim: c.codim(),
                u: c.u().digits().to_vec(),
                w: c.w().digits().to_vec(),
                level: i,
                s_count: sc,
                t_count: tc,
                density: sc as f64 / tc as f64,
                target,
            };
            (Some(c), Some(i), Some(sel), "selected")
        }
        None => {
            let exhausted = part.cells.iter().all(|c| c.subspace().dim() == 0);
            (
                None,
                None,
                None,
                if exhausted {
                    "dimension_exhausted"
                } else {
                    "no_increment_cell"
                },
            )
        }
    };
    let report = PseudoReport {
        eps,
        tau,
        d,
        uniformity_norm: "U2",
        round_bound,
        final_energy: part.energy(),
        cells: part.len(),
        expired_measure: measure_of(CellClass::Expired),
        uniform_measure: measure_of(CellClass::Uniform),
        nonuniform_measure: measure_of(CellClass::NonUniform),
        rounds,
        selection,
        outcome,
    };
    Ok(Pseudorandomized {
        partition: part,
        cell,
        level,
        report,
    })
}

/// Counts of `T cap C cap Phi^i_C` and `S cap C cap Phi^i_C` per level.
fn level_counts(t: &TDescriptor, s: &IndicatorSet, cell: &Cell) -> Result<(Vec<u64>, Vec<u64>)> {
    let n = t.space().size();
    let d = t.phi.d();
    let ys = cell.y_coset();
    let (mut tc, mut sc) = (vec![0u64; d + 1], vec![0u64; d + 1]);
    for (x, lvl) in fiber_levels(&t.phi, cell)? {
        let Some(l) = lvl else { continue };
        let fiber = t
            .phi
            .fiber(x)
            .expect("leveled x has a fiber")
            .intersect(&ys)?;
        for y in fiber.enumerate_indices() {
            let k = x + n * y;
            if t.set().contains(k) {
                tc[l] += 1;
                if s.contains(k) {
                    sc[l] += 1;
                }
            }
        }
    }
    Ok((tc, sc))
}

fn check_subset(s: &IndicatorSet, t: &TDescriptor) -> Result<()> {
    if s.space() != t.set().space() {
        return Err(Error::TableMismatch(
            "S and T live on different spaces".into(),
        ));
    }
    if t.set().cardinality() == 0 {
        return Err(Error::Precondition("T is empty".into()));
    }
    if s.members().iter().any(|&k| !t.set().contains(k)) {
        return Err(Error::Precondition("S is not contained in T".into()));
    }
    Ok(())
}

/// `{params s : base + s.basis in f}` for an affine `f` meeting the coset.
fn pull_to_params(coset: &AffineSubspace, f: &AffineSubspace) -> Result<AffineSubspace> {
    let ns = coset.space();
    let field = *ns.field();
    let ps = coset.param_space()?;
    let base = coset.base_point().ok_or(Error::EmptyCoset)?;
    let basis = coset.basis();
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for (nu, &o) in f.normals().iter().zip(f.offsets()) {
        let row: Vec<u64> = basis.iter().map(|b| ns.dot(nu, b)).collect::<Result<_>>()?;
        normals.push(GroupVector::from_digits(row));
        offsets.push(field.sub(o, ns.dot(nu, &base)?));
    }
    AffineSubspace::from_normals(&ps, &normals, &offsets)
}

/// T and S restricted to `C cap Phi^level_C`, in coordinates of the
/// parameter space of V (translation plus the diagonal linear change).
#[derive(Clone, Debug, PartialEq)]
pub struct Restriction {
    pub t: TDescriptor,
    pub s: IndicatorSet,
    pub cell: Cell,
    pub level: usize,
}

pub fn restrict_to_cell(
    t: &TDescriptor,
    s: &IndicatorSet,
    cell: &Cell,
    level: usize,
) -> Result<Restriction> {
    let n = t.space().size();
    let xs = cell.x_coset();
    let ys = cell.y_coset();
    let ps = xs.param_space()?;
    let m = ps.size();
    let lift = |set: &IndicatorSet, c: &AffineSubspace| {
        let idx = c.enumerate_indices();
        IndicatorSet::from_pred(&ps, |k| set.contains(idx[k]))
    };
    let b = lift(&t.b, &ys);
    let c = lift(&t.c, &cell.c_coset());
    let d = lift(&t.d, &cell.d_coset());
    let levels = fiber_levels(&t.phi, cell)?;
    let mut fibers = vec![None; m];
    for (tx, &(x, lvl)) in levels.iter().enumerate() {
        if lvl == Some(level) {
            let f = t
                .phi
                .fiber(x)
                .expect("leveled x has a fiber")
                .intersect(&ys)?;
            fibers[tx] = Some(pull_to_params(&ys, &f)?);
        }
    }
    let phi = PhiDescriptor::from_fibers(&ps, fibers)?;
    let t2 = build_t(&b, &c, &d, &phi)?;
    let x_idx = xs.enumerate_indices();
    let y_idx = ys.enumerate_indices();
    let s2 = IndicatorSet::from_pred(&ps.squared()?, |k| {
        t2.set().contains(k) && s.contains(x_idx[k % m] + n * y_idx[k / m])
    });
    let (tc, sc) = level_counts(t, s, cell)?;
    if t2.set().cardinality() != tc[level] || s2.cardinality() != sc[level] {
        return Err(Error::Invariant(
            "restricted counts differ from the cell counts".into(),
        ));
    }
    Ok(Restriction {
        t: t2,
        s: s2,
        cell: cell.clone(),
        level,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Pseudorandomize,
    Deg1,
    Star3Split,
    AlignTranslate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Statistic {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub triggered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A factor set replaced by a subset: `A`, `B`, `C` or `D`.
    Subset {
        slot: &'static str,
        statistic: &'static str,
        /// `majority_sign` (the larger sign class) or `complement`.
        choice: &'static str,
        members: Vec<usize>,
    },
    Offset {
        u: Vec<u64>,
        members: Vec<usize>,
        alpha_u: f64,
    },
    Cell {
        codim: usize,
        u: Vec<u64>,
        w: Vec<u64>,
        level: usize,
        rounds: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementReport {
    pub tool: Tool,
    pub triggered: bool,
    pub statistics: Vec<Statistic>,
    pub before: f64,
    pub after: f64,
    pub gain: f64,
    pub t_size: u64,
    pub t_prime_size: u64,
    pub witness: Option<Witness>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub t_prime: Option<TDescriptor>,
    #[serde(skip)]
    pub s_prime: Option<IndicatorSet>,
}

impl IncrementReport {
    fn no_gain(tool: Tool, sigma: f64, t_size: u64, statistics: Vec<Statistic>) -> Self {
        Self {
            tool,
            triggered: statistics.iter().any(|s| s.triggered),
            statistics,
            before: sigma,
            after: sigma,
            gain: 0.0,
            t_size,
            t_prime_size: t_size,
            witness: None,
            notes: Vec::new(),
            t_prime: None,
            s_prime: None,
        }
    }
}

/// S restricted to T' and its relative density, counted directly.
fn evaluate(t_prime: &TDescriptor, s: &IndicatorSet) -> Result<(IndicatorSet, f64)> {
    let s2 = s.intersect(t_prime.set())?;
    let size = t_prime.set().cardinality();
    let density = if size == 0 {
        0.0
    } else {
        s2.cardinality() as f64 / size as f64
    };
    Ok((s2, density))
}

struct Densities {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    rho: f64,
}

fn densities(t: &TDescriptor) -> Densities {
    Densities {
        alpha: t.phi.alpha(),
        beta: t.b.density(),
        gamma: t.c.density(),
        delta: t.d.density(),
        rho: t.phi.rho(),
    }
}

/// Per-fiber means `(|S_k| - sigma |T_k|) / N` of `g_S` along a family of
/// fibers indexed by `key(x, y)`.
fn fiber_means(
    t: &TDescriptor,
    s: &IndicatorSet,
    sigma: f64,
    key: impl Fn(usize, usize) -> usize,
) -> Vec<f64> {
    let n = t.space().size();
    let mut sc = vec![0u64; n];
    let mut tc = vec![0u64; n];
    for k in t.set().members() {
        let kk = key(k % n, k / n);
        tc[kk] += 1;
        if s.contains(k) {
            sc[kk] += 1;
        }
    }
    (0..n)
        .map(|k| (sc[k] as f64 - sigma * tc[k] as f64) / n as f64)
        .collect()
}

struct Split {
    choice: &'static str,
    members: Vec<usize>,
    t_prime: TDescriptor,
    s_prime: IndicatorSet,
    density: f64,
}

/// Thresholds the means on `index`, takes the larger sign class `X_1` and
/// returns the better of `X' = X_1` and `X' = index \ X_1`.
fn split_on_means(
    index: &IndicatorSet,
    means: &[f64],
    thr: f64,
    s: &IndicatorSet,
    make: impl Fn(&IndicatorSet) -> Result<TDescriptor>,
) -> Result<Option<Split>> {
    let members = index.members();
    let pos: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&k| means[k] >= thr)
        .collect();
    let neg: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&k| means[k] <= -thr)
        .collect();
    if pos.is_empty() && neg.is_empty() {
        return Ok(None);
    }
    let x1 = if pos.len() >= neg.len() { pos } else { neg };
    let x1_set = IndicatorSet::from_indices(index.space(), &x1)?;
    let rest = index.intersect(&x1_set.complement())?;
    let mut best: Option<Split> = None;
    for (choice, cand) in [("majority_sign", x1_set), ("complement", rest)] {
        if cand.cardinality() == 0 {
            continue;
        }
        let t_prime = make(&cand)?;
        if t_prime.set().cardinality() == 0 {
            continue;
        }
        let (s_prime, density) = evaluate(&t_prime, s)?;
        if best.as_ref().is_none_or(|b| density > b.density) {
            best = Some(Split {
                choice,
                members: cand.members(),
                t_prime,
                s_prime,
                density,
            });
        }
    }
    Ok(best)
}

fn finish_split(
    tool: Tool,
    slot: &'static str,
    statistic: &'static str,
    sigma: f64,
    t_size: u64,
    statistics: Vec<Statistic>,
    split: Option<Split>,
    s: &IndicatorSet,
) -> Result<IncrementReport> {
    let Some(sp) = split.filter(|sp| sp.density >= sigma) else {
        return Ok(IncrementReport::no_gain(tool, sigma, t_size, statistics));
    };
    // independent recount from the witness
    let (_, recount) = evaluate(&sp.t_prime, s)?;
    if (recount - sp.density).abs() > 1e-12 {
        return Err(Error::Invariant(
            "increment density does not re-verify".into(),
        ));
    }
    Ok(IncrementReport {
        tool,
        triggered: true,
        statistics,
        before: sigma,
        after: sp.density,
        gain: sp.density - sigma,
        t_size,
        t_prime_size: sp.t_prime.set().cardinality(),
        witness: Some(Witness::Subset {
            slot,
            statistic,
            choice: sp.choice,
            members: sp.members,
        }),
        notes: Vec::new(),
        t_prime: Some(sp.t_prime),
        s_prime: Some(sp.s_prime),
    })
}

fn sigma_of(t: &TDescriptor, s: &IndicatorSet) -> f64 {
    s.cardinality() as f64 / t.set().cardinality() as f64
}

/// Degree-1 increment: rows, columns and antidiagonals `x + y = z`.
pub fn deg1_increment(s: &IndicatorSet, t: &TDescriptor, tau: f64) -> Result<IncrementReport> {
    check_subset(s, t)?;
    let sigma = sigma_of(t, s);
    let t_size = t.set().cardinality();
    let Densities {
        alpha,
        beta,
        gamma,
        delta,
        rho,
    } = densities(t);
    let ar = t.space().arith();
    let rows = fiber_means(t, s, sigma, |x, _| x);
    let cols = fiber_means(t, s, sigma, |_, y| y);
    let anti = fiber_means(t, s, sigma, |x, y| ar.add(x, y));
    let mean_sq =
        |v: &[f64]| par::sum_f64(&v.iter().map(|m| m * m).collect::<Vec<_>>()) / v.len() as f64;
    let r2 = rho * rho;
    let stats = [
        (
            "rows",
            mean_sq(&rows),
            tau * alpha * beta * beta * gamma * gamma * delta * delta * r2,
        ),
        (
            "columns",
            mean_sq(&cols),
            tau * alpha * alpha * beta * gamma * gamma * delta * delta * r2,
        ),
        (
            "antidiagonals",
            mean_sq(&anti),
            tau * alpha * alpha * beta * beta * gamma * delta * delta * r2,
        ),
    ];
    let statistics: Vec<Statistic> = stats
        .iter()
        .map(|&(name, value, threshold)| Statistic {
            name,
            value,
            threshold,
            triggered: value >= threshold && value > 0.0,
        })
        .collect();
    let pick = statistics
        .iter()
        .enumerate()
        .filter(|(_, s)| s.triggered)
        .fold(None::<(usize, f64)>, |acc, (i, s)| {
            let r = s.value / s.threshold;
            match acc {
                Some((_, br)) if br >= r => acc,
                _ => Some((i, r)),
            }
        });
    let Some((which, _)) = pick else {
        return Ok(IncrementReport::no_gain(
            Tool::Deg1,
            sigma,
            t_size,
            statistics,
        ));
    };
    let q = tau.sqrt() / 4.0;
    let split = match which {
        0 => split_on_means(t.phi.a(), &rows, q * beta * gamma * delta * rho, s, |a| {
            build_t(&t.b, &t.c, &t.d, &t.phi.restrict_a(a)?)
        })?,
        1 => split_on_means(&t.b, &cols, q * alpha * gamma * delta * rho, s, |b| {
            build_t(b, &t.c, &t.d, &t.phi)
        })?,
        _ => split_on_means(&t.c, &anti, q * alpha * beta * delta * rho, s, |c| {
            build_t(&t.b, c, &t.d, &t.phi)
        })?,
    };
    let (slot, name) = [("A", "rows"), ("B", "columns"), ("C", "antidiagonals")][which];
    finish_split(Tool::Deg1, slot, name, sigma, t_size, statistics, split, s)
}

/// Star-3 branch: means of `g_S` on the lines `2x + y = z`, split of D.
pub fn star3_fiber_split(s: &IndicatorSet, t: &TDescriptor, tau: f64) -> Result<IncrementReport> {
    check_subset(s, t)?;
    let sigma = sigma_of(t, s);
    let t_size = t.set().cardinality();
    let Densities {
        alpha,
        beta,
        gamma,
        delta,
        rho,
    } = densities(t);
    let ar = t.space().arith();
    let lines = fiber_means(t, s, sigma, |x, y| ar.add(ar.add(x, x), y));
    // ||g_S||_{star3}^2 = E_z |E_{2x+y=z} g_S|^2
    let value = par::sum_f64(&lines.iter().map(|m| m * m).collect::<Vec<_>>()) / lines.len() as f64;
    let base = alpha * beta * gamma * rho;
    let threshold = tau * tau * base * base * delta;
    let statistics = vec![Statistic {
        name: "star3",
        value,
        threshold,
        triggered: value >= threshold && value > 0.0,
    }];
    if !statistics[0].triggered {
        return Ok(IncrementReport::no_gain(
            Tool::Star3Split,
            sigma,
            t_size,
            statistics,
        ));
    }
    let split = split_on_means(&t.d, &lines, tau * base / 4.0, s, |d| {
        build_t(&t.b, &t.c, d, &t.phi)
    })?;
    finish_split(
        Tool::Star3Split,
        "D",
        "star3",
        sigma,
        t_size,
        statistics,
        split,
        s,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KHypothesis {
    /// `E_{x in A} E_y K(x,y)`.
    pub kappa: f64,
    /// `max_{x in A} |E_y K(x,y) - kappa|`.
    pub max_row_deviation: f64,
    /// `max_{x, H} |E_y K(x,y) H(y) - kappa rho|` over affine H of codimension
    /// d; computed for d <= 1.
    pub max_subspace_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignChoice {
    pub u: Vec<u64>,
    pub u_index: usize,
    pub members: Vec<usize>,
    pub alpha_u: f64,
    pub k_psi_size: u64,
    pub s_size: u64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignReport {
    pub d: usize,
    /// `sum_u |A_u| p^d`.
    #[serde(serialize_with = "crate::configurations::as_string")]
    pub identity_lhs: Option<u64>,
    /// `|A| N`.
    #[serde(serialize_with = "crate::configurations::as_string")]
    pub identity_rhs: Option<u64>,
    pub identity_holds: bool,
    pub hypothesis: KHypothesis,
    pub density_before: f64,
    /// `tau alpha rho / 2`.
    pub mass_threshold: f64,
    pub eligible: usize,
    pub best: Option<AlignChoice>,
}

fn k_hypothesis(psi: &PhiDescriptor, k: &IndicatorSet) -> KHypothesis {
    let ns = psi.space();
    let n = ns.size();
    let a = psi.a().members();
    let rows: Vec<f64> = a
        .iter()
        .map(|&x| (0..n).filter(|&y| k.contains(x + n * y)).count() as f64 / n as f64)
        .collect();
    let kappa = if rows.is_empty() {
        0.0
    } else {
        par::sum_f64(&rows) / rows.len() as f64
    };
    let max_row_deviation = rows.iter().map(|r| (r - kappa).abs()).fold(0.0, f64::max);
    let p = ns.p() as usize;
    let max_subspace_deviation = match psi.d() {
        0 => Some(max_row_deviation),
        1 => {
            let ar = ns.arith();
            // normals with leading nonzero digit 1 index the hyperplane families
            let normals: Vec<usize> = (1..n)
                .filter(|&v| {
                    let dg = ns.decode(v).expect("in range");
                    dg.digits().iter().find(|&&c| c != 0) == Some(&1)
                })
                .collect();
            let mut worst: f64 = 0.0;
            for &x in &a {
                for &nu in &normals {
                    let mut hist = vec![0usize; p];
                    for y in 0..n {
                        if k.contains(x + n * y) {
                            hist[ar.dot(nu, y) as usize] += 1;
                        }
                    }
                    for h in hist {
                        worst = worst.max((h as f64 / n as f64 - kappa / p as f64).abs());
                    }
                }
            }
            Some(worst)
        }
        _ => None,
    };
    KHypothesis {
        kappa,
        max_row_deviation,
        max_subspace_deviation,
    }
}

/// Replaces the per-x offsets of `psi` by one common offset u chosen to
/// maximize the density of S on `K cap Psi_u` subject to
/// `mu(A_u) >= tau alpha rho / 2`.
pub fn align_translate(
    psi: &PhiDescriptor,
    k: &IndicatorSet,
    s: &IndicatorSet,
    tau: f64,
) -> Result<AlignReport> {
    if !psi.is_uniform() {
        return Err(Error::Precondition(
            "fibers must share one codimension".into(),
        ));
    }
    let ns = psi.space();
    let n = ns.size();
    if k.space() != psi.table().space() || s.space() != k.space() {
        return Err(Error::TableMismatch(
            "K and S must live on F_p^n x F_p^n".into(),
        ));
    }
    let d = psi.d();
    let p = ns.p();
    let a = psi.a().members();
    let per_u = par::map_indexed_coarse(n, |u| -> Result<(Vec<usize>, u64, u64)> {
        let uv = ns.decode(u)?;
        let mut members = Vec::new();
        let (mut kc, mut sc) = (0u64, 0u64);
        for &x in &a {
            let f = psi.fiber(x).expect("x in A");
            if !f.contains(&uv) {
                continue;
            }
            members.push(x);
        }
        // K cap Psi_u over all of A, restricted to A_u below
        for &x in &members {
            let f = psi.fiber(x).expect("x in A");
            for y in f.coset_through(&uv)?.enumerate_indices() {
                let kk = x + n * y;
                if k.contains(kk) {
                    kc += 1;
                    if s.contains(kk) {
                        sc += 1;
                    }
                }
            }
        }
        Ok((members, kc, sc))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lhs: u64 = per_u.iter().map(|(m, _, _)| m.len() as u64).sum::<u64>() * p.pow(d as u32);
    let rhs = a.len() as u64 * n as u64;
    let alpha = psi.alpha();
    let rho = psi.rho();
    let mass_threshold = tau * alpha * rho / 2.0;
    let (mut k_total, mut s_total) = (0u64, 0u64);
    for k_idx in psi.table().members() {
        if k.contains(k_idx) {
            k_total += 1;
            if s.contains(k_idx) {
                s_total += 1;
            }
        }
    }
    let density_before = if k_total == 0 {
        0.0
    } else {
        s_total as f64 / k_total as f64
    };
    let mut eligible = 0;
    let mut best: Option<AlignChoice> = None;
    for (u, (members, kc, sc)) in per_u.into_iter().enumerate() {
        let alpha_u = members.len() as f64 / n as f64;
        if alpha_u < mass_threshold - 1e-15 || kc == 0 {
            continue;
        }
        eligible += 1;
        let density = sc as f64 / kc as f64;
        if best.as_ref().is_none_or(|b| density > b.density) {
            best = Some(AlignChoice {
                u: ns.decode(u)?.into_digits(),
                u_index: u,
                members,
                alpha_u,
                k_psi_size: kc,
                s_size: sc,
                density,
            });
        }
    }
    Ok(AlignReport {
        d,
        identity_lhs: Some(lhs),
        identity_rhs: Some(rhs),
        identity_holds: lhs == rhs,
        hypothesis: k_hypothesis(psi, k),
        density_before,
        mass_threshold,
        eligible,
        best,
    })
}

/// Runs [`align_translate`] with `K = A(x) B(y) C(x+y) D(2x+y)` and
/// `Psi = Phi`, rebuilding T around the chosen common offset.
pub fn align_increment(s: &IndicatorSet, t: &TDescriptor, tau: f64) -> Result<IncrementReport> {
    check_subset(s, t)?;
    let sigma = sigma_of(t, s);
    let t_size = t.set().cardinality();
    let ns = t.space();
    let n = ns.size();
    let ar = ns.arith();
    let k = IndicatorSet::from_pred(t.set().space(), |kk| {
        let (x, y) = (kk % n, kk / n);
        t.phi.a().contains(x)
            && t.b.contains(y)
            && t.c.contains(ar.add(x, y))
            && t.d.contains(ar.add(ar.add(x, x), y))
    });
    let rep = align_translate(&t.phi, &k, s, tau)?;
    if !rep.identity_holds {
        return Err(Error::Invariant(
            "sum_u |A_u| p^d differs from |A| N".into(),
        ));
    }
    let mut notes = vec![format!(
        "K hypothesis: kappa = {}, max row deviation = {}, max subspace deviation = {:?}",
        rep.hypothesis.kappa,
        rep.hypothesis.max_row_deviation,
        rep.hypothesis.max_subspace_deviation
    )];
    let statistics = vec![Statistic {
        name: "align_identity",
        value: rep.identity_lhs.unwrap_or(0) as f64,
        threshold: rep.identity_rhs.unwrap_or(0) as f64,
        triggered: true,
    }];
    let Some(choice) = rep.best.filter(|c| c.density >= sigma) else {
        notes.push("no offset meets the mass constraint with density at least sigma".into());
        let mut r = IncrementReport::no_gain(Tool::AlignTranslate, sigma, t_size, statistics);
        r.notes = notes;
        return Ok(r);
    };
    let a_u = IndicatorSet::from_indices(ns, &choice.members)?;
    let normals: Vec<Vec<GroupVector>> = (0..n)
        .map(|x| {
            t.phi
                .fiber(x)
                .map(|f| f.normals().to_vec())
                .unwrap_or_default()
        })
        .collect();
    let u = GroupVector::from_digits(choice.u.clone());
    let phi = build_phi(&a_u, &PhiSpec::Normals(normals), &u, t.phi.d())?;
    let t_prime = build_t(&t.b, &t.c, &t.d, &phi)?;
    let (s_prime, density) = evaluate(&t_prime, s)?;
    if t_prime.set().cardinality() != choice.k_psi_size || (density - choice.density).abs() > 1e-12
    {
        return Err(Error::Invariant("aligned T' does not re-verify".into()));
    }
    Ok(IncrementReport {
        tool: Tool::AlignTranslate,
        triggered: true,
        statistics,
        before: sigma,
        after: density,
        gain: density - sigma,
        t_size,
        t_prime_size: t_prime.set().cardinality(),
        witness: Some(Witness::Offset {
            u: choice.u,
            members: choice.members,
            alpha_u: choice.alpha_u,
        }),
        notes,
        t_prime: Some(t_prime),
        s_prime: Some(s_prime),
    })
}

/// Pseudorandomization as an increment step: the selected cell and level,
/// re-coordinatized.
pub fn pseudorandomize_increment(
    s: &IndicatorSet,
    t: &TDescriptor,
    eps: f64,
    tau: f64,
) -> Result<IncrementReport> {
    let sigma = sigma_of(t, s);
    let t_size = t.set().cardinality();
    let pr = pseudorandomize_u2(t, s, eps, tau)?;
    let rounds = pr.report.rounds.len();
    let statistics = vec![Statistic {
        name: "nonuniform_measure",
        value: pr.report.nonuniform_measure,
        threshold: tau * t.set().density() / 2.0,
        triggered: rounds > 0,
    }];
    let (Some(cell), Some(level)) = (pr.cell, pr.level) else {
        let mut r = IncrementReport::no_gain(Tool::Pseudorandomize, sigma, t_size, statistics);
        r.notes.push(pr.report.outcome.into());
        return Ok(r);
    };
    let res = restrict_to_cell(t, s, &cell, level)?;
    let (_, density) = evaluate(&res.t, &res.s)?;
    Ok(IncrementReport {
        tool: Tool::Pseudorandomize,
        triggered: rounds > 0,
        statistics,
        before: sigma,
        after: density,
        gain: density - sigma,
        t_size,
        t_prime_size: res.t.set().cardinality(),
        witness: Some(Witness::Cell {
            codim: cell.codim(),
            u: cell.u().digits().to_vec(),
            w: cell.w().digits().to_vec(),
            level,
            rounds,
        }),
        notes: vec![format!("final energy {}", pr.report.final_energy)],
        t_prime: Some(res.t),
        s_prime: Some(res.s),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Exhaustive,
    Greedy,
    Local,
    Random,
}

impl std::str::FromStr for SearchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Self::Exhaustive),
            "greedy" => Ok(Self::Greedy),
            "local" => Ok(Self::Local),
            "random" => Ok(Self::Random),
            _ => Err(Error::InvalidArgument(format!(
                "unknown search method {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremalResult {
    pub p: u64,
    pub n: usize,
    pub method: SearchMethod,
    pub size: usize,
    pub members: Vec<usize>,
    /// The size is the exact maximum.
    pub exact: bool,
    pub budget_exhausted: bool,
    pub l_free_verified: bool,
    pub work: u64,
    pub seed: u64,
}

/// For each point, the other three points of every nontrivial L-shape
/// through it.
struct LShapes {
    through: Vec<Vec<[usize; 3]>>,
}

impl LShapes {
    fn new(ns: &Space) -> Self {
        let n = ns.size();
        let ar = ns.arith();
        let mut through = vec![Vec::new(); n * n];
        for x in 0..n {
            for y in 0..n {
                for z in 1..n {
                    let pts = [
                        x + n * y,
                        x + n * ar.add(y, z),
                        x + n * ar.add(ar.add(y, z), z),
                        ar.add(x, z) + n * y,
                    ];
                    for i in 0..4 {
                        let mut rest = [0; 3];
                        let mut j = 0;
                        for (k, &q) in pts.iter().enumerate() {
                            if k != i {
                                rest[j] = q;
                                j += 1;
                            }
                        }
                        through[pts[i]].push(rest);
                    }
                }
            }
        }
        Self { through }
    }

    fn completes(&self, mask: &[bool], pt: usize) -> bool {
        self.through[pt].iter().any(|r| r.iter().all(|&q| mask[q]))
    }
}

fn greedy_fill(shapes: &LShapes, mask: &mut [bool], order: &[usize]) -> u64 {
    let mut work = 0;
    for &pt in order {
        work += 1;
        if !mask[pt] && !shapes.completes(mask, pt) {
            mask[pt] = true;
        }
    }
    work
}

/// Largest L-free subset of F_p^n x F_p^n found by the chosen method.
pub fn search_extremal_l_free(
    p: u64,
    n: usize,
    method: SearchMethod,
    budget: u64,
    seed: u64,
) -> Result<(IndicatorSet, ExtremalResult)> {
    let ns = Space::new(PrimeField::new(p)?, n)?;
    let big = ns.squared()?;
    let total = big.size();
    if method == SearchMethod::Exhaustive && total > 25 {
        return Err(Error::Precondition(format!(
            "exhaustive search needs p^(2n) <= 25, got {total}"
        )));
    }
    let shapes = LShapes::new(&ns);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = 0u64;
    let mut budget_exhausted = false;
    let mut exact = false;
    let best: Vec<bool> = match method {
        SearchMethod::Exhaustive => {
            let mut mask = vec![false; total];
            let mut best = vec![false; total];
            let mut best_size = 0;
            let complete = branch(
                &shapes,
                &mut mask,
                0,
                0,
                &mut best,
                &mut best_size,
                &mut work,
                budget,
            );
            budget_exhausted = !complete;
            exact = complete;
            best
        }
        SearchMethod::Greedy => {
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(&mut rng);
            let mut mask = vec![false; total];
            work += greedy_fill(&shapes, &mut mask, &order);
            mask
        }
        SearchMethod::Random => {
            let mut best = vec![false; total];
            let restarts = budget.max(1);
            for _ in 0..restarts {
                let mut order: Vec<usize> = (0..total).collect();
                order.shuffle(&mut rng);
                let mut mask = vec![false; total];
                work += greedy_fill(&shapes, &mut mask, &order);
                if count(&mask) > count(&best) {
                    best = mask;
                }
            }
            best
        }
        SearchMethod::Local => {
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(&mut rng);
            let mut cur = vec![false; total];
            work += greedy_fill(&shapes, &mut cur, &order);
            let mut best = cur.clone();
            for _ in 0..budget {
                let members: Vec<usize> = (0..total).filter(|&i| cur[i]).collect();
                if members.is_empty() {
                    break;
                }
                let mut cand = cur.clone();
                cand[members[rng.gen_range(0..members.len())]] = false;
                order.shuffle(&mut rng);
                work += greedy_fill(&shapes, &mut cand, &order);
                if count(&cand) >= count(&cur) {
                    cur = cand;
                    if count(&cur) > count(&best) {
                        best = cur.clone();
                    }
                }
            }
            best
        }
    };
    let set = IndicatorSet::from_mask(&big, &best);
    let verified = is_l_free(&set)?;
    if !verified {
        return Err(Error::Invariant(
            "search returned a set with an L-shape".into(),
        ));
    }
    let members = set.members();
    Ok((
        set,
        ExtremalResult {
            p,
            n,
            method,
            size: members.len(),
            members,
            exact,
            budget_exhausted,
            l_free_verified: verified,
            work,
            seed,
        },
    ))
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Include/exclude branch and bound; returns false when the budget ran out.
#[allow(clippy::too_many_arguments)]
fn branch(
    shapes: &LShapes,
    mask: &mut [bool],
    k: usize,
    size: usize,
    best: &mut Vec<bool>,
    best_size: &mut usize,
    work: &mut u64,
    budget: u64,
) -> bool {
    *work += 1;
    if *work > budget {
        return false;
    }
    if size > *best_size {
        *best_size = size;
        best.copy_from_slice(mask);
    }
    if k == mask.len() || size + (mask.len() - k) <= *best_size {
        return true;
    }
    if !shapes.completes(mask, k) {
        mask[k] = true;
        let ok = branch(shapes, mask, k + 1, size + 1, best, best_size, work, budget);
        mask[k] = false;
        if !ok {
            return false;
        }
    }
    branch(shapes, mask, k + 1, size, best, best_size, work, budget)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Planted {
    /// Rows: `x` in a random half of F_p^n.
    HalfA,
    /// Lines `2x + y = z`: `z` in a random half of F_p^n.
    HalfD,
}

impl std::str::FromStr for Planted {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halfA" | "half_a" | "halfa" => Ok(Self::HalfA),
            "halfD" | "half_d" | "halfd" => Ok(Self::HalfD),
            _ => Err(Error::InvalidArgument(format!(
                "unknown planted instance {s:?}"
            ))),
        }
    }
}

/// A seeded subset of F_p^n with no three-term progression `a, a+z, a+2z`.
pub fn progression_free_set(ns: &Space, seed: u64) -> IndicatorSet {
    let ar = ns.arith();
    let mut order: Vec<usize> = (0..ns.size()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut members: Vec<usize> = Vec::new();
    for y in order {
        let closes = members.iter().any(|&a| {
            members
                .iter()
                .any(|&b| a != b && (ar.sub(ar.add(b, b), a) == y || ar.add(a, b) == ar.add(y, y)))
        });
        if !closes {
            members.push(y);
        }
    }
    IndicatorSet::from_pred(ns, |y| members.contains(&y))
}

/// Planted instance on F_p^n x F_p^n. With `l_free` the free coordinate is
/// confined to a progression-free set, which makes the instance L-free.
pub fn planted_instance(
    kind: Planted,
    ns: &Space,
    seed: u64,
    l_free: bool,
) -> Result<IndicatorSet> {
    let n = ns.size();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = IndicatorSet::from_indices(ns, &order[..n.div_ceil(2)])?;
    let free = if l_free {
        progression_free_set(ns, seed ^ 0x5eed)
    } else {
        IndicatorSet::full(ns)
    };
    let ar = ns.arith();
    let big = ns.squared()?;
    Ok(match kind {
        Planted::HalfA => {
            IndicatorSet::from_pred(&big, |k| half.contains(k % n) && free.contains(k / n))
        }
        // the line value 2x + y runs through a progression when the L-shape's
        // three vertical points do
        Planted::HalfD => IndicatorSet::from_pred(&big, |k| {
            let z = ar.add(ar.add(k % n, k % n), k / n);
            half.contains(z) && free.contains(z)
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriverConfig {
    pub eps: f64,
    pub tau: f64,
    /// A step is taken only when its gain exceeds this.
    pub gain_floor: f64,
    pub max_steps: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            tau: 0.1,
            gain_floor: 1e-9,
            max_steps: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub tool: Tool,
    pub sigma_before: f64,
    pub sigma: f64,
    pub gain: f64,
    pub n: usize,
    pub d: usize,
    pub t_size: u64,
    pub s_size: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub l_free: bool,
    pub witness: Option<Witness>,
    pub statistics: Vec<Statistic>,
    /// Gains of every tool tried this step, in trial order.
    pub tried: Vec<(Tool, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub config: DriverConfig,
    pub initial_sigma: f64,
    pub final_sigma: f64,
    pub steps: Vec<StepRecord>,
    pub halted: String,
}

impl Trajectory {
    /// One JSON object per step.
    pub fn json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).map_err(|e| Error::Io(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// The full-space starting data `A = B = C = D = F_p^n`, `Phi = F x F`.
pub fn full_t(ns: &Space) -> Result<TDescriptor> {
    let full = IndicatorSet::full(ns);
    let phi = build_phi(&full, &PhiSpec::Full, &ns.zero(), 0)?;
    build_t(&full, &full, &full, &phi)
}

/// Iterates pseudorandomization and the increment tools, always taking the
/// largest gain, until no tool gains more than the floor.
pub fn increment_driver(s0: &IndicatorSet, cfg: &DriverConfig) -> Result<Trajectory> {
    let ns = factor_space(s0.space())?;
    let l = crate::configurations::count_l(s0)?;
    if let Some(c) = l.nontrivial_count.filter(|&c| c > 0) {
        return Err(Error::NotLFree(c));
    }
    let mut t = full_t(&ns)?;
    let mut s = s0.clone();
    let initial_sigma = sigma_of(&t, &s);
    let mut steps = Vec::new();
    if s.cardinality() == 0 {
        return Ok(Trajectory {
            config: cfg.clone(),
            initial_sigma,
            final_sigma: initial_sigma,
            steps,
            halted: "empty set".into(),
        });
    }
    let halted = loop {
        if steps.len() >= cfg.max_steps {
            break "step limit".to_string();
        }
        let sigma = sigma_of(&t, &s);
        let candidates = [
            pseudorandomize_increment(&s, &t, cfg.eps, cfg.tau)?,
            deg1_increment(&s, &t, cfg.tau)?,
            star3_fiber_split(&s, &t, cfg.tau)?,
            align_increment(&s, &t, cfg.tau)?,
        ];
        let tried: Vec<(Tool, f64)> = candidates.iter().map(|c| (c.tool, c.gain)).collect();
        let best = candidates.into_iter().filter(|c| c.t_prime.is_some()).fold(
            None::<IncrementReport>,
            |acc, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            },
        );
        let Some(best) = best.filter(|b| b.gain > cfg.gain_floor) else {
            break "no tool gains more than the floor".to_string();
        };
        let t2 = best.t_prime.clone().expect("filtered");
        let s2 = best.s_prime.clone().expect("filtered");
        let sigma2 = sigma_of(&t2, &s2);
        if sigma2 < sigma {
            return Err(Error::Invariant("relative density decreased".into()));
        }
        let l_free = is_l_free(&s2)?;
        if !l_free {
            return Err(Error::Invariant(
                "restricted set contains an L-shape".into(),
            ));
        }
        t = t2;
        s = s2;
        let dn = densities(&t);
        let rec = StepRecord {
            step: steps.len() + 1,
            tool: best.tool,
            sigma_before: sigma,
            sigma: sigma2,
            gain: sigma2 - sigma,
            n: t.space().dim(),
            d: t.phi.d(),
            t_size: t.set().cardinality(),
            s_size: s.cardinality(),
            alpha: dn.alpha,
            beta: dn.beta,
            gamma: dn.gamma,
            delta: dn.delta,
            l_free,
            witness: best.witness.clone(),
            statistics: best.statistics.clone(),
            tried,
        };
        log::debug!(
            "step {}: {:?} sigma {} -> {}",
            rec.step,
            rec.tool,
            sigma,
            sigma2
        );
        steps.push(rec);
    };
    Ok(Trajectory {
        config: cfg.clone(),
        initial_sigma,
        final_sigma: sigma_of(&t, &s),
        steps,
        halted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configurations::count_l;
    use crate::structured::random_nonzero_map;

    fn sp(p: u64, n: usize) -> Space {
        Space::new(PrimeField::new(p).unwrap(), n).unwrap()
    }

    fn e(n: usize, i: usize) -> GroupVector {
        let mut d = vec![0; n];
        d[i] = 1;
        GroupVector::from_digits(d)
    }

    fn random_set(ns: &Space, density: f64, seed: u64) -> IndicatorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..ns.size()).map(|_| rng.gen_bool(density)).collect();
        IndicatorSet::from_mask(ns, &mask)
    }

    fn random_t(ns: &Space, seed: u64) -> TDescriptor {
        let a = random_set(ns, 0.8, seed);
        let b = random_set(ns, 0.7, seed + 1);
        let c = random_set(ns, 0.7, seed + 2);
        let d = random_set(ns, 0.7, seed + 3);
        let phi = build_phi(
            &a,
            &PhiSpec::Map(random_nonzero_map(ns, seed + 4)),
            &ns.zero(),
            1,
        )
        .unwrap();
        build_t(&b, &c, &d, &phi).unwrap()
    }

    fn finest(ns: &Space) -> Vec<Cell> {
        let normals: Vec<GroupVector> = (0..ns.dim()).map(|i| e(ns.dim(), i)).collect();
        let v0 = AffineSubspace::linear(ns, &normals).unwrap();
        let mut cells = Vec::new();
        for x in 0..ns.size() {
            for y in 0..ns.size() {
                cells.push(Cell::new(&v0, &ns.decode(x).unwrap(), &ns.decode(y).unwrap()).unwrap());
            }
        }
        cells
    }

    #[test]
    fn trivial_partition_of_full_data_has_energy_one() {
        let ns = sp(3, 2);
        let t = full_t(&ns).unwrap();
        let part = ProductCosetPartition::trivial(&t).unwrap();
        assert!((part.energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finest_partition_energy_matches_pointwise_sum() {
        let ns = sp(3, 2);
        let t = random_t(&ns, 11);
        let part = ProductCosetPartition::new(&t, finest(&ns)).unwrap();
        let n = ns.size();
        let ar = ns.arith();
        let d = t.phi.d();
        let mut total = 0.0;
        for x in 0..n {
            for y in 0..n {
                let ind = |b: bool| if b { 1.0 } else { 0.0 };
                total += ind(t.b.contains(y))
                    + ind(t.c.contains(ar.add(x, y)))
                    + ind(t.d.contains(ar.add(ar.add(x, x), y)))
                    + (d + 1) as f64 * ind(t.phi.table().contains(x + n * y));
            }
        }
        let expected = total / (n * n) as f64 / (4 + d) as f64;
        assert!((part.energy() - expected).abs() < 1e-12);
    }

    #[test]
    fn partition_audit_rejects_overlap() {
        let ns = sp(3, 1);
        let t = full_t(&ns).unwrap();
        let cells = vec![Cell::full(&ns), Cell::full(&ns)];
        assert!(matches!(
            ProductCosetPartition::new(&t, cells),
            Err(Error::PartitionAudit(_))
        ));
    }

    #[test]
    fn refine_counts_and_monotone_chain() {
        let ns = sp(3, 2);
        let t = random_t(&ns, 5);
        let p0 = ProductCosetPartition::trivial(&t).unwrap();
        let p1 = refine_on_character(&p0, 0, &e(2, 0), &t).unwrap();
        assert_eq!(p1.len(), 9);
        let mut p2 = p1.clone();
        for i in (0..9).rev() {
            p2 = refine_on_character(&p2, i, &e(2, 1), &t).unwrap();
        }
        assert_eq!(p2.len(), 81);
        for (a, b) in [(&p0, &p1), (&p1, &p2), (&p0, &p2)] {
            assert!(energy_monotone_check(a, b).unwrap().holds);
        }
        assert!(p0.energy() <= p1.energy() + 1e-12 && p1.energy() <= p2.energy() + 1e-12);
        assert_eq!(energy_monotone_check(&p1, &p0), Err(Error::NotARefinement));
        assert_eq!(
            refine_on_character(&p0, 0, &ns.zero(), &t),
            Err(Error::ZeroCharacter)
        );
        // e_0 is constant on the cells of p1
        assert_eq!(
            refine_on_character(&p1, 0, &e(2, 0), &t),
            Err(Error::CharacterNotInDual)
        );
    }

    #[test]
    fn hyperplane_b_is_refined_away() {
        let ns = sp(3, 2);
        let full = IndicatorSet::full(&ns);
        let b = IndicatorSet::from_pred(&ns, |y| y % 3 == 0);
        let phi = build_phi(&full, &PhiSpec::Full, &ns.zero(), 0).unwrap();
        let t = build_t(&b, &full, &full, &phi).unwrap();
        let p0 = ProductCosetPartition::trivial(&t).unwrap();
        let p1 = refine_on_character(&p0, 0, &e(2, 0), &t).unwrap();
        let m = energy_monotone_check(&p0, &p1).unwrap();
        assert!((m.coarse.beta - 1.0 / 9.0).abs() < 1e-12);
        assert!((m.fine.beta - 1.0 / 3.0).abs() < 1e-12);
        let s = IndicatorSet::empty(t.set().space());
        let pr = pseudorandomize_u2(&t, &s, 0.1, 0.1).unwrap();
        assert!(!pr.report.rounds.is_empty());
        assert_eq!(pr.report.rounds[0].triggers, vec!["B".to_string()]);
        assert!(pr.report.nonuniform_measure < 0.1 * t.set().density() / 2.0);
    }

    #[test]
    fn pseudorandomize_gains_and_selection_density() {
        let ns = sp(3, 2);
        let t = random_t(&ns, 21);
        let s = IndicatorSet::from_pred(t.set().space(), |k| {
            t.set().contains(k) && (k * 7 + 3) % 5 < 2
        });
        let pr = pseudorandomize_u2(&t, &s, 0.3, 0.2).unwrap();
        for r in &pr.report.rounds {
            assert!(r.gain_per_measure >= r.required_gain - 1e-9);
            assert!(r.energy_after > r.energy_before);
        }
        assert!((pr.report.rounds.len() as f64) <= pr.report.round_bound);
        if let (Some(cell), Some(level)) = (&pr.cell, pr.level) {
            let res = restrict_to_cell(&t, &s, cell, level).unwrap();
            let sel = pr.report.selection.as_ref().unwrap();
            assert_eq!(res.t.set().cardinality(), sel.t_count);
            assert_eq!(res.s.cardinality(), sel.s_count);
            assert!(sel.density >= sel.target - 1e-12);
        }
    }

    #[test]
    fn restrict_trivial_cell_is_identity() {
        let ns = sp(3, 2);
        let t = full_t(&ns).unwrap();
        let s = random_set(t.set().space(), 0.3, 2);
        let r = restrict_to_cell(&t, &s, &Cell::full(&ns), 0).unwrap();
        assert_eq!(r.t.set(), t.set());
        assert_eq!(r.s, s);
    }

    #[test]
    fn restrict_to_proper_cell_matches_direct_count() {
        let ns = sp(3, 2);
        let t = random_t(&ns, 8);
        let s = random_set(t.set().space(), 0.5, 9)
            .intersect(t.set())
            .unwrap();
        let v = AffineSubspace::linear(&ns, &[e(2, 1)]).unwrap();
        let cell = Cell::new(&v, &e(2, 1), &GroupVector::from_digits(vec![0, 2])).unwrap();
        let n = ns.size();
        for level in 0..=1 {
            let r = restrict_to_cell(&t, &s, &cell, level).unwrap();
            // oracle: members of T in the cell whose fiber meets the cell in
            // relative codimension `level`
            let levels = fiber_levels(&t.phi, &cell).unwrap();
            let mut tc = 0;
            let mut sc = 0;
            for (x, l) in levels {
                if l != Some(level) {
                    continue;
                }
                for y in 0..n {
                    let k = x + n * y;
                    if cell.contains(x, y) && t.set().contains(k) {
                        tc += 1;
                        sc += s.contains(k) as u64;
                    }
                }
            }
            assert_eq!(r.t.set().cardinality(), tc);
            assert_eq!(r.s.cardinality(), sc);
        }
    }

    #[test]
    fn deg1_finds_planted_half_rows() {
        let ns = sp(3, 2);
        let t = full_t(&ns).unwrap();
        let n = ns.size();
        let s = IndicatorSet::from_pred(t.set().space(), |k| (k % n).is_multiple_of(3));
        let r = deg1_increment(&s, &t, 0.1).unwrap();
        assert!(r.triggered);
        assert!((r.statistics[0].value - 2.0 / 9.0).abs() < 1e-12);
        assert!(r.statistics[1].value.abs() < 1e-12 && r.statistics[2].value.abs() < 1e-12);
        assert!((r.after - 1.0).abs() < 1e-12 && (r.gain - 2.0 / 3.0).abs() < 1e-12);
        match r.witness.as_ref().unwrap() {
            Witness::Subset { slot, members, .. } => {
                assert_eq!(*slot, "A");
                assert_eq!(members, &(0..n).filter(|x| x % 3 == 0).collect::<Vec<_>>());
            }
            w => panic!("unexpected witness {w:?}"),
        }
        let tp = r.t_prime.unwrap();
        assert_eq!(tp.set().cardinality(), 3 * 9);
    }

    #[test]
    fn star3_finds_planted_half_lines() {
        let ns = sp(3, 2);
        let t = full_t(&ns).unwrap();
        let n = ns.size();
        let ar = ns.arith();
        let s = IndicatorSet::from_pred(t.set().space(), |k| {
            let (x, y) = (k % n, k / n);
            ar.add(ar.add(x, x), y).is_multiple_of(3)
        });
        assert!(!deg1_increment(&s, &t, 0.1).unwrap().triggered);
        let r = star3_fiber_split(&s, &t, 0.1).unwrap();
        assert!(r.triggered);
        assert!((r.statistics[0].value - 2.0 / 9.0).abs() < 1e-12);
        let g = FunctionTable::from_real(
            t.set().space(),
            (0..n * n)
                .map(|k| s.contains(k) as u8 as f64 - 1.0 / 3.0)
                .collect(),
        )
        .unwrap();
        let sq = crate::norms::star_norm(&g, crate::norms::Star::Three)
            .unwrap()
            .value;
        assert!((sq * sq - 2.0 / 9.0).abs() < 1e-9);
        assert!((r.after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn align_identity_and_choice_recount() {
        let ns = sp(3, 2);
        let t = random_t(&ns, 31);
        let s = random_set(t.set().space(), 0.4, 32)
            .intersect(t.set())
            .unwrap();
        let n = ns.size();
        let k = IndicatorSet::from_pred(t.set().space(), |kk| t.phi.a().contains(kk % n));
        let rep = align_translate(&t.phi, &k, &s, 0.1).unwrap();
        assert!(rep.identity_holds);
        assert_eq!(rep.identity_rhs, Some(t.phi.a().cardinality() * n as u64));
        let best = rep.best.unwrap();
        // oracle: every offset directly from the fiber predicates
        let mut best_density: f64 = 0.0;
        for u in 0..n {
            let uv = ns.decode(u).unwrap();
            let au: Vec<usize> = (0..n)
                .filter(|&x| t.phi.fiber(x).is_some_and(|f| f.contains(&uv)))
                .collect();
            if (au.len() as f64 / n as f64) < rep.mass_threshold {
                continue;
            }
            let (mut kc, mut sc) = (0, 0);
            for &x in &au {
                let f = t.phi.fiber(x).unwrap();
                for y in 0..n {
                    let yv = ns.decode(y).unwrap();
                    let diff = ns.sub(&yv, &uv).unwrap();
                    if f.direction().contains(&diff) && k.contains(x + n * y) {
                        kc += 1;
                        sc += s.contains(x + n * y) as u64;
                    }
                }
            }
            if kc > 0 {
                best_density = best_density.max(sc as f64 / kc as f64);
            }
        }
        assert!((best.density - best_density).abs() < 1e-12);
        let inc = align_increment(&s, &t, 0.1).unwrap();
        if let Some(tp) = inc.t_prime {
            assert!(tp.phi.common_offset().is_some());
        }
    }

    #[test]
    fn extremal_p3_n1_is_six() {
        let ns = sp(3, 1);
        let big = ns.squared().unwrap();
        let mut oracle = 0;
        for mask in 0u32..512 {
            let bits: Vec<bool> = (0..9).map(|i| mask >> i & 1 == 1).collect();
            let set = IndicatorSet::from_mask(&big, &bits);
            if count_l(&set).unwrap().nontrivial_count == Some(0) {
                oracle = oracle.max(bits.iter().filter(|&&b| b).count());
            }
        }
        assert_eq!(oracle, 6);
        let (_, r) = search_extremal_l_free(3, 1, SearchMethod::Exhaustive, 1 << 20, 0).unwrap();
        assert_eq!(r.size, 6);
        assert!(r.exact && r.l_free_verified);
        for m in [
            SearchMethod::Greedy,
            SearchMethod::Local,
            SearchMethod::Random,
        ] {
            let (set, r) = search_extremal_l_free(3, 1, m, 50, 7).unwrap();
            assert!(r.size <= 6 && is_l_free(&set).unwrap());
        }
        assert!(search_extremal_l_free(3, 2, SearchMethod::Exhaustive, 10, 0).is_err());
    }

    #[test]
    fn driver_empty_and_greedy_sets() {
        let ns = sp(3, 2);
        let big = ns.squared().unwrap();
        let cfg = DriverConfig {
            max_steps: 4,
            ..DriverConfig::default()
        };
        let tr = increment_driver(&IndicatorSet::empty(&big), &cfg).unwrap();
        assert!(tr.steps.is_empty());
        let (s, _) = search_extremal_l_free(3, 2, SearchMethod::Greedy, 0, 3).unwrap();
        let tr = increment_driver(&s, &cfg).unwrap();
        let mut sigma = tr.initial_sigma;
        for st in &tr.steps {
            assert!(st.l_free);
            assert!(st.sigma >= sigma);
            assert!(st.gain > cfg.gain_floor);
            sigma = st.sigma;
        }
        assert_eq!(tr.json_lines().unwrap().lines().count(), tr.steps.len());
        let full = IndicatorSet::full(&big);
        assert!(matches!(
            increment_driver(&full, &cfg),
            Err(Error::NotLFree(_))
        ));
    }
}
