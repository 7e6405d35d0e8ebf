//! Definition-path evaluations: plain nested sums over all cubes, with no
//! transforms and no recursion. Slow by design; used for audits and as test
//! oracles for the fast paths.

use num_complex::Complex64;

use crate::error::Result;
use crate::norms::{factor_space, DirectionSet, NormValue, Star};
use crate::table::FunctionTable;

fn signed(v: Complex64, w: usize) -> Complex64 {
    if w.count_ones() % 2 == 1 {
        v.conj()
    } else {
        v
    }
}

/// `||f||_{U^s}^{2^s} = E_{x, h_1..h_s} prod_w C^{|w|} f(x + w.h)`.
pub fn gowers_u_definition(f: &FunctionTable, s: u32) -> Result<NormValue> {
    let sp = f.space();
    let size = sp.size();
    sp.check_work(
        "gowers_u_definition",
        (size as u128).saturating_pow(s + 1).saturating_mul(1 << s),
    )?;
    let ar = sp.arith();
    let tuples = size.pow(s + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut coords = vec![0usize; s as usize + 1];
    for mut t in 0..tuples {
        for c in coords.iter_mut() {
            *c = t % size;
            t /= size;
        }
        let mut prod = Complex64::new(1.0, 0.0);
        for w in 0..(1usize << s) {
            let mut pt = coords[0];
            for j in 0..s as usize {
                if w >> j & 1 == 1 {
                    pt = ar.add(pt, coords[j + 1]);
                }
            }
            prod *= signed(f.get(pt), w);
        }
        acc += prod;
    }
    NormValue::from_raw(acc.re / tuples as f64, 1 << s)
}

/// `E_{x,y,x',y'} g(x,y) conj g(x,y') conj g(x',y) g(x',y')`.
pub fn box_norm_definition(g: &FunctionTable) -> Result<NormValue> {
    let n = factor_space(g.space())?.size();
    g.space()
        .check_work("box_norm_definition", (n as u128).pow(4))?;
    let at = |x: usize, y: usize| g.get(x + n * y);
    let mut acc = Complex64::new(0.0, 0.0);
    for x in 0..n {
        for y in 0..n {
            for x2 in 0..n {
                for y2 in 0..n {
                    acc += at(x, y) * at(x, y2).conj() * at(x2, y).conj() * at(x2, y2);
                }
            }
        }
    }
    NormValue::from_raw(acc.re / (n as f64).powi(4), 4)
}

/// `E_{x,y,h_1..h_k} prod_w C^{|w|} g((x,y) + sum_j w_j (a_j h_j, b_j h_j))`.
pub fn directional_average_definition(g: &FunctionTable, dirs: &DirectionSet) -> Result<Complex64> {
    let ns = factor_space(g.space())?;
    let n = ns.size();
    let k = dirs.len();
    g.space().check_work(
        "directional_average_definition",
        (g.len() as u128) * (n as u128).pow(k as u32) * (1 << k),
    )?;
    let ar = ns.arith();
    let pats = dirs.patterns();
    let tuples = n.pow(k as u32);
    let mut hs = vec![0usize; k];
    let mut acc = Complex64::new(0.0, 0.0);
    for x in 0..n {
        for y in 0..n {
            for mut t in 0..tuples {
                for h in hs.iter_mut() {
                    *h = t % n;
                    t /= n;
                }
                let mut prod = Complex64::new(1.0, 0.0);
                for w in 0..(1usize << k) {
                    let (mut px, mut py) = (x, y);
                    for j in 0..k {
                        if w >> j & 1 == 1 {
                            px = ar.add(px, ar.scale(pats[j].0, hs[j]));
                            py = ar.add(py, ar.scale(pats[j].1, hs[j]));
                        }
                    }
                    prod *= signed(g.get(px + n * py), w);
                }
                acc += prod;
            }
        }
    }
    Ok(acc / (g.len() * tuples) as f64)
}

pub fn star_norm_definition(g: &FunctionTable, which: Star) -> Result<NormValue> {
    let dirs = which.directions(g.space().p());
    let raw = directional_average_definition(g, &dirs)?;
    NormValue::from_raw(raw.re, 1 << dirs.len())
}
