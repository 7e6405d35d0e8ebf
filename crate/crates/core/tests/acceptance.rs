//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use lshape::cli::suites::{random_bounded, run_suite, Assertion, SuiteParams};
use lshape::configurations::{count_l, obstruction_example, ObstructionKind};
use lshape::increment::{search_extremal_l_free, SearchMethod};
use lshape::norms::gowers_u;
use lshape::oracle::gowers_u_definition;
use lshape::{IndicatorSet, PrimeField, Space};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn suites(runs: &[(&str, SuiteParams)]) -> Outcome {
    let mut failed = Vec::new();
    let mut count = 0;
    for (name, prm) in runs {
        let out: Vec<Assertion> = run_suite(name, prm).expect("suite runs");
        for a in out {
            count += 1;
            if !a.passed {
                failed.push(format!(
                    "{}@p{}n{} ({} of {})",
                    a.anchor, prm.p, prm.n, a.violations, a.trials
                ));
            }
        }
    }
    Outcome {
        ok: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{count} assertions")
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn spectral() -> Outcome {
    let mut runs = Vec::new();
    for m in 1..=4 {
        runs.push(("spectral", SuiteParams::new(3, m, 200, 1)));
    }
    for m in 1..=2 {
        runs.push(("spectral", SuiteParams::new(5, m, 200, 1)));
    }
    suites(&runs)
}

fn dot_obstruction() -> Outcome {
    let ob = obstruction_example(ObstructionKind::Dot, 3, 3, 0).unwrap();
    let exact_density = ob.set.cardinality() * 729 == 261 * ob.set.space().size() as u64;
    let counts = count_l(&ob.set).unwrap();
    let all = counts.exact_count.unwrap();
    let nontrivial = counts.nontrivial_count.unwrap();
    let formula = ob.predicted_count.unwrap();
    Outcome {
        ok: exact_density && formula == 1215 && all == formula,
        detail: format!(
            "|S| = {} of {}, L tuples {all} (nontrivial {nontrivial}), closed form {formula}",
            ob.set.cardinality(),
            ob.set.space().size()
        ),
    }
}

fn random_obstructions() -> Outcome {
    let (p, n) = (3u64, 3usize);
    let heuristic = 27f64.powi(3) / (p as f64).powi(3);
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [ObstructionKind::RandomPhi, ObstructionKind::Coordinate] {
        let mut good = 0;
        let mut misses = Vec::new();
        for seed in 0..20 {
            let ob = obstruction_example(kind, p, n, seed).unwrap();
            let d = ob.set.density();
            let c = count_l(&ob.set).unwrap().nontrivial_count.unwrap() as f64;
            if (0.8 / p as f64..=1.2 / p as f64).contains(&d)
                && c >= heuristic / 2.0
                && c <= heuristic * 2.0
            {
                good += 1;
            } else {
                misses.push(format!("seed {seed}: density {d:.4}, count {c}"));
            }
        }
        ok &= good >= 18;
        detail.push(format!("{kind:?} {good}/20 [{}]", misses.join("; ")));
    }
    Outcome {
        ok,
        detail: detail.join(", "),
    }
}

fn control() -> Outcome {
    suites(&[
        ("control", SuiteParams::new(3, 1, 500, 4)),
        ("control", SuiteParams::new(3, 2, 100, 4)),
    ])
}

fn property_suites() -> Outcome {
    let mut runs = Vec::new();
    for p in [3, 5] {
        for n in 1..=2 {
            for s in [
                "gcs",
                "gvn",
                "uniformity",
                "subspace",
                "transfer",
                "telescope",
            ] {
                runs.push((s, SuiteParams::new(p, n, 100, 5)));
            }
        }
    }
    suites(&runs)
}

fn recursion() -> Outcome {
    let agree = suites(&[
        ("recursion", SuiteParams::new(3, 2, 100, 6)),
        ("recursion", SuiteParams::new(5, 1, 100, 6)),
    ]);
    let sp = Space::new(PrimeField::new(3).unwrap(), 2).unwrap();
    let f = random_bounded(&sp, &mut ChaCha8Rng::seed_from_u64(6));
    let best = |g: &dyn Fn()| -> Duration {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                g();
                t.elapsed()
            })
            .min()
            .unwrap()
    };
    let fast = best(&|| {
        gowers_u(&f, 4, None).unwrap();
    });
    let slow = best(&|| {
        gowers_u_definition(&f, 4).unwrap();
    });
    let ratio = slow.as_secs_f64() / fast.as_secs_f64().max(1e-9);
    Outcome {
        ok: agree.ok && ratio >= 10.0,
        detail: format!("{}; speedup {ratio:.1}x at (3,2,4)", agree.detail),
    }
}

fn inverse() -> Outcome {
    suites(&[("inverse", SuiteParams::new(3, 3, 1000, 7))])
}

fn energy() -> Outcome {
    suites(&[("energy", SuiteParams::new(3, 3, 100, 8))])
}

fn extremal() -> Outcome {
    let (set, r) = search_extremal_l_free(3, 1, SearchMethod::Exhaustive, u64::MAX, 0).unwrap();
    let oracle = subset_oracle();
    Outcome {
        ok: r.size == 6 && r.exact && r.l_free_verified && oracle == 6 && set.cardinality() == 6,
        detail: format!(
            "search {} exact={}, subset oracle {oracle}",
            r.size, r.exact
        ),
    }
}

/// Largest L-free subset of F_3 x F_3 over all 2^9 masks.
fn subset_oracle() -> u32 {
    let ns = Space::new(PrimeField::new(3).unwrap(), 1).unwrap();
    let big = ns.squared().unwrap();
    let mut best = 0;
    for mask in 0u32..512 {
        let has = |x: usize, y: usize| mask >> ((x % 3) + 3 * (y % 3)) & 1 == 1;
        let mut l_free = true;
        for x in 0..3 {
            for y in 0..3 {
                for z in 1..3 {
                    if has(x, y) && has(x, y + z) && has(x, y + 2 * z) && has(x + z, y) {
                        l_free = false;
                    }
                }
            }
        }
        if l_free {
            let members: Vec<usize> = (0..9).filter(|i| mask >> i & 1 == 1).collect();
            assert!(lshape::configurations::is_l_free(
                &IndicatorSet::from_indices(&big, &members).unwrap()
            )
            .unwrap());
            best = best.max(mask.count_ones());
        }
    }
    best
}

fn increments() -> Outcome {
    suites(&[
        ("increments", SuiteParams::new(3, 2, 50, 10)),
        ("increments", SuiteParams::new(3, 3, 50, 10)),
    ])
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    let traj = traj.to_str().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["--seed", "3", "verify", "--suite", "all"],
        vec!["count", "--example", "dot", "--n", "3"],
        vec![
            "--n",
            "3",
            "increment",
            "--planted",
            "halfD",
            "--seed",
            "7",
            "--trajectory",
            traj,
        ],
        vec![
            "increment",
            "--planted",
            "halfA",
            "--seed",
            "7",
            "--trajectory",
            traj,
        ],
        vec!["extremal", "--method", "greedy", "--seed", "5"],
        vec![
            "--n",
            "2",
            "pseudorandomize",
            "--planted",
            "halfA",
            "--seed",
            "2",
        ],
    ];
    let mut bad = Vec::new();
    for args in &runs {
        let outs: Vec<_> = (0..2)
            .map(|_| {
                let o = Command::new(env!("CARGO_BIN_EXE_lshape"))
                    .args(args)
                    .output()
                    .unwrap();
                (o.status.code(), o.stdout, std::fs::read(traj).ok())
            })
            .collect();
        if outs[0] != outs[1] || outs[0].1.is_empty() {
            bad.push(args.join(" "));
        }
    }
    Outcome {
        ok: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} commands byte-identical", runs.len())
        } else {
            format!("differs: {}", bad.join(" | "))
        },
    }
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, u64); 11] = [
        ("1 spectral identities", spectral, 10),
        ("2 dot obstruction", dot_obstruction, 5),
        ("3 random obstructions", random_obstructions, 30),
        ("4 dense-point control", control, 60),
        ("5 property suites", property_suites, 120),
        ("6 recursion vs definition", recursion, 60),
        ("7 inverse U2 contract", inverse, 10),
        ("8 energy machinery", energy, 120),
        ("9 extremal exactness", extremal, 1),
        ("10 constructive increments", increments, 60),
        ("11 determinism", determinism, 60),
    ];
    let mut all = true;
    for (name, check, budget) in criteria {
        let t = Instant::now();
        let out = check();
        let secs = t.elapsed().as_secs_f64();
        let ok = out.ok && secs < budget as f64;
        all &= ok;
        println!(
            "{} criterion {name}: {} [{secs:.2}s of {budget}s]",
            if ok { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    assert!(all, "some acceptance criteria failed");
}
