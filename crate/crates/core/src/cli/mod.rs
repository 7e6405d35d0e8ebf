//! Command-line front end: configuration, commands and JSON reports.
//!
//! Exit codes: 0 when every assertion passed, 1 on an assertion failure,
//! 2 on usage, parse or resource errors.

pub mod config;
pub mod suites;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::configurations::{
    count_corners, count_l, count_system, obstruction_example, ObstructionKind,
};
use crate::error::{Error, Result};
use crate::group::Space;
use crate::increment::{
    full_t, increment_driver, planted_instance, pseudorandomize_u2, search_extremal_l_free,
    DriverConfig, Planted, SearchMethod,
};
use crate::linear_systems::LinearFormSystem;
use crate::norms::{box_norm, gowers_u, star_norm, Star};
use crate::oracle::{box_norm_definition, gowers_u_definition, star_norm_definition};
use crate::table::{FunctionTable, IndicatorSet};

pub use config::{ConfigFile, RunConfig};
use suites::{Assertion, SuiteParams, Tally};

#[derive(Debug, Parser)]
#[command(
    name = "lshape",
    version,
    about = "L-shaped configurations, uniformity norms and density increments over F_p^n"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// key = value configuration file with optional [command] sections.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Field characteristic (default 3).
    #[arg(long, global = true)]
    pub p: Option<u64>,
    /// Dimension n of F_p^n (default 2).
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Reject p < 11.
    #[arg(long, global = true)]
    pub strict: bool,
    /// RNG seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Randomized instances per property (default 100).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Slack for floating-point identities (default 1e-9).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Refuse tables larger than this.
    #[arg(long, global = true)]
    pub max_entries: Option<usize>,
    /// Refuse enumerations needing more steps than this.
    #[arg(long, global = true)]
    pub max_work: Option<u128>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Add wall-clock time to the report (breaks byte-identical output).
    #[arg(long, global = true)]
    pub timing: bool,
    /// Also write a CSV table (histograms, steps or cells).
    #[arg(long, global = true)]
    pub csv: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gowers, star and box norms of a stored function.
    Norm {
        file: Option<String>,
        #[arg(long = "u", value_delimiter = ',')]
        u: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        star: Vec<u32>,
        #[arg(long = "box")]
        box_norm: bool,
        /// Cross-check against the definition oracles.
        #[arg(long)]
        audit: bool,
    },
    /// L-shape and corner counts of a set file or a built-in example.
    Count {
        file: Option<String>,
        /// dot, random_phi or coordinate.
        #[arg(long)]
        example: Option<String>,
        /// l, corners, progression:<k> or a literal like [[1,0],[1,1]].
        #[arg(long)]
        system: Option<String>,
    },
    /// Randomized property suites.
    Verify {
        #[arg(long)]
        suite: Option<String>,
    },
    /// Density-increment iteration from an L-free set.
    Increment {
        #[arg(long)]
        from_file: Option<String>,
        /// halfA or halfD.
        #[arg(long)]
        planted: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        gain_floor: Option<f64>,
        /// JSON-lines trajectory output.
        #[arg(long)]
        trajectory: Option<String>,
    },
    /// Largest L-free subset search.
    Extremal {
        /// exhaustive, greedy, local or random.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// U^2 pseudorandomization of the full structured set against S.
    Pseudorandomize {
        #[arg(long)]
        from_file: Option<String>,
        #[arg(long)]
        planted: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub results: Value,
    pub assertions: Vec<Assertion>,
    /// Names of the properties checked, in order.
    pub anchors: Vec<String>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<f64>,
}

struct Outcome {
    results: Value,
    assertions: Vec<Assertion>,
    csv: Option<String>,
}

fn put<T: ToString>(m: &mut BTreeMap<String, String>, k: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(k.into(), v.to_string());
    }
}

impl Cli {
    fn flags(&self) -> (&'static str, BTreeMap<String, String>) {
        let g = &self.global;
        let mut m = BTreeMap::new();
        put(&mut m, "p", g.p);
        put(&mut m, "n", g.n);
        put(&mut m, "strict", g.strict.then_some(true));
        put(&mut m, "seed", g.seed);
        put(&mut m, "trials", g.trials);
        put(&mut m, "tol", g.tol);
        put(&mut m, "max_entries", g.max_entries);
        put(&mut m, "max_work", g.max_work);
        let join = |v: &[u32]| {
            (!v.is_empty()).then(|| v.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
        };
        let name = match &self.command {
            Command::Norm {
                file,
                u,
                star,
                box_norm,
                audit,
            } => {
                put(&mut m, "file", file.as_ref());
                put(&mut m, "u", join(u));
                put(&mut m, "star", join(star));
                put(&mut m, "box", box_norm.then_some(true));
                put(&mut m, "audit", audit.then_some(true));
                "norm"
            }
            Command::Count {
                file,
                example,
                system,
            } => {
                put(&mut m, "file", file.as_ref());
                put(&mut m, "example", example.as_ref());
                put(&mut m, "system", system.as_ref());
                "count"
            }
            Command::Verify { suite } => {
                put(&mut m, "suite", suite.as_ref());
                "verify"
            }
            Command::Increment {
                from_file,
                planted,
                eps,
                tau,
                max_steps,
                gain_floor,
                trajectory,
            } => {
                put(&mut m, "file", from_file.as_ref());
                put(&mut m, "planted", planted.as_ref());
                put(&mut m, "eps", *eps);
                put(&mut m, "tau", *tau);
                put(&mut m, "max_steps", *max_steps);
                put(&mut m, "gain_floor", *gain_floor);
                put(&mut m, "trajectory", trajectory.as_ref());
                "increment"
            }
            Command::Extremal { method, budget } => {
                put(&mut m, "method", method.as_ref());
                put(&mut m, "budget", *budget);
                "extremal"
            }
            Command::Pseudorandomize {
                from_file,
                planted,
                eps,
                tau,
            } => {
                put(&mut m, "file", from_file.as_ref());
                put(&mut m, "planted", planted.as_ref());
                put(&mut m, "eps", *eps);
                put(&mut m, "tau", *tau);
                "pseudorandomize"
            }
        };
        (name, m)
    }

    /// Resolves the configuration and runs the command.
    pub fn execute(&self) -> Result<Report> {
        let (name, flags) = self.flags();
        let file = self
            .global
            .config
            .as_deref()
            .map(ConfigFile::read)
            .transpose()?;
        let cfg = RunConfig::resolve(name, file.as_ref(), &flags)?;
        let start = Instant::now();
        let out = match name {
            "norm" => cmd_norm(&cfg)?,
            "count" => cmd_count(&cfg)?,
            "verify" => cmd_verify(&cfg)?,
            "increment" => cmd_increment(&cfg)?,
            "extremal" => cmd_extremal(&cfg)?,
            _ => cmd_pseudorandomize(&cfg)?,
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if let Some(path) = &self.global.csv {
            let table = out
                .csv
                .ok_or_else(|| Error::InvalidArgument(format!("{name} has no CSV output")))?;
            std::fs::write(path, table)?;
        }
        let anchors = out.assertions.iter().map(|a| a.anchor.clone()).collect();
        Ok(Report {
            command: name.into(),
            passed: out.assertions.iter().all(|a| a.passed),
            config: cfg,
            results: out.results,
            assertions: out.assertions,
            anchors,
            wall_clock_ms: self.global.timing.then_some(elapsed),
        })
    }
}

/// Parses `args`, runs, writes the report and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let report = match cli.execute() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let text = match serde_json::to_string_pretty(&report) {
        Ok(t) => t + "\n",
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match &cli.global.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: {e}");
                return 2;
            }
        }
        None => print!("{text}"),
    }
    if report.passed {
        0
    } else {
        1
    }
}

fn open(path: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

fn cmd_norm(cfg: &RunConfig) -> Result<Outcome> {
    let path = cfg
        .param_opt("file")
        .ok_or_else(|| Error::InvalidArgument("norm needs a function file".into()))?;
    let f = FunctionTable::read_from(open(path)?)?;
    let mut us: Vec<u32> = cfg.list("u")?;
    let stars: Vec<u32> = cfg.list("star")?;
    let want_box = cfg.flag("box")?;
    let audit = cfg.flag("audit")?;
    if us.is_empty() && stars.is_empty() && !want_box {
        us.push(2);
    }
    let mut results = json!({ "p": f.space().p(), "m": f.space().dim() });
    let mut recursion = Tally::new("gowers-recursion-vs-definition");
    let mut star_audit = Tally::new("star-norm-vs-definition");
    let mut box_audit = Tally::new("box-norm-vs-definition");
    let tol = cfg.tolerance;
    let close = |a: f64, b: f64| ((a - b).abs(), tol * b.abs().max(1.0));
    for s in us {
        let v = gowers_u(&f, s, None)?;
        if audit {
            let (e, slack) = close(v.raw_average, gowers_u_definition(&f, s)?.raw_average);
            recursion.le(e, 0.0, slack);
        }
        results["u"][s.to_string()] = to_value(&v)?;
    }
    for k in stars {
        let which = Star::from_index(k)?;
        let v = star_norm(&f, which)?;
        if audit {
            let (e, slack) = close(v.raw_average, star_norm_definition(&f, which)?.raw_average);
            star_audit.le(e, 0.0, slack);
        }
        results["star"][k.to_string()] = to_value(&v)?;
    }
    if want_box {
        let v = box_norm(&f)?;
        if audit {
            let (e, slack) = close(v.raw_average, box_norm_definition(&f)?.raw_average);
            box_audit.le(e, 0.0, slack);
        }
        results["box"] = to_value(&v)?;
    }
    let assertions = [recursion, star_audit, box_audit]
        .into_iter()
        .map(Tally::finish)
        .filter(|a| a.trials > 0)
        .collect();
    Ok(Outcome {
        results,
        assertions,
        csv: None,
    })
}

fn parse_system(spec: &str, set_space: &Space) -> Result<LinearFormSystem> {
    let field = set_space.field();
    match spec {
        "l" | "l_shapes" => Ok(LinearFormSystem::l_shapes(field)),
        "corners" => Ok(LinearFormSystem::corners(field)),
        s if s.starts_with("progression:") => {
            let k: usize = s["progression:".len()..]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad progression length in {s:?}")))?;
            Ok(LinearFormSystem::progression(field, k))
        }
        lit => LinearFormSystem::parse(field, lit),
    }
}

fn histogram_csv(s: &IndicatorSet) -> Result<String> {
    let n = crate::norms::factor_space(s.space())?.size();
    let mut rows = vec![0u64; n];
    let mut cols = vec![0u64; n];
    for k in s.members() {
        rows[k % n] += 1;
        cols[k / n] += 1;
    }
    let mut out = String::from("axis,index,count\n");
    for (axis, h) in [("row", rows), ("column", cols)] {
        for (i, c) in h.iter().enumerate() {
            let _ = writeln!(out, "{axis},{i},{c}");
        }
    }
    Ok(out)
}

fn cmd_count(cfg: &RunConfig) -> Result<Outcome> {
    if let Some(kind) = cfg.param_opt("example") {
        let kind: ObstructionKind = kind.parse()?;
        let ob = obstruction_example(kind, cfg.p, cfg.n, cfg.seed)?;
        let big_n = ob.set.space().size() as u64;
        let size = ob.set.cardinality();
        let l = count_l(&ob.set)?;
        let corners = count_corners(&ob.set)?;
        // the closed form counts every tuple, including z = 0
        let brute = l.exact_count.unwrap_or(0);
        let mut results = json!({
            "kind": kind,
            "size": size.to_string(),
            "density": ob.set.density(),
            "density_fraction": format!("{size}/{big_n}"),
            "predicted_density": ob.predicted_density,
            "l_count": l,
            "corner_count": corners,
        });
        let mut assertions = Vec::new();
        if let Some(pred) = ob.predicted_count {
            results["closed_form_l_count"] = json!(pred.to_string());
            results["l_count_discrepancy"] = json!((brute as i128 - pred as i128).to_string());
            let mut dens = Tally::new("dot-density-closed-form");
            dens.check(
                (ob.predicted_density * big_n as f64).round() as u64 == size
                    && ob.set.density() == ob.predicted_density,
            );
            let mut cnt = Tally::new("dot-l-count-closed-form");
            cnt.check(brute == pred);
            assertions = vec![dens.finish(), cnt.finish()];
        }
        if let Some(h) = ob.heuristic_count {
            let p = cfg.p as f64;
            results["heuristic_l_count"] = json!(h);
            results["density_in_window"] = json!((0.8 / p..=1.2 / p).contains(&ob.set.density()));
            let nontrivial = l.nontrivial_count.unwrap_or(0) as f64;
            results["count_within_factor_two"] = json!((h / 2.0..=2.0 * h).contains(&nontrivial));
        }
        return Ok(Outcome {
            results,
            assertions,
            csv: Some(histogram_csv(&ob.set)?),
        });
    }
    let path = cfg
        .param_opt("file")
        .ok_or_else(|| Error::InvalidArgument("count needs a set file or --example".into()))?;
    let s = IndicatorSet::read_from(open(path)?)?;
    let mut results = json!({
        "size": s.cardinality().to_string(),
        "density": s.density(),
    });
    if let Some(spec) = cfg.param_opt("system") {
        let sys = parse_system(spec, s.space())?;
        let tables = vec![s.table(); sys.d()];
        let avg = count_system(&tables, &sys)?;
        results["system"] = to_value(&sys)?;
        results["system_average"] = json!(avg.average.re);
        results["system_count"] = json!(avg.exact_count.map(|c| c.to_string()));
    } else {
        results["l_count"] = to_value(&count_l(&s)?)?;
        results["corner_count"] = to_value(&count_corners(&s)?)?;
    }
    let csv = crate::norms::factor_space(s.space())
        .ok()
        .map(|_| histogram_csv(&s))
        .transpose()?;
    Ok(Outcome {
        results,
        assertions: Vec::new(),
        csv,
    })
}

fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let suite = cfg.param("suite");
    let prm = SuiteParams {
        p: cfg.p,
        n: cfg.n,
        trials: cfg.trials,
        seed: cfg.seed,
        tol: cfg.tolerance,
        limits: cfg.limits(),
    };
    let assertions = suites::run_suite(suite, &prm)?;
    Ok(Outcome {
        results: json!({ "suite": suite }),
        assertions,
        csv: None,
    })
}

/// The input set: a file, a planted instance, or an error.
fn input_set(cfg: &RunConfig, l_free: bool) -> Result<IndicatorSet> {
    match (cfg.param_opt("file"), cfg.param_opt("planted")) {
        (Some(path), None) => IndicatorSet::read_from(open(path)?),
        (None, Some(kind)) => {
            planted_instance(kind.parse::<Planted>()?, &cfg.space()?, cfg.seed, l_free)
        }
        _ => Err(Error::InvalidArgument(
            "give exactly one of --from-file and --planted".into(),
        )),
    }
}

fn cmd_increment(cfg: &RunConfig) -> Result<Outcome> {
    let s0 = input_set(cfg, true)?;
    let dc = DriverConfig {
        eps: cfg.parse_param("eps")?,
        tau: cfg.parse_param("tau")?,
        gain_floor: cfg.parse_param("gain_floor")?,
        max_steps: cfg.parse_param("max_steps")?,
    };
    let tr = increment_driver(&s0, &dc)?;
    let path = cfg.param("trajectory");
    std::fs::write(path, tr.json_lines()?)?;
    for st in &tr.steps {
        log::info!("step {} {:?}: gain {}", st.step, st.tool, st.gain);
    }
    let mut free = Tally::new("increment-steps-l-free");
    let mut mono = Tally::new("relative-density-monotone");
    let mut prev = tr.initial_sigma;
    for st in &tr.steps {
        free.check(st.l_free);
        mono.le(prev, st.sigma, 0.0);
        prev = st.sigma;
    }
    let assertions = [free, mono]
        .into_iter()
        .map(Tally::finish)
        .filter(|a| a.trials > 0)
        .collect();
    let mut csv = String::from("step,tool,sigma,gain,n,d,t_size,s_size,alpha,beta,gamma,delta\n");
    for st in &tr.steps {
        let tool = serde_json::to_string(&st.tool).map_err(|e| Error::Io(e.to_string()))?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            st.step,
            tool.trim_matches('"'),
            st.sigma,
            st.gain,
            st.n,
            st.d,
            st.t_size,
            st.s_size,
            st.alpha,
            st.beta,
            st.gamma,
            st.delta
        );
    }
    Ok(Outcome {
        results: json!({
            "s0_size": s0.cardinality().to_string(),
            "initial_sigma": tr.initial_sigma,
            "final_sigma": tr.final_sigma,
            "steps": tr.steps.len(),
            "first_gain": tr.steps.first().map(|s| s.gain),
            "halted": tr.halted,
            "trajectory_file": path,
        }),
        assertions,
        csv: Some(csv),
    })
}

fn cmd_extremal(cfg: &RunConfig) -> Result<Outcome> {
    let method: SearchMethod = cfg.param("method").parse()?;
    let (set, res) =
        search_extremal_l_free(cfg.p, cfg.n, method, cfg.parse_param("budget")?, cfg.seed)?;
    let mut verified = Tally::new("extremal-l-free-verified");
    verified.check(res.l_free_verified && crate::configurations::is_l_free(&set)?);
    let mut assertions = vec![verified.finish()];
    let total = set.space().size();
    if total <= 9 {
        // every subset, independently of the search
        let mut best = 0;
        for mask in 0u32..1 << total {
            let bits: Vec<bool> = (0..total).map(|i| mask >> i & 1 == 1).collect();
            let s = IndicatorSet::from_mask(set.space(), &bits);
            if count_l(&s)?.nontrivial_count == Some(0) {
                best = best.max(s.cardinality());
            }
        }
        let mut oracle = Tally::new("extremal-matches-subset-oracle");
        oracle.check(if res.exact {
            res.size as u64 == best
        } else {
            res.size as u64 <= best
        });
        assertions.push(oracle.finish());
    }
    Ok(Outcome {
        results: to_value(&res)?,
        assertions,
        csv: None,
    })
}

fn cmd_pseudorandomize(cfg: &RunConfig) -> Result<Outcome> {
    let s = input_set(cfg, false)?;
    let ns = crate::norms::factor_space(s.space())?;
    let t = full_t(&ns)?;
    let pr = pseudorandomize_u2(&t, &s, cfg.parse_param("eps")?, cfg.parse_param("tau")?)?;
    let r = &pr.report;
    let mut bound = Tally::new("pseudorandomize-round-bound");
    bound.le(r.rounds.len() as f64, r.round_bound, 0.0);
    let mut gain = Tally::new("energy-strictly-increases");
    for x in &r.rounds {
        gain.check(
            x.energy_after > x.energy_before && x.gain_per_measure >= x.required_gain - 1e-9,
        );
    }
    let assertions = [bound, gain]
        .into_iter()
        .map(Tally::finish)
        .filter(|a| a.trials > 0)
        .collect();
    let mut csv = String::from("cell,codim,u,w,measure,beta,gamma,delta,phi_le\n");
    for (i, (c, st)) in pr
        .partition
        .cells()
        .iter()
        .zip(pr.partition.stats())
        .enumerate()
    {
        let digits = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let phi: Vec<String> = st.phi_le.iter().map(f64::to_string).collect();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{}",
            c.codim(),
            digits(c.u().digits()),
            digits(c.w().digits()),
            st.measure,
            st.beta,
            st.gamma,
            st.delta,
            phi.join(" ")
        );
    }
    Ok(Outcome {
        results: to_value(r)?,
        assertions,
        csv: Some(csv),
    })
}
