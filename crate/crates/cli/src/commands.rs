//! Subcommands: each builds a `Report` and a short human summary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use endolift::algebra::DEFAULT_TOL;
use endolift::endo::{
    asymptotic_lift, convergence_table, nondegenerate_reduction, shift_decomposition, tail_algebra, violating_functional,
    Lifting,
};
use endolift::morphism::StructuralMorphism;
use endolift::seq::{ComputableAlgebra, Functional};
use endolift::ucp::{asymptotic_lift_ucp, verify_norm_identities, DilationInstance};

use crate::format::{mask_labels, read_instance, write_json, InstanceFile, Report, Verdict, SCHEMA_VERSION};
use crate::generate::{generate, Kind, Sizes};
use crate::oracle::check_morphism;
use crate::{CliError, CliResult};

pub const DEFAULT_HORIZON: usize = 16;
pub const DEFAULT_NMAX: usize = 20;
pub const RANDOM_FUNCTIONALS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "endolift", version, about = "Lifts of endomorphisms of block and sequence algebras to automorphisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Instance JSON file.
    #[arg(long)]
    pub instance: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the morphism axioms and compare against the dense oracle.
    Validate(Common),
    /// Kernel chain, automorphic summand and shift model of a surjective map.
    Decompose(Common),
    /// The tail algebra and the restriction of the map to it.
    Tail(Common),
    /// Build and verify the asymptotic lift.
    Lift(Common),
    /// Strip the degenerate part of a lift padded with the instance's junk summands.
    Reduce(Common),
    /// Norm convergence of functionals under the predual map.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nmax: Option<usize>,
    },
    /// Lift of the compression of the map by the instance projection.
    UcpLift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nmax: Option<usize>,
    },
    /// Repeat the lift and norm checks after tensoring with a matrix algebra.
    Promote {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        nmax: Option<usize>,
    },
    /// Run the whole pipeline on generated instances.
    Selftest {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated instance and its witness sidecar.
    Generate {
        #[arg(long)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        p_dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        k_dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        fin_dims: Option<Vec<usize>>,
    },
}

pub struct Outcome {
    pub report: Report,
    pub summary: String,
}

struct Ctx {
    instance: InstanceFile,
    algebra: ComputableAlgebra,
    alpha: StructuralMorphism,
    tol: f64,
    horizon: usize,
    seed: u64,
}

fn load(c: &Common) -> CliResult<Ctx> {
    let instance = read_instance(&c.instance)?;
    let algebra = instance.algebra()?;
    let alpha = instance.morphism.compile(&algebra)?;
    if alpha.target() != &algebra {
        return Err(endolift::Error::Shape("the morphism must map the algebra to itself".into()).into());
    }
    let tol = c.tol.or(instance.params.tol).unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Parse(format!("tolerance {tol} must be positive")));
    }
    let horizon = c.horizon.or(instance.params.horizon).unwrap_or(DEFAULT_HORIZON);
    let seed = c.seed.or(instance.params.seed).unwrap_or(0);
    Ok(Ctx { instance, algebra, alpha, tol, horizon, seed })
}

fn report(command: &str, ctx: &Ctx, result: serde_json::Value, failures: Vec<String>) -> Report {
    Report {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        verdict: if failures.is_empty() { Verdict::Pass } else { Verdict::Fail },
        tol: ctx.tol,
        seed: Some(ctx.seed),
        result,
        failures,
    }
}

fn summands_json(a: &ComputableAlgebra) -> serde_json::Value {
    serde_json::to_value(a.summands()).expect("summands serialize")
}

/// Instance functionals, or seeded random ones when the instance lists none.
fn functionals(ctx: &Ctx, algebra: &ComputableAlgebra, support: usize) -> CliResult<Vec<Functional>> {
    let listed = if algebra == &ctx.algebra { ctx.instance.functionals(algebra)? } else { Vec::new() };
    if !listed.is_empty() {
        return Ok(listed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    Ok((0..RANDOM_FUNCTIONALS).map(|_| Functional::random(algebra, &mut rng, support)).collect())
}

fn validate(ctx: &Ctx) -> CliResult<Outcome> {
    let v = ctx.alpha.validate(ctx.tol)?;
    let o = check_morphism(&ctx.alpha, ctx.seed, ctx.tol)?;
    let mut failures: Vec<String> =
        o.checks.iter().filter(|c| !c.pass).map(|c| format!("oracle check {} failed with defect {:.3e}", c.name, c.defect)).collect();
    for (name, d) in [("unital", v.unital_defect), ("multiplicative", v.multiplicative_defect), ("star", v.star_defect)] {
        if d > ctx.tol {
            failures.push(format!("{name} defect {d:.3e} exceeds tolerance"));
        }
    }
    let summary = format!(
        "valid morphism (window {}, injective {}, surjective {}); {} oracle checks, {} failed",
        v.window,
        v.injective,
        v.surjective,
        o.checks.len(),
        o.checks.iter().filter(|c| !c.pass).count()
    );
    Ok(Outcome { report: report("validate", ctx, json!({ "validation": v, "oracle": o }), failures), summary })
}

fn decompose(ctx: &Ctx) -> CliResult<Outcome> {
    let d = shift_decomposition(&ctx.alpha, ctx.horizon, ctx.tol)?;
    let chain: Vec<Vec<String>> = d.chain.iter().map(|c| mask_labels(c, &ctx.algebra, d.window)).collect();
    let k_dims = d.k.as_ref().map(|k| k.dims().to_vec()).unwrap_or_default();
    let result = json!({
        "p": summands_json(&d.p.algebra),
        "k_dims": k_dims,
        "kernel_chain": chain,
        "limit": mask_labels(&d.limit.mask, &ctx.algebra, d.window),
        "window": d.window,
        "conjugacy_defect": d.conjugacy_defect,
    });
    let failures = if d.conjugacy_defect > ctx.tol { vec![format!("conjugacy defect {:.3e}", d.conjugacy_defect)] } else { vec![] };
    let summary = format!(
        "P has {} summand(s), K has block dims {:?}; conjugacy defect {:.3e}",
        d.p.algebra.summands().len(),
        k_dims,
        d.conjugacy_defect
    );
    Ok(Outcome { report: report("decompose", ctx, result, failures), summary })
}

fn tail(ctx: &Ctx) -> CliResult<Outcome> {
    let t = tail_algebra(&ctx.alpha, ctx.tol)?;
    let result = json!({
        "algebra": summands_json(t.algebra()),
        "stabilization": t.stabilization,
        "restriction_surjective": t.restriction.is_surjective(),
    });
    let mut failures = Vec::new();
    if !t.restriction.is_surjective() {
        failures.push("the restriction to the tail algebra is not surjective".into());
    }
    let summary = format!("tail algebra {:?}, stabilizes at N = {}", t.algebra().summands(), t.stabilization);
    Ok(Outcome { report: report("tail", ctx, result, failures), summary })
}

fn lift(ctx: &Ctx) -> CliResult<Outcome> {
    let l = asymptotic_lift(&ctx.alpha, ctx.horizon, ctx.tol)?;
    let result = json!({
        "n": summands_json(&l.lifting.n),
        "tail": summands_json(l.tail.algebra()),
        "window": l.window,
        "lifting_defect": l.lifting_defect,
        "range_defect": l.range_defect,
    });
    let summary = format!(
        "lift on {} summand(s); lifting defect {:.3e}, range defect {:.3e}",
        l.lifting.n.summands().len(),
        l.lifting_defect,
        l.range_defect
    );
    Ok(Outcome { report: report("lift", ctx, result, vec![]), summary })
}

fn reduce(ctx: &Ctx) -> CliResult<Outcome> {
    let l = asymptotic_lift(&ctx.alpha, ctx.horizon, ctx.tol)?.lifting;
    let junk = ComputableAlgebra::new(ctx.instance.junk.clone())?;
    let padded = if junk.summands().is_empty() {
        l.clone()
    } else {
        let n = l.n.direct_sum(&junk);
        let beta = StructuralMorphism::direct_sum(&[l.beta.clone(), StructuralMorphism::identity(&junk)])?;
        let e = StructuralMorphism::new(n.clone(), ctx.algebra.clone(), l.e.rules().to_vec())?;
        Lifting::new(n, beta, e, ctx.alpha.clone())?
    };
    let w = padded.window();
    let r = nondegenerate_reduction(&padded, w, ctx.tol)?;
    let mut failures = Vec::new();
    if r.lifting.n != l.n {
        failures.push("the reduced lift differs from the asymptotic lift".into());
    }
    let result = json!({
        "padded": summands_json(&padded.n),
        "degenerate": mask_labels(&r.degenerate, &padded.n, w),
        "reduced": summands_json(&r.lifting.n),
    });
    let summary = format!("removed {} of {} summand(s)", padded.n.summands().len() - r.lifting.n.summands().len(), padded.n.summands().len());
    Ok(Outcome { report: report("reduce", ctx, result, failures), summary })
}

fn convergence(ctx: &Ctx, n_max: usize) -> CliResult<Outcome> {
    let l = asymptotic_lift(&ctx.alpha, ctx.horizon, ctx.tol)?;
    let rhos = functionals(ctx, &ctx.algebra, l.window)?;
    let tables = rhos
        .iter()
        .map(|rho| convergence_table(&ctx.alpha, &l.lifting.e, rho, n_max, ctx.tol))
        .collect::<endolift::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5eed);
    let violation = violating_functional(&l, &mut rng, 64, ctx.tol)?;
    let converged = tables.iter().filter(|t| t.converged_at.is_some()).count();
    let result = json!({
        "tables": tables,
        "scalar_lift_violated": violation.is_some(),
    });
    let summary = format!(
        "{} functional(s): norms nonincreasing and bounded below by the lift, {} reached it within n = {n_max}; scalar lift violated: {}",
        tables.len(),
        converged,
        violation.is_some()
    );
    Ok(Outcome { report: report("convergence", ctx, result, vec![]), summary })
}

fn ucp_outcome(command: &str, ctx: &Ctx, d: &DilationInstance, n_max: usize) -> CliResult<Outcome> {
    let cl = asymptotic_lift_ucp(d, ctx.horizon, ctx.tol)?;
    let w = cl.lift.window;
    let rhos = if d.n == ctx.algebra {
        functionals(ctx, &d.n, w)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        (0..RANDOM_FUNCTIONALS).map(|_| cl.compression.random_functional(&mut rng, w)).collect()
    };
    let tables = rhos.iter().map(|rho| verify_norm_identities(&cl, rho, n_max, ctx.tol)).collect::<endolift::Result<Vec<_>>>()?;
    let max_gap = tables.iter().map(|t| t.max_gap).fold(0.0, f64::max);
    let mut failures = Vec::new();
    if max_gap > ctx.tol {
        failures.push(format!("norm identities differ by {max_gap:.3e}"));
    }
    if cl.nondegeneracy_defect > ctx.tol {
        failures.push(format!("nondegeneracy defect {:.3e}", cl.nondegeneracy_defect));
    }
    let result = json!({
        "dilation": cl.compression.report,
        "n_tilde": summands_json(cl.n_tilde()),
        "lifting_defect": cl.lifting_defect,
        "nondegeneracy_defect": cl.nondegeneracy_defect,
        "max_gap": max_gap,
        "tables": tables,
    });
    let summary = format!(
        "compressed lift with reach {}; {} functional(s), largest norm gap {:.3e}",
        cl.compression.report.reach,
        tables.len(),
        max_gap
    );
    Ok(Outcome { report: report(command, ctx, result, failures), summary })
}

fn dilation(ctx: &Ctx) -> CliResult<DilationInstance> {
    let p = ctx
        .instance
        .projection(&ctx.algebra)?
        .ok_or_else(|| endolift::Error::Precondition("the instance has no projection".into()))?;
    Ok(DilationInstance::new(ctx.alpha.clone(), p)?)
}

fn promote(ctx: &Ctx, level: usize, n_max: usize) -> CliResult<Outcome> {
    if ctx.instance.projection.is_some() {
        let d = dilation(ctx)?.promote(level)?;
        return ucp_outcome("promote", ctx, &d, n_max);
    }
    let alpha = ctx.alpha.promote(level)?;
    let l = asymptotic_lift(&alpha, ctx.horizon, ctx.tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let tables = (0..RANDOM_FUNCTIONALS)
        .map(|_| convergence_table(&alpha, &l.lifting.e, &Functional::random(alpha.source(), &mut rng, l.window), n_max, ctx.tol))
        .collect::<endolift::Result<Vec<_>>>()?;
    let result = json!({
        "level": level,
        "n": summands_json(&l.lifting.n),
        "lifting_defect": l.lifting_defect,
        "range_defect": l.range_defect,
        "tables": tables,
    });
    let summary = format!("level {level}: lifting defect {:.3e}, {} convergence table(s)", l.lifting_defect, tables.len());
    Ok(Outcome { report: report("promote", ctx, result, vec![]), summary })
}

/// Runs each pipeline stage on generated instances and records every error.
fn selftest(seeds: u64) -> CliResult<Outcome> {
    let dir = std::env::temp_dir().join(format!("endolift-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for kind in [Kind::SurjectiveObfuscated, Kind::Endomorphism, Kind::Dilation] {
        for seed in 0..seeds {
            let g = generate(kind, seed, &Sizes::default())?;
            let path = dir.join(format!("{}-{seed}.json", kind.name()));
            write_json(&path, &g.instance)?;
            let common = Common { instance: path, out: None, tol: None, horizon: None, seed: Some(seed) };
            let ctx = load(&common)?;
            let mut stages: Vec<(&str, CliResult<Outcome>)> =
                vec![("validate", validate(&ctx)), ("lift", lift(&ctx)), ("convergence", convergence(&ctx, 8))];
            if kind == Kind::SurjectiveObfuscated {
                stages.push(("decompose", decompose(&ctx)));
            }
            if kind == Kind::Dilation {
                stages.push(("ucp-lift", dilation(&ctx).and_then(|d| ucp_outcome("ucp-lift", &ctx, &d, 8))));
            }
            for (stage, r) in stages {
                let ok = match &r {
                    Ok(o) => o.report.verdict == Verdict::Pass,
                    Err(_) => false,
                };
                if !ok {
                    let why = match r {
                        Ok(o) => o.report.failures.join("; "),
                        Err(e) => e.to_string(),
                    };
                    failures.push(format!("{} seed {seed} {stage}: {why}", kind.name()));
                }
                cases.push(json!({ "kind": kind.name(), "seed": seed, "stage": stage, "pass": ok }));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let summary = format!("{} stage run(s), {} failed", cases.len(), failures.len());
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: "selftest".into(),
        verdict: if failures.is_empty() { Verdict::Pass } else { Verdict::Fail },
        tol: DEFAULT_TOL,
        seed: None,
        result: json!({ "cases": cases }),
        failures,
    };
    Ok(Outcome { report, summary })
}

/// Path of the witness written next to `out`.
pub fn witness_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".witness.json");
    PathBuf::from(s)
}

/// Executes one command; the report is also written to `--out` when given.
pub fn run(cli: Cli) -> CliResult<Outcome> {
    let (outcome, out) = match cli.command {
        Command::Validate(c) => (validate(&load(&c)?)?, c.out),
        Command::Decompose(c) => (decompose(&load(&c)?)?, c.out),
        Command::Tail(c) => (tail(&load(&c)?)?, c.out),
        Command::Lift(c) => (lift(&load(&c)?)?, c.out),
        Command::Reduce(c) => (reduce(&load(&c)?)?, c.out),
        Command::Convergence { common, nmax } => {
            let ctx = load(&common)?;
            let n = nmax.or(ctx.instance.params.n_max).unwrap_or(DEFAULT_NMAX);
            (convergence(&ctx, n)?, common.out)
        }
        Command::UcpLift { common, nmax } => {
            let ctx = load(&common)?;
            let n = nmax.or(ctx.instance.params.n_max).unwrap_or(DEFAULT_NMAX);
            (ucp_outcome("ucp-lift", &ctx, &dilation(&ctx)?, n)?, common.out)
        }
        Command::Promote { common, level, nmax } => {
            let ctx = load(&common)?;
            let n = nmax.or(ctx.instance.params.n_max).unwrap_or(DEFAULT_NMAX);
            let k = level.or(ctx.instance.params.level).unwrap_or(2);
            (promote(&ctx, k, n)?, common.out)
        }
        Command::Selftest { seeds, out } => (selftest(seeds)?, out),
        Command::Generate { kind, seed, out, p_dims, k_dims, fin_dims } => {
            let g = generate(kind, seed, &Sizes { p_dims, k_dims, fin_dims })?;
            write_json(&out, &g.instance)?;
            let wpath = witness_path(&out);
            write_json(&wpath, &g.witness)?;
            let summary = format!("wrote {} and {}", out.display(), wpath.display());
            let report = Report {
                schema_version: SCHEMA_VERSION,
                command: "generate".into(),
                verdict: Verdict::Pass,
                tol: DEFAULT_TOL,
                seed: Some(seed),
                result: json!({ "instance": out, "witness": wpath }),
                failures: vec![],
            };
            return Ok(Outcome { report, summary });
        }
    };
    if let Some(path) = out {
        write_json(&path, &outcome.report)?;
    }
    Ok(outcome)
}
