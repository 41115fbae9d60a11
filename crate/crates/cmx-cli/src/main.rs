use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use cmx_core::complexity::{self, Skeleton};
use cmx_core::discovery::{self, GTestOracle, NoOrientation, ENV_NAME};
use cmx_core::equivalence::{self, DEFAULT_BRUTE_FORCE_CAP, DEFAULT_MEMBER_CAP};
use cmx_core::graph::stable_graph;
use cmx_core::minimax::{self, DEFAULT_POLICY_CAP};
use cmx_core::scm::{random_scm, DiscreteScm, RandomScmConfig, ScmJson};
use cmx_core::{Error, GraphJson, MixedGraph, ProblemSpec, Result};

const SIG_DIGITS: usize = 12;

#[derive(Parser)]
#[command(name = "cmx", version, about = "Causal minimax subset selection")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equivalence classes of stable subsets.
    Recover {
        graph: PathBuf,
        /// Use the brute-force pairwise partition instead of the recursion.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = DEFAULT_BRUTE_FORCE_CAP)]
        cap_bruteforce: usize,
    },
    /// Optimal stable subset of a discrete SCM.
    Select {
        scm: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POLICY_CAP)]
        cap_policies: u128,
    },
    /// Mutable set, skeleton, X_M^0 and W from a hidden graph or from data.
    Discover {
        /// Graph JSON (oracle mode) or CSV with an `env` column (data mode).
        input: PathBuf,
        /// Force oracle mode even for an input without a .json extension.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = discovery::DEFAULT_ALPHA)]
        alpha: f64,
        /// Target column in data mode.
        #[arg(long)]
        target: Option<String>,
    },
    /// Chain metric F_G, N_G and the bound check.
    Complexity {
        graph: Option<PathBuf>,
        /// Emit the growth sweep CSV up to this many covariates instead.
        #[arg(long)]
        sweep: Option<usize>,
        /// Skip N_G above this many covariates.
        #[arg(long, default_value_t = complexity::DEFAULT_NG_CAP_VERTICES)]
        cap_ng: usize,
    },
    /// Random discrete SCM.
    Generate(GenerateArgs),
    /// The three-variable SCM on which the full stable set loses to the empty set.
    Counterexample {
        #[arg(long, default_value_t = DEFAULT_POLICY_CAP)]
        cap_policies: u128,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    stable: usize,
    #[arg(long, default_value_t = 1)]
    mutable: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    #[arg(long, default_value_t = 2)]
    domain: usize,
    #[arg(long, default_value_t = 2)]
    envs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e {
                Error::Input(_) => 2,
                Error::CapExceeded(_) => 3,
                Error::Invariant(_) => 4,
            };
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().map_err(|e| Error::Input(e.to_string()))?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Recover { graph, oracle, cap_bruteforce } => {
            let (g, spec) = read_graph(graph)?;
            let g_s = stable_graph(&g, &spec);
            let p = if *oracle {
                equivalence::brute_force_partition(&g_s, spec.target, *cap_bruteforce)?
            } else {
                equivalence::recover_classes(&g_s, spec.target)
            };
            emit_json(out, &p.to_json(&g_s, DEFAULT_MEMBER_CAP))
        }
        Command::Select { scm, cap_policies } => {
            let scm = read_scm(scm)?;
            emit_json(out, &select_json(&scm, *cap_policies)?)
        }
        Command::Discover { input, oracle, alpha, target } => {
            let is_json = input.extension().is_some_and(|e| e == "json");
            let result = if *oracle || is_json {
                let (g, spec) = read_graph(input)?;
                discovery::discover_from_graph(&g, &spec)?
            } else {
                let target = target.as_deref().ok_or_else(|| Error::Input("data mode needs --target".into()))?;
                let (names, rows) = read_samples(input)?;
                let t = names
                    .iter()
                    .position(|n| n == target)
                    .ok_or_else(|| Error::Input(format!("no column named {target:?}")))?;
                let oracle = GTestOracle::new(rows, *alpha)?;
                discovery::discover(&oracle, &names, t, &NoOrientation)?
            };
            emit_json(out, &result.to_json())
        }
        Command::Complexity { graph, sweep, cap_ng } => {
            if let Some(max_d) = sweep {
                let mut w = csv::Writer::from_writer(Vec::new());
                for row in complexity::growth_sweep(*max_d)? {
                    w.serialize(row).map_err(|e| Error::Invariant(e.to_string()))?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
                return emit_bytes(out, &bytes);
            }
            let graph = graph.as_ref().ok_or_else(|| Error::Input("complexity needs a graph or --sweep".into()))?;
            let (g, spec) = read_graph(graph)?;
            let g_s = stable_graph(&g, &spec);
            let report = complexity::certify_bounds(&g_s, spec.target, complexity::DEFAULT_F_CAP, *cap_ng)?;
            let lemmas = complexity::structural_lemma_checks(&Skeleton::from_graph(&g_s, spec.target));
            emit_json(out, &serde_json::json!({ "report": report, "lemmas": lemmas }))
        }
        Command::Generate(a) => {
            let cfg = RandomScmConfig {
                n_stable: a.stable,
                n_mutable: a.mutable,
                edge_prob: a.edge_prob,
                domain: a.domain,
                n_envs: a.envs,
            };
            let scm = random_scm(&cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
            emit_json(out, &scm.to_json())
        }
        Command::Counterexample { cap_policies } => {
            let scm = minimax::counterexample_scm(&minimax::CounterexampleParams::default())?;
            let s = scm.spec.stable;
            let (l_s, _) = minimax::worst_case_risk(&scm, s, *cap_policies)?;
            let (l_empty, _) = minimax::worst_case_risk(&scm, 0, *cap_policies)?;
            let selection = select_json(&scm, *cap_policies)?;
            emit_json(
                out,
                &serde_json::json!({
                    "l_s": l_s,
                    "l_empty": l_empty,
                    "gap": l_s - l_empty,
                    "certified": l_s > l_empty,
                    "selection": selection,
                    "scm": scm.to_json(),
                }),
            )
        }
    }
}

#[derive(Serialize)]
struct ConditionJson {
    holds: bool,
    xm0: Vec<String>,
    w: Vec<String>,
    w2: Vec<String>,
    violating: Vec<String>,
    x_do: Vec<String>,
    regeneration: Vec<String>,
}

#[derive(Serialize)]
struct ClassRiskJson {
    representative: Vec<String>,
    size: u128,
    risk: f64,
    policy: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize)]
struct SelectJson {
    reason: minimax::SelectionReason,
    s_star: Vec<String>,
    condition: ConditionJson,
    classes: Vec<ClassRiskJson>,
}

fn select_json(scm: &DiscreteScm, cap: u128) -> Result<SelectJson> {
    let r = minimax::select_optimal_subset(scm, cap)?;
    let names = |s| scm.graph.names_of(s);
    let c = &r.condition;
    Ok(SelectJson {
        reason: r.reason,
        s_star: names(r.s_star),
        condition: ConditionJson {
            holds: c.holds,
            xm0: names(c.xm0),
            w: names(c.w),
            w2: names(c.w2),
            violating: names(c.violating),
            x_do: names(c.x_do),
            regeneration: names(c.regeneration),
        },
        classes: r
            .classes
            .iter()
            .map(|k| ClassRiskJson {
                representative: names(k.representative),
                size: k.size,
                risk: k.risk,
                policy: k.policy.to_json(scm),
            })
            .collect(),
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Reads graph JSON, or the graph inside SCM JSON. With no stable or
/// mutable lists every non-target vertex is stable.
fn read_graph(path: &Path) -> Result<(MixedGraph, ProblemSpec)> {
    let mut v: Value = serde_json::from_str(&read_to_string(path)?)?;
    if let Some(inner) = v.get_mut("graph") {
        v = inner.take();
    }
    let mut gj: GraphJson = serde_json::from_value(v)?;
    if gj.stable.is_empty() && gj.mutable.is_empty() {
        gj.stable = gj.vertices.iter().filter(|v| **v != gj.target).cloned().collect();
    }
    gj.build()
}

fn read_scm(path: &Path) -> Result<DiscreteScm> {
    let sj: ScmJson = serde_json::from_str(&read_to_string(path)?)?;
    sj.build()
}

/// CSV samples with an `env` column. Each column's distinct values are
/// mapped to category indices in sorted order; env goes last.
fn read_samples(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| Error::Input(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let env_col =
        header.iter().position(|h| h == ENV_NAME).ok_or_else(|| Error::Input(format!("no {ENV_NAME:?} column")))?;
    let mut raw: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
        raw.push(rec.iter().map(|x| x.trim().to_string()).collect());
    }
    if raw.is_empty() {
        return Err(Error::Input("no samples".into()));
    }
    if raw.iter().any(|r| r[env_col].is_empty()) {
        return Err(Error::Input("empty env value".into()));
    }
    let mut cols: Vec<usize> = (0..header.len()).filter(|&c| c != env_col).collect();
    let names: Vec<String> = cols.iter().map(|&c| header[c].clone()).collect();
    cols.push(env_col);
    let codes: Vec<BTreeMap<&str, usize>> = cols
        .iter()
        .map(|&c| {
            let mut vals: Vec<&str> = raw.iter().map(|r| r[c].as_str()).collect();
            vals.sort();
            vals.dedup();
            vals.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
        })
        .collect();
    let rows = raw.iter().map(|r| cols.iter().zip(&codes).map(|(&c, m)| m[r[c].as_str()]).collect()).collect();
    Ok((names, rows))
}

/// Rounds to `SIG_DIGITS` significant digits.
fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    emit_bytes(out, text.as_bytes())
}

fn emit_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}
