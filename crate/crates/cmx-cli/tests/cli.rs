use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmx_core::scm::{random_tables, ScmJson};
use cmx_core::set::{self, bit};
use cmx_core::{GraphJson, MixedGraph, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn cmx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmx")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = cmx(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn write_graph(dir: &TempDir, name: &str, g: &MixedGraph, spec: &ProblemSpec) -> PathBuf {
    write(dir, name, &serde_json::to_string(&GraphJson::from_graph(g, spec)).unwrap())
}

fn all_stable(g: &MixedGraph) -> ProblemSpec {
    ProblemSpec::new(g, 0, g.present() & !1, 0).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn names(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
}

fn example_graph() -> MixedGraph {
    MixedGraph::dag(
        &["Y", "X1", "X2", "X3", "X4", "X5"],
        &[("Y", "X1"), ("X1", "X2"), ("X1", "X4"), ("Y", "X3"), ("X4", "X3")],
    )
    .unwrap()
}

fn chain(d: usize, closed: bool) -> MixedGraph {
    let names: Vec<String> = std::iter::once("Y".to_string()).chain((1..=d).map(|i| format!("X{i}"))).collect();
    let mut g = MixedGraph::new(&names).unwrap();
    for i in 0..d {
        g.add_directed(i, i + 1).unwrap();
    }
    if closed {
        g.add_directed(0, d).unwrap();
    }
    g
}

#[test]
fn recover_example_graph() {
    let dir = TempDir::new().unwrap();
    let g = example_graph();
    let p = write_graph(&dir, "g.json", &g, &all_stable(&g));
    let rec = ok_json(&["recover", s(&p)]);
    assert_eq!(rec["n_g"], 11);
    let bf = ok_json(&["recover", s(&p), "--oracle"]);
    assert_eq!(rec, bf);
    let sizes: u64 = rec["classes"].as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).sum();
    assert_eq!(sizes, 32);
}

#[test]
fn recover_without_neighbors_has_one_class() {
    let dir = TempDir::new().unwrap();
    let g = MixedGraph::dag(&["Y", "A", "B"], &[("A", "B")]).unwrap();
    let p = write_graph(&dir, "g.json", &g, &all_stable(&g));
    assert_eq!(ok_json(&["recover", s(&p)])["n_g"], 1);
}

#[test]
fn recover_matches_bruteforce_flag_on_random_graphs() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10 {
        let n = rng.gen_range(3..=7);
        let names: Vec<String> = (0..n).map(|k| if k == 0 { "Y".into() } else { format!("V{k}") }).collect();
        let mut g = MixedGraph::new(&names).unwrap();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.4) {
                    g.add_directed(a, b).unwrap();
                }
            }
        }
        let p = write_graph(&dir, &format!("r{i}.json"), &g, &all_stable(&g));
        assert_eq!(ok_json(&["recover", s(&p)]), ok_json(&["recover", s(&p), "--oracle"]));
    }
}

#[test]
fn generate_is_reproducible() {
    let a = cmx(&["generate", "--seed", "11", "--stable", "4", "--mutable", "2"]);
    let b = cmx(&["generate", "--seed", "11", "--stable", "4", "--mutable", "2"]);
    let c = cmx(&["generate", "--seed", "12", "--stable", "4", "--mutable", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let sj: ScmJson = serde_json::from_slice(&a.stdout).unwrap();
    let scm = sj.build().unwrap();
    for t in scm.cpt.iter().chain(scm.mutable_cpt.iter().flatten()) {
        for row in t {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert_eq!(scm.environments.len(), 2);
    assert_eq!(set::len(scm.spec.mutable), 2);
}

#[test]
fn generate_writes_to_out() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("scm.json");
    let out = cmx(&["generate", "--seed", "1", "--out", s(&p)]);
    assert!(out.status.success() && out.stdout.is_empty());
    let on_disk = std::fs::read(&p).unwrap();
    assert_eq!(on_disk, cmx(&["generate", "--seed", "1"]).stdout);
}

#[test]
fn select_is_independent_of_jobs() {
    let dir = TempDir::new().unwrap();
    for seed in 0..4 {
        let scm =
            cmx(&["generate", "--seed", &seed.to_string(), "--stable", "3", "--mutable", "2", "--edge-prob", "0.6"]);
        let p = write(&dir, &format!("s{seed}.json"), &String::from_utf8(scm.stdout).unwrap());
        let one = cmx(&["select", s(&p), "--jobs", "1"]);
        let four = cmx(&["select", s(&p), "--jobs", "4"]);
        assert!(one.status.success());
        assert_eq!(one.stdout, four.stdout);
    }
}

fn scm_file(dir: &TempDir, name: &str, g: MixedGraph, spec: ProblemSpec, seed: u64) -> PathBuf {
    let scm = random_tables(g, spec, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    write(dir, name, &serde_json::to_string(&scm.to_json()).unwrap())
}

/// `Y -> XM -> X1 <- X2 <- Y` with XM mutable: the condition holds.
fn condition_fixture() -> (MixedGraph, ProblemSpec) {
    let g = MixedGraph::dag(&["Y", "XM", "X1", "X2"], &[("Y", "XM"), ("XM", "X1"), ("Y", "X2"), ("X2", "X1")]).unwrap();
    let spec = ProblemSpec::new(&g, 0, bit(2) | bit(3), bit(1)).unwrap();
    (g, spec)
}

/// `Y -> XM -> X1 <- Y`: X1 is a child of Y below the mutable child.
fn violating_fixture() -> (MixedGraph, ProblemSpec) {
    let g = MixedGraph::dag(&["Y", "XM", "X1"], &[("Y", "XM"), ("XM", "X1"), ("Y", "X1")]).unwrap();
    let spec = ProblemSpec::new(&g, 0, bit(2), bit(1)).unwrap();
    (g, spec)
}

#[test]
fn select_graphical_when_condition_holds() {
    let dir = TempDir::new().unwrap();
    let (g, spec) = condition_fixture();
    let p = scm_file(&dir, "a.json", g, spec, 3);
    let r = ok_json(&["select", s(&p)]);
    assert_eq!(r["reason"], "graphical");
    assert_eq!(names(&r["s_star"]), vec!["X1", "X2"]);
    assert_eq!(names(&r["condition"]["w"]), vec!["X1"]);
}

#[test]
fn select_without_mutables_keeps_everything() {
    let dir = TempDir::new().unwrap();
    let g = MixedGraph::dag(&["Y", "A", "B"], &[("Y", "A"), ("B", "Y")]).unwrap();
    let spec = all_stable(&g);
    let p = scm_file(&dir, "m.json", g, spec, 4);
    let r = ok_json(&["select", s(&p)]);
    assert_eq!(r["reason"], "graphical");
    assert_eq!(names(&r["s_star"]), vec!["A", "B"]);
}

#[test]
fn select_minimax_reports_sorted_class_risks() {
    let dir = TempDir::new().unwrap();
    let (g, spec) = violating_fixture();
    let p = scm_file(&dir, "b.json", g, spec, 5);
    let r = ok_json(&["select", s(&p)]);
    assert_eq!(r["reason"], "minimax");
    let risks: Vec<f64> = r["classes"].as_array().unwrap().iter().map(|c| c["risk"].as_f64().unwrap()).collect();
    assert!(risks.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(r["s_star"], r["classes"][0]["representative"]);
}

#[test]
fn counterexample_prefers_the_empty_set() {
    let r = ok_json(&["counterexample"]);
    assert_eq!(r["certified"], true);
    assert!(r["gap"].as_f64().unwrap() > 0.0);
    assert_eq!(r["l_empty"].as_f64().unwrap(), 0.000999);
    assert!(r["l_s"].as_f64().unwrap() > r["l_empty"].as_f64().unwrap());
    assert_eq!(r["selection"]["reason"], "minimax");
    assert_eq!(names(&r["selection"]["s_star"]), Vec::<String>::new());
}

#[test]
fn complexity_on_chains_and_circles() {
    let dir = TempDir::new().unwrap();
    for (g, want) in [(chain(10, false), 11), (chain(5, true), 16)] {
        let p = write_graph(&dir, "c.json", &g, &all_stable(&g));
        let r = ok_json(&["complexity", s(&p)]);
        assert_eq!(r["report"]["f_g"], want);
        assert_eq!(r["report"]["n_g"], want);
        assert_eq!(r["report"]["bounds_hold"], true);
    }
}

#[test]
fn complexity_sweep_emits_csv() {
    let out = cmx(&["complexity", "--sweep", "6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("family,d_s,d_gt2,f_g,n_g"));
    assert_eq!(lines.count(), 2 * 5);
}

#[test]
fn discover_oracle_mode() {
    let dir = TempDir::new().unwrap();
    let (g, spec) = violating_fixture();
    let p = write_graph(&dir, "v.json", &g, &spec);
    let r = ok_json(&["discover", s(&p)]);
    assert_eq!(names(&r["mutable"]), vec!["XM"]);
    assert_eq!(names(&r["xm0"]), vec!["XM"]);
    assert_eq!(names(&r["w"]), vec!["X1"]);
    assert_eq!(r["condition_holds"], false);
    // an SCM file carries its graph
    let (g, spec) = condition_fixture();
    let p = scm_file(&dir, "a.json", g, spec, 6);
    assert_eq!(ok_json(&["discover", s(&p)])["condition_holds"], true);
}

fn samples_csv(dir: &TempDir, g: MixedGraph, spec: ProblemSpec, seed: u64, n: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scm = random_tables(g, spec, 2, 2, &mut rng).unwrap();
    let mut text = scm.graph.names().join(",") + ",env\n";
    for e in 0..scm.environments.len() {
        for row in scm.sample(e, n, &mut rng) {
            let vals: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            text += &format!("{},{}\n", vals.join(","), scm.environments[e]);
        }
    }
    write(dir, "data.csv", &text)
}

#[test]
fn discover_data_mode_flags_the_violation() {
    let dir = TempDir::new().unwrap();
    let (g, spec) = violating_fixture();
    let p = samples_csv(&dir, g, spec, 21, 50_000);
    let r = ok_json(&["discover", s(&p), "--target", "Y", "--alpha", "0.05"]);
    assert_eq!(names(&r["mutable"]), vec!["XM"]);
    assert_eq!(r["condition_holds"], false);
}

#[test]
fn input_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let no_env = write(&dir, "x.csv", "Y,A\n0,1\n1,0\n");
    let empty_env = write(&dir, "e.csv", "Y,A,env\n0,1,\n1,0,a\n");
    let bad = write(&dir, "bad.json", "{\"vertices\": [\"Y\"]}");
    for args in [
        vec!["discover", s(&no_env), "--target", "Y"],
        vec!["discover", s(&empty_env), "--target", "Y"],
        vec!["discover", s(&no_env)],
        vec!["recover", s(&bad)],
        vec!["recover", "/nonexistent/graph.json"],
    ] {
        let out = cmx(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "input");
        assert!(err["message"].is_string());
    }
}

#[test]
fn cap_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let (g, spec) = violating_fixture();
    let p = scm_file(&dir, "b.json", g, spec, 7);
    let out = cmx(&["select", s(&p), "--cap-policies", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "cap_exceeded");
    assert!(err["message"].as_str().unwrap().contains("enumeration infeasible"));
    let g = chain(9, false);
    let p = write_graph(&dir, "c.json", &g, &all_stable(&g));
    assert_eq!(cmx(&["recover", s(&p), "--oracle", "--cap-bruteforce", "8"]).status.code(), Some(3));
}

#[test]
fn floats_are_rounded() {
    let r = ok_json(&["counterexample"]);
    let gap = r["gap"].as_f64().unwrap();
    assert_eq!(format!("{gap:.11e}").parse::<f64>().unwrap(), gap);
}
