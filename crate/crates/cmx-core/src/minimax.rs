//! Exact interventional quantities, stable predictors and worst-case risks
//! on discrete SCMs, the graphical condition and subset selection.

use rayon::prelude::*;
use serde::Serialize;

use crate::equivalence::{recover_classes, subset_key};
use crate::error::{Error, Result};
use crate::graph::{stable_graph, MixedGraph, ProblemSpec};
use crate::scm::{DiscreteScm, Encoder, InterventionPolicy, MutableRule, Table};
use crate::set::{self, bit, VSet};

pub const DEFAULT_POLICY_CAP: u128 = 1_000_000;
pub const DEGENERATION_TOLERANCE: f64 = 1e-9;
/// Relative tolerance under which two worst-case risks count as tied.
pub const RISK_TIE_TOLERANCE: f64 = 1e-12;

/// Joint over all variables with mutable ones fixed by `do_vals` (indexed
/// by vertex). Mutable factors are dropped, so no environment enters.
pub fn interventional_distribution(scm: &DiscreteScm, do_vals: &[usize]) -> Result<Vec<(Vec<usize>, f64)>> {
    check_do(scm, do_vals)?;
    let mut out = Vec::new();
    scm.enumerate(MutableRule::Do(do_vals), |a, p| out.push((a.to_vec(), p)));
    Ok(out)
}

fn check_do(scm: &DiscreteScm, do_vals: &[usize]) -> Result<()> {
    if do_vals.len() != scm.graph.n() {
        return Err(Error::Input("do assignment must cover every vertex slot".into()));
    }
    for v in set::iter(scm.spec.mutable) {
        if do_vals[v] >= scm.domains[v] {
            return Err(Error::Input(format!("do value out of range for {}", scm.graph.name(v))));
        }
    }
    Ok(())
}

/// `f(x_s, x_M) = E[Y | x_s, do(x_M)]` tabulated over `s ∪ M`.
#[derive(Debug, Clone)]
pub struct StablePredictor {
    pub subset: VSet,
    s_enc: Encoder,
    m_enc: Encoder,
    values: Vec<f64>,
}

impl StablePredictor {
    pub fn eval(&self, assign: &[usize]) -> f64 {
        self.values[self.s_enc.encode(assign) * self.m_enc.size() + self.m_enc.encode(assign)]
    }
}

/// Configurations of `s` with zero interventional mass get the
/// interventional mean of Y under the same `x_M`.
pub fn stable_predictor(scm: &DiscreteScm, s: VSet) -> Result<StablePredictor> {
    if s & !scm.spec.stable != 0 {
        return Err(Error::Input("predictor subset must be stable".into()));
    }
    let s_enc = scm.encoder(s);
    let m_enc = scm.encoder(scm.spec.mutable);
    let (ns, nm) = (s_enc.size(), m_enc.size());
    let mut values = vec![0.0; ns * nm];
    let mut do_vals = vec![0usize; scm.graph.n()];
    for m in 0..nm {
        m_enc.decode_into(m, &mut do_vals);
        let mut num = vec![0.0; ns];
        let mut den = vec![0.0; ns];
        let mut mean = 0.0;
        scm.enumerate(MutableRule::Do(&do_vals), |a, p| {
            let k = s_enc.encode(a);
            let y = scm.y_value(a);
            num[k] += p * y;
            den[k] += p;
            mean += p * y;
        });
        for k in 0..ns {
            values[k * nm + m] = if den[k] > 0.0 { num[k] / den[k] } else { mean };
        }
    }
    Ok(StablePredictor { subset: s, s_enc, m_enc, values })
}

/// Expected squared loss of `pred` when mutable variables follow `rule`.
pub fn risk_under(scm: &DiscreteScm, pred: &StablePredictor, rule: MutableRule<'_>) -> f64 {
    let mut r = 0.0;
    scm.enumerate(rule, |a, p| {
        let e = scm.y_value(a) - pred.eval(a);
        r += p * e * e;
    });
    r
}

pub fn policy_risk(scm: &DiscreteScm, s: VSet, pol: &InterventionPolicy) -> Result<f64> {
    let pred = stable_predictor(scm, s)?;
    Ok(risk_under(scm, &pred, MutableRule::Policy(pol)))
}

/// Number of deterministic policies.
pub fn policy_count(scm: &DiscreteScm) -> u128 {
    let mut total: u128 = 1;
    for v in scm.mutable_order() {
        for _ in 0..scm.n_rows(v) {
            total = total.saturating_mul(scm.domains[v] as u128);
        }
    }
    total
}

/// The policy with index `k`: digits run over mutable variables in
/// topological order and, within one, over parent configurations, the
/// first digit most significant.
pub fn policy_at(scm: &DiscreteScm, mut k: u128) -> InterventionPolicy {
    let vars = scm.mutable_order();
    let mut maps: Vec<Vec<usize>> = vars.iter().map(|&v| vec![0; scm.n_rows(v)]).collect();
    for (i, &v) in vars.iter().enumerate().rev() {
        let d = scm.domains[v] as u128;
        for row in (0..maps[i].len()).rev() {
            maps[i][row] = (k % d) as usize;
            k /= d;
        }
    }
    InterventionPolicy { vars, maps }
}

/// Maximum risk over all deterministic policies, with the lowest-index
/// maximizer.
pub fn worst_case_risk(scm: &DiscreteScm, s: VSet, cap: u128) -> Result<(f64, InterventionPolicy)> {
    let count = policy_count(scm);
    if count > cap || count > u64::MAX as u128 {
        return Err(Error::CapExceeded(format!(
            "enumeration infeasible: {count} deterministic policies exceed cap {cap}"
        )));
    }
    let pred = stable_predictor(scm, s)?;
    let (risk, idx) = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let pol = policy_at(scm, k as u128);
            (risk_under(scm, &pred, MutableRule::Policy(&pol)), k)
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX),
            |a, b| {
                if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
                    a
                } else {
                    b
                }
            },
        );
    Ok((risk, policy_at(scm, idx as u128)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionReport {
    pub xm0: VSet,
    pub w: VSet,
    pub w2: VSet,
    /// Members of W that the target points to.
    pub violating: VSet,
    pub holds: bool,
    pub x_do: VSet,
    pub regeneration: VSet,
}

/// Tests whether the target points into the strict descendants of its
/// mutable children.
pub fn graphical_condition(g: &MixedGraph, spec: &ProblemSpec) -> Result<ConditionReport> {
    let y = spec.target;
    let ch_y = g.children(y);
    let xm0 = spec.mutable & ch_y;
    let de = g.descendants_of(xm0);
    let w = de & !xm0;
    let w2 = spec.covariates() & !(xm0 | de);
    let violating = w & ch_y;
    if violating != w & g.neighbors(y) {
        return Err(Error::Invariant("target adjacent to W without pointing into it".into()));
    }
    let (x_do, regeneration) = minimal_regeneration_set(g, spec)?;
    Ok(ConditionReport { xm0, w, w2, violating, holds: violating == 0, x_do, regeneration })
}

/// Strict descendants of `x_do` once arrows into `x_do` are cut.
pub fn regenerated_by(g: &MixedGraph, x_do: VSet) -> VSet {
    g.mutilate(x_do).descendants_of(x_do) & !x_do
}

/// Whether `x_do` contains X_M^0 and avoids the stable children of Y.
pub fn is_admissible(g: &MixedGraph, spec: &ProblemSpec, x_do: VSet) -> bool {
    let ch_y = g.children(spec.target);
    let xm0 = spec.mutable & ch_y;
    xm0 & !x_do == 0 && spec.stable & ch_y & x_do == 0
}

/// The intervention set `X_M^0 ∪ (De(X_M^0) \ Ch(Y))` and the set it
/// regenerates, checked against `De(X_M^0) ∩ X_S ∩ Ch(Y)`.
pub fn minimal_regeneration_set(g: &MixedGraph, spec: &ProblemSpec) -> Result<(VSet, VSet)> {
    let ch_y = g.children(spec.target);
    let xm0 = spec.mutable & ch_y;
    let de = g.descendants_of(xm0);
    let x_do = xm0 | (de & !ch_y);
    let regen = regenerated_by(g, x_do);
    if regen != de & spec.stable & ch_y {
        return Err(Error::Invariant("regeneration set differs from De(X_M^0) ∩ X_S ∩ Ch(Y)".into()));
    }
    Ok((x_do, regen))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegenerationWitness {
    /// Full assignment of the violating configuration (target entry unused).
    pub assignment: Vec<usize>,
    pub p_do: Vec<f64>,
    pub p_w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegenerationReport {
    pub holds: bool,
    pub witness: Option<DegenerationWitness>,
}

/// Checks `P(Y | x_S, do(x_M)) = P(Y | w_2)` on every configuration with
/// positive interventional mass, `P(Y | w_2)` taken from the first
/// environment.
pub fn check_degeneration(scm: &DiscreteScm) -> Result<DegenerationReport> {
    let cond = graphical_condition(&scm.graph, &scm.spec)?;
    let y = scm.spec.target;
    let ny = scm.domains[y];
    let w2_enc = scm.encoder(cond.w2);
    let mut obs = vec![0.0; w2_enc.size() * ny];
    let none = vec![0usize; scm.graph.n()];
    let rule = if scm.spec.mutable == 0 { MutableRule::Do(&none) } else { MutableRule::Env(0) };
    scm.enumerate(rule, |a, p| obs[w2_enc.encode(a) * ny + a[y]] += p);
    let s_enc = scm.encoder(scm.spec.stable);
    let m_enc = scm.encoder(scm.spec.mutable);
    let mut do_vals = vec![0usize; scm.graph.n()];
    for m in 0..m_enc.size() {
        m_enc.decode_into(m, &mut do_vals);
        let mut joint = vec![0.0; s_enc.size() * ny];
        let mut rep: Vec<Option<Vec<usize>>> = vec![None; s_enc.size()];
        scm.enumerate(MutableRule::Do(&do_vals), |a, p| {
            let k = s_enc.encode(a);
            joint[k * ny + a[y]] += p;
            if rep[k].is_none() {
                rep[k] = Some(a.to_vec());
            }
        });
        for k in 0..s_enc.size() {
            let Some(a) = &rep[k] else { continue };
            let mass: f64 = joint[k * ny..(k + 1) * ny].iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let wk = w2_enc.encode(a);
            let wmass: f64 = obs[wk * ny..(wk + 1) * ny].iter().sum();
            if wmass <= 0.0 {
                continue;
            }
            let p_do: Vec<f64> = joint[k * ny..(k + 1) * ny].iter().map(|q| q / mass).collect();
            let p_w2: Vec<f64> = obs[wk * ny..(wk + 1) * ny].iter().map(|q| q / wmass).collect();
            if p_do.iter().zip(&p_w2).any(|(a, b)| (a - b).abs() > DEGENERATION_TOLERANCE) {
                return Ok(DegenerationReport {
                    holds: false,
                    witness: Some(DegenerationWitness { assignment: a.clone(), p_do, p_w2 }),
                });
            }
        }
    }
    Ok(DegenerationReport { holds: true, witness: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionReason {
    Graphical,
    Minimax,
}

#[derive(Debug, Clone)]
pub struct ClassRisk {
    pub representative: VSet,
    pub size: u128,
    pub risk: f64,
    pub policy: InterventionPolicy,
}

#[derive(Debug, Clone)]
pub struct RiskReport {
    pub condition: ConditionReport,
    pub reason: SelectionReason,
    pub s_star: VSet,
    /// Ranked by risk, ties by cardinality then names.
    pub classes: Vec<ClassRisk>,
}

/// If the graphical condition holds the full stable set is optimal.
/// Otherwise each equivalence class of the stable graph is scored by the
/// worst-case risk of its representative.
pub fn select_optimal_subset(scm: &DiscreteScm, cap: u128) -> Result<RiskReport> {
    let condition = graphical_condition(&scm.graph, &scm.spec)?;
    if condition.holds {
        return Ok(RiskReport {
            condition,
            reason: SelectionReason::Graphical,
            s_star: scm.spec.stable,
            classes: Vec::new(),
        });
    }
    let g_s = stable_graph(&scm.graph, &scm.spec);
    let partition = recover_classes(&g_s, scm.spec.target);
    let mut classes = partition
        .classes
        .par_iter()
        .map(|c| {
            worst_case_risk(scm, c.representative, cap).map(|(risk, policy)| ClassRisk {
                representative: c.representative,
                size: c.size(),
                risk,
                policy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let key = |c: &ClassRisk| subset_key(&scm.graph, c.representative);
    classes.sort_by(|a, b| a.risk.total_cmp(&b.risk).then_with(|| key(a).cmp(&key(b))));
    let best = classes[0].risk;
    let tol = RISK_TIE_TOLERANCE * best.abs().max(1.0);
    let s_star = classes
        .iter()
        .filter(|c| c.risk - best <= tol)
        .min_by_key(|c| key(c))
        .map(|c| c.representative)
        .expect("at least one class");
    Ok(RiskReport { condition, reason: SelectionReason::Minimax, s_star, classes })
}

/// Parameters of the three-variable binary counterexample
/// `Y -> Xm, Y -> Xs, Xm -> Xs`. `a_s[m][y]` is `P(Xs = 1 | Xm = m, Y = y)`
/// and `a_m[e][y]` is `P(Xm = 1 | Y = y)` in environment `e`.
#[derive(Debug, Clone)]
pub struct CounterexampleParams {
    pub a_y: f64,
    pub a_s: [[f64; 2]; 2],
    pub a_m: Vec<[f64; 2]>,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        CounterexampleParams { a_y: 0.001, a_s: [[0.5, 0.5], [0.001, 0.999]], a_m: vec![[0.2, 0.7], [0.6, 0.3]] }
    }
}

pub fn counterexample_scm(params: &CounterexampleParams) -> Result<DiscreteScm> {
    let g = MixedGraph::dag(&["Xm", "Xs", "Y"], &[("Y", "Xm"), ("Y", "Xs"), ("Xm", "Xs")])?;
    let (xm, xs, y) = (0, 1, 2);
    let spec = ProblemSpec::new(&g, y, bit(xs), bit(xm))?;
    let bern = |p: f64| vec![1.0 - p, p];
    let mut cpt: Vec<Table> = vec![Vec::new(); 3];
    cpt[y] = vec![bern(params.a_y)];
    // parents of Xs by name: Xm, Y
    cpt[xs] = vec![bern(params.a_s[0][0]), bern(params.a_s[0][1]), bern(params.a_s[1][0]), bern(params.a_s[1][1])];
    let mut mutable_cpt = vec![Vec::new(); 3];
    mutable_cpt[xm] = params.a_m.iter().map(|a| vec![bern(a[0]), bern(a[1])]).collect();
    let envs = (1..=params.a_m.len()).map(|i| format!("e{i}")).collect();
    DiscreteScm::new(g, spec, vec![2, 2, 2], vec![0.0, 1.0], cpt, mutable_cpt, envs)
}
