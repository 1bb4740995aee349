//! Rule dependency graph and level-wise fixpoint inference.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::{debug, trace};
use petgraph::algo::condensation;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::{EdgeRef, Topo};
use petgraph::Direction;
use rayon::prelude::*;

use crate::dictionary::Sym;
use crate::error::{Error, Result};
use crate::fact::{Action, Fact, Rule, Var};
use crate::fork_join::ForkJoin;
use crate::index::{PartitionWriter, Rank1Index};
use crate::island::{execute_plan, plan_rules, EvalConfig};
use crate::join::{flag_enum, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleType {
    Derivation,
    Query,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum TreeMode {
    /// Out-groups of a level evaluate concurrently.
    #[default]
    Pf,
    Sf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum WriteMode {
    /// Out-groups write their own partitions concurrently.
    #[default]
    Pw,
    Sw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum UniqueMode {
    /// Sort, dedup and probe the index in parallel.
    #[default]
    Su,
    /// Incremental hash set per fact type.
    Hu,
}

flag_enum!(TreeMode, Pf => "pf", Sf => "sf");
flag_enum!(WriteMode, Pw => "pw", Sw => "sw");
flag_enum!(UniqueMode, Su => "su", Hu => "hu");

impl TreeMode {
    pub const ALL: [TreeMode; 2] = [TreeMode::Pf, TreeMode::Sf];
}

impl WriteMode {
    pub const ALL: [WriteMode; 2] = [WriteMode::Pw, WriteMode::Sw];
}

impl UniqueMode {
    pub const ALL: [UniqueMode; 2] = [UniqueMode::Su, UniqueMode::Hu];
}

pub const DEFAULT_MAX_PASSES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferenceConfig {
    pub eval: EvalConfig,
    pub tree: TreeMode,
    pub write: WriteMode,
    pub unique: UniqueMode,
    pub max_passes: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            eval: EvalConfig::default(),
            tree: TreeMode::default(),
            write: WriteMode::default(),
            unique: UniqueMode::default(),
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

/// Rules as nodes, with an edge `p -> c` whenever `p` modifies a fact type
/// that `c` reads.
#[derive(Clone, Debug)]
pub struct DerivationGraph {
    rules: Vec<Rule>,
    graph: DiGraph<usize, ()>,
    levels: Vec<Vec<usize>>,
    level_of: Vec<usize>,
}

impl DerivationGraph {
    pub fn build(rules: Vec<Rule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Config(format!("duplicate rule name '{}'", r.name)));
            }
        }
        let mut graph = DiGraph::new();
        let nodes: Vec<NodeIndex> = (0..rules.len()).map(|i| graph.add_node(i)).collect();
        let outputs: Vec<Vec<Sym>> = rules.iter().map(Rule::output_types).collect();
        let inputs: Vec<Vec<Sym>> = rules.iter().map(Rule::input_types).collect();
        for (p, out) in outputs.iter().enumerate() {
            for (c, inp) in inputs.iter().enumerate() {
                if out.iter().any(|t| inp.contains(t)) {
                    graph.add_edge(nodes[p], nodes[c], ());
                }
            }
        }

        // longest-path layering of the condensation; a cycle shares one level
        let dag = condensation(graph.clone(), true);
        let mut depth = vec![0usize; dag.node_count()];
        let mut topo = Topo::new(&dag);
        while let Some(n) = topo.next(&dag) {
            for e in dag.edges_directed(n, Direction::Outgoing) {
                let t = e.target().index();
                depth[t] = depth[t].max(depth[n.index()] + 1);
            }
        }
        let mut level_of = vec![0; rules.len()];
        for n in dag.node_indices() {
            for &r in &dag[n] {
                level_of[r] = depth[n.index()];
            }
        }
        let height = level_of.iter().max().map_or(0, |m| m + 1);
        let mut levels = vec![Vec::new(); height];
        for (r, &l) in level_of.iter().enumerate() {
            levels[l].push(r);
        }
        Ok(Self { rules, graph, levels, level_of })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule_index(&self, name: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.name == name)
    }

    /// Rule indices per level, ascending within a level.
    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn level_of(&self, rule: usize) -> usize {
        self.level_of[rule]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.graph.contains_edge(NodeIndex::new(from), NodeIndex::new(to))
    }

    pub fn children(&self, rule: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.graph.neighbors_directed(NodeIndex::new(rule), Direction::Outgoing).map(|n| n.index()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// A rule with no add, delete or replace action is a query.
    pub fn rule_type(&self, rule: usize) -> RuleType {
        if self.rules[rule].is_query() {
            RuleType::Query
        } else {
            RuleType::Derivation
        }
    }

    /// Queries plus every rule from which a query can be reached.
    pub fn active_rules(&self) -> Vec<bool> {
        let mut active = vec![false; self.rules.len()];
        let mut stack: Vec<usize> = (0..self.rules.len()).filter(|&r| self.rule_type(r) == RuleType::Query).collect();
        while let Some(r) = stack.pop() {
            if std::mem::replace(&mut active[r], true) {
                continue;
            }
            stack.extend(
                self.graph.neighbors_directed(NodeIndex::new(r), Direction::Incoming).map(|n| n.index()).filter(|&p| !active[p]),
            );
        }
        active
    }

    pub fn active_names(&self) -> Vec<&str> {
        self.active_rules().iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| self.rules[i].name.as_str()).collect()
    }
}

/// Rules of one level that write overlapping fact types, merged until the
/// groups' output types are pairwise disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutGroup {
    pub output_types: Vec<Sym>,
    pub rules: Vec<usize>,
}

pub fn out_groups(rules: &[Rule], level: &[usize]) -> Vec<OutGroup> {
    let mut groups: Vec<OutGroup> = Vec::new();
    for &r in level {
        let types = rules[r].output_types();
        let mut merged = OutGroup { output_types: types.clone(), rules: vec![r] };
        let mut kept = Vec::with_capacity(groups.len());
        for g in groups.drain(..) {
            if g.output_types.iter().any(|t| types.contains(t)) {
                for t in g.output_types {
                    if !merged.output_types.contains(&t) {
                        merged.output_types.push(t);
                    }
                }
                merged.rules.extend(g.rules);
            } else {
                kept.push(g);
            }
        }
        merged.rules.sort_unstable();
        kept.push(merged);
        groups = kept;
    }
    groups.sort_by_key(|g| g.rules[0]);
    groups
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InferenceStats {
    /// Passes run, including the final one that changed nothing.
    pub passes: usize,
    pub facts_inferred: usize,
    pub facts_deleted: usize,
    pub rules_evaluated: usize,
    pub rules_skipped: usize,
    /// Evaluations per rule, indexed like the graph's rules.
    pub evaluations: Vec<usize>,
}

/// Changes one rule asks for, in application order.
#[derive(Clone, Debug, Default)]
struct Delta {
    deletes: Vec<Fact>,
    inserts: Vec<Fact>,
}

/// Turns match rows into fact changes: deletes, then replaces, then adds.
pub fn rule_delta(rule: &Rule, table: &Table) -> (Vec<Fact>, Vec<Fact>) {
    let lookup = |row: &[crate::fact::Value], v: &Var| table.column(v).map(|i| row[i]);
    let mut deletes = Vec::new();
    let mut inserts = Vec::new();
    for row in &table.rows {
        for a in &rule.actions {
            if let Action::Delete(t) = a {
                deletes.extend(t.instantiate(|v| lookup(row, v)));
            }
        }
    }
    let mut replaced = Vec::new();
    for row in &table.rows {
        for a in &rule.actions {
            if let Action::Replace(old, new) = a {
                deletes.extend(old.instantiate(|v| lookup(row, v)));
                replaced.extend(new.instantiate(|v| lookup(row, v)));
            }
        }
    }
    inserts.extend(replaced);
    for row in &table.rows {
        for a in &rule.actions {
            match a {
                Action::Add(t) => inserts.extend(t.instantiate(|v| lookup(row, v))),
                Action::External(label) => trace!("{}: {} {:?}", rule.name, label, row),
                _ => {}
            }
        }
    }
    (deletes, inserts)
}

fn evaluate_group(
    graph: &DerivationGraph,
    group: &OutGroup,
    plans: &HashMap<usize, crate::island::RulePlan>,
    idx: &Rank1Index,
    cfg: &InferenceConfig,
    fj: &ForkJoin,
) -> Result<Delta> {
    let mut delta = Delta::default();
    for &r in &group.rules {
        let rule = &graph.rules[r];
        let table = execute_plan(rule, &plans[&r], idx, cfg.eval, fj)?;
        let (d, i) = rule_delta(rule, &table);
        delta.deletes.extend(d);
        delta.inserts.extend(i);
    }
    Ok(delta)
}

/// Hash sets of known facts per fact type, filled from the index the first
/// time a type receives candidates.
#[derive(Default)]
struct HashUnique {
    sets: HashMap<Sym, HashSet<Fact>>,
}

impl HashUnique {
    fn seed(&mut self, idx: &Rank1Index, types: &[Sym]) {
        for &t in types {
            self.sets.entry(t).or_insert_with(|| idx.facts_of_type_via(t, crate::fact::JoinPosition::Id).into_iter().collect());
        }
    }
}

/// Write target for one group's delta.
trait FactSink {
    fn insert(&mut self, f: &Fact) -> bool;
    fn delete(&mut self, f: &Fact) -> bool;
}

impl FactSink for PartitionWriter<'_> {
    fn insert(&mut self, f: &Fact) -> bool {
        PartitionWriter::insert(self, f)
    }

    fn delete(&mut self, f: &Fact) -> bool {
        PartitionWriter::delete(self, f)
    }
}

impl FactSink for Rank1Index {
    fn insert(&mut self, f: &Fact) -> bool {
        self.insert_fact(f)
    }

    fn delete(&mut self, f: &Fact) -> bool {
        self.delete_fact(f)
    }
}

/// Applies deletes, then `inserts`, returning (inserted, deleted). `known`
/// is the hash set view under HU; under SU `inserts` is already filtered.
fn apply_delta(
    sink: &mut dyn FactSink,
    delta: &Delta,
    inserts: &[Fact],
    mut known: Option<&mut HashMap<Sym, HashSet<Fact>>>,
) -> (usize, usize) {
    let mut deleted = 0;
    for f in &delta.deletes {
        if sink.delete(f) {
            deleted += 1;
            if let Some(k) = known.as_deref_mut() {
                k.get_mut(&f.fact_type).map(|s| s.remove(f));
            }
        }
    }
    let mut inserted = 0;
    for f in inserts {
        if let Some(k) = known.as_deref_mut() {
            if !k.get_mut(&f.fact_type).expect("seeded type").insert(*f) {
                continue;
            }
        }
        if sink.insert(f) {
            inserted += 1;
        }
    }
    (inserted, deleted)
}

/// Runs passes over the active derivation rules until a pass inserts no new
/// fact. Facts produced in a level are written at the level's end, so rules
/// of one level all see the same index state.
pub fn run_inference(
    graph: &DerivationGraph,
    idx: &mut Rank1Index,
    active: &[bool],
    cfg: &InferenceConfig,
    fj: &ForkJoin,
) -> Result<InferenceStats> {
    let n = graph.rules.len();
    let mut stats = InferenceStats { evaluations: vec![0; n], ..Default::default() };
    let derivations: Vec<usize> = (0..n).filter(|&r| graph.rule_type(r) == RuleType::Derivation).collect();
    let mut hu = HashUnique::default();
    loop {
        if stats.passes == cfg.max_passes {
            return Err(Error::PassLimit(cfg.max_passes));
        }
        stats.passes += 1;
        let mut pass_new = 0;
        for level in &graph.levels {
            let run: Vec<usize> = level.iter().copied().filter(|&r| active[r] && derivations.contains(&r)).collect();
            stats.rules_skipped += level.iter().filter(|&&r| !active[r] && derivations.contains(&r)).count();
            if run.is_empty() {
                continue;
            }
            let level_rules: Vec<&Rule> = run.iter().map(|&r| &graph.rules[r]).collect();
            let plans: HashMap<usize, _> = run.iter().copied().zip(plan_rules(&level_rules, &*idx)?).collect();
            let groups = out_groups(&graph.rules, &run);

            let reader: &Rank1Index = idx;
            let deltas: Vec<Delta> = match cfg.tree {
                TreeMode::Pf => fj.install(|| {
                    groups.par_iter().map(|g| evaluate_group(graph, g, &plans, reader, cfg, fj)).collect::<Result<Vec<_>>>()
                })?,
                TreeMode::Sf => {
                    groups.iter().map(|g| evaluate_group(graph, g, &plans, reader, cfg, fj)).collect::<Result<Vec<_>>>()?
                }
            };
            for &r in &run {
                stats.evaluations[r] += 1;
            }
            stats.rules_evaluated += run.len();

            let inserts: Vec<Vec<Fact>> = match cfg.unique {
                UniqueMode::Su => deltas
                    .iter()
                    .map(|d| {
                        let deleted: HashSet<&Fact> = d.deletes.iter().collect();
                        let mut keep = fj.parallel_unique_filter(&d.inserts, idx);
                        // present now but removed by this delta first
                        let mut back: Vec<Fact> = d.inserts.iter().filter(|f| deleted.contains(f)).copied().collect();
                        back.sort_unstable();
                        back.dedup();
                        keep.extend(back);
                        keep
                    })
                    .collect(),
                UniqueMode::Hu => {
                    for g in &groups {
                        hu.seed(idx, &g.output_types);
                    }
                    deltas.iter().map(|d| d.inserts.clone()).collect()
                }
            };

            let counts: Vec<(usize, usize)> = match cfg.write {
                WriteMode::Pw => {
                    let types: Vec<Vec<Sym>> = groups.iter().map(|g| g.output_types.clone()).collect();
                    let mut known: Vec<Option<HashMap<Sym, HashSet<Fact>>>> = groups
                        .iter()
                        .map(|g| {
                            (cfg.unique == UniqueMode::Hu)
                                .then(|| g.output_types.iter().map(|t| (*t, hu.sets.remove(t).expect("seeded type"))).collect())
                        })
                        .collect();
                    let writers = idx.writers(&types);
                    let counts = fj.install(|| {
                        writers
                            .into_par_iter()
                            .zip(known.par_iter_mut())
                            .zip(deltas.par_iter().zip(inserts.par_iter()))
                            .map(|((mut w, k), (d, ins))| apply_delta(&mut w, d, ins, k.as_mut()))
                            .collect()
                    });
                    for k in known.into_iter().flatten() {
                        hu.sets.extend(k);
                    }
                    counts
                }
                WriteMode::Sw => {
                    let mut counts = Vec::with_capacity(deltas.len());
                    for (d, ins) in deltas.iter().zip(&inserts) {
                        let known = (cfg.unique == UniqueMode::Hu).then_some(&mut hu.sets);
                        counts.push(apply_delta(idx, d, ins, known));
                    }
                    counts
                }
            };
            for (i, d) in counts {
                pass_new += i;
                stats.facts_inferred += i;
                stats.facts_deleted += d;
            }
        }
        debug!("pass {}: {} new facts", stats.passes, pass_new);
        if pass_new == 0 {
            return Ok(stats);
        }
    }
}

impl fmt::Display for InferenceStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "passes={} inferred={} deleted={} evaluated={} skipped={}",
            self.passes, self.facts_inferred, self.facts_deleted, self.rules_evaluated, self.rules_skipped
        )
    }
}
