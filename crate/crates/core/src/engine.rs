//! Engine session: configuration, loading, inference and queries.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::derivation::{
    run_inference, DerivationGraph, InferenceConfig, InferenceStats, RuleType, TreeMode, UniqueMode, WriteMode,
    DEFAULT_MAX_PASSES,
};
use crate::dictionary::StringDictionary;
use crate::error::{Error, Result};
use crate::fact::Rule;
use crate::fork_join::{ForkJoin, ForkJoinConfig};
use crate::index::{Backend, Rank1Index};
use crate::island::{evaluate_rule, EvalConfig, RnlMode};
use crate::join::{flag_enum, JoinAlgo, Layout, Table};
use crate::syntax::{parse_conditions, parse_facts, parse_rules};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Infer1,
    Query1,
}

flag_enum!(Preset, Infer1 => "infer1", Query1 => "query1");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub index: Backend,
    pub join: JoinAlgo,
    pub rnl: RnlMode,
    pub result: Layout,
    pub tree: TreeMode,
    pub write: WriteMode,
    pub unique: UniqueMode,
    pub threads: usize,
    pub block_size_bytes: usize,
    pub max_passes: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let fj = ForkJoinConfig::default();
        Self {
            index: Backend::default(),
            join: JoinAlgo::default(),
            rnl: RnlMode::default(),
            result: Layout::default(),
            tree: TreeMode::default(),
            write: WriteMode::default(),
            unique: UniqueMode::default(),
            threads: fj.workers,
            block_size_bytes: fj.block_size_bytes,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

impl EngineConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            join: JoinAlgo::Hj,
            rnl: RnlMode::Ar,
            result: Layout::Cr,
            tree: TreeMode::Pf,
            write: WriteMode::Pw,
            unique: UniqueMode::Su,
            ..Self::default()
        };
        match p {
            Preset::Infer1 => Self { index: Backend::Lpim, ..base },
            Preset::Query1 => Self { index: Backend::Ai, join: JoinAlgo::Mj, ..base },
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig { algo: self.join, rnl: self.rnl, layout: self.result }
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            eval: self.eval(),
            tree: self.tree,
            write: self.write,
            unique: self.unique,
            max_passes: self.max_passes,
        }
    }

    pub fn fork_join(&self) -> ForkJoinConfig {
        ForkJoinConfig { workers: self.threads, block_size_bytes: self.block_size_bytes }
    }

    fn validate(&self) -> Result<()> {
        if self.threads == 0 || self.block_size_bytes == 0 || self.max_passes == 0 {
            return Err(Error::Config("threads, block size and pass limit must be positive".into()));
        }
        Ok(())
    }
}

/// `AI+MJ/AR/CR+PF/PW/SU` notation.
impl fmt::Display for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let up = |s: &str| s.to_ascii_uppercase();
        write!(
            f,
            "{}+{}/{}/{}+{}/{}/{}",
            up(self.index.name()),
            up(self.join.name()),
            up(self.rnl.name()),
            up(self.result.name()),
            up(self.tree.name()),
            up(self.write.name()),
            up(self.unique.name())
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MetricsFormat {
    #[default]
    Tsv,
    Json,
}

flag_enum!(MetricsFormat, Tsv => "tsv", Json => "json");

/// Timings in seconds at microsecond resolution, plus counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub load_seconds: f64,
    pub infer_seconds: f64,
    pub query_seconds: f64,
    pub facts_loaded: u64,
    pub facts_inferred: u64,
    pub passes: u64,
    pub rules_evaluated: u64,
    pub rules_skipped: u64,
    pub result_rows: u64,
}

const METRIC_FIELDS: [&str; 9] = [
    "load_seconds",
    "infer_seconds",
    "query_seconds",
    "facts_loaded",
    "facts_inferred",
    "passes",
    "rules_evaluated",
    "rules_skipped",
    "result_rows",
];

fn seconds_since(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e6
}

impl RunMetrics {
    pub fn report(&self, format: MetricsFormat) -> String {
        match format {
            MetricsFormat::Json => serde_json::to_string(self).expect("plain struct serializes"),
            MetricsFormat::Tsv => {
                let values = [
                    format!("{:.6}", self.load_seconds),
                    format!("{:.6}", self.infer_seconds),
                    format!("{:.6}", self.query_seconds),
                    self.facts_loaded.to_string(),
                    self.facts_inferred.to_string(),
                    self.passes.to_string(),
                    self.rules_evaluated.to_string(),
                    self.rules_skipped.to_string(),
                    self.result_rows.to_string(),
                ];
                format!("{}\n{}\n", METRIC_FIELDS.join("\t"), values.join("\t"))
            }
        }
    }

    pub fn parse(text: &str, format: MetricsFormat) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("metrics: {m}"));
        match format {
            MetricsFormat::Json => serde_json::from_str(text).map_err(|e| bad(e.to_string())),
            MetricsFormat::Tsv => {
                let mut lines = text.lines();
                let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
                let values: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
                if header != METRIC_FIELDS || values.len() != METRIC_FIELDS.len() {
                    return Err(bad("unexpected layout".into()));
                }
                let f = |i: usize| values[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", METRIC_FIELDS[i])));
                let u = |i: usize| values[i].parse::<u64>().map_err(|e| bad(format!("{}: {e}", METRIC_FIELDS[i])));
                Ok(Self {
                    load_seconds: f(0)?,
                    infer_seconds: f(1)?,
                    query_seconds: f(2)?,
                    facts_loaded: u(3)?,
                    facts_inferred: u(4)?,
                    passes: u(5)?,
                    rules_evaluated: u(6)?,
                    rules_skipped: u(7)?,
                    result_rows: u(8)?,
                })
            }
        }
    }

    /// Same counts, timings ignored.
    pub fn same_counts(&self, other: &RunMetrics) -> bool {
        let zero = |m: &RunMetrics| RunMetrics { load_seconds: 0.0, infer_seconds: 0.0, query_seconds: 0.0, ..m.clone() };
        zero(self) == zero(other)
    }
}

const ADHOC: &str = "<where>";

/// One in-memory session: dictionary, index, rules and run metrics.
pub struct Engine {
    cfg: EngineConfig,
    dict: StringDictionary,
    idx: Rank1Index,
    fj: ForkJoin,
    graph: DerivationGraph,
    /// Derivation rules whose consequences are already in the index.
    settled: HashSet<String>,
    evaluations: BTreeMap<String, u64>,
    metrics: RunMetrics,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dict: StringDictionary::new(),
            idx: Rank1Index::new(cfg.index),
            fj: ForkJoin::new(cfg.fork_join())?,
            graph: DerivationGraph::build(Vec::new())?,
            settled: HashSet::new(),
            evaluations: BTreeMap::new(),
            metrics: RunMetrics::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn dictionary(&self) -> &StringDictionary {
        &self.dict
    }

    pub fn index(&self) -> &Rank1Index {
        &self.idx
    }

    pub fn graph(&self) -> &DerivationGraph {
        &self.graph
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Evaluations of `rule` during inference over the session's lifetime.
    pub fn rule_evaluations(&self, rule: &str) -> u64 {
        self.evaluations.get(rule).copied().unwrap_or(0)
    }

    /// Parses and inserts facts; returns how many were new.
    pub fn load_facts_str(&mut self, text: &str) -> Result<usize> {
        let start = Instant::now();
        let facts = parse_facts(text, &self.dict)?;
        let n = facts.iter().filter(|f| self.idx.insert_fact(f)).count();
        if n > 0 {
            self.settled.clear();
        }
        self.metrics.load_seconds += seconds_since(start);
        self.metrics.facts_loaded += n as u64;
        Ok(n)
    }

    pub fn load_facts(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        self.load_facts_str(&text)
    }

    pub fn add_rules_str(&mut self, text: &str) -> Result<usize> {
        let new = parse_rules(text, &self.dict)?;
        let n = new.len();
        let mut rules = self.graph.rules().to_vec();
        rules.extend(new);
        self.graph = DerivationGraph::build(rules)?;
        Ok(n)
    }

    pub fn load_rules(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        self.add_rules_str(&text)
    }

    fn run(&mut self, active: Vec<bool>) -> Result<InferenceStats> {
        let start = Instant::now();
        let stats = run_inference(&self.graph, &mut self.idx, &active, &self.cfg.inference(), &self.fj)?;
        self.metrics.infer_seconds += seconds_since(start);
        self.metrics.facts_inferred += stats.facts_inferred as u64;
        self.metrics.passes += stats.passes as u64;
        self.metrics.rules_evaluated += stats.rules_evaluated as u64;
        self.metrics.rules_skipped += stats.rules_skipped as u64;
        for (r, &n) in stats.evaluations.iter().enumerate() {
            let name = &self.graph.rules()[r].name;
            *self.evaluations.entry(name.clone()).or_default() += n as u64;
            if active[r] {
                self.settled.insert(name.clone());
            }
        }
        Ok(stats)
    }

    fn pending(&self, active: &[bool]) -> bool {
        active.iter().enumerate().any(|(r, &a)| {
            a && self.graph.rule_type(r) == RuleType::Derivation && !self.settled.contains(&self.graph.rules()[r].name)
        })
    }

    /// Runs the rules a query depends on to a fixpoint.
    pub fn infer(&mut self) -> Result<InferenceStats> {
        let active = self.graph.active_rules();
        self.run(active)
    }

    /// Runs every derivation rule, queries or not.
    pub fn infer_all(&mut self) -> Result<InferenceStats> {
        let all = vec![true; self.graph.rules().len()];
        self.run(all)
    }

    fn evaluate(&mut self, rule: &Rule) -> Result<Table> {
        let start = Instant::now();
        let table = evaluate_rule(rule, &self.idx, self.cfg.eval(), &self.fj)?;
        self.metrics.query_seconds += seconds_since(start);
        self.metrics.result_rows += table.len() as u64;
        Ok(table)
    }

    /// Evaluates a named rule, inferring first if its inputs are stale.
    pub fn query(&mut self, name: &str) -> Result<Table> {
        let i = self.graph.rule_index(name).ok_or_else(|| Error::UnknownRule(name.into()))?;
        let active = self.graph.active_rules();
        if self.pending(&active) {
            self.run(active)?;
        }
        let rule = self.graph.rules()[i].clone();
        self.evaluate(&rule)
    }

    /// Evaluates inline conditions. Derivation rules that become relevant
    /// through this query are inferred first.
    pub fn query_where(&mut self, conditions: &str) -> Result<Table> {
        let conds = parse_conditions(conditions, &self.dict)?;
        let rule = Rule { name: ADHOC.into(), conditions: conds, actions: Vec::new() };
        let base = self.graph.rules().to_vec();
        let mut rules = base.clone();
        rules.push(rule.clone());
        self.graph = DerivationGraph::build(rules)?;
        let active = self.graph.active_rules();
        let outcome = if self.pending(&active) { self.run(active).map(|_| ()) } else { Ok(()) };
        self.graph = DerivationGraph::build(base)?;
        outcome?;
        self.evaluate(&rule)
    }

    /// All facts in the index, serialized and sorted.
    pub fn dump_facts(&self) -> Result<String> {
        let mut lines =
            self.idx.facts().iter().map(|f| crate::syntax::serialize_fact(f, &self.dict)).collect::<Result<Vec<_>>>()?;
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand() {
        assert_eq!(EngineConfig::preset(Preset::Infer1).to_string(), "LPIM+HJ/AR/CR+PF/PW/SU");
        assert_eq!(EngineConfig::preset(Preset::Query1).to_string(), "AI+MJ/AR/CR+PF/PW/SU");
        assert_eq!("Query1".parse::<Preset>(), Ok(Preset::Query1));
        assert!("fast".parse::<Preset>().is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let m = RunMetrics {
            load_seconds: 1.25,
            infer_seconds: 0.000003,
            query_seconds: 2.5,
            facts_loaded: 10,
            facts_inferred: 3,
            passes: 2,
            rules_evaluated: 4,
            rules_skipped: 1,
            result_rows: 7,
        };
        for fmt in [MetricsFormat::Tsv, MetricsFormat::Json] {
            assert_eq!(RunMetrics::parse(&m.report(fmt), fmt).unwrap(), m);
            let z = RunMetrics::default();
            assert_eq!(RunMetrics::parse(&z.report(fmt), fmt).unwrap(), z);
        }
        assert!(RunMetrics::parse("a\tb\n1\t2\n", MetricsFormat::Tsv).is_err());
    }

    #[test]
    fn duplicate_lines_load_once() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        assert_eq!(e.load_facts_str("T\ta\tb\tc\tstring\nT\ta\tb\tc\tstring\n").unwrap(), 1);
        assert_eq!(e.load_facts_str("").unwrap(), 0);
        assert_eq!(e.metrics().facts_loaded, 1);
    }

    #[test]
    fn empty_index_query_is_header_only() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.add_rules_str(r#"rule "q" { when: (Person ?p livesIn ?c string) then: }"#).unwrap();
        let t = e.query("q").unwrap();
        assert_eq!(t.to_tsv(e.dictionary()).unwrap(), "p\tc\n");
        assert!(matches!(e.query("nope"), Err(Error::UnknownRule(_))));
    }

    #[test]
    fn adhoc_query_activates_rules() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.load_facts_str("Edge\ta\tto\tb\tstring\nEdge\tb\tto\tc\tstring\n").unwrap();
        e.add_rules_str(
            r#"rule "hop" { when: (Edge ?x to ?y string) (Edge ?y to ?z string) then: add (Hop ?x to ?z string) }
               rule "edges" { when: (Edge ?x to ?y string) then: }"#,
        )
        .unwrap();
        assert_eq!(e.query("edges").unwrap().len(), 2);
        assert_eq!(e.rule_evaluations("hop"), 0);
        let t = e.query_where("(Hop ?x to ?z string)").unwrap();
        assert!(e.rule_evaluations("hop") > 0);
        assert_eq!(t.to_tsv(e.dictionary()).unwrap(), "x\tz\na\tc\n");
        assert_eq!(e.graph().rules().len(), 2);
    }
}
