//! Island-based rule evaluation.
//!
//! The conditions of a rule are grouped into islands by the variable in
//! their id slot. Each island is costed as the sum of its members'
//! cardinality estimates, islands are visited cheapest first along shared
//! variables, and inside an island the conditions are ordered by a packed
//! 32-bit sort key.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::debug;

use crate::bucket::BucketMap;
use crate::error::{Error, Result};
use crate::fact::{Condition, Fact, JoinPosition, Rule, Var};
use crate::fork_join::ForkJoin;
use crate::index::{Cardinality, CardinalitySource, ComponentCounts, Rank1Index, INFINITE};
use crate::join::{flag_enum, JoinAlgo, JoinResult, Layout, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RnlMode {
    /// Substitute every bound value into the hook condition and union the
    /// higher-rank lookups.
    #[default]
    Ar,
    /// One lookup with the variable unbound, then join.
    Dr,
}

flag_enum!(RnlMode, Ar => "ar", Dr => "dr");

impl RnlMode {
    pub const ALL: [RnlMode; 2] = [RnlMode::Ar, RnlMode::Dr];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct EvalConfig {
    pub algo: JoinAlgo,
    pub rnl: RnlMode,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionStats {
    /// Position of the condition in its rule.
    pub index: usize,
    pub rank: u8,
    /// Variables this condition shares with conditions of other islands.
    pub connections: u32,
    pub counts: ComponentCounts,
    pub min_cardinality: Cardinality,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Island {
    /// Variable in the id slot of every member; `None` for a condition with
    /// a constant id, which forms an island of its own.
    pub id_variable: Option<Var>,
    /// Condition indices in evaluation order.
    pub members: Vec<usize>,
    pub total_cost: Cardinality,
    /// Variables shared with other islands.
    pub link_vars: Vec<Var>,
}

/// Sum of member cardinalities; infinite if any member is.
pub fn island_cost(stats: &[&ConditionStats]) -> Cardinality {
    stats
        .iter()
        .try_fold(0u64, |acc, s| (s.min_cardinality != INFINITE).then(|| acc.saturating_add(s.min_cardinality).min(INFINITE - 1)))
        .unwrap_or(INFINITE)
}

fn as_metric(c: Cardinality) -> f64 {
    if c == INFINITE {
        f64::INFINITY
    } else {
        c as f64
    }
}

/// Per-condition statistics for `rule`.
pub fn analyze_conditions(rule: &Rule, src: &dyn CardinalitySource) -> Vec<ConditionStats> {
    let groups = island_groups(rule);
    let mut owner = vec![0; rule.conditions.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &m in members {
            owner[m] = g;
        }
    }
    rule.conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let outside: HashSet<Var> = rule
                .conditions
                .iter()
                .enumerate()
                .filter(|(j, _)| owner[*j] != owner[i])
                .flat_map(|(_, o)| o.variables())
                .collect();
            let counts = src.component_counts(c);
            ConditionStats {
                index: i,
                rank: c.rank(),
                connections: c.variables().iter().filter(|v| outside.contains(v)).count() as u32,
                counts,
                min_cardinality: counts.min(),
            }
        })
        .collect()
}

/// Conditions grouped by id variable, in order of first appearance.
fn island_groups(rule: &Rule) -> Vec<(Option<Var>, Vec<usize>)> {
    let mut groups: Vec<(Option<Var>, Vec<usize>)> = Vec::new();
    for (i, c) in rule.conditions.iter().enumerate() {
        match c.id.var() {
            Some(v) => match groups.iter_mut().find(|(g, _)| g.as_ref() == Some(v)) {
                Some((_, m)) => m.push(i),
                None => groups.push((Some(v.clone()), vec![i])),
            },
            None => groups.push((None, vec![i])),
        }
    }
    groups
}

/// Islands of `rule` in processing order.
///
/// The walk starts at the cheapest island that links to at least two
/// others (the cheapest overall if none does) and then always takes the
/// cheapest island sharing a variable with those already visited. Islands
/// sharing nothing with the visited ones are only started once the
/// connected part is exhausted; they enter the result as a cross product.
pub fn detect_islands(rule: &Rule, stats: &[ConditionStats]) -> Vec<Island> {
    let groups = island_groups(rule);
    let var_sets: Vec<HashSet<Var>> =
        groups.iter().map(|(_, m)| m.iter().flat_map(|&i| rule.conditions[i].variables()).collect()).collect();
    let islands: Vec<Island> = groups
        .iter()
        .enumerate()
        .map(|(g, (id, members))| {
            let member_stats: Vec<&ConditionStats> = members.iter().map(|&i| &stats[i]).collect();
            let mut link_vars: Vec<Var> = var_sets[g]
                .iter()
                .filter(|v| var_sets.iter().enumerate().any(|(h, s)| h != g && s.contains(*v)))
                .cloned()
                .collect();
            link_vars.sort();
            Island { id_variable: id.clone(), members: members.clone(), total_cost: island_cost(&member_stats), link_vars }
        })
        .collect();
    let n = islands.len();
    let linked = |a: usize, b: usize| !var_sets[a].is_disjoint(&var_sets[b]);
    let degree: Vec<usize> = (0..n).map(|a| (0..n).filter(|&b| b != a && linked(a, b)).count()).collect();
    let cheapest = |cands: &mut dyn Iterator<Item = usize>| cands.min_by_key(|&i| (islands[i].total_cost, i));

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    while order.len() < n {
        let start = cheapest(&mut (0..n).filter(|&i| !visited[i] && degree[i] >= 2))
            .or_else(|| cheapest(&mut (0..n).filter(|&i| !visited[i])))
            .expect("unvisited island");
        visited[start] = true;
        order.push(start);
        while let Some(next) = cheapest(&mut (0..n).filter(|&i| !visited[i] && order.iter().any(|&o| linked(o, i)))) {
            visited[next] = true;
            order.push(next);
        }
    }
    let mut by_index: Vec<Option<Island>> = islands.into_iter().map(Some).collect();
    order.into_iter().map(|i| by_index[i].take().expect("visited once")).collect()
}

/// Packed condition priority, smaller sorts first. From the most
/// significant bit: 9 bits inter-island connections (more connections give
/// a smaller field), 11 bits island score, 2 bits `3 - rank`, 10 bits
/// minimum cardinality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SortKey(pub u32);

impl SortKey {
    pub const CONNECTION_BITS: u32 = 9;
    pub const SCORE_BITS: u32 = 11;
    pub const RANK_BITS: u32 = 2;
    pub const CARD_BITS: u32 = 10;
    /// Everything except the connection field.
    pub const WITHOUT_CONNECTIONS: u32 = (1 << 23) - 1;

    pub fn encode(connections: u32, score: u32, rank: u8, card: u32) -> Result<SortKey> {
        let rank_field = 3u32.saturating_sub(rank as u32);
        for (v, bits) in [
            (connections, Self::CONNECTION_BITS),
            (score, Self::SCORE_BITS),
            (rank_field, Self::RANK_BITS),
            (card, Self::CARD_BITS),
        ] {
            if v >= 1 << bits {
                return Err(Error::BucketOverflow { ordinal: v, bits });
            }
        }
        Ok(SortKey(connections << 23 | score << 12 | rank_field << 10 | card))
    }

    pub fn connections(self) -> u32 {
        self.0 >> 23
    }

    pub fn score(self) -> u32 {
        (self.0 >> 12) & 0x7ff
    }

    pub fn rank(self) -> u8 {
        3 - ((self.0 >> 10) & 0x3) as u8
    }

    pub fn cardinality(self) -> u32 {
        self.0 & 0x3ff
    }

    fn without_connections(self) -> u32 {
        self.0 & Self::WITHOUT_CONNECTIONS
    }
}

/// Bucket maps for the three bucketized sort-key fields, built over every
/// condition of a set of rules.
#[derive(Clone, Debug)]
pub struct SortKeyMaps {
    pub connections: BucketMap<f64>,
    pub score: BucketMap<f64>,
    pub cardinality: BucketMap<f64>,
}

impl SortKeyMaps {
    /// `entries` holds, per condition, its stats and its island's cost.
    pub fn build<'a>(entries: impl IntoIterator<Item = (&'a ConditionStats, Cardinality)> + Clone) -> Self {
        let conn: Vec<f64> = entries.clone().into_iter().map(|(s, _)| s.connections as f64).collect();
        let score: Vec<f64> = entries.clone().into_iter().map(|(_, c)| as_metric(c)).collect();
        let card: Vec<f64> = entries.into_iter().map(|(s, _)| as_metric(s.min_cardinality)).collect();
        Self {
            connections: BucketMap::build(&conn, SortKey::CONNECTION_BITS),
            score: BucketMap::build(&score, SortKey::SCORE_BITS),
            cardinality: BucketMap::build(&card, SortKey::CARD_BITS),
        }
    }

    pub fn encode(&self, stats: &ConditionStats, island_cost: Cardinality) -> Result<SortKey> {
        let conn = self.connections.max_ordinal()
            - self.connections.ordinal(stats.connections as f64).min(self.connections.max_ordinal());
        SortKey::encode(
            conn,
            self.score.ordinal(as_metric(island_cost)),
            stats.rank,
            self.cardinality.ordinal(as_metric(stats.min_cardinality)),
        )
    }
}

/// Evaluation plan of one rule.
#[derive(Clone, Debug)]
pub struct RulePlan {
    pub stats: Vec<ConditionStats>,
    /// Islands in processing order, members in lookup order.
    pub islands: Vec<Island>,
    /// Sort key per condition, indexed like the rule's conditions.
    pub sort_keys: Vec<SortKey>,
}

impl RulePlan {
    /// Condition indices in lookup order.
    pub fn sequence(&self) -> Vec<usize> {
        self.islands.iter().flat_map(|i| i.members.iter().copied()).collect()
    }
}

/// Plans a set of rules together: the bucket maps behind the sort keys are
/// shared by all of them.
pub fn plan_rules(rules: &[&Rule], src: &dyn CardinalitySource) -> Result<Vec<RulePlan>> {
    let analyzed: Vec<(Vec<ConditionStats>, Vec<Island>)> = rules
        .iter()
        .map(|r| {
            let stats = analyze_conditions(r, src);
            let islands = detect_islands(r, &stats);
            (stats, islands)
        })
        .collect();
    let mut entries = Vec::new();
    for (stats, islands) in &analyzed {
        for isl in islands {
            for &m in &isl.members {
                entries.push((&stats[m], isl.total_cost));
            }
        }
    }
    let maps = SortKeyMaps::build(entries.iter().copied());

    rules
        .iter()
        .zip(analyzed.iter())
        .map(|(rule, (stats, islands))| {
            let mut keys = vec![SortKey(0); stats.len()];
            for isl in islands {
                for &m in &isl.members {
                    keys[m] = maps.encode(&stats[m], isl.total_cost)?;
                }
            }
            let mut ordered = islands.clone();
            let mut bound: HashSet<Var> = HashSet::new();
            for (n, isl) in ordered.iter_mut().enumerate() {
                if n == 0 {
                    // nothing is bound yet, so linking carries no weight
                    isl.members.sort_by_key(|&m| (keys[m].without_connections(), m));
                } else {
                    isl.members.sort_by_key(|&m| (keys[m], m));
                    let hook = isl.members.iter().position(|&m| rule.conditions[m].variables().iter().any(|v| bound.contains(v)));
                    if let Some(h) = hook {
                        let m = isl.members.remove(h);
                        isl.members.insert(0, m);
                    }
                }
                for &m in &isl.members {
                    bound.extend(rule.conditions[m].variables());
                }
            }
            Ok(RulePlan { stats: stats.clone(), islands: ordered, sort_keys: keys })
        })
        .collect()
}

pub fn plan_rule(rule: &Rule, src: &dyn CardinalitySource) -> Result<RulePlan> {
    Ok(plan_rules(&[rule], src)?.pop().expect("one plan per rule"))
}

/// Plans and evaluates `rule`; see [`execute_plan`].
pub fn evaluate_rule(rule: &Rule, idx: &Rank1Index, cfg: EvalConfig, fj: &ForkJoin) -> Result<Table> {
    let plan = plan_rule(rule, idx)?;
    execute_plan(rule, &plan, idx, cfg, fj)
}

fn join_position(c: &Condition, r: &JoinResult) -> Option<JoinPosition> {
    JoinPosition::ALL.into_iter().find(|&p| c.var_at(p).is_some_and(|v| r.schema().contains(v)))
}

/// Runs the lookups and joins of `plan` and materializes one row per
/// distinct binding of the rule's variables. Stops issuing lookups as soon
/// as an intermediate result is empty.
pub fn execute_plan(rule: &Rule, plan: &RulePlan, idx: &Rank1Index, cfg: EvalConfig, fj: &ForkJoin) -> Result<Table> {
    let vars: Vec<Var> = rule.variables().into_iter().map(|(v, _)| v).collect();
    let empty = || Table { vars: rule.variables(), rows: Vec::new() };
    let mut result: Option<JoinResult> = None;
    for isl in &plan.islands {
        for (k, &ci) in isl.members.iter().enumerate() {
            let c = &rule.conditions[ci];
            let next = match result.take() {
                None => JoinResult::new(cfg.layout, &idx.rl(c), c),
                Some(r) => {
                    let pos = join_position(c, &r);
                    if pos.is_none() {
                        debug!("rule '{}': condition {} shares no variable, joining as cross product", rule.name, ci + 1);
                    }
                    let facts = match (pos, cfg.rnl) {
                        // the hook of a later island
                        (Some(p), RnlMode::Ar) if k == 0 => substituted_lookup(c, p, &r, idx),
                        _ => idx.rl(c),
                    };
                    r.join(&facts, c, pos, cfg.algo, fj)?
                }
            };
            if next.is_empty() {
                return Ok(empty());
            }
            result = Some(next);
        }
    }
    match result {
        Some(r) => r.materialize(&vars),
        None => Ok(empty()),
    }
}

fn substituted_lookup(c: &Condition, pos: JoinPosition, r: &JoinResult, idx: &Rank1Index) -> Vec<Fact> {
    let v = c.var_at(pos).expect("join position holds a variable");
    let mut out = Vec::new();
    for value in r.distinct_values(v) {
        out.extend(idx.rl(&c.bind(pos, value)));
    }
    out
}
