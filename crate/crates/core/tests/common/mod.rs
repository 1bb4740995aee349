//! Reference implementations and random instance generators shared by the
//! integration tests. The oracles are deliberately naive.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use hiperfact::fact::{Action, Template, TemplateTerm, TestOp, VariableJoinTest};
use hiperfact::{Condition, Fact, Rule, Scalar, StringDictionary, Sym, Term, Value, ValueType, Var};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

type Binding = BTreeMap<Var, Value>;

fn constant_ok(c: &Condition, f: &Fact) -> bool {
    if f.fact_type != c.fact_type || f.value.ty() != c.value_type {
        return false;
    }
    let id_ok = match &c.id {
        Term::Const(s) => f.id == *s,
        Term::Var(_) => true,
    };
    let attr_ok = match &c.attr {
        Term::Const(s) => f.attr == *s,
        Term::Var(_) => true,
    };
    let val_ok = match &c.value {
        Term::Const(v) => f.value == *v,
        Term::Var(_) => true,
    };
    id_ok && attr_ok && val_ok
}

/// Extends `b` with the bindings `f` gives `c`'s variables, or `None` on a
/// conflict. A variable repeated inside `c` is compared like any other.
fn extend(b: &Binding, c: &Condition, f: &Fact) -> Option<Binding> {
    let mut out = b.clone();
    let slots = [(c.id.var(), Value::string(f.id)), (c.attr.var(), Value::string(f.attr)), (c.value.var(), f.value)];
    for (v, x) in slots {
        let Some(v) = v else { continue };
        match out.get(v) {
            Some(y) if y.bits() != x.bits() => return None,
            Some(_) => {}
            None => {
                out.insert(v.clone(), x);
            }
        }
    }
    Some(out)
}

/// All bindings of `rule`'s conditions over `facts`, by nested loops, with
/// every join test applied at the end. Rows follow `rule.variables()`.
pub fn match_oracle(rule: &Rule, facts: &[Fact]) -> BTreeSet<Vec<Value>> {
    let mut partial: Vec<Binding> = vec![Binding::new()];
    for c in &rule.conditions {
        let candidates: Vec<&Fact> = facts.iter().filter(|f| constant_ok(c, f)).collect();
        let mut next = Vec::new();
        for b in &partial {
            for f in &candidates {
                if let Some(e) = extend(b, c, f) {
                    next.push(e);
                }
            }
        }
        partial = next;
    }
    let tests: Vec<&VariableJoinTest> = rule.conditions.iter().flat_map(|c| &c.tests).collect();
    let vars = rule.variables();
    partial
        .into_iter()
        .filter(|b| tests.iter().all(|t| t.op.apply(&b[&t.left], &b[&t.right])))
        .map(|b| vars.iter().map(|(v, ty)| Value::from_bits(*ty, b[v].bits())).collect())
        .collect()
}

/// Evaluate-everything-until-stable fixpoint for add-only rule sets.
pub fn fixpoint_oracle(rules: &[Rule], seed: &[Fact]) -> BTreeSet<Fact> {
    let mut facts: BTreeSet<Fact> = seed.iter().copied().collect();
    loop {
        let snapshot: Vec<Fact> = facts.iter().copied().collect();
        let mut added = false;
        for r in rules {
            let vars = r.variables();
            for row in match_oracle(r, &snapshot) {
                for a in &r.actions {
                    if let Action::Add(t) = a {
                        let lookup = |v: &Var| vars.iter().position(|(w, _)| w == v).map(|i| row[i]);
                        if let Some(f) = t.instantiate(lookup) {
                            added |= facts.insert(f);
                        }
                    }
                }
            }
        }
        if !added {
            return facts;
        }
    }
}

pub fn nested_loop_join(lhs: &[u32], rhs: &[u32]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, a) in lhs.iter().enumerate() {
        for (j, b) in rhs.iter().enumerate() {
            if a == b {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn set_difference(candidates: &[Fact], existing: &[Fact]) -> BTreeSet<Fact> {
    let have: HashSet<&Fact> = existing.iter().collect();
    candidates.iter().filter(|f| !have.contains(f)).copied().collect()
}

/// Stable argsort by insertion sort on indices, then gather.
pub fn argsort_gather<P: Copy>(keys: &[u64], payload: &[P]) -> (Vec<u64>, Vec<P>) {
    let mut idx: Vec<usize> = Vec::with_capacity(keys.len());
    for i in 0..keys.len() {
        let at = idx.partition_point(|&j| keys[j] <= keys[i]);
        idx.insert(at, i);
    }
    (idx.iter().map(|&i| keys[i]).collect(), idx.iter().map(|&i| payload[i]).collect())
}

// ---- random instances ----

/// Attributes with a fixed value type each, so variables stay well typed.
const ATTRS: [(&str, ValueType); 5] = [
    ("p", ValueType::String),
    ("q", ValueType::String),
    ("r", ValueType::UInt32),
    ("s", ValueType::Int64),
    ("t", ValueType::Double),
];

pub struct Universe {
    pub types: Vec<Sym>,
    pub entities: Vec<Sym>,
    pub attrs: Vec<(Sym, ValueType)>,
}

impl Universe {
    pub fn new(d: &StringDictionary, types: usize, entities: usize) -> Self {
        Self {
            types: (0..types).map(|i| d.intern(&format!("T{i}"))).collect(),
            entities: (0..entities).map(|i| d.intern(&format!("e{i}"))).collect(),
            attrs: ATTRS.iter().map(|(a, t)| (d.intern(a), *t)).collect(),
        }
    }

    fn scalar(&self, r: &mut ChaCha8Rng, ty: ValueType) -> Value {
        match ty {
            ValueType::String => Value::string(*self.entities.choose(r).unwrap()),
            ValueType::UInt32 => Value::from_scalar(Scalar::U32(r.random_range(0..6))),
            ValueType::Int64 => Value::from_scalar(Scalar::I64(r.random_range(-3..3))),
            ValueType::Double => Value::from_scalar(Scalar::F64(r.random_range(0..5) as f64 * 0.5)),
            _ => unreachable!("not generated"),
        }
    }

    pub fn facts(&self, r: &mut ChaCha8Rng, n: usize) -> Vec<Fact> {
        (0..n)
            .map(|_| {
                let (a, ty) = *self.attrs.choose(r).unwrap();
                Fact::new(*self.types.choose(r).unwrap(), *self.entities.choose(r).unwrap(), a, self.scalar(r, ty))
            })
            .collect()
    }

    /// Query rule with up to five conditions over at most two islands and at
    /// most two join tests.
    pub fn query_rule(&self, r: &mut ChaCha8Rng, name: &str) -> Rule {
        let islands: Vec<Var> = if r.random_bool(0.5) { vec![Var::new("x")] } else { vec![Var::new("x"), Var::new("y")] };
        let constant_id = islands.len() == 1 && r.random_bool(0.25);
        let n = r.random_range(1..=5);
        let pool = |ty: ValueType| -> Vec<Var> {
            match ty {
                ValueType::String => ["x", "y", "a", "b"].iter().map(|s| Var::new(s)).collect(),
                ValueType::UInt32 => vec![Var::new("n"), Var::new("m")],
                ValueType::Int64 => vec![Var::new("i"), Var::new("j")],
                _ => vec![Var::new("d"), Var::new("f")],
            }
        };
        let mut conditions = Vec::with_capacity(n);
        for k in 0..n {
            let ft = *self.types.choose(r).unwrap();
            let id = if constant_id && k == n - 1 {
                Term::Const(*self.entities.choose(r).unwrap())
            } else {
                Term::Var(islands[k % islands.len()].clone())
            };
            let (a, ty) = *self.attrs.choose(r).unwrap();
            let attr = if r.random_bool(0.15) { Term::Var(Var::new("k")) } else { Term::Const(a) };
            let value =
                if r.random_bool(0.3) { Term::Const(self.scalar(r, ty)) } else { Term::Var(pool(ty).choose(r).unwrap().clone()) };
            conditions.push(Condition::new(ft, id, attr, value, ty));
        }
        let mut rule = Rule { name: name.into(), conditions, actions: Vec::new() };
        let typed = rule.variables();
        let tests = if typed.is_empty() { 0 } else { r.random_range(0..=2) };
        for _ in 0..tests {
            let (left, ty) = typed.choose(r).unwrap().clone();
            let same: Vec<&(Var, ValueType)> = typed.iter().filter(|(_, t)| *t == ty).collect();
            let right = same.choose(r).unwrap().0.clone();
            let op = *[TestOp::Eq, TestOp::Ne, TestOp::Lt, TestOp::Le, TestOp::Gt, TestOp::Ge].choose(r).unwrap();
            let at = rule.conditions.iter().position(|c| c.variables().contains(&left)).unwrap();
            rule.conditions[at].tests.push(VariableJoinTest { left, op, right });
        }
        rule
    }

    /// String-only add rules over `types`; `cyclic` wires at least one
    /// two-rule cycle. One query per output type keeps every rule active.
    /// With four types the set never exceeds ten rules.
    pub fn rule_set(&self, r: &mut ChaCha8Rng, cyclic: bool) -> Vec<Rule> {
        let str_attrs: Vec<Sym> = self.attrs.iter().filter(|(_, t)| *t == ValueType::String).map(|(a, _)| *a).collect();
        let cond = |r: &mut ChaCha8Rng, ft: Sym, id: &str, val: &str| {
            Condition::new(
                ft,
                Term::Var(Var::new(id)),
                Term::Const(*str_attrs.choose(r).unwrap()),
                Term::Var(Var::new(val)),
                ValueType::String,
            )
        };
        let add = |r: &mut ChaCha8Rng, ft: Sym, id: &str, val: &str| {
            Action::Add(Template {
                fact_type: ft,
                id: TemplateTerm::Var(Var::new(id)),
                attr: TemplateTerm::Const(*str_attrs.choose(r).unwrap()),
                value: TemplateTerm::Var(Var::new(val)),
                value_type: ValueType::String,
            })
        };
        let mut rules = Vec::new();
        let n = r.random_range(1..=if cyclic { 4 } else { 6 });
        for i in 0..n {
            let shape = r.random_range(0..3);
            let t = |r: &mut ChaCha8Rng| *self.types.choose(r).unwrap();
            let (conditions, id, val) = match shape {
                0 => {
                    let a = t(r);
                    (vec![cond(r, a, "x", "y")], "y", "x")
                }
                1 => {
                    let (a, b) = (t(r), t(r));
                    (vec![cond(r, a, "x", "y"), cond(r, b, "y", "z")], "x", "z")
                }
                _ => {
                    let (a, b) = (t(r), t(r));
                    (vec![cond(r, a, "x", "y"), cond(r, b, "x", "z")], "y", "z")
                }
            };
            let out = t(r);
            rules.push(Rule { name: format!("d{i}"), conditions, actions: vec![add(r, out, id, val)] });
        }
        if cyclic {
            let (a, b) = (self.types[0], self.types[1]);
            rules.push(Rule {
                name: "cyc_ab".into(),
                conditions: vec![cond(r, a, "x", "y")],
                actions: vec![add(r, b, "y", "x")],
            });
            rules.push(Rule {
                name: "cyc_ba".into(),
                conditions: vec![cond(r, b, "x", "y")],
                actions: vec![add(r, a, "x", "y")],
            });
        }
        let outputs: BTreeSet<Sym> = rules.iter().flat_map(|r| r.output_types()).collect();
        for (i, t) in outputs.into_iter().enumerate() {
            rules.push(Rule {
                name: format!("q{i}"),
                conditions: vec![Condition::new(
                    t,
                    Term::Var(Var::new("s")),
                    Term::Var(Var::new("p")),
                    Term::Var(Var::new("o")),
                    ValueType::String,
                )],
                actions: Vec::new(),
            });
        }
        rules
    }

    /// Seed facts for rule sets: string attributes only.
    pub fn string_facts(&self, r: &mut ChaCha8Rng, n: usize) -> Vec<Fact> {
        let str_attrs: Vec<Sym> = self.attrs.iter().filter(|(_, t)| *t == ValueType::String).map(|(a, _)| *a).collect();
        (0..n)
            .map(|_| {
                Fact::new(
                    *self.types.choose(r).unwrap(),
                    *self.entities.choose(r).unwrap(),
                    *str_attrs.choose(r).unwrap(),
                    Value::string(*self.entities.choose(r).unwrap()),
                )
            })
            .collect()
    }
}

/// Random condition shaped after an existing fact: each slot is kept as a
/// constant or replaced by a variable.
pub fn condition_from(r: &mut ChaCha8Rng, f: &Fact) -> Condition {
    let keep = r.random_range(0..8u8);
    let id = if keep & 1 != 0 { Term::Const(f.id) } else { Term::Var(Var::new("i")) };
    let attr = if keep & 2 != 0 { Term::Const(f.attr) } else { Term::Var(Var::new("a")) };
    let value = if keep & 4 != 0 { Term::Const(f.value) } else { Term::Var(Var::new("v")) };
    Condition::new(f.fact_type, id, attr, value, f.value.ty())
}
