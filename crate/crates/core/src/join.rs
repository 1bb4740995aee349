//! Intermediate binding tables and the join operator.
//!
//! A [`JoinResult`] holds one 64-bit cell per bound variable and row: the
//! dictionary handle for strings, the canonical bit pattern otherwise. The
//! same logical table can be stored row-major or column-major.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::dictionary::StringDictionary;
use crate::error::{Error, Result};
use crate::fact::{Condition, Fact, JoinPosition, Value, ValueType, Var, VariableJoinTest};
use crate::fork_join::ForkJoin;
use crate::syntax::{escape_field, format_value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum JoinAlgo {
    /// Hash join, built on the smaller input.
    #[default]
    Hj,
    /// Sort both inputs on the key, then merge join.
    Mj,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Layout {
    /// Row-oriented.
    Rr,
    /// Column-oriented.
    #[default]
    Cr,
}

macro_rules! flag_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl $t {
            pub fn name(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)+
                    _ => Err(format!("unknown value '{s}'")),
                }
            }
        }
    };
}
pub(crate) use flag_enum;

flag_enum!(JoinAlgo, Hj => "hj", Mj => "mj");
flag_enum!(Layout, Rr => "rr", Cr => "cr");

impl JoinAlgo {
    pub const ALL: [JoinAlgo; 2] = [JoinAlgo::Hj, JoinAlgo::Mj];
}

impl Layout {
    pub const ALL: [Layout; 2] = [Layout::Rr, Layout::Cr];
}

/// Ordered, duplicate-free list of bound variables with their types.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schema {
    vars: Vec<(Var, ValueType)>,
}

impl Schema {
    pub fn new(vars: Vec<(Var, ValueType)>) -> Self {
        Self { vars }
    }

    pub fn position(&self, v: &Var) -> Option<usize> {
        self.vars.iter().position(|(w, _)| w == v)
    }

    pub fn type_of(&self, v: &Var) -> Option<ValueType> {
        self.position(v).map(|i| self.vars[i].1)
    }

    pub fn contains(&self, v: &Var) -> bool {
        self.position(v).is_some()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[(Var, ValueType)] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
enum Store {
    Rows(Vec<u64>),
    Columns(Vec<Vec<u64>>),
}

#[derive(Clone, Debug)]
pub struct JoinResult {
    schema: Schema,
    len: usize,
    store: Store,
    /// Join tests still waiting for one of their variables.
    pending: Vec<VariableJoinTest>,
}

/// Slots of `c` that bind a variable for the first time, in slot order.
fn first_slots(c: &Condition) -> Vec<(Var, JoinPosition)> {
    let mut out: Vec<(Var, JoinPosition)> = Vec::new();
    for (v, p) in c.var_slots() {
        if !out.iter().any(|(w, _)| *w == v) {
            out.push((v, p));
        }
    }
    out
}

impl JoinResult {
    /// Table of the bindings `c` produces over `facts`. Facts violating a
    /// repeated variable of `c` are dropped; tests whose variables are all
    /// bound by `c` are applied.
    pub fn new(layout: Layout, facts: &[Fact], c: &Condition) -> Self {
        let slots = first_slots(c);
        let schema = Schema::new(slots.iter().map(|(v, p)| (v.clone(), c.slot_type(*p))).collect());
        let keep: Vec<&Fact> = facts.iter().filter(|f| c.repeated_vars_agree(f)).collect();
        let store = match layout {
            Layout::Rr => {
                let mut data = Vec::with_capacity(keep.len() * slots.len());
                for f in &keep {
                    data.extend(slots.iter().map(|(_, p)| f.slot(*p).bits()));
                }
                Store::Rows(data)
            }
            Layout::Cr => Store::Columns(slots.iter().map(|(_, p)| keep.iter().map(|f| f.slot(*p).bits()).collect()).collect()),
        };
        let mut r = Self { schema, len: keep.len(), store, pending: c.tests.clone() };
        r.apply_ready_tests();
        r
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layout(&self) -> Layout {
        match self.store {
            Store::Rows(_) => Layout::Rr,
            Store::Columns(_) => Layout::Cr,
        }
    }

    pub fn pending_tests(&self) -> &[VariableJoinTest] {
        &self.pending
    }

    #[inline]
    fn cell(&self, row: usize, col: usize) -> u64 {
        match &self.store {
            Store::Rows(d) => d[row * self.schema.len() + col],
            Store::Columns(c) => c[col][row],
        }
    }

    fn column(&self, col: usize) -> Vec<u64> {
        match &self.store {
            Store::Rows(_) => (0..self.len).map(|r| self.cell(r, col)).collect(),
            Store::Columns(c) => c[col].clone(),
        }
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        self.schema.vars().iter().enumerate().map(|(col, (_, ty))| Value::from_bits(*ty, self.cell(row, col))).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.len).map(|r| self.row(r)).collect()
    }

    /// Distinct values bound to `v`, in first-seen order.
    pub fn distinct_values(&self, v: &Var) -> Vec<Value> {
        let Some((col, ty)) = self.schema.position(v).map(|c| (c, self.schema.vars()[c].1)) else {
            return Vec::new();
        };
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in 0..self.len {
            let b = self.cell(r, col);
            if seen.insert(b) {
                out.push(Value::from_bits(ty, b));
            }
        }
        out
    }

    fn retain(&mut self, keep: &[bool]) {
        let kept = keep.iter().filter(|k| **k).count();
        if kept == self.len {
            return;
        }
        let w = self.schema.len();
        match &mut self.store {
            Store::Rows(d) => {
                let mut out = Vec::with_capacity(kept * w);
                for (r, k) in keep.iter().enumerate() {
                    if *k {
                        out.extend_from_slice(&d[r * w..(r + 1) * w]);
                    }
                }
                *d = out;
            }
            Store::Columns(cols) => {
                for c in cols.iter_mut() {
                    *c = c.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
                }
            }
        }
        self.len = kept;
    }

    fn apply_ready_tests(&mut self) {
        let (ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|t| self.schema.contains(&t.left) && self.schema.contains(&t.right));
        self.pending = waiting;
        if ready.is_empty() || self.len == 0 {
            return;
        }
        let tests: Vec<_> = ready
            .iter()
            .map(|t| {
                let l = self.schema.position(&t.left).expect("bound");
                let r = self.schema.position(&t.right).expect("bound");
                (l, self.schema.vars()[l].1, t.op, r, self.schema.vars()[r].1)
            })
            .collect();
        let keep: Vec<bool> = (0..self.len)
            .map(|row| {
                tests.iter().all(|&(l, lt, op, r, rt)| {
                    op.apply(&Value::from_bits(lt, self.cell(row, l)), &Value::from_bits(rt, self.cell(row, r)))
                })
            })
            .collect();
        self.retain(&keep);
    }

    /// Joins `rhs` (facts matching `c`) into this table.
    ///
    /// With `on = Some(pos)` the variable at `pos` of `c` is the join key and
    /// must already be bound here. Every other variable of `c` that is bound
    /// on both sides becomes an equality filter. `on = None` is a cross
    /// product (still filtered by shared variables). Join tests of `c` and
    /// tests carried from earlier steps run as soon as both of their
    /// variables are bound.
    pub fn join(
        &self,
        rhs: &[Fact],
        c: &Condition,
        on: Option<JoinPosition>,
        algo: JoinAlgo,
        fj: &ForkJoin,
    ) -> Result<JoinResult> {
        let key_col = match on {
            Some(pos) => {
                let v = c
                    .var_at(pos)
                    .ok_or_else(|| Error::Planning(format!("join position {pos:?} of condition is not a variable")))?;
                let col =
                    self.schema.position(v).ok_or_else(|| Error::Planning(format!("join variable {v} is not bound yet")))?;
                Some((col, pos))
            }
            None => None,
        };
        let slots = first_slots(c);
        let mut shared = Vec::new();
        let mut fresh = Vec::new();
        for (v, p) in &slots {
            match self.schema.position(v) {
                Some(col) => {
                    let have = self.schema.vars()[col].1;
                    if have != c.slot_type(*p) {
                        return Err(Error::Planning(format!("variable {v} joins {have} with {}", c.slot_type(*p))));
                    }
                    if key_col != Some((col, *p)) {
                        shared.push((col, *p));
                    }
                }
                None => fresh.push((v.clone(), *p)),
            }
        }
        let facts: Vec<Fact> =
            if c.has_repeated_vars() { rhs.iter().copied().filter(|f| c.repeated_vars_agree(f)).collect() } else { rhs.to_vec() };

        let mut pairs = match key_col {
            Some((col, pos)) => {
                let lk = self.column(col);
                let rk: Vec<u64> = facts.iter().map(|f| f.slot(pos).bits()).collect();
                match algo {
                    JoinAlgo::Hj => hash_join(&lk, &rk),
                    JoinAlgo::Mj => sort_merge_join(&lk, &rk, fj)?,
                }
            }
            None => {
                let mut p = Vec::with_capacity(self.len * facts.len());
                for i in 0..self.len {
                    p.extend((0..facts.len()).map(|j| (i, j)));
                }
                p
            }
        };
        if !shared.is_empty() {
            pairs.retain(|&(i, j)| shared.iter().all(|&(col, p)| self.cell(i, col) == facts[j].slot(p).bits()));
        }

        let mut vars = self.schema.vars().to_vec();
        vars.extend(fresh.iter().map(|(v, p)| (v.clone(), c.slot_type(*p))));
        let w = vars.len();
        let store = match &self.store {
            Store::Rows(_) => {
                let mut d = Vec::with_capacity(pairs.len() * w);
                for &(i, j) in &pairs {
                    d.extend((0..self.schema.len()).map(|col| self.cell(i, col)));
                    d.extend(fresh.iter().map(|(_, p)| facts[j].slot(*p).bits()));
                }
                Store::Rows(d)
            }
            Store::Columns(cols) => {
                let mut out: Vec<Vec<u64>> = cols.iter().map(|c| pairs.iter().map(|&(i, _)| c[i]).collect()).collect();
                out.extend(fresh.iter().map(|(_, p)| pairs.iter().map(|&(_, j)| facts[j].slot(*p).bits()).collect()));
                Store::Columns(out)
            }
        };
        let mut pending = self.pending.clone();
        pending.extend(c.tests.iter().cloned());
        let mut out = JoinResult { schema: Schema::new(vars), len: pairs.len(), store, pending };
        out.apply_ready_tests();
        Ok(out)
    }

    /// Projects onto `order`, drops duplicate rows and sorts the rest.
    pub fn materialize(&self, order: &[Var]) -> Result<Table> {
        let mut cols = Vec::with_capacity(order.len());
        for v in order {
            let col = self.schema.position(v).ok_or_else(|| Error::Planning(format!("variable {v} is not bound by the rule")))?;
            cols.push((col, self.schema.vars()[col].1));
        }
        let mut rows: Vec<Vec<Value>> =
            (0..self.len).map(|r| cols.iter().map(|&(c, ty)| Value::from_bits(ty, self.cell(r, c))).collect()).collect();
        rows.sort_unstable();
        rows.dedup();
        Ok(Table { vars: order.iter().cloned().zip(cols.iter().map(|&(_, ty)| ty)).collect(), rows })
    }
}

fn hash_join(lk: &[u64], rk: &[u64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if lk.len() <= rk.len() {
        let mut table: HashMap<u64, Vec<usize>> = HashMap::with_capacity(lk.len());
        for (i, k) in lk.iter().enumerate() {
            table.entry(*k).or_default().push(i);
        }
        for (j, k) in rk.iter().enumerate() {
            if let Some(is) = table.get(k) {
                out.extend(is.iter().map(|&i| (i, j)));
            }
        }
    } else {
        let mut table: HashMap<u64, Vec<usize>> = HashMap::with_capacity(rk.len());
        for (j, k) in rk.iter().enumerate() {
            table.entry(*k).or_default().push(j);
        }
        for (i, k) in lk.iter().enumerate() {
            if let Some(js) = table.get(k) {
                out.extend(js.iter().map(|&j| (i, j)));
            }
        }
    }
    out
}

fn sort_merge_join(lk: &[u64], rk: &[u64], fj: &ForkJoin) -> Result<Vec<(usize, usize)>> {
    let lp = fj.argsort(lk);
    let rp = fj.argsort(rk);
    let ls: Vec<u64> = lp.iter().map(|&i| lk[i]).collect();
    let rs: Vec<u64> = rp.iter().map(|&j| rk[j]).collect();
    Ok(fj.parallel_merge_join(&ls, &rs)?.into_iter().map(|(a, b)| (lp[a], rp[b])).collect())
}

/// Final, duplicate-free result of a rule: one row per distinct binding.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Table {
    pub vars: Vec<(Var, ValueType)>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, v: &Var) -> Option<usize> {
        self.vars.iter().position(|(w, _)| w == v)
    }

    /// Tab-separated text: a header of variable names, then one line per row
    /// with strings resolved through `dict`.
    pub fn to_tsv(&self, dict: &StringDictionary) -> Result<String> {
        let mut s = self.vars.iter().map(|(v, _)| v.name()).collect::<Vec<_>>().join("\t");
        s.push('\n');
        for row in &self.rows {
            let cells = row.iter().map(|v| format_value(v, dict).map(|t| escape_field(&t))).collect::<Result<Vec<_>>>()?;
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Sym;
    use crate::fact::{Scalar, Term, TestOp};

    fn var<C>(n: &str) -> Term<C> {
        Term::Var(Var::new(n))
    }

    fn fj() -> ForkJoin {
        ForkJoin::with_workers(2).unwrap()
    }

    struct Vienna {
        d: StringDictionary,
        lives: Condition,
        named: Condition,
        people: Vec<Fact>,
        cities: Vec<Fact>,
    }

    fn vienna() -> Vienna {
        let d = StringDictionary::new();
        let (person, city) = (d.intern("Person"), d.intern("City"));
        let (lives_in, name) = (d.intern("livesIn"), d.intern("name"));
        let s = |x: &str| Value::string(d.intern(x));
        let people = vec![
            Fact::new(person, d.intern("p1"), lives_in, s("c1")),
            Fact::new(person, d.intern("p2"), lives_in, s("c2")),
            Fact::new(person, d.intern("p3"), lives_in, s("c1")),
        ];
        let cities = vec![Fact::new(city, d.intern("c1"), name, s("Vienna"))];
        let lives = Condition::new(person, var("p"), Term::Const(lives_in), var("c"), ValueType::String);
        let named = Condition::new(city, var("c"), Term::Const(name), Term::Const(s("Vienna")), ValueType::String);
        Vienna { d, lives, named, people, cities }
    }

    #[test]
    fn new_result_schema_and_rows() {
        let v = vienna();
        for layout in Layout::ALL {
            let r = JoinResult::new(layout, &v.people, &v.lives);
            assert_eq!(r.len(), 3);
            let names: Vec<_> = r.schema().vars().iter().map(|(v, _)| v.name().to_string()).collect();
            assert_eq!(names, ["p", "c"]);
            let empty = JoinResult::new(layout, &[], &v.lives);
            assert!(empty.is_empty());
            assert_eq!(empty.schema().len(), 2);
        }
    }

    #[test]
    fn person_city_join() {
        let v = vienna();
        for layout in Layout::ALL {
            for algo in JoinAlgo::ALL {
                let r = JoinResult::new(layout, &v.people, &v.lives)
                    .join(&v.cities, &v.named, Some(JoinPosition::Id), algo, &fj())
                    .unwrap();
                let t = r.materialize(&[Var::new("p"), Var::new("c")]).unwrap();
                let tsv = t.to_tsv(&v.d).unwrap();
                assert_eq!(tsv, "p\tc\np1\tc1\np3\tc1\n", "{layout} {algo}");
            }
        }
    }

    #[test]
    fn unbound_join_variable_is_a_planning_error() {
        let v = vienna();
        let r = JoinResult::new(Layout::Cr, &v.cities, &v.named);
        // ?p is not bound by the city condition
        let e = r.join(&v.people, &v.lives, Some(JoinPosition::Id), JoinAlgo::Hj, &fj()).unwrap_err();
        assert!(matches!(e, Error::Planning(_)));
    }

    #[test]
    fn age_class_test() {
        let d = StringDictionary::new();
        let (ac, person) = (d.intern("AgeClass"), d.intern("Person"));
        let (min_age, age) = (d.intern("minAge"), d.intern("age"));
        let u = |x: u32| Value::from_scalar(Scalar::U32(x));
        let classes: Vec<Fact> = [(d.intern("child"), 0), (d.intern("adult"), 18), (d.intern("senior"), 65)]
            .into_iter()
            .map(|(id, m)| Fact::new(ac, id, min_age, u(m)))
            .collect();
        let people = vec![Fact::new(person, d.intern("p1"), age, u(30))];
        let c1 = Condition::new(ac, var("ac"), Term::Const(min_age), var("acMin"), ValueType::UInt32);
        let c2 = Condition::new(person, var("p"), Term::Const(age), var("pAge"), ValueType::UInt32)
            .with_tests(vec![VariableJoinTest { left: Var::new("pAge"), op: TestOp::Ge, right: Var::new("acMin") }]);
        for layout in Layout::ALL {
            let r = JoinResult::new(layout, &classes, &c1).join(&people, &c2, None, JoinAlgo::Hj, &fj()).unwrap();
            let t = r.materialize(&[Var::new("ac")]).unwrap();
            let got: Vec<_> = t.rows.iter().map(|r| d.resolve(r[0].as_sym().unwrap()).unwrap().to_string()).collect();
            assert_eq!(got.len(), 2);
            assert!(got.contains(&"child".to_string()) && got.contains(&"adult".to_string()));
        }
    }

    #[test]
    fn tests_wait_for_both_variables() {
        let t = VariableJoinTest { left: Var::new("a"), op: TestOp::Lt, right: Var::new("b") };
        let c1 = Condition::new(Sym(0), var("x"), Term::Const(Sym(1)), var("a"), ValueType::Int64).with_tests(vec![t]);
        let c2 = Condition::new(Sym(0), var("x"), Term::Const(Sym(2)), var("b"), ValueType::Int64);
        let i = |x: i64| Value::from_scalar(Scalar::I64(x));
        let f1 = vec![Fact::new(Sym(0), Sym(5), Sym(1), i(-3)), Fact::new(Sym(0), Sym(6), Sym(1), i(9))];
        let f2 = vec![Fact::new(Sym(0), Sym(5), Sym(2), i(0)), Fact::new(Sym(0), Sym(6), Sym(2), i(1))];
        let r = JoinResult::new(Layout::Rr, &f1, &c1);
        assert_eq!(r.pending_tests().len(), 1);
        let j = r.join(&f2, &c2, Some(JoinPosition::Id), JoinAlgo::Mj, &fj()).unwrap();
        assert!(j.pending_tests().is_empty());
        assert_eq!(j.len(), 1, "-3 < 0 holds, 9 < 1 does not");
    }

    #[test]
    fn materialize_dedups_and_sorts() {
        let c = Condition::new(Sym(0), var("x"), var("a"), var("v"), ValueType::String);
        let f = |i: u64, a: u64| Fact::new(Sym(0), Sym(i), Sym(a), Value::string(Sym(1)));
        let r = JoinResult::new(Layout::Cr, &[f(3, 1), f(2, 1), f(3, 2)], &c);
        let t = r.materialize(&[Var::new("x")]).unwrap();
        assert_eq!(t.rows, vec![vec![Value::string(Sym(2))], vec![Value::string(Sym(3))]]);
        let empty = JoinResult::new(Layout::Cr, &[], &c).materialize(&[Var::new("x")]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.vars.len(), 1);
    }

    #[test]
    fn shared_non_key_variables_filter() {
        // (T ?x a ?y) joined with (U ?x b ?y): both shared, key on ?x
        let c1 = Condition::new(Sym(0), var("x"), Term::Const(Sym(1)), var("y"), ValueType::String);
        let c2 = Condition::new(Sym(9), var("x"), Term::Const(Sym(2)), var("y"), ValueType::String);
        let l = vec![Fact::new(Sym(0), Sym(5), Sym(1), Value::string(Sym(7)))];
        let r = vec![
            Fact::new(Sym(9), Sym(5), Sym(2), Value::string(Sym(7))),
            Fact::new(Sym(9), Sym(5), Sym(2), Value::string(Sym(8))),
        ];
        for algo in JoinAlgo::ALL {
            let j = JoinResult::new(Layout::Rr, &l, &c1).join(&r, &c2, Some(JoinPosition::Id), algo, &fj()).unwrap();
            assert_eq!(j.len(), 1);
            assert_eq!(j.schema().len(), 2);
        }
    }
}
