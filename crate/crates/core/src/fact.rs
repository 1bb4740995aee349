//! Facts, conditions and rules.
//!
//! A fact is the quintuple `(fact_type id attr value value_type)`. All string
//! components are dictionary handles, so a [`Fact`] is a small `Copy` value
//! that can live in tight arrays. A [`Condition`] has the same shape but may
//! hold named variables in the id, attr and value slots.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use num_traits::{NumCast, ToPrimitive};

use crate::dictionary::Sym;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum ValueType {
    #[default]
    String,
    Int32,
    Int64,
    UInt32,
    UInt64,
    Float,
    Double,
    Bool,
}

impl ValueType {
    pub const ALL: [ValueType; 8] = [
        ValueType::String,
        ValueType::Int32,
        ValueType::Int64,
        ValueType::UInt32,
        ValueType::UInt64,
        ValueType::Float,
        ValueType::Double,
        ValueType::Bool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Int32 => "int32",
            ValueType::Int64 => "int64",
            ValueType::UInt32 => "uint32",
            ValueType::UInt64 => "uint64",
            ValueType::Float => "float",
            ValueType::Double => "double",
            ValueType::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, ValueType::String | ValueType::Bool)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Decoded form of a [`Value`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    Str(Sym),
    I32(i32),
    I64(i64),
    U32(u32),
    U64(u64),
    F32(f32),
    F64(f64),
    Bool(bool),
}

/// Typed fact value: a type tag plus the canonical 64-bit payload (a string
/// handle, or the bit pattern of the scalar). Equality and hashing are on the
/// bit pattern, which is also the join key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Value {
    ty: ValueType,
    bits: u64,
}

impl Value {
    #[inline]
    pub const fn from_bits(ty: ValueType, bits: u64) -> Self {
        Self { ty, bits }
    }

    #[inline]
    pub fn string(s: Sym) -> Self {
        Self::from_bits(ValueType::String, s.0)
    }

    pub fn from_scalar(s: Scalar) -> Self {
        match s {
            Scalar::Str(h) => Self::string(h),
            Scalar::I32(v) => Self::from_bits(ValueType::Int32, v as u32 as u64),
            Scalar::I64(v) => Self::from_bits(ValueType::Int64, v as u64),
            Scalar::U32(v) => Self::from_bits(ValueType::UInt32, v as u64),
            Scalar::U64(v) => Self::from_bits(ValueType::UInt64, v),
            Scalar::F32(v) => Self::from_bits(ValueType::Float, v.to_bits() as u64),
            Scalar::F64(v) => Self::from_bits(ValueType::Double, v.to_bits()),
            Scalar::Bool(v) => Self::from_bits(ValueType::Bool, v as u64),
        }
    }

    #[inline]
    pub fn ty(&self) -> ValueType {
        self.ty
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// The handle, for string values.
    pub fn as_sym(&self) -> Option<Sym> {
        (self.ty == ValueType::String).then_some(Sym(self.bits))
    }

    pub fn scalar(&self) -> Scalar {
        match self.ty {
            ValueType::String => Scalar::Str(Sym(self.bits)),
            ValueType::Int32 => Scalar::I32(self.bits as u32 as i32),
            ValueType::Int64 => Scalar::I64(self.bits as i64),
            ValueType::UInt32 => Scalar::U32(self.bits as u32),
            ValueType::UInt64 => Scalar::U64(self.bits),
            ValueType::Float => Scalar::F32(f32::from_bits(self.bits as u32)),
            ValueType::Double => Scalar::F64(f64::from_bits(self.bits)),
            ValueType::Bool => Scalar::Bool(self.bits != 0),
        }
    }

    /// Numeric payload widened to `f64`. `None` for strings and bools.
    pub fn to_f64(&self) -> Option<f64> {
        match self.scalar() {
            Scalar::I32(v) => v.to_f64(),
            Scalar::I64(v) => v.to_f64(),
            Scalar::U32(v) => v.to_f64(),
            Scalar::U64(v) => v.to_f64(),
            Scalar::F32(v) => v.to_f64(),
            Scalar::F64(v) => Some(v),
            Scalar::Str(_) | Scalar::Bool(_) => None,
        }
    }

    /// Casts a double into a numeric value of type `ty`. `None` when the
    /// type is not numeric or the value does not fit.
    pub fn from_f64(ty: ValueType, x: f64) -> Option<Value> {
        let s = match ty {
            ValueType::Int32 => Scalar::I32(<i32 as NumCast>::from(x)?),
            ValueType::Int64 => Scalar::I64(<i64 as NumCast>::from(x)?),
            ValueType::UInt32 => Scalar::U32(<u32 as NumCast>::from(x)?),
            ValueType::UInt64 => Scalar::U64(<u64 as NumCast>::from(x)?),
            ValueType::Float => Scalar::F32(x as f32),
            ValueType::Double => Scalar::F64(x),
            ValueType::String | ValueType::Bool => return None,
        };
        Some(Value::from_scalar(s))
    }

    /// Ordering of two values of the same type. Strings compare by handle.
    /// `None` on type mismatch or unordered floats.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        if self.ty != other.ty {
            return None;
        }
        match (self.scalar(), other.scalar()) {
            (Scalar::Str(a), Scalar::Str(b)) => Some(a.cmp(&b)),
            (Scalar::I32(a), Scalar::I32(b)) => Some(a.cmp(&b)),
            (Scalar::I64(a), Scalar::I64(b)) => Some(a.cmp(&b)),
            (Scalar::U32(a), Scalar::U32(b)) => Some(a.cmp(&b)),
            (Scalar::U64(a), Scalar::U64(b)) => Some(a.cmp(&b)),
            (Scalar::F32(a), Scalar::F32(b)) => a.partial_cmp(&b),
            (Scalar::F64(a), Scalar::F64(b)) => a.partial_cmp(&b),
            (Scalar::Bool(a), Scalar::Bool(b)) => Some(a.cmp(&b)),
            _ => None,
        }
    }
}

impl From<Sym> for Value {
    fn from(s: Sym) -> Self {
        Value::string(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub fact_type: Sym,
    pub id: Sym,
    pub attr: Sym,
    pub value: Value,
}

impl Fact {
    pub fn new(fact_type: Sym, id: Sym, attr: Sym, value: Value) -> Self {
        Self { fact_type, id, attr, value }
    }

    #[inline]
    pub fn value_type(&self) -> ValueType {
        self.value.ty()
    }

    /// The component at `pos` as a value (id and attr are string-typed).
    #[inline]
    pub fn slot(&self, pos: JoinPosition) -> Value {
        match pos {
            JoinPosition::Id => Value::string(self.id),
            JoinPosition::Attr => Value::string(self.attr),
            JoinPosition::Val => self.value,
        }
    }
}

/// Triple position of a condition slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JoinPosition {
    Id,
    Attr,
    Val,
}

impl JoinPosition {
    pub const ALL: [JoinPosition; 3] = [JoinPosition::Id, JoinPosition::Attr, JoinPosition::Val];
}

/// Logical variable name, stored without the `?` prefix.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: &str) -> Self {
        Var(Arc::from(name.strip_prefix('?').unwrap_or(name)))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term<C> {
    Var(Var),
    Const(C),
}

impl<C> Term<C> {
    pub fn var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl TestOp {
    pub fn symbol(self) -> &'static str {
        match self {
            TestOp::Eq => "==",
            TestOp::Ne => "!=",
            TestOp::Lt => "<",
            TestOp::Le => "<=",
            TestOp::Gt => ">",
            TestOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: Option<Ordering>) -> bool {
        match (self, ord) {
            (TestOp::Ne, None) => true,
            (_, None) => false,
            (TestOp::Eq, Some(o)) => o == Ordering::Equal,
            (TestOp::Ne, Some(o)) => o != Ordering::Equal,
            (TestOp::Lt, Some(o)) => o == Ordering::Less,
            (TestOp::Le, Some(o)) => o != Ordering::Greater,
            (TestOp::Gt, Some(o)) => o == Ordering::Greater,
            (TestOp::Ge, Some(o)) => o != Ordering::Less,
        }
    }

    pub fn apply(self, a: &Value, b: &Value) -> bool {
        self.holds(a.compare(b))
    }
}

/// Binary comparison between two bound variables, e.g. `(?pAge >= ?acMin)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VariableJoinTest {
    pub left: Var,
    pub op: TestOp,
    pub right: Var,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Condition {
    pub fact_type: Sym,
    pub id: Term<Sym>,
    pub attr: Term<Sym>,
    pub value: Term<Value>,
    pub value_type: ValueType,
    pub tests: Vec<VariableJoinTest>,
}

impl Condition {
    pub fn new(fact_type: Sym, id: Term<Sym>, attr: Term<Sym>, value: Term<Value>, value_type: ValueType) -> Self {
        Self { fact_type, id, attr, value, value_type, tests: Vec::new() }
    }

    pub fn with_tests(mut self, tests: Vec<VariableJoinTest>) -> Self {
        self.tests = tests;
        self
    }

    pub fn rank(&self) -> u8 {
        condition_rank(self)
    }

    pub fn var_at(&self, pos: JoinPosition) -> Option<&Var> {
        match pos {
            JoinPosition::Id => self.id.var(),
            JoinPosition::Attr => self.attr.var(),
            JoinPosition::Val => self.value.var(),
        }
    }

    /// Constant at `pos`, as a value.
    pub fn const_at(&self, pos: JoinPosition) -> Option<Value> {
        match pos {
            JoinPosition::Id => match self.id {
                Term::Const(s) => Some(Value::string(s)),
                Term::Var(_) => None,
            },
            JoinPosition::Attr => match self.attr {
                Term::Const(s) => Some(Value::string(s)),
                Term::Var(_) => None,
            },
            JoinPosition::Val => match self.value {
                Term::Const(v) => Some(v),
                Term::Var(_) => None,
            },
        }
    }

    pub fn slot_type(&self, pos: JoinPosition) -> ValueType {
        match pos {
            JoinPosition::Id | JoinPosition::Attr => ValueType::String,
            JoinPosition::Val => self.value_type,
        }
    }

    /// Variable slots in id, attr, value order (a repeated variable is
    /// listed once per slot).
    pub fn var_slots(&self) -> Vec<(Var, JoinPosition)> {
        JoinPosition::ALL.into_iter().filter_map(|p| self.var_at(p).map(|v| (v.clone(), p))).collect()
    }

    /// Distinct variables in slot order.
    pub fn variables(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::with_capacity(3);
        for (v, _) in self.var_slots() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn position_of(&self, var: &Var) -> Option<JoinPosition> {
        JoinPosition::ALL.into_iter().find(|&p| self.var_at(p) == Some(var))
    }

    /// Whether `f` matches this pattern, including repeated-variable
    /// equality within the condition.
    pub fn matches(&self, f: &Fact) -> bool {
        if f.fact_type != self.fact_type || f.value_type() != self.value_type {
            return false;
        }
        for p in JoinPosition::ALL {
            if let Some(c) = self.const_at(p) {
                if f.slot(p) != c {
                    return false;
                }
            }
        }
        self.repeated_vars_agree(f)
    }

    pub(crate) fn repeated_vars_agree(&self, f: &Fact) -> bool {
        let slots = self.var_slots();
        for i in 0..slots.len() {
            for j in i + 1..slots.len() {
                if slots[i].0 == slots[j].0 && f.slot(slots[i].1).bits() != f.slot(slots[j].1).bits() {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn has_repeated_vars(&self) -> bool {
        let slots = self.var_slots();
        slots.len() != self.variables().len()
    }

    /// Copy of this condition with `pos` bound to `value`.
    pub fn bind(&self, pos: JoinPosition, value: Value) -> Condition {
        let mut c = self.clone();
        match pos {
            JoinPosition::Id => c.id = Term::Const(Sym(value.bits())),
            JoinPosition::Attr => c.attr = Term::Const(Sym(value.bits())),
            JoinPosition::Val => c.value = Term::Const(Value::from_bits(self.value_type, value.bits())),
        }
        c
    }
}

/// Number of concrete values among the id, attr and value slots.
pub fn condition_rank(c: &Condition) -> u8 {
    JoinPosition::ALL.into_iter().filter(|&p| c.var_at(p).is_none()).count() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> char {
        match self {
            ArithOp::Add => '+',
            ArithOp::Sub => '-',
            ArithOp::Mul => '*',
            ArithOp::Div => '/',
        }
    }

    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
            ArithOp::Mul => a * b,
            ArithOp::Div => a / b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Var(Var),
    Number(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub lhs: Operand,
    pub op: ArithOp,
    pub rhs: Operand,
}

impl Expr {
    fn eval(&self, lookup: &impl Fn(&Var) -> Option<Value>) -> Option<f64> {
        let operand = |o: &Operand| match o {
            Operand::Var(v) => lookup(v)?.to_f64(),
            Operand::Number(n) => Some(*n),
        };
        Some(self.op.eval(operand(&self.lhs)?, operand(&self.rhs)?))
    }

    pub fn variables(&self) -> impl Iterator<Item = &Var> {
        [&self.lhs, &self.rhs].into_iter().filter_map(|o| match o {
            Operand::Var(v) => Some(v),
            Operand::Number(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemplateTerm<C> {
    Var(Var),
    Const(C),
    Expr(Expr),
}

/// Fact-shaped pattern instantiated from a match row.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub fact_type: Sym,
    pub id: TemplateTerm<Sym>,
    pub attr: TemplateTerm<Sym>,
    pub value: TemplateTerm<Value>,
    pub value_type: ValueType,
}

impl Template {
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let mut push = |v: &Var| {
            if !out.contains(v) {
                out.push(v.clone());
            }
        };
        for t in [&self.id, &self.attr] {
            match t {
                TemplateTerm::Var(v) => push(v),
                TemplateTerm::Expr(e) => e.variables().for_each(&mut push),
                TemplateTerm::Const(_) => {}
            }
        }
        match &self.value {
            TemplateTerm::Var(v) => push(v),
            TemplateTerm::Expr(e) => e.variables().for_each(&mut push),
            TemplateTerm::Const(_) => {}
        }
        out
    }

    /// Builds the fact for one binding row. Returns `None` when an
    /// arithmetic result cannot be represented in the declared type.
    pub fn instantiate(&self, lookup: impl Fn(&Var) -> Option<Value>) -> Option<Fact> {
        let handle = |t: &TemplateTerm<Sym>| -> Option<Sym> {
            match t {
                TemplateTerm::Const(s) => Some(*s),
                TemplateTerm::Var(v) => Some(Sym(lookup(v)?.bits())),
                TemplateTerm::Expr(_) => None,
            }
        };
        let id = handle(&self.id)?;
        let attr = handle(&self.attr)?;
        let value = match &self.value {
            TemplateTerm::Const(c) => *c,
            TemplateTerm::Var(v) => Value::from_bits(self.value_type, lookup(v)?.bits()),
            TemplateTerm::Expr(e) => Value::from_f64(self.value_type, e.eval(&lookup)?)?,
        };
        Some(Fact::new(self.fact_type, id, attr, value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Add,
    Delete,
    Replace,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Add(Template),
    Delete(Template),
    /// old, new
    Replace(Template, Template),
    /// Hands each match row to the logging hook.
    External(String),
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Add(_) => ActionKind::Add,
            Action::Delete(_) => ActionKind::Delete,
            Action::Replace(_, _) => ActionKind::Replace,
            Action::External(_) => ActionKind::External,
        }
    }

    pub fn templates(&self) -> Vec<&Template> {
        match self {
            Action::Add(t) | Action::Delete(t) => vec![t],
            Action::Replace(a, b) => vec![a, b],
            Action::External(_) => Vec::new(),
        }
    }

    pub fn is_internal(&self) -> bool {
        !matches!(self, Action::External(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub name: String,
    pub conditions: Vec<Condition>,
    pub actions: Vec<Action>,
}

impl Rule {
    /// A rule without add/delete/replace actions only answers queries.
    pub fn is_query(&self) -> bool {
        !self.actions.iter().any(Action::is_internal)
    }

    /// Fact types modified by this rule's internal actions.
    pub fn output_types(&self) -> Vec<Sym> {
        let mut out = Vec::new();
        for t in self.actions.iter().flat_map(Action::templates) {
            if !out.contains(&t.fact_type) {
                out.push(t.fact_type);
            }
        }
        out
    }

    /// Fact types read by the conditions.
    pub fn input_types(&self) -> Vec<Sym> {
        let mut out = Vec::new();
        for c in &self.conditions {
            if !out.contains(&c.fact_type) {
                out.push(c.fact_type);
            }
        }
        out
    }

    /// Variables in order of first appearance, with the type they bind.
    pub fn variables(&self) -> Vec<(Var, ValueType)> {
        let mut out: Vec<(Var, ValueType)> = Vec::new();
        for c in &self.conditions {
            for (v, p) in c.var_slots() {
                if !out.iter().any(|(w, _)| *w == v) {
                    out.push((v, c.slot_type(p)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var<C>(n: &str) -> Term<C> {
        Term::Var(Var::new(n))
    }

    #[test]
    fn rank_counts_concrete_triple_slots() {
        let city = Sym(0);
        let name = Sym(1);
        let c = Condition::new(city, var("id"), Term::Const(name), var("x"), ValueType::String);
        assert_eq!(condition_rank(&c), 1);
        let c0 = Condition::new(city, var("a"), var("b"), var("c"), ValueType::String);
        assert_eq!(c0.rank(), 0);
        let c3 =
            Condition::new(city, Term::Const(Sym(5)), Term::Const(Sym(6)), Term::Const(Value::string(Sym(7))), ValueType::String);
        assert_eq!(c3.rank(), 3);
    }

    #[test]
    fn scalar_round_trip() {
        let cases = [
            Scalar::I32(-5),
            Scalar::I64(i64::MIN),
            Scalar::U32(7),
            Scalar::U64(u64::MAX),
            Scalar::F32(1.5),
            Scalar::F64(-2.25e300),
            Scalar::Bool(true),
            Scalar::Str(Sym(9)),
        ];
        for s in cases {
            assert_eq!(Value::from_scalar(s).scalar(), s);
        }
    }

    #[test]
    fn compare_is_numeric_not_bitwise() {
        let a = Value::from_scalar(Scalar::I32(-1));
        let b = Value::from_scalar(Scalar::I32(2));
        assert_eq!(a.compare(&b), Some(Ordering::Less));
        assert!(a.bits() > b.bits());
        let x = Value::from_scalar(Scalar::U32(30));
        assert_eq!(a.compare(&x), None);
    }

    #[test]
    fn cast_rejects_out_of_range() {
        assert_eq!(Value::from_f64(ValueType::UInt32, -1.0), None);
        assert_eq!(Value::from_f64(ValueType::Int32, f64::NAN), None);
        assert_eq!(Value::from_f64(ValueType::UInt32, 42.0).map(|v| v.scalar()), Some(Scalar::U32(42)));
        assert_eq!(Value::from_f64(ValueType::String, 1.0), None);
    }

    #[test]
    fn template_arithmetic() {
        let t = Template {
            fact_type: Sym(0),
            id: TemplateTerm::Var(Var::new("s")),
            attr: TemplateTerm::Const(Sym(1)),
            value: TemplateTerm::Expr(Expr {
                lhs: Operand::Var(Var::new("p")),
                op: ArithOp::Mul,
                rhs: Operand::Var(Var::new("f")),
            }),
            value_type: ValueType::Double,
        };
        let f = t
            .instantiate(|v| match v.name() {
                "s" => Some(Value::string(Sym(3))),
                "p" => Some(Value::from_scalar(Scalar::F64(100.0))),
                "f" => Some(Value::from_scalar(Scalar::F64(1.1))),
                _ => None,
            })
            .unwrap();
        assert_eq!(f.id, Sym(3));
        assert_eq!(f.value.scalar(), Scalar::F64(100.0 * 1.1));
    }

    #[test]
    fn matches_checks_repeated_variables() {
        let c = Condition::new(Sym(0), var("x"), Term::Const(Sym(1)), var("x"), ValueType::String);
        assert!(c.matches(&Fact::new(Sym(0), Sym(4), Sym(1), Value::string(Sym(4)))));
        assert!(!c.matches(&Fact::new(Sym(0), Sym(4), Sym(1), Value::string(Sym(5)))));
        assert!(!c.matches(&Fact::new(Sym(0), Sym(4), Sym(2), Value::string(Sym(4)))));
    }

    #[test]
    fn test_ops() {
        use Ordering::*;
        assert!(TestOp::Ge.holds(Some(Equal)));
        assert!(TestOp::Ge.holds(Some(Greater)));
        assert!(!TestOp::Ge.holds(Some(Less)));
        assert!(!TestOp::Lt.holds(None));
        assert!(TestOp::Ne.holds(None));
    }
}
