//! Text formats: the tab-separated facts file and the rules language.
//!
//! Facts file: one fact per line, five TAB-separated fields
//! `fact_type id attr value value_type`. Lines starting with `#` are
//! comments, blank lines are skipped. Fields may use the escapes `\t`, `\n`
//! and `\\`.
//!
//! Rules:
//!
//! ```text
//! rule "DailySales" {
//!   when:
//!     (DailySales ?s profitEUR ?p double)
//!     (DailySales ?s EURUSD ?f double)
//!   then:
//!     add (DailySales ?s profitUSD (?p * ?f) double)
//! }
//! ```

use std::collections::{HashMap, HashSet};

use crate::dictionary::{StringDictionary, Sym};
use crate::error::{Error, ParseError, Result};
use crate::fact::{
    Action, ArithOp, Condition, Expr, Fact, Operand, Rule, Scalar, Template, TemplateTerm, Term, TestOp, Value, ValueType, Var,
    VariableJoinTest,
};

// ---------------------------------------------------------------------------
// facts file

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str, line: usize) -> Result<String, ParseError> {
    if !s.contains('\\') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(c) => return Err(ParseError::new(line, 0, format!("unknown escape '\\{c}'"))),
            None => return Err(ParseError::new(line, 0, "dangling '\\' at end of field")),
        }
    }
    Ok(out)
}

/// Parses the textual payload of a value of type `ty`.
pub fn parse_value(text: &str, ty: ValueType, dict: &StringDictionary) -> Option<Value> {
    let s = match ty {
        ValueType::String => Scalar::Str(dict.intern(text)),
        ValueType::Int32 => Scalar::I32(text.parse().ok()?),
        ValueType::Int64 => Scalar::I64(text.parse().ok()?),
        ValueType::UInt32 => Scalar::U32(text.parse().ok()?),
        ValueType::UInt64 => Scalar::U64(text.parse().ok()?),
        ValueType::Float => Scalar::F32(text.parse().ok()?),
        ValueType::Double => Scalar::F64(text.parse().ok()?),
        ValueType::Bool => match text {
            "true" => Scalar::Bool(true),
            "false" => Scalar::Bool(false),
            _ => return None,
        },
    };
    Some(Value::from_scalar(s))
}

/// Text form of a value (strings resolved, unescaped).
pub fn format_value(v: &Value, dict: &StringDictionary) -> Result<String> {
    Ok(match v.scalar() {
        Scalar::Str(s) => dict.resolve(s)?.to_string(),
        Scalar::I32(x) => x.to_string(),
        Scalar::I64(x) => x.to_string(),
        Scalar::U32(x) => x.to_string(),
        Scalar::U64(x) => x.to_string(),
        Scalar::F32(x) => x.to_string(),
        Scalar::F64(x) => x.to_string(),
        Scalar::Bool(x) => x.to_string(),
    })
}

/// Parses one facts-file line. `line_no` is used for diagnostics only.
pub fn parse_fact_line(line: &str, line_no: usize, dict: &StringDictionary) -> Result<Fact, ParseError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(ParseError::new(line_no, 0, format!("expected 5 tab-separated fields, found {}", fields.len())));
    }
    let ty = ValueType::from_name(fields[4])
        .ok_or_else(|| ParseError::new(line_no, 0, format!("unknown value type '{}'", fields[4])))?;
    let fact_type = dict.intern(&unescape_field(fields[0], line_no)?);
    let id = dict.intern(&unescape_field(fields[1], line_no)?);
    let attr = dict.intern(&unescape_field(fields[2], line_no)?);
    let raw = unescape_field(fields[3], line_no)?;
    let value =
        parse_value(&raw, ty, dict).ok_or_else(|| ParseError::new(line_no, 0, format!("cannot parse '{raw}' as {ty}")))?;
    Ok(Fact::new(fact_type, id, attr, value))
}

/// Parses a whole facts file, stopping at the first malformed line.
pub fn parse_facts(text: &str, dict: &StringDictionary) -> Result<Vec<Fact>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_fact_line(line, i + 1, dict)?);
    }
    Ok(out)
}

pub fn serialize_fact(f: &Fact, dict: &StringDictionary) -> Result<String> {
    Ok(format!(
        "{}\t{}\t{}\t{}\t{}",
        escape_field(&dict.resolve(f.fact_type)?),
        escape_field(&dict.resolve(f.id)?),
        escape_field(&dict.resolve(f.attr)?),
        escape_field(&format_value(&f.value, dict)?),
        f.value_type()
    ))
}

// ---------------------------------------------------------------------------
// rules: lexer

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    When,
    Then,
    Var(String),
    Str(String),
    Number(String),
    Ident(String),
    Cmp(TestOp),
    Arith(ArithOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Comma => "','".into(),
            Tok::When => "'when:'".into(),
            Tok::Then => "'then:'".into(),
            Tok::Var(v) => format!("variable ?{v}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Number(n) => format!("number {n}"),
            Tok::Ident(i) => format!("'{i}'"),
            Tok::Cmp(op) => format!("'{}'", op.symbol()),
            Tok::Arith(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | ':' | '/')
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let next = chars.get(i + 1).copied();
        let tok = match c {
            '{' => {
                bump!();
                Tok::LBrace
            }
            '}' => {
                bump!();
                Tok::RBrace
            }
            '(' => {
                bump!();
                Tok::LParen
            }
            ')' => {
                bump!();
                Tok::RParen
            }
            '[' => {
                bump!();
                Tok::LBracket
            }
            ']' => {
                bump!();
                Tok::RBracket
            }
            ',' => {
                bump!();
                Tok::Comma
            }
            '=' if next == Some('=') => {
                bump!();
                bump!();
                Tok::Cmp(TestOp::Eq)
            }
            '!' if next == Some('=') => {
                bump!();
                bump!();
                Tok::Cmp(TestOp::Ne)
            }
            '<' | '>' => {
                bump!();
                let eq = i < chars.len() && chars[i] == '=';
                if eq {
                    bump!();
                }
                Tok::Cmp(match (c, eq) {
                    ('<', false) => TestOp::Lt,
                    ('<', true) => TestOp::Le,
                    ('>', false) => TestOp::Gt,
                    _ => TestOp::Ge,
                })
            }
            '+' => {
                bump!();
                Tok::Arith(ArithOp::Add)
            }
            '*' => {
                bump!();
                Tok::Arith(ArithOp::Mul)
            }
            '/' => {
                bump!();
                Tok::Arith(ArithOp::Div)
            }
            '-' if !next.is_some_and(|n| n.is_ascii_digit()) => {
                bump!();
                Tok::Arith(ArithOp::Sub)
            }
            '?' => {
                bump!();
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                if start == i {
                    return Err(ParseError::new(start_line, start_col, "empty variable name"));
                }
                Tok::Var(chars[start..i].iter().collect())
            }
            '"' | '\'' => {
                let quote = c;
                bump!();
                let mut s = String::new();
                loop {
                    if i >= chars.len() {
                        return Err(ParseError::new(start_line, start_col, "unterminated string"));
                    }
                    let ch = chars[i];
                    bump!();
                    if ch == quote {
                        break;
                    }
                    if ch == '\\' {
                        if i >= chars.len() {
                            return Err(ParseError::new(start_line, start_col, "unterminated string"));
                        }
                        let e = chars[i];
                        bump!();
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    } else {
                        s.push(ch);
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || c == '-' => {
                let start = i;
                bump!();
                while i < chars.len() {
                    let d = chars[i];
                    let prev = chars[i - 1];
                    let exp_sign = matches!(d, '+' | '-') && matches!(prev, 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || matches!(d, 'e' | 'E') || exp_sign {
                        bump!();
                    } else {
                        break;
                    }
                }
                Tok::Number(chars[start..i].iter().collect())
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    bump!();
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "when:" => Tok::When,
                    "then:" => Tok::Then,
                    _ => Tok::Ident(word),
                }
            }
            other => {
                return Err(ParseError::new(start_line, start_col, format!("unexpected character '{other}'")));
            }
        };
        out.push(Spanned { tok, line: start_line, col: start_col });
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// rules: parser

/// Unconverted slot contents; constants are typed once the value type is read.
#[derive(Clone, Debug)]
enum RawTerm {
    Var(String),
    Text(String),
    Expr(Expr),
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    dict: &'a StringDictionary,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Spanned, msg: impl Into<String>) -> ParseError {
        ParseError::new(t.line, t.col, msg)
    }

    fn expect(&mut self, want: Tok) -> Result<Spanned, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.error_at(&t, format!("expected {}, found {}", want.describe(), t.tok.describe())))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Spanned), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(self.error_at(&t, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn rules(&mut self) -> Result<Vec<Rule>, ParseError> {
        let mut rules: Vec<Rule> = Vec::new();
        let mut names = HashSet::new();
        while self.peek().tok != Tok::Eof {
            let start = self.peek().clone();
            let rule = self.rule()?;
            if !names.insert(rule.name.clone()) {
                return Err(self.error_at(&start, format!("duplicate rule name '{}'", rule.name)));
            }
            rules.push(rule);
        }
        Ok(rules)
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        let kw = self.next();
        if kw.tok != Tok::Ident("rule".into()) {
            return Err(self.error_at(&kw, format!("expected 'rule', found {}", kw.tok.describe())));
        }
        let name_tok = self.next();
        let name = match name_tok.tok {
            Tok::Str(ref s) => s.clone(),
            ref other => return Err(self.error_at(&name_tok, format!("expected rule name string, found {}", other.describe()))),
        };
        self.expect(Tok::LBrace)?;
        self.expect(Tok::When)?;
        let mut conditions = Vec::new();
        let mut cond_spans = Vec::new();
        while self.peek().tok == Tok::LParen {
            cond_spans.push(self.peek().clone());
            conditions.push(self.condition()?);
        }
        if conditions.is_empty() {
            let t = self.peek().clone();
            return Err(self.error_at(&t, "a rule needs at least one condition"));
        }
        self.expect(Tok::Then)?;
        let mut actions = Vec::new();
        let mut action_spans = Vec::new();
        while self.peek().tok != Tok::RBrace {
            action_spans.push(self.peek().clone());
            actions.push(self.action()?);
        }
        self.expect(Tok::RBrace)?;
        let rule = Rule { name, conditions, actions };
        self.validate(&rule, &name_tok, &cond_spans, &action_spans)?;
        Ok(rule)
    }

    fn raw_term(&mut self, allow_expr: bool) -> Result<RawTerm, ParseError> {
        let t = self.next();
        match t.tok.clone() {
            Tok::Var(v) => Ok(RawTerm::Var(v)),
            Tok::Str(s) => Ok(RawTerm::Text(s)),
            Tok::Number(n) => Ok(RawTerm::Text(n)),
            Tok::Ident(s) => Ok(RawTerm::Text(s)),
            Tok::LParen if allow_expr => self.expr_rest().map(RawTerm::Expr),
            other => Err(self.error_at(&t, format!("expected a term, found {}", other.describe()))),
        }
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        let t = self.next();
        match t.tok.clone() {
            Tok::Var(v) => Ok(Operand::Var(Var::new(&v))),
            Tok::Number(ref n) => {
                n.parse::<f64>().map(Operand::Number).map_err(|_| self.error_at(&t, format!("invalid number '{n}'")))
            }
            other => Err(self.error_at(&t, format!("expected variable or number, found {}", other.describe()))),
        }
    }

    /// After the opening parenthesis: `operand op operand ")"`.
    fn expr_rest(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.operand()?;
        let t = self.next();
        let (op, rhs) = match t.tok.clone() {
            Tok::Arith(op) => (op, self.operand()?),
            // `?a -5` lexes as a negative literal
            Tok::Number(ref n) if n.starts_with('-') => {
                let v: f64 = n[1..].parse().map_err(|_| self.error_at(&t, format!("invalid number '{n}'")))?;
                (ArithOp::Sub, Operand::Number(v))
            }
            other => return Err(self.error_at(&t, format!("expected arithmetic operator, found {}", other.describe()))),
        };
        self.expect(Tok::RParen)?;
        Ok(Expr { lhs, op, rhs })
    }

    fn value_type(&mut self) -> Result<ValueType, ParseError> {
        let (name, t) = self.expect_ident("value type")?;
        ValueType::from_name(&name).ok_or_else(|| self.error_at(&t, format!("unknown value type '{name}'")))
    }

    fn fact_type(&mut self) -> Result<Sym, ParseError> {
        let t = self.next();
        match t.tok.clone() {
            Tok::Ident(s) | Tok::Str(s) => Ok(self.dict.intern(&s)),
            Tok::Var(_) => Err(self.error_at(&t, "fact type must be a constant")),
            other => Err(self.error_at(&t, format!("expected fact type, found {}", other.describe()))),
        }
    }

    fn handle_term(&self, raw: RawTerm, at: &Spanned) -> Result<Term<Sym>, ParseError> {
        match raw {
            RawTerm::Var(v) => Ok(Term::Var(Var::new(&v))),
            RawTerm::Text(text) => Ok(Term::Const(self.dict.intern(&text))),
            RawTerm::Expr(_) => Err(self.error_at(at, "expressions are only allowed in the value slot")),
        }
    }

    fn value_const(&self, text: &str, ty: ValueType, at: &Spanned) -> Result<Value, ParseError> {
        parse_value(text, ty, self.dict).ok_or_else(|| self.error_at(at, format!("cannot parse '{text}' as {ty}")))
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let open = self.expect(Tok::LParen)?;
        let fact_type = self.fact_type()?;
        let id_at = self.peek().clone();
        let id = self.raw_term(false)?;
        let attr_at = self.peek().clone();
        let attr = self.raw_term(false)?;
        let val_at = self.peek().clone();
        let value = self.raw_term(false)?;
        let value_type = self.value_type()?;
        let mut tests = Vec::new();
        if self.peek().tok == Tok::LBracket {
            self.next();
            while self.peek().tok == Tok::LParen {
                tests.push(self.test()?);
            }
            if tests.is_empty() {
                let t = self.peek().clone();
                return Err(self.error_at(&t, "empty test list"));
            }
            self.expect(Tok::RBracket)?;
        }
        self.expect(Tok::RParen)?;
        let value = match value {
            RawTerm::Var(v) => Term::Var(Var::new(&v)),
            RawTerm::Text(text) => Term::Const(self.value_const(&text, value_type, &val_at)?),
            RawTerm::Expr(_) => unreachable!("conditions do not parse expressions"),
        };
        let cond = Condition::new(fact_type, self.handle_term(id, &id_at)?, self.handle_term(attr, &attr_at)?, value, value_type)
            .with_tests(tests);
        let vars = cond.variables();
        for t in &cond.tests {
            if !vars.contains(&t.left) && !vars.contains(&t.right) {
                return Err(self.error_at(
                    &open,
                    format!("test ({} {} {}) references no variable of its condition", t.left, t.op.symbol(), t.right),
                ));
            }
        }
        Ok(cond)
    }

    fn test(&mut self) -> Result<VariableJoinTest, ParseError> {
        self.expect(Tok::LParen)?;
        let a = self.next();
        let left = match a.tok {
            Tok::Var(ref v) => Var::new(v),
            ref other => return Err(self.error_at(&a, format!("expected variable, found {}", other.describe()))),
        };
        let o = self.next();
        let op = match o.tok {
            Tok::Cmp(op) => op,
            ref other => return Err(self.error_at(&o, format!("expected comparison operator, found {}", other.describe()))),
        };
        let b = self.next();
        let right = match b.tok {
            Tok::Var(ref v) => Var::new(v),
            ref other => return Err(self.error_at(&b, format!("expected variable, found {}", other.describe()))),
        };
        self.expect(Tok::RParen)?;
        Ok(VariableJoinTest { left, op, right })
    }

    fn template(&mut self) -> Result<Template, ParseError> {
        self.expect(Tok::LParen)?;
        let fact_type = self.fact_type()?;
        let id_at = self.peek().clone();
        let id = self.raw_term(true)?;
        let attr_at = self.peek().clone();
        let attr = self.raw_term(true)?;
        let val_at = self.peek().clone();
        let value = self.raw_term(true)?;
        let value_type = self.value_type()?;
        self.expect(Tok::RParen)?;
        let handle = |raw: RawTerm, at: &Spanned| -> Result<TemplateTerm<Sym>, ParseError> {
            match self.handle_term(raw, at)? {
                Term::Var(v) => Ok(TemplateTerm::Var(v)),
                Term::Const(s) => Ok(TemplateTerm::Const(s)),
            }
        };
        let id = handle(id, &id_at)?;
        let attr = handle(attr, &attr_at)?;
        let value = match value {
            RawTerm::Var(v) => TemplateTerm::Var(Var::new(&v)),
            RawTerm::Text(text) => TemplateTerm::Const(self.value_const(&text, value_type, &val_at)?),
            RawTerm::Expr(e) => {
                if !value_type.is_numeric() {
                    return Err(self.error_at(&val_at, format!("arithmetic needs a numeric value type, not {value_type}")));
                }
                TemplateTerm::Expr(e)
            }
        };
        Ok(Template { fact_type, id, attr, value, value_type })
    }

    fn action(&mut self) -> Result<Action, ParseError> {
        let (kw, t) = self.expect_ident("action")?;
        match kw.as_str() {
            "add" => Ok(Action::Add(self.template()?)),
            "delete" => Ok(Action::Delete(self.template()?)),
            "replace" => {
                self.expect(Tok::LParen)?;
                let old = self.template()?;
                self.expect(Tok::Comma)?;
                let new = self.template()?;
                self.expect(Tok::RParen)?;
                Ok(Action::Replace(old, new))
            }
            "external" => {
                let l = self.next();
                match l.tok.clone() {
                    Tok::Str(s) => Ok(Action::External(s)),
                    other => Err(self.error_at(&l, format!("expected label string, found {}", other.describe()))),
                }
            }
            other => Err(self.error_at(&t, format!("unknown action '{other}'"))),
        }
    }

    fn validate(
        &self,
        rule: &Rule,
        name_at: &Spanned,
        cond_spans: &[Spanned],
        action_spans: &[Spanned],
    ) -> Result<(), ParseError> {
        let mut types: HashMap<Var, ValueType> = HashMap::new();
        for (c, at) in rule.conditions.iter().zip(cond_spans) {
            for (v, p) in c.var_slots() {
                let ty = c.slot_type(p);
                match types.get(&v) {
                    Some(&prev) if prev != ty => {
                        return Err(self.error_at(at, format!("variable {v} binds both {prev} and {ty}")));
                    }
                    _ => {
                        types.insert(v, ty);
                    }
                }
            }
        }
        for (c, at) in rule.conditions.iter().zip(cond_spans) {
            for t in &c.tests {
                for v in [&t.left, &t.right] {
                    if !types.contains_key(v) {
                        return Err(self.error_at(at, format!("test uses unbound variable {v}")));
                    }
                }
                if types[&t.left] != types[&t.right] {
                    return Err(self.error_at(
                        at,
                        format!("test compares {} ({}) with {} ({})", t.left, types[&t.left], t.right, types[&t.right]),
                    ));
                }
            }
        }
        for (a, at) in rule.actions.iter().zip(action_spans) {
            for t in a.templates() {
                for v in t.variables() {
                    if !types.contains_key(&v) {
                        return Err(self.error_at(at, format!("action uses unbound variable {v}")));
                    }
                }
                for slot in [&t.id, &t.attr] {
                    if let TemplateTerm::Var(v) = slot {
                        if types[v] != ValueType::String {
                            return Err(self.error_at(at, format!("{v} binds {} but id/attr slots need string", types[v])));
                        }
                    }
                }
                match &t.value {
                    TemplateTerm::Var(v) if types[v] != t.value_type => {
                        return Err(
                            self.error_at(at, format!("{v} binds {} but the template declares {}", types[v], t.value_type))
                        );
                    }
                    TemplateTerm::Expr(e) => {
                        for v in e.variables() {
                            if !types[v].is_numeric() {
                                return Err(self.error_at(at, format!("{v} is not numeric")));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        let _ = name_at;
        Ok(())
    }
}

/// Parses a rules file. Variable names are scoped per rule.
pub fn parse_rules(text: &str, dict: &StringDictionary) -> Result<Vec<Rule>, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0, dict }.rules()
}

/// Parses a bare list of conditions, e.g. for ad-hoc queries:
/// `(Person ?p livesIn ?c string) (City ?c name "Vienna" string)`.
pub fn parse_conditions(text: &str, dict: &StringDictionary) -> Result<Vec<Condition>, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, dict };
    let mut conds = Vec::new();
    while p.peek().tok == Tok::LParen {
        conds.push(p.condition()?);
    }
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return Err(p.error_at(&t, format!("expected condition, found {}", t.tok.describe())));
    }
    if conds.is_empty() {
        return Err(ParseError::new(1, 1, "no conditions given"));
    }
    let rule = Rule { name: String::new(), conditions: conds, actions: Vec::new() };
    let spans = vec![t.clone(); rule.conditions.len()];
    p.validate(&rule, &t, &spans, &[])?;
    Ok(rule.conditions)
}

// ---------------------------------------------------------------------------
// rules: printer

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn fmt_handle(t: &Term<Sym>, dict: &StringDictionary) -> Result<String> {
    Ok(match t {
        Term::Var(v) => v.to_string(),
        Term::Const(s) => quote(&dict.resolve(*s)?),
    })
}

fn fmt_value_const(v: &Value, dict: &StringDictionary) -> Result<String> {
    Ok(match v.ty() {
        ValueType::String => quote(&format_value(v, dict)?),
        _ => format_value(v, dict)?,
    })
}

fn fmt_operand(o: &Operand) -> String {
    match o {
        Operand::Var(v) => v.to_string(),
        Operand::Number(n) => n.to_string(),
    }
}

fn fmt_template(t: &Template, dict: &StringDictionary) -> Result<String> {
    let h = |x: &TemplateTerm<Sym>| -> Result<String> {
        Ok(match x {
            TemplateTerm::Var(v) => v.to_string(),
            TemplateTerm::Const(s) => quote(&dict.resolve(*s)?),
            TemplateTerm::Expr(_) => return Err(Error::Config("expression in handle slot".into())),
        })
    };
    let value = match &t.value {
        TemplateTerm::Var(v) => v.to_string(),
        TemplateTerm::Const(c) => fmt_value_const(c, dict)?,
        TemplateTerm::Expr(e) => format!("({} {} {})", fmt_operand(&e.lhs), e.op.symbol(), fmt_operand(&e.rhs)),
    };
    Ok(format!("({} {} {} {} {})", quote(&dict.resolve(t.fact_type)?), h(&t.id)?, h(&t.attr)?, value, t.value_type))
}

pub fn format_condition(c: &Condition, dict: &StringDictionary) -> Result<String> {
    let value = match &c.value {
        Term::Var(v) => v.to_string(),
        Term::Const(v) => fmt_value_const(v, dict)?,
    };
    let mut s = format!(
        "({} {} {} {} {}",
        quote(&dict.resolve(c.fact_type)?),
        fmt_handle(&c.id, dict)?,
        fmt_handle(&c.attr, dict)?,
        value,
        c.value_type
    );
    if !c.tests.is_empty() {
        s.push_str(" [");
        for t in &c.tests {
            s.push_str(&format!("({} {} {})", t.left, t.op.symbol(), t.right));
        }
        s.push(']');
    }
    s.push(')');
    Ok(s)
}

/// Prints a rule in the syntax accepted by [`parse_rules`].
pub fn format_rule(r: &Rule, dict: &StringDictionary) -> Result<String> {
    let mut s = format!("rule {} {{\n  when:\n", quote(&r.name));
    for c in &r.conditions {
        s.push_str("    ");
        s.push_str(&format_condition(c, dict)?);
        s.push('\n');
    }
    s.push_str("  then:\n");
    for a in &r.actions {
        s.push_str("    ");
        match a {
            Action::Add(t) => s.push_str(&format!("add {}", fmt_template(t, dict)?)),
            Action::Delete(t) => s.push_str(&format!("delete {}", fmt_template(t, dict)?)),
            Action::Replace(a, b) => s.push_str(&format!("replace ({}, {})", fmt_template(a, dict)?, fmt_template(b, dict)?)),
            Action::External(l) => s.push_str(&format!("external {}", quote(l))),
        }
        s.push('\n');
    }
    s.push_str("}\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fact::{ActionKind, JoinPosition};

    #[test]
    fn parses_city_fact() {
        let d = StringDictionary::new();
        let f = parse_fact_line("City\tcity1\tname\tNew York\tstring", 1, &d).unwrap();
        assert_eq!(&*d.resolve(f.fact_type).unwrap(), "City");
        assert_eq!(&*d.resolve(f.id).unwrap(), "city1");
        assert_eq!(&*d.resolve(f.attr).unwrap(), "name");
        assert_eq!(f.value.scalar(), Scalar::Str(d.get("New York").unwrap()));
    }

    #[test]
    fn zero_payload() {
        let d = StringDictionary::new();
        let f = parse_fact_line("T\ti\ta\t0\tuint32", 1, &d).unwrap();
        assert_eq!(f.value.scalar(), Scalar::U32(0));
    }

    #[test]
    fn fact_line_errors() {
        let d = StringDictionary::new();
        let e = parse_fact_line("T\ti\ta\t0", 7, &d).unwrap_err();
        assert_eq!(e.line, 7);
        assert!(parse_fact_line("T\ti\ta\t0\tquad", 1, &d).unwrap_err().message.contains("unknown value type"));
        assert!(parse_fact_line("T\ti\ta\t-1\tuint32", 1, &d).unwrap_err().message.contains("cannot parse"));
        assert!(parse_fact_line("T\ti\ta\tyes\tbool", 1, &d).is_err());
    }

    #[test]
    fn facts_file_skips_comments_and_reports_line() {
        let d = StringDictionary::new();
        let text = "# header\n\nA\tb\tc\t1\tint32\nA\tb\tc\tx\tint32\n";
        let e = parse_facts(text, &d).unwrap_err();
        assert_eq!(e.line, 4);
        assert_eq!(parse_facts("# only\n\n", &d).unwrap().len(), 0);
    }

    #[test]
    fn escapes_round_trip() {
        let d = StringDictionary::new();
        let f = Fact::new(d.intern("T"), d.intern("a\tb"), d.intern("x\\y"), Value::string(d.intern("line\nbreak")));
        let line = serialize_fact(&f, &d).unwrap();
        assert_eq!(line.split('\t').count(), 5);
        assert_eq!(parse_fact_line(&line, 1, &d).unwrap(), f);
    }

    const DAILY: &str = r#"
        rule "DailySales" {
          when:
            (DailySales ?s profitEUR ?p double)
            (DailySales ?s EURUSD ?f double)
          then:
            add (DailySales ?s profitUSD (?p * ?f) double)
        }
    "#;

    #[test]
    fn parses_daily_sales_rule() {
        let d = StringDictionary::new();
        let rules = parse_rules(DAILY, &d).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!(r.conditions.len(), 2);
        assert_eq!(r.actions.len(), 1);
        assert_eq!(r.actions[0].kind(), ActionKind::Add);
        let Action::Add(t) = &r.actions[0] else { unreachable!() };
        assert!(matches!(&t.value, TemplateTerm::Expr(e) if e.op == ArithOp::Mul));
        assert!(!r.is_query());
    }

    #[test]
    fn parses_join_test() {
        let d = StringDictionary::new();
        let text = r#"rule "AgeClass" { when:
            (AgeClass ?ac minAge ?acMin uint32)
            (Person ?p age ?pAge uint32 [(?pAge >= ?acMin)])
          then: }"#;
        let r = &parse_rules(text, &d).unwrap()[0];
        let tests = &r.conditions[1].tests;
        assert_eq!(tests.len(), 1);
        assert_eq!(tests[0].op, TestOp::Ge);
        assert_eq!(tests[0].left, Var::new("pAge"));
        assert!(r.is_query());
        assert!(r.actions.is_empty());
    }

    #[test]
    fn rule_errors() {
        let d = StringDictionary::new();
        let unbound = r#"rule "r" { when: (T ?x a ?y string) then: add (T ?x b ?z string) }"#;
        assert!(parse_rules(unbound, &d).unwrap_err().message.contains("unbound variable ?z"));

        let bad_test = r#"rule "r" { when: (T ?x a ?y uint32 [(?q > ?w)]) then: }"#;
        assert!(parse_rules(bad_test, &d).unwrap_err().message.contains("references no variable"));

        let dup = r#"rule "r" { when: (T ?x a ?y string) then: } rule "r" { when: (T ?x a ?y string) then: }"#;
        let e = parse_rules(dup, &d).unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert_eq!(e.line, 1);

        let var_type = r#"rule "r" { when: (?T ?x a ?y string) then: }"#;
        assert!(parse_rules(var_type, &d).unwrap_err().message.contains("fact type"));

        let syntax = "rule \"r\" {\n when: (T ?x a ?y string\n then: }";
        let e = parse_rules(syntax, &d).unwrap_err();
        assert_eq!((e.line, e.column), (3, 2));

        let mixed = r#"rule "r" { when: (T ?x a ?y string) (U ?y b ?z uint32) (U ?q b ?y uint32) then: }"#;
        assert!(parse_rules(mixed, &d).unwrap_err().message.contains("binds both"));
    }

    #[test]
    fn negative_literals_and_subtraction() {
        let d = StringDictionary::new();
        let text = r#"rule "r" { when: (T ?x v ?n int32) (T ?x w -5 int32)
            then: add (T ?x u (?n -5) int32) add (T ?x u2 (?n - -2) int32) }"#;
        let r = &parse_rules(text, &d).unwrap()[0];
        assert_eq!(r.conditions[1].const_at(JoinPosition::Val).unwrap().scalar(), Scalar::I32(-5));
        let Action::Add(t) = &r.actions[0] else { unreachable!() };
        assert_eq!(
            t.value,
            TemplateTerm::Expr(Expr { lhs: Operand::Var(Var::new("n")), op: ArithOp::Sub, rhs: Operand::Number(5.0) })
        );
        let Action::Add(t) = &r.actions[1] else { unreachable!() };
        assert!(matches!(&t.value, TemplateTerm::Expr(e) if e.rhs == Operand::Number(-2.0)));
    }

    #[test]
    fn replace_delete_external_round_trip() {
        let d = StringDictionary::new();
        let text = r#"rule "r" { when: (Counter ?c value ?v uint64) (Step ?c size ?s uint64)
            then:
              delete (Log ?c entry "old entry" string)
              replace ((Counter ?c value ?v uint64), (Counter ?c value (?v + ?s) uint64))
              external "notify"
            }"#;
        let rules = parse_rules(text, &d).unwrap();
        let printed: String = rules.iter().map(|r| format_rule(r, &d).unwrap()).collect();
        assert_eq!(parse_rules(&printed, &d).unwrap(), rules);
        assert_eq!(rules[0].output_types().len(), 2);
    }

    #[test]
    fn inline_conditions() {
        let d = StringDictionary::new();
        let cs = parse_conditions(r#"(Person ?p livesIn ?c string) (City ?c name "Vienna" string)"#, &d).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[1].rank(), 2);
        assert!(parse_conditions("(Person ?p livesIn ?c string) junk", &d).is_err());
    }
}
