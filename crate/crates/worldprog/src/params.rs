//! The `PARAMS = {...}` parameter block of a world program: listing its
//! named constants and patching them by textual substitution.
//!
//! Only plain literals are understood (dicts, lists, tuples, strings,
//! numbers, booleans, `None`); comments and trailing commas are fine.
//! Nested dict keys are addressed as dotted paths (`ball.radius`), list
//! elements by index (`waypoints.2`).

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::{Error, Result};

pub const PARAMS_NAME: &str = "PARAMS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Dict(Vec<(String, Literal)>),
    List { items: Vec<Literal>, tuple: bool },
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
}

/// A parsed literal with its byte span in the source.
#[derive(Debug, Clone, PartialEq)]
struct Literal {
    node: Node,
    start: usize,
    end: usize,
}

impl Literal {
    fn to_json(&self) -> Value {
        match &self.node {
            Node::Dict(entries) => Value::Object(entries.iter().map(|(k, v)| (k.clone(), v.to_json())).collect::<Map<_, _>>()),
            Node::List { items, .. } => Value::Array(items.iter().map(Literal::to_json).collect()),
            Node::Str(s) => Value::String(s.clone()),
            Node::Int(i) => Value::Number((*i).into()),
            Node::Float(f) => Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null),
            Node::Bool(b) => Value::Bool(*b),
            Node::None => Value::Null,
        }
    }

    fn leaves(&self, prefix: &str, out: &mut Vec<Parameter>) {
        match &self.node {
            Node::Dict(entries) if !entries.is_empty() => {
                for (k, v) in entries {
                    let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    v.leaves(&name, out);
                }
            }
            _ => out.push(Parameter { name: prefix.to_string(), value: self.to_json() }),
        }
    }

    /// Resolves a dotted path; keys may themselves contain dots.
    fn resolve(&self, segments: &[&str]) -> Option<&Literal> {
        if segments.is_empty() {
            return Some(self);
        }
        match &self.node {
            Node::Dict(entries) => (1..=segments.len()).rev().find_map(|i| {
                let key = segments[..i].join(".");
                let (_, child) = entries.iter().find(|(k, _)| *k == key)?;
                child.resolve(&segments[i..])
            }),
            Node::List { items, .. } => {
                let idx: usize = segments[0].parse().ok()?;
                items.get(idx)?.resolve(&segments[1..])
            }
            _ => None,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        let line = self.src[..self.pos.min(self.src.len())].matches('\n').count() + 1;
        Error::Params(format!("{msg} at line {line}"))
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => self.pos += c.len_utf8(),
                Some('\\') if self.src[self.pos + 1..].starts_with('\n') => self.pos += 2,
                Some('#') => {
                    let rest = &self.src[self.pos..];
                    self.pos += rest.find('\n').unwrap_or(rest.len());
                }
                _ => return,
            }
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_trivia();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {c:?}")))
        }
    }

    fn value(&mut self) -> Result<Literal> {
        self.skip_trivia();
        let start = self.pos;
        let node = match self.peek() {
            Some('{') => self.dict()?,
            Some('[') => self.seq(']', false)?,
            Some('(') => self.seq(')', true)?,
            Some(c) if c == '"' || c == '\'' => Node::Str(self.string()?),
            Some(c) if (c == 'r' || c == 'R') && self.src[self.pos + 1..].starts_with(['"', '\'']) => {
                self.pos += 1;
                Node::Str(self.raw_string()?)
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number()?,
            Some(c) if c.is_alphabetic() || c == '_' => {
                let word: String = self.src[self.pos..].chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
                let node = match word.as_str() {
                    "True" => Node::Bool(true),
                    "False" => Node::Bool(false),
                    "None" => Node::None,
                    _ => return Err(self.err(format!("PARAMS values must be plain literals, found `{word}`"))),
                };
                self.pos += word.len();
                node
            }
            Some(c) => return Err(self.err(format!("unexpected {c:?}"))),
            None => return Err(self.err("unexpected end of source")),
        };
        Ok(Literal { node, start, end: self.pos })
    }

    fn dict(&mut self) -> Result<Node> {
        self.expect('{')?;
        let mut entries: Vec<(String, Literal)> = Vec::new();
        loop {
            self.skip_trivia();
            if self.peek() == Some('}') {
                self.pos += 1;
                return Ok(Node::Dict(entries));
            }
            let key = match self.value()?.node {
                Node::Str(s) => s,
                Node::Int(i) => i.to_string(),
                _ => return Err(self.err("PARAMS keys must be strings")),
            };
            self.expect(':')?;
            let v = self.value()?;
            match entries.iter_mut().find(|(k, _)| *k == key) {
                Some(slot) => slot.1 = v,
                None => entries.push((key, v)),
            }
            self.skip_trivia();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn seq(&mut self, close: char, tuple: bool) -> Result<Node> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_trivia();
            if self.peek() == Some(close) {
                self.pos += 1;
                return Ok(Node::List { items, tuple });
            }
            items.push(self.value()?);
            self.skip_trivia();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(c) if c == close => {}
                _ => return Err(self.err(format!("expected ',' or {close:?}"))),
            }
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = self.peek().expect("caller checked quote");
        let triple: String = std::iter::repeat(quote).take(3).collect();
        let is_triple = self.src[self.pos..].starts_with(&triple);
        self.pos += if is_triple { 3 } else { 1 };
        let mut out = String::new();
        loop {
            let rest = &self.src[self.pos..];
            if is_triple && rest.starts_with(&triple) {
                self.pos += 3;
                return Ok(out);
            }
            let Some(c) = rest.chars().next() else {
                return Err(self.err("unterminated string"));
            };
            self.pos += c.len_utf8();
            match c {
                _ if c == quote && !is_triple => return Ok(out),
                '\n' if !is_triple => return Err(self.err("unterminated string")),
                '\\' => {
                    let Some(e) = self.peek() else {
                        return Err(self.err("unterminated string"));
                    };
                    self.pos += e.len_utf8();
                    match e {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        '0' => out.push('\0'),
                        '\\' | '\'' | '"' => out.push(e),
                        '\n' => {}
                        'u' | 'x' => {
                            let n = if e == 'u' { 4 } else { 2 };
                            let hex = self.src.get(self.pos..self.pos + n).ok_or_else(|| self.err("bad escape"))?;
                            let cp = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad escape"))?;
                            out.push(char::from_u32(cp).ok_or_else(|| self.err("bad escape"))?);
                            self.pos += n;
                        }
                        other => {
                            out.push('\\');
                            out.push(other);
                        }
                    }
                }
                _ => out.push(c),
            }
        }
    }

    fn raw_string(&mut self) -> Result<String> {
        let quote = self.peek().expect("caller checked quote");
        self.pos += 1;
        let rest = &self.src[self.pos..];
        let end = rest.find([quote, '\n']).filter(|i| rest[*i..].starts_with(quote)).ok_or_else(|| self.err("unterminated string"))?;
        self.pos += end + 1;
        Ok(rest[..end].to_string())
    }

    fn number(&mut self) -> Result<Node> {
        let rest = &self.src[self.pos..];
        let len = rest
            .char_indices()
            .take_while(|(i, c)| {
                c.is_ascii_digit()
                    || *c == '.'
                    || *c == '_'
                    || *c == 'e'
                    || *c == 'E'
                    || ((*c == '-' || *c == '+') && (*i == 0 || rest[..*i].ends_with(['e', 'E'])))
            })
            .count();
        let text: String = rest[..len].chars().filter(|c| *c != '_').collect();
        let node = if text.contains(['.', 'e', 'E']) {
            Node::Float(text.parse().map_err(|_| self.err(format!("bad number {text:?}")))?)
        } else {
            Node::Int(text.parse().map_err(|_| self.err(format!("bad number {text:?}")))?)
        };
        self.pos += len;
        Ok(node)
    }
}

/// Byte offset of the `{` opening the parameter block.
fn block_start(source: &str) -> Option<usize> {
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix(PARAMS_NAME) {
            let rest_t = rest.trim_start();
            if let Some(after_eq) = rest_t.strip_prefix('=').filter(|r| !r.starts_with('=')) {
                let brace = after_eq.trim_start();
                if brace.starts_with('{') {
                    return Some(offset + line.len() - brace.len());
                }
            }
        }
        offset += line.len();
    }
    None
}

fn parse_block(source: &str) -> Result<Literal> {
    let start = block_start(source)
        .ok_or_else(|| Error::Params(format!("program has no `{PARAMS_NAME} = {{...}}` block")))?;
    Parser { src: source, pos: start }.value()
}

/// Leaf parameters in declaration order.
pub fn list_parameters(source: &str) -> Result<Vec<Parameter>> {
    let mut out = Vec::new();
    parse_block(source)?.leaves("", &mut out);
    Ok(out)
}

/// Replaces the literal at `path` with `value`, leaving every other byte intact.
pub fn apply_patch(source: &str, path: &str, value: &Value) -> Result<String> {
    let root = parse_block(source)?;
    let segments: Vec<&str> = path.split('.').collect();
    let target = match root.resolve(&segments) {
        Some(t) if !path.is_empty() => t,
        _ => {
            let mut leaves = Vec::new();
            root.leaves("", &mut leaves);
            return Err(Error::PatchPath { path: path.to_string(), available: leaves.into_iter().map(|p| p.name).collect() });
        }
    };
    let tuple = matches!(target.node, Node::List { tuple: true, .. });
    let mut out = String::with_capacity(source.len());
    out.push_str(&source[..target.start]);
    out.push_str(&to_python_literal(value, tuple));
    out.push_str(&source[target.end..]);
    Ok(out)
}

pub fn apply_patches(source: &str, patches: &[(String, Value)]) -> Result<String> {
    patches.iter().try_fold(source.to_string(), |src, (path, value)| apply_patch(&src, path, value))
}

/// Parses a `path=value` CLI argument. The value is JSON when it parses as
/// such, otherwise a bare string.
pub fn parse_patch_arg(arg: &str) -> Result<(String, Value)> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Params(format!("patch {arg:?} is not of the form path=value")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Params(format!("patch {arg:?} has an empty path")));
    }
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Python source for a JSON value; arrays become tuples when `tuple` is set.
pub fn to_python_literal(value: &Value, tuple: bool) -> String {
    match value {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => i.to_string(),
            (_, Some(u), _) => u.to_string(),
            (_, _, Some(f)) => format!("{f:?}"),
            _ => n.to_string(),
        },
        Value::String(s) => serde_json::to_string(s).expect("strings serialize"),
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(|v| to_python_literal(v, false)).collect();
            match (tuple, inner.len()) {
                (true, 1) => format!("({},)", inner[0]),
                (true, _) => format!("({})", inner.join(", ")),
                (false, _) => format!("[{}]", inner.join(", ")),
            }
        }
        Value::Object(map) => {
            let inner: Vec<String> = map
                .iter()
                .map(|(k, v)| format!("{}: {}", serde_json::to_string(k).expect("strings serialize"), to_python_literal(v, false)))
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}
