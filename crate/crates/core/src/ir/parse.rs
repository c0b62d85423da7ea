use thiserror::Error;

use super::kinds::infer_kinds;
use super::validate::rawptr_required;
use super::{
    ArithOp, Attrs, FieldRef, Function, Instruction, Label, Op, Operand, Param, Program, Signature,
    ValueKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },
    #[error("line {line}: malformed attribute: {message}")]
    Attribute { line: usize, message: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnknownOpcode { line, .. }
            | ParseError::Attribute { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Value(String),
    Func(String),
    Ident(String),
    Int(i64),
    Attr(String),
    Sym(char),
    Arrow,
    Newline,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, message: message.into() }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw_line.find(';') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        let chars: Vec<char> = content.chars().collect();
        let mut p = 0;
        let take_while = |p: &mut usize, pred: &dyn Fn(char) -> bool| {
            let start = *p;
            while *p < chars.len() && pred(chars[*p]) {
                *p += 1;
            }
            chars[start..*p].iter().collect::<String>()
        };
        while p < chars.len() {
            let c = chars[p];
            if c.is_whitespace() {
                p += 1;
                continue;
            }
            let tok = match c {
                '%' => {
                    p += 1;
                    let name = take_while(&mut p, &|c| is_ident_char(c) || c == '.');
                    if name.is_empty() {
                        return Err(syntax(line, "empty value name after `%`"));
                    }
                    Tok::Value(name)
                }
                '@' => {
                    p += 1;
                    let name = take_while(&mut p, &is_ident_char);
                    if name.is_empty() {
                        return Err(syntax(line, "empty function name after `@`"));
                    }
                    Tok::Func(name)
                }
                '!' => {
                    p += 1;
                    let name = take_while(&mut p, &is_ident_char);
                    if name.is_empty() {
                        return Err(ParseError::Attribute { line, message: "empty attribute".into() });
                    }
                    Tok::Attr(name)
                }
                '-' if chars.get(p + 1) == Some(&'>') => {
                    p += 2;
                    Tok::Arrow
                }
                '-' | '0'..='9' => {
                    let start = p;
                    p += 1;
                    take_while(&mut p, &|c| c.is_ascii_digit());
                    let s: String = chars[start..p].iter().collect();
                    let n = s.parse::<i64>().map_err(|_| syntax(line, format!("bad integer `{s}`")))?;
                    Tok::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == '_' => Tok::Ident(take_while(&mut p, &is_ident_char)),
                '=' | ',' | '(' | ')' | ':' | '{' | '}' => {
                    p += 1;
                    Tok::Sym(c)
                }
                other => return Err(syntax(line, format!("unexpected character `{other}`"))),
            };
            if p < chars.len() && is_ident_char(chars[p]) && matches!(tok, Tok::Int(_)) {
                return Err(syntax(line, "malformed integer literal"));
            }
            out.push(Token { tok, line });
        }
        out.push(Token { tok: Tok::Newline, line });
    }
    Ok(out)
}

/// Parse `.lrs` source. Kinds are resolved and the `!rawptr` attribute is
/// checked against them; every other semantic rule is left to the validator.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let mut program = Program::default();
    let mut lines: Vec<Vec<usize>> = Vec::new();
    loop {
        parser.skip_newlines();
        if parser.at_eof() {
            break;
        }
        let (f, l) = parser.function()?;
        program.functions.push(f);
        lines.push(l);
    }
    program.refresh_address_taken();
    for (f, l) in program.functions.iter().zip(&lines) {
        let kinds = infer_kinds(&program, f);
        for (instr, &line) in f.body.iter().zip(l) {
            if let Some(required) = rawptr_required(instr, &kinds, &program) {
                if required != instr.attrs.rawptr {
                    let message = if required {
                        "`!rawptr` missing on an instruction touching a raw pointer"
                    } else {
                        "`!rawptr` on an instruction with no raw pointer"
                    };
                    return Err(ParseError::Attribute { line, message: message.into() });
                }
            }
        }
    }
    Ok(program)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn at_eof(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |t| t.line)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn skip_newlines(&mut self) {
        while self.peek() == Some(&Tok::Newline) {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            other => Err(syntax(line, format!("expected `{c}`, found {}", describe(other.as_ref())))),
        }
    }

    fn kind(&mut self) -> Result<ValueKind, ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Ident(k)) => {
                ValueKind::from_keyword(&k).ok_or_else(|| syntax(line, format!("unknown kind `{k}`")))
            }
            other => Err(syntax(line, format!("expected a kind, found {}", describe(other.as_ref())))),
        }
    }

    fn function(&mut self) -> Result<(Function, Vec<usize>), ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Ident(k)) if k == "fn" => {}
            other => return Err(syntax(line, format!("expected `fn`, found {}", describe(other.as_ref())))),
        }
        let name = match self.next() {
            Some(Tok::Ident(n)) => n,
            other => return Err(syntax(line, format!("expected function name, found {}", describe(other.as_ref())))),
        };
        let mut f = Function::new(&name);
        self.expect_sym('(')?;
        if self.peek() == Some(&Tok::Sym(')')) {
            self.pos += 1;
        } else {
            loop {
                let pline = self.line();
                let pname = match self.next() {
                    Some(Tok::Value(v)) => v,
                    other => {
                        return Err(syntax(pline, format!("expected parameter, found {}", describe(other.as_ref()))))
                    }
                };
                self.expect_sym(':')?;
                let kind = self.kind()?;
                f.params.push(Param { name: pname, kind });
                match self.next() {
                    Some(Tok::Sym(',')) => continue,
                    Some(Tok::Sym(')')) => break,
                    other => {
                        return Err(syntax(pline, format!("expected `,` or `)`, found {}", describe(other.as_ref()))))
                    }
                }
            }
        }
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            f.ret = Some(self.kind()?);
        }
        if let Some(Tok::Ident(k)) = self.peek() {
            if k == "entry" {
                f.entry = true;
                self.pos += 1;
            }
        }
        self.expect_sym('{')?;
        let mut lines = Vec::new();
        loop {
            self.skip_newlines();
            let line = self.line();
            match self.peek() {
                None => return Err(syntax(line, format!("unterminated body of `{name}`"))),
                Some(Tok::Sym('}')) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Ident(l))
                    if matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Sym(':'))) =>
                {
                    f.labels.push(Label { name: l.clone(), index: f.body.len() });
                    self.pos += 2;
                    match self.peek() {
                        Some(Tok::Newline) | Some(Tok::Sym('}')) | None => {}
                        _ => return Err(syntax(line, "a label must stand on its own line")),
                    }
                }
                _ => {
                    let start = self.pos;
                    while !matches!(self.peek(), None | Some(Tok::Newline) | Some(Tok::Sym('}'))) {
                        self.pos += 1;
                    }
                    let instr = instruction(&self.toks[start..self.pos], line)?;
                    f.body.push(instr);
                    lines.push(line);
                }
            }
        }
        match self.peek() {
            None | Some(Tok::Newline) => {}
            Some(_) => return Err(syntax(self.line(), "trailing tokens after `}`")),
        }
        Ok((f, lines))
    }
}

fn describe(t: Option<&Tok>) -> String {
    match t {
        None => "end of input".into(),
        Some(Tok::Value(v)) => format!("`%{v}`"),
        Some(Tok::Func(v)) => format!("`@{v}`"),
        Some(Tok::Ident(v)) => format!("`{v}`"),
        Some(Tok::Int(n)) => format!("`{n}`"),
        Some(Tok::Attr(a)) => format!("`!{a}`"),
        Some(Tok::Sym(c)) => format!("`{c}`"),
        Some(Tok::Arrow) => "`->`".into(),
        Some(Tok::Newline) => "end of line".into(),
    }
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    fn err(&self, what: &str) -> ParseError {
        let found = describe(self.toks.get(self.pos.saturating_sub(1)).map(|t| &t.tok));
        syntax(self.line, format!("expected {what}, found {found}"))
    }

    fn sym(&mut self, c: char) -> Result<(), ParseError> {
        match self.next() {
            Some(Tok::Sym(s)) if *s == c => Ok(()),
            _ => Err(self.err(&format!("`{c}`"))),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn value(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Tok::Value(v)) => Ok(v.clone()),
            _ => Err(self.err("a `%value`")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Tok::Ident(v)) => Ok(v.clone()),
            _ => Err(self.err("an identifier")),
        }
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.next() {
            Some(Tok::Value(v)) => Ok(Operand::Value(v.clone())),
            Some(Tok::Func(v)) => Ok(Operand::Func(v.clone())),
            Some(Tok::Int(n)) => Ok(Operand::Int(*n)),
            _ => Err(self.err("an operand")),
        }
    }

    fn field(&mut self) -> Result<FieldRef, ParseError> {
        let v = self.value()?;
        match v.rfind('.') {
            Some(p) if p > 0 && p + 1 < v.len() => {
                Ok(FieldRef { object: v[..p].to_string(), field: v[p + 1..].to_string() })
            }
            _ => Err(syntax(self.line, format!("expected `%object.field`, found `%{v}`"))),
        }
    }

    fn kind(&mut self) -> Result<ValueKind, ParseError> {
        let k = self.ident()?;
        ValueKind::from_keyword(&k).ok_or_else(|| syntax(self.line, format!("unknown kind `{k}`")))
    }

    fn args(&mut self) -> Result<Vec<Operand>, ParseError> {
        self.sym('(')?;
        let mut out = Vec::new();
        if self.eat_sym(')') {
            return Ok(out);
        }
        loop {
            out.push(self.operand()?);
            if self.eat_sym(')') {
                return Ok(out);
            }
            self.sym(',')?;
        }
    }

    fn signature(&mut self) -> Result<Signature, ParseError> {
        match self.ident()? {
            s if s == "sig" => {}
            _ => return Err(self.err("`sig`")),
        }
        self.sym('(')?;
        let mut sig = Signature { params: Vec::new(), ret: None };
        loop {
            match self.peek() {
                Some(Tok::Sym(')')) => {
                    self.pos += 1;
                    return Ok(sig);
                }
                Some(Tok::Arrow) => {
                    self.pos += 1;
                    sig.ret = Some(self.kind()?);
                    self.sym(')')?;
                    return Ok(sig);
                }
                _ => {
                    sig.params.push(self.kind()?);
                    if matches!(self.peek(), Some(Tok::Sym(','))) {
                        self.pos += 1;
                    }
                }
            }
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(syntax(self.line, format!("unexpected {}", describe(Some(&t.tok))))),
        }
    }
}

fn instruction(toks: &[Token], line: usize) -> Result<Instruction, ParseError> {
    let mut end = toks.len();
    let mut attrs = Attrs::default();
    while end > 0 {
        let Tok::Attr(a) = &toks[end - 1].tok else { break };
        let slot = match a.as_str() {
            "unsafe" => &mut attrs.unsafe_code,
            "rawptr" => &mut attrs.rawptr,
            other => return Err(ParseError::Attribute { line, message: format!("unknown attribute `!{other}`") }),
        };
        if *slot {
            return Err(ParseError::Attribute { line, message: format!("duplicate attribute `!{a}`") });
        }
        *slot = true;
        end -= 1;
    }
    let mut c = Cursor { toks: &toks[..end], pos: 0, line };
    let mut result = None;
    if let (Some(Tok::Value(v)), Some(Tok::Sym('='))) = (c.toks.first().map(|t| &t.tok), c.toks.get(1).map(|t| &t.tok))
    {
        result = Some(v.clone());
        c.pos = 2;
    }
    let opcode = c.ident()?;
    let op = match opcode.as_str() {
        "heap_alloc" => Op::HeapAlloc { count: c.operand()? },
        "heap_alloc_uninit" => Op::HeapAllocUninit { count: c.operand()? },
        "raw_alloc" => Op::RawAlloc { count: c.operand()? },
        "vec_new" => {
            let capacity = c.operand()?;
            c.sym(',')?;
            Op::VecNew { capacity, len: c.operand()? }
        }
        "vec_push" => Op::VecPush { vec: c.value()? },
        "vec_pop" => Op::VecPop { vec: c.value()? },
        "api_set_len" => {
            let vec = c.value()?;
            c.sym(',')?;
            Op::SetLen { vec, len: c.operand()? }
        }
        "api_unchecked" => {
            let lhs = c.operand()?;
            c.sym(',')?;
            let name = c.ident()?;
            let op = ArithOp::from_keyword(&name)
                .ok_or_else(|| syntax(line, format!("unknown unchecked operation `{name}`")))?;
            let rhs = if c.eat_sym(',') { Some(c.operand()?) } else { None };
            Op::Unchecked { lhs, op, rhs }
        }
        "as_raw" => {
            let src = c.value()?;
            let count = match c.peek() {
                Some(Tok::Ident(k)) if k == "count" => {
                    c.pos += 1;
                    Some(c.operand()?)
                }
                _ => None,
            };
            Op::AsRaw { src, count }
        }
        "box_from_raw" => Op::BoxFromRaw { src: c.value()? },
        "gep" => {
            let ptr = c.value()?;
            c.sym(',')?;
            Op::Gep { ptr, delta: c.operand()? }
        }
        "copy" => Op::Copy { src: c.operand()? },
        "store_field" => {
            let target = c.field()?;
            c.sym(',')?;
            Op::StoreField { target, value: c.operand()? }
        }
        "load_field" => {
            let source = c.field()?;
            c.sym(':')?;
            Op::LoadField { source, kind: c.kind()? }
        }
        "move" => Op::Move { src: c.value()? },
        "drop" => Op::Drop { owner: c.value()? },
        "forget" => Op::Forget { owner: c.value()? },
        "end_scope" => Op::EndScope { owner: c.value()? },
        "deref_read" => Op::DerefRead { ptr: c.value()? },
        "deref_write" => {
            let ptr = c.value()?;
            c.sym(',')?;
            Op::DerefWrite { ptr, value: c.operand()? }
        }
        "null" => Op::Null,
        "call" => {
            let callee = c.ident()?;
            Op::Call { callee, args: c.args()? }
        }
        "icall" => {
            let target = c.value()?;
            let args = c.args()?;
            Op::ICall { target, args, sig: c.signature()? }
        }
        "ret" => Op::Ret { value: if c.peek().is_some() { Some(c.operand()?) } else { None } },
        "br" => Op::Br { label: c.ident()? },
        "cbr" => {
            let cond = c.operand()?;
            c.sym(',')?;
            let then_label = c.ident()?;
            c.sym(',')?;
            Op::Cbr { cond, then_label, else_label: c.ident()? }
        }
        _ => return Err(ParseError::UnknownOpcode { line, opcode }),
    };
    c.end()?;
    Ok(Instruction { result, op, attrs })
}
