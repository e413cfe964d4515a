//! Arithmetic expressions over node voltages for behavioral cards.
//!
//! Grammar (left-associative, conventional precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | 'V' '(' node (',' node)? ')' | '(' expr ')' | '-' factor
//! ```
//!
//! The printer is canonical: parentheses are emitted exactly where the tree
//! shape requires them, so printing a parsed expression reproduces the text
//! byte for byte.

use std::collections::BTreeSet;
use std::fmt;

use super::{format_number, valid_node_name};

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    /// `V(a)` - voltage of node `a` against ground.
    NodeVoltage(String),
    /// `V(a,b)` - voltage difference between two nodes.
    VoltageDiff(String, String),
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn number(v: f64) -> Self {
        Expression::Number(v)
    }

    pub fn voltage(node: impl Into<String>) -> Self {
        Expression::NodeVoltage(node.into())
    }

    pub fn voltage_diff(a: impl Into<String>, b: impl Into<String>) -> Self {
        Expression::VoltageDiff(a.into(), b.into())
    }

    pub fn add(self, rhs: Expression) -> Self {
        Expression::Add(Box::new(self), Box::new(rhs))
    }

    pub fn sub(self, rhs: Expression) -> Self {
        Expression::Sub(Box::new(self), Box::new(rhs))
    }

    pub fn mul(self, rhs: Expression) -> Self {
        Expression::Mul(Box::new(self), Box::new(rhs))
    }

    pub fn div(self, rhs: Expression) -> Self {
        Expression::Div(Box::new(self), Box::new(rhs))
    }

    /// Evaluate against a voltage lookup. Ground must resolve to zero in the
    /// lookup itself.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Expression::Number(v) => *v,
            Expression::NodeVoltage(n) => lookup(n),
            Expression::VoltageDiff(a, b) => lookup(a) - lookup(b),
            Expression::Neg(x) => -x.eval(lookup),
            Expression::Add(a, b) => a.eval(lookup) + b.eval(lookup),
            Expression::Sub(a, b) => a.eval(lookup) - b.eval(lookup),
            Expression::Mul(a, b) => a.eval(lookup) * b.eval(lookup),
            Expression::Div(a, b) => a.eval(lookup) / b.eval(lookup),
        }
    }

    /// Collect every node name referenced through `V(...)`.
    pub fn node_refs(&self, out: &mut BTreeSet<String>) {
        match self {
            Expression::Number(_) => {}
            Expression::NodeVoltage(n) => {
                out.insert(n.clone());
            }
            Expression::VoltageDiff(a, b) => {
                out.insert(a.clone());
                out.insert(b.clone());
            }
            Expression::Neg(x) => x.node_refs(out),
            Expression::Add(a, b)
            | Expression::Sub(a, b)
            | Expression::Mul(a, b)
            | Expression::Div(a, b) => {
                a.node_refs(out);
                b.node_refs(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Add(..) | Expression::Sub(..) => 1,
            Expression::Mul(..) | Expression::Div(..) => 2,
            Expression::Neg(..) => 3,
            _ => 4,
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Expression::Number(v) => {
                if *v < 0.0 {
                    out.push('-');
                    out.push_str(&format_number(-*v));
                } else {
                    out.push_str(&format_number(*v));
                }
            }
            Expression::NodeVoltage(n) => {
                out.push_str("V(");
                out.push_str(n);
                out.push(')');
            }
            Expression::VoltageDiff(a, b) => {
                out.push_str("V(");
                out.push_str(a);
                out.push(',');
                out.push_str(b);
                out.push(')');
            }
            Expression::Neg(x) => {
                out.push('-');
                // Any binary child needs parentheses to survive reparsing.
                Self::write_child(x, 3, out);
            }
            Expression::Add(a, b) => {
                Self::write_child(a, 1, out);
                out.push('+');
                Self::write_child_right(b, 1, out);
            }
            Expression::Sub(a, b) => {
                Self::write_child(a, 1, out);
                out.push('-');
                Self::write_child_right(b, 1, out);
            }
            Expression::Mul(a, b) => {
                Self::write_child(a, 2, out);
                out.push('*');
                Self::write_child_right(b, 2, out);
            }
            Expression::Div(a, b) => {
                Self::write_child(a, 2, out);
                out.push('/');
                Self::write_child_right(b, 2, out);
            }
        }
    }

    fn write_child(child: &Expression, parent_prec: u8, out: &mut String) {
        if child.precedence() < parent_prec {
            out.push('(');
            child.write(out);
            out.push(')');
        } else {
            child.write(out);
        }
    }

    /// Right operands additionally need parentheses at equal precedence:
    /// the parser is left-associative, so `a-(b-c)` must keep its parens.
    fn write_child_right(child: &Expression, parent_prec: u8, out: &mut String) {
        if child.precedence() <= parent_prec {
            out.push('(');
            child.write(out);
            out.push(')');
        } else {
            child.write(out);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }

    /// Parse the expression dialect. Errors carry a column-level message;
    /// the netlist parser wraps them with the line number.
    pub fn parse(text: &str) -> Result<Expression, String> {
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(format!(
                "unexpected trailing token {:?} in expression",
                parser.tokens[parser.pos]
            ));
        }
        Ok(expr)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

fn lex(text: &str) -> Result<Vec<Token>, String> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            ',' => {
                tokens.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Exponent part: e or E, optional sign, digits.
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| format!("invalid number literal {lit:?}"))?;
                if !v.is_finite() {
                    return Err(format!("non-finite number literal {lit:?}"));
                }
                tokens.push(Token::Number(v));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push(Token::Ident(text[start..i].to_string()));
            }
            _ => return Err(format!("unexpected character {c:?} in expression")),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(format!("expected {what}, found {t:?}")),
            None => Err(format!("expected {what}, found end of expression")),
        }
    }

    fn expr(&mut self) -> Result<Expression, String> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs.add(rhs);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs.sub(rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expression, String> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = lhs.mul(rhs);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = lhs.div(rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expression, String> {
        match self.next() {
            Some(Token::Number(v)) => Ok(Expression::Number(v)),
            Some(Token::Minus) => Ok(Expression::Neg(Box::new(self.factor()?))),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if !name.eq_ignore_ascii_case("v") {
                    return Err(format!("unknown identifier {name:?} in expression"));
                }
                self.expect(Token::LParen, "'(' after V")?;
                let a = self.node_name()?;
                match self.next() {
                    Some(Token::RParen) => Ok(Expression::NodeVoltage(a)),
                    Some(Token::Comma) => {
                        let b = self.node_name()?;
                        self.expect(Token::RParen, "')' after V(a,b")?;
                        Ok(Expression::VoltageDiff(a, b))
                    }
                    Some(t) => Err(format!("expected ',' or ')' in V(...), found {t:?}")),
                    None => Err("unterminated V(...) reference".into()),
                }
            }
            Some(t) => Err(format!("unexpected token {t:?} in expression")),
            None => Err("empty expression".into()),
        }
    }

    /// Node names inside V(...) may be identifiers or bare integers ("0").
    fn node_name(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Token::Ident(name)) => {
                if valid_node_name(&name) {
                    Ok(name)
                } else {
                    Err(format!("invalid node name {name:?}"))
                }
            }
            Some(Token::Number(v)) => {
                if v == 0.0 {
                    Ok("0".to_string())
                } else if v.fract() == 0.0 && v >= 0.0 {
                    Ok(format!("{}", v as u64))
                } else {
                    Err(format!("invalid node name {v:?}"))
                }
            }
            Some(t) => Err(format!("expected node name, found {t:?}")),
            None => Err("expected node name, found end of expression".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_precedence() {
        let e = Expression::parse("1+2*3").unwrap();
        assert_eq!(e.eval(&|_| 0.0), 7.0);
        let e = Expression::parse("(1+2)*3").unwrap();
        assert_eq!(e.eval(&|_| 0.0), 9.0);
        let e = Expression::parse("8/2/2").unwrap();
        assert_eq!(e.eval(&|_| 0.0), 2.0);
        let e = Expression::parse("1-2-3").unwrap();
        assert_eq!(e.eval(&|_| 0.0), -4.0);
        let e = Expression::parse("-2*3").unwrap();
        assert_eq!(e.eval(&|_| 0.0), -6.0);
    }

    #[test]
    fn parses_voltage_refs() {
        let e = Expression::parse("V(E000001,E000002)*V(a)/2e0").unwrap();
        let lookup = |n: &str| match n {
            "E000001" => 5.0,
            "E000002" => 3.0,
            "a" => 4.0,
            _ => 0.0,
        };
        assert_eq!(e.eval(&lookup), 4.0);
        let mut refs = BTreeSet::new();
        e.node_refs(&mut refs);
        assert_eq!(refs.len(), 3);
    }

    #[test]
    fn print_parse_is_byte_stable() {
        let cases = [
            "1.00000000e0+2.00000000e0*3.00000000e0",
            "(1.00000000e0+2.00000000e0)*3.00000000e0",
            "1.00000000e0/(1.00000000e0+4.00000000e-3*(5.00000000e-1*(V(T000001)+V(T000002))))",
            "V(E000001,E000002)*V(E000001,E000002)/3.33333333e2*5.00000000e-1",
            "-(V(a)+1.00000000e0)",
            "1.00000000e0-(2.00000000e0-3.00000000e0)",
            "--1.50000000e0",
        ];
        for text in cases {
            let parsed = Expression::parse(text).unwrap();
            let printed = parsed.to_text();
            assert_eq!(printed, text, "canonical print mismatch");
            let reparsed = Expression::parse(&printed).unwrap();
            assert_eq!(reparsed, parsed, "reparse changed the tree");
        }
    }

    #[test]
    fn canonical_print_preserves_tree() {
        // Right-associative trees must keep their parentheses.
        let e = Expression::number(1.0).sub(Expression::number(2.0).sub(Expression::number(3.0)));
        assert_eq!(e.to_text(), "1.00000000e0-(2.00000000e0-3.00000000e0)");
        assert_eq!(Expression::parse(&e.to_text()).unwrap(), e);
        let e = Expression::number(8.0).div(Expression::number(4.0).div(Expression::number(2.0)));
        assert_eq!(Expression::parse(&e.to_text()).unwrap(), e);
        assert_eq!(e.eval(&|_| 0.0), 4.0);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Expression::parse("").is_err());
        assert!(Expression::parse("1+").is_err());
        assert!(Expression::parse("V(").is_err());
        assert!(Expression::parse("V(a,b,c)").is_err());
        assert!(Expression::parse("foo(1)").is_err());
        assert!(Expression::parse("1..2").is_err());
        assert!(Expression::parse("(1").is_err());
    }
}
