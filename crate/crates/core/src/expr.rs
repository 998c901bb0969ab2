//! Arithmetic expressions for config files, evaluated nodally.
//!
//! Grammar: `+ - * / ^` (with `^` binding tightest and right-associative, and
//! unary minus binding looser than `^`, so `-x^2 = -(x^2)`), parentheses,
//! numbers, the functions `sin cos exp abs min max`, the constants `pi e inf`
//! and whatever variables the caller binds.

use std::collections::BTreeMap;

use nom::branch::alt;
use nom::character::complete::{alpha1, alphanumeric0, char, multispace0};
use nom::combinator::{all_consuming, map, recognize};
use nom::multi::{many0, separated_list1};
use nom::number::complete::double;
use nom::sequence::{delimited, pair, preceded};
use nom::{IResult, Parser};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

fn ws<'a, O>(p: impl Parser<&'a str, Output = O, Error = nom::error::Error<&'a str>>) -> impl Parser<&'a str, Output = O, Error = nom::error::Error<&'a str>> {
    delimited(multispace0, p, multispace0)
}

fn ident(i: &str) -> IResult<&str, &str> {
    recognize(pair(alpha1, alphanumeric0)).parse(i)
}

fn atom(i: &str) -> IResult<&str, Expr> {
    ws(alt((
        map(double, Expr::Num),
        map(
            pair(ident, delimited(ws(char('(')), separated_list1(ws(char(',')), expr), ws(char(')')))),
            |(f, args)| Expr::Call(f.to_string(), args),
        ),
        map(ident, |v| Expr::Var(v.to_string())),
        delimited(char('('), expr, char(')')),
    )))
    .parse(i)
}

fn power(i: &str) -> IResult<&str, Expr> {
    let (i, base) = atom(i)?;
    match preceded(ws(char('^')), unary).parse(i) {
        Ok((i, exp)) => Ok((i, Expr::Bin('^', Box::new(base), Box::new(exp)))),
        Err(nom::Err::Error(_)) => Ok((i, base)),
        Err(e) => Err(e),
    }
}

fn unary(i: &str) -> IResult<&str, Expr> {
    alt((map(preceded(ws(char('-')), unary), |e| Expr::Neg(Box::new(e))), power)).parse(i)
}

fn fold(first: Expr, rest: Vec<(char, Expr)>) -> Expr {
    rest.into_iter().fold(first, |acc, (op, e)| Expr::Bin(op, Box::new(acc), Box::new(e)))
}

fn term(i: &str) -> IResult<&str, Expr> {
    map(pair(unary, many0(pair(ws(alt((char('*'), char('/')))), unary))), |(f, r)| fold(f, r)).parse(i)
}

fn expr(i: &str) -> IResult<&str, Expr> {
    map(pair(term, many0(pair(ws(alt((char('+'), char('-')))), term))), |(f, r)| fold(f, r)).parse(i)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        all_consuming(expr)
            .parse(src)
            .map(|(_, e)| e)
            .map_err(|e| Error::InvalidParameter(format!("cannot parse expression {src:?}: {e}")))
    }

    /// Fail on unknown names or wrong arities, so evaluation cannot.
    pub fn check(&self, vars: &[&str]) -> Result<()> {
        match self {
            Expr::Num(_) => Ok(()),
            Expr::Var(v) if vars.contains(&v.as_str()) || matches!(v.as_str(), "pi" | "e" | "inf") => Ok(()),
            Expr::Var(v) => Err(Error::InvalidParameter(format!("unknown variable {v:?}"))),
            Expr::Neg(a) => a.check(vars),
            Expr::Bin(_, a, b) => a.check(vars).and(b.check(vars)),
            Expr::Call(f, args) => {
                let ok = match f.as_str() {
                    "sin" | "cos" | "exp" | "abs" => args.len() == 1,
                    "min" | "max" => !args.is_empty(),
                    _ => false,
                };
                if !ok {
                    return Err(Error::InvalidParameter(format!("unknown function {f}/{}", args.len())));
                }
                args.iter().try_for_each(|a| a.check(vars))
            }
        }
    }

    /// Unbound variables evaluate to NaN; call [`Expr::check`] first.
    pub fn eval(&self, vars: &BTreeMap<&str, f64>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => match vars.get(v.as_str()) {
                Some(x) => *x,
                None => match v.as_str() {
                    "pi" => std::f64::consts::PI,
                    "e" => std::f64::consts::E,
                    "inf" => f64::INFINITY,
                    _ => f64::NAN,
                },
            },
            Expr::Neg(a) => -a.eval(vars),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(vars), b.eval(vars));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let v: Vec<f64> = args.iter().map(|a| a.eval(vars)).collect();
                match f.as_str() {
                    "sin" => v[0].sin(),
                    "cos" => v[0].cos(),
                    "exp" => v[0].exp(),
                    "abs" => v[0].abs(),
                    "min" => v.into_iter().fold(f64::INFINITY, f64::min),
                    _ => v.into_iter().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        let e = Expr::parse(s).unwrap();
        e.check(&["x"]).unwrap();
        e.eval(&BTreeMap::from([("x", x)]))
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2*3", 0.0), 7.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1/2*x", 4.0), 2.0);
        assert_eq!(ev("(1 - x) * x", 0.25), 0.1875);
        assert_eq!(ev("x^2 - x", 0.5), -0.25);
        assert_eq!(ev("8 - 2 - 1", 0.0), 5.0);
    }

    #[test]
    fn functions_and_constants() {
        assert!((ev("sin(pi*x)", 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(ev("max(x, 1, -3)", 0.5), 1.0);
        assert_eq!(ev("min(abs(x), 2)", -0.5), 0.5);
        assert!((ev("exp(1) - e", 0.0)).abs() < 1e-15);
        assert_eq!(ev("-inf", 0.0), f64::NEG_INFINITY);
        assert_eq!(ev("1e-3*x", 2.0), 2e-3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("y").unwrap().check(&["x"]).is_err());
        assert!(Expr::parse("tan(x)").unwrap().check(&["x"]).is_err());
    }
}
