//! Declarative layer stacks and their canonical text form.
//!
//! One layer per line. Groups nest with braces, members separated by `; `:
//!
//! ```text
//! conv[64,3,1,1]
//! res{conv[64,3,1,1]; bn; lrelu[0.2]; conv[64,3,1,1]; bn}*8
//! rep{conv[64,4,2,1]; bn; lrelu[0.2]}*2
//! ```
//!
//! `res{..}*n` is n residual blocks `x + body(x)`; `rep{..}*n` repeats the
//! body n times without a skip.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// filters, kernel, stride, pad
    Conv { filters: usize, kernel: usize, stride: usize, pad: usize },
    Deconv { filters: usize, kernel: usize, stride: usize, pad: usize },
    BatchNorm,
    LeakyRelu(f64),
    Fc(usize),
    PixelShuffle(usize),
    /// Modulated by externally supplied style parameters.
    AdaIn,
    GlobalAttention,
    /// Local relational attention with the given odd window side.
    LocalAttention(usize),
    GlobalPool,
    Residual { body: Vec<LayerSpec>, count: usize },
    Repeat { body: Vec<LayerSpec>, count: usize },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { layers }
    }

    /// Number of AdaIN sites after expanding groups.
    pub fn adain_sites(&self) -> usize {
        fn count(layers: &[LayerSpec]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    LayerSpec::AdaIn => 1,
                    LayerSpec::Residual { body, count: n } | LayerSpec::Repeat { body, count: n } => n * count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.layers)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = |f: &mut fmt::Formatter<'_>, tag: &str, body: &[LayerSpec], n: usize| {
            write!(f, "{tag}{{")?;
            for (i, l) in body.iter().enumerate() {
                if i > 0 {
                    write!(f, "; ")?;
                }
                write!(f, "{l}")?;
            }
            write!(f, "}}*{n}")
        };
        match self {
            LayerSpec::Conv { filters, kernel, stride, pad } => write!(f, "conv[{filters},{kernel},{stride},{pad}]"),
            LayerSpec::Deconv { filters, kernel, stride, pad } => write!(f, "deconv[{filters},{kernel},{stride},{pad}]"),
            LayerSpec::BatchNorm => write!(f, "bn"),
            LayerSpec::LeakyRelu(s) => write!(f, "lrelu[{s}]"),
            LayerSpec::Fc(m) => write!(f, "fc[{m}]"),
            LayerSpec::PixelShuffle(r) => write!(f, "pixel_shuffle[{r}]"),
            LayerSpec::AdaIn => write!(f, "adain"),
            LayerSpec::GlobalAttention => write!(f, "ga"),
            LayerSpec::LocalAttention(w) => write!(f, "la[{w}]"),
            LayerSpec::GlobalPool => write!(f, "gpool"),
            LayerSpec::Residual { body, count } => group(f, "res", body, *count),
            LayerSpec::Repeat { body, count } => group(f, "rep", body, *count),
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, what: &str) -> Error {
        Error::Config(format!("layer spec: {what} at byte {} of {:?}", self.pos, self.src))
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(&format!("expected {tok:?}")))
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.err("expected layer name"));
        }
        let id = &self.rest()[..len];
        self.pos += len;
        Ok(id)
    }

    fn number<T: FromStr>(&mut self) -> Result<T> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+')))
            .unwrap_or(self.rest().len());
        let tok = &self.rest()[..len];
        let v = tok.parse().map_err(|_| self.err(&format!("bad number {tok:?}")))?;
        self.pos += len;
        Ok(v)
    }

    fn args<const K: usize>(&mut self) -> Result<[usize; K]> {
        self.expect("[")?;
        let mut out = [0usize; K];
        for (i, slot) in out.iter_mut().enumerate() {
            if i > 0 {
                self.expect(",")?;
            }
            *slot = self.number()?;
        }
        self.expect("]")?;
        Ok(out)
    }

    fn positive(&self, v: usize, what: &str) -> Result<usize> {
        if v == 0 {
            Err(self.err(&format!("{what} must be positive")))
        } else {
            Ok(v)
        }
    }

    fn layer(&mut self) -> Result<LayerSpec> {
        let name = self.ident()?;
        Ok(match name {
            "conv" | "deconv" => {
                let [filters, kernel, stride, pad] = self.args::<4>()?;
                let filters = self.positive(filters, "filters")?;
                let kernel = self.positive(kernel, "kernel")?;
                let stride = self.positive(stride, "stride")?;
                if name == "conv" {
                    LayerSpec::Conv { filters, kernel, stride, pad }
                } else {
                    LayerSpec::Deconv { filters, kernel, stride, pad }
                }
            }
            "bn" => LayerSpec::BatchNorm,
            "lrelu" => {
                self.expect("[")?;
                let s: f64 = self.number()?;
                self.expect("]")?;
                if !(s > 0.0 && s < 1.0) {
                    return Err(self.err("leaky slope must lie in (0, 1)"));
                }
                LayerSpec::LeakyRelu(s)
            }
            "fc" => {
                let [m] = self.args::<1>()?;
                LayerSpec::Fc(self.positive(m, "fc width")?)
            }
            "pixel_shuffle" => {
                let [r] = self.args::<1>()?;
                LayerSpec::PixelShuffle(self.positive(r, "factor")?)
            }
            "adain" => LayerSpec::AdaIn,
            "ga" => LayerSpec::GlobalAttention,
            "la" => {
                let w = self.args::<1>()?[0];
                if w < 3 || w % 2 == 0 {
                    return Err(self.err("attention window must be odd and >= 3"));
                }
                LayerSpec::LocalAttention(w)
            }
            "gpool" => LayerSpec::GlobalPool,
            "res" | "rep" => {
                self.expect("{")?;
                let mut body = vec![self.layer()?];
                while self.eat(";") {
                    body.push(self.layer()?);
                }
                self.expect("}")?;
                self.expect("*")?;
                let count = self.number()?;
                let count = self.positive(count, "repeat count")?;
                if name == "res" {
                    LayerSpec::Residual { body, count }
                } else {
                    LayerSpec::Repeat { body, count }
                }
            }
            other => return Err(self.err(&format!("unknown layer {other:?}"))),
        })
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { src: s, pos: 0 };
        let l = p.layer()?;
        p.skip_ws();
        if !p.rest().is_empty() {
            return Err(p.err("trailing input"));
        }
        Ok(l)
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkSpec { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_table_notation() {
        let s: NetworkSpec = "conv[64,3,1,1]\nres{conv[64,3,1,1]; bn; lrelu[0.2]; conv[64,3,1,1]; bn}*8\n"
            .parse()
            .unwrap();
        assert_eq!(s.layers.len(), 2);
        match &s.layers[1] {
            LayerSpec::Residual { body, count } => {
                assert_eq!(*count, 8);
                assert_eq!(body.len(), 5);
                assert_eq!(body[2], LayerSpec::LeakyRelu(0.2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["conv[1,2,3]", "lrelu[1.5]", "la[4]", "res{bn}", "rep{}*2", "warp", "conv[0,3,1,1]"] {
            assert!(bad.parse::<LayerSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn counts_adain_sites() {
        let s: NetworkSpec = "rep{res{bn}*2; adain}*4\nadain".parse().unwrap();
        assert_eq!(s.adain_sites(), 5);
    }

    fn leaf() -> impl Strategy<Value = LayerSpec> {
        prop_oneof![
            (1usize..300, 1usize..8, 1usize..4, 0usize..4)
                .prop_map(|(filters, kernel, stride, pad)| LayerSpec::Conv { filters, kernel, stride, pad }),
            (1usize..300, 1usize..8, 1usize..4, 0usize..4)
                .prop_map(|(filters, kernel, stride, pad)| LayerSpec::Deconv { filters, kernel, stride, pad }),
            Just(LayerSpec::BatchNorm),
            (1e-6f64..0.999).prop_map(LayerSpec::LeakyRelu),
            (1usize..2048).prop_map(LayerSpec::Fc),
            (1usize..5).prop_map(LayerSpec::PixelShuffle),
            Just(LayerSpec::AdaIn),
            Just(LayerSpec::GlobalAttention),
            (1usize..6).prop_map(|h| LayerSpec::LocalAttention(2 * h + 1)),
            Just(LayerSpec::GlobalPool),
        ]
    }

    fn layer() -> impl Strategy<Value = LayerSpec> {
        leaf().prop_recursive(3, 24, 4, |inner| {
            (proptest::collection::vec(inner, 1..4), 1usize..9, any::<bool>()).prop_map(|(body, count, res)| {
                if res {
                    LayerSpec::Residual { body, count }
                } else {
                    LayerSpec::Repeat { body, count }
                }
            })
        })
    }

    proptest! {
        #[test]
        fn text_round_trip_is_identity(layers in proptest::collection::vec(layer(), 0..6)) {
            let spec = NetworkSpec::new(layers);
            let text = spec.to_string();
            let back: NetworkSpec = text.parse().unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
