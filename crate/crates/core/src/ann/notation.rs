//! The ASCII notation for packed networks.
//!
//! ```text
//! network := '{' '"v"' ':' INT ',' ('"act"' ':' ('"step"'|'"logistic"') ',')?
//!            '"in"' ':' INT ',' '"layers"' ':' '[' layer (',' layer)* ']' '}'
//! layer   := '[' neuron (',' neuron)* ']'
//! neuron  := '{' ('"t"' ':' NUM ',')? '"w"' ':' '[' NUM (',' NUM)* ']' '}'
//! ```
//!
//! Whitespace between tokens is ignored on decode. The canonical encoding
//! always writes `act` and `t`, uses no whitespace and renders numbers with
//! [`format_number`].

use std::fmt::Write as _;

use super::network::{Activation, NetworkSpec, Neuron, Violation, DEFAULT_THRESHOLD};
use super::CodecError;

/// Decodes notation text. A neuron without `"t"` gets a 0.5 threshold and a
/// document without `"act"` uses the step activation.
pub fn decode_network(text: &[u8]) -> Result<NetworkSpec, CodecError> {
    if let Some(offset) = text.iter().position(|b| !b.is_ascii()) {
        return Err(CodecError::MalformedNotation {
            offset,
            expected: "ASCII text",
        });
    }
    let mut p = Parser { src: text, pos: 0 };
    let net = p.network()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.malformed("end of input"));
    }
    if let Some(v) = net.validate().violations.into_iter().next() {
        return Err(match v {
            Violation::ShapeMismatch {
                layer,
                neuron,
                expected,
                found,
            } => CodecError::ShapeMismatch {
                layer,
                neuron: Some(neuron),
                expected,
                found,
            },
            // The grammar already rules out every other violation.
            other => CodecError::InvalidNetwork(super::ValidationReport {
                violations: vec![other],
            }),
        });
    }
    Ok(net)
}

/// Canonical encoding of a valid network.
pub fn encode_network(net: &NetworkSpec) -> Result<String, CodecError> {
    let report = net.validate();
    if !report.is_empty() {
        return Err(CodecError::InvalidNetwork(report));
    }
    let mut out = String::with_capacity(64 + 16 * net.layers.iter().map(Vec::len).sum::<usize>());
    let _ = write!(
        out,
        "{{\"v\":{},\"act\":\"{}\",\"in\":{},\"layers\":[",
        net.version,
        net.activation.as_str(),
        net.input_count
    );
    for (li, layer) in net.layers.iter().enumerate() {
        if li > 0 {
            out.push(',');
        }
        out.push('[');
        for (ni, neuron) in layer.iter().enumerate() {
            if ni > 0 {
                out.push(',');
            }
            out.push_str("{\"t\":");
            push_number(&mut out, neuron.threshold);
            out.push_str(",\"w\":[");
            for (wi, w) in neuron.weights.iter().enumerate() {
                if wi > 0 {
                    out.push(',');
                }
                push_number(&mut out, *w);
            }
            out.push_str("]}");
        }
        out.push(']');
    }
    out.push_str("]}");
    Ok(out)
}

/// Shortest decimal that parses back to the identical `f64`.
///
/// Decimal exponents in `-5..16` are written positionally with at least one
/// fractional digit (`0.1`, `1.0`, `0.00001`); anything else uses a bare
/// exponent (`1e16`, `2.5e-7`). Negative zero keeps its sign.
pub fn format_number(x: f64) -> String {
    let mut s = String::new();
    push_number(&mut s, x);
    s
}

fn push_number(out: &mut String, x: f64) {
    debug_assert!(x.is_finite());
    // `{:e}` yields the shortest round-trip digits, e.g. "-1.25e-3".
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if negative {
        out.push('-');
    }
    if (-5..16).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(&digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
                out.push_str(".0");
            } else {
                out.push_str(&digits[..int_len]);
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        } else {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(&digits);
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let _ = write!(out, "e{exp}");
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

type PResult<T> = Result<T, CodecError>;

impl<'a> Parser<'a> {
    fn malformed(&self, expected: &'static str) -> CodecError {
        CodecError::MalformedNotation {
            offset: self.pos,
            expected,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8, what: &'static str) -> PResult<()> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.malformed(what))
        }
    }

    /// Reads a quoted token. The notation never needs escapes.
    fn string(&mut self, what: &'static str) -> PResult<&'a [u8]> {
        if self.peek() != Some(b'"') {
            return Err(self.malformed(what));
        }
        let start = self.pos + 1;
        match self.src[start..].iter().position(|&b| b == b'"') {
            Some(len) => {
                self.pos = start + len + 1;
                Ok(&self.src[start..start + len])
            }
            None => Err(self.malformed(what)),
        }
    }

    fn key(&mut self, name: &'static [u8], what: &'static str) -> PResult<()> {
        let at = {
            self.skip_ws();
            self.pos
        };
        if self.string(what)? != name {
            self.pos = at;
            return Err(self.malformed(what));
        }
        self.expect(b':', "':'")
    }

    fn positive_int(&mut self, what: &'static str) -> PResult<u64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<u64>() {
            Ok(n) if n > 0 => Ok(n),
            _ => {
                self.pos = start;
                Err(self.malformed(what))
            }
        }
    }

    fn number(&mut self) -> PResult<f64> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let mut i = start;
        if i < s.len() && (s[i] == b'-' || s[i] == b'+') {
            i += 1;
        }
        let int_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        let mut digits = i - int_start;
        if i < s.len() && s[i] == b'.' {
            i += 1;
            let frac_start = i;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
            digits += i - frac_start;
        }
        if digits == 0 {
            return Err(self.malformed("number"));
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'-' || s[j] == b'+') {
                j += 1;
            }
            let exp_start = j;
            while j < s.len() && s[j].is_ascii_digit() {
                j += 1;
            }
            if j == exp_start {
                self.pos = j;
                return Err(self.malformed("exponent digits"));
            }
            i = j;
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii checked");
        let value: f64 = text.parse().map_err(|_| self.malformed("number"))?;
        if !value.is_finite() {
            return Err(CodecError::NonFiniteValue { offset: start });
        }
        self.pos = i;
        Ok(value)
    }

    fn network(&mut self) -> PResult<NetworkSpec> {
        self.expect(b'{', "'{'")?;
        self.key(b"v", "\"v\"")?;
        let version = self.positive_int("positive integer version")?;
        let version = u32::try_from(version).map_err(|_| self.malformed("version within u32"))?;
        self.expect(b',', "','")?;

        self.skip_ws();
        let key_at = self.pos;
        let activation = match self.string("\"act\" or \"in\"")? {
            b"act" => {
                self.expect(b':', "':'")?;
                self.skip_ws();
                let value_at = self.pos;
                let act = match self.string("activation name")? {
                    b"step" => Activation::Step,
                    b"logistic" => Activation::Logistic,
                    _ => {
                        self.pos = value_at;
                        return Err(self.malformed("\"step\" or \"logistic\""));
                    }
                };
                self.expect(b',', "','")?;
                self.key(b"in", "\"in\"")?;
                act
            }
            b"in" => {
                self.expect(b':', "':'")?;
                Activation::Step
            }
            _ => {
                self.pos = key_at;
                return Err(self.malformed("\"act\" or \"in\""));
            }
        };
        let input_count = self.positive_int("positive integer input count")?;
        let input_count = usize::try_from(input_count).map_err(|_| self.malformed("input count within usize"))?;
        self.expect(b',', "','")?;
        self.key(b"layers", "\"layers\"")?;

        self.expect(b'[', "'['")?;
        let mut layers = vec![self.layer()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            layers.push(self.layer()?);
        }
        self.expect(b']', "',' or ']'")?;
        self.expect(b'}', "'}'")?;

        Ok(NetworkSpec {
            version,
            activation,
            input_count,
            layers,
        })
    }

    fn layer(&mut self) -> PResult<Vec<Neuron>> {
        self.expect(b'[', "'['")?;
        let mut neurons = vec![self.neuron()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            neurons.push(self.neuron()?);
        }
        self.expect(b']', "',' or ']'")?;
        Ok(neurons)
    }

    fn neuron(&mut self) -> PResult<Neuron> {
        self.expect(b'{', "'{'")?;
        self.skip_ws();
        let key_at = self.pos;
        let threshold = match self.string("\"t\" or \"w\"")? {
            b"t" => {
                self.expect(b':', "':'")?;
                let t = self.number()?;
                self.expect(b',', "','")?;
                self.key(b"w", "\"w\"")?;
                t
            }
            b"w" => {
                self.expect(b':', "':'")?;
                DEFAULT_THRESHOLD
            }
            _ => {
                self.pos = key_at;
                return Err(self.malformed("\"t\" or \"w\""));
            }
        };
        self.expect(b'[', "'['")?;
        let mut weights = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            weights.push(self.number()?);
        }
        self.expect(b']', "',' or ']'")?;
        self.expect(b'}', "'}'")?;
        Ok(Neuron { threshold, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_decodes() {
        let net = decode_network(br#"{"v":1,"act":"step","in":2,"layers":[[{"t":0.5,"w":[1.0,1.0]}]]}"#).unwrap();
        assert_eq!(net.version, 1);
        assert_eq!(net.activation, Activation::Step);
        assert_eq!(net.input_count, 2);
        assert_eq!(net.layers, vec![vec![Neuron::new(0.5, vec![1.0, 1.0])]]);
    }

    #[test]
    fn missing_threshold_defaults_to_one_half() {
        let net = decode_network(br#"{"v":1,"act":"step","in":2,"layers":[[{"w":[0.4,0.4]}]]}"#).unwrap();
        assert_eq!(net.layers[0][0].threshold, 0.5);
    }

    #[test]
    fn missing_activation_defaults_to_step() {
        let net = decode_network(br#"{"v":3,"in":1,"layers":[[{"w":[1]}]]}"#).unwrap();
        assert_eq!(net.activation, Activation::Step);
        assert_eq!(net.version, 3);
    }

    #[test]
    fn empty_weight_list_is_rejected() {
        let err = decode_network(br#"{"v":1,"layers":[[{"t":0.5,"w":[]}]]}"#).unwrap_err();
        assert!(matches!(err, CodecError::MalformedNotation { .. }), "{err:?}");
        // With "in" present the failure lands on the closing bracket.
        let src = br#"{"v":1,"in":2,"layers":[[{"t":0.5,"w":[]}]]}"#;
        match decode_network(src).unwrap_err() {
            CodecError::MalformedNotation { offset, expected } => {
                assert_eq!(src[offset], b']');
                assert_eq!(expected, "number");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn whitespace_between_tokens_is_ignored() {
        let spaced = b"{ \"v\" : 1 ,\n \"act\":\"logistic\", \"in\" :2,\t\"layers\": [ [ { \"t\" : -1.5e0 , \"w\" : [ 1 , 2 ] } ] ] }\n";
        let net = decode_network(spaced).unwrap();
        assert_eq!(
            encode_network(&net).unwrap(),
            r#"{"v":1,"act":"logistic","in":2,"layers":[[{"t":-1.5,"w":[1.0,2.0]}]]}"#
        );
    }

    #[test]
    fn weight_count_mismatch_is_shape_error() {
        let err = decode_network(br#"{"v":1,"in":2,"layers":[[{"w":[1,1]}],[{"w":[1,1]}]]}"#).unwrap_err();
        assert_eq!(
            err,
            CodecError::ShapeMismatch {
                layer: 1,
                neuron: Some(0),
                expected: 1,
                found: 2
            }
        );
    }

    #[test]
    fn overflowing_literal_is_non_finite() {
        let src = br#"{"v":1,"in":1,"layers":[[{"w":[1e400]}]]}"#;
        let err = decode_network(src).unwrap_err();
        assert_eq!(err, CodecError::NonFiniteValue { offset: 31 });
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let cases: &[(&[u8], usize)] = &[
            (b"", 0),
            (b"[", 0),
            (br#"{"v":0,"in":1,"layers":[[{"w":[1]}]]}"#, 5),
            (br#"{"v":1,"act":"relu","in":1,"layers":[[{"w":[1]}]]}"#, 13),
            (br#"{"v":1,"in":1,"layers":[]}"#, 24),
            (br#"{"v":1,"in":1,"layers":[[{"w":[1]}]]}x"#, 37),
            (br#"{"v":1,"in":1,"layers":[[{"w":[1e]}]]}"#, 33),
            (br#"{"v":1,"in":1,"layers":[[{"w":[nan]}]]}"#, 31),
            ("{\"v\":1,\"in\":1,\"layers\":[[{\"w\":[\u{e9}]}]]}".as_bytes(), 31),
        ];
        for (src, offset) in cases {
            match decode_network(src) {
                Err(CodecError::MalformedNotation { offset: got, .. }) => {
                    assert_eq!(got, *offset, "{}", String::from_utf8_lossy(src))
                }
                other => panic!("{}: {other:?}", String::from_utf8_lossy(src)),
            }
        }
    }

    #[test]
    fn canonical_encoding_of_single_neuron() {
        let net = NetworkSpec {
            version: 1,
            activation: Activation::Step,
            input_count: 2,
            layers: vec![vec![Neuron::new(0.5, vec![1.0, 1.0])]],
        };
        assert_eq!(
            encode_network(&net).unwrap(),
            r#"{"v":1,"act":"step","in":2,"layers":[[{"t":0.5,"w":[1.0,1.0]}]]}"#
        );
    }

    #[test]
    fn encode_rejects_invalid_network() {
        let net = NetworkSpec {
            version: 1,
            activation: Activation::Step,
            input_count: 2,
            layers: vec![vec![Neuron::new(0.5, vec![1.0])]],
        };
        assert!(matches!(encode_network(&net), Err(CodecError::InvalidNetwork(_))));
    }

    #[test]
    fn number_rendering() {
        let cases = [
            (0.1, "0.1"),
            (1.0, "1.0"),
            (0.0, "0.0"),
            (-0.0, "-0.0"),
            (100.0, "100.0"),
            (123.456, "123.456"),
            (-2.5, "-2.5"),
            (1e-5, "0.00001"),
            (1.5e-6, "1.5e-6"),
            (1e15, "1000000000000000.0"),
            (1e16, "1e16"),
            (f64::MAX, "1.7976931348623157e308"),
            (f64::MIN_POSITIVE, "2.2250738585072014e-308"),
            (5e-324, "5e-324"),
        ];
        for (x, want) in cases {
            assert_eq!(format_number(x), want);
            assert_eq!(want.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
