//! Plain-text checkpoint container.
//!
//! ```text
//! scpm-checkpoint 1
//! kind drm
//! meta <key> <value>
//! model <name> <head> <n_widths> <w0> <w1> ... <n_params>
//! <param>            (one per line, shortest round-trip exponent form)
//! end
//! ```
//!
//! Floats are written with `{:e}`, which is the shortest representation
//! that parses back to the same bits, so save → load → save is identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

use super::mlp::{Head, MlpModel};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "scpm-checkpoint";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub models: Vec<(String, MlpModel)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn with_model(mut self, name: impl Into<String>, model: MlpModel) -> Self {
        self.models.push((name.into(), model));
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn model(&self, name: &str) -> Option<&MlpModel> {
        self.models.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(s, "kind {}", self.kind).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for (name, m) in &self.models {
            write!(s, "model {name} {} {}", m.head().as_str(), m.widths().len()).unwrap();
            for w in m.widths() {
                write!(s, " {w}").unwrap();
            }
            writeln!(s, " {}", m.params().len()).unwrap();
            for p in m.params() {
                writeln!(s, "{p:e}").unwrap();
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
        };
        let (_, header) = next("header")?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(bad("missing checkpoint header".into()));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing format version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let (_, kind_line) = next("kind")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| bad("missing kind line".into()))?
            .to_string();
        let mut ck = Checkpoint::new(kind);
        loop {
            let (lineno, line) = next("model, meta or end")?;
            if line == "end" {
                break;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(format!("line {}: meta without key", lineno + 1)))?;
                    let value = line
                        .splitn(3, ' ')
                        .nth(2)
                        .unwrap_or("")
                        .to_string();
                    ck.meta.push((key.to_string(), value));
                }
                Some("model") => {
                    let fields: Vec<&str> = parts.collect();
                    let err = || bad(format!("line {}: malformed model header", lineno + 1));
                    if fields.len() < 3 {
                        return Err(err());
                    }
                    let name = fields[0].to_string();
                    let head = Head::parse(fields[1]).ok_or_else(err)?;
                    let nw: usize = fields[2].parse().map_err(|_| err())?;
                    if fields.len() != 3 + nw + 1 {
                        return Err(err());
                    }
                    let widths: Vec<usize> = fields[3..3 + nw]
                        .iter()
                        .map(|w| w.parse().map_err(|_| err()))
                        .collect::<Result<_>>()?;
                    let np: usize = fields[3 + nw].parse().map_err(|_| err())?;
                    let mut params = Vec::with_capacity(np);
                    for _ in 0..np {
                        let (ln, v) = next("parameter")?;
                        params.push(
                            v.trim()
                                .parse::<f64>()
                                .map_err(|_| bad(format!("line {}: bad parameter `{v}`", ln + 1)))?,
                        );
                    }
                    let model = MlpModel::from_params(widths, head, params)
                        .map_err(|e| bad(format!("model {name}: {e}")))?;
                    ck.models.push((name, model));
                }
                _ => return Err(bad(format!("line {}: unexpected `{line}`", lineno + 1))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint::new("scpm")
            .with_meta("intensity_mean", 0.25)
            .with_meta("note", "two words")
            .with_model("prior", MlpModel::init(vec![3, 4, 1], Head::Sigmoid, 1).unwrap())
            .with_model("assignment", MlpModel::init(vec![5, 2, 3], Head::ClassLogits, 2).unwrap())
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ck = sample();
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.meta("note"), Some("two words"));
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let text = sample().to_text();
        let wrong = text.replacen("scpm-checkpoint 1", "scpm-checkpoint 9", 1);
        assert!(Checkpoint::parse(&wrong, Path::new("x")).is_err());
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::parse(cut, Path::new("x")), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_parameters_round_trip(params in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 9)) {
            let m = MlpModel::from_params(vec![2, 2, 1], Head::Linear, params).unwrap();
            let ck = Checkpoint::new("drm").with_model("scorer", m);
            let text = ck.to_text();
            let back = Checkpoint::parse(&text, Path::new("p")).unwrap();
            prop_assert_eq!(back.to_text(), text);
            prop_assert_eq!(back, ck);
        }
    }
}
