//! Column-role schemas and the plain-text `key = value` grammar shared by
//! schema and config files.
//!
//! ```text
//! # comment
//! treatment   = above_median(dHours)
//! gain        = dIncome1
//! cost        = scale(iFertil, -1.0)
//! intensity   = discount
//! assignment  = coupon_genre
//! covariates  = *                # or a comma-separated list
//! categorical = dAncstry1, dAge
//! drop        = caseid
//! filter      = iCitizen == 0     # repeatable; `column op value`
//! ```

use std::fmt;
use std::path::Path;

use crate::{Error, Result};

/// Parses `key = value` lines, skipping blanks and `#` comments. Keys may
/// repeat; order is preserved.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(k) => &raw[..k],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .filter(|(k, _)| !k.trim().is_empty() && !k.contains(['<', '>', '!']))
            .ok_or_else(|| Error::Schema(format!("line {}: expected `key = value`, got `{raw}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// How a role's values are derived from raw columns.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnRule {
    Column(String),
    Scaled(String, f64),
    /// 1 when the value is strictly below the population median.
    BelowMedian(String),
    /// 1 when the value is strictly above the population median.
    AboveMedian(String),
    /// 1 when the value equals the constant.
    Equals(String, f64),
}

impl ColumnRule {
    pub fn source(&self) -> &str {
        match self {
            ColumnRule::Column(c)
            | ColumnRule::Scaled(c, _)
            | ColumnRule::BelowMedian(c)
            | ColumnRule::AboveMedian(c)
            | ColumnRule::Equals(c, _) => c,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let Some(open) = s.find('(') else {
            if s.is_empty() || s.contains([',', ')', ' ']) {
                return Err(Error::Schema(format!("bad column rule `{s}`")));
            }
            return Ok(ColumnRule::Column(s.to_string()));
        };
        let func = &s[..open];
        let args = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| Error::Schema(format!("unclosed rule `{s}`")))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::Schema(format!("rule `{s}`: `{a}` is not a number")))
        };
        match (func, args.as_slice()) {
            ("scale", [c, f]) => Ok(ColumnRule::Scaled(c.to_string(), num(f)?)),
            ("below_median", [c]) => Ok(ColumnRule::BelowMedian(c.to_string())),
            ("above_median", [c]) => Ok(ColumnRule::AboveMedian(c.to_string())),
            ("equals", [c, v]) => Ok(ColumnRule::Equals(c.to_string(), num(v)?)),
            _ => Err(Error::Schema(format!("unknown rule `{s}`"))),
        }
    }
}

impl fmt::Display for ColumnRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRule::Column(c) => write!(f, "{c}"),
            ColumnRule::Scaled(c, k) => write!(f, "scale({c}, {k})"),
            ColumnRule::BelowMedian(c) => write!(f, "below_median({c})"),
            ColumnRule::AboveMedian(c) => write!(f, "above_median({c})"),
            ColumnRule::Equals(c, v) => write!(f, "equals({c}, {v})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Row filter `column op value`; rows failing it are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub column: String,
    pub op: CmpOp,
    pub value: f64,
}

impl Filter {
    pub fn new(column: &str, op: CmpOp, value: f64) -> Self {
        Self {
            column: column.to_string(),
            op,
            value,
        }
    }

    pub fn keeps(&self, v: f64) -> bool {
        match self.op {
            CmpOp::Eq => v == self.value,
            CmpOp::Ne => v != self.value,
            CmpOp::Lt => v < self.value,
            CmpOp::Le => v <= self.value,
            CmpOp::Gt => v > self.value,
            CmpOp::Ge => v >= self.value,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [column, op, value] = parts.as_slice() else {
            return Err(Error::Schema(format!("filter `{s}` is not `column op value`")));
        };
        let op = match *op {
            "==" | "=" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            other => return Err(Error::Schema(format!("unknown filter operator `{other}`"))),
        };
        let value = value
            .parse()
            .map_err(|_| Error::Schema(format!("filter `{s}`: `{value}` is not a number")))?;
        Ok(Filter::new(column, op, value))
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.column, self.op.symbol(), self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSelection {
    /// Every column not consumed by another role or dropped.
    Remaining,
    Listed(Vec<String>),
}

/// Maps raw CSV columns to dataset roles.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    pub treatment: ColumnRule,
    pub gain: ColumnRule,
    pub cost: ColumnRule,
    pub intensity: Option<ColumnRule>,
    pub assignment: Option<String>,
    pub covariates: CovariateSelection,
    pub categorical: Vec<String>,
    pub drop: Vec<String>,
    pub filters: Vec<Filter>,
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl SchemaConfig {
    /// A schema with the three mandatory roles and defaults elsewhere.
    pub fn new(treatment: ColumnRule, gain: ColumnRule, cost: ColumnRule) -> Self {
        Self {
            treatment,
            gain,
            cost,
            intensity: None,
            assignment: None,
            covariates: CovariateSelection::Remaining,
            categorical: Vec::new(),
            drop: Vec::new(),
            filters: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut treatment = None;
        let mut gain = None;
        let mut cost = None;
        let mut schema = SchemaConfig::new(
            ColumnRule::Column(String::new()),
            ColumnRule::Column(String::new()),
            ColumnRule::Column(String::new()),
        );
        let once = |slot: &mut Option<ColumnRule>, key: &str, v: &str| -> Result<()> {
            if slot.is_some() {
                return Err(Error::Schema(format!("role `{key}` assigned more than once")));
            }
            *slot = Some(ColumnRule::parse(v)?);
            Ok(())
        };
        for (k, v) in parse_key_values(text)? {
            match k.as_str() {
                "treatment" => once(&mut treatment, &k, &v)?,
                "gain" => once(&mut gain, &k, &v)?,
                "cost" => once(&mut cost, &k, &v)?,
                "intensity" => schema.intensity = Some(ColumnRule::parse(&v)?),
                "assignment" => schema.assignment = Some(v),
                "covariates" => {
                    schema.covariates = if v == "*" {
                        CovariateSelection::Remaining
                    } else {
                        CovariateSelection::Listed(list(&v))
                    }
                }
                "categorical" => schema.categorical.extend(list(&v)),
                "drop" => schema.drop.extend(list(&v)),
                "filter" => schema.filters.push(Filter::parse(&v)?),
                other => return Err(Error::Schema(format!("unknown schema key `{other}`"))),
            }
        }
        let missing = |r: &str| Error::Schema(format!("schema lacks mandatory role `{r}`"));
        schema.treatment = treatment.ok_or_else(|| missing("treatment"))?;
        schema.gain = gain.ok_or_else(|| missing("gain"))?;
        schema.cost = cost.ok_or_else(|| missing("cost"))?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Columns consumed by a role (and therefore not covariates).
    pub fn role_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.treatment.source(), self.gain.source(), self.cost.source()];
        if let Some(r) = &self.intensity {
            cols.push(r.source());
        }
        if let Some(a) = &self.assignment {
            cols.push(a);
        }
        cols
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "treatment = {}\ngain = {}\ncost = {}\n",
            self.treatment, self.gain, self.cost
        );
        if let Some(r) = &self.intensity {
            s += &format!("intensity = {r}\n");
        }
        if let Some(a) = &self.assignment {
            s += &format!("assignment = {a}\n");
        }
        match &self.covariates {
            CovariateSelection::Remaining => s += "covariates = *\n",
            CovariateSelection::Listed(c) => s += &format!("covariates = {}\n", c.join(", ")),
        }
        if !self.categorical.is_empty() {
            s += &format!("categorical = {}\n", self.categorical.join(", "));
        }
        if !self.drop.is_empty() {
            s += &format!("drop = {}\n", self.drop.join(", "));
        }
        for f in &self.filters {
            s += &format!("filter = {f}\n");
        }
        s
    }
}

/// US Census 1990 extract: subjects with one or more children, born in the
/// U.S. and younger than 50; treated when working more hours than the
/// median; gain is income and cost is the negated child count.
pub fn census_recipe() -> SchemaConfig {
    let mut s = SchemaConfig::new(
        ColumnRule::AboveMedian("dHours".into()),
        ColumnRule::Column("dIncome1".into()),
        ColumnRule::Scaled("iFertil".into(), -1.0),
    );
    s.drop = vec!["caseid".into()];
    s.filters = vec![
        Filter::new("iFertil", CmpOp::Ge, 1.5),
        Filter::new("iCitizen", CmpOp::Eq, 0.0),
        Filter::new("dAge", CmpOp::Lt, 5.0),
    ];
    s
}

/// Forest cover type restricted to Spruce-Fir (1) and Lodgepole Pine (2):
/// treated when close to hydrology, gain when close to fire points, cost
/// when the cover is Lodgepole Pine.
pub fn covtype_recipe() -> SchemaConfig {
    let mut s = SchemaConfig::new(
        ColumnRule::BelowMedian("Horizontal_Distance_To_Hydrology".into()),
        ColumnRule::BelowMedian("Horizontal_Distance_To_Fire_Points".into()),
        ColumnRule::Equals("Cover_Type".into(), 2.0),
    );
    s.drop = vec!["Vertical_Distance_To_Hydrology".into()];
    s.filters = vec![Filter::new("Cover_Type", CmpOp::Le, 2.0)];
    s
}

/// Built-in recipe by name.
pub fn recipe(name: &str) -> Option<SchemaConfig> {
    match name {
        "census" => Some(census_recipe()),
        "covtype" => Some(covtype_recipe()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_grammar() {
        let text = "\
# toy
treatment = T
gain = scale(revenue, 2.5)
cost = equals(kind, 3)
intensity = below_median(dist)   # odd but legal
covariates = a, b ,c
categorical = c
drop = id
filter = a >= 1.5
filter = b != 0
";
        let s = SchemaConfig::parse(text).unwrap();
        assert_eq!(s.treatment, ColumnRule::Column("T".into()));
        assert_eq!(s.gain, ColumnRule::Scaled("revenue".into(), 2.5));
        assert_eq!(s.cost, ColumnRule::Equals("kind".into(), 3.0));
        assert_eq!(s.covariates, CovariateSelection::Listed(vec!["a".into(), "b".into(), "c".into()]));
        assert_eq!(s.filters.len(), 2);
        assert!(s.filters[0].keeps(1.5) && !s.filters[0].keeps(1.4));
        assert_eq!(SchemaConfig::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn mandatory_roles_exactly_once() {
        assert!(SchemaConfig::parse("treatment = T\ngain = g").is_err());
        assert!(SchemaConfig::parse("treatment = T\ngain = g\ncost = c\ncost = d").is_err());
        assert!(SchemaConfig::parse("treatment = T\ngain = g\ncost = c\nbogus = 1").is_err());
        assert!(SchemaConfig::parse("treatment T").is_err());
    }

    #[test]
    fn recipes_round_trip_through_text() {
        for r in [census_recipe(), covtype_recipe()] {
            assert_eq!(SchemaConfig::parse(&r.to_text()).unwrap(), r);
        }
        let census = census_recipe();
        let citizen = census.filters.iter().find(|f| f.column == "iCitizen").unwrap();
        assert!(!citizen.keeps(1.0));
        assert!(recipe("census").is_some() && recipe("nope").is_none());
    }

    #[test]
    fn rule_syntax_errors() {
        assert!(ColumnRule::parse("scale(x)").is_err());
        assert!(ColumnRule::parse("scale(x, y)").is_err());
        assert!(ColumnRule::parse("median(x)").is_err());
        assert!(ColumnRule::parse("above_median(x").is_err());
        assert!(Filter::parse("a ~ 3").is_err());
        assert!(Filter::parse("a >=").is_err());
    }
}
