use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default exponent of the `lp` similarity.
pub const DEFAULT_P: f64 = 4.0;
/// Default temperature of the log-sum-exp similarity.
pub const DEFAULT_T: f64 = 0.01;

/// A similarity metric between two feature batches.
///
/// Text form: `l1`, `l2`, `linf`, `lp` / `lp:<p>`, `lse` / `lse:<t>`, `cka`, `dc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricKind {
    L1,
    L2,
    Linf,
    Lp(f64),
    Lse(f64),
    Cka,
    Dc,
}

impl MetricKind {
    /// The six kinds that admit a one-pass linearization.
    pub fn linearizable() -> [MetricKind; 6] {
        [
            MetricKind::L1,
            MetricKind::L2,
            MetricKind::Lp(DEFAULT_P),
            MetricKind::Lse(DEFAULT_T),
            MetricKind::Cka,
            MetricKind::Dc,
        ]
    }

    /// Whether the score is multiplicative in form (`s·[1 + …]`).
    pub fn is_relative(self) -> bool {
        matches!(self, MetricKind::Cka | MetricKind::Dc)
    }

    pub fn needs_multiple_rows(self) -> bool {
        self.is_relative()
    }

    pub fn validate(self) -> Result<()> {
        match self {
            MetricKind::Lp(p) if !(p >= 1.0 && p.is_finite()) => Err(Error::Contract(format!(
                "lp exponent must be >= 1, got {p}"
            ))),
            MetricKind::Lse(t) if !(t > 0.0 && t.is_finite()) => Err(Error::Contract(format!(
                "lse temperature must be > 0, got {t}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::L1 => write!(f, "l1"),
            MetricKind::L2 => write!(f, "l2"),
            MetricKind::Linf => write!(f, "linf"),
            MetricKind::Lp(p) => write!(f, "lp:{p}"),
            MetricKind::Lse(t) => write!(f, "lse:{t}"),
            MetricKind::Cka => write!(f, "cka"),
            MetricKind::Dc => write!(f, "dc"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let num = |a: Option<&str>, default: f64| -> Result<f64> {
            a.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::Contract(format!("bad metric parameter `{a}`")))
            })
        };
        let kind = match name {
            "l1" => MetricKind::L1,
            "l2" => MetricKind::L2,
            "linf" => MetricKind::Linf,
            "lp" => MetricKind::Lp(num(arg, DEFAULT_P)?),
            "lse" => MetricKind::Lse(num(arg, DEFAULT_T)?),
            "cka" => MetricKind::Cka,
            "dc" => MetricKind::Dc,
            _ => return Err(Error::Contract(format!("unknown metric `{s}`"))),
        };
        if arg.is_some() && !matches!(kind, MetricKind::Lp(_) | MetricKind::Lse(_)) {
            return Err(Error::Contract(format!(
                "metric `{name}` takes no parameter"
            )));
        }
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for MetricKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricKind> for String {
    fn from(k: MetricKind) -> String {
        k.to_string()
    }
}
