//! t-norm fuzzy semantics for the propositional connectives.
//!
//! Every connective maps `[0,1]` (or `[0,1]^2`) into `[0,1]`. Subgradients follow
//! fixed conventions at the kinks: ties in `min`/`max` send the whole gradient to
//! the left argument, and a clamp that is active at a tie counts as active.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs within this distance of `[0,1]` are clamped instead of rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TNorm {
    #[default]
    Product,
    Minimum,
    Lukasiewicz,
}

impl TNorm {
    pub const ALL: [TNorm; 3] = [TNorm::Product, TNorm::Minimum, TNorm::Lukasiewicz];

    #[inline]
    pub fn and(self, a: f64, b: f64) -> f64 {
        match self {
            TNorm::Product => a * b,
            TNorm::Minimum => a.min(b),
            TNorm::Lukasiewicz => (a + b - 1.0).max(0.0),
        }
    }

    #[inline]
    pub fn or(self, a: f64, b: f64) -> f64 {
        match self {
            TNorm::Product => a + b - a * b,
            TNorm::Minimum => a.max(b),
            TNorm::Lukasiewicz => (a + b).min(1.0),
        }
    }

    #[inline]
    pub fn not(self, a: f64) -> f64 {
        1.0 - a
    }

    /// Residual implication. For `Product` this is `min(1, b/a)` with the
    /// `a <= b` branch taken first, so `a = 0` yields 1 without dividing.
    #[inline]
    pub fn implies(self, a: f64, b: f64) -> f64 {
        match self {
            TNorm::Product => {
                if a <= b {
                    1.0
                } else {
                    b / a
                }
            }
            TNorm::Minimum => {
                if a <= b {
                    1.0
                } else {
                    b
                }
            }
            TNorm::Lukasiewicz => (1.0 - a + b).min(1.0),
        }
    }

    /// Partials of `and(a, b)`.
    #[inline]
    pub fn and_grad(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            TNorm::Product => (b, a),
            TNorm::Minimum => {
                if a <= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            // max(0, s): the constant 0 is the left argument and wins ties
            TNorm::Lukasiewicz => {
                if a + b - 1.0 > 0.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    #[inline]
    pub fn or_grad(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            TNorm::Product => (1.0 - b, 1.0 - a),
            TNorm::Minimum => {
                if a >= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            TNorm::Lukasiewicz => {
                if a + b < 1.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    #[inline]
    pub fn implies_grad(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            TNorm::Product => {
                if a <= b {
                    (0.0, 0.0)
                } else {
                    (-b / (a * a), 1.0 / a)
                }
            }
            TNorm::Minimum => {
                if a <= b {
                    (0.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            TNorm::Lukasiewicz => {
                if b < a {
                    (-1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

impl fmt::Display for TNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TNorm::Product => "product",
            TNorm::Minimum => "minimum",
            TNorm::Lukasiewicz => "lukasiewicz",
        })
    }
}

impl FromStr for TNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "product" => Ok(TNorm::Product),
            "minimum" | "min" | "godel" => Ok(TNorm::Minimum),
            "lukasiewicz" => Ok(TNorm::Lukasiewicz),
            other => Err(Error::Config(format!("unknown t-norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connective {
    Not,
    And,
    Or,
    Implies,
}

impl Connective {
    pub const ALL: [Connective; 4] = [
        Connective::Not,
        Connective::And,
        Connective::Or,
        Connective::Implies,
    ];

    pub fn is_unary(self) -> bool {
        matches!(self, Connective::Not)
    }
}

/// A truth degree in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct FuzzyValue(f64);

impl FuzzyValue {
    pub const TRUE: FuzzyValue = FuzzyValue(1.0);
    pub const FALSE: FuzzyValue = FuzzyValue(0.0);

    /// Accepts values in `[0,1]`, clamping anything within [`DOMAIN_TOLERANCE`].
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= -DOMAIN_TOLERANCE && value <= 1.0 + DOMAIN_TOLERANCE) {
            return Err(Error::Domain { value });
        }
        Ok(FuzzyValue(value.clamp(0.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<FuzzyValue> for f64 {
    fn from(v: FuzzyValue) -> f64 {
        v.0
    }
}

fn binary_operand(op: Connective, b: Option<FuzzyValue>) -> Result<f64> {
    b.map(FuzzyValue::value)
        .ok_or_else(|| Error::Config(format!("{op:?} needs two operands")))
}

/// Evaluates one connective. `b` must be `None` exactly when `op` is `Not`.
pub fn apply_connective(
    op: Connective,
    a: FuzzyValue,
    b: Option<FuzzyValue>,
    t: TNorm,
) -> Result<FuzzyValue> {
    let a = a.value();
    let out = match op {
        Connective::Not => {
            if b.is_some() {
                return Err(Error::Config("Not takes a single operand".into()));
            }
            t.not(a)
        }
        Connective::And => t.and(a, binary_operand(op, b)?),
        Connective::Or => t.or(a, binary_operand(op, b)?),
        Connective::Implies => t.implies(a, binary_operand(op, b)?),
    };
    FuzzyValue::new(out)
}

/// Partial derivatives `(d out/d a, d out/d b)`; the second entry is 0 for `Not`.
pub fn connective_subgradient(op: Connective, a: f64, b: Option<f64>, t: TNorm) -> (f64, f64) {
    let b = b.unwrap_or(0.0);
    match op {
        Connective::Not => (-1.0, 0.0),
        Connective::And => t.and_grad(a, b),
        Connective::Or => t.or_grad(a, b),
        Connective::Implies => t.implies_grad(a, b),
    }
}
