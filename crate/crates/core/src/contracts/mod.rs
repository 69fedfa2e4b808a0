//! Scheduling-service contracts.
//!
//! A contract is written `TYPE` or `TYPE[params]`:
//!
//! | text            | meaning                                          |
//! |-----------------|--------------------------------------------------|
//! | `RESBH[x,y]`    | hard reservation: exactly `x` ticks every `y`    |
//! | `RESBS[x,y]`    | soft reservation: at least `x` ticks every `y`   |
//! | `PS[s]`         | proportional share of `s` ppm of one CPU         |
//! | `BE`            | best effort                                      |
//! | `NULL`          | no service                                       |
//! | `ALL`           | the whole CPU (hierarchy root only)              |
//!
//! All arithmetic is exact; utilizations are [`Rational`]s.

mod rational;

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rational::Rational;

/// Parts-per-million denominator for proportional shares.
pub const PPM: u32 = 1_000_000;

/// Largest admissible reservation period, in ticks.
pub const MAX_PERIOD: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceClass {
    #[serde(rename = "RESBH")]
    HardReservation,
    #[serde(rename = "RESBS")]
    SoftReservation,
    #[serde(rename = "PS")]
    Share,
    #[serde(rename = "BE")]
    BestEffort,
    #[serde(rename = "NULL")]
    Null,
    #[serde(rename = "ALL")]
    All,
}

impl ServiceClass {
    pub const ALL_CLASSES: [ServiceClass; 6] = [
        ServiceClass::HardReservation,
        ServiceClass::SoftReservation,
        ServiceClass::Share,
        ServiceClass::BestEffort,
        ServiceClass::Null,
        ServiceClass::All,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ServiceClass::HardReservation => "RESBH",
            ServiceClass::SoftReservation => "RESBS",
            ServiceClass::Share => "PS",
            ServiceClass::BestEffort => "BE",
            ServiceClass::Null => "NULL",
            ServiceClass::All => "ALL",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ServiceClass> {
        Self::ALL_CLASSES.into_iter().find(|c| c.tag() == tag)
    }

    /// Number of bracketed parameters the class takes.
    pub fn arity(self) -> usize {
        match self {
            ServiceClass::HardReservation | ServiceClass::SoftReservation => 2,
            ServiceClass::Share => 1,
            _ => 0,
        }
    }

    pub fn is_reservation(self) -> bool {
        matches!(
            self,
            ServiceClass::HardReservation | ServiceClass::SoftReservation
        )
    }
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("empty contract")]
    Empty,
    #[error("unknown service class `{token}` at position {pos}")]
    UnknownClass { token: String, pos: usize },
    #[error("expected {expected} at position {pos}, found `{found}`")]
    Unexpected {
        expected: &'static str,
        found: String,
        pos: usize,
    },
    #[error("`{class}` takes {expected} parameter(s) but {found} given at position {pos}")]
    Arity {
        class: ServiceClass,
        expected: usize,
        found: usize,
        pos: usize,
    },
    #[error("invalid parameter `{token}` at position {pos}: {reason}")]
    InvalidParameter {
        token: String,
        pos: usize,
        reason: &'static str,
    },
    #[error("trailing input `{token}` at position {pos}")]
    Trailing { token: String, pos: usize },
    #[error("invalid contract: {0}")]
    Invalid(&'static str),
}

impl ContractError {
    /// Byte offset in the parsed text where the error was detected.
    pub fn position(&self) -> Option<usize> {
        match *self {
            ContractError::Empty => Some(0),
            ContractError::UnknownClass { pos, .. }
            | ContractError::Unexpected { pos, .. }
            | ContractError::Arity { pos, .. }
            | ContractError::InvalidParameter { pos, .. }
            | ContractError::Trailing { pos, .. } => Some(pos),
            ContractError::Invalid(_) => None,
        }
    }
}

/// A scheduling-service guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Contract {
    Hard { budget: u64, period: u64 },
    Soft { budget: u64, period: u64 },
    Share { ppm: u32 },
    BestEffort,
    Null,
    All,
}

impl Contract {
    pub fn hard(budget: u64, period: u64) -> Result<Contract, ContractError> {
        check_reservation(budget, period)?;
        Ok(Contract::Hard { budget, period })
    }

    pub fn soft(budget: u64, period: u64) -> Result<Contract, ContractError> {
        check_reservation(budget, period)?;
        Ok(Contract::Soft { budget, period })
    }

    pub fn share(ppm: u32) -> Result<Contract, ContractError> {
        check_share(ppm)?;
        Ok(Contract::Share { ppm })
    }

    pub fn class(&self) -> ServiceClass {
        match self {
            Contract::Hard { .. } => ServiceClass::HardReservation,
            Contract::Soft { .. } => ServiceClass::SoftReservation,
            Contract::Share { .. } => ServiceClass::Share,
            Contract::BestEffort => ServiceClass::BestEffort,
            Contract::Null => ServiceClass::Null,
            Contract::All => ServiceClass::All,
        }
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        match *self {
            Contract::Hard { budget, period } | Contract::Soft { budget, period } => {
                check_reservation(budget, period)
            }
            Contract::Share { ppm } => check_share(ppm),
            _ => Ok(()),
        }
    }

    /// `(budget, period)` for reservations.
    pub fn reservation(&self) -> Option<(u64, u64)> {
        match *self {
            Contract::Hard { budget, period } | Contract::Soft { budget, period } => {
                Some((budget, period))
            }
            _ => None,
        }
    }

    pub fn is_reservation(&self) -> bool {
        self.reservation().is_some()
    }

    /// Whether the contract consumes capacity at its provider
    /// (reservations and proportional shares).
    pub fn claims_capacity(&self) -> bool {
        matches!(
            self,
            Contract::Hard { .. } | Contract::Soft { .. } | Contract::Share { .. }
        )
    }

    /// Longest supply gap allowance `period - budget`; zero for non-reservations.
    pub fn slack(&self) -> u64 {
        self.reservation().map_or(0, |(b, p)| p - b)
    }

    /// Guaranteed fraction of one CPU.
    pub fn utilization(&self) -> Rational {
        match *self {
            Contract::Hard { budget, period } | Contract::Soft { budget, period } => {
                Rational::new(budget, period)
            }
            Contract::Share { ppm } => Rational::new(ppm as u64, PPM as u64),
            Contract::BestEffort | Contract::Null => Rational::zero(),
            Contract::All => Rational::one(),
        }
    }

    /// Linear lower bound on the service delivered in any backlogged window of
    /// `t` ticks: `max(0, u * (t - 2 * (period - budget)))` for reservations.
    pub fn lsbf(&self, t: u64) -> Rational {
        match self {
            Contract::Hard { .. } | Contract::Soft { .. } => {
                let blackout = 2 * self.slack();
                if t <= blackout {
                    Rational::zero()
                } else {
                    &self.utilization() * &Rational::from_integer(t - blackout)
                }
            }
            Contract::Share { .. } | Contract::All => {
                &self.utilization() * &Rational::from_integer(t)
            }
            Contract::BestEffort | Contract::Null => Rational::zero(),
        }
    }

    /// Whether `self`, as a provided service, can stand in for `requested`.
    pub fn satisfies(&self, requested: &Contract) -> bool {
        use Contract::*;
        match (*self, *requested) {
            (_, Null) => true,
            (provided, BestEffort) => provided != Null,
            (All, _) => true,
            (_, All) => false,
            (Share { ppm }, Share { ppm: wanted }) => ppm >= wanted,
            (Hard { .. } | Soft { .. }, Share { .. }) => {
                self.utilization() >= requested.utilization()
            }
            (Hard { .. } | Soft { .. }, Soft { .. }) | (Hard { .. }, Hard { .. }) => {
                self.dominates(requested)
            }
            _ => false,
        }
    }

    fn dominates(&self, other: &Contract) -> bool {
        self.utilization() >= other.utilization()
            && self.slack() <= other.slack()
            && supply_dominates(
                self.reservation().expect("reservation"),
                other.reservation().expect("reservation"),
            )
    }
}

/// Whether the worst-case supply of reservation `p` is at least that of `r`
/// at every window length, given `u_p >= u_r` and `slack_p <= slack_r`.
///
/// The linear bound alone is not enough: `[5,8]` against `[6,10]` passes it
/// but guarantees 5 ticks against 6 in a 14-tick window. It is enough to
/// compare at the ends of `r`'s supply chunks: the `m`-th ends at
/// `2*s_r + m*b_r + (m-1)*s_r`, and `p` needs `2*s_p + m*b_r +
/// (ceil(m*b_r/b_p) - 1)*s_p` to deliver as much. The difference grows by
/// `s_r*b_p - s_p*b_r >= 0` per chunk up to a bounded remainder term, so
/// only a finite prefix of `m` has to be checked. Past
/// `EXACT_DOMINANCE_STEPS` candidates the check falls back to the first-chunk
/// bound with the largest possible remainder, which is sufficient but not
/// necessary.
fn supply_dominates((bp, pp): (u64, u64), (br, pr): (u64, u64)) -> bool {
    let (sp, sr) = ((pp - bp) as u128, (pr - br) as u128);
    if sp == 0 {
        return true;
    }
    let (a, b) = (br as u128, bp as u128);
    let g = a.gcd(&b);
    let slope = sr * b - sp * a;
    let base = (sr - sp) * b;
    let worst = sp * (b - g);
    let cycle = b / g;
    let limit = if slope == 0 {
        cycle
    } else {
        cycle.min(worst.saturating_sub(base).div_ceil(slope))
    };
    if limit > EXACT_DOMINANCE_STEPS {
        return slope + base >= worst;
    }
    (1..=limit).all(|m| (m + 1) * sr >= sp * (1 + (m * a).div_ceil(b)))
}

const EXACT_DOMINANCE_STEPS: u128 = 1 << 16;

fn check_reservation(budget: u64, period: u64) -> Result<(), ContractError> {
    if period == 0 {
        return Err(ContractError::Invalid("period must be positive"));
    }
    if period > MAX_PERIOD {
        return Err(ContractError::Invalid("period exceeds 2^31 ticks"));
    }
    if budget == 0 {
        return Err(ContractError::Invalid("budget must be positive"));
    }
    if budget > period {
        return Err(ContractError::Invalid("budget exceeds period"));
    }
    Ok(())
}

fn check_share(ppm: u32) -> Result<(), ContractError> {
    if ppm == 0 {
        return Err(ContractError::Invalid("share must be positive"));
    }
    if ppm > PPM {
        return Err(ContractError::Invalid("share exceeds 1000000 ppm"));
    }
    Ok(())
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contract::Hard { budget, period } | Contract::Soft { budget, period } => {
                write!(f, "{}[{},{}]", self.class(), budget, period)
            }
            Contract::Share { ppm } => write!(f, "PS[{ppm}]"),
            _ => f.write_str(self.class().tag()),
        }
    }
}

impl FromStr for Contract {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_contract(s)
    }
}

impl Serialize for Contract {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Contract {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_contract(&text).map_err(serde::de::Error::custom)
    }
}

/// Canonical text form; inverse of [`parse_contract`].
pub fn format_contract(c: &Contract) -> String {
    c.to_string()
}

struct Param<'a> {
    value: u64,
    token: &'a str,
    pos: usize,
}

/// Parses `TYPE`, `TYPE[n]` or `TYPE[n,m]`. Spaces are allowed around
/// parameters inside the brackets, nowhere else.
pub fn parse_contract(text: &str) -> Result<Contract, ContractError> {
    if text.is_empty() {
        return Err(ContractError::Empty);
    }
    let bytes = text.as_bytes();
    let tag_end = bytes
        .iter()
        .position(|b| !b.is_ascii_alphabetic())
        .unwrap_or(bytes.len());
    if tag_end == 0 {
        return Err(ContractError::Unexpected {
            expected: "service class",
            found: found_at(text, 0),
            pos: 0,
        });
    }
    let tag = &text[..tag_end];
    let class = ServiceClass::from_tag(tag).ok_or_else(|| ContractError::UnknownClass {
        token: tag.to_string(),
        pos: 0,
    })?;

    let mut params = Vec::new();
    let mut i = tag_end;
    if i < bytes.len() {
        if bytes[i] != b'[' {
            return Err(ContractError::Trailing {
                token: text[i..].to_string(),
                pos: i,
            });
        }
        i += 1;
        loop {
            i = skip_spaces(bytes, i);
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if start == i {
                return Err(ContractError::Unexpected {
                    expected: "decimal parameter",
                    found: found_at(text, i),
                    pos: i,
                });
            }
            let token = &text[start..i];
            let value = token.parse::<u64>().map_err(|_| ContractError::InvalidParameter {
                token: token.to_string(),
                pos: start,
                reason: "value too large",
            })?;
            params.push(Param {
                value,
                token,
                pos: start,
            });
            i = skip_spaces(bytes, i);
            match bytes.get(i) {
                Some(b',') => i += 1,
                Some(b']') => {
                    i += 1;
                    break;
                }
                _ => {
                    return Err(ContractError::Unexpected {
                        expected: "`,` or `]`",
                        found: found_at(text, i),
                        pos: i,
                    })
                }
            }
        }
        if i < bytes.len() {
            return Err(ContractError::Trailing {
                token: text[i..].to_string(),
                pos: i,
            });
        }
    }

    if params.len() != class.arity() {
        return Err(ContractError::Arity {
            class,
            expected: class.arity(),
            found: params.len(),
            pos: tag_end,
        });
    }

    match class {
        ServiceClass::HardReservation | ServiceClass::SoftReservation => {
            let (budget, period) = (&params[0], &params[1]);
            let bad = |p: &Param, reason| ContractError::InvalidParameter {
                token: p.token.to_string(),
                pos: p.pos,
                reason,
            };
            if period.value == 0 {
                return Err(bad(period, "period must be positive"));
            }
            if period.value > MAX_PERIOD {
                return Err(bad(period, "period exceeds 2^31 ticks"));
            }
            if budget.value == 0 {
                return Err(bad(budget, "budget must be positive"));
            }
            if budget.value > period.value {
                return Err(bad(budget, "budget exceeds period"));
            }
            Ok(if class == ServiceClass::HardReservation {
                Contract::Hard {
                    budget: budget.value,
                    period: period.value,
                }
            } else {
                Contract::Soft {
                    budget: budget.value,
                    period: period.value,
                }
            })
        }
        ServiceClass::Share => {
            let share = &params[0];
            if share.value == 0 || share.value > PPM as u64 {
                return Err(ContractError::InvalidParameter {
                    token: share.token.to_string(),
                    pos: share.pos,
                    reason: "share must be in 1..=1000000 ppm",
                });
            }
            Ok(Contract::Share {
                ppm: share.value as u32,
            })
        }
        ServiceClass::BestEffort => Ok(Contract::BestEffort),
        ServiceClass::Null => Ok(Contract::Null),
        ServiceClass::All => Ok(Contract::All),
    }
}

fn skip_spaces(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i] == b' ' {
        i += 1;
    }
    i
}

fn found_at(text: &str, pos: usize) -> String {
    text[pos..]
        .chars()
        .next()
        .map_or_else(|| "end of input".to_string(), |c| c.to_string())
}
