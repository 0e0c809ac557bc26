//! The three instruction types that drive the accelerator.
//!
//! Vector-control instructions tell a vector controller where to deliver a
//! vector, compute instructions trigger a single-function compute module, and
//! memory instructions move a vector between a controller and its channel.
//! Every instruction renders to one trace line which parses back losslessly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsaError {
    #[error("q_id {0} out of range (must be < 8)")]
    QueueOutOfRange(u8),
    #[error("len must be positive")]
    ZeroLength,
    #[error("neither read nor write")]
    NeitherReadNorWrite,
    #[error("alpha must be finite, got {0}")]
    NonFiniteAlpha(f64),
    #[error("cannot parse trace line '{line}': {reason}")]
    Parse { line: String, reason: String },
}

/// 3-bit destination index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QId(u8);

impl QId {
    pub const MAX: u8 = 7;

    pub fn new(q: u8) -> Result<Self, IsaError> {
        if q > Self::MAX {
            Err(IsaError::QueueOutOfRange(q))
        } else {
            Ok(Self(q))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for QId {
    type Error = IsaError;
    fn try_from(q: u8) -> Result<Self, IsaError> {
        Self::new(q)
    }
}

impl From<QId> for u8 {
    fn from(q: QId) -> u8 {
        q.0
    }
}

/// Type-I: vector control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstVCtrl {
    pub rd: bool,
    pub wr: bool,
    /// Offset in 64-bit words.
    pub base_addr: u64,
    pub len: u32,
    pub q_id: QId,
}

/// Type-II: computation. No opcode; each compute module has one function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstCmp {
    pub len: u32,
    pub alpha: f64,
    pub q_id: QId,
}

/// Type-III: memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstRdWr {
    pub rd: bool,
    pub wr: bool,
    pub base_addr: u64,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemOp {
    Read,
    Write,
}

/// Sent by a memory module to the controller once per completed write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemResponse {
    pub channel: usize,
    pub op: MemOp,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Instruction {
    VCtrl(InstVCtrl),
    Cmp(InstCmp),
    RdWr(InstRdWr),
}

fn check_len(len: u32) -> Result<(), IsaError> {
    if len == 0 {
        Err(IsaError::ZeroLength)
    } else {
        Ok(())
    }
}

fn check_rw(rd: bool, wr: bool) -> Result<(), IsaError> {
    if rd || wr {
        Ok(())
    } else {
        Err(IsaError::NeitherReadNorWrite)
    }
}

pub fn make_vctrl(rd: bool, wr: bool, base_addr: u64, len: u32, q_id: u8) -> Result<InstVCtrl, IsaError> {
    check_rw(rd, wr)?;
    check_len(len)?;
    Ok(InstVCtrl {
        rd,
        wr,
        base_addr,
        len,
        q_id: QId::new(q_id)?,
    })
}

pub fn make_cmp(len: u32, alpha: f64, q_id: u8) -> Result<InstCmp, IsaError> {
    check_len(len)?;
    if !alpha.is_finite() {
        return Err(IsaError::NonFiniteAlpha(alpha));
    }
    Ok(InstCmp {
        len,
        alpha,
        q_id: QId::new(q_id)?,
    })
}

pub fn make_rdwr(rd: bool, wr: bool, base_addr: u64, len: u32) -> Result<InstRdWr, IsaError> {
    check_rw(rd, wr)?;
    check_len(len)?;
    Ok(InstRdWr { rd, wr, base_addr, len })
}

fn rw_tag(rd: bool, wr: bool) -> &'static str {
    match (rd, wr) {
        (true, true) => "rdwr",
        (true, false) => "rd",
        _ => "wr",
    }
}

impl fmt::Display for InstVCtrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "VCTRL {} base={} len={} q={}",
            rw_tag(self.rd, self.wr),
            self.base_addr,
            self.len,
            self.q_id.0
        )
    }
}

impl fmt::Display for InstCmp {
    // `{}` on f64 prints the shortest string that parses back to the same value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CMP len={} alpha={} q={}", self.len, self.alpha, self.q_id.0)
    }
}

impl fmt::Display for InstRdWr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MEM {} base={} len={}",
            rw_tag(self.rd, self.wr),
            self.base_addr,
            self.len
        )
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::VCtrl(i) => i.fmt(f),
            Instruction::Cmp(i) => i.fmt(f),
            Instruction::RdWr(i) => i.fmt(f),
        }
    }
}

impl From<InstVCtrl> for Instruction {
    fn from(i: InstVCtrl) -> Self {
        Instruction::VCtrl(i)
    }
}

impl From<InstCmp> for Instruction {
    fn from(i: InstCmp) -> Self {
        Instruction::Cmp(i)
    }
}

impl From<InstRdWr> for Instruction {
    fn from(i: InstRdWr) -> Self {
        Instruction::RdWr(i)
    }
}

pub fn render_trace(inst: &Instruction) -> String {
    inst.to_string()
}

pub fn parse_trace(line: &str) -> Result<Instruction, IsaError> {
    line.parse()
}

impl FromStr for Instruction {
    type Err = IsaError;

    fn from_str(line: &str) -> Result<Self, IsaError> {
        let fail = |reason: &str| IsaError::Parse {
            line: line.to_string(),
            reason: reason.to_string(),
        };
        let mut tokens = line.split_whitespace();
        let kind = tokens.next().ok_or_else(|| fail("empty line"))?;

        let mut rw = None;
        let mut fields: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            match tok.split_once('=') {
                Some(kv) => fields.push(kv),
                None if rw.is_none() => {
                    rw = Some(match tok {
                        "rd" => (true, false),
                        "wr" => (false, true),
                        "rdwr" => (true, true),
                        _ => return Err(fail("unknown access tag")),
                    })
                }
                None => return Err(fail("unexpected token")),
            }
        }
        let field = |name: &str| -> Result<&str, IsaError> {
            fields
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| fail(&format!("missing field {name}")))
        };
        let int = |name: &str| -> Result<u64, IsaError> {
            field(name)?.parse::<u64>().map_err(|e| fail(&format!("{name}: {e}")))
        };
        let len = u32::try_from(int("len")?).map_err(|_| fail("len too large"))?;
        let q = || -> Result<u8, IsaError> { u8::try_from(int("q")?).map_err(|_| IsaError::QueueOutOfRange(u8::MAX)) };

        match kind {
            "VCTRL" => {
                let (rd, wr) = rw.ok_or_else(|| fail("missing access tag"))?;
                Ok(make_vctrl(rd, wr, int("base")?, len, q()?)?.into())
            }
            "CMP" => {
                let alpha = field("alpha")?
                    .parse::<f64>()
                    .map_err(|e| fail(&format!("alpha: {e}")))?;
                Ok(make_cmp(len, alpha, q()?)?.into())
            }
            "MEM" => {
                let (rd, wr) = rw.ok_or_else(|| fail("missing access tag"))?;
                Ok(make_rdwr(rd, wr, int("base")?, len)?.into())
            }
            _ => Err(fail("unknown instruction kind")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let v = make_vctrl(true, false, 0, 100, 1).unwrap();
        assert!(v.rd && !v.wr);
        assert_eq!((v.base_addr, v.len, v.q_id.get()), (0, 100, 1));

        let c = make_cmp(100, 2.0, 1).unwrap();
        assert_eq!(render_trace(&c.into()), "CMP len=100 alpha=2 q=1");

        let m = make_rdwr(true, false, 0, 100).unwrap();
        assert_eq!(render_trace(&m.into()), "MEM rd base=0 len=100");
    }

    #[test]
    fn invalid_fields() {
        assert_eq!(make_vctrl(false, false, 0, 10, 0), Err(IsaError::NeitherReadNorWrite));
        assert_eq!(
            make_vctrl(false, false, 0, 10, 0).unwrap_err().to_string(),
            "neither read nor write"
        );
        assert_eq!(make_vctrl(true, false, 0, 10, 8), Err(IsaError::QueueOutOfRange(8)));
        assert_eq!(make_cmp(0, 1.0, 0), Err(IsaError::ZeroLength));
        assert!(make_cmp(1, f64::NAN, 0).is_err());
        assert_eq!(make_rdwr(false, false, 0, 1), Err(IsaError::NeitherReadNorWrite));
        assert_eq!(make_rdwr(true, true, 0, 0), Err(IsaError::ZeroLength));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_trace("").is_err());
        assert!(parse_trace("JMP len=1").is_err());
        assert!(parse_trace("MEM base=0 len=1").is_err());
        assert!(parse_trace("CMP len=1 alpha=1 q=9").is_err());
    }

    fn arb_instruction() -> impl Strategy<Value = Instruction> {
        let rw = prop_oneof![Just((true, false)), Just((false, true)), Just((true, true))];
        let alpha = prop_oneof![
            any::<f64>().prop_filter("finite", |a| a.is_finite()),
            Just(0.0),
            Just(-0.0),
            Just(f64::MIN_POSITIVE),
        ];
        prop_oneof![
            (rw.clone(), any::<u64>(), 1u32.., 0u8..8)
                .prop_map(|((rd, wr), b, l, q)| make_vctrl(rd, wr, b, l, q).unwrap().into()),
            (1u32.., alpha, 0u8..8).prop_map(|(l, a, q)| make_cmp(l, a, q).unwrap().into()),
            (rw, any::<u64>(), 1u32..).prop_map(|((rd, wr), b, l)| make_rdwr(rd, wr, b, l).unwrap().into()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn trace_round_trips(inst in arb_instruction()) {
            let line = render_trace(&inst);
            prop_assert!(!line.contains('\n'));
            let back = parse_trace(&line).unwrap();
            match (inst, back) {
                (Instruction::Cmp(a), Instruction::Cmp(b)) => {
                    prop_assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
                    prop_assert_eq!((a.len, a.q_id), (b.len, b.q_id));
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
