//! The instruction program issued by the host each iteration.
//!
//! The initialization pass (`rp = -1`) reuses the loop's modules: M1 runs on
//! x0, M4 runs with alpha 1 against b (preloaded where r lives), and M7 runs
//! with beta 0 so that p becomes z. M8's instruction is issued before M5's and
//! the residual decides, before any M5..M7 recompute is issued, whether the
//! iteration ends with the short exit bundle.
//!
//! Within one stage every instruction is issued before any stream completes;
//! Phase 1 additionally carries the vector-control instructions that prefetch
//! Phase 2's operands.

use serde::Serialize;

use crate::modules::{ModuleId, VecOp, VectorId};

use super::ScheduleMode;

use ModuleId::*;
use VecOp::{Rd, RdWr, Wr};
use VectorId::{Ap, P, R, X, Z};

/// Scalar operand of a compute instruction, resolved at issue time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalarRef {
    Alpha,
    Beta,
    One,
    Zero,
    /// The module ignores the scalar field.
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Scalars {
    pub alpha: f64,
    pub beta: f64,
}

impl Scalars {
    pub fn resolve(&self, s: ScalarRef) -> f64 {
        match s {
            ScalarRef::Alpha => self.alpha,
            ScalarRef::Beta => self.beta,
            ScalarRef::One => 1.0,
            ScalarRef::Zero | ScalarRef::Unused => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CtrlOp {
    VCtrl {
        vector: VectorId,
        op: VecOp,
        q: ModuleId,
    },
    Cmp {
        module: ModuleId,
        scalar: ScalarRef,
        q: ModuleId,
    },
    /// Wait for the scalar a reduction module returns.
    Await(ModuleId),
}

impl CtrlOp {
    pub fn is_write(&self) -> bool {
        matches!(self, CtrlOp::VCtrl { op: Wr | RdWr, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    /// `r = b - A x0`, `z`, `rz`, `rr`.
    InitHead,
    /// Writes r when the initial guess already converged.
    InitExit,
    /// `p = z`, writes r and p.
    InitTail,
    Phase1,
    Phase2,
    /// Writes r and x only.
    Exit,
    /// Phase 3: recompute z, update p and x, write r, p, x.
    Tail,
}

fn v(vector: VectorId, op: VecOp, q: ModuleId) -> CtrlOp {
    CtrlOp::VCtrl { vector, op, q }
}

fn cmp(module: ModuleId, scalar: ScalarRef, q: ModuleId) -> CtrlOp {
    CtrlOp::Cmp { module, scalar, q }
}

use ScalarRef::{Alpha, Beta, One, Unused, Zero};

pub fn stage_ops(mode: ScheduleMode, stage: Stage) -> Vec<CtrlOp> {
    let vm = VectorId::M;
    match mode {
        ScheduleMode::Decentralized => match stage {
            Stage::InitHead => vec![
                v(X, Rd, M1),
                v(Ap, Wr, M1),
                cmp(M1, Unused, M1),
                v(R, Rd, M4),
                v(Ap, Rd, M4),
                cmp(M4, One, M5),
                v(vm, Rd, M5),
                cmp(M8, Unused, M8),
                cmp(M5, Unused, M6),
                cmp(M6, Unused, M8),
                CtrlOp::Await(M8),
                CtrlOp::Await(M6),
            ],
            Stage::InitExit => vec![v(R, RdWr, M4), v(Ap, Rd, M4), cmp(M4, One, M4)],
            Stage::InitTail => vec![
                v(R, RdWr, M5),
                v(Ap, Rd, M4),
                cmp(M4, One, M5),
                v(vm, Rd, M5),
                cmp(M5, Unused, M7),
                v(P, RdWr, M7),
                cmp(M7, Zero, M7),
            ],
            Stage::Phase1 => vec![
                v(P, Rd, M1),
                v(Ap, Wr, M1),
                cmp(M1, Unused, M2),
                v(P, Rd, M2),
                cmp(M2, Unused, M2),
                v(R, Rd, M4),
                v(Ap, Rd, M4),
                v(vm, Rd, M5),
                CtrlOp::Await(M2),
            ],
            Stage::Phase2 => vec![
                cmp(M4, Alpha, M5),
                cmp(M8, Unused, M8),
                cmp(M5, Unused, M6),
                cmp(M6, Unused, M8),
                CtrlOp::Await(M8),
                CtrlOp::Await(M6),
            ],
            Stage::Exit => vec![
                v(R, RdWr, M4),
                v(Ap, Rd, M4),
                cmp(M4, Alpha, M4),
                v(P, Rd, M3),
                v(X, RdWr, M3),
                cmp(M3, Alpha, M3),
            ],
            Stage::Tail => vec![
                v(R, RdWr, M5),
                v(Ap, Rd, M4),
                cmp(M4, Alpha, M5),
                v(vm, Rd, M5),
                cmp(M5, Unused, M7),
                v(P, RdWr, M7),
                cmp(M7, Beta, M3),
                v(X, RdWr, M3),
                cmp(M3, Alpha, M7),
            ],
        },
        ScheduleMode::Naive => match stage {
            Stage::InitHead => {
                let mut ops = vec![
                    v(X, Rd, M1),
                    v(Ap, Wr, M1),
                    cmp(M1, Unused, M1),
                    v(R, RdWr, M4),
                    v(Ap, Rd, M4),
                    cmp(M4, One, M4),
                    v(vm, Rd, M5),
                ];
                ops.extend(naive_residual_ops());
                ops
            }
            Stage::InitExit => vec![],
            Stage::InitTail => vec![v(Z, Rd, M7), v(P, RdWr, M7), cmp(M7, Zero, M7)],
            Stage::Phase1 => vec![
                v(P, Rd, M1),
                v(Ap, Wr, M1),
                cmp(M1, Unused, M1),
                v(P, Rd, M2),
                v(Ap, Rd, M2),
                cmp(M2, Unused, M2),
                v(R, RdWr, M4),
                v(Ap, Rd, M4),
                v(vm, Rd, M5),
                CtrlOp::Await(M2),
            ],
            Stage::Phase2 => {
                let mut ops = vec![cmp(M4, Alpha, M4)];
                ops.extend(naive_residual_ops());
                ops
            }
            Stage::Exit => vec![v(P, Rd, M3), v(X, RdWr, M3), cmp(M3, Alpha, M3)],
            Stage::Tail => vec![
                v(P, Rd, M3),
                v(X, RdWr, M3),
                cmp(M3, Alpha, M3),
                v(Z, Rd, M7),
                v(P, RdWr, M7),
                cmp(M7, Beta, M7),
            ],
        },
    }
}

/// M8, then M5 and M6, each reading its operands back from memory.
fn naive_residual_ops() -> Vec<CtrlOp> {
    vec![
        v(R, Rd, M8),
        cmp(M8, Unused, M8),
        v(R, Rd, M5),
        v(Z, Wr, M5),
        cmp(M5, Unused, M5),
        v(R, Rd, M6),
        v(Z, Rd, M6),
        cmp(M6, Unused, M6),
        CtrlOp::Await(M8),
        CtrlOp::Await(M6),
    ]
}

/// Stages making up iteration `rp`; `last` selects the terminating form.
pub fn iteration_stages(rp: i64, last: bool, early_exit: bool) -> Vec<Stage> {
    let end = match (rp < 0, last && early_exit) {
        (true, true) => Stage::InitExit,
        (true, false) => Stage::InitTail,
        (false, true) => Stage::Exit,
        (false, false) => Stage::Tail,
    };
    if rp < 0 {
        vec![Stage::InitHead, end]
    } else {
        vec![Stage::Phase1, Stage::Phase2, end]
    }
}

/// Complete instruction bundle of iteration `rp`, awaits included.
pub fn issue_sequence(mode: ScheduleMode, rp: i64, last: bool, early_exit: bool) -> Vec<CtrlOp> {
    iteration_stages(rp, last, early_exit)
        .into_iter()
        .flat_map(|s| stage_ops(mode, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has_cmp(ops: &[CtrlOp], m: ModuleId) -> bool {
        ops.iter()
            .any(|o| matches!(o, CtrlOp::Cmp { module, .. } if *module == m))
    }

    fn writes(ops: &[CtrlOp]) -> Vec<VectorId> {
        ops.iter()
            .filter(|o| o.is_write())
            .map(|o| match o {
                CtrlOp::VCtrl { vector, .. } => *vector,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn init_bundle_has_no_m2() {
        for mode in [ScheduleMode::Decentralized, ScheduleMode::Naive] {
            for last in [false, true] {
                let ops = issue_sequence(mode, -1, last, true);
                assert!(!has_cmp(&ops, M2), "{mode}");
                assert!(has_cmp(&ops, M1) && has_cmp(&ops, M4) && has_cmp(&ops, M8));
            }
        }
    }

    #[test]
    fn steady_state_writes_four_vectors() {
        let ops = issue_sequence(ScheduleMode::Decentralized, 3, false, true);
        let mut w = writes(&ops);
        w.sort();
        assert_eq!(w, vec![P, R, X, Ap]);
        let naive = issue_sequence(ScheduleMode::Naive, 3, false, true);
        assert_eq!(writes(&naive).len(), 5);
    }

    #[test]
    fn converged_bundle_skips_m5_to_m7() {
        for mode in [ScheduleMode::Decentralized, ScheduleMode::Naive] {
            let ops = issue_sequence(mode, 7, true, true);
            let after = ops.iter().rposition(|o| *o == CtrlOp::Await(M8)).unwrap();
            let before_m5 = ops
                .iter()
                .position(|o| matches!(o, CtrlOp::Cmp { module: M5, .. }))
                .unwrap();
            let m8 = ops
                .iter()
                .position(|o| matches!(o, CtrlOp::Cmp { module: M8, .. }))
                .unwrap();
            assert!(m8 < before_m5, "M8 is issued ahead of M5");
            let tail = &ops[after + 1..];
            for m in [M5, M6, M7] {
                assert!(!has_cmp(tail, m), "{mode} issues {m} after convergence");
            }
            let full = issue_sequence(mode, 7, true, false);
            assert!(has_cmp(
                &full[full.iter().rposition(|o| *o == CtrlOp::Await(M8)).unwrap()..],
                M7
            ));
        }
    }

    #[test]
    fn scalar_resolution() {
        let s = Scalars { alpha: 0.25, beta: 3.0 };
        assert_eq!(s.resolve(Alpha), 0.25);
        assert_eq!(s.resolve(Beta), 3.0);
        assert_eq!(s.resolve(One), 1.0);
        assert_eq!(s.resolve(Zero), 0.0);
    }
}
