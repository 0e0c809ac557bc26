//! Scheduling tables for both modes and construction of the module graph.
//!
//! A data channel is named `src->dst:vec`; the tables only mention channel
//! names, and the graph is derived from them, so every channel is created
//! exactly once with its producer and consumer taken from the name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::isa::{InstCmp, InstRdWr, InstVCtrl, MemResponse};
use crate::matrix_io::CsrMatrix;
use crate::modules::fsm::{Fsm, FsmProbe, Transition};
use crate::modules::{
    DataPorts, Kernel, MemPort, MemUnit, ModuleId, SpmvRoute, SpmvUnit, StreamRoute, StreamUnit, VecCtrl, VecKey,
    VecOp, VecRoute, VectorId,
};
use crate::runtime::memory::VectorStore;
use crate::runtime::perf::min_safe_depth;
use crate::runtime::{ChannelId, Graph, Receiver, Sender};
use crate::spmv::ScheduledNonzeros;

use super::{ScheduleMode, SolverConfig, SolverError};

const DATA_DEPTH: usize = 2;
const INST_DEPTH: usize = 8;
const RESP_DEPTH: usize = 16;
const SCALAR_DEPTH: usize = 2;

use ModuleId::*;
use VecOp::{Rd, RdWr, Wr};

fn c(src: impl Display, dst: impl Display, v: VectorId) -> String {
    format!("{src}->{dst}:{v}")
}

fn vc(v: VectorId) -> String {
    v.ctrl_name()
}

fn vt(
    from: usize,
    op: VecOp,
    q: ModuleId,
    to: usize,
    read_to: &[String],
    write_from: Option<String>,
) -> Transition<VecKey, VecRoute> {
    Transition {
        from,
        key: (op, q),
        to,
        route: VecRoute {
            read_to: read_to.to_vec(),
            write_from,
        },
    }
}

fn st(
    from: usize,
    q: ModuleId,
    to: usize,
    operands: &[String],
    results: &[String],
    forwards: &[String],
) -> Transition<ModuleId, StreamRoute> {
    Transition {
        from,
        key: q,
        to,
        route: StreamRoute {
            operands: operands.to_vec(),
            results: results.to_vec(),
            forwards: forwards.to_vec(),
        },
    }
}

fn mt(from: usize, q: ModuleId, to: usize, source: String, results: &[String]) -> Transition<ModuleId, SpmvRoute> {
    Transition {
        from,
        key: q,
        to,
        route: SpmvRoute {
            source,
            results: results.to_vec(),
        },
    }
}

/// Module, kernel, FSM start state and transitions of one stream unit.
pub(crate) type StreamTable = (ModuleId, Kernel, usize, Vec<Transition<ModuleId, StreamRoute>>);

/// Scheduling tables of one mode. Every FSM's home state is 0; M1 and the
/// decentralized M7 start in a prologue state 1 that only the initialization
/// pass leaves.
pub(crate) struct Tables {
    pub spmv: (usize, Vec<Transition<ModuleId, SpmvRoute>>),
    pub streams: Vec<StreamTable>,
    pub vectors: Vec<(VectorId, Vec<Transition<VecKey, VecRoute>>)>,
}

pub(crate) fn tables(mode: ScheduleMode) -> Tables {
    match mode {
        ScheduleMode::Decentralized => decentralized(),
        ScheduleMode::Naive => naive(),
    }
}

fn decentralized() -> Tables {
    use VectorId::{Ap, M as Mv, P, R, X};
    let (vp, vr, vx, vap, vm) = (vc(P), vc(R), vc(X), vc(Ap), vc(Mv));

    let p_m1 = c(&vp, M1, P);
    let p_m2 = c(&vp, M2, P);
    let p_m7 = c(&vp, M7, P);
    let p_m3 = c(&vp, M3, P);
    let p_new = c(M7, &vp, P);
    let p_fwd = c(M7, M3, P);
    let r_m4 = c(&vr, M4, R);
    let r_m5 = c(M4, M5, R);
    let r_m4_out = c(M4, &vr, R);
    let r_m6 = c(M5, M6, R);
    let r_m5_out = c(M5, &vr, R);
    let r_m8 = c(M6, M8, R);
    let x_m1 = c(&vx, M1, X);
    let x_m3 = c(&vx, M3, X);
    let x_new = c(M3, &vx, X);
    let ap_mem = c(M1, &vap, Ap);
    let ap_m2 = c(M1, M2, Ap);
    let ap_m4 = c(&vap, M4, Ap);
    let m_m5 = c(&vm, M5, Mv);
    let z_m6 = c(M5, M6, VectorId::Z);
    let z_m7 = c(M5, M7, VectorId::Z);

    let vectors = vec![
        (
            P,
            vec![
                vt(0, Rd, M1, 1, std::slice::from_ref(&p_m1), None),
                vt(1, Rd, M2, 2, std::slice::from_ref(&p_m2), None),
                vt(2, RdWr, M7, 0, std::slice::from_ref(&p_m7), Some(p_new.clone())),
                vt(0, RdWr, M7, 0, std::slice::from_ref(&p_m7), Some(p_new.clone())),
                vt(2, Rd, M3, 0, std::slice::from_ref(&p_m3), None),
            ],
        ),
        (
            R,
            vec![
                vt(0, Rd, M4, 1, std::slice::from_ref(&r_m4), None),
                vt(1, RdWr, M5, 0, std::slice::from_ref(&r_m4), Some(r_m5_out.clone())),
                vt(1, RdWr, M4, 0, std::slice::from_ref(&r_m4), Some(r_m4_out.clone())),
            ],
        ),
        (
            X,
            vec![
                vt(0, Rd, M1, 0, std::slice::from_ref(&x_m1), None),
                vt(0, RdWr, M3, 0, std::slice::from_ref(&x_m3), Some(x_new.clone())),
            ],
        ),
        (
            Ap,
            vec![
                vt(0, Wr, M1, 1, &[], Some(ap_mem.clone())),
                vt(1, Rd, M4, 2, std::slice::from_ref(&ap_m4), None),
                vt(2, Rd, M4, 0, std::slice::from_ref(&ap_m4), None),
            ],
        ),
        (
            Mv,
            vec![
                vt(0, Rd, M5, 1, std::slice::from_ref(&m_m5), None),
                vt(1, Rd, M5, 0, std::slice::from_ref(&m_m5), None),
            ],
        ),
    ];

    let spmv = (
        1,
        vec![
            mt(1, M1, 0, x_m1.clone(), std::slice::from_ref(&ap_mem)),
            mt(0, M2, 0, p_m1.clone(), &[ap_mem.clone(), ap_m2.clone()]),
        ],
    );

    let m4_in = [r_m4.clone(), ap_m4.clone()];
    let m5_in = [m_m5.clone(), r_m5.clone()];
    let m7_in = [z_m7.clone(), p_m7.clone()];
    let streams = vec![
        (M2, Kernel::Dot, 0, vec![st(0, M2, 0, &[p_m2, ap_m2], &[], &[])]),
        (
            M3,
            Kernel::AddScaled,
            0,
            vec![
                st(
                    0,
                    M7,
                    0,
                    &[x_m3.clone(), p_fwd.clone()],
                    std::slice::from_ref(&x_new),
                    &[],
                ),
                st(0, M3, 0, &[x_m3, p_m3], &[x_new], &[]),
            ],
        ),
        (
            M4,
            Kernel::SubScaled,
            0,
            vec![
                st(0, M5, 0, &m4_in, &[r_m5], &[]),
                st(0, M4, 0, &m4_in, &[r_m4_out], &[]),
            ],
        ),
        (
            M5,
            Kernel::Divide,
            0,
            vec![
                st(
                    0,
                    M6,
                    1,
                    &m5_in,
                    std::slice::from_ref(&z_m6),
                    std::slice::from_ref(&r_m6),
                ),
                st(1, M7, 0, &m5_in, &[z_m7], &[r_m5_out]),
            ],
        ),
        (
            M6,
            Kernel::Dot,
            0,
            vec![st(0, M8, 0, &[z_m6, r_m6], &[], std::slice::from_ref(&r_m8))],
        ),
        (
            M7,
            Kernel::AddScaled,
            1,
            vec![
                st(1, M7, 0, &m7_in, std::slice::from_ref(&p_new), &[]),
                st(0, M3, 0, &m7_in, &[p_new], &[p_fwd]),
            ],
        ),
        (M8, Kernel::Square, 0, vec![st(0, M8, 0, &[r_m8], &[], &[])]),
    ];
    Tables { spmv, streams, vectors }
}

fn naive() -> Tables {
    use VectorId::{Ap, M as Mv, P, R, X, Z};
    let (vp, vr, vx, vap, vm, vz) = (vc(P), vc(R), vc(X), vc(Ap), vc(Mv), vc(Z));

    let p_m1 = c(&vp, M1, P);
    let p_m2 = c(&vp, M2, P);
    let p_m3 = c(&vp, M3, P);
    let p_m7 = c(&vp, M7, P);
    let p_new = c(M7, &vp, P);
    let r_m4 = c(&vr, M4, R);
    let r_new = c(M4, &vr, R);
    let r_m8 = c(&vr, M8, R);
    let r_m5 = c(&vr, M5, R);
    let r_m6 = c(&vr, M6, R);
    let x_m1 = c(&vx, M1, X);
    let x_m3 = c(&vx, M3, X);
    let x_new = c(M3, &vx, X);
    let ap_mem = c(M1, &vap, Ap);
    let ap_m2 = c(&vap, M2, Ap);
    let ap_m4 = c(&vap, M4, Ap);
    let m_m5 = c(&vm, M5, Mv);
    let z_mem = c(M5, &vz, Z);
    let z_m6 = c(&vz, M6, Z);
    let z_m7 = c(&vz, M7, Z);

    let vectors = vec![
        (
            P,
            vec![
                vt(0, Rd, M1, 1, std::slice::from_ref(&p_m1), None),
                vt(1, Rd, M2, 2, std::slice::from_ref(&p_m2), None),
                vt(2, Rd, M3, 3, std::slice::from_ref(&p_m3), None),
                vt(3, RdWr, M7, 0, std::slice::from_ref(&p_m7), Some(p_new.clone())),
                vt(0, RdWr, M7, 0, std::slice::from_ref(&p_m7), Some(p_new.clone())),
            ],
        ),
        (
            R,
            vec![
                vt(0, RdWr, M4, 1, std::slice::from_ref(&r_m4), Some(r_new.clone())),
                vt(1, Rd, M8, 2, std::slice::from_ref(&r_m8), None),
                vt(2, Rd, M5, 3, std::slice::from_ref(&r_m5), None),
                vt(3, Rd, M6, 0, std::slice::from_ref(&r_m6), None),
            ],
        ),
        (
            X,
            vec![
                vt(0, Rd, M1, 0, std::slice::from_ref(&x_m1), None),
                vt(0, RdWr, M3, 0, std::slice::from_ref(&x_m3), Some(x_new.clone())),
            ],
        ),
        (
            Ap,
            vec![
                vt(0, Wr, M1, 1, &[], Some(ap_mem.clone())),
                vt(1, Rd, M2, 2, std::slice::from_ref(&ap_m2), None),
                vt(2, Rd, M4, 0, std::slice::from_ref(&ap_m4), None),
                vt(1, Rd, M4, 0, std::slice::from_ref(&ap_m4), None),
            ],
        ),
        (Mv, vec![vt(0, Rd, M5, 0, std::slice::from_ref(&m_m5), None)]),
        (
            Z,
            vec![
                vt(0, Wr, M5, 1, &[], Some(z_mem.clone())),
                vt(1, Rd, M6, 2, std::slice::from_ref(&z_m6), None),
                vt(2, Rd, M7, 0, std::slice::from_ref(&z_m7), None),
            ],
        ),
    ];

    let spmv = (
        1,
        vec![
            mt(1, M1, 0, x_m1, std::slice::from_ref(&ap_mem)),
            mt(0, M1, 0, p_m1, &[ap_mem]),
        ],
    );
    let streams = vec![
        (M2, Kernel::Dot, 0, vec![st(0, M2, 0, &[p_m2, ap_m2], &[], &[])]),
        (
            M3,
            Kernel::AddScaled,
            0,
            vec![st(0, M3, 0, &[x_m3, p_m3], &[x_new], &[])],
        ),
        (
            M4,
            Kernel::SubScaled,
            0,
            vec![st(0, M4, 0, &[r_m4, ap_m4], &[r_new], &[])],
        ),
        (M5, Kernel::Divide, 0, vec![st(0, M5, 0, &[m_m5, r_m5], &[z_mem], &[])]),
        (M6, Kernel::Dot, 0, vec![st(0, M6, 0, &[z_m6, r_m6], &[], &[])]),
        (
            M7,
            Kernel::AddScaled,
            0,
            vec![st(0, M7, 0, &[z_m7, p_m7], &[p_new], &[])],
        ),
        (M8, Kernel::Square, 0, vec![st(0, M8, 0, &[r_m8], &[], &[])]),
    ];
    Tables { spmv, streams, vectors }
}

impl Tables {
    fn data_channels(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        for t in &self.spmv.1 {
            names.insert(t.route.source.clone());
            names.extend(t.route.results.iter().cloned());
        }
        for (_, _, _, ts) in &self.streams {
            for t in ts {
                let r = &t.route;
                names.extend(r.operands.iter().chain(&r.results).chain(&r.forwards).cloned());
            }
        }
        for (_, ts) in &self.vectors {
            for t in ts {
                names.extend(t.route.read_to.iter().cloned());
                names.extend(t.route.write_from.iter().cloned());
            }
        }
        names
    }

    pub fn memory_vectors(&self) -> Vec<VectorId> {
        self.vectors.iter().map(|(v, _)| *v).collect()
    }
}

/// Vectors read and written in the same instruction get two channels.
fn store_for(v: VectorId, next_id: &mut usize, n: usize) -> VectorStore {
    let id = *next_id;
    match v {
        VectorId::P | VectorId::R | VectorId::X => {
            *next_id += 2;
            VectorStore::double(id, id + 1, n)
        }
        _ => {
            *next_id += 1;
            VectorStore::single(id, n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec {
    pub name: String,
    pub depth: usize,
}

fn split_name(name: &str) -> (&str, &str) {
    let (ends, _) = name.split_once(':').expect("data channel names carry a vector suffix");
    ends.split_once("->").expect("data channel names have two endpoints")
}

/// Every channel of the graph for `mode` with its effective depth.
pub fn channel_plan(mode: ScheduleMode, cfg: &SolverConfig) -> Vec<ChannelSpec> {
    let t = tables(mode);
    let safe_join = c(M5, M6, VectorId::R);
    let mut out: Vec<ChannelSpec> = t
        .data_channels()
        .into_iter()
        .map(|name| {
            let depth = if name == safe_join {
                min_safe_depth(cfg.divide_latency)
            } else {
                DATA_DEPTH
            };
            ChannelSpec { name, depth }
        })
        .collect();
    for m in ModuleId::ALL {
        out.push(ChannelSpec {
            name: format!("ctrl->{m}"),
            depth: INST_DEPTH,
        });
    }
    for m in [M2, M6, M8] {
        out.push(ChannelSpec {
            name: format!("{m}->ctrl:s"),
            depth: SCALAR_DEPTH,
        });
    }
    for v in t.memory_vectors() {
        let (ctrl, mem) = (v.ctrl_name(), v.mem_name());
        out.push(ChannelSpec {
            name: format!("ctrl->{ctrl}"),
            depth: INST_DEPTH,
        });
        for (name, depth) in [
            (format!("{ctrl}->{mem}:inst"), DATA_DEPTH),
            (format!("{mem}->{ctrl}:rd"), DATA_DEPTH),
            (format!("{ctrl}->{mem}:wr"), DATA_DEPTH),
            (format!("{mem}->ctrl:resp"), RESP_DEPTH),
        ] {
            out.push(ChannelSpec { name, depth });
        }
    }
    for spec in &mut out {
        if let Some(&d) = cfg.fifo_depths.get(&spec.name) {
            spec.depth = d;
        }
    }
    out
}

/// Host-side endpoints of a built graph.
pub(crate) struct Wired {
    pub graph: Graph,
    pub vctrl: BTreeMap<VectorId, Sender<InstVCtrl>>,
    pub cmp: BTreeMap<ModuleId, Sender<InstCmp>>,
    pub scalars: BTreeMap<ModuleId, Receiver<f64>>,
    pub responses: BTreeMap<VectorId, Receiver<MemResponse>>,
    pub memory: BTreeMap<VectorId, Arc<Mutex<MemPort>>>,
    pub probes: Vec<FsmProbe>,
    pub data_channels: Vec<ChannelId>,
}

pub(crate) fn build(a: &CsrMatrix, sched: Arc<ScheduledNonzeros>, cfg: &SolverConfig) -> Result<Wired, SolverError> {
    let mode = cfg.schedule_mode;
    let n = a.n();
    let plan = channel_plan(mode, cfg);
    let depth_of: BTreeMap<&str, usize> = plan.iter().map(|s| (s.name.as_str(), s.depth)).collect();
    if let Some(unknown) = cfg.fifo_depths.keys().find(|k| !depth_of.contains_key(k.as_str())) {
        return Err(SolverError::Config(format!(
            "no channel named {unknown:?} in {mode} mode"
        )));
    }
    let depth = |name: &str| depth_of[name];

    let t = tables(mode);
    let mut graph = Graph::new();
    let mut ports: BTreeMap<String, DataPorts> = BTreeMap::new();
    let mut data_channels = Vec::new();
    for name in t.data_channels() {
        let (tx, rx) = graph.channel::<f64>(name.clone(), depth(&name))?;
        data_channels.push(tx.id());
        let (src, dst) = split_name(&name);
        ports.entry(src.to_string()).or_default().outs.push(tx);
        ports.entry(dst.to_string()).or_default().ins.push(rx);
    }
    let mut take_ports = |owner: String| ports.remove(&owner).unwrap_or_default();

    let mut probes = Vec::new();
    let mut cmp = BTreeMap::new();
    let mut inst_channel = |graph: &mut Graph, m: ModuleId| -> Result<Receiver<InstCmp>, SolverError> {
        let name = format!("ctrl->{m}");
        let (tx, rx) = graph.host_input::<InstCmp>(name.clone(), depth(&name))?;
        cmp.insert(m, tx);
        Ok(rx)
    };

    let (start, transitions) = t.spmv;
    let fsm = Fsm::new(M1.to_string(), start, 0, transitions);
    probes.push(fsm.probe());
    let rx = inst_channel(&mut graph, M1)?;
    let m1 = SpmvUnit::new(M1.to_string(), rx, take_ports(M1.to_string()), sched, cfg.scheme, fsm);
    graph.add(Box::new(m1));

    let mut scalars = BTreeMap::new();
    for (m, kernel, start, transitions) in t.streams {
        let fsm = Fsm::new(m.to_string(), start, 0, transitions);
        probes.push(fsm.probe());
        let rx = inst_channel(&mut graph, m)?;
        let scalar = if matches!(kernel, Kernel::Dot | Kernel::Square) {
            let name = format!("{m}->ctrl:s");
            let (tx, srx) = graph.host_output::<f64>(name.clone(), depth(&name))?;
            scalars.insert(m, srx);
            Some(tx)
        } else {
            None
        };
        let latency = if m == M5 { cfg.divide_latency } else { 0 };
        let unit = StreamUnit::new(
            m.to_string(),
            kernel,
            rx,
            take_ports(m.to_string()),
            scalar,
            fsm,
            latency,
            cfg.l_acc,
        );
        graph.add(Box::new(unit));
    }

    let mut vctrl = BTreeMap::new();
    let mut responses = BTreeMap::new();
    let mut memory = BTreeMap::new();
    let mut next_mem_id = 0;
    for (v, transitions) in t.vectors {
        let (ctrl, mem) = (v.ctrl_name(), v.mem_name());
        let fsm = Fsm::new(ctrl.clone(), 0, 0, transitions);
        probes.push(fsm.probe());
        let name = format!("ctrl->{ctrl}");
        let (itx, irx) = graph.host_input::<InstVCtrl>(name.clone(), depth(&name))?;
        vctrl.insert(v, itx);
        let name = format!("{ctrl}->{mem}:inst");
        let (mitx, mirx) = graph.channel::<InstRdWr>(name.clone(), depth(&name))?;
        let name = format!("{mem}->{ctrl}:rd");
        let (rdtx, rdrx) = graph.channel::<f64>(name.clone(), depth(&name))?;
        let name = format!("{ctrl}->{mem}:wr");
        let (wrtx, wrrx) = graph.channel::<f64>(name.clone(), depth(&name))?;
        data_channels.extend([rdtx.id(), wrtx.id()]);
        let name = format!("{mem}->ctrl:resp");
        let (resptx, resprx) = graph.host_output::<MemResponse>(name.clone(), depth(&name))?;
        responses.insert(v, resprx);
        let port = Arc::new(Mutex::new(MemPort::new(store_for(v, &mut next_mem_id, n))));
        memory.insert(v, Arc::clone(&port));
        let unit = VecCtrl::new(ctrl.clone(), irx, mitx, rdrx, wrtx, take_ports(ctrl.clone()), fsm);
        graph.add(Box::new(unit));
        graph.add(Box::new(MemUnit::new(mem, mirx, rdtx, wrrx, resptx, port)));
    }
    graph.validate()?;
    Ok(Wired {
        graph,
        vctrl,
        cmp,
        scalars,
        responses,
        memory,
        probes,
        data_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(mode: ScheduleMode) -> BTreeSet<String> {
        tables(mode).data_channels()
    }

    #[test]
    fn decentralized_channel_set() {
        let want = [
            "M1->M2:ap",
            "M1->VcAp:ap",
            "M3->VcX:x",
            "M4->M5:r",
            "M4->VcR:r",
            "M5->M6:r",
            "M5->M6:z",
            "M5->M7:z",
            "M5->VcR:r",
            "M6->M8:r",
            "M7->M3:p",
            "M7->VcP:p",
            "VcAp->M4:ap",
            "VcM->M5:M",
            "VcP->M1:p",
            "VcP->M2:p",
            "VcP->M3:p",
            "VcP->M7:p",
            "VcR->M4:r",
            "VcX->M1:x",
            "VcX->M3:x",
        ];
        let got = names(ScheduleMode::Decentralized);
        assert_eq!(got, want.iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn naive_has_z_in_memory() {
        let got = names(ScheduleMode::Naive);
        assert!(got.contains("M5->VcZ:z"));
        assert!(!got.iter().any(|n| n.starts_with("M5->M6")));
        assert!(tables(ScheduleMode::Naive).memory_vectors().contains(&VectorId::Z));
        assert!(!tables(ScheduleMode::Decentralized)
            .memory_vectors()
            .contains(&VectorId::Z));
    }

    #[test]
    fn join_channel_defaults_to_safe_depth() {
        let cfg = SolverConfig::default();
        let plan = channel_plan(ScheduleMode::Decentralized, &cfg);
        let join = plan.iter().find(|s| s.name == "M5->M6:r").unwrap();
        assert_eq!(join.depth, 34);
        let mut cfg = cfg;
        cfg.fifo_depths.insert("M5->M6:r".into(), 33);
        let plan = channel_plan(ScheduleMode::Decentralized, &cfg);
        assert_eq!(plan.iter().find(|s| s.name == "M5->M6:r").unwrap().depth, 33);
    }

    #[test]
    fn unknown_override_is_rejected() {
        let a = CsrMatrix::identity(4);
        let sched = Arc::new(crate::spmv::schedule_nonzeros(&a, Default::default()).unwrap());
        let mut cfg = SolverConfig::default();
        cfg.fifo_depths.insert("M9->M1:q".into(), 4);
        assert!(matches!(build(&a, sched.clone(), &cfg), Err(SolverError::Config(_))));
        cfg.fifo_depths.clear();
        assert!(build(&a, sched, &cfg).is_ok());
    }
}
