// SPDX-License-Identifier: Apache-2.0

//! The tracer/tracee protocol enforced by the security monitor, as a
//! deterministic state machine.
//!
//! The shared region of a tracee is a single lock bit. The host may only
//! read it while the tracee's last measurement stands verified; the lock
//! re-engages as soon as the tracee runs again.

mod explore;
mod integrate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use explore::{
    adversarial_alphabet, explore, honest_alphabet, standard_world, ExploreReport, StateBudget, Violation, BYSTANDER,
    ROGUE_TRACER, TRACEE, TRACER,
};
pub use integrate::{attested_run, AttestedRun};

pub type EnclaveId = u32;

/// All-zero digest, required for every role other than tracee.
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Tracee,
    Tracer,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifState {
    Gathering,
    Pending,
    Verified,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnclaveRecord {
    pub id: EnclaveId,
    pub role: Role,
    /// Measurement of the enclave's own code.
    pub identity: String,
    pub counterpart: Option<EnclaveId>,
    pub expected_tracer_hash: String,
    pub verif_state: VerifState,
    pub shm_locked: bool,
    pub runnable: bool,
    /// Currently executing (between start and its next ecall).
    pub running: bool,
}

/// Context switches per measurement ecall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpcModel {
    /// Tracee to monitor to tracer and back, with the verdict call.
    EightSwitch,
    /// A direct tracee/tracer hand-off through the monitor.
    FourSwitch,
}

impl IpcModel {
    pub fn switches_per_ecall(self) -> u64 {
        match self {
            IpcModel::EightSwitch => 8,
            IpcModel::FourSwitch => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolEvent {
    Create {
        id: EnclaveId,
        role: Role,
        identity: String,
        #[serde(default = "zero_hash")]
        expected_tracer_hash: String,
    },
    AttachAsTracer {
        tracer: EnclaveId,
        tracee: EnclaveId,
    },
    Start {
        tracee: EnclaveId,
    },
    Ecall {
        tracee: EnclaveId,
    },
    /// The tracer finished checking the pending measurement.
    VerifyResult {
        tracer: EnclaveId,
        accept: bool,
    },
    /// Direct monitor call; `caller` is `None` for the host.
    SetCfaVerificationState {
        caller: Option<EnclaveId>,
        tracee: EnclaveId,
        accept: bool,
    },
    HostReadShm {
        tracee: EnclaveId,
    },
}

fn zero_hash() -> String {
    ZERO_HASH.to_string()
}

/// What the monitor observably did with an event.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "effect", content = "detail", rename_all = "snake_case")]
pub enum Effect {
    Created,
    Attached,
    Started,
    /// The tracee trapped into the monitor; its measurement awaits a verdict.
    Trapped,
    Verified,
    Halted,
    ReadGranted,
    ReadDenied,
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct World {
    pub enclaves: BTreeMap<EnclaveId, EnclaveRecord>,
    pub ipc: IpcModel,
    pub context_switches: u64,
}

impl Default for World {
    fn default() -> Self {
        World::new(IpcModel::EightSwitch)
    }
}

fn reject(reason: &str) -> Effect {
    Effect::Rejected(reason.to_string())
}

impl World {
    pub fn new(ipc: IpcModel) -> Self {
        World { enclaves: BTreeMap::new(), ipc, context_switches: 0 }
    }

    pub fn enclave(&self, id: EnclaveId) -> Option<&EnclaveRecord> {
        self.enclaves.get(&id)
    }

    /// Applies one event. Illegal events leave the world unchanged and
    /// report a rejection.
    pub fn step(&mut self, event: &ProtocolEvent) -> Effect {
        match event {
            ProtocolEvent::Create { id, role, identity, expected_tracer_hash } => {
                self.create(*id, *role, identity, expected_tracer_hash)
            }
            ProtocolEvent::AttachAsTracer { tracer, tracee } => match self.enclaves.get(tracer) {
                Some(t) => {
                    let hash = t.identity.clone();
                    self.attach_as_tracer(*tracer, *tracee, &hash)
                }
                None => reject("no such tracer"),
            },
            ProtocolEvent::Start { tracee } => self.start(*tracee),
            ProtocolEvent::Ecall { tracee } => self.ecall(*tracee),
            ProtocolEvent::VerifyResult { tracer, accept } => {
                match self.enclaves.get(tracer).and_then(|t| t.counterpart) {
                    Some(tracee) if self.enclaves[tracer].role == Role::Tracer => {
                        self.set_cfa_verification_state(Some(*tracer), tracee, *accept)
                    }
                    _ => reject("tracer has no tracee"),
                }
            }
            ProtocolEvent::SetCfaVerificationState { caller, tracee, accept } => {
                self.set_cfa_verification_state(*caller, *tracee, *accept)
            }
            ProtocolEvent::HostReadShm { tracee } => self.host_read_shm(*tracee),
        }
    }

    fn create(&mut self, id: EnclaveId, role: Role, identity: &str, expected: &str) -> Effect {
        if self.enclaves.contains_key(&id) {
            return reject("enclave exists");
        }
        if role != Role::Tracee && expected != ZERO_HASH {
            return reject("expected tracer hash must be zero for this role");
        }
        self.enclaves.insert(
            id,
            EnclaveRecord {
                id,
                role,
                identity: identity.to_string(),
                counterpart: None,
                expected_tracer_hash: expected.to_string(),
                verif_state: VerifState::Gathering,
                shm_locked: true,
                // Only tracees wait for a tracer before running.
                runnable: role != Role::Tracee,
                running: false,
            },
        );
        Effect::Created
    }

    /// Links `tracer` to `tracee` if `hash`, the tracer's measured identity,
    /// is the one the tracee expects.
    pub fn attach_as_tracer(&mut self, tracer: EnclaveId, tracee: EnclaveId, hash: &str) -> Effect {
        let (Some(tr), Some(te)) = (self.enclaves.get(&tracer), self.enclaves.get(&tracee)) else {
            return reject("no such enclave");
        };
        if tr.role != Role::Tracer {
            return reject("caller is not a tracer");
        }
        if tr.counterpart.is_some() {
            return reject("tracer already attached");
        }
        if te.role != Role::Tracee {
            return reject("target is not a tracee");
        }
        if te.counterpart.is_some() {
            return reject("tracee already attached");
        }
        if te.expected_tracer_hash != hash {
            return reject("tracer hash mismatch");
        }
        let te = self.enclaves.get_mut(&tracee).unwrap();
        te.counterpart = Some(tracer);
        if te.verif_state != VerifState::Halted {
            te.runnable = true;
        }
        self.enclaves.get_mut(&tracer).unwrap().counterpart = Some(tracee);
        Effect::Attached
    }

    fn start(&mut self, tracee: EnclaveId) -> Effect {
        let Some(te) = self.enclaves.get_mut(&tracee) else {
            return reject("no such enclave");
        };
        if te.role != Role::Tracee {
            return reject("not a tracee");
        }
        if !te.runnable || te.counterpart.is_none() {
            return reject("tracee is not runnable");
        }
        if te.running {
            return reject("already running");
        }
        if !matches!(te.verif_state, VerifState::Gathering | VerifState::Verified) {
            return reject("awaiting verdict");
        }
        te.running = true;
        te.verif_state = VerifState::Gathering;
        te.shm_locked = true;
        Effect::Started
    }

    fn ecall(&mut self, tracee: EnclaveId) -> Effect {
        let switches = self.ipc.switches_per_ecall();
        let Some(te) = self.enclaves.get_mut(&tracee) else {
            return reject("no such enclave");
        };
        if te.role != Role::Tracee || !te.running {
            return reject("tracee is not running");
        }
        te.running = false;
        te.verif_state = VerifState::Pending;
        te.shm_locked = true;
        self.context_switches += switches;
        Effect::Trapped
    }

    /// Only the attached tracer may move its tracee out of `Pending`.
    pub fn set_cfa_verification_state(&mut self, caller: Option<EnclaveId>, tracee: EnclaveId, accept: bool) -> Effect {
        let Some(te) = self.enclaves.get(&tracee) else {
            return reject("no such enclave");
        };
        match caller {
            Some(c) if te.counterpart == Some(c) && self.enclaves.get(&c).is_some_and(|t| t.role == Role::Tracer) => {}
            _ => return reject("caller is not the attached tracer"),
        }
        if te.verif_state != VerifState::Pending {
            return reject("no pending measurement");
        }
        let te = self.enclaves.get_mut(&tracee).unwrap();
        if accept {
            te.verif_state = VerifState::Verified;
            te.shm_locked = false;
            Effect::Verified
        } else {
            te.verif_state = VerifState::Halted;
            te.shm_locked = true;
            te.runnable = false;
            Effect::Halted
        }
    }

    fn host_read_shm(&mut self, tracee: EnclaveId) -> Effect {
        match self.enclaves.get(&tracee) {
            Some(te) if te.role == Role::Tracee => {
                if te.shm_locked {
                    Effect::ReadDenied
                } else {
                    Effect::ReadGranted
                }
            }
            _ => reject("no attested region"),
        }
    }

    /// Record-level invariants; returns a description of the first broken one.
    pub fn check_records(&self) -> Option<String> {
        for e in self.enclaves.values() {
            if e.role != Role::Tracee && e.expected_tracer_hash != ZERO_HASH {
                return Some(format!("enclave {} has a tracer hash but is not a tracee", e.id));
            }
            if e.role == Role::Tracee {
                if e.verif_state != VerifState::Verified && !e.shm_locked {
                    return Some(format!("enclave {} region unlocked in state {:?}", e.id, e.verif_state));
                }
                if (e.runnable || e.running) && e.counterpart.is_none() {
                    return Some(format!("enclave {} runnable without a tracer", e.id));
                }
            }
        }
        None
    }
}

/// Outcome of replaying a script.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScriptStep {
    pub index: usize,
    pub event: ProtocolEvent,
    pub effect: Effect,
}

/// Replays `events` in order.
pub fn run_script(world: &mut World, events: &[ProtocolEvent]) -> Vec<ScriptStep> {
    events
        .iter()
        .enumerate()
        .map(|(index, event)| ScriptStep { index, event: event.clone(), effect: world.step(event) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACER_HASH: &str = "1111111111111111111111111111111111111111111111111111111111111111";
    const OTHER_HASH: &str = "2222222222222222222222222222222222222222222222222222222222222222";

    fn setup() -> World {
        let mut w = World::default();
        let events = [
            ProtocolEvent::Create {
                id: 1,
                role: Role::Tracee,
                identity: OTHER_HASH.into(),
                expected_tracer_hash: TRACER_HASH.into(),
            },
            ProtocolEvent::Create {
                id: 2,
                role: Role::Tracer,
                identity: TRACER_HASH.into(),
                expected_tracer_hash: ZERO_HASH.into(),
            },
            ProtocolEvent::Create {
                id: 3,
                role: Role::Tracer,
                identity: OTHER_HASH.into(),
                expected_tracer_hash: ZERO_HASH.into(),
            },
        ];
        for e in &events {
            assert_eq!(w.step(e), Effect::Created);
        }
        w
    }

    #[test]
    fn happy_path_reads_only_at_the_end() {
        let mut w = setup();
        let script = [
            ProtocolEvent::HostReadShm { tracee: 1 },
            ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 },
            ProtocolEvent::Start { tracee: 1 },
            ProtocolEvent::HostReadShm { tracee: 1 },
            ProtocolEvent::Ecall { tracee: 1 },
            ProtocolEvent::HostReadShm { tracee: 1 },
            ProtocolEvent::VerifyResult { tracer: 2, accept: true },
            ProtocolEvent::HostReadShm { tracee: 1 },
        ];
        let effects: Vec<Effect> = run_script(&mut w, &script).into_iter().map(|s| s.effect).collect();
        let granted: Vec<usize> =
            effects.iter().enumerate().filter(|(_, e)| **e == Effect::ReadGranted).map(|(i, _)| i).collect();
        assert_eq!(granted, vec![7]);
        assert_eq!(w.context_switches, 8);
    }

    #[test]
    fn mismatched_hash_is_rejected() {
        let mut w = setup();
        let before = w.clone();
        assert!(matches!(w.step(&ProtocolEvent::AttachAsTracer { tracer: 3, tracee: 1 }), Effect::Rejected(_)));
        assert_eq!(w, before);
        assert!(!w.enclave(1).unwrap().runnable);
    }

    #[test]
    fn second_attach_is_rejected() {
        let mut w = setup();
        assert_eq!(w.step(&ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 }), Effect::Attached);
        assert!(matches!(w.step(&ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 }), Effect::Rejected(_)));
    }

    #[test]
    fn nonzero_hash_for_non_tracee_is_rejected() {
        let mut w = World::default();
        let e = ProtocolEvent::Create {
            id: 9,
            role: Role::None,
            identity: OTHER_HASH.into(),
            expected_tracer_hash: TRACER_HASH.into(),
        };
        assert!(matches!(w.step(&e), Effect::Rejected(_)));
    }

    #[test]
    fn rejection_halts_for_good() {
        let mut w = setup();
        for e in [
            ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 },
            ProtocolEvent::Start { tracee: 1 },
            ProtocolEvent::Ecall { tracee: 1 },
        ] {
            w.step(&e);
        }
        assert_eq!(w.step(&ProtocolEvent::VerifyResult { tracer: 2, accept: false }), Effect::Halted);
        for _ in 0..3 {
            assert_eq!(w.step(&ProtocolEvent::HostReadShm { tracee: 1 }), Effect::ReadDenied);
        }
        assert!(matches!(w.step(&ProtocolEvent::Start { tracee: 1 }), Effect::Rejected(_)));
        assert!(matches!(w.step(&ProtocolEvent::VerifyResult { tracer: 2, accept: true }), Effect::Rejected(_)));
        assert_eq!(w.enclave(1).unwrap().verif_state, VerifState::Halted);
    }

    #[test]
    fn only_the_attached_tracer_sets_the_verdict() {
        let mut w = setup();
        for e in [
            ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 },
            ProtocolEvent::Start { tracee: 1 },
            ProtocolEvent::Ecall { tracee: 1 },
        ] {
            w.step(&e);
        }
        for caller in [None, Some(1), Some(3)] {
            let e = ProtocolEvent::SetCfaVerificationState { caller, tracee: 1, accept: true };
            assert!(matches!(w.step(&e), Effect::Rejected(_)));
        }
        assert_eq!(w.enclave(1).unwrap().verif_state, VerifState::Pending);
    }

    #[test]
    fn lock_reengages_when_the_tracee_resumes() {
        let mut w = setup();
        for e in [
            ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 },
            ProtocolEvent::Start { tracee: 1 },
            ProtocolEvent::Ecall { tracee: 1 },
            ProtocolEvent::VerifyResult { tracer: 2, accept: true },
        ] {
            w.step(&e);
        }
        assert_eq!(w.step(&ProtocolEvent::HostReadShm { tracee: 1 }), Effect::ReadGranted);
        assert_eq!(w.step(&ProtocolEvent::Start { tracee: 1 }), Effect::Started);
        assert_eq!(w.step(&ProtocolEvent::HostReadShm { tracee: 1 }), Effect::ReadDenied);
    }

    #[test]
    fn four_switch_model() {
        let mut w = World::new(IpcModel::FourSwitch);
        w.step(&ProtocolEvent::Create {
            id: 1,
            role: Role::Tracee,
            identity: OTHER_HASH.into(),
            expected_tracer_hash: TRACER_HASH.into(),
        });
        w.step(&ProtocolEvent::Create {
            id: 2,
            role: Role::Tracer,
            identity: TRACER_HASH.into(),
            expected_tracer_hash: ZERO_HASH.into(),
        });
        for e in [
            ProtocolEvent::AttachAsTracer { tracer: 2, tracee: 1 },
            ProtocolEvent::Start { tracee: 1 },
            ProtocolEvent::Ecall { tracee: 1 },
        ] {
            w.step(&e);
        }
        assert_eq!(w.context_switches, 4);
    }

    #[test]
    fn events_round_trip_as_json() {
        let e = ProtocolEvent::SetCfaVerificationState { caller: None, tracee: 1, accept: true };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"kind":"set_cfa_verification_state","caller":null,"tracee":1,"accept":true}"#);
        assert_eq!(serde_json::from_str::<ProtocolEvent>(&s).unwrap(), e);
    }
}
