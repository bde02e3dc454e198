// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{Effect, EnclaveId, ProtocolEvent, Role, VerifState, World, ZERO_HASH};

pub const TRACEE: EnclaveId = 1;
pub const TRACER: EnclaveId = 2;
pub const ROGUE_TRACER: EnclaveId = 3;
pub const BYSTANDER: EnclaveId = 4;

const TRACER_HASH: &str = "5d41402abc4b2a76b9719d911017c5925d41402abc4b2a76b9719d911017c592";
const ROGUE_HASH: &str = "7e240de74fb1ed08fa08d38063f6a6a97e240de74fb1ed08fa08d38063f6a6a9";
const TRACEE_HASH: &str = "a94a8fe5ccb19ba61c4c0873d391e987a94a8fe5ccb19ba61c4c0873d391e987";

/// A tracee expecting [`TRACER`], the genuine tracer, a tracer with the
/// wrong measurement, and an unrelated enclave.
pub fn standard_world(ipc: super::IpcModel) -> World {
    let mut w = World::new(ipc);
    let create = |id, role, identity: &str, expected: &str| ProtocolEvent::Create {
        id,
        role,
        identity: identity.into(),
        expected_tracer_hash: expected.into(),
    };
    for e in [
        create(TRACEE, Role::Tracee, TRACEE_HASH, TRACER_HASH),
        create(TRACER, Role::Tracer, TRACER_HASH, ZERO_HASH),
        create(ROGUE_TRACER, Role::Tracer, ROGUE_HASH, ZERO_HASH),
        create(BYSTANDER, Role::None, ROGUE_HASH, ZERO_HASH),
    ] {
        let effect = w.step(&e);
        debug_assert_eq!(effect, Effect::Created);
    }
    w
}

/// Events a correct tracer, tracee and curious host produce.
pub fn honest_alphabet() -> Vec<ProtocolEvent> {
    vec![
        ProtocolEvent::AttachAsTracer { tracer: TRACER, tracee: TRACEE },
        ProtocolEvent::Start { tracee: TRACEE },
        ProtocolEvent::Ecall { tracee: TRACEE },
        ProtocolEvent::VerifyResult { tracer: TRACER, accept: true },
        ProtocolEvent::VerifyResult { tracer: TRACER, accept: false },
        ProtocolEvent::HostReadShm { tracee: TRACEE },
    ]
}

/// The honest events plus forged attaches and verdicts from every other
/// party.
pub fn adversarial_alphabet() -> Vec<ProtocolEvent> {
    let mut events = honest_alphabet();
    events.extend([
        ProtocolEvent::AttachAsTracer { tracer: ROGUE_TRACER, tracee: TRACEE },
        ProtocolEvent::AttachAsTracer { tracer: BYSTANDER, tracee: TRACEE },
        ProtocolEvent::VerifyResult { tracer: ROGUE_TRACER, accept: true },
        ProtocolEvent::Ecall { tracee: BYSTANDER },
        ProtocolEvent::HostReadShm { tracee: BYSTANDER },
    ]);
    for caller in [None, Some(TRACEE), Some(ROGUE_TRACER), Some(BYSTANDER)] {
        events.push(ProtocolEvent::SetCfaVerificationState { caller, tracee: TRACEE, accept: true });
    }
    events.push(ProtocolEvent::SetCfaVerificationState { caller: Some(TRACER), tracee: TRACEE, accept: true });
    events
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: String,
    /// Events from the initial world up to and including the offending one.
    pub events: Vec<ProtocolEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExploreReport {
    pub depth: usize,
    pub states: usize,
    pub transitions: u64,
    pub reads_granted: u64,
    pub reads_denied: u64,
    /// Granted reads whose tracee was not in `VERIFIED`.
    pub reads_outside_verified: u64,
    pub halted_states: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("exploration exceeds the state budget of {0}")]
pub struct StateBudget(pub usize);

/// Checks one transition against the safety properties.
fn transition_violations(before: &World, event: &ProtocolEvent, effect: &Effect, after: &World) -> Vec<String> {
    let mut found = Vec::new();
    if let (ProtocolEvent::HostReadShm { tracee }, Effect::ReadGranted) = (event, effect) {
        if before.enclave(*tracee).is_some_and(|t| t.verif_state != VerifState::Verified) {
            found.push("host read the shared region outside VERIFIED".to_string());
        }
    }
    for (id, old) in &before.enclaves {
        let Some(new) = after.enclave(*id) else {
            found.push(format!("enclave {id} disappeared"));
            continue;
        };
        if old.verif_state == VerifState::Halted
            && (new.verif_state != VerifState::Halted || new.runnable || new.running || !new.shm_locked)
        {
            found.push(format!("enclave {id} left HALTED"));
        }
        if old.verif_state == VerifState::Pending && new.verif_state != VerifState::Pending {
            let by_tracer = match event {
                ProtocolEvent::VerifyResult { tracer, .. } => old.counterpart == Some(*tracer),
                ProtocolEvent::SetCfaVerificationState { caller, .. } => caller.is_some() && old.counterpart == *caller,
                _ => false,
            };
            if !by_tracer {
                found.push(format!("enclave {id} left PENDING without its tracer"));
            }
        }
        if old.role == Role::Tracee && new.running && !old.running && old.counterpart.is_none() {
            found.push(format!("enclave {id} ran without a tracer"));
        }
    }
    if let Some(msg) = after.check_records() {
        found.push(msg);
    }
    found
}

/// Breadth-first search over every interleaving of `alphabet` up to
/// `depth` events, checking the safety properties on each transition.
pub fn explore(
    initial: &World,
    alphabet: &[ProtocolEvent],
    depth: usize,
    state_budget: usize,
) -> Result<ExploreReport, StateBudget> {
    // Parent links for reconstructing violation traces.
    let mut states: Vec<(World, Option<(usize, usize)>)> = vec![(initial.clone(), None)];
    let mut index: HashMap<World, usize> = HashMap::from([(initial.clone(), 0)]);
    let mut frontier = vec![0usize];
    let mut report = ExploreReport {
        depth,
        states: 1,
        transitions: 0,
        reads_granted: 0,
        reads_denied: 0,
        reads_outside_verified: 0,
        halted_states: 0,
        violations: Vec::new(),
    };
    if let Some(msg) = initial.check_records() {
        report.violations.push(Violation { invariant: msg, events: Vec::new() });
    }

    let path_to = |states: &[(World, Option<(usize, usize)>)], mut s: usize| {
        let mut events = Vec::new();
        while let Some((parent, e)) = states[s].1 {
            events.push(alphabet[e].clone());
            s = parent;
        }
        events.reverse();
        events
    };

    for _ in 0..depth {
        let expanded: Vec<Vec<(usize, usize, Effect, World, Vec<String>)>> = frontier
            .par_iter()
            .map(|&s| {
                let before = &states[s].0;
                alphabet
                    .iter()
                    .enumerate()
                    .map(|(e, event)| {
                        let mut after = before.clone();
                        let effect = after.step(event);
                        let bad = transition_violations(before, event, &effect, &after);
                        (s, e, effect, after, bad)
                    })
                    .collect()
            })
            .collect();
        let mut next = Vec::new();
        for (s, e, effect, after, bad) in expanded.into_iter().flatten() {
            report.transitions += 1;
            match effect {
                Effect::ReadGranted => {
                    report.reads_granted += 1;
                    if let ProtocolEvent::HostReadShm { tracee } = &alphabet[e] {
                        if states[s].0.enclave(*tracee).is_some_and(|t| t.verif_state != VerifState::Verified) {
                            report.reads_outside_verified += 1;
                        }
                    }
                }
                Effect::ReadDenied => report.reads_denied += 1,
                _ => {}
            }
            for invariant in bad {
                let mut events = path_to(&states, s);
                events.push(alphabet[e].clone());
                report.violations.push(Violation { invariant, events });
            }
            if !index.contains_key(&after) {
                if states.len() >= state_budget {
                    return Err(StateBudget(state_budget));
                }
                index.insert(after.clone(), states.len());
                next.push(states.len());
                states.push((after, Some((s, e))));
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    report.states = states.len();
    report.halted_states =
        states.iter().filter(|(w, _)| w.enclaves.values().any(|r| r.verif_state == VerifState::Halted)).count();
    Ok(report)
}
