// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use super::explore::{standard_world, TRACEE, TRACER};
use super::{IpcModel, ProtocolEvent, ScriptStep, World};
use crate::cfg::Measurement;
use crate::verifier::{SessionState, Verdict, Verifier};

/// The protocol driven by real verdicts: one ecall per measurement, with a
/// host read after every verdict.
#[derive(Clone, Debug, Serialize)]
pub struct AttestedRun {
    pub steps: Vec<ScriptStep>,
    pub world: World,
    /// Segment at which the tracee was halted.
    pub halted_at: Option<usize>,
}

pub fn attested_run(verifier: &Verifier<'_>, measurements: &[Measurement], ipc: IpcModel) -> AttestedRun {
    let mut world = standard_world(ipc);
    let mut steps = Vec::new();
    let mut push = |world: &mut World, event: ProtocolEvent| {
        let effect = world.step(&event);
        steps.push(ScriptStep { index: steps.len(), event, effect });
    };
    push(&mut world, ProtocolEvent::AttachAsTracer { tracer: TRACER, tracee: TRACEE });
    let mut state = SessionState::new();
    let mut halted_at = None;
    for (i, m) in measurements.iter().enumerate() {
        push(&mut world, ProtocolEvent::Start { tracee: TRACEE });
        push(&mut world, ProtocolEvent::Ecall { tracee: TRACEE });
        let accept = verifier.verify_segment(&mut state, m).verdict == Verdict::Accepted;
        push(&mut world, ProtocolEvent::VerifyResult { tracer: TRACER, accept });
        push(&mut world, ProtocolEvent::HostReadShm { tracee: TRACEE });
        if !accept {
            halted_at = Some(i);
            break;
        }
    }
    AttestedRun { steps, world, halted_at }
}
