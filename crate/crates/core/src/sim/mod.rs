// SPDX-License-Identifier: Apache-2.0

//! Replay of block traces into counter measurements, and random valid walks.

mod walk;

use thiserror::Error;

use crate::cfg::{split_trace, AnnotatedCfg, BlockTrace, CfgError, Measurement, MeasurementLog};
use crate::hpc::{BlockDeltas, CounterConfig, EventTable, HpcError};
use crate::preprocess::PreprocessError;
use crate::vector::CounterVector;

pub use walk::{random_valid_walk, WalkConstraints};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Hpc(#[from] HpcError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("offset has {found} components, expected {expected}")]
    Offset { expected: usize, found: usize },
    #[error("no walk satisfying the constraints found after {attempts} attempts")]
    WalkFailed { attempts: usize },
}

/// Stand-in for the counter snapshots taken at each measurement point.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    cfg: &'a AnnotatedCfg,
    deltas: BlockDeltas,
    config: CounterConfig,
    offset: Option<CounterVector>,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a AnnotatedCfg, table: Option<&EventTable>, config: CounterConfig) -> Result<Self, SimError> {
        let deltas = BlockDeltas::resolve(cfg, table)?;
        Self::from_deltas(cfg, deltas, config)
    }

    pub fn from_deltas(cfg: &'a AnnotatedCfg, deltas: BlockDeltas, config: CounterConfig) -> Result<Self, SimError> {
        if config.input_dimension() != deltas.dimension() {
            return Err(HpcError::Dimension {
                what: "counter configuration".into(),
                expected: deltas.dimension(),
                found: config.input_dimension(),
            }
            .into());
        }
        config.check_deterministic(deltas.counters())?;
        Ok(Simulator { cfg, deltas, config, offset: None })
    }

    /// Adds a constant footprint to every snapshot difference.
    pub fn with_offset(mut self, offset: Option<CounterVector>) -> Result<Self, SimError> {
        if let Some(o) = &offset {
            if o.dim() != self.config.output_dimension() {
                return Err(SimError::Offset { expected: self.config.output_dimension(), found: o.dim() });
            }
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn config(&self) -> &CounterConfig {
        &self.config
    }

    pub fn deltas(&self) -> &BlockDeltas {
        &self.deltas
    }

    /// Full-dimension delta of a segment: every block after the start point.
    pub fn raw_segment_delta(&self, segment: &BlockTrace) -> CounterVector {
        let mut sum = CounterVector::zeros(self.deltas.dimension());
        for &b in segment.steps.iter().skip(1) {
            sum += self.deltas.get(b);
        }
        sum
    }

    /// Measurement for one segment whose first and last blocks are
    /// measurement points.
    pub fn measure_segment(&self, segment: &BlockTrace) -> Measurement {
        let mut delta = self.config.project(&self.raw_segment_delta(segment));
        if let Some(o) = &self.offset {
            delta += o;
        }
        Measurement {
            start: self.cfg.block(segment.steps[0]).id.clone(),
            end: self.cfg.block(*segment.steps.last().expect("nonempty segment")).id.clone(),
            delta,
        }
    }

    /// One measurement per segment of the trace.
    pub fn measure(&self, trace: &BlockTrace) -> Result<Vec<Measurement>, SimError> {
        Ok(split_trace(self.cfg, trace)?.iter().map(|s| self.measure_segment(s)).collect())
    }

    /// The measurement document for `measurements`.
    pub fn log(&self, measurements: &[Measurement]) -> MeasurementLog {
        MeasurementLog {
            cfg_ref: self.cfg.digest().to_string(),
            counters: self.config.names(self.deltas.counters()),
            measurements: measurements.iter().map(Measurement::to_document).collect(),
        }
    }
}

/// Measures `trace` under `config`.
pub fn measure(
    cfg: &AnnotatedCfg,
    table: Option<&EventTable>,
    config: &CounterConfig,
    trace: &BlockTrace,
) -> Result<Vec<Measurement>, SimError> {
    Simulator::new(cfg, table, config.clone())?.measure(trace)
}

/// Reads measurements back from a document.
pub fn measurements_from_log(log: &MeasurementLog) -> Vec<Measurement> {
    log.measurements.iter().map(Measurement::from_document).collect()
}
