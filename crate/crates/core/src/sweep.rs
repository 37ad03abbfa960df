//! Parallel evaluation of every candidate in a grid.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{CriterionSpec, EvalError};
use crate::ehr::PatientStore;
use crate::grid::{enumerate, CandidateGrid, GridError, DEFAULT_MAX_CANDIDATES};
use crate::pipeline::{evaluate_candidate, CandidateEvaluation, EvalConfig};
use crate::results::{data_fingerprint, ResultRecord, ResultsHeader, ResultsTable, ENGINE_VERSION};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("candidate {id}: {source}")]
    Eval { id: u64, source: EvalError },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("sweep cancelled")]
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub max_candidates: u64,
    /// Keep per-candidate matched cohorts and series in the output.
    pub keep_details: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { threads: 0, max_candidates: DEFAULT_MAX_CANDIDATES, keep_details: false }
    }
}

/// Shared progress counters for a running sweep.
#[derive(Debug, Default)]
pub struct Progress {
    pub done: AtomicU64,
    pub total: AtomicU64,
    pub cancel: AtomicBool,
}

pub struct SweepOutput {
    pub table: ResultsTable,
    pub grid: CandidateGrid,
    /// Present when `keep_details` was set; ascending by candidate id.
    pub details: Vec<CandidateEvaluation>,
}

/// Evaluates every candidate. Output is independent of the thread count.
pub fn run_sweep(
    store: &PatientStore,
    spec: &CriterionSpec,
    config: &EvalConfig,
    options: &SweepOptions,
    progress: Option<&Progress>,
) -> Result<SweepOutput, SweepError> {
    let grid = enumerate(spec, options.max_candidates)?;
    if let Some(p) = progress {
        p.total.store(grid.len(), Ordering::Relaxed);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let evaluations: Vec<CandidateEvaluation> = pool.install(|| {
        (0..grid.len())
            .into_par_iter()
            .map(|id| {
                if progress.is_some_and(|p| p.cancel.load(Ordering::Relaxed)) {
                    return Err(SweepError::Cancelled);
                }
                let assignment = grid.assignment(id)?;
                let eval = evaluate_candidate(store, spec, &assignment, config, false)
                    .map_err(|source| SweepError::Eval { id, source })?;
                if let Some(p) = progress {
                    p.done.fetch_add(1, Ordering::Relaxed);
                }
                Ok(if options.keep_details {
                    eval
                } else {
                    CandidateEvaluation { matched: None, propensity: None, smd: None, kidney: None, liver: None, ..eval }
                })
            })
            .collect::<Result<_, _>>()
    })?;
    let records: Vec<ResultRecord> = evaluations.iter().map(|e| ResultRecord::from(&e.outcome)).collect();
    let table = ResultsTable {
        header: ResultsHeader {
            engine_version: ENGINE_VERSION.to_string(),
            spec_hash: spec.hash(),
            data_fingerprint: data_fingerprint(store),
            config: config.clone(),
            grid: grid.manifest(),
        },
        records,
    };
    let details = if options.keep_details { evaluations } else { Vec::new() };
    Ok(SweepOutput { table, grid, details })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;
    use crate::ehr::{generate_synthetic, SyntheticConfig};

    #[test]
    fn thread_count_does_not_change_output() {
        let store = generate_synthetic(&SyntheticConfig { n_patients: 400, ..Default::default() }, 3).unwrap();
        let spec = parse_spec(
            "INTERVENTION: has_event(\"hydrocortisone\")\n\
             INCLUDE age: age >= $a\n\
             INCLUDE vent: mechanical_ventilation = $v\n\
             ADJUST $a IN {18, 60, 99}\n\
             ADJUST $v IN {true, false}\n",
        )
        .unwrap();
        let cfg = EvalConfig::default();
        let one = run_sweep(&store, &spec, &cfg, &SweepOptions { threads: 1, ..Default::default() }, None).unwrap();
        let four = run_sweep(&store, &spec, &cfg, &SweepOptions { threads: 4, ..Default::default() }, None).unwrap();
        assert_eq!(one.table.to_json(), four.table.to_json());
        assert_eq!(one.table.records.len(), 6);
        assert!(one.table.records.iter().map(|r| r.candidate_id).eq(0..6));
        // age >= 99 leaves (almost) nobody, which must not crash the sweep.
        assert!(one.table.records.iter().any(|r| r.status.is_ok()));
    }

    #[test]
    fn cancelled_sweep_stops() {
        let store = generate_synthetic(&SyntheticConfig { n_patients: 50, ..Default::default() }, 1).unwrap();
        let spec = parse_spec("INTERVENTION: has_event(\"hydrocortisone\")").unwrap();
        let progress = Progress::default();
        progress.cancel.store(true, Ordering::Relaxed);
        let res = run_sweep(&store, &spec, &EvalConfig::default(), &SweepOptions::default(), Some(&progress));
        assert!(matches!(res, Err(SweepError::Cancelled)));
    }
}
