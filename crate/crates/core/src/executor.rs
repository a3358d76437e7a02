//! Batch dispatch of independent jobs with order-preserving results.
//!
//! With the `parallel` feature (default) batches run on a rayon pool sized to
//! the requested worker count; without it every batch runs sequentially.
//! Results never depend on the worker count: each job is a pure function of
//! its inputs and its seed is hashed from its identity, not its schedule.

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "TWINTUNE_WORKERS";

/// Seed stream tags; part of the hashed job identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobKind {
    Sigma,
    SpsaPlus,
    SpsaMinus,
    Safety,
    Target,
    Validation,
}

impl JobKind {
    pub fn tag(self) -> u64 {
        match self {
            JobKind::Sigma => 1,
            JobKind::SpsaPlus => 2,
            JobKind::SpsaMinus => 3,
            JobKind::Safety => 4,
            JobKind::Target => 5,
            JobKind::Validation => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            JobKind::Sigma => "sigma",
            JobKind::SpsaPlus => "spsa+",
            JobKind::SpsaMinus => "spsa-",
            JobKind::Safety => "safety",
            JobKind::Target => "target",
            JobKind::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobId {
    pub k: usize,
    pub index: usize,
    pub kind: JobKind,
}

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[k={}, j={}]", self.kind.name(), self.k, self.index)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chained splitmix64 over `(campaign_seed, k, j, stream)`.
pub fn derive_seed(campaign_seed: u64, k: u64, j: u64, stream: u64) -> u64 {
    [k, j, stream]
        .iter()
        .fold(splitmix64(campaign_seed), |h, &v| splitmix64(h ^ splitmix64(v)))
}

pub fn job_seed(campaign_seed: u64, id: JobId) -> u64 {
    derive_seed(campaign_seed, id.k as u64, id.index as u64, id.kind.tag())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobFailure {
    pub index: usize,
    pub message: String,
}

pub type JobOutcome<R> = Result<R, JobFailure>;

/// Worker count: `TWINTUNE_WORKERS` if set, else `requested`, else the
/// available parallelism.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        return n.max(1);
    }
    requested
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn run_one<J, R>(index: usize, job: &J, f: &(impl Fn(&J) -> Result<R, String> + Sync)) -> JobOutcome<R> {
    match catch_unwind(AssertUnwindSafe(|| f(job))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(message)) => Err(JobFailure { index, message }),
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "job panicked".to_string());
            Err(JobFailure { index, message })
        }
    }
}

/// Runs every job once on the calling thread, in order.
pub fn execute_sequential<J, R>(jobs: &[J], f: impl Fn(&J) -> Result<R, String> + Sync) -> Vec<JobOutcome<R>> {
    jobs.iter().enumerate().map(|(i, job)| run_one(i, job, &f)).collect()
}

/// Runs the batch on `workers` threads; results are in job order. A failing or
/// panicking job becomes an `Err` entry and never aborts the batch.
#[cfg(feature = "parallel")]
pub fn execute_batch<J, R>(jobs: &[J], workers: usize, f: impl Fn(&J) -> Result<R, String> + Sync) -> Vec<JobOutcome<R>>
where
    J: Sync,
    R: Send,
{
    use rayon::prelude::*;

    if workers <= 1 || jobs.len() <= 1 {
        return execute_sequential(jobs, f);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(_) => return execute_sequential(jobs, f),
    };
    pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .with_max_len(1)
            .map(|(i, job)| run_one(i, job, &f))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
pub fn execute_batch<J, R>(jobs: &[J], _workers: usize, f: impl Fn(&J) -> Result<R, String> + Sync) -> Vec<JobOutcome<R>>
where
    J: Sync,
    R: Send,
{
    execute_sequential(jobs, f)
}
