use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{DadiError, Result};

/// Runs `work` over `jobs` on up to `workers` threads. A failing job does not
/// stop the others; afterwards the first failure (in job order) is returned
/// and the rest are logged.
pub fn run_jobs<J, L, F>(jobs: &[J], workers: usize, label: L, work: F) -> Result<()>
where
    J: Sync,
    L: Fn(&J) -> String + Sync,
    F: Fn(&J) -> Result<()> + Sync,
{
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let drain = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = jobs.get(i) else { break };
        if let Err(e) = work(job) {
            log::error!("{} failed: {e}", label(job));
            failures.lock().expect("no panics while held").push((i, label(job), e));
        }
    };
    let threads = workers.clamp(1, jobs.len().max(1));
    if threads == 1 {
        drain();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(drain);
            }
        });
    }
    let mut failures = failures.into_inner().expect("no panics while held");
    failures.sort_by_key(|f| f.0);
    match failures.into_iter().next() {
        None => Ok(()),
        Some((_, cell, e)) => Err(DadiError::CellFailed {
            cell,
            message: e.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_job_runs_once() {
        for workers in [1, 3, 16] {
            let hits: Vec<AtomicUsize> = (0..10).map(|_| AtomicUsize::new(0)).collect();
            let jobs: Vec<usize> = (0..10).collect();
            run_jobs(&jobs, workers, |j| j.to_string(), |&j| {
                hits[j].fetch_add(1, Ordering::Relaxed);
                Ok(())
            })
            .unwrap();
            assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
        }
    }

    #[test]
    fn failures_do_not_stop_other_jobs() {
        let done = AtomicUsize::new(0);
        let jobs: Vec<usize> = (0..6).collect();
        let err = run_jobs(&jobs, 2, |j| format!("job{j}"), |&j| {
            done.fetch_add(1, Ordering::Relaxed);
            if j % 2 == 1 {
                Err(DadiError::InvalidArgument(format!("odd {j}")))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert_eq!(done.load(Ordering::Relaxed), 6);
        match err {
            DadiError::CellFailed { cell, message } => {
                assert_eq!(cell, "job1");
                assert!(message.contains("odd 1"));
            }
            other => panic!("{other}"),
        }
    }
}
