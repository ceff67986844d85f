//! Bounded parallel evaluation. Work items are independent; workers pull
//! from a shared queue and push results to a shared vec; the merge sorts by
//! uid so nothing downstream can observe completion order.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::anneal::Candidate;
use crate::eval::{EvalBackend, EvalError, PpaRecord};
use crate::netlist::Netlist;

pub fn evaluate_batch(
    backend: &dyn EvalBackend,
    netlist: &Netlist,
    candidates: &[&Candidate],
    max_parallel: usize,
) -> Vec<(u64, Result<PpaRecord, EvalError>)> {
    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..candidates.len()).collect());
    let results: Mutex<Vec<(u64, Result<PpaRecord, EvalError>)>> =
        Mutex::new(Vec::with_capacity(candidates.len()));
    let workers = max_parallel.max(1).min(candidates.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = match queue.lock().unwrap().pop_front() {
                    Some(index) => index,
                    None => break,
                };
                let candidate = candidates[index];
                let outcome = backend.evaluate(netlist, candidate);
                results.lock().unwrap().push((candidate.uid, outcome));
            });
        }
    });

    let mut out = results.into_inner().unwrap();
    out.sort_by_key(|(uid, _)| *uid);
    out
}
