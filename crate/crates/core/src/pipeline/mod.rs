//! Datasets, configuration, training and evaluation.

mod config;
mod data;
mod eval;
mod optim;
mod synth;
mod train;

pub use config::{EvalConfig, RunConfig, TrainConfig};
pub use data::{preprocess, read_actions, write_actions, Dataset, SkeletonSequence, ACTIONS_FILE};
pub use eval::{evaluate, predict, EvalReport, Prediction, SequenceScores};
pub use optim::Adam;
pub use synth::{synth_generate, synth_positions, synth_topology, SynthConfig, SYNTH_ACTIONS, SYNTH_JOINTS};
pub use train::{
    load_checkpoint, load_resources, save_checkpoint, train, train_on, CheckpointMeta, EpochLog, Resources,
    TrainedModel,
};

/// Upper bound on worker threads: `TRG_THREADS` if set, otherwise the
/// available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("TRG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Order-preserving map over `items` on up to `threads` scoped threads.
pub(crate) fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = par_map(&items, 4, |i, x| i * 100 + x);
        assert_eq!(out, (0..37).map(|i| i * 101).collect::<Vec<_>>());
    }
}
