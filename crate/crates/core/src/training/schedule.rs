use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of mini-batches covering `n` examples: `ceil(n / batch)`.
pub fn num_batches(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Sizes of the `ceil(n / batch)` mini-batches covering `n` examples, spread
/// as evenly as possible (larger ones first) so no batch is needlessly tiny.
pub fn batch_sizes(n: usize, batch: usize) -> Vec<usize> {
    let k = num_batches(n, batch);
    if k == 0 {
        return Vec::new();
    }
    let (base, extra) = (n / k, n % k);
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// One single-task mini-batch: indices into that task's training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledBatch {
    pub task: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
struct TaskCursor {
    order: Vec<usize>,
    sizes: Vec<usize>,
    /// Next batch within the current pass.
    counter: usize,
    /// Offset into `order` of that batch.
    offset: usize,
}

impl TaskCursor {
    fn restart<R: Rng>(&mut self, rng: &mut R) {
        self.order.shuffle(rng);
        self.counter = 0;
        self.offset = 0;
    }
}

/// Multitask mini-batch schedule: every epoch runs `n_iter` iterations, each
/// visiting all tasks once in a fresh random order; a task that has used up
/// its batches is reshuffled and starts over.
#[derive(Debug, Clone)]
pub struct MtlSchedule {
    pub batch_size: usize,
    /// Batches per pass over each task.
    pub n_d: Vec<usize>,
    /// Iterations per epoch, the maximum of `n_d`.
    pub n_iter: usize,
    cursors: Vec<TaskCursor>,
    /// Mid-epoch reshuffles per task during the last epoch.
    pub reshuffles: Vec<usize>,
}

impl MtlSchedule {
    pub fn new(task_sizes: &[usize], batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if task_sizes.is_empty() {
            return Err(Error::Config("schedule needs at least one task".into()));
        }
        if let Some(t) = task_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("task #{t} has no training examples")));
        }
        let n_d: Vec<usize> = task_sizes.iter().map(|&n| num_batches(n, batch_size)).collect();
        let n_iter = n_d.iter().copied().max().unwrap_or(0);
        let cursors = task_sizes
            .iter()
            .map(|&n| TaskCursor {
                order: (0..n).collect(),
                sizes: batch_sizes(n, batch_size),
                counter: 0,
                offset: 0,
            })
            .collect();
        Ok(Self {
            batch_size,
            n_d,
            n_iter,
            cursors,
            reshuffles: vec![0; task_sizes.len()],
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.cursors.len()
    }

    /// The ordered batches of one epoch.
    pub fn epoch<R: Rng>(&mut self, rng: &mut R) -> Vec<ScheduledBatch> {
        for c in &mut self.cursors {
            c.restart(rng);
        }
        self.reshuffles.iter_mut().for_each(|r| *r = 0);
        let mut tasks: Vec<usize> = (0..self.num_tasks()).collect();
        let mut plan = Vec::with_capacity(self.n_iter * tasks.len());
        for _ in 0..self.n_iter {
            tasks.shuffle(rng);
            for &t in &tasks {
                let c = &mut self.cursors[t];
                if c.counter == c.sizes.len() {
                    c.restart(rng);
                    self.reshuffles[t] += 1;
                }
                let size = c.sizes[c.counter];
                plan.push(ScheduledBatch {
                    task: t,
                    indices: c.order[c.offset..c.offset + size].to_vec(),
                });
                c.counter += 1;
                c.offset += size;
            }
        }
        plan
    }
}
