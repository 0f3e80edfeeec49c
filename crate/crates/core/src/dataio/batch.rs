use super::features::VideoRecord;
use super::manifest::Label;
use crate::error::{Error, Result};
use crate::numerics::{Mat, RngState, SeededRng};

/// Up to `b` temporally consecutive segments of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub video_id: String,
    /// Index of the parent video within its dataset.
    pub video_index: usize,
    pub label: Label,
    pub start_segment: usize,
    pub rows: Mat,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }
}

/// Splits a video into `ceil(m / b)` non-overlapping batches. The final batch
/// keeps the `m mod b` leftover segments rather than padding them.
pub fn form_batches(video: &VideoRecord, video_index: usize, b: usize) -> Result<Vec<Batch>> {
    if b < 2 {
        return Err(Error::Config(format!("batch size {b} must be at least 2")));
    }
    let m = video.segments();
    Ok((0..m)
        .step_by(b)
        .map(|start| Batch {
            video_id: video.video_id.clone(),
            video_index,
            label: video.label,
            start_segment: start,
            rows: video.features.slice_rows(start, (start + b).min(m)),
        })
        .collect())
}

/// One draw from a [`RandomBatchSelector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub index: usize,
    /// Position of this draw's epoch, counting from zero.
    pub epoch: u64,
    /// True when this draw was the last of its epoch.
    pub ends_epoch: bool,
}

/// Cycles through batch indices one epoch at a time. In shuffled mode each
/// epoch is a fresh seeded permutation (sampling without replacement); in
/// sequential mode the order is `0..K` every epoch.
#[derive(Clone, Debug)]
pub struct RandomBatchSelector {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    rng: SeededRng,
    shuffle: bool,
}

/// Serializable position of a [`RandomBatchSelector`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectorState {
    pub order: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
    pub rng: RngState,
    pub shuffle: bool,
}

impl RandomBatchSelector {
    pub fn new(k: usize, seed: u64) -> Self {
        Self::build(k, SeededRng::new(seed), true)
    }

    /// Visits batches in dataset order, without shuffling.
    pub fn sequential(k: usize) -> Self {
        Self::build(k, SeededRng::new(0), false)
    }

    fn build(k: usize, mut rng: SeededRng, shuffle: bool) -> Self {
        assert!(k > 0, "selector needs at least one batch");
        let order = if shuffle { rng.permutation(k) } else { (0..k).collect() };
        Self { order, cursor: 0, epoch: 0, rng, shuffle }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_draw(&mut self) -> Draw {
        let index = self.order[self.cursor];
        let epoch = self.epoch;
        self.cursor += 1;
        let ends_epoch = self.cursor == self.order.len();
        if ends_epoch {
            self.cursor = 0;
            self.epoch += 1;
            if self.shuffle {
                self.rng.shuffle(&mut self.order);
            }
        }
        Draw { index, epoch, ends_epoch }
    }

    pub fn state(&self) -> SelectorState {
        SelectorState {
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
            rng: self.rng.state(),
            shuffle: self.shuffle,
        }
    }

    pub fn from_state(state: SelectorState) -> Result<Self> {
        if state.order.is_empty() || state.cursor >= state.order.len() {
            return Err(Error::Config("selector state out of range".into()));
        }
        Ok(Self {
            cursor: state.cursor,
            epoch: state.epoch,
            rng: SeededRng::from_state(state.rng),
            shuffle: state.shuffle,
            order: state.order,
        })
    }
}
