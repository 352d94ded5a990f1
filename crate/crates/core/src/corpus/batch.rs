use alloc::vec::Vec;

use crate::{Error, Result};

/// One truncated-BPTT window. Both id arrays are time-major:
/// entry `t * batch + b` belongs to lane `b` at step `t`, and
/// `targets` are the inputs shifted one step ahead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Window {
    pub fn tokens(&self) -> usize {
        self.batch * self.steps
    }
}

/// A token sequence cut into `batch` contiguous lanes and walked in windows
/// of `steps` predictions. Recurrent state carries from one window to the
/// next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchStream {
    lanes: Vec<Vec<usize>>,
    steps: usize,
}

/// Splits `ids` into `batch` equal lanes (dropping the remainder) and
/// windows them by `steps`. There are `⌊(len/batch − 1)/steps⌋` windows.
pub fn batchify(ids: &[usize], batch: usize, steps: usize) -> Result<BatchStream> {
    if batch == 0 || steps == 0 {
        return Err(Error::Argument("batch size and unroll length must be positive".into()));
    }
    if batch * steps > ids.len() {
        return Err(Error::Argument(alloc::format!(
            "{} ids cannot fill {batch} lanes of {steps} steps",
            ids.len()
        )));
    }
    let lane_len = ids.len() / batch;
    let lanes: Vec<Vec<usize>> = ids.chunks_exact(lane_len).take(batch).map(<[usize]>::to_vec).collect();
    let stream = BatchStream { lanes, steps };
    if stream.num_windows() == 0 {
        return Err(Error::Argument(alloc::format!(
            "lanes of {lane_len} ids leave no complete window of {steps} predictions"
        )));
    }
    Ok(stream)
}

impl BatchStream {
    pub fn batch(&self) -> usize {
        self.lanes.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lanes(&self) -> &[Vec<usize>] {
        &self.lanes
    }

    pub fn num_windows(&self) -> usize {
        let len = self.lanes.first().map_or(0, Vec::len);
        len.saturating_sub(1) / self.steps
    }

    pub fn num_tokens(&self) -> usize {
        self.num_windows() * self.steps * self.batch()
    }

    pub fn window(&self, i: usize) -> Window {
        assert!(i < self.num_windows(), "window {i} out of range");
        let (b, t) = (self.batch(), self.steps);
        let mut inputs = Vec::with_capacity(b * t);
        let mut targets = Vec::with_capacity(b * t);
        for step in 0..t {
            let pos = i * t + step;
            for lane in &self.lanes {
                inputs.push(lane[pos]);
                targets.push(lane[pos + 1]);
            }
        }
        Window { batch: b, steps: t, inputs, targets }
    }

    pub fn windows(&self) -> impl Iterator<Item = Window> + '_ {
        (0..self.num_windows()).map(|i| self.window(i))
    }
}
