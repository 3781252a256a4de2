//! Fixed-length observation history, flattened oldest-first.

/// Ring of the last `len` observation frames as one flat `[len * obs_dim]`
/// vector. Young episodes are zero-padded in the leading (oldest) slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    data: Vec<f32>,
    obs_dim: usize,
}

impl ObservationHistory {
    pub fn new(len: usize, obs_dim: usize) -> Self {
        ObservationHistory { data: vec![0.0; len * obs_dim], obs_dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// Zero-fill; call at episode boundaries.
    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    /// Append the newest frame, dropping the oldest.
    pub fn push(&mut self, frame: &[f32]) {
        assert_eq!(frame.len(), self.obs_dim, "frame width mismatch");
        self.data.copy_within(self.obs_dim.., 0);
        let tail = self.data.len() - self.obs_dim;
        self.data[tail..].copy_from_slice(frame);
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}
