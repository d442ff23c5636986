use serde::{Deserialize, Serialize};

/// Multichannel waveform stored channel-major (`data[ch * samples + t]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub channels: usize,
    pub samples: usize,
    pub data: Vec<f32>,
}

impl Signal {
    pub fn zeros(channels: usize, samples: usize) -> Self {
        Signal {
            channels,
            samples,
            data: vec![0.0; channels * samples],
        }
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * self.samples..(ch + 1) * self.samples]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f32] {
        &mut self.data[ch * self.samples..(ch + 1) * self.samples]
    }

    pub fn is_empty(&self) -> bool {
        self.channels == 0 || self.samples == 0
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f32) -> Signal {
        Signal {
            channels: self.channels,
            samples: self.samples,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}
