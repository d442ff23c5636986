//! Frozen random-convolution feature surrogate.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize, BranchConfig, BranchId, PatchExtent};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::signal::Signal;

/// Latent patches of one record in one branch (`P × dim`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub record_id: u64,
    pub branch: BranchId,
    pub dim: usize,
    pub patches: Vec<f64>,
    /// At least one patch had zero norm and was left as zeros.
    pub degenerate: bool,
}

impl LatentMap {
    pub fn positions(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.patches.len() / self.dim
        }
    }

    pub fn patch(&self, position: usize) -> &[f64] {
        &self.patches[position * self.dim..(position + 1) * self.dim]
    }

    pub fn iter_patches(&self) -> impl Iterator<Item = &[f64]> {
        self.patches.chunks_exact(self.dim)
    }
}

/// All branch latents of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLatents {
    pub record_id: u64,
    pub maps: Vec<LatentMap>,
}

impl RecordLatents {
    pub fn get(&self, branch: BranchId) -> Option<&LatentMap> {
        self.maps.iter().find(|m| m.branch == branch)
    }
}

struct Filter {
    /// `in_channels × width`
    weights: Vec<f64>,
    dilation: usize,
}

pub struct FeatureExtractor {
    config: BranchConfig,
    in_channels: usize,
    filters: Vec<Filter>,
}

impl FeatureExtractor {
    /// Builds the branch's filter bank from `seed`. The rhythm branch reads
    /// the channel-averaged trace; the 2D branches read all channels.
    pub fn new(config: &BranchConfig, channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::InvalidInput("extractor needs at least one channel".into()));
        }
        let in_channels = match config.branch {
            BranchId::Rhythm1d => 1,
            _ => channels,
        };
        let mut rng = rng_for(seed, 0xFEA7_0000 + config.branch.index() as u64);
        let fan_in = (in_channels * config.kernel_width) as f64;
        let filters = (0..config.latent_dim)
            .map(|k| {
                let mut w: Vec<f64> = (0..in_channels * config.kernel_width)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z / fan_in.sqrt()
                    })
                    .collect();
                // zero-mean taps per input channel: no response to a DC offset
                for ch in 0..in_channels {
                    let row = &mut w[ch * config.kernel_width..(ch + 1) * config.kernel_width];
                    let m = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter_mut().for_each(|x| *x -= m);
                }
                Filter {
                    weights: w,
                    dilation: config.dilations[k % config.dilations.len()],
                }
            })
            .collect();
        Ok(FeatureExtractor {
            config: config.clone(),
            in_channels,
            filters,
        })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.config
    }

    fn input(&self, signal: &Signal) -> Vec<Vec<f64>> {
        if self.in_channels == 1 {
            let mut trace = vec![0.0f64; signal.samples];
            for ch in 0..signal.channels {
                for (t, v) in signal.channel(ch).iter().enumerate() {
                    trace[t] += *v as f64;
                }
            }
            let n = signal.channels as f64;
            trace.iter_mut().for_each(|v| *v /= n);
            vec![trace]
        } else {
            (0..signal.channels)
                .map(|ch| signal.channel(ch).iter().map(|&v| v as f64).collect())
                .collect()
        }
    }

    pub fn extract(&self, record_id: u64, signal: &Signal) -> Result<LatentMap> {
        if signal.is_empty() {
            return Err(Error::InvalidInput(format!("record {record_id}: empty signal")));
        }
        if self.in_channels != 1 && signal.channels != self.in_channels {
            return Err(Error::InvalidInput(format!(
                "record {record_id}: {} channels, extractor expects {}",
                signal.channels, self.in_channels
            )));
        }
        if let PatchExtent::Local { window, .. } = self.config.extent {
            if signal.samples < window {
                return Err(Error::SignalTooShort {
                    samples: signal.samples,
                    window,
                });
            }
        }
        let max_span = self
            .filters
            .iter()
            .map(|f| (self.config.kernel_width - 1) * f.dilation + 1)
            .max()
            .unwrap_or(1);
        if signal.samples < max_span {
            return Err(Error::SignalTooShort {
                samples: signal.samples,
                window: max_span,
            });
        }
        // common valid length so every filter's response is aligned in time
        let out_len = signal.samples - max_span + 1;
        let x = self.input(signal);
        let width = self.config.kernel_width;
        let dim = self.config.latent_dim;

        // responses[k][t] after rectification
        let responses: Vec<Vec<f64>> = self
            .filters
            .iter()
            .map(|f| {
                let mut r = vec![0.0f64; out_len];
                for (ch, xs) in x.iter().enumerate() {
                    let taps = &f.weights[ch * width..(ch + 1) * width];
                    for (j, &w) in taps.iter().enumerate() {
                        let off = j * f.dilation;
                        for (rt, xv) in r.iter_mut().zip(&xs[off..off + out_len]) {
                            *rt += w * xv;
                        }
                    }
                }
                r.iter_mut().for_each(|v| *v = v.max(0.0));
                r
            })
            .collect();

        let windows: Vec<(usize, usize)> = match self.config.extent {
            PatchExtent::Global => vec![(0, out_len)],
            PatchExtent::Local { window, stride } => {
                if out_len < window {
                    return Err(Error::SignalTooShort {
                        samples: signal.samples,
                        window: window + max_span - 1,
                    });
                }
                (0..=(out_len - window) / stride)
                    .map(|p| (p * stride, p * stride + window))
                    .collect()
            }
        };

        let mut patches = Vec::with_capacity(windows.len() * dim);
        let mut degenerate = false;
        for (start, end) in windows {
            let len = (end - start) as f64;
            let mut v: Vec<f64> = responses
                .iter()
                .map(|r| r[start..end].iter().sum::<f64>() / len)
                .collect();
            // centre across latent channels before unit normalisation
            let m = v.iter().sum::<f64>() / dim as f64;
            v.iter_mut().for_each(|x| *x -= m);
            if !normalize(&mut v) {
                v.iter_mut().for_each(|x| *x = 0.0);
                degenerate = true;
            }
            patches.extend(v);
        }
        Ok(LatentMap {
            record_id,
            branch: self.config.branch,
            dim,
            patches,
            degenerate,
        })
    }
}

/// Encode one signal with every extractor.
pub fn encode(extractors: &[FeatureExtractor], record_id: u64, signal: &Signal) -> Result<RecordLatents> {
    let maps = extractors
        .iter()
        .map(|e| e.extract(record_id, signal))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecordLatents { record_id, maps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(channels: usize, samples: usize, phase: f32) -> Signal {
        let mut s = Signal::zeros(channels, samples);
        for ch in 0..channels {
            for (t, v) in s.channel_mut(ch).iter_mut().enumerate() {
                let x = t as f32 / 9.0 + phase + ch as f32;
                *v = x.sin() + 0.5 * (3.1 * x).cos() * (ch as f32 + 1.0) / 3.0;
            }
        }
        s
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let cfg = BranchConfig::default_for(BranchId::Partial2d);
        let e = FeatureExtractor::new(&cfg, 4, 1).unwrap();
        let m = e.extract(0, &Signal::zeros(4, 200)).unwrap();
        assert!(m.degenerate);
        assert!(m.patches.iter().all(|&v| v == 0.0));
        assert!(m.positions() > 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = BranchConfig::default_for(BranchId::Global2d);
        let s = wave(4, 300, 0.3);
        let a = FeatureExtractor::new(&cfg, 4, 9).unwrap().extract(1, &s).unwrap();
        let b = FeatureExtractor::new(&cfg, 4, 9).unwrap().extract(1, &s).unwrap();
        assert_eq!(a, b);
        let c = FeatureExtractor::new(&cfg, 4, 10).unwrap().extract(1, &s).unwrap();
        assert_ne!(a.patches, c.patches);
    }

    #[test]
    fn amplitude_scaling_is_removed() {
        for branch in BranchId::ALL {
            let cfg = BranchConfig::default_for(branch);
            let e = FeatureExtractor::new(&cfg, 4, 3).unwrap();
            let s = wave(4, 400, 1.1);
            let a = e.extract(0, &s).unwrap();
            let b = e.extract(0, &s.scaled(3.5)).unwrap();
            for (x, y) in a.patches.iter().zip(&b.patches) {
                assert!((x - y).abs() < 1e-6, "{branch}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn local_branch_has_multiple_positions_and_global_one() {
        let s = wave(4, 400, 0.0);
        let local = FeatureExtractor::new(&BranchConfig::default_for(BranchId::Partial2d), 4, 2)
            .unwrap()
            .extract(0, &s)
            .unwrap();
        let global = FeatureExtractor::new(&BranchConfig::default_for(BranchId::Rhythm1d), 4, 2)
            .unwrap()
            .extract(0, &s)
            .unwrap();
        assert!(local.positions() > 1);
        assert_eq!(global.positions(), 1);
        for p in local.iter_patches() {
            let n: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn short_signal_is_error() {
        let cfg = BranchConfig::default_for(BranchId::Partial2d);
        let e = FeatureExtractor::new(&cfg, 2, 0).unwrap();
        assert!(matches!(
            e.extract(0, &Signal::zeros(2, 30)),
            Err(Error::SignalTooShort { .. })
        ));
    }
}
