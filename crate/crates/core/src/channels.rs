//! Channel realizations `h = h̄ e^{iφ} + R^{1/2} w`.

use rand::Rng;

use crate::linalg::{CVec, C64};
use crate::rng::{complex_normal_vec, uniform_phase};
use crate::scenario::{ChannelStatistics, StatisticsSet};

/// Half-wavelength ULA response, `a_m = exp(iπ m sin θ)` for `m = 0..M`.
pub fn steering_vector(theta: f64, antennas: usize) -> CVec {
    let step = std::f64::consts::PI * theta.sin();
    CVec::from_fn(antennas, |m, _| C64::from_polar(1.0, step * m as f64))
}

/// One draw of a single (UE, BS) channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: CVec,
    /// LoS phase in [−π, π).
    pub phi: f64,
}

pub fn sample_channel<R: Rng + ?Sized>(stats: &ChannelStatistics, rng: &mut R) -> ChannelSample {
    let phi = uniform_phase(rng);
    let w = complex_normal_vec(rng, stats.antennas(), 1.0);
    let h = &stats.los_mean * C64::from_polar(1.0, phi) + &stats.nlos_sqrt * w;
    ChannelSample { h, phi }
}

/// Channels of every (l, k, j) triple for one coherence block, indexed like
/// [`StatisticsSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub channels: Vec<CVec>,
    pub phases: Vec<f64>,
}

impl ChannelRealization {
    /// Channel from UE k in cell l to BS j.
    pub fn get(&self, l: usize, k: usize, j: usize) -> &CVec {
        &self.channels[(l * self.ues_per_cell + k) * self.cells + j]
    }

    pub fn antennas(&self) -> usize {
        self.channels.first().map_or(0, |h| h.len())
    }
}

pub fn sample_realization<R: Rng + ?Sized>(stats: &StatisticsSet, rng: &mut R) -> ChannelRealization {
    let (channels, phases) = stats
        .entries
        .iter()
        .map(|s| {
            let ChannelSample { h, phi } = sample_channel(s, rng);
            (h, phi)
        })
        .unzip();
    ChannelRealization { cells: stats.cells, ues_per_cell: stats.ues_per_cell, channels, phases }
}
