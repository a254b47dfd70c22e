//! Exact single-queue dynamics over one decision epoch.
//!
//! Within an epoch every queue is an M/M/1/B system whose arrival rate is
//! the thinned sum of what its own scheduler keeps and what its neighbours
//! offload to it. The queue law after `Δt` is `exp(Q Δt) e_z0`; expected
//! drops come from the same exponential of a matrix with one extra
//! absorbing row that integrates arrivals while the queue is full.
//!
//! Matrices follow the column convention: entry `(i, j)` is the rate from
//! state `j` to state `i`.

mod expm;
mod matrix;

pub use expm::{expm_taylor, expm_uniformized, is_generator, matrix_exponential};
pub use matrix::Matrix;

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Per-queue arrival rates induced by offload probabilities.
///
/// `rate_i = λ (1 − a_i + Σ_{j ∈ N_i} a_j / |N_j|)`. An isolated node keeps
/// all of its traffic regardless of `a_i`.
pub fn effective_rates(topology: &Topology, offload: &[f64], base_rate: f64) -> Result<Vec<f64>> {
    let n = topology.n_nodes();
    if offload.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: offload.len(),
        });
    }
    if let Some(a) = offload.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidParameter(format!(
            "offload probability {a} outside [0, 1]"
        )));
    }
    let kept = |i: usize| {
        if topology.degree(i) == 0 {
            1.0
        } else {
            1.0 - offload[i]
        }
    };
    Ok((0..n)
        .map(|i| {
            let inflow: f64 = topology
                .neighbors(i)
                .iter()
                .map(|&j| offload[j as usize] / topology.degree(j as usize) as f64)
                .sum();
            base_rate * (kept(i) + inflow)
        })
        .collect())
}

/// Birth–death generator on `{0..=buffer}`.
pub fn build_generator(arrival_rate: f64, service_rate: f64, buffer: usize) -> Matrix {
    let mut q = Matrix::zeros(buffer + 1);
    for k in 0..=buffer {
        let up = if k < buffer { arrival_rate } else { 0.0 };
        let down = if k > 0 { service_rate } else { 0.0 };
        if k < buffer {
            q[(k + 1, k)] = up;
        }
        if k > 0 {
            q[(k - 1, k)] = down;
        }
        q[(k, k)] = -(up + down);
    }
    q
}

/// Generator with an extra drop-counting row: entry `(B+1, B)` is the
/// arrival rate, the last column is zero.
pub fn build_augmented(arrival_rate: f64, service_rate: f64, buffer: usize) -> Matrix {
    let q = build_generator(arrival_rate, service_rate, buffer);
    let mut aug = Matrix::zeros(buffer + 2);
    for i in 0..=buffer {
        for j in 0..=buffer {
            aug[(i, j)] = q[(i, j)];
        }
    }
    aug[(buffer + 1, buffer)] = arrival_rate;
    aug
}

/// One queue over one epoch of length `epoch_length`.
#[derive(Debug, Clone)]
pub struct EpochKernel {
    buffer: usize,
    arrival_rate: f64,
    service_rate: f64,
    epoch_length: f64,
    generator: Matrix,
    augmented: Matrix,
    transition: Matrix,
    augmented_transition: Matrix,
}

impl EpochKernel {
    pub fn new(arrival_rate: f64, service_rate: f64, buffer: usize, epoch_length: f64) -> Result<Self> {
        if buffer < 1 {
            return Err(Error::InvalidParameter("buffer must be >= 1".into()));
        }
        if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate {arrival_rate} must be finite and >= 0"
            )));
        }
        if !(service_rate > 0.0 && service_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "service rate {service_rate} must be finite and > 0"
            )));
        }
        if !(epoch_length >= 0.0 && epoch_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epoch length {epoch_length} must be finite and >= 0"
            )));
        }
        let generator = build_generator(arrival_rate, service_rate, buffer);
        let augmented = build_augmented(arrival_rate, service_rate, buffer);
        let transition = matrix_exponential(&generator, epoch_length)?;
        let augmented_transition = expm_taylor(&augmented, epoch_length);
        Ok(Self {
            buffer,
            arrival_rate,
            service_rate,
            epoch_length,
            generator,
            augmented,
            transition,
            augmented_transition,
        })
    }

    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    pub fn epoch_length(&self) -> f64 {
        self.epoch_length
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn augmented(&self) -> &Matrix {
        &self.augmented
    }

    /// Distribution of the queue filling at the end of the epoch.
    pub fn epoch_law(&self, start: usize) -> Vec<f64> {
        assert!(start <= self.buffer, "start state out of range");
        self.transition.column(start)
    }

    /// Expected number of arrivals that find the queue full during the epoch.
    pub fn expected_drops(&self, start: usize) -> f64 {
        assert!(start <= self.buffer, "start state out of range");
        self.augmented_transition[(self.buffer + 1, start)].max(0.0)
    }
}
