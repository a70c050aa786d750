//! Virtual batch plant: nominal LTI response with output-stage nonlinearities,
//! measurement noise and delayed batch delivery.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lti::{discretize_zoh, ContinuousTransferFunction, DiscreteStateSpace};
use crate::scalar::Real;

/// One block of `N` samples covering steps `index N .. (index + 1) N - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub index: usize,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig<T: Real> {
    pub nominal: ContinuousTransferFunction<T>,
    pub cubic_stiffness_gain: T,
    /// Amplitude normalizing the cubic term.
    pub amplitude_scale: T,
    pub friction_coefficient: T,
    pub resonance_detune: T,
    pub noise_sigma: T,
    pub delay_batches: usize,
    pub ts: T,
    pub batch_length: usize,
}

impl<T: Real> PlantConfig<T> {
    pub fn linear(nominal: ContinuousTransferFunction<T>, ts: T, batch_length: usize) -> Self {
        Self {
            nominal,
            cubic_stiffness_gain: T::zero(),
            amplitude_scale: T::one(),
            friction_coefficient: T::zero(),
            resonance_detune: T::one(),
            noise_sigma: T::zero(),
            delay_batches: 1,
            ts,
            batch_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= T::zero()) {
            return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
        }
        if !(self.amplitude_scale > T::zero()) {
            return Err(Error::InvalidConfig("amplitude scale must be positive".into()));
        }
        if !(self.resonance_detune > T::zero()) {
            return Err(Error::InvalidConfig("resonance detune must be positive".into()));
        }
        if !(self.ts > T::zero()) {
            return Err(Error::InvalidConfig("sampling interval must be positive".into()));
        }
        if self.batch_length == 0 {
            return Err(Error::InvalidConfig("batch length must be positive".into()));
        }
        if !self.cubic_stiffness_gain.is_finite() || !self.friction_coefficient.is_finite() {
            return Err(Error::InvalidConfig("non-finite nonlinearity gain".into()));
        }
        Ok(())
    }

    /// Transfer function actually simulated (nominal, possibly detuned).
    pub fn true_transfer_function(&self) -> Result<ContinuousTransferFunction<T>> {
        if self.resonance_detune == T::one() {
            Ok(self.nominal.clone())
        } else {
            self.nominal.with_mid_band_scale(self.resonance_detune)
        }
    }
}

/// Batch-level plant interface consumed by the controller loop.
pub trait Plant<T: Real> {
    fn batch_length(&self) -> usize;
    fn delay_batches(&self) -> usize;
    /// Number of batches commanded so far.
    fn commanded(&self) -> usize;
    /// Applies input batch `u`; `y_hat_h` is the controller's hybrid
    /// prediction for the same batch. Returns the true output.
    fn apply_batch(&mut self, u: &Batch<T>, y_hat_h: &[T]) -> Result<Batch<T>>;
    /// Measured output of batch `j`, once `j + delay` batches have been
    /// commanded.
    fn fetch_measurement(&self, j: usize) -> Result<Option<Batch<T>>>;
    /// Measured output of batch `j` regardless of the delay, for logging.
    fn recorded_measurement(&self, j: usize) -> Option<Vec<T>>;
}

fn check_order(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::OutOfOrderBatch { expected, got });
    }
    Ok(())
}

fn delayed<T: Real>(
    measured: &[Vec<T>],
    delay: usize,
    j: usize,
) -> Result<Option<Batch<T>>> {
    if j >= measured.len() {
        return Err(Error::BatchNeverProduced(j));
    }
    if j + delay + 1 > measured.len() {
        return Ok(None);
    }
    Ok(Some(Batch {
        index: j,
        values: measured[j].clone(),
    }))
}

pub struct SimulatedPlant<T: Real> {
    config: PlantConfig<T>,
    model: DiscreteStateSpace<T>,
    x: DVector<T>,
    prev_linear: T,
    rng: ChaCha8Rng,
    measured: Vec<Vec<T>>,
}

impl<T: Real> SimulatedPlant<T> {
    pub fn new(config: PlantConfig<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = discretize_zoh(&config.true_transfer_function()?, config.ts)?;
        let x = DVector::zeros(model.order());
        Ok(Self {
            config,
            model,
            x,
            prev_linear: T::zero(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            measured: Vec::new(),
        })
    }

    pub fn config(&self) -> &PlantConfig<T> {
        &self.config
    }

    pub fn model(&self) -> &DiscreteStateSpace<T> {
        &self.model
    }

    /// Advances one batch; returns `(true, measured)` outputs.
    pub fn step_batch(&mut self, u: &Batch<T>) -> Result<(Batch<T>, Batch<T>)> {
        check_order(self.measured.len(), u.index)?;
        if u.values.len() != self.config.batch_length {
            return Err(Error::Dimension(format!(
                "input batch has {} samples, expected {}",
                u.values.len(),
                self.config.batch_length
            )));
        }
        let g = self.config.cubic_stiffness_gain;
        let a2 = self.config.amplitude_scale * self.config.amplitude_scale;
        let f = self.config.friction_coefficient;
        let sigma = self.config.noise_sigma;
        let mut truth = Vec::with_capacity(u.values.len());
        let mut meas = Vec::with_capacity(u.values.len());
        for &uk in &u.values {
            let y_lin = self.model.step(&mut self.x, uk);
            let dv = y_lin - self.prev_linear;
            let sign = if dv > T::zero() {
                T::one()
            } else if dv < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            self.prev_linear = y_lin;
            let y = y_lin - g * y_lin * y_lin * y_lin / a2 - f * sign;
            // always drawn so that the sequence does not depend on sigma
            let z: f64 = StandardNormal.sample(&mut self.rng);
            truth.push(y);
            meas.push(y + sigma * T::lit(z));
        }
        let index = u.index;
        self.measured.push(meas.clone());
        Ok((
            Batch {
                index,
                values: truth,
            },
            Batch {
                index,
                values: meas,
            },
        ))
    }
}

impl<T: Real> Plant<T> for SimulatedPlant<T> {
    fn batch_length(&self) -> usize {
        self.config.batch_length
    }
    fn delay_batches(&self) -> usize {
        self.config.delay_batches
    }
    fn commanded(&self) -> usize {
        self.measured.len()
    }
    fn apply_batch(&mut self, u: &Batch<T>, _y_hat_h: &[T]) -> Result<Batch<T>> {
        Ok(self.step_batch(u)?.0)
    }
    fn fetch_measurement(&self, j: usize) -> Result<Option<Batch<T>>> {
        delayed(&self.measured, self.config.delay_batches, j)
    }
    fn recorded_measurement(&self, j: usize) -> Option<Vec<T>> {
        self.measured.get(j).cloned()
    }
}

/// Plant whose output is the controller's own hybrid prediction, so that the
/// measured output equals `y_hat_h` exactly.
pub struct ModelEchoPlant<T: Real> {
    batch_length: usize,
    delay_batches: usize,
    measured: Vec<Vec<T>>,
}

impl<T: Real> ModelEchoPlant<T> {
    pub fn new(batch_length: usize, delay_batches: usize) -> Self {
        Self {
            batch_length,
            delay_batches,
            measured: Vec::new(),
        }
    }
}

impl<T: Real> Plant<T> for ModelEchoPlant<T> {
    fn batch_length(&self) -> usize {
        self.batch_length
    }
    fn delay_batches(&self) -> usize {
        self.delay_batches
    }
    fn commanded(&self) -> usize {
        self.measured.len()
    }
    fn apply_batch(&mut self, u: &Batch<T>, y_hat_h: &[T]) -> Result<Batch<T>> {
        check_order(self.measured.len(), u.index)?;
        if y_hat_h.len() != self.batch_length {
            return Err(Error::Dimension(format!(
                "prediction batch has {} samples, expected {}",
                y_hat_h.len(),
                self.batch_length
            )));
        }
        self.measured.push(y_hat_h.to_vec());
        Ok(Batch {
            index: u.index,
            values: y_hat_h.to_vec(),
        })
    }
    fn fetch_measurement(&self, j: usize) -> Result<Option<Batch<T>>> {
        delayed(&self.measured, self.delay_batches, j)
    }
    fn recorded_measurement(&self, j: usize) -> Option<Vec<T>> {
        self.measured.get(j).cloned()
    }
}
