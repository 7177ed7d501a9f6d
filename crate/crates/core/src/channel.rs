//! Wireless link model: log-distance path loss, Shannon rate, airtime and
//! packet corruption.

use crate::config::SystemConfig;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error("link unreachable: {bits} bits at zero rate")]
    Unreachable { bits: f64 },
}

/// Log-distance channel with additive white noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel<T> {
    pub ref_gain: T,
    pub exponent: T,
    /// W/Hz.
    pub noise_psd: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState<T> {
    pub distance: T,
    pub gain: T,
    pub fading_enabled: bool,
}

/// Outcome of sending one payload over one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget<T> {
    pub power: T,
    pub rate: T,
    pub tx_time: T,
    pub tx_energy: T,
    pub snr: T,
}

impl<T: Scalar> Channel<T> {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            ref_gain: T::of(cfg.ref_gain),
            exponent: T::of(cfg.pathloss_exponent),
            noise_psd: T::of(cfg.noise_psd),
        }
    }

    /// `ref_gain * d^-exponent`, with distances under 1 m treated as 1 m.
    pub fn path_gain(&self, distance: T) -> T {
        self.ref_gain * distance.max(T::one()).powf(-self.exponent)
    }

    /// Channel at `distance`, optionally scaled by a fading draw.
    pub fn state(&self, distance: T, fading: Option<T>) -> ChannelState<T> {
        let gain = self.path_gain(distance) * fading.unwrap_or_else(T::one);
        ChannelState {
            distance,
            gain,
            fading_enabled: fading.is_some(),
        }
    }

    pub fn snr(&self, power: T, gain: T, bandwidth: T) -> T {
        power * gain / (self.noise_psd * bandwidth)
    }

    /// Shannon rate in bits/s.
    pub fn link_rate(&self, power: T, gain: T, bandwidth: T) -> T {
        bandwidth * self.snr(power, gain, bandwidth).ln_1p() / T::of(std::f64::consts::LN_2)
    }

    /// Rate, airtime and energy for `bits` over one link.
    pub fn budget(&self, bits: T, power: T, gain: T, bandwidth: T) -> Result<LinkBudget<T>, LinkError> {
        let snr = self.snr(power, gain, bandwidth);
        let rate = self.link_rate(power, gain, bandwidth);
        let (tx_time, tx_energy) = transmission(bits, rate, power)?;
        Ok(LinkBudget {
            power,
            rate,
            tx_time,
            tx_energy,
            snr,
        })
    }
}

/// Airtime and radiated energy: `(bits / rate, power * bits / rate)`.
pub fn transmission<T: Scalar>(bits: T, rate: T, power: T) -> Result<(T, T), LinkError> {
    if bits <= T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    if !(rate > T::zero()) {
        return Err(LinkError::Unreachable { bits: bits.as_f64() });
    }
    let tx_time = bits / rate;
    Ok((tx_time, power * tx_time))
}

/// Uncoded bit-error rate `0.5 exp(-snr / 2)`.
pub fn bit_error_rate<T: Scalar>(snr: T) -> T {
    T::of(0.5) * (-snr / T::of(2.0)).exp()
}

/// Probability that at least one of `bits` bits flips.
pub fn corruption_probability<T: Scalar>(snr: T, bits: T) -> T {
    if bits <= T::zero() {
        return T::zero();
    }
    let ber = bit_error_rate(snr);
    -(bits * (-ber).ln_1p()).exp_m1()
}

/// Draws whether a payload arrives corrupted. Consumes one uniform draw for
/// non-empty payloads and none otherwise.
pub fn packet_error<T: Scalar>(snr: T, bits: T, rng: &mut RngStream) -> bool {
    if bits <= T::zero() {
        return false;
    }
    rng.uniform() < corruption_probability(snr, bits).as_f64()
}
