//! Delay-Doppler grid types and the transforms between the delay-Doppler and
//! time-frequency domains.
//!
//! Data symbols live on an M x N delay-Doppler grid (M delay rows, N Doppler
//! columns). The inverse symplectic finite Fourier transform ([`isfft`]) maps
//! a frame to the time-frequency domain and [`sfft`] maps back; both are
//! unitary, so signal energy is preserved and `sfft(isfft(x)) = x`.
//!
//! [`dd_io_relation`] applies the discrete multipath input-output relation
//! directly in the delay-Doppler domain: each path of each device contributes
//! a cyclically shifted copy of that device's frame, scaled by the path gain
//! and the unit-modulus phase factor [`alpha`].
//!
//! Transforms are evaluated as direct double sums. At the frame sizes this
//! library targets (M <= 64) the direct form is fast enough and doubles as
//! the reference definition the rest of the crate is tested against.

use num_complex::Complex64;

use crate::channel::MultipathChannel;
use crate::error::{Error, Result};

/// An M x N grid of complex symbols in the delay-Doppler domain.
///
/// Row index `l` is the delay bin, column index `k` the Doppler bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDopplerFrame {
    m_subcarriers: usize,
    n_slots: usize,
    values: Vec<Complex64>,
}

/// Same shape as [`DelayDopplerFrame`], indexed `[m, n]` over subcarriers and
/// time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyGrid {
    m_subcarriers: usize,
    n_slots: usize,
    values: Vec<Complex64>,
}

macro_rules! grid_impl {
    ($ty:ident) => {
        impl $ty {
            /// All-zero grid. Panics if either dimension is zero.
            pub fn zeros(m_subcarriers: usize, n_slots: usize) -> Self {
                assert!(
                    m_subcarriers >= 1 && n_slots >= 1,
                    "grid dimensions must be >= 1"
                );
                Self {
                    m_subcarriers,
                    n_slots,
                    values: vec![Complex64::new(0.0, 0.0); m_subcarriers * n_slots],
                }
            }

            /// Build a grid by evaluating `f(row, col)` at every point.
            pub fn from_fn(
                m_subcarriers: usize,
                n_slots: usize,
                mut f: impl FnMut(usize, usize) -> Complex64,
            ) -> Self {
                let mut g = Self::zeros(m_subcarriers, n_slots);
                for r in 0..m_subcarriers {
                    for c in 0..n_slots {
                        g.values[r * n_slots + c] = f(r, c);
                    }
                }
                g
            }

            pub fn m_subcarriers(&self) -> usize {
                self.m_subcarriers
            }

            pub fn n_slots(&self) -> usize {
                self.n_slots
            }

            pub fn get(&self, row: usize, col: usize) -> Complex64 {
                assert!(
                    row < self.m_subcarriers && col < self.n_slots,
                    "grid index out of range"
                );
                self.values[row * self.n_slots + col]
            }

            pub fn set(&mut self, row: usize, col: usize, v: Complex64) {
                assert!(
                    row < self.m_subcarriers && col < self.n_slots,
                    "grid index out of range"
                );
                self.values[row * self.n_slots + col] = v;
            }

            /// Row-major slice of all M*N entries.
            pub fn values(&self) -> &[Complex64] {
                &self.values
            }

            /// One row as a slice of length N.
            pub fn row(&self, row: usize) -> &[Complex64] {
                assert!(row < self.m_subcarriers, "row out of range");
                &self.values[row * self.n_slots..(row + 1) * self.n_slots]
            }

            /// Frobenius norm of the grid.
            pub fn frobenius_norm(&self) -> f64 {
                self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
            }
        }
    };
}

grid_impl!(DelayDopplerFrame);
grid_impl!(TimeFrequencyGrid);

impl DelayDopplerFrame {
    fn same_shape(&self, other: &Self) -> bool {
        self.m_subcarriers == other.m_subcarriers && self.n_slots == other.n_slots
    }

    /// Maximum absolute difference to another frame, elementwise.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Map a delay-Doppler frame onto the time-frequency grid:
///
/// `X[m,n] = (1/sqrt(N M)) * Σ_k Σ_l x[l,k] exp(j2π(nk/N − ml/M))`.
pub fn isfft(frame: &DelayDopplerFrame) -> TimeFrequencyGrid {
    let (m_sub, n_slots) = (frame.m_subcarriers, frame.n_slots);
    let norm = 1.0 / ((m_sub * n_slots) as f64).sqrt();
    TimeFrequencyGrid::from_fn(m_sub, n_slots, |m, n| {
        let mut acc = Complex64::new(0.0, 0.0);
        for l in 0..m_sub {
            for k in 0..n_slots {
                let phase = 2.0
                    * std::f64::consts::PI
                    * (n as f64 * k as f64 / n_slots as f64 - m as f64 * l as f64 / m_sub as f64);
                acc += frame.get(l, k) * Complex64::from_polar(1.0, phase);
            }
        }
        acc * norm
    })
}

/// Inverse of [`isfft`]:
///
/// `y[l,k] = (1/sqrt(N M)) * Σ_n Σ_m Y[m,n] exp(−j2π(nk/N − ml/M))`.
pub fn sfft(grid: &TimeFrequencyGrid) -> DelayDopplerFrame {
    let (m_sub, n_slots) = (grid.m_subcarriers, grid.n_slots);
    let norm = 1.0 / ((m_sub * n_slots) as f64).sqrt();
    DelayDopplerFrame::from_fn(m_sub, n_slots, |l, k| {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..m_sub {
            for n in 0..n_slots {
                let phase = -2.0
                    * std::f64::consts::PI
                    * (n as f64 * k as f64 / n_slots as f64 - m as f64 * l as f64 / m_sub as f64);
                acc += grid.get(m, n) * Complex64::from_polar(1.0, phase);
            }
        }
        acc * norm
    })
}

/// Unit-modulus phase factor of the delay-Doppler input-output relation.
///
/// With `z = exp(j2π/(MN))` and `d = (l − l_i) mod M`:
/// the factor is `z^(k_i d)` when `l >= l_i`, and gains an extra
/// `exp(−j2πk/N)` when the delay shift wraps around the frame (`l < l_i`).
/// At `l == l_i` the shift has not wrapped, so no extra phase applies.
///
/// Panics when `l`, `k`, or `l_i` are outside the grid.
pub fn alpha(
    l: usize,
    k: usize,
    path_delay: usize,
    path_doppler: i64,
    m_subcarriers: usize,
    n_slots: usize,
) -> Complex64 {
    assert!(l < m_subcarriers, "delay index out of range");
    assert!(k < n_slots, "Doppler index out of range");
    assert!(path_delay < m_subcarriers, "path delay out of range");
    let mn = (m_subcarriers * n_slots) as f64;
    let d = (l as i64 - path_delay as i64).rem_euclid(m_subcarriers as i64) as f64;
    let mut phase = 2.0 * std::f64::consts::PI * path_doppler as f64 * d / mn;
    if l < path_delay {
        phase -= 2.0 * std::f64::consts::PI * k as f64 / n_slots as f64;
    }
    Complex64::from_polar(1.0, phase)
}

/// Superpose every device's frame through its multipath channel and add noise:
///
/// `y[l,k] = Σ_u Σ_i h_{u,i} · alpha(l,k,l_i,k_i) · x_u[(l−l_i) mod M, (k−k_i) mod N] + w[l,k]`.
///
/// All frames must share the noise frame's shape; every path delay must be a
/// valid delay row. Doppler indices act modulo N.
pub fn dd_io_relation(
    frames: &[DelayDopplerFrame],
    channels: &[MultipathChannel],
    noise: &DelayDopplerFrame,
) -> Result<DelayDopplerFrame> {
    assert_eq!(frames.len(), channels.len(), "one channel per device frame");
    let (m_sub, n_slots) = (noise.m_subcarriers, noise.n_slots);
    for f in frames {
        if !f.same_shape(noise) {
            return Err(Error::DimensionMismatch {
                expected: (m_sub, n_slots),
                got: (f.m_subcarriers, f.n_slots),
            });
        }
    }
    for ch in channels {
        for tap in ch.taps() {
            if tap.delay_idx >= m_sub {
                return Err(Error::DelayOutOfRange {
                    delay: tap.delay_idx,
                    m_subcarriers: m_sub,
                });
            }
        }
    }

    let mut out = noise.clone();
    for (frame, channel) in frames.iter().zip(channels.iter()) {
        for tap in channel.taps() {
            for l in 0..m_sub {
                let src_l = (l as i64 - tap.delay_idx as i64).rem_euclid(m_sub as i64) as usize;
                for k in 0..n_slots {
                    let src_k = (k as i64 - tap.doppler_idx).rem_euclid(n_slots as i64) as usize;
                    let a = alpha(l, k, tap.delay_idx, tap.doppler_idx, m_sub, n_slots);
                    let v = out.get(l, k) + tap.gain * a * frame.get(src_l, src_k);
                    out.set(l, k, v);
                }
            }
        }
    }
    Ok(out)
}
