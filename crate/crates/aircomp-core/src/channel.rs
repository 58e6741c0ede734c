//! Multipath delay-Doppler channels: representation, random generation, and
//! the block-circulant channel-matrix form used by zero-padded frames.
//!
//! A channel is a list of taps, each with a complex gain, an integer delay
//! index and an integer Doppler index. Taps are kept sorted by delay; the
//! first tap (smallest delay) is the principal path that devices align their
//! transmissions against.
//!
//! Random channels follow a uniform power delay profile: tap gains are i.i.d.
//! circularly-symmetric complex Gaussian with variance 1/R so the expected
//! total channel power is 1, delays are uniform on `[0, l_max]` and Doppler
//! indices uniform on `[-k_max, k_max]`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::grid::DelayDopplerFrame;
use crate::rng::{complex_gaussian, ChaCha8Rng};

/// One propagation path: complex gain plus integer delay/Doppler indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTap {
    pub gain: Complex64,
    pub delay_idx: usize,
    pub doppler_idx: i64,
}

/// A device's multipath channel. Taps are sorted by delay index ascending;
/// tap 0 is the principal path.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    taps: Vec<PathTap>,
}

impl MultipathChannel {
    /// Build a channel from taps, sorting them by delay (stable, so ties keep
    /// their given order). At least one tap is required.
    pub fn new(mut taps: Vec<PathTap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidConfig {
                field: "taps",
                reason: "a channel needs at least one path".into(),
            });
        }
        taps.sort_by_key(|t| t.delay_idx);
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[PathTap] {
        &self.taps
    }

    pub fn path_count(&self) -> usize {
        self.taps.len()
    }

    /// The smallest-delay tap.
    pub fn principal(&self) -> PathTap {
        self.taps[0]
    }

    /// Largest delay index over all taps.
    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|t| t.delay_idx).max().unwrap()
    }

    /// Sum of squared tap gain magnitudes.
    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }

    /// True when no two taps share a delay index.
    pub fn has_distinct_delays(&self) -> bool {
        self.taps
            .windows(2)
            .all(|w| w[0].delay_idx != w[1].delay_idx)
    }

    /// Copy with every gain replaced by its magnitude.
    ///
    /// The zero-padded SIC analysis models all cross-path coefficients as
    /// phase-aligned. Canonicalizing gains to magnitudes realizes exactly
    /// that model while leaving every gain magnitude, and hence every
    /// analytic MSE, unchanged.
    pub fn phase_aligned(&self) -> Self {
        Self {
            taps: self
                .taps
                .iter()
                .map(|t| PathTap {
                    gain: Complex64::new(t.gain.norm(), 0.0),
                    ..*t
                })
                .collect(),
        }
    }
}

/// Channels for all devices in one experiment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnsemble {
    channels: Vec<MultipathChannel>,
    shared_geometry: bool,
}

impl ChannelEnsemble {
    pub fn new(channels: Vec<MultipathChannel>, shared_geometry: bool) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidConfig {
                field: "channels",
                reason: "an ensemble needs at least one device".into(),
            });
        }
        if shared_geometry {
            let first = &channels[0];
            let same = channels.iter().all(|c| {
                c.path_count() == first.path_count()
                    && c.taps()
                        .iter()
                        .zip(first.taps())
                        .all(|(a, b)| a.delay_idx == b.delay_idx && a.doppler_idx == b.doppler_idx)
            });
            if !same {
                return Err(Error::InvalidConfig {
                    field: "shared_geometry",
                    reason: "devices differ in path count, delays, or Dopplers".into(),
                });
            }
        }
        Ok(Self {
            channels,
            shared_geometry,
        })
    }

    pub fn channels(&self) -> &[MultipathChannel] {
        &self.channels
    }

    pub fn device_count(&self) -> usize {
        self.channels.len()
    }

    pub fn shared_geometry(&self) -> bool {
        self.shared_geometry
    }

    /// Sorted distinct delay list of device 0 (with shared geometry this is
    /// the whole ensemble's delay set).
    pub fn delays(&self) -> Vec<usize> {
        self.channels[0]
            .taps()
            .iter()
            .map(|t| t.delay_idx)
            .collect()
    }

    pub fn phase_aligned(&self) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(MultipathChannel::phase_aligned)
                .collect(),
            shared_geometry: self.shared_geometry,
        }
    }

    /// Serialize as one line per tap: `device re(h) im(h) delay doppler`.
    ///
    /// Floats are printed with 17 significant digits so parsing the text
    /// reproduces the exact binary values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (u, ch) in self.channels.iter().enumerate() {
            for t in ch.taps() {
                writeln!(
                    s,
                    "{} {:.16e} {:.16e} {} {}",
                    u, t.gain.re, t.gain.im, t.delay_idx, t.doppler_idx
                )
                .unwrap();
            }
        }
        s
    }

    /// Parse the format produced by [`ChannelEnsemble::to_text`].
    pub fn from_text(text: &str, shared_geometry: bool) -> Result<Self> {
        let mut per_device: Vec<Vec<PathTap>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::InvalidConfig {
                    field: "ensemble",
                    reason: format!(
                        "line {}: expected 5 fields, got {}",
                        lineno + 1,
                        fields.len()
                    ),
                });
            }
            let parse_err = |what: &str| Error::InvalidConfig {
                field: "ensemble",
                reason: format!("line {}: bad {what}", lineno + 1),
            };
            let u: usize = fields[0].parse().map_err(|_| parse_err("device"))?;
            let re: f64 = fields[1].parse().map_err(|_| parse_err("re(h)"))?;
            let im: f64 = fields[2].parse().map_err(|_| parse_err("im(h)"))?;
            let delay: usize = fields[3].parse().map_err(|_| parse_err("delay"))?;
            let doppler: i64 = fields[4].parse().map_err(|_| parse_err("doppler"))?;
            if per_device.len() <= u {
                per_device.resize(u + 1, Vec::new());
            }
            per_device[u].push(PathTap {
                gain: Complex64::new(re, im),
                delay_idx: delay,
                doppler_idx: doppler,
            });
        }
        let channels = per_device
            .into_iter()
            .map(MultipathChannel::new)
            .collect::<Result<Vec<_>>>()?;
        ChannelEnsemble::new(channels, shared_geometry)
    }
}

fn check_sampling_params(
    paths: usize,
    l_max: usize,
    k_max: usize,
    n_slots: usize,
    distinct: bool,
) -> Result<()> {
    if paths == 0 {
        return Err(Error::InvalidConfig {
            field: "paths",
            reason: "must be >= 1".into(),
        });
    }
    if distinct && paths > l_max + 1 {
        return Err(Error::InfeasibleDistinctDelays { paths, l_max });
    }
    if 2 * k_max >= n_slots {
        return Err(Error::InvalidConfig {
            field: "k_max",
            reason: format!("need k_max < N/2, got k_max={k_max} with N={n_slots}"),
        });
    }
    Ok(())
}

/// Delay draw shared by both sampling entry points: uniform on `[0, l_max]`,
/// without replacement when `distinct` is set, returned sorted ascending.
fn draw_delays(rng: &mut ChaCha8Rng, paths: usize, l_max: usize, distinct: bool) -> Vec<usize> {
    let mut delays: Vec<usize> = if distinct {
        // Partial Fisher-Yates over the full delay range.
        let mut pool: Vec<usize> = (0..=l_max).collect();
        for i in 0..paths {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(paths);
        pool
    } else {
        (0..paths).map(|_| rng.random_range(0..=l_max)).collect()
    };
    delays.sort_unstable();
    delays
}

fn draw_gains_dopplers(rng: &mut ChaCha8Rng, delays: &[usize], k_max: usize) -> Vec<PathTap> {
    delays
        .iter()
        .map(|&delay_idx| {
            let gain = complex_gaussian(rng, 1.0 / delays.len() as f64);
            let doppler_idx = rng.random_range(-(k_max as i64)..=k_max as i64);
            PathTap {
                gain,
                delay_idx,
                doppler_idx,
            }
        })
        .collect()
}

/// Draw one random multipath channel.
///
/// `paths` taps with i.i.d. CN(0, 1/paths) gains, delays uniform on
/// `[0, l_max]` (distinct when requested), Dopplers uniform on
/// `[-k_max, k_max]`; taps come back sorted by delay.
pub fn sample_channel(
    rng: &mut ChaCha8Rng,
    paths: usize,
    l_max: usize,
    k_max: usize,
    n_slots: usize,
    distinct_delays: bool,
) -> Result<MultipathChannel> {
    check_sampling_params(paths, l_max, k_max, n_slots, distinct_delays)?;
    let delays = draw_delays(rng, paths, l_max, distinct_delays);
    MultipathChannel::new(draw_gains_dopplers(rng, &delays, k_max))
}

/// Draw channels for `devices` devices.
///
/// With `shared_geometry` one delay/Doppler layout is drawn once and reused
/// for every device while gains stay independent; otherwise each device gets
/// a fully independent channel.
#[allow(clippy::too_many_arguments)]
pub fn sample_ensemble(
    rng: &mut ChaCha8Rng,
    devices: usize,
    paths: usize,
    l_max: usize,
    k_max: usize,
    n_slots: usize,
    shared_geometry: bool,
    distinct_delays: bool,
) -> Result<ChannelEnsemble> {
    if devices == 0 {
        return Err(Error::InvalidConfig {
            field: "devices",
            reason: "must be >= 1".into(),
        });
    }
    check_sampling_params(paths, l_max, k_max, n_slots, distinct_delays)?;
    let channels = if shared_geometry {
        let delays = draw_delays(rng, paths, l_max, distinct_delays);
        let dopplers: Vec<i64> = (0..paths)
            .map(|_| rng.random_range(-(k_max as i64)..=k_max as i64))
            .collect();
        (0..devices)
            .map(|_| {
                let taps = delays
                    .iter()
                    .zip(dopplers.iter())
                    .map(|(&delay_idx, &doppler_idx)| PathTap {
                        gain: complex_gaussian(rng, 1.0 / paths as f64),
                        delay_idx,
                        doppler_idx,
                    })
                    .collect();
                MultipathChannel::new(taps)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..devices)
            .map(|_| {
                let delays = draw_delays(rng, paths, l_max, distinct_delays);
                MultipathChannel::new(draw_gains_dopplers(rng, &delays, k_max))
            })
            .collect::<Result<Vec<_>>>()?
    };
    ChannelEnsemble::new(channels, shared_geometry)
}

/// Block form of one device's channel acting on a zero-padded frame.
///
/// The frame is read as M stacked row vectors of length N. For each tap with
/// delay `l` and each block row `m >= l`, the block `K[m, l]` maps transmit
/// row `m - l` into receive row `m`. Every block is an N x N circulant whose
/// generator (first column) has a single nonzero per tap, at position
/// `doppler mod N`, with value `gain * z^(doppler * (m - l))` and
/// `z = exp(j2π/(MN))`.
///
/// Only the nonzero generators are stored; [`BlockChannelMatrix::to_dense`]
/// materializes the full MN x MN matrix for oracle tests.
#[derive(Debug, Clone)]
pub struct BlockChannelMatrix {
    m_subcarriers: usize,
    n_slots: usize,
    /// (block row m, delay l) -> circulant generator of length N.
    blocks: Vec<((usize, usize), Vec<Complex64>)>,
}

/// Build the block channel matrix for one device.
pub fn build_channel_matrix(
    channel: &MultipathChannel,
    m_subcarriers: usize,
    n_slots: usize,
) -> Result<BlockChannelMatrix> {
    let mut blocks: Vec<((usize, usize), Vec<Complex64>)> = Vec::new();
    let mn = (m_subcarriers * n_slots) as f64;
    for tap in channel.taps() {
        if tap.delay_idx >= m_subcarriers {
            return Err(Error::DelayOutOfRange {
                delay: tap.delay_idx,
                m_subcarriers,
            });
        }
        for m in tap.delay_idx..m_subcarriers {
            let kappa = tap.doppler_idx.rem_euclid(n_slots as i64) as usize;
            let phase =
                2.0 * std::f64::consts::PI * tap.doppler_idx as f64 * (m - tap.delay_idx) as f64
                    / mn;
            let value = tap.gain * Complex64::from_polar(1.0, phase);
            let key = (m, tap.delay_idx);
            match blocks.iter_mut().find(|(k, _)| *k == key) {
                Some((_, gen)) => gen[kappa] += value,
                None => {
                    let mut gen = vec![Complex64::new(0.0, 0.0); n_slots];
                    gen[kappa] = value;
                    blocks.push((key, gen));
                }
            }
        }
    }
    blocks.sort_by_key(|(k, _)| *k);
    Ok(BlockChannelMatrix {
        m_subcarriers,
        n_slots,
        blocks,
    })
}

impl BlockChannelMatrix {
    pub fn m_subcarriers(&self) -> usize {
        self.m_subcarriers
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Circulant generator of block `(m, l)`, if the block exists.
    pub fn generator(&self, block_row: usize, delay: usize) -> Option<&[Complex64]> {
        self.blocks
            .iter()
            .find(|((m, l), _)| *m == block_row && *l == delay)
            .map(|(_, g)| g.as_slice())
    }

    /// Iterate over stored `(block row, delay, generator)` triples.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &[Complex64])> {
        self.blocks.iter().map(|((m, l), g)| (*m, *l, g.as_slice()))
    }

    /// Apply the matrix to a frame read as a stacked vector of rows.
    ///
    /// Valid for zero-padded frames: block rows below a tap's delay have no
    /// stored block, so no wraparound contribution is produced.
    pub fn apply(&self, frame: &DelayDopplerFrame) -> DelayDopplerFrame {
        assert_eq!(
            frame.m_subcarriers(),
            self.m_subcarriers,
            "frame height mismatch"
        );
        assert_eq!(frame.n_slots(), self.n_slots, "frame width mismatch");
        let n = self.n_slots;
        let mut out = DelayDopplerFrame::zeros(self.m_subcarriers, n);
        for ((m, l), gen) in &self.blocks {
            let src = *m - *l;
            for (kappa, g) in gen.iter().enumerate() {
                if g.norm_sqr() == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let j = (i + n - kappa) % n;
                    let v = out.get(*m, i) + g * frame.get(src, j);
                    out.set(*m, i, v);
                }
            }
        }
        out
    }

    /// Dense MN x MN materialization (row-major), debug/oracle path.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let (msub, n) = (self.m_subcarriers, self.n_slots);
        let dim = msub * n;
        let mut dense = vec![Complex64::new(0.0, 0.0); dim * dim];
        for ((m, l), gen) in &self.blocks {
            let src = m - l;
            for i in 0..n {
                for j in 0..n {
                    // circulant: entry (i, j) is generator[(i - j) mod N]
                    let g = gen[(i + n - j) % n];
                    dense[(m * n + i) * dim + (src * n + j)] += g;
                }
            }
        }
        dense
    }
}
