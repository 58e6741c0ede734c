//! Over-the-air computation on plain (non-padded) OTFS frames: principal-path
//! frame arrangement, transmit precoding, the analytic MSE of the aggregated
//! estimate, and the closed-form jointly optimal transmit-power / denoising
//! solution.
//!
//! Every device aligns its frame against its own principal (smallest-delay)
//! path and inverts that path's phase, so the principal-path contributions of
//! all devices add coherently at the fusion center with real coefficients
//! `sqrt(p_u) * |h_u1|`. Remaining paths contribute inter-symbol and
//! inter-link interference, which together with noise drives the estimation
//! error
//!
//! `ε = Σ_u (sqrt(p_u)|h_u1|/sqrt(η) − 1)^2 + Σ_u Σ_{i>=2} p_u |h_ui|^2 / η + σ²/η`.
//!
//! (The conventional 1/U² factor is omitted; [`MseReport`] carries the
//! normalized value alongside.)
//!
//! [`theorem1_solve`] minimizes ε jointly over per-device powers `p_u ∈ [0, P]`
//! and the denoising factor `η >= 0` in closed form, by scanning the U + 1
//! intervals of η on which the set of power-clipped devices is constant.
//!
//! [`MseReport`]: crate::harness::MseReport

use num_complex::Complex64;

use crate::channel::{ChannelEnsemble, MultipathChannel, PathTap};
use crate::error::{Error, Result};
use crate::grid::{alpha, dd_io_relation, DelayDopplerFrame};
use crate::rng::{complex_gaussian, qpsk_symbol, ChaCha8Rng};

/// Per-device transmit powers plus the receive-side denoising factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolicy {
    pub powers: Vec<f64>,
    pub eta: f64,
}

/// Scenario constants: grid shape, device count, per-symbol power budget and
/// noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub m_subcarriers: usize,
    pub n_slots: usize,
    pub devices: usize,
    pub power_budget: f64,
    pub noise_var: f64,
}

impl SystemParams {
    pub fn new(
        m_subcarriers: usize,
        n_slots: usize,
        devices: usize,
        power_budget: f64,
        noise_var: f64,
    ) -> Self {
        assert!(m_subcarriers >= 1 && n_slots >= 1 && devices >= 1);
        assert!(power_budget > 0.0 && noise_var >= 0.0);
        Self {
            m_subcarriers,
            n_slots,
            devices,
            power_budget,
            noise_var,
        }
    }
}

/// The three additive parts of the aggregation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBreakdown {
    /// Misalignment of the coherently combined principal-path terms.
    pub signal_misalignment: f64,
    /// Inter-symbol / inter-link interference from non-principal paths.
    pub interference: f64,
    /// Receiver noise after denoising, σ²/η.
    pub noise: f64,
    pub total: f64,
}

/// How Monte Carlo data symbols are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymbolDist {
    /// Circularly-symmetric complex Gaussian CN(0, 1).
    #[default]
    Gaussian,
    /// Unit-modulus QPSK, (±1 ± j)/√2.
    Qpsk,
}

impl SymbolDist {
    pub(crate) fn draw(self, rng: &mut ChaCha8Rng) -> Complex64 {
        match self {
            SymbolDist::Gaussian => complex_gaussian(rng, 1.0),
            SymbolDist::Qpsk => qpsk_symbol(rng),
        }
    }
}

/// Cyclically shift `data` so the principal path of the channel maps each
/// logical symbol back onto its own grid position after propagation:
/// `out[a, b] = data[(a + l1) mod M, (b + k1) mod N]`.
pub fn arrange_frame(data: &DelayDopplerFrame, principal: &PathTap) -> DelayDopplerFrame {
    let (m_sub, n) = (data.m_subcarriers(), data.n_slots());
    DelayDopplerFrame::from_fn(m_sub, n, |a, b| {
        let l = (a + principal.delay_idx) % m_sub;
        let k = (b as i64 + principal.doppler_idx).rem_euclid(n as i64) as usize;
        data.get(l, k)
    })
}

/// Multiply each symbol by the transmit coefficient
/// `b[l',k'] = sqrt(p) * conj(h_1) * conj(alpha_1 at the landing position) / |h_1|`,
/// so that the principal-path term arrives with the real coefficient
/// `sqrt(p) * |h_1|` at every grid point.
pub fn precode(
    frame: &DelayDopplerFrame,
    channel: &MultipathChannel,
    power: f64,
) -> Result<DelayDopplerFrame> {
    assert!(power >= 0.0, "transmit power must be nonnegative");
    let principal = channel.principal();
    if principal.gain.norm_sqr() == 0.0 {
        return Err(Error::ZeroPrincipalGain { device: 0 });
    }
    let (m_sub, n) = (frame.m_subcarriers(), frame.n_slots());
    let unit_phase = principal.gain.conj() / principal.gain.norm();
    let scale = power.sqrt();
    Ok(DelayDopplerFrame::from_fn(m_sub, n, |l_tx, k_tx| {
        // Landing position of this symbol through the principal path.
        let l_rx = (l_tx + principal.delay_idx) % m_sub;
        let k_rx = (k_tx as i64 + principal.doppler_idx).rem_euclid(n as i64) as usize;
        let a = alpha(
            l_rx,
            k_rx,
            principal.delay_idx,
            principal.doppler_idx,
            m_sub,
            n,
        );
        frame.get(l_tx, k_tx) * unit_phase * a.conj() * scale
    }))
}

/// Evaluate the analytic aggregation error for a given policy.
pub fn analytic_mse(
    policy: &PowerPolicy,
    ensemble: &ChannelEnsemble,
    params: &SystemParams,
) -> Result<MseBreakdown> {
    if policy.eta <= 0.0 {
        return Err(Error::ZeroDenoising);
    }
    assert_eq!(
        policy.powers.len(),
        ensemble.device_count(),
        "one power per device"
    );
    let eta = policy.eta;
    let sqrt_eta = eta.sqrt();
    let mut misalignment = 0.0;
    let mut interference = 0.0;
    for (ch, &p) in ensemble.channels().iter().zip(policy.powers.iter()) {
        assert!(p >= 0.0, "powers must be nonnegative");
        let a = ch.principal().gain.norm();
        misalignment += (p.sqrt() * a / sqrt_eta - 1.0).powi(2);
        for tap in &ch.taps()[1..] {
            interference += p * tap.gain.norm_sqr() / eta;
        }
    }
    let noise = params.noise_var / eta;
    Ok(MseBreakdown {
        signal_misalignment: misalignment,
        interference,
        noise,
        total: misalignment + interference + noise,
    })
}

/// Per-device power minimizing the error at a fixed denoising factor:
/// `p_u = min(P, |h_u1|^2 η / (Σ_i |h_ui|^2)^2)`.
pub fn optimal_power_given_eta(
    eta: f64,
    ensemble: &ChannelEnsemble,
    params: &SystemParams,
) -> Vec<f64> {
    assert!(eta >= 0.0);
    ensemble
        .channels()
        .iter()
        .map(|ch| {
            let a2 = ch.principal().gain.norm_sqr();
            let t = ch.total_power();
            (a2 * eta / (t * t)).min(params.power_budget)
        })
        .collect()
}

/// Devices ordered by the ratio `q_u = Σ_i |h_ui|^2 / |h_u1|` ascending
/// (stable on ties). Along this order the optimal power hits the budget for
/// a prefix of devices and stays interior for the rest.
pub fn sort_devices(ensemble: &ChannelEnsemble) -> Result<Vec<usize>> {
    let mut ratios = Vec::with_capacity(ensemble.device_count());
    for (u, ch) in ensemble.channels().iter().enumerate() {
        let a = ch.principal().gain.norm();
        if a == 0.0 {
            return Err(Error::ZeroPrincipalGain { device: u });
        }
        ratios.push(ch.total_power() / a);
    }
    let mut perm: Vec<usize> = (0..ratios.len()).collect();
    perm.sort_by(|&i, &j| ratios[i].partial_cmp(&ratios[j]).unwrap());
    Ok(perm)
}

/// Result of the generic joint power/denoising minimization.
#[derive(Debug, Clone)]
pub(crate) struct JointSolution {
    /// Optimal powers, in the caller's original device order.
    pub powers: Vec<f64>,
    /// Optimal denoising factor; always inside the winning interval.
    pub eta: f64,
    /// Number of devices transmitting at the full budget (prefix of the
    /// q-sorted order).
    #[allow(dead_code)] // asserted in tests; lib consumers read powers/eta
    pub full_power_devices: usize,
    /// Objective value at the optimum.
    pub mse: f64,
}

/// Exact minimizer of
/// `Σ_u (sqrt(p_u) a_u / sqrt(η) − 1)^2 + Σ_u p_u (t_u − a_u^2)/η + noise/η`
/// over `p_u ∈ [0, budget]` and `η >= 0`, for per-device alignment gains
/// `a_u > 0` and total powers `t_u >= a_u^2`.
///
/// For fixed η the optimal power is `min(budget, a_u^2 η / t_u^2)`, so devices
/// sorted by `q_u = t_u / a_u` ascending clip to the budget for exactly a
/// prefix. On the η-interval where the clipped prefix has length u the
/// objective is unimodal with stationary point
/// `η̂_u = ((noise + budget Σ_{j<=u} t_j) / (sqrt(budget) Σ_{j<=u} a_j))^2`;
/// the scan clips each stationary point into its interval, evaluates the
/// objective, and keeps the best interval (smallest index on ties).
pub(crate) fn solve_joint_power_denoise(
    gains: &[(f64, f64)],
    noise: f64,
    budget: f64,
) -> Result<JointSolution> {
    let count = gains.len();
    assert!(count >= 1);
    for (u, &(a, t)) in gains.iter().enumerate() {
        if a <= 0.0 {
            return Err(Error::ZeroPrincipalGain { device: u });
        }
        assert!(t >= a * a - 1e-12, "total power below principal power");
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&i, &j| {
        let qi = gains[i].1 / gains[i].0;
        let qj = gains[j].1 / gains[j].0;
        qi.partial_cmp(&qj).unwrap()
    });

    let q = |u: usize| gains[order[u]].1 / gains[order[u]].0;
    let objective = |eta: f64| -> f64 {
        let mut v = noise / eta;
        for &(a, t) in gains {
            let p = (a * a * eta / (t * t)).min(budget);
            v += (p.sqrt() * a / eta.sqrt() - 1.0).powi(2) + p * (t - a * a) / eta;
        }
        v
    };

    let mut best: Option<(f64, f64, usize)> = None; // (mse, eta, prefix len)
    let mut sum_t = 0.0;
    let mut sum_a = 0.0;
    for u in 1..=count {
        sum_t += gains[order[u - 1]].1;
        sum_a += gains[order[u - 1]].0;
        let stationary = ((noise + budget * sum_t) / (budget.sqrt() * sum_a)).powi(2);
        let lo = budget * q(u - 1).powi(2);
        let hi = if u < count {
            budget * q(u).powi(2)
        } else {
            f64::INFINITY
        };
        let eta = stationary.clamp(lo, hi);
        if eta <= 0.0 {
            // Possible only when noise == 0 and the first gains vanish; the
            // gain check above excludes it, so every candidate is positive.
            continue;
        }
        let mse = objective(eta);
        if best.is_none_or(|(m, _, _)| mse < m) {
            best = Some((mse, eta, u));
        }
    }
    let (mse, eta, full) = best.expect("at least one interval candidate");
    let powers = gains
        .iter()
        .map(|&(a, t)| (a * a * eta / (t * t)).min(budget))
        .collect();
    Ok(JointSolution {
        powers,
        eta,
        full_power_devices: full,
        mse,
    })
}

/// Jointly optimal transmit powers and denoising factor for the aggregation
/// error above. Powers come back in original device order; the returned η
/// lies in the interval whose clipped-device prefix it induces.
pub fn theorem1_solve(ensemble: &ChannelEnsemble, params: &SystemParams) -> Result<PowerPolicy> {
    let gains = principal_total_gains(ensemble)?;
    let sol = solve_joint_power_denoise(&gains, params.noise_var, params.power_budget)?;
    Ok(PowerPolicy {
        powers: sol.powers,
        eta: sol.eta,
    })
}

fn principal_total_gains(ensemble: &ChannelEnsemble) -> Result<Vec<(f64, f64)>> {
    ensemble
        .channels()
        .iter()
        .enumerate()
        .map(|(u, ch)| {
            let a = ch.principal().gain.norm();
            if a == 0.0 {
                return Err(Error::ZeroPrincipalGain { device: u });
            }
            Ok((a, ch.total_power()))
        })
        .collect()
}

/// Baseline: everyone transmits at the full budget; η is the stationary point
/// of the objective with the whole device set clipped.
pub fn full_power_policy(ensemble: &ChannelEnsemble, params: &SystemParams) -> Result<PowerPolicy> {
    let gains = principal_total_gains(ensemble)?;
    let p = params.power_budget;
    let sum_t: f64 = gains.iter().map(|g| g.1).sum();
    let sum_a: f64 = gains.iter().map(|g| g.0).sum();
    let eta = ((params.noise_var + p * sum_t) / (p.sqrt() * sum_a)).powi(2);
    Ok(PowerPolicy {
        powers: vec![p; gains.len()],
        eta,
    })
}

/// Baseline: only device 0 transmits (at the full budget); η matches that
/// single device's stationary point.
pub fn single_device_policy(
    ensemble: &ChannelEnsemble,
    params: &SystemParams,
) -> Result<PowerPolicy> {
    let gains = principal_total_gains(ensemble)?;
    let p = params.power_budget;
    let (a1, t1) = gains[0];
    let eta = ((params.noise_var + p * t1) / (p.sqrt() * a1)).powi(2);
    let mut powers = vec![0.0; gains.len()];
    powers[0] = p;
    Ok(PowerPolicy { powers, eta })
}

/// Empirical aggregation error from Monte Carlo frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalMse {
    /// Mean of `|y/sqrt(η) − Σ_u x_u|^2` (same convention as the analytic
    /// error, i.e. U² times the per-average error).
    pub mean: f64,
    /// Standard error of `mean` over frames.
    pub std_error: f64,
    /// `mean / U²`, the error of the averaged estimate itself.
    pub normalized: f64,
    pub frames: usize,
}

/// Simulate `frames` transmissions and measure the empirical error of the
/// denoised aggregate against the true symbol average.
///
/// Each frame draws fresh unit-power symbols per device, arranges and
/// precodes them for that device's principal path, superposes all devices
/// through the delay-Doppler relation with AWGN of variance σ², and compares
/// `y/sqrt(η)` against the symbol sum.
///
/// The analytic error model treats every tap as landing on its own grid
/// shift; when two taps of one device share both delay and Doppler indices
/// their contributions add coherently and the measured error departs from
/// [`analytic_mse`]. Distinct-delay channels avoid this.
pub fn estimate_and_measure(
    ensemble: &ChannelEnsemble,
    policy: &PowerPolicy,
    params: &SystemParams,
    rng: &mut ChaCha8Rng,
    frames: usize,
    dist: SymbolDist,
) -> Result<EmpiricalMse> {
    assert!(frames >= 1, "need at least one frame");
    if policy.eta <= 0.0 {
        return Err(Error::ZeroDenoising);
    }
    assert_eq!(policy.powers.len(), ensemble.device_count());
    let (m_sub, n) = (params.m_subcarriers, params.n_slots);
    let devices = ensemble.device_count();
    let sqrt_eta = policy.eta.sqrt();

    let mut per_frame = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut target = DelayDopplerFrame::zeros(m_sub, n);
        let mut tx = Vec::with_capacity(devices);
        for (ch, &p) in ensemble.channels().iter().zip(policy.powers.iter()) {
            let data = DelayDopplerFrame::from_fn(m_sub, n, |_, _| dist.draw(rng));
            for l in 0..m_sub {
                for k in 0..n {
                    target.set(l, k, target.get(l, k) + data.get(l, k));
                }
            }
            let arranged = arrange_frame(&data, &ch.principal());
            tx.push(precode(&arranged, ch, p)?);
        }
        let noise =
            DelayDopplerFrame::from_fn(m_sub, n, |_, _| complex_gaussian(rng, params.noise_var));
        let received = dd_io_relation(&tx, ensemble.channels(), &noise)?;
        let mut acc = 0.0;
        for l in 0..m_sub {
            for k in 0..n {
                acc += (received.get(l, k) / sqrt_eta - target.get(l, k)).norm_sqr();
            }
        }
        per_frame.push(acc / (m_sub * n) as f64);
    }

    let mean = per_frame.iter().sum::<f64>() / frames as f64;
    let var = if frames > 1 {
        per_frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (frames - 1) as f64
    } else {
        0.0
    };
    Ok(EmpiricalMse {
        mean,
        std_error: (var / frames as f64).sqrt(),
        normalized: mean / (devices * devices) as f64,
        frames,
    })
}
