//! Switching structure and optimality checks for computed trajectories.

use crate::discretize::{AffineData, ControlTrajectory};
use crate::error::{Error, Result};
use crate::model::{Bounds, Grid};
use crate::project::range_multiplier;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    GapVector,
    Control,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelSwitching {
    /// Interpolated zero crossings, strictly increasing.
    pub times: Vec<f64>,
    /// Sign of each arc between crossings (`+1` / `-1`), alternating.
    pub signs: Vec<i8>,
    /// Maximal runs with `|signal| <= tau` lasting at least `min_len`.
    pub singular: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingProfile {
    pub reference: SignalKind,
    pub channels: Vec<ChannelSwitching>,
}

impl SwitchingProfile {
    pub fn switch_count(&self) -> usize {
        self.channels.iter().map(|c| c.times.len()).sum()
    }

    /// Switch times of all channels, in channel order.
    pub fn all_times(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flat_map(|c| c.times.iter().copied())
            .collect()
    }
}

/// Default dead band: `1e-7 * max |signal|`.
pub fn default_tau(sig: &ControlTrajectory) -> f64 {
    1e-7 * sig.max_abs()
}

/// Default minimum singular-arc length: `20 h`.
pub fn default_min_len(grid: &Grid) -> f64 {
    20.0 * grid.h()
}

/// Locates sign changes of each channel of `sig`.
///
/// A switch is recorded between two nodes of opposite strict sign
/// (`|value| > tau`), at the linear-interpolation zero of those two nodes.
/// Nodes inside the dead band are skipped, so a crossing that passes through a
/// band node is interpolated across it.
pub fn extract_switchings(
    sig: &ControlTrajectory,
    reference: SignalKind,
    tau: f64,
    min_len: f64,
) -> Result<SwitchingProfile> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    let grid = *sig.grid();
    let h = grid.h();
    let mut channels = Vec::with_capacity(sig.channels());
    for i in 0..sig.channels() {
        let values: Vec<f64> = sig.channel(i).collect();
        let mut out = ChannelSwitching::default();
        let mut last: Option<(usize, f64)> = None;
        let mut band_start: Option<usize> = None;
        for (k, &val) in values.iter().enumerate() {
            if val.abs() <= tau {
                band_start.get_or_insert(k);
                continue;
            }
            if let Some(start) = band_start.take() {
                push_singular(&mut out, &grid, start, k, min_len, h);
            }
            let sign: i8 = if val > 0.0 { 1 } else { -1 };
            match last {
                None => out.signs.push(sign),
                Some((kp, vp)) if (vp > 0.0) != (val > 0.0) => {
                    let t = grid.node(kp) + (k - kp) as f64 * h * vp / (vp - val);
                    out.times.push(t);
                    out.signs.push(sign);
                }
                _ => {}
            }
            last = Some((k, val));
        }
        if let Some(start) = band_start {
            push_singular(&mut out, &grid, start, values.len(), min_len, h);
        }
        channels.push(out);
    }
    Ok(SwitchingProfile {
        reference,
        channels,
    })
}

fn push_singular(
    out: &mut ChannelSwitching,
    grid: &Grid,
    start: usize,
    end: usize,
    min_len: f64,
    h: f64,
) {
    // nodes start..end are in the band; each node represents an interval of h
    let len = (end - start) as f64 * h;
    if len >= min_len && len > 0.0 {
        out.singular.push((grid.node(start), grid.node(end)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BangBangAgreement {
    /// Fraction of tested nodes where `uB` sits on the bound chosen by sign(v).
    pub agreement: f64,
    pub tested: usize,
    pub exempt: usize,
}

/// Compares `uB` with the bound selected by the sign of the gap vector:
/// upper where `v > tau`, lower where `v < -tau`. Nodes with `|v| <= tau` are
/// exempt.
pub fn check_bang_bang(
    ub: &ControlTrajectory,
    v: &ControlTrajectory,
    bounds: &Bounds,
    tau: f64,
) -> Result<BangBangAgreement> {
    ub.check_same_shape(v)?;
    bounds.check_shape(ub.steps(), ub.channels())?;
    let (mut tested, mut hits, mut exempt) = (0usize, 0usize, 0usize);
    for (j, (u, vi)) in ub.as_slice().iter().zip(v.as_slice()).enumerate() {
        if vi.abs() <= tau {
            exempt += 1;
            continue;
        }
        tested += 1;
        let (lo, hi) = bounds.interval(j);
        let target = if *vi > 0.0 { hi } else { lo };
        if (u - target).abs() <= 1e-9 * (1.0 + target.abs()) {
            hits += 1;
        }
    }
    Ok(BangBangAgreement {
        agreement: if tested == 0 {
            1.0
        } else {
            hits as f64 / tested as f64
        },
        tested,
        exempt,
    })
}

/// `uA = upper + v` where `v >= 0`, `lower + v` where `v < 0`.
pub fn reconstruct_ua(
    ub: &ControlTrajectory,
    v: &ControlTrajectory,
    bounds: &Bounds,
) -> Result<ControlTrajectory> {
    ub.check_same_shape(v)?;
    bounds.check_shape(ub.steps(), ub.channels())?;
    let values = v
        .as_slice()
        .iter()
        .enumerate()
        .map(|(j, vi)| {
            let (lo, hi) = bounds.interval(j);
            if *vi >= 0.0 {
                hi + vi
            } else {
                lo + vi
            }
        })
        .collect();
    ControlTrajectory::new(*ub.grid(), ub.channels(), values)
}

/// Relative distance of `v` from `range(G^T)`: `|v - G^T mu| / (1 + |v|)` with
/// the least-squares multiplier `mu`.
pub fn adjoint_range_residual(v: &ControlTrajectory, aff: &AffineData) -> Result<f64> {
    if v.as_slice().len() != aff.coords() {
        return Err(Error::DimensionMismatch {
            what: "gap vector",
            expected: aff.coords(),
            actual: v.as_slice().len(),
        });
    }
    let mu = range_multiplier(aff, v.as_slice())?;
    let mut fit = vec![0.0; aff.coords()];
    aff.apply_gt(&mu, &mut fit);
    let resid: f64 = v
        .as_slice()
        .iter()
        .zip(&fit)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(resid / (1.0 + norm))
}
