//! Integer coding tables derived from a factorized entropy model.

use serde::{Deserialize, Serialize};

use super::FactorizedEntropyModel;
use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: u32 = 16;
pub const DEFAULT_TAIL_MASS: f64 = 1.0 / 256.0;

/// Quantized CDF for one channel. Symbols `y_min..=y_max` occupy slots
/// `0..n`, slot `n` is the escape symbol for everything else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCdf {
    pub y_min: i32,
    pub y_max: i32,
    /// `n + 2` cumulative counts from 0 to `2^precision`.
    pub cdf: Vec<u32>,
}

impl ChannelCdf {
    pub fn support_len(&self) -> usize {
        (self.y_max - self.y_min + 1) as usize
    }

    pub fn escape_index(&self) -> usize {
        self.support_len()
    }

    pub fn num_slots(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Slot for `value`, or the escape slot when it is off-support.
    #[inline]
    pub fn slot_of(&self, value: i32) -> usize {
        if value < self.y_min || value > self.y_max {
            self.escape_index()
        } else {
            (value - self.y_min) as usize
        }
    }

    #[inline]
    pub fn start(&self, slot: usize) -> u32 {
        self.cdf[slot]
    }

    #[inline]
    pub fn freq(&self, slot: usize) -> u32 {
        self.cdf[slot + 1] - self.cdf[slot]
    }

    /// Slot whose interval contains `target`.
    #[inline]
    pub fn lookup(&self, target: u32) -> usize {
        self.cdf.partition_point(|&c| c <= target) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdfTable {
    pub precision: u32,
    pub channels: Vec<ChannelCdf>,
}

impl CdfTable {
    pub fn total(&self) -> u32 {
        1 << self.precision
    }

    /// Checks the structural invariants: counts nondecreasing from 0 to
    /// `2^precision`, every slot at least one count, fewer than
    /// `2^precision` slots.
    pub fn validate(&self) -> Result<()> {
        if !(8..=24).contains(&self.precision) {
            return Err(Error::Table(format!("precision {} outside [8, 24]", self.precision)));
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.y_max < ch.y_min {
                return Err(Error::Table(format!("channel {c}: empty support")));
            }
            if ch.cdf.len() != ch.support_len() + 2 {
                return Err(Error::Table(format!("channel {c}: wrong cdf length")));
            }
            if ch.num_slots() as u64 >= 1u64 << self.precision {
                return Err(Error::Table(format!("channel {c}: too many symbols")));
            }
            if ch.cdf[0] != 0 || *ch.cdf.last().expect("nonempty") != self.total() {
                return Err(Error::Table(format!("channel {c}: cdf must span [0, 2^precision]")));
            }
            if ch.cdf.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Table(format!("channel {c}: zero-count slot")));
            }
        }
        Ok(())
    }

    /// Builds a table from explicit pmfs. Each entry gives `y_min` and the
    /// probabilities of consecutive symbols from there; `escape_mass` is the
    /// off-support mass per channel.
    pub fn from_pmfs(precision: u32, supports: &[(i32, Vec<f64>)], escape_mass: &[f64]) -> Result<Self> {
        let channels = supports
            .iter()
            .zip(escape_mass)
            .map(|((y_min, probs), &esc)| {
                let mut pmf = probs.clone();
                pmf.push(esc);
                let counts = quantize_pmf(&pmf, precision)?;
                Ok(ChannelCdf {
                    y_min: *y_min,
                    y_max: y_min + probs.len() as i32 - 1,
                    cdf: cumulative(&counts),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = CdfTable { precision, channels };
        t.validate()?;
        Ok(t)
    }
}

fn cumulative(counts: &[u32]) -> Vec<u32> {
    let mut cdf = Vec::with_capacity(counts.len() + 1);
    cdf.push(0);
    let mut acc = 0;
    for &c in counts {
        acc += c;
        cdf.push(acc);
    }
    cdf
}

/// Turns probabilities into integer counts summing to `2^precision`, each at
/// least 1. Largest-remainder rounding; excess created by the minimum-count
/// rule is taken back from the most over-allocated slots. Each count ends
/// within two units of its real-valued target.
pub fn quantize_pmf(pmf: &[f64], precision: u32) -> Result<Vec<u32>> {
    let total = 1u64 << precision;
    let n = pmf.len();
    if n == 0 || n as u64 >= total {
        return Err(Error::Table(format!(
            "{n} symbols do not fit a {precision}-bit table"
        )));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Table("pmf has negative or non-finite entries".into()));
    }
    let mass: f64 = pmf.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Table("pmf has zero mass".into()));
    }
    let targets: Vec<f64> = pmf.iter().map(|p| p / mass * total as f64).collect();
    let mut counts: Vec<u64> = targets.iter().map(|t| (t.floor() as u64).max(1)).collect();
    let mut sum: u64 = counts.iter().sum();

    if sum < total {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = targets[a] - counts[a] as f64;
            let rb = targets[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if sum == total {
                break;
            }
            counts[i] += 1;
            sum += 1;
        }
    }
    while sum > total {
        let mut order: Vec<usize> = (0..n).filter(|&i| counts[i] > 1).collect();
        order.sort_by(|&a, &b| {
            let oa = counts[a] as f64 - targets[a];
            let ob = counts[b] as f64 - targets[b];
            ob.total_cmp(&oa).then(a.cmp(&b))
        });
        for &i in &order {
            if sum == total {
                break;
            }
            counts[i] -= 1;
            sum -= 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as u32).collect())
}

pub(super) fn build(model: &FactorizedEntropyModel, precision: u32, tail_mass: f64) -> Result<CdfTable> {
    if !(8..=24).contains(&precision) {
        return Err(Error::Table(format!("precision {precision} outside [8, 24]")));
    }
    if !(tail_mass > 0.0 && tail_mass < 0.01) {
        return Err(Error::Table(format!("tail mass {tail_mass} outside (0, 0.01)")));
    }
    let max_slots = (1u64 << precision) - 1;
    let mut channels = Vec::with_capacity(model.channels());
    for c in 0..model.channels() {
        // Half the tail budget on each side, shaved slightly so the total
        // stays strictly below `tail_mass`.
        let side = 0.499 * tail_mass;
        let lo = model.quantile(c, side)?;
        let hi = model.quantile(c, 1.0 - side)?;
        let y_min = (lo + 0.5).floor();
        let y_max = (hi - 0.5).ceil().max(y_min);
        let n = y_max - y_min + 1.0;
        if n + 1.0 > max_slots as f64 {
            return Err(Error::Table(format!(
                "channel {c}: support [{y_min}, {y_max}] needs more than {max_slots} slots"
            )));
        }
        if y_min < i32::MIN as f64 / 2.0 || y_max > i32::MAX as f64 / 2.0 {
            return Err(Error::Table(format!("channel {c}: support out of integer range")));
        }
        let (y_min, y_max) = (y_min as i32, y_max as i32);
        let mut pmf = model.symbol_probabilities(c, y_min, y_max);
        let inside: f64 = pmf.iter().sum();
        pmf.push((1.0 - inside).max(0.0));
        let counts = quantize_pmf(&pmf, precision)?;
        channels.push(ChannelCdf {
            y_min,
            y_max,
            cdf: cumulative(&counts),
        });
    }
    let table = CdfTable { precision, channels };
    table.validate()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_sum_to_total_and_stay_positive() {
        let pmf = [0.5, 0.25, 0.125, 0.0625, 0.0625, 0.0];
        let c = quantize_pmf(&pmf, 8).unwrap();
        assert_eq!(c.iter().sum::<u32>(), 256);
        assert!(c.iter().all(|&v| v >= 1));
    }

    #[test]
    fn near_deterministic_symbol_keeps_almost_everything() {
        let mut pmf = vec![1e-12; 9];
        pmf[4] = 1.0;
        let c = quantize_pmf(&pmf, 16).unwrap();
        assert!(c[4] >= (1 << 16) - (pmf.len() as u32 - 1));
    }

    #[test]
    fn too_many_symbols_is_an_error() {
        let pmf = vec![1.0; 256];
        assert!(quantize_pmf(&pmf, 8).is_err());
        assert!(quantize_pmf(&pmf[..255], 8).is_ok());
    }

    #[test]
    fn lookup_finds_interval() {
        let ch = ChannelCdf {
            y_min: -1,
            y_max: 1,
            cdf: vec![0, 10, 200, 250, 256],
        };
        assert_eq!(ch.lookup(0), 0);
        assert_eq!(ch.lookup(9), 0);
        assert_eq!(ch.lookup(10), 1);
        assert_eq!(ch.lookup(255), 3);
        assert_eq!(ch.slot_of(7), 3);
        assert_eq!(ch.slot_of(-1), 0);
    }
}
