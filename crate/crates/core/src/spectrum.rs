//! Slot-level quantities of the sensing/access model: energy costs,
//! achievable throughput, the access collision indicator, utility, energy
//! efficiency, and validation of channel assignments.
//!
//! Channels and UAVs are indexed from zero throughout the crate. Occupancy
//! bits use 0 for a vacant sub-channel (a spectrum hole) and 1 for busy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Durations of the four sub-slots, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlotTiming {
    pub t_req: f64,
    pub t_s: f64,
    pub t_b: f64,
    pub t_a: f64,
}

impl SlotTiming {
    pub fn new(t_req: f64, t_s: f64, t_b: f64, t_a: f64) -> Result<Self> {
        let timing = Self {
            t_req,
            t_s,
            t_b,
            t_a,
        };
        timing.validate()?;
        Ok(timing)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_req", self.t_req),
            ("t_s", self.t_s),
            ("t_b", self.t_b),
            ("t_a", self.t_a),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("duration must be finite and >= 0, got {v}")));
            }
        }
        if self.total() <= 0.0 {
            return Err(invalid("timing", "total slot length must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.t_req + self.t_s + self.t_b + self.t_a
    }
}

impl Default for SlotTiming {
    fn default() -> Self {
        Self {
            t_req: 1e-3,
            t_s: 2e-3,
            t_b: 1e-3,
            t_a: 6e-3,
        }
    }
}

/// Radio parameters shared by every UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Receiver supply voltage (V).
    pub v_cc: f64,
    /// Transmit power (W).
    pub p_tx: f64,
    /// Bandwidth of one sub-channel (Hz).
    pub subchannel_bandwidth: f64,
    pub num_subchannels: usize,
    pub num_uavs: usize,
    /// Total system bandwidth (Hz), if constrained.
    pub system_bandwidth: Option<f64>,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("v_cc", self.v_cc),
            ("p_tx", self.p_tx),
            ("subchannel_bandwidth", self.subchannel_bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.num_subchannels == 0 {
            return Err(invalid("num_subchannels", "must be >= 1"));
        }
        if self.num_uavs == 0 {
            return Err(invalid("num_uavs", "must be >= 1"));
        }
        if let Some(b) = self.system_bandwidth {
            let used = self.num_subchannels as f64 * self.subchannel_bandwidth;
            if used > b {
                return Err(invalid(
                    "system_bandwidth",
                    format!("{} sub-channels of {} Hz exceed {b} Hz", self.num_subchannels, self.subchannel_bandwidth),
                ));
            }
        }
        Ok(())
    }
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            v_cc: 1.8,
            p_tx: 0.1,
            subchannel_bandwidth: 540e3,
            num_subchannels: 16,
            num_uavs: 3,
            system_bandwidth: None,
        }
    }
}

/// Binary per-sub-channel occupancy: 0 = vacant, 1 = busy.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct OccupancyVector(Vec<u8>);

impl OccupancyVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(invalid("occupancy", format!("entry {pos} is {}, expected 0 or 1", bits[pos])));
        }
        Ok(Self(bits))
    }

    pub fn vacant(m: usize) -> Self {
        Self(vec![0; m])
    }

    pub fn busy(m: usize) -> Self {
        Self(vec![1; m])
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    /// Builds a vector from a bit mask where bit `m` holds channel `m`.
    pub fn from_mask(mask: u64, m: usize) -> Self {
        debug_assert!(m <= 64);
        Self((0..m).map(|i| ((mask >> i) & 1) as u8).collect())
    }

    pub fn to_mask(&self) -> u64 {
        debug_assert!(self.0.len() <= 64);
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bit(&self, m: usize) -> u8 {
        self.0[m]
    }

    pub fn is_vacant(&self, m: usize) -> bool {
        self.0[m] == 0
    }

    pub fn set(&mut self, m: usize, busy: bool) {
        self.0[m] = u8::from(busy);
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Number of busy entries, written |f| in the hole-budget constraint.
    pub fn busy_count(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn hole_count(&self) -> usize {
        self.0.len() - self.busy_count()
    }

    pub fn holes(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b == 0).map(|(m, _)| m)
    }
}

impl fmt::Debug for OccupancyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        write!(f, "]")
    }
}

impl TryFrom<Vec<u8>> for OccupancyVector {
    type Error = Error;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<OccupancyVector> for Vec<u8> {
    fn from(v: OccupancyVector) -> Self {
        v.0
    }
}

/// Set of (uav, sub-channel) pairs with `y_km = 1`.
///
/// Construction does not enforce the uniqueness constraints so that a
/// proposed allocation can be checked with [`validate_assignment`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, uav: usize, channel: usize) {
        self.pairs.push((uav, channel));
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn channel_of(&self, uav: usize) -> Option<usize> {
        self.pairs.iter().find(|(k, _)| *k == uav).map(|&(_, m)| m)
    }
}

/// A single violated assignment constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    UavAssignedTwice { uav: usize, channels: Vec<usize> },
    ChannelAssignedTwice { channel: usize, uavs: Vec<usize> },
    ExceedsHoleBudget { assigned: usize, holes: usize },
    ChannelBusy { channel: usize },
    ChannelOutOfRange { channel: usize, num_channels: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UavAssignedTwice { uav, channels } => {
                write!(f, "UAV {uav} assigned to several channels {channels:?}")
            }
            Violation::ChannelAssignedTwice { channel, uavs } => {
                write!(f, "channel {channel} assigned to several UAVs {uavs:?}")
            }
            Violation::ExceedsHoleBudget { assigned, holes } => {
                write!(f, "{assigned} assignments exceed hole count {holes}")
            }
            Violation::ChannelBusy { channel } => write!(f, "channel {channel} is busy"),
            Violation::ChannelOutOfRange {
                channel,
                num_channels,
            } => write!(f, "channel {channel} outside 0..{num_channels}"),
        }
    }
}

/// `SC = t_s · V_CC² · B_m`, in joules.
pub fn sensing_cost(timing: &SlotTiming, radio: &RadioParams) -> f64 {
    timing.t_s * radio.v_cc * radio.v_cc * radio.subchannel_bandwidth
}

/// `AC = t_a · P_tx`, in joules.
pub fn access_cost(timing: &SlotTiming, radio: &RadioParams) -> f64 {
    timing.t_a * radio.p_tx
}

/// Bits delivered in the access sub-slot, `t_a · B_m · log2(1 + SINR)`.
pub fn throughput(timing: &SlotTiming, radio: &RadioParams, sinr_linear: f64) -> Result<f64> {
    if !(sinr_linear >= 0.0) {
        return Err(invalid("sinr_linear", format!("must be >= 0 (linear scale), got {sinr_linear}")));
    }
    Ok(timing.t_a * radio.subchannel_bandwidth * (1.0 + sinr_linear).log2())
}

/// Outcome of transmitting on a channel that was predicted vacant in the
/// previous slot: +1 when it is still vacant, -1 when the primary user
/// returned, and 0 when no transmission opportunity existed.
pub fn collision_indicator(true_state_now: u8, fused_prev: u8) -> i8 {
    match (true_state_now, fused_prev) {
        (0, 0) => 1,
        (_, 0) => -1,
        _ => 0,
    }
}

/// Per-(UAV, channel) terms entering the utility and energy efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkTerms {
    pub assigned: bool,
    pub collision: i8,
    pub throughput: f64,
    pub access_cost: f64,
}

/// Σ y·r·R over the slot. Negative when collisions dominate.
pub fn slot_utility(terms: &[LinkTerms]) -> f64 {
    terms
        .iter()
        .filter(|t| t.assigned)
        .map(|t| f64::from(t.collision) * t.throughput)
        .fold(0.0, |acc, x| acc + x)
}

/// Σ y·r·R / (Σ y·AC + Σ SC) for one slot.
pub fn energy_efficiency(terms: &[LinkTerms], sensing_costs: &[f64]) -> Result<f64> {
    let access: f64 = terms
        .iter()
        .filter(|t| t.assigned)
        .map(|t| t.access_cost)
        .sum();
    let denom = access + sensing_costs.iter().sum::<f64>();
    if !(denom > 0.0) {
        return Err(Error::UndefinedEnergyEfficiency);
    }
    Ok(slot_utility(terms) / denom)
}

/// Checks the per-UAV, per-channel, and hole-budget constraints of an
/// allocation against the fused prediction it was built from.
pub fn validate_assignment(
    assignment: &Assignment,
    fused: &OccupancyVector,
) -> std::result::Result<(), Vec<Violation>> {
    let m = fused.len();
    let mut violations = Vec::new();

    let mut by_uav: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut by_channel: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(k, ch) in assignment.pairs() {
        by_uav.entry(k).or_default().push(ch);
        by_channel.entry(ch).or_default().push(k);
    }
    for (uav, channels) in by_uav {
        if channels.len() > 1 {
            violations.push(Violation::UavAssignedTwice { uav, channels });
        }
    }
    for (channel, uavs) in &by_channel {
        if uavs.len() > 1 {
            violations.push(Violation::ChannelAssignedTwice {
                channel: *channel,
                uavs: uavs.clone(),
            });
        }
    }

    let holes = fused.hole_count();
    if assignment.len() > holes {
        violations.push(Violation::ExceedsHoleBudget {
            assigned: assignment.len(),
            holes,
        });
    }

    for &channel in by_channel.keys() {
        if channel >= m {
            violations.push(Violation::ChannelOutOfRange {
                channel,
                num_channels: m,
            });
        } else if !fused.is_vacant(channel) {
            violations.push(Violation::ChannelBusy { channel });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// One transmitting pair in a slot ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub uav: usize,
    pub channel: usize,
    pub collision: i8,
    /// Bits the link would carry, `R_km`.
    pub throughput: f64,
    pub access_cost: f64,
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLedger {
    pub slot: u64,
    /// Pairs transmitting in this slot (allocated in the previous one).
    pub transmissions: Vec<PairRecord>,
    /// Fused prediction the transmitting pairs were allocated against.
    pub allocation_basis: Option<OccupancyVector>,
    /// Allocation made this slot for the next one.
    pub next_assignment: Assignment,
    /// Fused prediction produced this slot.
    pub fused: OccupancyVector,
    pub true_occupancy: OccupancyVector,
    /// Sensing energy charged to each UAV that sensed.
    pub sensing_costs: Vec<f64>,
    pub utility: f64,
    pub energy_efficiency: Option<f64>,
}

impl SlotLedger {
    pub fn terms(&self) -> Vec<LinkTerms> {
        self.transmissions
            .iter()
            .map(|p| LinkTerms {
                assigned: true,
                collision: p.collision,
                throughput: p.throughput,
                access_cost: p.access_cost,
            })
            .collect()
    }

    pub fn transmitted_assignment(&self) -> Assignment {
        Assignment::new(self.transmissions.iter().map(|p| (p.uav, p.channel)).collect())
    }

    pub fn recompute_utility(&self) -> f64 {
        slot_utility(&self.terms())
    }

    pub fn recompute_energy_efficiency(&self) -> Option<f64> {
        energy_efficiency(&self.terms(), &self.sensing_costs).ok()
    }

    pub fn collisions(&self) -> usize {
        self.transmissions.iter().filter(|p| p.collision < 0).count()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for p in &self.transmissions {
            if !(-1..=1).contains(&p.collision) || p.throughput < 0.0 || p.access_cost < 0.0 {
                return Err(invalid("ledger", format!("slot {}: bad pair record {p:?}", self.slot)));
            }
        }
        if self.sensing_costs.iter().any(|&c| c < 0.0) {
            return Err(invalid("ledger", format!("slot {}: negative sensing cost", self.slot)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timing(t_s: f64, t_a: f64) -> SlotTiming {
        SlotTiming {
            t_req: 0.0,
            t_s,
            t_b: 0.0,
            t_a,
        }
    }

    fn radio(v_cc: f64, p_tx: f64, b: f64) -> RadioParams {
        RadioParams {
            v_cc,
            p_tx,
            subchannel_bandwidth: b,
            num_subchannels: 4,
            num_uavs: 1,
            system_bandwidth: None,
        }
    }

    fn occ(bits: &[u8]) -> OccupancyVector {
        OccupancyVector::new(bits.to_vec()).unwrap()
    }

    fn term(assigned: bool, collision: i8, throughput: f64, access_cost: f64) -> LinkTerms {
        LinkTerms {
            assigned,
            collision,
            throughput,
            access_cost,
        }
    }

    #[test]
    fn sensing_cost_examples() {
        assert_eq!(sensing_cost(&timing(0.0, 1.0), &radio(1.0, 1.0, 5.0)), 0.0);
        assert_eq!(sensing_cost(&timing(1.0, 1.0), &radio(2.0, 1.0, 5.0)), 20.0);
        assert_eq!(sensing_cost(&timing(2.0, 1.0), &radio(1.0, 1.0, 1.0)), 2.0);
    }

    #[test]
    fn access_cost_examples() {
        assert_eq!(access_cost(&timing(1.0, 0.0), &radio(1.0, 3.0, 1.0)), 0.0);
        assert_eq!(access_cost(&timing(1.0, 2.0), &radio(1.0, 0.5, 1.0)), 1.0);
        assert_eq!(access_cost(&timing(1.0, 1.0), &radio(1.0, 1.0, 1.0)), 1.0);
    }

    #[test]
    fn costs_are_linear_in_duration() {
        let r = radio(1.3, 0.7, 2.5);
        let t = timing(0.4, 0.9);
        let t2 = timing(0.8, 1.8);
        assert!((sensing_cost(&t2, &r) - 2.0 * sensing_cost(&t, &r)).abs() < 1e-12);
        assert!((access_cost(&t2, &r) - 2.0 * access_cost(&t, &r)).abs() < 1e-12);
    }

    #[test]
    fn throughput_examples() {
        let one = radio(1.0, 1.0, 1.0);
        assert_eq!(throughput(&timing(0.0, 1.0), &one, 0.0).unwrap(), 0.0);
        assert_eq!(throughput(&timing(0.0, 1.0), &one, 1.0).unwrap(), 1.0);
        assert_eq!(throughput(&timing(0.0, 2.0), &radio(1.0, 1.0, 3.0), 3.0).unwrap(), 12.0);
        assert!(throughput(&timing(0.0, 1.0), &one, -0.1).is_err());
        assert!(throughput(&timing(0.0, 1.0), &one, f64::NAN).is_err());
    }

    #[test]
    fn collision_indicator_cases() {
        assert_eq!(collision_indicator(0, 0), 1);
        assert_eq!(collision_indicator(1, 0), -1);
        assert_eq!(collision_indicator(1, 1), 0);
        assert_eq!(collision_indicator(0, 1), 0);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(slot_utility(&[term(true, 1, 12.0, 0.0)]), 12.0);
        assert_eq!(slot_utility(&[term(true, -1, 12.0, 0.0)]), -12.0);
        assert_eq!(slot_utility(&[]), 0.0);
        assert_eq!(slot_utility(&[term(false, 1, 12.0, 0.0)]), 0.0);
    }

    #[test]
    fn energy_efficiency_examples() {
        assert_eq!(energy_efficiency(&[term(true, 1, 10.0, 2.0)], &[3.0]).unwrap(), 2.0);
        assert_eq!(energy_efficiency(&[term(false, 0, 10.0, 2.0)], &[3.0]).unwrap(), 0.0);
        assert_eq!(energy_efficiency(&[term(true, -1, 10.0, 2.0)], &[3.0]).unwrap(), -2.0);
        assert!(matches!(
            energy_efficiency(&[], &[0.0]),
            Err(Error::UndefinedEnergyEfficiency)
        ));
    }

    #[test]
    fn validate_accepts_disjoint_vacant_pairs() {
        let a = Assignment::new(vec![(0, 0), (1, 1)]);
        assert_eq!(validate_assignment(&a, &occ(&[0, 0, 1, 1])), Ok(()));
    }

    #[test]
    fn validate_reports_duplicate_channel() {
        let a = Assignment::new(vec![(0, 0), (1, 0)]);
        let v = validate_assignment(&a, &occ(&[0, 1, 1, 1])).unwrap_err();
        assert!(v.contains(&Violation::ChannelAssignedTwice {
            channel: 0,
            uavs: vec![0, 1]
        }));
        // two pairs against one hole also breaks the budget
        assert!(v.contains(&Violation::ExceedsHoleBudget {
            assigned: 2,
            holes: 1
        }));
    }

    #[test]
    fn validate_reports_budget_and_busy() {
        let a = Assignment::new(vec![(0, 0)]);
        let v = validate_assignment(&a, &occ(&[1, 1])).unwrap_err();
        assert_eq!(
            v,
            vec![
                Violation::ExceedsHoleBudget {
                    assigned: 1,
                    holes: 0
                },
                Violation::ChannelBusy { channel: 0 },
            ]
        );
    }

    #[test]
    fn validate_reports_uav_twice_and_out_of_range() {
        let a = Assignment::new(vec![(0, 0), (0, 5)]);
        let v = validate_assignment(&a, &occ(&[0, 0, 0])).unwrap_err();
        assert!(v.contains(&Violation::UavAssignedTwice {
            uav: 0,
            channels: vec![0, 5]
        }));
        assert!(v.contains(&Violation::ChannelOutOfRange {
            channel: 5,
            num_channels: 3
        }));
    }

    #[test]
    fn occupancy_mask_roundtrip() {
        let v = occ(&[1, 0, 1, 1, 0]);
        assert_eq!(v.to_mask(), 0b01101);
        assert_eq!(OccupancyVector::from_mask(0b01101, 5), v);
        assert_eq!(v.busy_count(), 3);
        assert_eq!(v.holes().collect::<Vec<_>>(), vec![1, 4]);
        assert!(OccupancyVector::new(vec![0, 2]).is_err());
    }

    #[test]
    fn timing_and_radio_validation() {
        assert!(SlotTiming::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(SlotTiming::new(0.0, -1.0, 0.0, 1.0).is_err());
        assert!(SlotTiming::new(0.0, 1.0, 0.0, 1.0).is_ok());
        let mut r = RadioParams::default();
        assert!(r.validate().is_ok());
        r.system_bandwidth = Some(1e6);
        assert!(r.validate().is_err());
        r.system_bandwidth = None;
        r.num_uavs = 0;
        assert!(r.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_terms() -> impl Strategy<Value = Vec<LinkTerms>> {
            prop::collection::vec(
                (any::<bool>(), -1i8..=1, 0.0f64..100.0, 0.0f64..5.0)
                    .prop_map(|(a, r, t, c)| term(a, r, t, c)),
                0..8,
            )
        }

        proptest! {
            #[test]
            fn throughput_monotone_in_sinr(a in 0.0f64..1e3, b in 0.0f64..1e3) {
                let t = timing(0.1, 0.5);
                let r = radio(1.0, 1.0, 1e5);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(throughput(&t, &r, lo).unwrap() <= throughput(&t, &r, hi).unwrap());
            }

            #[test]
            fn utility_additive(x in arb_terms(), y in arb_terms()) {
                let joined: Vec<_> = x.iter().chain(y.iter()).copied().collect();
                let lhs = slot_utility(&joined);
                let rhs = slot_utility(&x) + slot_utility(&y);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }

            #[test]
            fn collision_range(a in 0u8..=1, b in 0u8..=1) {
                prop_assert!([-1, 0, 1].contains(&collision_indicator(a, b)));
            }

            #[test]
            fn valid_assignment_respects_budget(
                mask in 0u64..256,
                pairs in prop::collection::vec((0usize..6, 0usize..8), 0..6),
            ) {
                let fused = OccupancyVector::from_mask(mask, 8);
                let a = Assignment::new(pairs);
                if validate_assignment(&a, &fused).is_ok() {
                    prop_assert!(a.len() + fused.busy_count() <= fused.len());
                }
            }
        }
    }
}
