//! Gait patterns and per-leg contact schedules over the planning horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Phases shorter than this are absorbed into their neighbours.
pub const MIN_PHASE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("stride duration must be positive, got {0}")]
    StrideDuration(f64),
    #[error("leg {leg}: swing window [{start}, {end}) must satisfy 0 <= start <= end < 1")]
    SwingWindow { leg: usize, start: f64, end: f64 },
    #[error("time {t} outside schedule horizon [{start}, {end}]")]
    OutOfHorizon { t: f64, start: f64, end: f64 },
    #[error("unknown gait '{0}'")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    LF,
    RF,
    LH,
    RH,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::LF, Leg::RF, Leg::LH, Leg::RH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::LF => "LF",
            Leg::RF => "RF",
            Leg::LH => "LH",
            Leg::RH => "RH",
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::LF | Leg::RF)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::LF | Leg::LH)
    }
}

/// Swing window of one leg in normalized stride phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegTiming {
    pub swing_start: f64,
    pub swing_end: f64,
    pub phase_offset: f64,
}

impl LegTiming {
    pub const ALWAYS_CONTACT: LegTiming = LegTiming {
        swing_start: 0.0,
        swing_end: 0.0,
        phase_offset: 0.0,
    };

    pub fn has_swing(&self) -> bool {
        self.swing_end > self.swing_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitPattern {
    pub name: String,
    pub stride_duration: f64,
    /// Ordered LF, RF, LH, RH.
    pub legs: [LegTiming; 4],
    /// Published wheel planner solve time for this gait, if any (ms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_wheel_ms: Option<f64>,
    /// Published base planner solve time for this gait, if any (ms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_base_ms: Option<f64>,
}

impl GaitPattern {
    pub fn new(name: &str, stride_duration: f64, legs: [LegTiming; 4]) -> Result<Self, GaitError> {
        let g = Self {
            name: name.to_string(),
            stride_duration,
            legs,
            reference_wheel_ms: None,
            reference_base_ms: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Every leg swings during `[0, 1 - duty)` of its own phase.
    pub fn with_duty(
        name: &str,
        stride_duration: f64,
        duty: f64,
        offsets: [f64; 4],
    ) -> Result<Self, GaitError> {
        let legs = offsets.map(|phase_offset| LegTiming {
            swing_start: 0.0,
            swing_end: 1.0 - duty,
            phase_offset,
        });
        Self::new(name, stride_duration, legs)
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.stride_duration > 0.0 && self.stride_duration.is_finite()) {
            return Err(GaitError::StrideDuration(self.stride_duration));
        }
        for (leg, t) in self.legs.iter().enumerate() {
            let ok = t.swing_start >= 0.0
                && t.swing_start <= t.swing_end
                && t.swing_end < 1.0
                && t.phase_offset.is_finite();
            if !ok {
                return Err(GaitError::SwingWindow {
                    leg,
                    start: t.swing_start,
                    end: t.swing_end,
                });
            }
        }
        Ok(())
    }

    pub fn is_driving(&self) -> bool {
        self.legs.iter().all(|l| !l.has_swing())
    }
}

fn with_reference(mut g: GaitPattern, wheel_ms: f64, base_ms: f64) -> GaitPattern {
    g.reference_wheel_ms = Some(wheel_ms);
    g.reference_base_ms = Some(base_ms);
    g
}

/// The five built-in gaits. Duty factors and offsets are placeholder choices.
pub fn builtin_gaits() -> Vec<GaitPattern> {
    let build = |name, tf, duty, offsets| {
        GaitPattern::with_duty(name, tf, duty, offsets).expect("built-in gait is valid")
    };
    vec![
        with_reference(
            GaitPattern::new("driving", 1.7, [LegTiming::ALWAYS_CONTACT; 4]).expect("valid"),
            0.14,
            6.93,
        ),
        // LF, RH, RF, LH at quarter-stride spacing
        with_reference(
            build("hybrid walk", 2.0, 0.85, [0.0, 0.5, 0.25, 0.75]),
            0.81,
            14.83,
        ),
        with_reference(
            build("hybrid pace", 0.95, 0.6, [0.0, 0.5, 0.0, 0.5]),
            0.42,
            1.88,
        ),
        with_reference(
            build("hybrid trot", 0.85, 0.55, [0.0, 0.5, 0.5, 0.0]),
            0.47,
            2.4,
        ),
        with_reference(
            build("hybrid running trot", 0.64, 0.4, [0.0, 0.5, 0.5, 0.0]),
            0.58,
            5.77,
        ),
    ]
}

/// Looks up a built-in gait. Accepts the display name or a `snake_case` /
/// `kebab-case` variant, and the short names `walk`, `pace`, `trot`, `running_trot`.
pub fn gait_by_name(name: &str) -> Result<GaitPattern, GaitError> {
    let norm = name.trim().to_lowercase().replace(['_', '-'], " ");
    builtin_gaits()
        .into_iter()
        .find(|g| g.name == norm || g.name.strip_prefix("hybrid ") == Some(norm.as_str()))
        .ok_or_else(|| GaitError::Unknown(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Contact,
    Air,
}

/// One phase in absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub start: f64,
    pub end: f64,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Lift-off, apex and touch-down times of one swing; may extend beyond the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingEvent {
    pub t_lo: f64,
    pub t_sh: f64,
    pub t_td: f64,
}

impl SwingEvent {
    /// Half-open `[t_lo, t_td)`: lift-off is in the air, touch-down is contact.
    pub fn contains(&self, t: f64) -> bool {
        self.t_lo <= t && t < self.t_td
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegSchedule {
    pub phases: Vec<Phase>,
    /// Swings overlapping the horizon, in time order.
    pub swings: Vec<SwingEvent>,
}

impl LegSchedule {
    pub fn in_contact(&self, t: f64) -> bool {
        !self.swings.iter().any(|s| s.contains(t))
    }

    /// The first swing whose touch-down lies after `t`.
    pub fn next_swing(&self, t: f64) -> Option<&SwingEvent> {
        self.swings.iter().find(|s| s.t_td > t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    pub t0: f64,
    pub horizon: f64,
    pub legs: [LegSchedule; 4],
}

impl ContactSchedule {
    pub fn end(&self) -> f64 {
        self.t0 + self.horizon
    }

    pub fn leg(&self, leg: Leg) -> &LegSchedule {
        &self.legs[leg.index()]
    }

    pub fn contact_flags(&self, t: f64) -> Result<[bool; 4], GaitError> {
        let tol = 1e-9;
        if t < self.t0 - tol || t > self.end() + tol {
            return Err(GaitError::OutOfHorizon {
                t,
                start: self.t0,
                end: self.end(),
            });
        }
        Ok([0, 1, 2, 3].map(|i| self.legs[i].in_contact(t)))
    }

    /// Sorted, de-duplicated times in `(t0, t0 + horizon)` where any leg changes phase kind.
    pub fn contact_change_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .legs
            .iter()
            .flat_map(|l| l.swings.iter().flat_map(|s| [s.t_lo, s.t_td]))
            .filter(|&t| t > self.t0 + MIN_PHASE && t < self.end() - MIN_PHASE)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < MIN_PHASE);
        times
    }
}

/// Builds the schedule over `[t0, t0 + t_f]`, with the gait at normalized
/// phase `phase0` at time `t0`.
pub fn build_schedule(g: &GaitPattern, t0: f64, phase0: f64) -> ContactSchedule {
    let tf = g.stride_duration;
    let legs = [0, 1, 2, 3].map(|i| leg_schedule(&g.legs[i], tf, t0, phase0));
    ContactSchedule {
        t0,
        horizon: tf,
        legs,
    }
}

/// Schedule over `[t0, t0 + t_f]` for a gait at phase 0 at `gait_start`,
/// with every leg standing before then. Swings that would lift off before
/// `gait_start` are dropped.
pub fn build_schedule_with_stance(g: &GaitPattern, t0: f64, gait_start: f64) -> ContactSchedule {
    let mut s = build_schedule(g, t0, phase_at(g, t0 - gait_start));
    let end = s.end();
    for leg in &mut s.legs {
        if leg.swings.iter().any(|sw| sw.t_lo < gait_start - MIN_PHASE) {
            leg.swings.retain(|sw| sw.t_lo >= gait_start - MIN_PHASE);
            leg.phases = phases_from_swings(&leg.swings, t0, end);
        }
    }
    s
}

/// Gait phase at absolute time `t` for a gait started at time zero.
pub fn phase_at(g: &GaitPattern, t: f64) -> f64 {
    (t / g.stride_duration).rem_euclid(1.0)
}

fn leg_schedule(timing: &LegTiming, tf: f64, t0: f64, phase0: f64) -> LegSchedule {
    let end = t0 + tf;
    if !timing.has_swing() {
        return LegSchedule {
            phases: vec![Phase {
                kind: PhaseKind::Contact,
                start: t0,
                end,
            }],
            swings: Vec::new(),
        };
    }
    // swing k occupies phase + offset in [k + start, k + end)
    let shift = phase0 + timing.phase_offset;
    let k_min = (shift - timing.swing_end).floor() as i64 - 1;
    let mut swings = Vec::new();
    for k in k_min..k_min + 4 {
        let t_lo = t0 + (k as f64 + timing.swing_start - shift) * tf;
        let t_td = t0 + (k as f64 + timing.swing_end - shift) * tf;
        if t_td > t0 && t_lo < end {
            swings.push(SwingEvent {
                t_lo,
                t_sh: 0.5 * (t_lo + t_td),
                t_td,
            });
        }
    }

    LegSchedule {
        phases: phases_from_swings(&swings, t0, end),
        swings,
    }
}

fn phases_from_swings(swings: &[SwingEvent], t0: f64, end: f64) -> Vec<Phase> {
    let mut phases: Vec<Phase> = Vec::new();
    let mut push = |kind, start: f64, stop: f64| {
        let (start, stop) = (start.max(t0), stop.min(end));
        if stop - start > 0.0 {
            phases.push(Phase {
                kind,
                start,
                end: stop,
            });
        }
    };
    let mut cursor = t0;
    for s in swings {
        push(PhaseKind::Contact, cursor, s.t_lo);
        push(PhaseKind::Air, s.t_lo, s.t_sh);
        push(PhaseKind::Air, s.t_sh, s.t_td);
        cursor = s.t_td.max(cursor);
    }
    push(PhaseKind::Contact, cursor, end);
    merge_short(phases, t0, end)
}

/// Absorbs sub-`MIN_PHASE` phases into a neighbour and pins the outer
/// boundaries to the horizon so that durations telescope exactly.
fn merge_short(phases: Vec<Phase>, t0: f64, end: f64) -> Vec<Phase> {
    let mut out: Vec<Phase> = Vec::with_capacity(phases.len());
    for p in phases {
        if p.duration() < MIN_PHASE {
            if let Some(last) = out.last_mut() {
                last.end = p.end;
                continue;
            }
        }
        if let Some(last) = out.last() {
            if last.duration() < MIN_PHASE {
                let start = last.start;
                out.pop();
                out.push(Phase { start, ..p });
                continue;
            }
        }
        out.push(p);
    }
    if let Some(first) = out.first_mut() {
        first.start = t0;
    }
    if let Some(last) = out.last_mut() {
        last.end = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gait(name: &str) -> GaitPattern {
        gait_by_name(name).unwrap()
    }

    #[test]
    fn builtin_horizons() {
        let names: Vec<(String, f64)> = builtin_gaits()
            .into_iter()
            .map(|g| (g.name, g.stride_duration))
            .collect();
        assert_eq!(
            names,
            vec![
                ("driving".to_string(), 1.7),
                ("hybrid walk".to_string(), 2.0),
                ("hybrid pace".to_string(), 0.95),
                ("hybrid trot".to_string(), 0.85),
                ("hybrid running trot".to_string(), 0.64),
            ]
        );
    }

    #[test]
    fn lookup_variants() {
        assert_eq!(gait("trot").name, "hybrid trot");
        assert_eq!(gait("hybrid_running_trot").name, "hybrid running trot");
        assert_eq!(gait("Hybrid-Walk").name, "hybrid walk");
        assert!(matches!(gait_by_name("gallop"), Err(GaitError::Unknown(_))));
    }

    #[test]
    fn stance_before_gait_start() {
        let g = gait("trot");
        let s = build_schedule_with_stance(&g, 0.0, 0.5);
        assert_eq!(s.contact_flags(0.49).unwrap(), [true; 4]);
        assert_eq!(s.contact_flags(0.6).unwrap(), [false, true, true, false]);
        assert_eq!(s.contact_change_times()[0], 0.5);
        // running trot legs RF and LH would be mid-swing at the gait start
        let g = gait("running trot");
        let s = build_schedule_with_stance(&g, 0.0, 0.0);
        assert_eq!(s.contact_flags(0.01).unwrap(), [false, true, true, false]);
        // far past the start it matches the plain schedule
        let t0 = 3.3;
        assert_eq!(
            build_schedule_with_stance(&g, t0, 0.0),
            build_schedule(&g, t0, phase_at(&g, t0))
        );
    }

    #[test]
    fn driving_is_single_contact_phase() {
        for phase0 in [0.0, 0.3, 0.99] {
            let s = build_schedule(&gait("driving"), 1.0, phase0);
            for l in &s.legs {
                assert_eq!(l.phases.len(), 1);
                assert_eq!(l.phases[0].kind, PhaseKind::Contact);
                assert!((l.phases[0].duration() - 1.7).abs() < 1e-12);
            }
            assert_eq!(s.contact_flags(2.0).unwrap(), [true; 4]);
        }
    }

    #[test]
    fn trot_diagonal_symmetry() {
        let s = build_schedule(&gait("trot"), 0.0, 0.0);
        assert_eq!(s.legs[Leg::RF.index()], s.legs[Leg::LH.index()]);
        assert_eq!(s.legs[Leg::LF.index()], s.legs[Leg::RH.index()]);
        // LF and RH lift off at t0
        assert!(!s.contact_flags(0.0).unwrap()[0]);
        assert!(!s.contact_flags(0.0).unwrap()[3]);
        assert!(s.contact_flags(0.0).unwrap()[1]);
    }

    #[test]
    fn touchdown_is_contact_liftoff_is_air() {
        let s = build_schedule(&gait("trot"), 0.0, 0.0);
        let sw = s.legs[0].swings[0];
        assert!(!s.legs[0].in_contact(sw.t_lo));
        assert!(s.legs[0].in_contact(sw.t_td));
        assert!((sw.t_sh - 0.5 * (sw.t_lo + sw.t_td)).abs() < 1e-15);
    }

    #[test]
    fn air_split_at_apex() {
        let s = build_schedule(&gait("trot"), 0.0, 0.7);
        for l in &s.legs {
            let air: Vec<&Phase> = l
                .phases
                .iter()
                .filter(|p| p.kind == PhaseKind::Air)
                .collect();
            for sw in &l.swings {
                if sw.t_lo > s.t0 && sw.t_td < s.end() {
                    assert!(air.iter().any(|p| (p.end - sw.t_sh).abs() < 1e-12));
                    assert!(air.iter().any(|p| (p.start - sw.t_sh).abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn running_trot_has_full_flight() {
        let s = build_schedule(&gait("running trot"), 0.0, 0.0);
        let flight = (0..640)
            .map(|k| k as f64 * 1e-3)
            .any(|t| s.contact_flags(t).unwrap() == [false; 4]);
        assert!(flight);
        assert!(s.contact_flags(1.0).is_err());
    }

    #[test]
    fn invalid_windows_rejected() {
        let bad = LegTiming {
            swing_start: 0.5,
            swing_end: 0.2,
            phase_offset: 0.0,
        };
        assert!(GaitPattern::new("x", 1.0, [bad; 4]).is_err());
        assert!(GaitPattern::new("x", 0.0, [LegTiming::ALWAYS_CONTACT; 4]).is_err());
    }
}
