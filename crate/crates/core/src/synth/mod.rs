//! Physics-motivated synthetic surrogate for the combustor measurements.
//!
//! Generates 16-sensor pressure records as superposed counter-rotating
//! azimuthal waves with regime-dependent amplitude dynamics, mapped over
//! the operating grid so that every record carries a ground-truth mode
//! label.
//!
//! Every regime shares one envelope form: a slow level tone that sets
//! each analysis window's amplitude, plus a window-scale slope tone that
//! sets the within-window trend. The regimes differ in amplitude and in
//! how much of each tone they carry:
//!
//! * Mode I: low-amplitude standing wave, noise-dominated, level tone
//!   strong and slope tone weak, so consecutive windows trace an
//!   essentially one-dimensional family in signal space.
//! * Mode II: large-amplitude standing wave with both tones strong;
//!   window content is parameterized by the pair of mutually
//!   incommensurate tone phases at the window start, a torus.
//! * Mode III: flat envelope, telegraph switching between two
//!   standing-wave orientations with exponentially distributed dwell
//!   times, two distinct attractors.

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numgrad::Matrix;
use crate::seed::derive_stream;

pub const CHANNELS: usize = 16;
pub const AZIMUTHAL_SENSORS: usize = 8;
pub const STATIONS: usize = 2;

const Q_MIN: f64 = 1600.0;
const Q_MAX: f64 = 2880.0;
const PHI_MIN: f64 = 0.65;
const PHI_MAX: f64 = 0.95;

/// Ground-truth (or classifier-assigned) dynamical mode of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeLabel {
    ModeI,
    ModeII,
    ModeIII,
}

impl ModeLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ModeLabel::ModeI => 1,
            ModeLabel::ModeII => 2,
            ModeLabel::ModeIII => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<ModeLabel> {
        match v {
            1 => Some(ModeLabel::ModeI),
            2 => Some(ModeLabel::ModeII),
            3 => Some(ModeLabel::ModeIII),
            _ => None,
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModeLabel::ModeI => "I",
            ModeLabel::ModeII => "II",
            ModeLabel::ModeIII => "III",
        };
        f.write_str(s)
    }
}

/// Operating point on the Q (premixed mass flow rate, SLM) by phi
/// (equivalence ratio) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub q: f64,
    pub phi: f64,
}

impl OperatingPoint {
    pub fn new(q: f64, phi: f64) -> OperatingPoint {
        OperatingPoint { q, phi }
    }

    /// Stable identifier used for file names and per-case PRNG streams.
    pub fn case_id(&self) -> String {
        format!(
            "q{:04}_phi{:03}",
            self.q.round() as u32,
            (self.phi * 100.0).round() as u32
        )
    }
}

/// Eight azimuthal sensors replicated at two longitudinal stations;
/// channel order is station-major, angle-minor.
#[derive(Debug, Clone)]
pub struct SensorArray {
    angles: Vec<f64>,
}

impl SensorArray {
    pub fn standard() -> SensorArray {
        SensorArray {
            angles: (0..AZIMUTHAL_SENSORS)
                .map(|k| TAU * k as f64 / AZIMUTHAL_SENSORS as f64)
                .collect(),
        }
    }

    pub fn new(angles: Vec<f64>) -> Result<SensorArray> {
        if angles.len() != AZIMUTHAL_SENSORS {
            return Err(Error::Input(format!(
                "sensor array needs {AZIMUTHAL_SENSORS} azimuthal angles, got {}",
                angles.len()
            )));
        }
        for pair in angles.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::Input(
                    "sensor angles must be strictly increasing".into(),
                ));
            }
        }
        if angles[0] < 0.0 || angles[AZIMUTHAL_SENSORS - 1] >= TAU {
            return Err(Error::Input("sensor angles must lie in [0, 2*pi)".into()));
        }
        Ok(SensorArray { angles })
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn angle(&self, channel: usize) -> f64 {
        self.angles[channel % AZIMUTHAL_SENSORS]
    }

    pub fn station(&self, channel: usize) -> usize {
        channel / AZIMUTHAL_SENSORS
    }
}

/// Generator recipe for one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub regime: ModeLabel,
    /// Azimuthal wavenumber.
    pub n: u32,
    /// Base acoustic frequency, Hz.
    pub f0: f64,
    /// Counter-rotating wave amplitudes.
    pub a_plus: f64,
    pub a_minus: f64,
    /// Slow envelope tone, Hz: sets the amplitude level per window.
    pub level_freq: f64,
    pub level_depth: f64,
    pub level_phase: f64,
    /// Window-scale envelope tone, Hz: sets the within-window trend.
    pub slope_freq: f64,
    pub slope_depth: f64,
    pub slope_phase: f64,
    /// Mode III mean switching dwell time, s.
    pub dwell_mean: f64,
    /// Base antinodal azimuth, rad.
    pub orientation: f64,
    /// Mode III orientation offset between the two states, rad.
    pub switch_rotation: f64,
    /// Additive per-channel Gaussian noise std.
    pub noise_sigma: f64,
    /// Station-2 amplitude ratio.
    pub longitudinal_gain: f64,
}

impl RegimeSpec {
    pub fn mode_i() -> RegimeSpec {
        RegimeSpec {
            regime: ModeLabel::ModeI,
            n: 1,
            f0: 1000.0,
            a_plus: 0.25,
            a_minus: 0.25,
            level_freq: 5.0,
            level_depth: 0.5,
            level_phase: 0.0,
            slope_freq: 20.0 * std::f64::consts::SQRT_2,
            slope_depth: 0.22,
            slope_phase: 0.0,
            dwell_mean: 0.0,
            orientation: PI / 8.0,
            switch_rotation: PI / 2.0,
            noise_sigma: 0.15 * 0.25,
            longitudinal_gain: 0.7,
        }
    }

    pub fn mode_ii() -> RegimeSpec {
        RegimeSpec {
            regime: ModeLabel::ModeII,
            a_plus: 1.0,
            a_minus: 1.0,
            level_freq: 4.0 * 6.0_f64.sqrt(),
            level_depth: 0.40,
            slope_depth: 0.30,
            noise_sigma: 0.05,
            ..RegimeSpec::mode_i()
        }
    }

    pub fn mode_iii() -> RegimeSpec {
        RegimeSpec {
            regime: ModeLabel::ModeIII,
            a_plus: 1.0,
            a_minus: 1.0,
            dwell_mean: 0.04,
            level_depth: 0.0,
            slope_depth: 0.0,
            noise_sigma: 0.05,
            ..RegimeSpec::mode_i()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a_plus < 0.0 || self.a_minus < 0.0 {
            return Err(Error::Input("wave amplitudes must be >= 0".into()));
        }
        if !(self.f0 > 0.0) {
            return Err(Error::Input("base frequency must be > 0".into()));
        }
        if self.regime == ModeLabel::ModeIII && !(self.dwell_mean > 0.0) {
            return Err(Error::Input(
                "Mode III requires a positive mean dwell time".into(),
            ));
        }
        if self.level_depth < 0.0
            || self.slope_depth < 0.0
            || self.level_depth + self.slope_depth >= 1.0
        {
            return Err(Error::Input(
                "envelope depths must be >= 0 and sum below 1".into(),
            ));
        }
        if self.level_depth > 0.0 && !(self.level_freq > 0.0) {
            return Err(Error::Input("level tone frequency must be > 0".into()));
        }
        if self.slope_depth > 0.0 && !(self.slope_freq > 0.0) {
            return Err(Error::Input("slope tone frequency must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Input("noise sigma must be >= 0".into()));
        }
        if self.n == 0 {
            return Err(Error::Input("azimuthal wavenumber must be >= 1".into()));
        }
        if !(self.longitudinal_gain > 0.0) {
            return Err(Error::Input("longitudinal gain must be > 0".into()));
        }
        Ok(())
    }

    /// Highest frequency the regime excites, for Nyquist checks. The
    /// quintic level tone contributes sidebands up to its fifth harmonic.
    pub fn max_frequency(&self) -> f64 {
        let mut f = self.f0;
        if self.level_depth > 0.0 {
            f = f.max(self.f0 + 5.0 * self.level_freq);
        }
        if self.slope_depth > 0.0 {
            f = f.max(self.f0 + self.slope_freq);
        }
        f
    }

    fn envelope(&self, t: f64) -> f64 {
        1.0 + self.level_depth * level_wave(TAU * self.level_freq * t + self.level_phase)
            + self.slope_depth * (TAU * self.slope_freq * t + self.slope_phase).cos()
    }

    fn orientation_for(&self, state: usize) -> f64 {
        if self.regime == ModeLabel::ModeIII && state % 2 == 1 {
            self.orientation + self.switch_rotation
        } else {
            self.orientation
        }
    }
}

/// Unit-amplitude triangle wave in the phase angle.
fn triangle(theta: f64) -> f64 {
    (2.0 / PI) * theta.sin().asin()
}

/// Quintic-shaped triangle tone in [-1, 1]: dense near zero with graded,
/// hard-bounded tails and no flat spots.
fn level_wave(theta: f64) -> f64 {
    let u = triangle(theta);
    (u + 3.0 * u.powi(5)) / 4.0
}

/// One generated (or loaded) multichannel pressure record.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureRecord {
    pub samples: Matrix,
    pub sample_rate: f64,
    pub duration: f64,
    pub operating_point: OperatingPoint,
    pub label: Option<ModeLabel>,
    pub case_id: String,
}

impl PressureRecord {
    pub fn new(
        samples: Matrix,
        sample_rate: f64,
        duration: f64,
        operating_point: OperatingPoint,
        label: Option<ModeLabel>,
        case_id: String,
    ) -> Result<PressureRecord> {
        if samples.cols() != CHANNELS {
            return Err(Error::Dimension(format!(
                "pressure record needs {CHANNELS} channels, got {}",
                samples.cols()
            )));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Input(format!("bad sample rate {sample_rate}")));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Input(format!("bad duration {duration}")));
        }
        let expect = (sample_rate * duration).round() as usize;
        if samples.rows() != expect {
            return Err(Error::Dimension(format!(
                "sample count {} does not match rate {} x duration {} (= {})",
                samples.rows(),
                sample_rate,
                duration,
                expect
            )));
        }
        samples.check_finite("pressure samples")?;
        Ok(PressureRecord {
            samples,
            sample_rate,
            duration,
            operating_point,
            label,
            case_id,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }
}

/// Instantaneous pressure at all 16 channels. `noise` holds 16 standard
/// normal draws, scaled here by `spec.noise_sigma`.
pub fn pressure_field(
    spec: &RegimeSpec,
    array: &SensorArray,
    t: f64,
    state: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if t < 0.0 || !t.is_finite() {
        return Err(Error::Input(format!("bad time {t}")));
    }
    if noise.len() != CHANNELS {
        return Err(Error::Dimension(format!(
            "need {CHANNELS} noise draws, got {}",
            noise.len()
        )));
    }
    let env = spec.envelope(t);
    let psi = spec.orientation_for(state);
    let omega_t = TAU * spec.f0 * t;
    let n = f64::from(spec.n);
    let mut out = vec![0.0; CHANNELS];
    for (ch, p) in out.iter_mut().enumerate() {
        let arg = n * (array.angle(ch) - psi);
        let wave = spec.a_plus * (arg - omega_t).cos() + spec.a_minus * (arg + omega_t).cos();
        let gain = if array.station(ch) == 1 {
            spec.longitudinal_gain
        } else {
            1.0
        };
        *p = gain * env * wave + spec.noise_sigma * noise[ch];
    }
    Ok(out)
}

fn mode_ii_half_width(q: f64) -> f64 {
    0.10 - 0.08 * (q - Q_MIN) / (Q_MAX - Q_MIN)
}

/// Regime recipe for an operating point: low phi is quiet (Mode I), a
/// middle phi band that narrows with increasing Q oscillates strongly
/// (Mode II), and the high-Q high-phi corner switches between attractors
/// (Mode III).
pub fn regime_for(op: OperatingPoint) -> Result<RegimeSpec> {
    if !op.q.is_finite() || !op.phi.is_finite() || op.q < Q_MIN || op.q > Q_MAX {
        return Err(Error::Input(format!(
            "flow rate {} outside grid [{Q_MIN}, {Q_MAX}]",
            op.q
        )));
    }
    if op.phi < PHI_MIN || op.phi > PHI_MAX {
        return Err(Error::Input(format!(
            "equivalence ratio {} outside grid [{PHI_MIN}, {PHI_MAX}]",
            op.phi
        )));
    }
    let label = if op.phi <= 0.70 {
        ModeLabel::ModeI
    } else if op.phi >= 0.90 {
        if op.q >= 2560.0 {
            ModeLabel::ModeIII
        } else {
            ModeLabel::ModeI
        }
    } else if (op.phi - 0.80).abs() <= mode_ii_half_width(op.q) {
        ModeLabel::ModeII
    } else {
        ModeLabel::ModeI
    };
    Ok(match label {
        ModeLabel::ModeI => RegimeSpec::mode_i(),
        ModeLabel::ModeII => RegimeSpec::mode_ii(),
        ModeLabel::ModeIII => RegimeSpec::mode_iii(),
    })
}

/// The 23 operating points of the study grid.
pub fn paper_grid() -> Vec<OperatingPoint> {
    let mut grid = Vec::with_capacity(23);
    for &q in &[1600.0, 2240.0, 2560.0] {
        for &phi in &[0.65, 0.70, 0.75, 0.80, 0.85, 0.90] {
            grid.push(OperatingPoint::new(q, phi));
        }
    }
    for &phi in &[0.65, 0.70, 0.80, 0.90, 0.95] {
        grid.push(OperatingPoint::new(2880.0, phi));
    }
    grid
}

/// Exponentially distributed switching times in (0, duration), in order.
fn draw_switch_times(rng: &mut ChaCha20Rng, dwell_mean: f64, duration: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut t = draw_dwell(rng, dwell_mean);
    while t < duration {
        times.push(t);
        t += draw_dwell(rng, dwell_mean);
    }
    times
}

fn draw_dwell(rng: &mut ChaCha20Rng, mean: f64) -> f64 {
    let u: f64 = rng.random();
    -mean * (1.0 - u).ln()
}

/// Generates one labeled case. Reproducible: the PRNG stream is derived
/// from (master seed, case id), so cases are independent of generation
/// order.
pub fn generate_case(
    op: OperatingPoint,
    duration: f64,
    sample_rate: f64,
    master_seed: u64,
) -> Result<PressureRecord> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Input(format!("bad duration {duration}")));
    }
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::Input(format!("bad sample rate {sample_rate}")));
    }
    let mut spec = regime_for(op)?;
    if sample_rate <= 2.0 * spec.max_frequency() {
        return Err(Error::Config(format!(
            "sample rate {} Hz violates the Nyquist bound for {} Hz content",
            sample_rate,
            spec.max_frequency()
        )));
    }
    let n = (duration * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::Input(
            "duration times sample rate rounds to zero samples".into(),
        ));
    }
    let array = SensorArray::standard();
    let case_id = op.case_id();
    let mut rng = derive_stream(master_seed, &case_id);
    // Fixed draw order: level phase, slope phase, initial state, switch
    // schedule, then per-sample channel noise.
    spec.level_phase = rng.random_range(0.0..TAU);
    spec.slope_phase = rng.random_range(0.0..TAU);
    let initial_state = usize::from(rng.random::<bool>());
    let switches = if spec.regime == ModeLabel::ModeIII {
        draw_switch_times(&mut rng, spec.dwell_mean, duration)
    } else {
        Vec::new()
    };

    let mut samples = Matrix::zeros(n, CHANNELS);
    let mut state = initial_state;
    let mut next_switch = 0;
    let mut noise = [0.0_f64; CHANNELS];
    for i in 0..n {
        let t = i as f64 / sample_rate;
        while next_switch < switches.len() && switches[next_switch] <= t {
            state ^= 1;
            next_switch += 1;
        }
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let row = pressure_field(&spec, &array, t, state, &noise)?;
        samples.row_mut(i).copy_from_slice(&row);
    }
    PressureRecord::new(
        samples,
        sample_rate,
        duration,
        op,
        Some(spec.regime),
        case_id,
    )
}
