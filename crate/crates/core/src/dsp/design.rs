//! Butterworth bandpass design via analog prototype, frequency pre-warping
//! and the bilinear transform, realized as a cascade of biquad sections.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::{DspError, SignalConfig};

/// One second-order section with direct-form-II-transposed state.
///
/// Transfer function: H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    state: [f64; 2],
}

impl BiquadSection {
    pub fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Self {
            b0: b[0],
            b1: b[1],
            b2: b[2],
            a1: a[0],
            a2: a[1],
            state: [0.0; 2],
        }
    }

    /// Process one sample (direct form II transposed).
    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.state[0];
        self.state[0] = self.b1 * x - self.a1 * y + self.state[1];
        self.state[1] = self.b2 * x - self.a2 * y;
        y
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Stability of the denominator: both poles strictly inside the unit
    /// circle, via the triangle criterion |a2| < 1 and |a1| < 1 + a2.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Complex response of this section at normalized angle `omega` (rad/sample).
    pub fn response_at(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::new(omega.cos(), -omega.sin());
        let z2 = z1 * z1;
        let num = self.b0 + self.b1 * z1 + self.b2 * z2;
        let den = 1.0 + self.a1 * z1 + self.a2 * z2;
        num / den
    }
}

/// A cascade of biquad sections forming one IIR filter.
///
/// State persists across `process` calls, so a signal fed in arbitrary
/// chunks produces bit-identical output to a single-shot run.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<BiquadSection>,
    sample_rate_hz: f64,
}

impl BiquadCascade {
    pub fn sections(&self) -> &[BiquadSection] {
        &self.sections
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Process one sample through every section in order.
    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    /// Process a block of samples, preserving state across calls.
    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        input.iter().map(|&x| self.process_sample(x)).collect()
    }

    /// Clear all delay registers.
    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.reset();
        }
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.is_stable())
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response_at(&self, freq_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / self.sample_rate_hz;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response_at(omega))
    }

    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response_at(freq_hz).norm().log10()
    }
}

/// Design a Butterworth bandpass filter for the band in `cfg`.
///
/// `prototype_order` is the order of the lowpass prototype; the bandpass
/// transform doubles it, so an order-N prototype yields N biquad sections
/// (2N poles). Both band edges land at -3.01 dB by construction and the
/// gain is normalized to unity at the warped center frequency.
pub fn design_bandpass(cfg: &SignalConfig) -> Result<BiquadCascade, DspError> {
    cfg.validate()?;
    let fs = cfg.sample_rate_hz;
    let order = cfg.prototype_order;

    // Pre-warp the band edges so the bilinear transform maps them exactly.
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let w1 = warp(cfg.band_low_hz);
    let w2 = warp(cfg.band_high_hz);
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    // Lowpass prototype poles on the unit circle, upper half plane only;
    // each yields two bandpass poles whose conjugates complete a section
    // pair. Even order means no real prototype pole to special-case.
    let n = order as i32;
    let mut sections = Vec::with_capacity(order as usize);
    for m in 1..=(n / 2) {
        let theta = PI * f64::from(2 * m + n - 1) / f64::from(2 * n);
        let proto = Complex64::new(theta.cos(), theta.sin());

        // Lowpass-to-bandpass: s_lp -> two poles around +/- j*w0.
        let p_lp = proto * (bw / 2.0);
        let disc = (p_lp * p_lp - Complex64::new(w0 * w0, 0.0)).sqrt();
        for s_analog in [p_lp + disc, p_lp - disc] {
            // Bilinear transform of the pole; its conjugate pairs into the
            // same denominator. Numerator zeros sit at z = +1 and z = -1.
            let k = 2.0 * fs;
            let z_pole = (k + s_analog) / (k - s_analog);
            let a1 = -2.0 * z_pole.re;
            let a2 = z_pole.norm_sqr();
            sections.push(BiquadSection::new([1.0, 0.0, -1.0], [a1, a2]));
        }
    }

    let mut cascade = BiquadCascade {
        sections,
        sample_rate_hz: fs,
    };

    // Normalize so the response is exactly unity at the digital frequency
    // the warped analog center maps to.
    let f_center = fs / PI * (w0 / (2.0 * fs)).atan();
    let raw_gain = cascade.response_at(f_center).norm();
    if !raw_gain.is_finite() || raw_gain <= 0.0 {
        return Err(DspError::InvalidConfig(format!(
            "degenerate bandpass design: center gain {raw_gain}"
        )));
    }
    let per_section = raw_gain.powf(-1.0 / cascade.sections.len() as f64);
    for s in &mut cascade.sections {
        s.b0 *= per_section;
        s.b2 *= per_section;
    }

    if !cascade.is_stable() {
        return Err(DspError::InvalidConfig(
            "designed filter has poles on or outside the unit circle".into(),
        ));
    }
    Ok(cascade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_cfg() -> SignalConfig {
        SignalConfig::default()
    }

    #[test]
    fn default_design_has_four_stable_sections() {
        let cascade = design_bandpass(&default_cfg()).unwrap();
        assert_eq!(cascade.sections().len(), 4);
        assert!(cascade.is_stable());
    }

    #[test]
    fn center_frequency_gain_is_unity() {
        let cascade = design_bandpass(&default_cfg()).unwrap();
        // Geometric center of 10..500 Hz.
        let f_center = (10.0f64 * 500.0).sqrt();
        let db = cascade.magnitude_db(f_center);
        assert!(db.abs() < 0.5, "center gain {db} dB outside +/-0.5 dB");
    }

    #[test]
    fn band_edges_sit_at_minus_3db() {
        let cascade = design_bandpass(&default_cfg()).unwrap();
        for edge in [10.0, 500.0] {
            let db = cascade.magnitude_db(edge);
            assert!(
                (db + 3.0103).abs() < 0.5,
                "edge {edge} Hz gain {db} dB, expected -3.01 +/- 0.5"
            );
        }
    }

    #[test]
    fn stopband_attenuation_exceeds_40db() {
        let cascade = design_bandpass(&default_cfg()).unwrap();
        assert!(cascade.magnitude_db(1.0) < -40.0);
        assert!(cascade.magnitude_db(990.0) < -40.0);
    }

    #[test]
    fn band_edge_at_nyquist_rejected() {
        let cfg = SignalConfig {
            sample_rate_hz: 1000.0,
            ..default_cfg()
        };
        assert!(matches!(design_bandpass(&cfg), Err(DspError::InvalidConfig(_))));
    }

    #[test]
    fn odd_prototype_order_rejected() {
        let cfg = SignalConfig {
            prototype_order: 3,
            ..default_cfg()
        };
        assert!(matches!(design_bandpass(&cfg), Err(DspError::InvalidConfig(_))));
    }

    #[test]
    fn impulse_response_spectrum_matches_analytic_response() {
        // FFT-of-impulse-response oracle: the DFT of a long impulse response
        // must agree with direct polynomial evaluation of H at every bin.
        use rustfft::{num_complex::Complex, FftPlanner};

        let cfg = default_cfg();
        let mut cascade = design_bandpass(&cfg).unwrap();
        let n = 1 << 15;
        let mut h: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let x = if i == 0 { 1.0 } else { 0.0 };
                Complex::new(cascade.process_sample(x), 0.0)
            })
            .collect();
        // Impulse response must have decayed to negligible level.
        let tail: f64 = h[n - 256..].iter().map(|c| c.re.abs()).sum();
        assert!(tail < 1e-9, "impulse response tail {tail} still live");

        FftPlanner::new().plan_fft_forward(n).process(&mut h);
        let fresh = design_bandpass(&cfg).unwrap();
        for (k, bin) in h.iter().enumerate() {
            let f = k as f64 * cfg.sample_rate_hz / n as f64;
            let expected = fresh.response_at(f).norm();
            assert!(
                (bin.norm() - expected).abs() < 1e-6,
                "bin {k} ({f:.2} Hz): fft {} vs analytic {expected}",
                bin.norm()
            );
        }
    }

    #[test]
    fn linearity_scaled_input_scales_output() {
        let cfg = default_cfg();
        let mut a = design_bandpass(&cfg).unwrap();
        let mut b = design_bandpass(&cfg).unwrap();
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 - 0.5).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y = a.process(&x);
        let y2 = b.process(&x2);
        for (u, v) in y.iter().zip(&y2) {
            assert_relative_eq!(2.0 * u, *v, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn zero_input_leaves_state_at_zero() {
        let mut cascade = design_bandpass(&default_cfg()).unwrap();
        let y = cascade.process(&[0.0; 64]);
        assert!(y.iter().all(|&v| v == 0.0));
        let again = cascade.process(&[0.0; 8]);
        assert!(again.iter().all(|&v| v == 0.0));
    }

    proptest::proptest! {
        // Any valid band/rate combination must produce a stable cascade.
        #[test]
        fn random_valid_configs_are_stable(
            fs in 600.0f64..48_000.0,
            lo_frac in 0.002f64..0.3,
            hi_frac in 0.35f64..0.95,
            half_order in 1u32..4,
        ) {
            let nyq = fs / 2.0;
            let cfg = SignalConfig {
                sample_rate_hz: fs,
                band_low_hz: lo_frac * nyq,
                band_high_hz: hi_frac * nyq,
                prototype_order: half_order * 2,
                ..SignalConfig::default()
            };
            let cascade = design_bandpass(&cfg).unwrap();
            proptest::prop_assert!(cascade.is_stable());
            proptest::prop_assert_eq!(cascade.sections().len(), cfg.prototype_order as usize);
        }
    }
}
