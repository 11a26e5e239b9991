use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::{ContinuousRecording, Event, FilterSettings, PreprocessReport};
use crate::error::{Error, Result};

/// Second-order IIR section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth high-pass (Q = 1/√2) from the bilinear transform.
    pub fn butterworth_highpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / std::f64::consts::SQRT_2;
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0 / a0;
        Biquad {
            b: [b0, -2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Filters causally, starting from the steady state for a constant
    /// input equal to the first sample.
    pub fn apply(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let y0 = dc * x0;
        let mut z1 = y0 - self.b[0] * x0;
        let mut z2 = self.b[2] * x0 - self.a[1] * y0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b[0] * xin + z1;
            z1 = self.b[1] * xin - self.a[0] * y + z2;
            z2 = self.b[2] * xin - self.a[1] * y;
            *v = y;
        }
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass for rational resampling by `up / down`.
fn antialias_fir(up: usize, down: usize) -> Vec<f64> {
    const BETA: f64 = 5.0;
    let ratio = up.max(down);
    let half = 10 * ratio;
    let cutoff = 1.0 / ratio as f64;
    let len = 2 * half + 1;
    let denom = bessel_i0(BETA);
    (0..len)
        .map(|n| {
            let m = n as f64 - half as f64;
            let arg = std::f64::consts::PI * cutoff * m;
            let sinc = if m == 0.0 { 1.0 } else { arg.sin() / arg };
            let r = m / half as f64;
            let window = bessel_i0(BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            up as f64 * cutoff * sinc * window
        })
        .collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduces `target / source` to a ratio of small integers (millihertz grid).
fn rational_ratio(source_hz: f64, target_hz: f64) -> (usize, usize) {
    let s = (source_hz * 1000.0).round() as u64;
    let t = (target_hz * 1000.0).round() as u64;
    let g = gcd(s, t).max(1);
    ((t / g) as usize, (s / g) as usize)
}

/// Zero-phase polyphase resampling of one channel by `up / down`.
pub fn resample_poly(x: &[f64], up: usize, down: usize, fir: &[f64]) -> Vec<f64> {
    let n_out = (x.len() * up).div_ceil(down);
    let half = (fir.len() - 1) / 2;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // Upsampled index j = m*down + half - k must land on a multiple of up.
        let center = m * down + half;
        let mut acc = 0.0;
        let mut k = center % up;
        while k < fir.len() {
            if let Some(j) = center.checked_sub(k) {
                let src = j / up;
                if src < x.len() {
                    acc += fir[k] * x[src];
                }
            }
            k += up;
        }
        out.push(acc);
    }
    out
}

/// High-pass filters every channel (causal Butterworth biquad) and resamples
/// to `target_rate` with a linear-phase anti-alias FIR.
pub fn highpass_downsample(
    rec: &ContinuousRecording,
    cutoff_hz: f64,
    target_rate: f64,
    report: &mut PreprocessReport,
) -> Result<ContinuousRecording> {
    let nyq_target = target_rate / 2.0;
    if !(cutoff_hz > 0.0) || cutoff_hz >= nyq_target {
        return Err(Error::arg(format!(
            "high-pass cutoff {cutoff_hz} Hz must lie in (0, {nyq_target}) Hz"
        )));
    }
    if target_rate > rec.sampling_rate {
        return Err(Error::arg(format!(
            "target rate {target_rate} Hz exceeds source rate {} Hz",
            rec.sampling_rate
        )));
    }
    let (up, down) = rational_ratio(rec.sampling_rate, target_rate);
    let fir = if up == down { vec![1.0] } else { antialias_fir(up, down) };
    let hp = Biquad::butterworth_highpass(cutoff_hz, rec.sampling_rate);

    let inputs: Vec<Vec<f64>> = rec.data.axis_iter(Axis(0)).map(|row| row.to_vec()).collect();
    let rows: Vec<Vec<f64>> = inputs
        .into_par_iter()
        .map(|mut x| {
            hp.apply(&mut x);
            if up == down {
                x
            } else {
                resample_poly(&x, up, down, &fir)
            }
        })
        .collect();
    let n_out = rows.first().map_or(0, Vec::len);
    let mut data = Array2::zeros((rows.len(), n_out));
    for (c, row) in rows.into_iter().enumerate() {
        data.row_mut(c).assign(&ndarray::Array1::from(row));
    }

    let scale = up as f64 / down as f64;
    let mut events: Vec<Event> = Vec::with_capacity(rec.events.len());
    for ev in &rec.events {
        let sample = (ev.sample as f64 * scale).round() as usize;
        if events.last().is_some_and(|last| last.sample >= sample) {
            report.drop_trial(ev.trial_id, "onset collides with previous onset after resampling");
            continue;
        }
        events.push(Event { sample, ..*ev });
    }

    report.filter = Some(FilterSettings {
        highpass_hz: cutoff_hz,
        highpass_order: 2,
        source_rate_hz: rec.sampling_rate,
        target_rate_hz: target_rate,
        resample_up: up,
        resample_down: down,
        antialias_taps: fir.len(),
    });
    Ok(ContinuousRecording {
        data,
        sampling_rate: target_rate,
        channel_positions: rec.channel_positions.clone(),
        events,
    })
}
