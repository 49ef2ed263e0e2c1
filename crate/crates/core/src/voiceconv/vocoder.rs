//! Deterministic sinusoidal vocoder for band-energy features and its exact
//! analysis counterpart.

use avatarkit_tensor::{Array, Scalar};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::syndata::AUDIO_DIM;

pub const SAMPLE_RATE: u32 = 16_000;

/// Samples per feature frame.
pub const HOP: usize = 128;

/// DFT bin (over one hop) carrying band `b`.
pub fn band_bin(b: usize) -> usize {
    3 + 2 * b
}

/// Centre frequency of band `b` in Hz.
pub fn band_frequency(b: usize) -> f64 {
    band_bin(b) as f64 * SAMPLE_RATE as f64 / HOP as f64
}

/// Each frame becomes `HOP` samples of `sum_b e_b cos(2 pi k_b n / HOP)`.
/// Bins are whole periods per hop, so phase is continuous across frames.
/// Negative energies are treated as silence.
pub fn toy_vocoder<T: Scalar>(spectra: &Array<T>) -> Vec<T> {
    let [frames, bands] = spectra.shape() else { panic!("spectra must be [frames, bands]") };
    let table: Vec<Vec<f64>> = (0..*bands)
        .map(|b| (0..HOP).map(|n| (std::f64::consts::TAU * (band_bin(b) * n) as f64 / HOP as f64).cos()).collect())
        .collect();
    let mut out = Vec::with_capacity(frames * HOP);
    for f in 0..*frames {
        let row = &spectra.data()[f * bands..(f + 1) * bands];
        for n in 0..HOP {
            let s: f64 = row.iter().zip(&table).map(|(e, tab)| e.f64().max(0.0) * tab[n]).sum();
            out.push(T::of(s));
        }
    }
    out
}

/// Band energies of a waveform: per-hop DFT magnitude at each band bin.
pub fn analyze<T: Scalar>(waveform: &[T], bands: usize) -> Result<Array<T>> {
    if waveform.len() % HOP != 0 {
        return Err(invalid(format!("waveform length {} is not a multiple of {HOP}", waveform.len())));
    }
    if band_bin(bands.saturating_sub(1)) >= HOP / 2 {
        return Err(invalid(format!("{bands} bands exceed the Nyquist bin")));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(HOP);
    let frames = waveform.len() / HOP;
    let mut out = Vec::with_capacity(frames * bands);
    let mut buf = vec![Complex::new(0.0, 0.0); HOP];
    for f in 0..frames {
        for (n, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(waveform[f * HOP + n].f64(), 0.0);
        }
        fft.process(&mut buf);
        out.extend((0..bands).map(|b| T::of(2.0 * buf[band_bin(b)].norm() / HOP as f64)));
    }
    Ok(Array::new(&[frames, bands], out))
}

pub fn analyze_default<T: Scalar>(waveform: &[T]) -> Result<Array<T>> {
    analyze(waveform, AUDIO_DIM)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_in_zero_out() {
        let w = toy_vocoder(&Array::<f64>::zeros(&[3, AUDIO_DIM]));
        assert_eq!(w.len(), 3 * HOP);
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_band_is_single_sinusoid() {
        let mut s = Array::<f64>::zeros(&[4, AUDIO_DIM]);
        for f in 0..4 {
            s.set(&[f, 7], 0.8);
        }
        let w = toy_vocoder(&s);
        // DFT over the whole signal: one peak at the band's frequency
        let mut buf: Vec<Complex<f64>> = w.iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let mags: Vec<f64> = buf[..buf.len() / 2].iter().map(|c| c.norm()).collect();
        let peak = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let hz = peak as f64 * SAMPLE_RATE as f64 / w.len() as f64;
        assert!((hz - band_frequency(7)).abs() < 1e-9);
        let others: f64 = mags.iter().enumerate().filter(|(i, _)| *i != peak).map(|(_, m)| m).sum();
        assert!(others < 1e-6 * mags[peak]);
    }

    #[test]
    fn round_trip() {
        let data: Vec<f64> = (0..5 * AUDIO_DIM).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        let s = Array::<f64>::from_f64(&[5, AUDIO_DIM], &data);
        let back = analyze_default(&toy_vocoder(&s)).unwrap();
        for (a, b) in s.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
