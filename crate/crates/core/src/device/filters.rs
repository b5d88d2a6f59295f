use std::collections::VecDeque;
use std::f64::consts::PI;

/// Taps of the linear-phase crossover filters; group delay is half of this.
pub(crate) const CROSSOVER_TAPS: usize = 129;

/// Windowed-sinc low-pass with unit DC gain.
fn lowpass_taps(cutoff_hz: f64, sample_rate: u32, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate as f64;
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (taps - 1) as f64).cos()
                + 0.08 * (4.0 * PI * i as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Splits a signal into bands that sum to the input delayed by half the
/// filter length: band k is the difference of neighbouring low-pass outputs
/// and the top band is the delayed input minus the highest low-pass.
#[derive(Clone, Debug)]
pub(crate) struct BandSplitter {
    lowpasses: Vec<Vec<f64>>,
    history: VecDeque<f64>,
}

impl BandSplitter {
    pub fn new(crossovers_hz: &[f64], sample_rate: u32) -> Self {
        Self {
            lowpasses: crossovers_hz
                .iter()
                .map(|&f| lowpass_taps(f, sample_rate, CROSSOVER_TAPS))
                .collect(),
            history: VecDeque::from(vec![0.0; CROSSOVER_TAPS]),
        }
    }

    pub fn split(&mut self, x: f64, out: &mut [f64]) {
        self.history.pop_back();
        self.history.push_front(x);
        let (a, b) = self.history.as_slices();
        let mut prev = 0.0;
        for (k, h) in self.lowpasses.iter().enumerate() {
            let y: f64 = h[..a.len()].iter().zip(a).map(|(h, x)| h * x).sum::<f64>()
                + h[a.len()..].iter().zip(b).map(|(h, x)| h * x).sum::<f64>();
            out[k] = y - prev;
            prev = y;
        }
        out[self.lowpasses.len()] = self.history[CROSSOVER_TAPS / 2] - prev;
    }
}
