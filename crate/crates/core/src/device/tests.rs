use super::*;
use crate::signal::{
    spatialize, CorpusConfig, LayoutTag, MaskerGenerator, MaskerSpec, MatrixCorpus, SceneLayout,
};
use rand::Rng;

const SR: u32 = 16_000;
const CAL: f64 = 120.0;

fn sine(freq: f64, level_db: f64, secs: f64) -> Vec<f64> {
    let amp = crate::signal::dbspl_to_rms(level_db, CAL) * 2f64.sqrt();
    (0..(secs * SR as f64) as usize)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin())
        .collect()
}

fn noise_stereo(n: usize, seed: u64) -> Waveform {
    let mut rng = crate::seed::rng(seed, &[]);
    let l = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let r = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    Waveform::stereo(l, r, SR, CAL).unwrap()
}

fn tail_level(w: &Waveform, ch: usize) -> f64 {
    let c = w.channel(ch);
    crate::signal::samples_level_dbspl(&c[c.len() / 2..], CAL)
}

#[test]
fn identity_is_bit_exact() {
    let x = noise_stereo(5000, 1);
    let y = process(&DeviceDescriptor::identity(), &x).unwrap();
    assert_eq!(x, y);
}

#[test]
fn flat_gain_adds_twenty_db() {
    let x = noise_stereo(8000, 2);
    let y = process(&DeviceDescriptor::gain(vec![20.0]), &x).unwrap();
    assert!((y.level_dbspl() - x.level_dbspl() - 20.0).abs() < 1e-9);
    // equal per-band gains reconstruct the flat case through the filterbank
    let y3 = process(&DeviceDescriptor::gain(vec![20.0, 20.0, 20.0]), &x).unwrap();
    assert!((y3.level_dbspl() - x.level_dbspl() - 20.0).abs() < 1e-9);
}

#[test]
fn band_gain_shapes_spectrum() {
    let d = DeviceDescriptor::gain(vec![0.0, 0.0, 20.0]);
    for (f, expect) in [(200.0, 0.0), (6000.0, 20.0)] {
        let x = Waveform::mono(sine(f, 60.0, 0.5), SR, CAL).unwrap();
        let y = process(&d, &x).unwrap();
        let got = tail_level(&y, 0) - tail_level(&x, 0);
        assert!((got - expect).abs() < 1.0, "{f} Hz: {got}");
    }
}

#[test]
fn compressor_static_curve_halves_steps_above_knee() {
    let params = CompressorParams {
        gains_db: vec![10.0],
        knee_db: 30.0,
        ratio: 2.0,
        ..CompressorParams::default()
    };
    let d = DeviceDescriptor::compressor(params.clone());
    // static I/O curve: out = in + g - (in - knee)(1 - 1/ratio)
    let oracle = |l: f64| l + 10.0 - (l - 30.0) * 0.5;
    // tones well inside each band, away from the crossover transitions
    for f in [300.0, 1700.0, 4000.0] {
        let out_level = |input_db: f64| {
            let x = Waveform::mono(sine(f, input_db, 1.0), SR, CAL).unwrap();
            tail_level(&process(&d, &x).unwrap(), 0)
        };
        let (lo, hi) = (out_level(60.0), out_level(70.0));
        assert!((hi - lo - (oracle(70.0) - oracle(60.0))).abs() < 0.05, "{f}: {}", hi - lo);
        assert!((hi - lo - 5.0).abs() < 0.05);
    }
    // single band follows the curve in absolute terms too
    let single = DeviceDescriptor::compressor(CompressorParams {
        crossovers_hz: vec![],
        ..params
    });
    // (the asymmetric envelope sits slightly above the mean square of a tone)
    let x = Waveform::mono(sine(1000.0, 70.0, 1.0), SR, CAL).unwrap();
    let y = tail_level(&process(&single, &x).unwrap(), 0);
    assert!((y - oracle(70.0)).abs() < 1.5, "{y}");
}

#[test]
fn compressor_below_knee_is_linear() {
    let d = DeviceDescriptor::compressor(CompressorParams {
        gains_db: vec![6.0],
        knee_db: 90.0,
        ..CompressorParams::default()
    });
    let x = Waveform::mono(sine(500.0, 50.0, 0.5), SR, CAL).unwrap();
    let y = process(&d, &x).unwrap();
    assert!((tail_level(&y, 0) - tail_level(&x, 0) - 6.0).abs() < 0.05);
}

#[test]
fn invalid_descriptors_rejected() {
    for s in [
        "compressor:ratio=0.5",
        "compressor:attack=0",
        "gain:gains=1/2",
        "beamformer:taps=0",
        "reverb",
    ] {
        assert!(s.parse::<DeviceDescriptor>().is_err(), "{s}");
    }
    let x = Waveform::mono(vec![0.0; 100], 4000, CAL).unwrap();
    assert!(process(&DeviceDescriptor::gain(vec![1.0]), &x).is_err());
}

#[test]
fn descriptor_strings_round_trip() {
    for s in [
        "identity",
        "gain:20",
        "gain:gains=0/10/20",
        "compressor:ratio=3,knee=50,gains=5/10/15",
        "beamformer:taps=16",
        "compressor+beamformer",
        "loopback:delay=480,gain=2",
        "tcp:127.0.0.1:9000",
    ] {
        let d: DeviceDescriptor = s.parse().unwrap();
        let again: DeviceDescriptor = d.to_string().parse().unwrap();
        assert_eq!(d, again, "{s}");
    }
}

#[test]
fn streaming_matches_whole_signal() {
    let x = noise_stereo(20_000, 3);
    for s in [
        "gain:gains=0/6/12",
        "compressor:gains=0/10/20",
        "beamformer",
        "compressor+beamformer",
    ] {
        let d: DeviceDescriptor = s.parse().unwrap();
        let whole = process(&d, &x).unwrap();
        let mut p = d.processor(SR, CAL).unwrap();
        let mut out: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
        for start in (0..x.len()).step_by(1237) {
            let end = (start + 1237).min(x.len());
            let mut block: Vec<Vec<f64>> =
                x.channels().iter().map(|c| c[start..end].to_vec()).collect();
            p.process_block(&mut block).unwrap();
            for (o, b) in out.iter_mut().zip(block) {
                o.extend(b);
            }
        }
        let err = crate::signal::samples_level_dbspl(
            &out[0].iter().zip(whole.channel(0)).map(|(a, b)| a - b).collect::<Vec<_>>(),
            0.0,
        );
        assert!(err < -120.0 || err == f64::NEG_INFINITY, "{s}: {err}");
    }
}

struct Scene {
    speech: Waveform,
    noise: Waveform,
    mix: Waveform,
}

fn scene(tag: LayoutTag) -> Scene {
    let corpus = MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap();
    let (s, _) = corpus.render_sentence([1, 2, 3, 4, 5]).unwrap();
    let spec = MaskerSpec::default();
    let m = MaskerGenerator::new(&corpus).generate(&spec, 4.0, 1).unwrap();
    let s = crate::signal::scale_speech(&s, spec.level_db, 0.0).unwrap();
    let layout = SceneLayout::new(tag);
    let silent = Waveform::silence(s.len(), 1, SR, s.calibration_db());
    let speech = spatialize(&s, &silent, &SceneLayout::new(LayoutTag::S0)).unwrap();
    let noise = spatialize(&silent, &m, &layout).unwrap();
    let mix = spatialize(&s, &m, &layout).unwrap();
    Scene { speech, noise, mix }
}

fn snr(s: &Waveform, n: &Waveform, ch: usize) -> f64 {
    s.channel_level_dbspl(ch) - n.channel_level_dbspl(ch)
}

#[test]
fn beamformer_keeps_colocated_snr() {
    let sc = scene(LayoutTag::S0N0);
    let (_, ys, yn) =
        beamform_components(&sc.mix, &sc.speech, &sc.noise, &BeamformerParams::default()).unwrap();
    let before = snr(&sc.speech, &sc.noise, 0);
    let after = snr(&ys, &yn, 0);
    assert!((after - before).abs() < 0.5, "{before} -> {after}");
}

#[test]
fn beamformer_improves_lateral_masker_snr() {
    let sc = scene(LayoutTag::S0N90);
    let (y, ys, yn) =
        beamform_components(&sc.mix, &sc.speech, &sc.noise, &BeamformerParams::default()).unwrap();
    let left = snr(&sc.speech, &sc.noise, 0);
    let better_ear = snr(&sc.speech, &sc.noise, 1);
    let after = snr(&ys, &yn, 0);
    assert!(after > left, "{left} -> {after}");
    assert!(after > better_ear, "{better_ear} -> {after}");
    // shadow components add up to the processed mixture
    let direct = beamform(&sc.mix, &BeamformerParams::default()).unwrap();
    for i in (0..y.len()).step_by(97) {
        assert!((y.channel(0)[i] - ys.channel(0)[i] - yn.channel(0)[i]).abs() < 1e-9);
        assert_eq!(y.channel(0)[i], direct.channel(0)[i]);
    }
}

#[test]
fn beamformer_zero_in_zero_out_and_needs_stereo() {
    let z = Waveform::silence(3000, 2, SR, CAL);
    let y = beamform(&z, &BeamformerParams::default()).unwrap();
    assert!(y.channels().iter().flatten().all(|v| *v == 0.0));
    let mono = Waveform::silence(3000, 1, SR, CAL);
    assert!(beamform(&mono, &BeamformerParams::default()).is_err());
}

fn loopback(p: LoopbackProcessor) -> LoopbackEndpoint {
    LoopbackEndpoint::new(p)
}

#[test]
fn loopback_calibrates_to_zero() {
    let mut ep = loopback(LoopbackProcessor::default());
    let cal = calibrate_latency(&mut ep, SR, 2).unwrap();
    assert_eq!(cal, LatencyCalibration { delay: 0, skew: 0 });
}

#[test]
fn buffered_endpoint_reports_its_delay() {
    let mut ep = loopback(LoopbackProcessor {
        delay: 480,
        skew: 3,
        ..Default::default()
    });
    let cal = calibrate_latency(&mut ep, SR, 2).unwrap();
    assert_eq!(cal, LatencyCalibration { delay: 480, skew: 3 });
}

#[test]
fn silent_endpoint_has_no_impulse() {
    let mut ep = loopback(LoopbackProcessor {
        silent: true,
        ..Default::default()
    });
    assert!(matches!(calibrate_latency(&mut ep, SR, 2), Err(Error::NoImpulse)));
}

#[test]
fn exchange_restores_alignment_and_gain() {
    let x = noise_stereo(10_000, 4);
    for (delay, gain) in [(0, 1.0), (480, 2.0), (5000, 1.0)] {
        let mut ep = loopback(LoopbackProcessor {
            delay,
            gain,
            ..Default::default()
        });
        let cal = calibrate_latency(&mut ep, SR, 2).unwrap();
        let y = external_exchange(&mut ep, &x, &cal).unwrap();
        assert_eq!(y.len(), x.len());
        for c in 0..2 {
            for (a, b) in y.channel(c).iter().zip(x.channel(c)) {
                assert!((a - gain * b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn dropped_block_is_a_length_mismatch() {
    let x = noise_stereo(10_000, 5);
    let mut ep = loopback(LoopbackProcessor::default());
    let cal = calibrate_latency(&mut ep, SR, 2).unwrap();
    let mut dropping = loopback(LoopbackProcessor {
        drop_block: Some(1),
        ..Default::default()
    });
    dropping.handshake(SR, 2).unwrap();
    assert!(matches!(
        external_exchange(&mut dropping, &x, &cal),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn tcp_endpoint_speaks_the_wire_protocol() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (sock, _) = listener.accept().unwrap();
        let w = sock.try_clone().unwrap();
        serve(
            sock,
            w,
            &LoopbackProcessor {
                delay: 100,
                gain: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
    });
    let d: DeviceDescriptor = format!("tcp:{addr}").parse().unwrap();
    let x = noise_stereo(9000, 6);
    let y = process(&d, &x).unwrap();
    for (a, b) in y.channel(1).iter().zip(x.channel(1)) {
        assert!((a - 0.5 * b).abs() < 1e-6);
    }
    server.join().unwrap();
}

#[test]
fn unreachable_endpoint_errors() {
    let d: DeviceDescriptor = "tcp:127.0.0.1:1".parse().unwrap();
    assert!(process(&d, &noise_stereo(100, 1)).is_err());
}

#[test]
fn stalled_endpoint_times_out() {
    let (_keep_tx, rx) = std::os::unix::net::UnixStream::pair().unwrap();
    let w = rx.try_clone().unwrap();
    let mut ep = StreamEndpoint::new(rx, w).with_timeout(std::time::Duration::from_millis(100));
    // the other side never answers the handshake
    assert!(matches!(ep.handshake(SR, 2), Err(Error::Timeout(_))));
}
