use super::*;
use crate::frontend::{EarMode, Frontend, FrontendConfig};
use crate::signal::{mix_at_snr, MaskerGenerator, MaskerSignal, MaskerSpec, MatrixCorpus, TOKENS_PER_CLASS};
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn corpus() -> &'static MatrixCorpus {
    static C: OnceLock<MatrixCorpus> = OnceLock::new();
    C.get_or_init(|| MatrixCorpus::synthesize(&Default::default()).unwrap())
}

fn masker() -> &'static MaskerSignal {
    static M: OnceLock<MaskerSignal> = OnceLock::new();
    M.get_or_init(|| {
        let w = MaskerGenerator::new(corpus())
            .generate(&MaskerSpec::default(), 20.0, 3)
            .unwrap();
        MaskerSignal::new(w).unwrap()
    })
}

fn frontend() -> Frontend {
    let cfg = FrontendConfig {
        ears: EarMode::Mono,
        ..Default::default()
    };
    Frontend::new(&cfg, corpus().sample_rate(), None).unwrap()
}

/// Random sentences, optionally mixed with stationary noise at `snr`.
fn sentences(n: usize, seed: u64, snr: Option<f64>) -> Vec<Utterance> {
    let fe = frontend();
    let mut rng = crate::seed::rng(seed, &[]);
    (0..n)
        .map(|i| {
            let slots = std::array::from_fn(|_| rng.random_range(0..TOKENS_PER_CLASS));
            let (w, transcript) = corpus().render_sentence(slots).unwrap();
            let w = match snr {
                Some(s) => mix_at_snr(&w, masker(), s, &mut rng).unwrap(),
                None => w,
            };
            Utterance {
                features: fe.extract(&w, i as u64).unwrap(),
                transcript,
            }
        })
        .collect()
}

fn accuracy(model: &AcousticModel, data: &[Utterance], grammar: &Grammar) -> f64 {
    let dec = Decoder::new(model, grammar).unwrap();
    data.iter()
        .map(|u| score(&u.transcript, &dec.decode(&u.features).unwrap()).unwrap())
        .sum::<ScoreCounts>()
        .rate()
}

fn clean_model() -> &'static (AcousticModel, TrainReport) {
    static M: OnceLock<(AcousticModel, TrainReport)> = OnceLock::new();
    M.get_or_init(|| {
        train_with_report(&sentences(60, 1, None), &Grammar::Sentence, &Topology::default()).unwrap()
    })
}

#[test]
fn clean_matched_decoding_is_nearly_perfect() {
    let acc = accuracy(&clean_model().0, &sentences(40, 2, None), &Grammar::Sentence);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn alignment_likelihood_never_drops_within_a_stage() {
    let r = &clean_model().1;
    assert_eq!(r.log_likelihood.len(), Topology::default().total_iterations());
    assert!(r.log_likelihood.len() >= 4);
    assert!(r.is_monotone(1e-6), "{:?}", r.log_likelihood);
    assert_eq!(r.mixtures, vec![1, 1, 1, 1, 2, 2, 2, 2]);
}

#[test]
fn trained_model_invariants() {
    let m = &clean_model().0;
    m.validate().unwrap();
    assert_eq!(m.words.len(), 50);
    assert!(m.silence.is_some());
    for (_, h) in &m.words {
        assert_eq!(h.len(), 6);
        assert!(h.states.iter().all(|g| g.components() <= 2));
    }
}

#[test]
fn missing_word_is_a_coverage_error() {
    let missing = WordId::new(WordClass::ALL[2], 7);
    let data: Vec<Utterance> = sentences(80, 3, None)
        .into_iter()
        .filter(|u| !u.transcript.words().contains(&missing))
        .collect();
    match train(&data, &Grammar::Sentence, &Topology::default()) {
        Err(Error::MissingCoverage { word, count: 0, .. }) => assert_eq!(word, missing.0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn training_is_deterministic_and_doubling_is_neutral() {
    let grammar = Grammar::SingleClass(WordClass::ALL[0]);
    let fe = frontend();
    let data: Vec<Utterance> = (0..30)
        .map(|i| {
            let (w, transcript) = corpus().render_token(WordClass::ALL[0], i % 10).unwrap();
            Utterance {
                features: fe.extract(&w, 0).unwrap(),
                transcript,
            }
        })
        .collect();
    let topo = Topology::default();
    let a = train(&data, &grammar, &topo).unwrap();
    assert_eq!(a, train(&data, &grammar, &topo).unwrap());
    let b = train_multicondition((&data, -3.0), (&data, -3.0), &grammar, &topo).unwrap();
    assert_eq!(b.train_snrs, vec![-3.0]);
    for ((_, ha), (_, hb)) in a.words.iter().zip(&b.words) {
        for (ga, gb) in ha.states.iter().zip(&hb.states) {
            assert_eq!(ga.components(), gb.components());
            for (x, y) in ga.means.iter().chain(&ga.vars).zip(gb.means.iter().chain(&gb.vars)) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }
    let m = train_multicondition((&data, 0.0), (&data, -6.0), &grammar, &topo).unwrap();
    assert_eq!(m.train_snrs, vec![-6.0, 0.0]);
}

#[test]
fn single_class_decoding() {
    let class = WordClass::ALL[0];
    let grammar = Grammar::SingleClass(class);
    let fe = frontend();
    let data: Vec<Utterance> = (0..20)
        .map(|i| {
            let (w, transcript) = corpus().render_token(class, i % 10).unwrap();
            Utterance {
                features: fe.extract(&w, 0).unwrap(),
                transcript,
            }
        })
        .collect();
    let m = train(&data, &grammar, &Topology::default()).unwrap();
    assert_eq!(m.words.len(), 10);
    let t = decode(&m, &data[3].features, &grammar).unwrap();
    assert_eq!(t, data[3].transcript);
    assert_eq!(accuracy(&m, &data, &grammar), 1.0);
    // a sentence model decodes isolated tokens under the single-class grammar
    let t = decode(&clean_model().0, &data[5].features, &grammar).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.words()[0].class(), class);
}

#[test]
fn dimension_mismatch() {
    let m = AcousticModel::random(4, &Grammar::Sentence, &Topology::default(), 1).unwrap();
    let f = FeatureMatrix::new(vec![0.0; 5 * 200], 5, false).unwrap();
    assert!(matches!(
        decode(&m, &f, &Grammar::Sentence),
        Err(Error::DimensionMismatch { model: 4, features: 5 })
    ));
}

#[test]
fn random_model_sits_at_chance() {
    let m = AcousticModel::random(68, &Grammar::Sentence, &Topology::default(), 9).unwrap();
    let data = sentences(200, 4, Some(0.0));
    let acc = accuracy(&m, &data, &Grammar::Sentence);
    // 1000 words; 95 % binomial interval around 0.1
    let ci = 1.96 * (0.09f64 / 1000.0).sqrt();
    assert!((acc - 0.1).abs() <= ci, "{acc}");
}

#[test]
fn scoring() {
    let w = |c: usize, i: usize| WordId::new(WordClass::ALL[c], i);
    let r = Transcript((0..5).map(|c| w(c, 1)).collect());
    assert_eq!(score(&r, &r).unwrap(), ScoreCounts { presented: 5, correct: 5 });
    let h = Transcript(vec![w(0, 1), w(1, 1), w(2, 1), w(3, 2), w(4, 3)]);
    assert!((score(&r, &h).unwrap().rate() - 0.6).abs() < 1e-12);
    assert!(score(&r, &Transcript(vec![w(0, 1)])).is_err());
    let total: ScoreCounts = (0..75)
        .map(|i| ScoreCounts {
            presented: 1,
            correct: usize::from(i < 24),
        })
        .sum();
    assert!((total.rate() - 0.32).abs() < 1e-12);
}

#[test]
fn model_file_round_trip() {
    let m = &clean_model().0;
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..6], b"SRTLAM");
    let back = AcousticModel::read_from(&buf[..]).unwrap();
    assert_eq!(&back, m);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    m.save(&p).unwrap();
    assert_eq!(&AcousticModel::load(&p).unwrap(), m);
    assert!(matches!(AcousticModel::read_from(&buf[..buf.len() - 3]), Err(Error::ModelFormat(_))));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(AcousticModel::read_from(&bad[..]), Err(Error::ModelFormat(_))));
    let mut v2 = buf.clone();
    v2[8] = 2;
    assert!(matches!(AcousticModel::read_from(&v2[..]), Err(Error::ModelFormat(_))));
}

#[test]
fn degenerate_data() {
    let g = Grammar::SingleClass(WordClass::ALL[1]);
    let data: Vec<Utterance> = (0..20)
        .map(|i| Utterance {
            features: FeatureMatrix::new(vec![1.0; 3 * 40], 3, false).unwrap(),
            transcript: Transcript(vec![WordId::new(WordClass::ALL[1], i % 10)]),
        })
        .collect();
    assert!(matches!(train(&data, &g, &Topology::default()), Err(Error::DegenerateData(_))));
    // an uninformed model guesses one fixed word: chance over a balanced list
    let m = uninformed(&data, &g, &Topology::default()).unwrap();
    assert_eq!(m.words.len(), 10);
    assert!((accuracy(&m, &data, &g) - 0.1).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decoding_respects_the_grammar(
        seed in 0u64..1000,
        frames in 40usize..120,
        class in 0usize..5,
        sentence in any::<bool>(),
        silence in any::<bool>(),
    ) {
        let grammar = if sentence { Grammar::Sentence } else { Grammar::SingleClass(WordClass::ALL[class]) };
        let topo = Topology { silence, ..Topology::default() };
        let m = AcousticModel::random(3, &grammar, &topo, seed).unwrap();
        let mut rng = crate::seed::rng(seed, &[1]);
        let data = (0..frames * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = FeatureMatrix::new(data, 3, false).unwrap();
        let t = decode(&m, &f, &grammar).unwrap();
        prop_assert!(grammar.accepts(&t), "{}", t);
    }

    #[test]
    fn training_likelihood_is_monotone_on_random_data(seed in 0u64..1000) {
        let g = Grammar::SingleClass(WordClass::ALL[4]);
        let mut rng = crate::seed::rng(seed, &[2]);
        let data: Vec<Utterance> = (0..20).map(|i| {
            let w = i % 10;
            let frames = rng.random_range(20..40);
            let v = (0..frames * 2).map(|k| rng.random_range(-1.0..1.0) + (w * (k % 2)) as f64).collect();
            Utterance {
                features: FeatureMatrix::new(v, 2, false).unwrap(),
                transcript: Transcript(vec![WordId::new(WordClass::ALL[4], w)]),
            }
        }).collect();
        let topo = Topology { states_per_word: 3, silence_states: 1, ..Topology::default() };
        let (_, r) = train_with_report(&data, &g, &topo).unwrap();
        prop_assert!(r.is_monotone(1e-6), "{:?}", r.log_likelihood);
    }
}
