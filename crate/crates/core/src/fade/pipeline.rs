use crate::device::{self, DeviceDescriptor};
use crate::error::{Error, Result};
use crate::frontend::{AudiogramProfile, Frontend, FrontendConfig};
use crate::recognizer::{train, train_multicondition, uninformed, AcousticModel, Grammar, Topology, Utterance};
use crate::seed;
use crate::signal::{
    scale_speech, spatialize, CorpusConfig, MaskerGenerator, MaskerKind, MaskerSignal, MaskerSpec,
    MatrixCorpus, SceneLayout, Transcript, Waveform, WordClass, CLASS_COUNT, TOKENS_PER_CLASS,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

/// What a recorded set is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
    ApproxTrain,
    ApproxTest,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
            Role::ApproxTrain => "approx_train",
            Role::ApproxTest => "approx_test",
        }
    }

    pub fn is_approximation(self) -> bool {
        matches!(self, Role::ApproxTrain | Role::ApproxTest)
    }
}

/// Corpus, masker, spatial layout, device and listener.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub masker: MaskerSpec,
    pub layout: SceneLayout,
    pub device: DeviceDescriptor,
    #[serde(skip)]
    pub profile: Option<AudiogramProfile>,
    pub frontend: FrontendConfig,
    pub topology: Topology,
    /// Length of the masker buffer from which excerpts are drawn.
    pub masker_buffer_s: f64,
    /// Word class used in the approximation stage.
    pub approx_class: WordClass,
    /// Feature-level reuses of each approximation recording.
    pub presentations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            masker: MaskerSpec::default(),
            layout: SceneLayout::default(),
            device: DeviceDescriptor::identity(),
            profile: None,
            frontend: FrontendConfig::default(),
            topology: Topology::default(),
            masker_buffer_s: 30.0,
            approx_class: WordClass::ALL[0],
            presentations: 3,
        }
    }
}

impl PipelineConfig {
    pub fn in_silence(&self) -> bool {
        self.masker.kind == MaskerKind::Silence
    }

    /// Canonical text from which the pipeline hash is computed.
    pub fn canonical(&self) -> String {
        let mut s = toml::to_string(self).unwrap_or_default();
        if let Some(p) = &self.profile {
            s.push_str("\n[profile]\n");
            s.push_str(&p.to_table());
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.masker.validate()?;
        self.layout.validate()?;
        self.device.validate()?;
        self.topology.validate()?;
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        if !(self.masker_buffer_s >= 1.0) {
            return Err(Error::invalid("masker buffer must be at least 1 s"));
        }
        if self.presentations == 0 {
            return Err(Error::invalid("presentations must be positive"));
        }
        Ok(())
    }
}

/// Features of a set of mixtures recorded at one SNR for one role.
#[derive(Debug)]
pub struct RecordedSet {
    pub role: Role,
    pub snr_db: f64,
    pub seed: u64,
    pub count: usize,
    pub utterances: Vec<Utterance>,
    /// Audio seconds recorded for this set.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct SetKey {
    role: Role,
    snr: i64,
    seed: u64,
    count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct ModelKey {
    snrs: Vec<i64>,
    role: Role,
    seed: u64,
    count: usize,
}

type Slot<T> = Arc<OnceLock<Arc<T>>>;

/// Thread-safe cache of recordings and models keyed by SNR, role and seed.
/// Models are also persisted under `dir` when it is set.
#[derive(Default)]
struct Cache {
    sets: Mutex<HashMap<SetKey, Slot<RecordedSet>>>,
    models: Mutex<HashMap<ModelKey, Slot<AcousticModel>>>,
    dir: Option<PathBuf>,
}

fn slot<K: Eq + std::hash::Hash + Clone, T>(map: &Mutex<HashMap<K, Slot<T>>>, key: &K) -> Slot<T> {
    map.lock()
        .expect("cache lock")
        .entry(key.clone())
        .or_default()
        .clone()
}

fn get_or_try<T>(slot: &Slot<T>, f: impl FnOnce() -> Result<T>) -> Result<Arc<T>> {
    if let Some(v) = slot.get() {
        return Ok(v.clone());
    }
    let v = Arc::new(f()?);
    Ok(slot.get_or_init(|| v).clone())
}

/// Environment variable naming a directory for persisted models.
pub const CACHE_DIR_ENV: &str = "SRTLAB_CACHE_DIR";

pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
    corpus: MatrixCorpus,
    masker: MaskerSignal,
    frontend: Frontend,
    cache: Cache,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let corpus = MatrixCorpus::synthesize(&config.corpus)?;
        let masker_wave = MaskerGenerator::new(&corpus).generate(
            &config.masker,
            config.masker_buffer_s,
            config.masker.seed,
        )?;
        let masker = MaskerSignal::new(masker_wave)?;
        let frontend = Frontend::new(&config.frontend, corpus.sample_rate(), config.profile.as_ref())?;
        let dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
        Ok(Self {
            hash: config.hash(),
            config,
            corpus,
            masker,
            frontend,
            cache: Cache {
                dir,
                ..Cache::default()
            },
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn corpus(&self) -> &MatrixCorpus {
        &self.corpus
    }

    pub fn masker(&self) -> &MaskerSignal {
        &self.masker
    }

    pub fn masker_level_db(&self) -> f64 {
        self.config.masker.level_db
    }

    /// Duration of one recorded item of `role`.
    pub fn item_seconds(&self, role: Role) -> f64 {
        if role.is_approximation() {
            self.config.corpus.isolated_token_duration_s()
        } else {
            self.config.corpus.sentence_duration_s()
        }
    }

    pub fn grammar(&self, role: Role) -> Grammar {
        if role.is_approximation() {
            Grammar::SingleClass(self.config.approx_class)
        } else {
            Grammar::Sentence
        }
    }

    /// Mix speech with a masker excerpt at `snr_db` (dB SPL of speech in
    /// silence), spatialize, and run the device.
    pub fn render<R: Rng>(&self, speech: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
        let target_masker = if self.config.in_silence() {
            f64::NEG_INFINITY
        } else {
            self.masker.level_db()
        };
        let scaled = scale_speech(speech, target_masker, snr_db)?;
        let pad = self.config.layout.itd_samples(speech.sample_rate()) + 1;
        let excerpt = Waveform::mono(
            self.masker.excerpt(speech.len() + pad, rng),
            speech.sample_rate(),
            speech.calibration_db(),
        )?;
        let scene = spatialize(&scaled, &excerpt, &self.config.layout)?;
        device::process(&self.config.device, &scene)
    }

    /// Balanced sentence lists: every block of ten sentences uses each
    /// alternative of every slot once.
    fn sentence_slots(count: usize, rng: &mut impl Rng) -> Vec<[usize; CLASS_COUNT]> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let perms: Vec<Vec<usize>> = (0..CLASS_COUNT)
                .map(|_| {
                    let mut p: Vec<usize> = (0..TOKENS_PER_CLASS).collect();
                    p.shuffle(rng);
                    p
                })
                .collect();
            for i in 0..TOKENS_PER_CLASS {
                if out.len() == count {
                    break;
                }
                out.push(std::array::from_fn(|k| perms[k][i]));
            }
        }
        out
    }

    fn record_uncached(&self, role: Role, snr_db: f64, count: usize, seed_value: u64) -> Result<RecordedSet> {
        if count == 0 {
            return Err(Error::invalid("recorded set needs at least one item"));
        }
        let base = seed::derive(seed_value, &[role as u64, seed::snr_tag(snr_db)]);
        let mut rng = seed::rng(base, &[0]);
        let items: Vec<(Waveform, Transcript)> = if role.is_approximation() {
            let class = self.config.approx_class;
            let mut idx = Vec::with_capacity(count);
            while idx.len() < count {
                let mut p: Vec<usize> = (0..TOKENS_PER_CLASS).collect();
                p.shuffle(&mut rng);
                idx.extend(p);
            }
            idx.truncate(count);
            idx.into_iter()
                .map(|i| self.corpus.render_token(class, i))
                .collect::<Result<_>>()?
        } else {
            Self::sentence_slots(count, &mut rng)
                .into_iter()
                .map(|s| self.corpus.render_sentence(s))
                .collect::<Result<_>>()?
        };
        let presentations = if role.is_approximation() {
            self.config.presentations
        } else {
            1
        };
        let hop = (self.config.frontend.logms.hop_s * self.corpus.sample_rate() as f64).round() as usize;
        let utterances: Vec<Vec<Utterance>> = items
            .par_iter()
            .enumerate()
            .map(|(i, (speech, transcript))| {
                let mut rng = seed::rng(base, &[1, i as u64]);
                let mixed = self.render(speech, snr_db, &mut rng)?;
                (0..presentations)
                    .map(|p| {
                        // later presentations start at a sub-hop offset so the
                        // analysis frames differ
                        let shift = p * hop / presentations;
                        let w = if shift == 0 {
                            mixed.clone()
                        } else {
                            let ch = mixed.channels().iter().map(|c| c[shift..].to_vec()).collect();
                            Waveform::new(ch, mixed.sample_rate(), mixed.calibration_db())?
                        };
                        Ok(Utterance {
                            features: self.frontend.extract(&w, seed::derive(base, &[2, i as u64, p as u64]))?,
                            transcript: transcript.clone(),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(RecordedSet {
            role,
            snr_db,
            seed: seed_value,
            count,
            utterances: utterances.into_iter().flatten().collect(),
            seconds: count as f64 * self.item_seconds(role),
        })
    }

    /// Recorded set for (role, SNR, seed, count), rendered on first use.
    pub fn record(&self, role: Role, snr_db: f64, count: usize, seed_value: u64) -> Result<Arc<RecordedSet>> {
        let key = SetKey {
            role,
            snr: seed::snr_key(snr_db),
            seed: seed_value,
            count,
        };
        let s = slot(&self.cache.sets, &key);
        get_or_try(&s, || self.record_uncached(role, snr_db, count, seed_value))
    }

    /// Already recorded set, without rendering.
    pub fn cached(&self, role: Role, snr_db: f64, count: usize, seed_value: u64) -> Option<Arc<RecordedSet>> {
        let key = SetKey {
            role,
            snr: seed::snr_key(snr_db),
            seed: seed_value,
            count,
        };
        self.cache.sets.lock().ok()?.get(&key)?.get().cloned()
    }

    /// Drop a recorded set from memory; a later `record` renders it again.
    pub fn release(&self, role: Role, snr_db: f64, count: usize, seed_value: u64) {
        let key = SetKey {
            role,
            snr: seed::snr_key(snr_db),
            seed: seed_value,
            count,
        };
        if let Ok(mut sets) = self.cache.sets.lock() {
            sets.remove(&key);
        }
    }

    fn model_path(&self, key: &ModelKey) -> Option<PathBuf> {
        let snrs: Vec<String> = key.snrs.iter().map(|s| s.to_string()).collect();
        self.cache.dir.as_ref().map(|d| {
            d.join(format!(
                "{}_{}_{}_{}_{}.model",
                self.hash,
                key.role.as_str(),
                snrs.join("+"),
                key.seed,
                key.count
            ))
        })
    }

    fn model_for(&self, key: ModelKey, build: impl FnOnce() -> Result<AcousticModel>) -> Result<Arc<AcousticModel>> {
        let s = slot(&self.cache.models, &key);
        get_or_try(&s, || {
            let path = self.model_path(&key);
            if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                if let Ok(m) = AcousticModel::load(p) {
                    return Ok(m);
                }
            }
            let m = build()?;
            if let Some(p) = &path {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                m.save(p)?;
            }
            Ok(m)
        })
    }

    /// Model trained on the set recorded at `snr_db`.
    pub fn model(&self, role: Role, snr_db: f64, count: usize, seed_value: u64) -> Result<Arc<AcousticModel>> {
        let key = ModelKey {
            snrs: vec![seed::snr_key(snr_db)],
            role,
            seed: seed_value,
            count,
        };
        self.model_for(key, || {
            let set = self.record(role, snr_db, count, seed_value)?;
            let (data, grammar) = (&set.utterances, self.grammar(role));
            let mut m = if inaudible(data) {
                uninformed(data, &grammar, &self.config.topology)?
            } else {
                train(data, &grammar, &self.config.topology)?
            };
            m.train_snrs = vec![snr_db];
            Ok(m)
        })
    }

    /// Model trained on the union of two already recorded training sets.
    pub fn multicondition_model(
        &self,
        snr_a: f64,
        snr_b: f64,
        count: usize,
        seed_value: u64,
    ) -> Result<Arc<AcousticModel>> {
        let missing = |s: f64| Error::MissingRecording(format!("train set at {s} dB"));
        let a = self.cached(Role::Train, snr_a, count, seed_value).ok_or_else(|| missing(snr_a))?;
        let b = self.cached(Role::Train, snr_b, count, seed_value).ok_or_else(|| missing(snr_b))?;
        let key = ModelKey {
            snrs: vec![seed::snr_key(a.snr_db.min(b.snr_db)), seed::snr_key(a.snr_db.max(b.snr_db))],
            role: Role::Train,
            seed: seed_value,
            count,
        };
        self.model_for(key, || {
            if inaudible(&a.utterances) && inaudible(&b.utterances) {
                let data = [a.utterances.as_slice(), b.utterances.as_slice()].concat();
                let mut m = uninformed(&data, &Grammar::Sentence, &self.config.topology)?;
                m.train_snrs = vec![a.snr_db.min(b.snr_db), a.snr_db.max(b.snr_db)];
                return Ok(m);
            }
            train_multicondition(
                (&a.utterances, a.snr_db),
                (&b.utterances, b.snr_db),
                &Grammar::Sentence,
                &self.config.topology,
            )
        })
    }
}

/// True when every frame of every utterance is the same vector: the listener
/// heard nothing, and the recognizer can only guess.
fn inaudible(data: &[Utterance]) -> bool {
    let mut frames = data.iter().flat_map(|u| (0..u.features.frames()).map(move |t| u.features.frame(t)));
    match frames.next() {
        Some(first) => frames.all(|f| f == first),
        None => false,
    }
}

