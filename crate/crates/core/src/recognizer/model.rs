use super::{Grammar, Topology};
use crate::error::{Error, Result};
use crate::signal::WordId;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

/// Diagonal-covariance Gaussian mixture. Means and variances are stored
/// component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl Gmm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.len() / self.weights.len().max(1)
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        let d = self.dim();
        &self.means[c * d..(c + 1) * d]
    }

    pub fn var(&self, c: usize) -> &[f64] {
        let d = self.dim();
        &self.vars[c * d..(c + 1) * d]
    }
}

/// Left-to-right HMM; state `i` loops with `self_loops[i]` and moves on
/// (or exits, for the last state) with the complement.
#[derive(Clone, Debug, PartialEq)]
pub struct Hmm {
    pub states: Vec<Gmm>,
    pub self_loops: Vec<f64>,
}

impl Hmm {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModel {
    pub dim: usize,
    pub words: Vec<(WordId, Hmm)>,
    pub silence: Option<Hmm>,
    /// Training SNR label(s).
    pub train_snrs: Vec<f64>,
}

/// Emission scorer for one GMM with precomputed constants.
pub(crate) struct CompiledGmm {
    log_norm: Vec<f64>,
    means: Vec<f64>,
    inv_vars: Vec<f64>,
    dim: usize,
}

impl CompiledGmm {
    pub fn new(g: &Gmm) -> Self {
        let dim = g.dim();
        let log_norm = (0..g.components())
            .map(|c| {
                let logdet: f64 = g.var(c).iter().map(|v| v.ln()).sum();
                g.weights[c].ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + logdet)
            })
            .collect();
        Self {
            log_norm,
            means: g.means.clone(),
            inv_vars: g.vars.iter().map(|v| 1.0 / v).collect(),
            dim,
        }
    }

    /// Best component and its weighted log density.
    #[inline]
    pub fn best(&self, x: &[f64]) -> (usize, f64) {
        let d = self.dim;
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &ln) in self.log_norm.iter().enumerate() {
            let m = &self.means[c * d..(c + 1) * d];
            let iv = &self.inv_vars[c * d..(c + 1) * d];
            let ll = ln - 0.5 * mahalanobis(x, m, iv);
            if ll > best.1 {
                best = (c, ll);
            }
        }
        best
    }
}

/// Σ (x - m)² · iv, dispatched to an AVX2 build when the CPU has it.
#[inline]
fn mahalanobis(x: &[f64], m: &[f64], iv: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime
            return unsafe { mahalanobis_avx2(x, m, iv) };
        }
    }
    mahalanobis_generic(x, m, iv)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn mahalanobis_avx2(x: &[f64], m: &[f64], iv: &[f64]) -> f64 {
    mahalanobis_generic(x, m, iv)
}

/// Independent accumulators so the sum vectorizes and pipelines.
#[inline(always)]
fn mahalanobis_generic(x: &[f64], m: &[f64], iv: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (xc, mc, vc) = (x.chunks_exact(8), m.chunks_exact(8), iv.chunks_exact(8));
    let (xr, mr, vr) = (xc.remainder(), mc.remainder(), vc.remainder());
    for ((xa, ma), va) in xc.zip(mc).zip(vc) {
        for k in 0..8 {
            let e = xa[k] - ma[k];
            acc[k] += e * e * va[k];
        }
    }
    let mut q: f64 = acc.iter().sum();
    for ((xi, mi), vi) in xr.iter().zip(mr).zip(vr) {
        let e = xi - mi;
        q += e * e * vi;
    }
    q
}

impl AcousticModel {
    pub fn word(&self, id: WordId) -> Result<&Hmm> {
        self.words
            .iter()
            .find(|(w, _)| *w == id)
            .map(|(_, h)| h)
            .ok_or(Error::UnknownWord(id.0))
    }

    pub(crate) fn word_index(&self, id: WordId) -> Result<usize> {
        self.words
            .iter()
            .position(|(w, _)| *w == id)
            .ok_or(Error::UnknownWord(id.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ModelFormat(m.to_string()));
        if self.dim == 0 || self.words.is_empty() {
            return bad("model has no words or zero dimension");
        }
        for h in self.words.iter().map(|(_, h)| h).chain(self.silence.iter()) {
            if h.is_empty() || h.self_loops.len() != h.len() {
                return bad("HMM without states");
            }
            if h.self_loops.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                return bad("transition weight outside (0, 1)");
            }
            for g in &h.states {
                if g.components() == 0
                    || g.means.len() != g.components() * self.dim
                    || g.vars.len() != g.means.len()
                {
                    return bad("GMM shape does not match the model dimension");
                }
                let wsum: f64 = g.weights.iter().sum();
                if (wsum - 1.0).abs() > 1e-9 || g.weights.iter().any(|w| !(*w > 0.0)) {
                    return bad("mixture weights are not normalized");
                }
                if g.vars.iter().any(|v| !(*v > 0.0 && v.is_finite()))
                    || g.means.iter().any(|m| !m.is_finite())
                {
                    return bad("non-finite or non-positive GMM parameter");
                }
            }
        }
        Ok(())
    }

    /// An untrained model with random unit-variance Gaussians; decodes at chance.
    pub fn random(dim: usize, grammar: &Grammar, topology: &Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut rng = crate::seed::rng(seed, &[0x726e_646d]);
        let mut hmm = |n: usize| Hmm {
            states: (0..n)
                .map(|_| Gmm {
                    weights: vec![1.0],
                    means: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
                    vars: vec![1.0; dim],
                })
                .collect(),
            self_loops: vec![0.5; n],
        };
        let words = grammar
            .words()
            .into_iter()
            .map(|w| (w, hmm(topology.states_per_word)))
            .collect();
        let silence = topology.silence.then(|| hmm(topology.silence_states));
        Ok(Self {
            dim,
            words,
            silence,
            train_snrs: Vec::new(),
        })
    }

    pub fn total_states(&self) -> usize {
        self.words.iter().map(|(_, h)| h.len()).sum::<usize>()
            + self.silence.as_ref().map_or(0, |h| h.len())
    }
}

const MAGIC: &[u8; 8] = b"SRTLAM\0\0";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_hmm(w: &mut impl Write, h: &Hmm) -> Result<()> {
    put_u32(w, h.len() as u32)?;
    for (g, a) in h.states.iter().zip(&h.self_loops) {
        put_f64s(w, &[*a])?;
        put_u32(w, g.components() as u32)?;
        put_f64s(w, &g.weights)?;
        put_f64s(w, &g.means)?;
        put_f64s(w, &g.vars)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::ModelFormat(format!("truncated model file: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn count(&mut self, limit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > limit {
            return Err(Error::ModelFormat(format!("implausible count {n}")));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn hmm(&mut self, dim: usize) -> Result<Hmm> {
        let n = self.count(64)?;
        let mut states = Vec::with_capacity(n);
        let mut self_loops = Vec::with_capacity(n);
        for _ in 0..n {
            self_loops.push(self.f64s(1)?[0]);
            let m = self.count(256)?;
            states.push(Gmm {
                weights: self.f64s(m)?,
                means: self.f64s(m * dim)?,
                vars: self.f64s(m * dim)?,
            });
        }
        Ok(Hmm { states, self_loops })
    }
}

impl AcousticModel {
    /// Little-endian binary: magic, version, dim, SNR labels, word table,
    /// optional silence model, then per-HMM parameters.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.dim as u32)?;
        put_u32(&mut w, self.train_snrs.len() as u32)?;
        put_f64s(&mut w, &self.train_snrs)?;
        put_u32(&mut w, self.words.len() as u32)?;
        for (id, _) in &self.words {
            w.write_all(&[id.0])?;
        }
        w.write_all(&[self.silence.is_some() as u8])?;
        for (_, h) in &self.words {
            write_hmm(&mut w, h)?;
        }
        if let Some(h) = &self.silence {
            write_hmm(&mut w, h)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader { inner: r };
        if &r.bytes::<8>()? != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let dim = r.count(1 << 16)?;
        let n_snr = r.count(64)?;
        let train_snrs = r.f64s(n_snr)?;
        let n_words = r.count(256)?;
        let ids: Vec<WordId> = (0..n_words)
            .map(|_| Ok(WordId(r.bytes::<1>()?[0])))
            .collect::<Result<_>>()?;
        let has_sil = r.bytes::<1>()?[0] != 0;
        let words = ids
            .into_iter()
            .map(|id| Ok((id, r.hmm(dim)?)))
            .collect::<Result<_>>()?;
        let silence = if has_sil { Some(r.hmm(dim)?) } else { None };
        let mut rest = Vec::new();
        r.inner.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        let m = Self {
            dim,
            words,
            silence,
            train_snrs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
