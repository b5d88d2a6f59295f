use super::model::{AcousticModel, Gmm, Hmm};
use super::viterbi::{search, with_silence, CompiledModel};
use super::{Grammar, Topology, Utterance};
use crate::error::{Error, Result};
use crate::signal::WordId;
use rayon::prelude::*;

/// Log-likelihood of the best alignment at each iteration, with the number of
/// mixture components in force at that iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log_likelihood: Vec<f64>,
    pub mixtures: Vec<usize>,
    pub frames: usize,
}

impl TrainReport {
    /// True if the likelihood never drops by more than `tol` (relative)
    /// between iterations with the same mixture count.
    pub fn is_monotone(&self, tol: f64) -> bool {
        (1..self.log_likelihood.len()).all(|i| {
            self.mixtures[i] != self.mixtures[i - 1]
                || self.log_likelihood[i]
                    >= self.log_likelihood[i - 1] - tol * (1.0 + self.log_likelihood[i - 1].abs())
        })
    }
}

#[derive(Clone)]
struct Acc {
    n: Vec<f64>,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Acc {
    fn new(m: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; m],
            sum: vec![0.0; m * d],
            sq: vec![0.0; m * d],
        }
    }

    fn add(&mut self, c: usize, x: &[f64]) {
        let d = x.len();
        self.n[c] += 1.0;
        for (k, v) in x.iter().enumerate() {
            self.sum[c * d + k] += v;
            self.sq[c * d + k] += v * v;
        }
    }
}

/// Per-unit, per-state statistics.
struct Stats {
    acc: Vec<Vec<Acc>>,
    stay: Vec<Vec<f64>>,
    leave: Vec<Vec<f64>>,
}

impl Stats {
    fn new(units: &[Hmm], dim: usize) -> Self {
        Self {
            acc: units
                .iter()
                .map(|h| h.states.iter().map(|g| Acc::new(g.components(), dim)).collect())
                .collect(),
            stay: units.iter().map(|h| vec![0.0; h.len()]).collect(),
            leave: units.iter().map(|h| vec![0.0; h.len()]).collect(),
        }
    }
}

fn coverage(data: &[Utterance], grammar: &Grammar) -> Result<Vec<WordId>> {
    let words = grammar.words();
    let mut counts = vec![0usize; 256];
    for u in data {
        for w in u.transcript.words() {
            if !words.contains(w) {
                return Err(Error::UnknownWord(w.0));
            }
            counts[w.0 as usize] += 1;
        }
        grammar.check(&u.transcript)?;
    }
    for w in &words {
        if counts[w.0 as usize] < 2 {
            return Err(Error::MissingCoverage {
                word: w.0,
                count: counts[w.0 as usize],
                needed: 2,
            });
        }
    }
    Ok(words)
}

fn variance_floor(data: &[Utterance], dim: usize, rel: f64) -> Result<Vec<f64>> {
    let mut n = 0.0;
    let mut s = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    for u in data {
        for t in 0..u.features.frames() {
            n += 1.0;
            for (k, v) in u.features.frame(t).iter().enumerate() {
                s[k] += v;
                q[k] += v * v;
            }
        }
    }
    let var: Vec<f64> = (0..dim)
        .map(|k| (q[k] / n - (s[k] / n).powi(2)).max(0.0))
        .collect();
    let mean_var = var.iter().sum::<f64>() / dim as f64;
    if !(mean_var > 1e-300) {
        return Err(Error::DegenerateData("all training frames are identical".into()));
    }
    // constant dimensions get a small floor relative to the average variance
    Ok(var
        .iter()
        .map(|&v| rel * if v > 0.0 { v } else { 1e-3 * mean_var })
        .collect())
}

fn reestimate(units: &mut [Hmm], stats: &Stats, floor: &[f64], min_loop: f64) {
    let d = floor.len();
    for (u, h) in units.iter_mut().enumerate() {
        for (j, g) in h.states.iter_mut().enumerate() {
            let a = &stats.acc[u][j];
            let total: f64 = a.n.iter().sum();
            if total == 0.0 {
                continue;
            }
            let mut next = Gmm {
                weights: Vec::new(),
                means: Vec::new(),
                vars: Vec::new(),
            };
            for c in 0..g.components() {
                let nc = a.n[c];
                if nc == 0.0 {
                    continue;
                }
                next.weights.push(nc / total);
                for k in 0..d {
                    let m = a.sum[c * d + k] / nc;
                    next.means.push(m);
                    next.vars.push((a.sq[c * d + k] / nc - m * m).max(floor[k]));
                }
            }
            *g = next;
            let (s, l) = (stats.stay[u][j], stats.leave[u][j]);
            if s + l > 0.0 {
                h.self_loops[j] = (s / (s + l)).clamp(min_loop, 1.0 - min_loop);
            }
        }
    }
}

fn split(units: &mut [Hmm], perturb: f64) {
    for h in units {
        for g in &mut h.states {
            let d = g.dim();
            let mut out = Gmm {
                weights: Vec::new(),
                means: Vec::new(),
                vars: Vec::new(),
            };
            for c in 0..g.components() {
                for sign in [-1.0, 1.0] {
                    out.weights.push(g.weights[c] / 2.0);
                    for k in 0..d {
                        let v = g.vars[c * d + k];
                        out.means.push(g.means[c * d + k] + sign * perturb * v.sqrt());
                        out.vars.push(v);
                    }
                }
            }
            *g = out;
        }
    }
}

/// Unit sequence of an utterance: word indices, flanked by silence.
fn unit_sequence(u: &Utterance, words: &[WordId], silence: Option<usize>) -> Vec<usize> {
    let mut seq = Vec::new();
    seq.extend(silence);
    seq.extend(
        u.transcript
            .words()
            .iter()
            .map(|w| words.iter().position(|x| x == w).expect("checked")),
    );
    seq.extend(silence);
    seq
}

pub fn train(data: &[Utterance], grammar: &Grammar, topology: &Topology) -> Result<AcousticModel> {
    train_with_report(data, grammar, topology).map(|(m, _)| m)
}

pub fn train_with_report(
    data: &[Utterance],
    grammar: &Grammar,
    topology: &Topology,
) -> Result<(AcousticModel, TrainReport)> {
    topology.validate()?;
    let words = coverage(data, grammar)?;
    let dim = data[0].features.dim();
    if let Some(u) = data.iter().find(|u| u.features.dim() != dim) {
        return Err(Error::DimensionMismatch {
            model: dim,
            features: u.features.dim(),
        });
    }
    let floor = variance_floor(data, dim, topology.variance_floor)?;

    let empty = |n: usize| Hmm {
        states: (0..n)
            .map(|_| Gmm {
                weights: vec![1.0],
                means: vec![0.0; dim],
                vars: vec![1.0; dim],
            })
            .collect(),
        self_loops: vec![0.5; n],
    };
    let mut units: Vec<Hmm> = words.iter().map(|_| empty(topology.states_per_word)).collect();
    let silence = topology.silence.then(|| {
        units.push(empty(topology.silence_states));
        units.len() - 1
    });

    // flat start: uniform segmentation over the unit states
    let mut stats = Stats::new(&units, dim);
    for u in data {
        let seq = unit_sequence(u, &words, silence);
        let states: Vec<(usize, usize)> = seq
            .iter()
            .flat_map(|&unit| (0..units[unit].len()).map(move |j| (unit, j)))
            .collect();
        let t_len = u.features.frames();
        if t_len < states.len() {
            return Err(Error::SignalTooShort {
                samples: t_len,
                needed: states.len(),
            });
        }
        let idx = |t: usize| t * states.len() / t_len;
        for t in 0..t_len {
            let (unit, j) = states[idx(t)];
            stats.acc[unit][j].add(0, u.features.frame(t));
            if t + 1 < t_len && idx(t + 1) == idx(t) {
                stats.stay[unit][j] += 1.0;
            } else {
                stats.leave[unit][j] += 1.0;
            }
        }
    }
    reestimate(&mut units, &stats, &floor, topology.min_self_loop);

    let frames: usize = data.iter().map(|u| u.features.frames()).sum();
    let mut report = TrainReport {
        log_likelihood: Vec::new(),
        mixtures: Vec::new(),
        frames,
    };
    let mut mixtures = 1;
    loop {
        for _ in 0..topology.iterations_per_stage {
            let model = assemble(&units, &words, silence, dim);
            let compiled = CompiledModel::new(&model);
            let aligned: Vec<(f64, Vec<(usize, usize, usize, usize)>)> = data
                .par_iter()
                .map(|u| {
                    let seq = unit_sequence(u, &words, silence);
                    let slots: Vec<_> = if silence.is_some() {
                        let inner = seq[1..seq.len() - 1].iter().map(|&w| vec![w]).collect();
                        with_silence(inner, silence)
                    } else {
                        with_silence(seq.iter().map(|&w| vec![w]).collect(), None)
                    };
                    let path = search(&compiled, &slots, &u.features, f64::INFINITY)?;
                    let frames = path
                        .frames
                        .iter()
                        .enumerate()
                        .map(|(t, &(k, a, j))| {
                            let unit = slots[k].alts[a];
                            let c = compiled.units[unit].states[j].best(u.features.frame(t)).0;
                            (k, unit, j, c)
                        })
                        .collect();
                    Ok((path.score, frames))
                })
                .collect::<Result<_>>()?;
            let mut stats = Stats::new(&units, dim);
            let mut ll = 0.0;
            for (u, (score, frames)) in data.iter().zip(&aligned) {
                ll += score;
                for (t, &(k, unit, j, c)) in frames.iter().enumerate() {
                    stats.acc[unit][j].add(c, u.features.frame(t));
                    if frames.get(t + 1).is_some_and(|n| n.0 == k && n.2 == j) {
                        stats.stay[unit][j] += 1.0;
                    } else {
                        stats.leave[unit][j] += 1.0;
                    }
                }
            }
            report.log_likelihood.push(ll);
            report.mixtures.push(mixtures);
            reestimate(&mut units, &stats, &floor, topology.min_self_loop);
        }
        if mixtures * 2 > topology.mixtures {
            break;
        }
        split(&mut units, topology.split_perturbation);
        mixtures *= 2;
    }
    Ok((assemble(&units, &words, silence, dim), report))
}

/// Model for a training set that carries no information (every frame the
/// same, e.g. speech entirely below the hearing threshold). All units share
/// one unit-variance Gaussian at that frame, so decoding can only guess.
pub fn uninformed(data: &[Utterance], grammar: &Grammar, topology: &Topology) -> Result<AcousticModel> {
    topology.validate()?;
    let words = coverage(data, grammar)?;
    let frame = data
        .iter()
        .find(|u| u.features.frames() > 0)
        .map(|u| u.features.frame(0).to_vec())
        .ok_or_else(|| Error::DegenerateData("no training frames".into()))?;
    let dim = frame.len();
    let unit = |n: usize| Hmm {
        states: (0..n)
            .map(|_| Gmm {
                weights: vec![1.0],
                means: frame.clone(),
                vars: vec![1.0; dim],
            })
            .collect(),
        self_loops: vec![0.5; n],
    };
    let mut units: Vec<Hmm> = words.iter().map(|_| unit(topology.states_per_word)).collect();
    let silence = topology.silence.then(|| {
        units.push(unit(topology.silence_states));
        units.len() - 1
    });
    Ok(assemble(&units, &words, silence, dim))
}

fn assemble(units: &[Hmm], words: &[WordId], silence: Option<usize>, dim: usize) -> AcousticModel {
    AcousticModel {
        dim,
        words: words.iter().copied().zip(units.iter().cloned()).collect(),
        silence: silence.map(|s| units[s].clone()),
        train_snrs: Vec::new(),
    }
}
