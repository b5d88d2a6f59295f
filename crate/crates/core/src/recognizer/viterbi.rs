//! Frame-synchronous Viterbi search over a linear network of slots. Each slot
//! holds alternative HMMs; optional slots may be skipped.

use super::model::{AcousticModel, CompiledGmm, Hmm};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

pub(crate) struct CompiledHmm {
    pub states: Vec<CompiledGmm>,
    pub log_stay: Vec<f64>,
    pub log_move: Vec<f64>,
}

impl CompiledHmm {
    pub fn new(h: &Hmm) -> Self {
        Self {
            states: h.states.iter().map(CompiledGmm::new).collect(),
            log_stay: h.self_loops.iter().map(|a| a.ln()).collect(),
            log_move: h.self_loops.iter().map(|a| (1.0 - a).ln()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }
}

/// Words in model order, then the silence model if present.
pub(crate) struct CompiledModel {
    pub units: Vec<CompiledHmm>,
    pub silence: Option<usize>,
    pub dim: usize,
}

impl CompiledModel {
    pub fn new(model: &AcousticModel) -> Self {
        let mut units: Vec<CompiledHmm> = model.words.iter().map(|(_, h)| CompiledHmm::new(h)).collect();
        let silence = model.silence.as_ref().map(|h| {
            units.push(CompiledHmm::new(h));
            units.len() - 1
        });
        Self {
            units,
            silence,
            dim: model.dim,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Slot {
    pub alts: Vec<usize>,
    pub optional: bool,
}

/// Wrap word slots with optional silence before, between and after.
pub(crate) fn with_silence(words: Vec<Vec<usize>>, silence: Option<usize>) -> Vec<Slot> {
    let mut slots = Vec::new();
    let sil = |slots: &mut Vec<Slot>| {
        if let Some(s) = silence {
            slots.push(Slot {
                alts: vec![s],
                optional: true,
            });
        }
    };
    sil(&mut slots);
    for alts in words {
        slots.push(Slot {
            alts,
            optional: false,
        });
        sil(&mut slots);
    }
    slots
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Entry {
    Start,
    Exit { slot: u32, alt: u32 },
}

/// Best path: per frame the (slot, alternative, state) it occupies.
pub(crate) struct Path {
    pub frames: Vec<(usize, usize, usize)>,
    pub score: f64,
}

impl Path {
    /// Chosen alternative per visited slot, in order.
    pub fn visited(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &(s, a, _) in &self.frames {
            if out.last().is_none_or(|l| l.0 != s) {
                out.push((s, a));
            }
        }
        out
    }
}

const STAY: u8 = 0;
const MOVE: u8 = 1;
const ENTER: u8 = 2;

/// `beam` prunes states whose best predecessor score falls more than
/// `beam` below the frame's best; infinity gives the exact search.
pub(crate) fn search(
    model: &CompiledModel,
    slots: &[Slot],
    feats: &FeatureMatrix,
    beam: f64,
) -> Result<Path> {
    if feats.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            model: model.dim,
            features: feats.dim(),
        });
    }
    let t_len = feats.frames();
    let min_frames: usize = slots
        .iter()
        .filter(|s| !s.optional)
        .map(|s| s.alts.iter().map(|&u| model.units[u].len()).min().unwrap_or(0))
        .sum();
    if t_len < min_frames.max(1) {
        return Err(Error::SignalTooShort {
            samples: t_len,
            needed: min_frames.max(1),
        });
    }

    // instance layout
    let mut inst: Vec<(usize, usize, usize)> = Vec::new(); // (slot, alt, offset)
    let mut slot_inst: Vec<Vec<usize>> = Vec::with_capacity(slots.len());
    let mut n = 0;
    for (k, s) in slots.iter().enumerate() {
        let mut v = Vec::new();
        for (a, &u) in s.alts.iter().enumerate() {
            v.push(inst.len());
            inst.push((k, a, n));
            n += model.units[u].len();
        }
        slot_inst.push(v);
    }
    let mut state_slot = vec![0u32; n];
    for &(k, a, off) in &inst {
        for j in 0..model.units[slots[k].alts[a]].len() {
            state_slot[off + j] = k as u32;
        }
    }

    // per-frame emission memo over all unit states; NaN = not computed
    let mut unit_off = Vec::with_capacity(model.units.len());
    let mut total = 0;
    for h in &model.units {
        unit_off.push(total);
        total += h.len();
    }
    let mut memo = vec![f64::NAN; total];

    let k_len = slots.len();
    let entries = |prev: Option<&[f64]>| -> Vec<(f64, Entry)> {
        let mut out = Vec::with_capacity(k_len + 1);
        out.push(match prev {
            None => (0.0, Entry::Start),
            Some(_) => (f64::NEG_INFINITY, Entry::Start),
        });
        for k in 0..k_len {
            let mut best = if slots[k].optional {
                out[k]
            } else {
                (f64::NEG_INFINITY, Entry::Start)
            };
            if let Some(p) = prev {
                for &i in &slot_inst[k] {
                    let (_, a, off) = inst[i];
                    let h = &model.units[slots[k].alts[a]];
                    let last = h.len() - 1;
                    let v = p[off + last] + h.log_move[last];
                    if v > best.0 {
                        best = (
                            v,
                            Entry::Exit {
                                slot: k as u32,
                                alt: a as u32,
                            },
                        );
                    }
                }
            }
            out.push(best);
        }
        out
    };

    let mut bps = vec![0u8; t_len * n];
    let mut entry_hist: Vec<Vec<(f64, Entry)>> = Vec::with_capacity(t_len + 1);
    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    for t in 0..t_len {
        let ent = entries(if t == 0 { None } else { Some(&prev) });
        let threshold = if beam.is_finite() && t > 0 {
            prev.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - beam
        } else {
            f64::NEG_INFINITY
        };
        memo.iter_mut().for_each(|m| *m = f64::NAN);
        let x = feats.frame(t);
        for &(k, a, off) in &inst {
            let u = slots[k].alts[a];
            let h = &model.units[u];
            for j in 0..h.len() {
                let mut best = (prev[off + j] + h.log_stay[j], STAY);
                let cand = if j == 0 {
                    (ent[k].0, ENTER)
                } else {
                    (prev[off + j - 1] + h.log_move[j - 1], MOVE)
                };
                if cand.0 > best.0 {
                    best = cand;
                }
                bps[t * n + off + j] = best.1;
                if !(best.0 > threshold) {
                    cur[off + j] = f64::NEG_INFINITY;
                    continue;
                }
                let slot = &mut memo[unit_off[u] + j];
                if slot.is_nan() {
                    *slot = h.states[j].best(x).1;
                }
                cur[off + j] = best.0 + *slot;
            }
        }
        entry_hist.push(ent);
        std::mem::swap(&mut prev, &mut cur);
    }
    let fin = entries(Some(&prev))[k_len];
    if !fin.0.is_finite() {
        return Err(Error::DegenerateData("no path through the network".into()));
    }

    let locate = |e: Entry| -> (usize, usize) {
        match e {
            Entry::Exit { slot, alt } => {
                let i = slot_inst[slot as usize][alt as usize];
                let (k, a, off) = inst[i];
                (off + model.units[slots[k].alts[a]].len() - 1, i)
            }
            Entry::Start => unreachable!("start entry with frames left"),
        }
    };
    let mut frames = vec![(0, 0, 0); t_len];
    let (mut j, mut i) = locate(fin.1);
    let mut t = t_len;
    while t > 0 {
        t -= 1;
        let (k, a, off) = inst[i];
        frames[t] = (k, a, j - off);
        match bps[t * n + j] {
            STAY => {}
            MOVE => j -= 1,
            _ => {
                let e = entry_hist[t][state_slot[j] as usize].1;
                if t == 0 {
                    debug_assert_eq!(e, Entry::Start);
                    break;
                }
                (j, i) = locate(e);
            }
        }
    }
    Ok(Path {
        frames,
        score: fin.0,
    })
}
