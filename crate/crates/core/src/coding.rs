//! Rate-2/3 punctured convolutional code (K = 7, generators 171/133 octal)
//! with a hard-decision Viterbi decoder.

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvCode {
    pub constraint_length: u32,
    /// Generator taps, newest bit in the most significant position.
    pub generators: [u32; 2],
    /// Puncturing pattern per generator over one period (1 = keep).
    pub puncture: [Vec<u8>; 2],
    /// Decisions are released this many steps behind the trellis front.
    pub traceback_depth: usize,
}

impl Default for ConvCode {
    fn default() -> Self {
        Self {
            constraint_length: 7,
            generators: [0o171, 0o133],
            puncture: [vec![1, 1], vec![1, 0]],
            traceback_depth: 35,
        }
    }
}

const ERASED: u8 = 2;

impl ConvCode {
    fn memory(&self) -> u32 {
        self.constraint_length - 1
    }

    fn states(&self) -> usize {
        1 << self.memory()
    }

    fn period(&self) -> usize {
        self.puncture[0].len()
    }

    /// Coded bits per period over information bits per period.
    pub fn rate(&self) -> (usize, usize) {
        let kept: usize = self.puncture.iter().flatten().map(|&b| usize::from(b)).sum();
        (self.period(), kept)
    }

    fn outputs(&self, state: usize, bit: u8) -> [u8; 2] {
        let reg = (u32::from(bit) << self.memory()) | state as u32;
        [
            ((reg & self.generators[0]).count_ones() & 1) as u8,
            ((reg & self.generators[1]).count_ones() & 1) as u8,
        ]
    }

    fn next_state(&self, state: usize, bit: u8) -> usize {
        ((usize::from(bit) << self.memory()) | state) >> 1
    }

    /// Length of the punctured codeword for `n_info` information bits
    /// (the encoder appends `K - 1` zero tail bits).
    pub fn coded_len(&self, n_info: usize) -> usize {
        let steps = n_info + self.memory() as usize;
        (0..steps)
            .map(|t| {
                let p = t % self.period();
                usize::from(self.puncture[0][p]) + usize::from(self.puncture[1][p])
            })
            .sum()
    }

    /// Terminated, punctured encoding.
    pub fn encode(&self, bits: &[u8]) -> Result<Vec<u8>> {
        if bits.iter().any(|&b| b > 1) {
            return invalid("bits must be 0 or 1");
        }
        let tail = vec![0u8; self.memory() as usize];
        let mut state = 0;
        let mut out = Vec::with_capacity(self.coded_len(bits.len()));
        for (t, &b) in bits.iter().chain(&tail).enumerate() {
            let o = self.outputs(state, b);
            let p = t % self.period();
            for g in 0..2 {
                if self.puncture[g][p] == 1 {
                    out.push(o[g]);
                }
            }
            state = self.next_state(state, b);
        }
        Ok(out)
    }

    /// Re-inserts erasures at punctured positions.
    fn depuncture(&self, coded: &[u8], steps: usize) -> Vec<[u8; 2]> {
        let mut it = coded.iter();
        (0..steps)
            .map(|t| {
                let p = t % self.period();
                let mut pair = [ERASED; 2];
                for g in 0..2 {
                    if self.puncture[g][p] == 1 {
                        pair[g] = *it.next().unwrap();
                    }
                }
                pair
            })
            .collect()
    }

    /// Hard-decision Viterbi decoding of a terminated codeword carrying
    /// `n_info` information bits.
    pub fn decode(&self, coded: &[u8], n_info: usize) -> Result<Vec<u8>> {
        if coded.len() != self.coded_len(n_info) {
            return invalid(format!(
                "codeword has {} bits, expected {} for {n_info} information bits",
                coded.len(),
                self.coded_len(n_info)
            ));
        }
        if coded.iter().any(|&b| b > 1) {
            return invalid("coded bits must be 0 or 1");
        }
        let ns = self.states();
        let steps = n_info + self.memory() as usize;
        let rx = self.depuncture(coded, steps);
        let branch: Vec<[[u8; 2]; 2]> = (0..ns).map(|s| [self.outputs(s, 0), self.outputs(s, 1)]).collect();

        const INF: u32 = u32::MAX / 2;
        let mut metric = vec![INF; ns];
        metric[0] = 0;
        let mut next = vec![INF; ns];
        // decisions[t] bit `s` = which predecessor survived into state s at t+1
        let mut decisions: Vec<u64> = Vec::with_capacity(steps);
        let mut out = vec![0u8; n_info];
        let depth = self.traceback_depth.max(1);
        let half = ns / 2;

        for (t, r) in rx.iter().enumerate() {
            let mut dec = 0u64;
            for s in 0..ns {
                let bit = (s >> (self.memory() - 1)) as u8;
                let base = (s & (half - 1)) << 1;
                let mut best = INF;
                let mut pick = 0;
                for x in 0..2 {
                    let p = base | x;
                    if metric[p] >= INF {
                        continue;
                    }
                    let o = branch[p][bit as usize];
                    let d = (0..2).filter(|&g| r[g] != ERASED && r[g] != o[g]).count() as u32;
                    let m = metric[p] + d;
                    if m < best {
                        best = m;
                        pick = x;
                    }
                }
                next[s] = best;
                dec |= (pick as u64) << s;
            }
            std::mem::swap(&mut metric, &mut next);
            decisions.push(dec);
            // Windowed release of the decision `depth` steps back.
            if t + 1 > depth {
                let release = t + 1 - depth - 1;
                if release < n_info {
                    let mut s = (0..ns).min_by_key(|&s| (metric[s], s)).unwrap();
                    for u in (release + 1..=t).rev() {
                        s = ((s & (half - 1)) << 1) | ((decisions[u] >> s) & 1) as usize;
                    }
                    out[release] = (s >> (self.memory() - 1)) as u8;
                }
            }
        }
        // Final traceback from the terminating zero state.
        let mut s = 0usize;
        let first_unreleased = steps.saturating_sub(depth);
        for u in (0..steps).rev() {
            if u < n_info && u >= first_unreleased {
                out[u] = (s >> (self.memory() - 1)) as u8;
            }
            if u < first_unreleased {
                break;
            }
            s = ((s & (half - 1)) << 1) | ((decisions[u] >> s) & 1) as usize;
        }
        Ok(out)
    }
}

pub fn conv_encode(bits: &[u8]) -> Result<Vec<u8>> {
    ConvCode::default().encode(bits)
}

pub fn viterbi_decode(coded: &[u8], n_info: usize) -> Result<Vec<u8>> {
    ConvCode::default().decode(coded, n_info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = RandomSource::new(seed);
        (0..n).map(|_| rng.bit()).collect()
    }

    fn hamming(a: &[u8], b: &[u8]) -> usize {
        a.iter().zip(b).filter(|(x, y)| x != y).count()
    }

    #[test]
    fn rate_is_two_thirds() {
        let c = ConvCode::default();
        assert_eq!(c.rate(), (2, 3));
        assert_eq!(c.coded_len(1000), 1509);
        assert_eq!(conv_encode(&random_bits(1000, 1)).unwrap().len(), 1509);
    }

    #[test]
    fn impulse_response_matches_generators() {
        // Unpunctured rate-1/2 encoding of a single one gives the generator taps.
        let c = ConvCode {
            puncture: [vec![1], vec![1]],
            ..ConvCode::default()
        };
        let out = c.encode(&[1]).unwrap();
        let g0: Vec<u8> = out.iter().step_by(2).copied().collect();
        let g1: Vec<u8> = out.iter().skip(1).step_by(2).copied().collect();
        assert_eq!(g0, vec![1, 1, 1, 1, 0, 0, 1]);
        assert_eq!(g1, vec![1, 0, 1, 1, 0, 1, 1]);
    }

    #[test]
    fn noiseless_round_trip() {
        for (n, seed) in [(1, 1), (7, 2), (100, 3), (5000, 4)] {
            let bits = random_bits(n, seed);
            let coded = conv_encode(&bits).unwrap();
            assert_eq!(viterbi_decode(&coded, n).unwrap(), bits);
        }
    }

    #[test]
    fn corrects_isolated_errors() {
        let bits = random_bits(3000, 5);
        let coded = conv_encode(&bits).unwrap();
        for pos in [0, 1, 2, 700, 2222, coded.len() - 1] {
            let mut r = coded.clone();
            r[pos] ^= 1;
            assert_eq!(viterbi_decode(&r, bits.len()).unwrap(), bits, "flip at {pos}");
        }
        let mut r = coded.clone();
        for pos in (50..coded.len()).step_by(150) {
            r[pos] ^= 1;
        }
        assert_eq!(viterbi_decode(&r, bits.len()).unwrap(), bits);
    }

    #[test]
    fn matches_exhaustive_ml() {
        let c = ConvCode::default();
        let mut rng = RandomSource::new(6);
        for k in 1..=12usize {
            let book: Vec<(Vec<u8>, Vec<u8>)> = (0..1usize << k)
                .map(|m| {
                    let msg: Vec<u8> = (0..k).map(|i| (m >> i & 1) as u8).collect();
                    let cw = c.encode(&msg).unwrap();
                    (msg, cw)
                })
                .collect();
            for _ in 0..20 {
                let (_, cw) = &book[rng.below(book.len())];
                let mut r = cw.clone();
                let flips = 1 + rng.below(r.len() / 3 + 1);
                for _ in 0..flips {
                    let p = rng.below(r.len());
                    r[p] ^= 1;
                }
                let dec = c.decode(&r, k).unwrap();
                let dec_metric = hamming(&c.encode(&dec).unwrap(), &r);
                let best = book.iter().map(|(_, cw)| hamming(cw, &r)).min().unwrap();
                assert_eq!(dec_metric, best, "k={k}");
                let winners: Vec<&Vec<u8>> = book
                    .iter()
                    .filter(|(_, cw)| hamming(cw, &r) == best)
                    .map(|(m, _)| m)
                    .collect();
                if winners.len() == 1 {
                    assert_eq!(&dec, winners[0]);
                }
            }
        }
    }

    #[test]
    fn windowed_traceback_tracks_full_traceback() {
        let bits = random_bits(4000, 7);
        let coded = conv_encode(&bits).unwrap();
        let mut rng = RandomSource::new(8);
        let r: Vec<u8> = coded
            .iter()
            .map(|&b| if rng.below(100) < 2 { b ^ 1 } else { b })
            .collect();
        let windowed = viterbi_decode(&r, bits.len()).unwrap();
        let full = ConvCode {
            traceback_depth: usize::MAX / 2,
            ..ConvCode::default()
        }
        .decode(&r, bits.len())
        .unwrap();
        // A 35-step window occasionally commits before the survivors merge.
        assert!(hamming(&windowed, &full) <= 10);
        assert!(hamming(&full, &bits) < 20);
        assert!(hamming(&windowed, &bits) < 25);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(viterbi_decode(&[0, 1, 0], 5).is_err());
        assert!(conv_encode(&[0, 2]).is_err());
    }
}
