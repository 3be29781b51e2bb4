//! Counter-based uniform deviates.
//!
//! Every deviate used by a simulation is a pure function of
//! `(seed, run, day, agent)`, computed with the Philox4x32-10 block
//! function. Nothing is carried between draws, so any partition of the work
//! across threads reproduces the same numbers bit for bit.
//!
//! Layout: the 64-bit seed is the Philox key. The counter is
//! `[agent / 2, day, run, 0]` and the 128-bit output block is split into two
//! 64-bit lanes, lane `agent % 2` feeding agent `agent`.

const MUL_0: u32 = 0xD251_1F53;
const MUL_1: u32 = 0xCD9E_8D57;
const WEYL_0: u32 = 0x9E37_79B9;
const WEYL_1: u32 = 0xBB67_AE85;
const ROUNDS: usize = 10;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline(always)]
fn round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(MUL_0, ctr[0]);
    let (hi1, lo1) = mulhilo(MUL_1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox4x32 block function with 10 rounds.
#[inline]
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for i in 0..ROUNDS {
        if i > 0 {
            key[0] = key[0].wrapping_add(WEYL_0);
            key[1] = key[1].wrapping_add(WEYL_1);
        }
        ctr = round(ctr, key);
    }
    ctr
}

#[inline(always)]
fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Keyed source of uniform deviates on `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: [u32; 2],
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
        }
    }

    #[inline]
    fn block(&self, run: u32, day: u32, pair: u32) -> [u32; 4] {
        philox4x32([pair, day, run, 0], self.key)
    }

    /// Deviate for one `(run, day, agent)` triple.
    pub fn uniform(&self, run: u32, day: u32, agent: usize) -> f64 {
        let out = self.block(run, day, (agent / 2) as u32);
        let lane = if agent.is_multiple_of(2) {
            u64::from(out[0]) << 32 | u64::from(out[1])
        } else {
            u64::from(out[2]) << 32 | u64::from(out[3])
        };
        to_unit(lane)
    }

    /// Fills `out[j]` with the deviate of agent `first_agent + j` on `day`.
    ///
    /// Equivalent to calling [`CounterRng::uniform`] per agent.
    pub fn fill_day(&self, run: u32, day: u32, first_agent: usize, out: &mut [f64]) {
        let mut j = 0;
        if first_agent % 2 == 1 && !out.is_empty() {
            out[0] = self.uniform(run, day, first_agent);
            j = 1;
        }
        while j + 1 < out.len() {
            let block = self.block(run, day, ((first_agent + j) / 2) as u32);
            out[j] = to_unit(u64::from(block[0]) << 32 | u64::from(block[1]));
            out[j + 1] = to_unit(u64::from(block[2]) << 32 | u64::from(block[3]));
            j += 2;
        }
        if j < out.len() {
            out[j] = self.uniform(run, day, first_agent + j);
        }
    }
}
