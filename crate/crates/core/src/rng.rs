//! Counter-based random numbers.
//!
//! Every Gaussian draw in the crate is a pure function of
//! `(seed, stream, step, index, block)`, computed with Philox4x32-10.
//! No generator state is shared between particles or threads, so results
//! do not depend on how work is split across workers, and two runs that
//! share a seed see exactly the same noise.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// SplitMix64 finalizer, used to derive keys and child seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(label.wrapping_mul(0xA24B_AED4_963E_E407)))
}

/// Purpose tags. Different tags give unrelated streams under the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Initial,
    Noise,
    Bootstrap,
    Auxiliary(u32),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Initial => 0x494E_4954,
            Stream::Noise => 0x4E4F_4953,
            Stream::Bootstrap => 0x424F_4F54,
            Stream::Auxiliary(k) => 0x4155_5800_0000_0000 | u64::from(k),
        }
    }
}

/// A keyed family of Gaussian streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    key: [u32; 2],
}

#[inline]
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    (bits as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

impl CounterRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let k = derive_seed(seed, stream.tag());
        Self {
            seed,
            key: [k as u32, (k >> 32) as u32],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Four raw words for a given counter position.
    pub fn block(&self, step: u64, index: u32, block: u32) -> [u32; 4] {
        philox4x32([step as u32, (step >> 32) as u32, index, block], self.key)
    }

    /// Two uniforms in the open interval (0, 1).
    pub fn uniform_pair(&self, step: u64, index: u32, block: u32) -> [f64; 2] {
        let w = self.block(step, index, block);
        [open_unit(w[0], w[1]), open_unit(w[2], w[3])]
    }

    /// Fill `out` with standard normals for `(step, index)` via Box-Muller.
    pub fn fill_normals(&self, step: u64, index: u32, out: &mut [f64]) {
        let mut k = 0usize;
        let mut block = 0u32;
        while k < out.len() {
            let [u1, u2] = self.uniform_pair(step, index, block);
            let radius = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            out[k] = radius * c;
            if k + 1 < out.len() {
                out[k + 1] = radius * s;
            }
            k += 2;
            block += 1;
        }
    }

    pub fn normal(&self, step: u64, index: u32) -> f64 {
        let mut z = [0.0];
        self.fill_normals(step, index, &mut z);
        z[0]
    }

    pub fn uniform(&self, step: u64, index: u32) -> f64 {
        self.uniform_pair(step, index, 0)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors for Philox4x32-10.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn streams_are_distinct() {
        let a = CounterRng::new(7, Stream::Noise);
        let b = CounterRng::new(7, Stream::Initial);
        assert_ne!(a.block(0, 0, 0), b.block(0, 0, 0));
        assert_eq!(a.block(3, 4, 5), CounterRng::new(7, Stream::Noise).block(3, 4, 5));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(1234, Stream::Noise);
        let n = 200_000u32;
        let mut z = [0.0; 3];
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for i in 0..n {
            rng.fill_normals(0, i, &mut z);
            for &v in &z {
                s1 += v;
                s2 += v * v;
                s4 += v.powi(4);
            }
        }
        let m = 3.0 * f64::from(n);
        assert!((s1 / m).abs() < 0.01);
        assert!((s2 / m - 1.0).abs() < 0.01);
        assert!((s4 / m - 3.0).abs() < 0.05);
    }

    #[test]
    fn uniforms_stay_open() {
        let rng = CounterRng::new(0, Stream::Bootstrap);
        for i in 0..10_000 {
            let u = rng.uniform(i, 0);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
