//! Synthetic videos with controllable temporal structure, snippet
//! sampling/shuffling, frame-set partition, and the permutation codec.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TcglError};
use crate::numcore::Tensor;

/// Motion class id of the temporally uninformative control dynamic
/// (stationary blob, constant amplitude, no noise).
pub const STATIC_CLASS: usize = 8;

/// Number of moving motion classes (4 directions x 2 speeds).
pub const NUM_MOTION_CLASSES: usize = 8;

/// Dense video: channels x frames x height x width, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<f64>,
    pub class_label: u32,
}

impl VideoTensor {
    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        VideoTensor {
            channels,
            frames,
            height,
            width,
            samples: vec![0.0; channels * frames * height * width],
            class_label: 0,
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + t) * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> f64 {
        self.samples[self.idx(c, t, y, x)]
    }

    /// Contiguous frame slice [start, start+len) as a new video.
    pub fn slice_frames(&self, start: usize, len: usize) -> VideoTensor {
        assert!(start + len <= self.frames);
        let fsz = self.height * self.width;
        let mut out = VideoTensor::zeros(self.channels, len, self.height, self.width);
        out.class_label = self.class_label;
        for c in 0..self.channels {
            let src = (c * self.frames + start) * fsz;
            let dst = c * len * fsz;
            out.samples[dst..dst + len * fsz]
                .copy_from_slice(&self.samples[src..src + len * fsz]);
        }
        out
    }

    /// Rank-4 tensor view [C, L, H, W] for the numeric core.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.frames, self.height, self.width],
            self.samples.clone(),
        )
    }
}

/// Snippet sampling configuration: n snippets of l frames, p gap frames
/// between consecutive snippets, m frame-sets per snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub n: usize,
    pub l: usize,
    pub p: usize,
    pub m: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > 5 {
            return Err(TcglError::InvalidConfig(format!(
                "snippet count n must be in 2..=5, got {}",
                self.n
            )));
        }
        if self.m == 0 || self.l % self.m != 0 {
            return Err(TcglError::InvalidConfig(format!(
                "snippet length {} not divisible into {} frame-sets",
                self.l, self.m
            )));
        }
        Ok(())
    }

    /// Minimum video length: n snippets plus n-1 gaps.
    pub fn min_frames(&self) -> usize {
        self.n * self.l + (self.n - 1) * self.p
    }
}

/// Bijective mapping on [0, n): position i holds the original temporal
/// rank of the snippet now at slot i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(TcglError::InvalidPermutation(format!("{map:?}")));
            }
            seen[v] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn slots(&self) -> &[usize] {
        &self.map
    }

    /// Original temporal rank of the snippet at shuffled slot `i`.
    pub fn rank_at_slot(&self, i: usize) -> usize {
        self.map[i]
    }

    /// Shuffled slot currently holding the snippet of temporal rank `r`.
    pub fn slot_of_rank(&self, r: usize) -> usize {
        self.map.iter().position(|&v| v == r).unwrap()
    }
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Lexicographic rank (Lehmer code) of a permutation.
pub fn encode_permutation(perm: &Permutation) -> usize {
    let n = perm.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller_after = perm.map[i + 1..].iter().filter(|&&v| v < perm.map[i]).count();
        rank += smaller_after * factorial(n - 1 - i);
    }
    rank
}

/// Inverse of [`encode_permutation`]: the permutation of [0, n) with the
/// given lexicographic rank.
pub fn decode_class(class: usize, n: usize) -> Result<Permutation> {
    if class >= factorial(n) {
        return Err(TcglError::InvalidPermutation(format!(
            "class {} out of range for n={} ({} orders)",
            class,
            n,
            factorial(n)
        )));
    }
    let mut available: Vec<usize> = (0..n).collect();
    let mut rest = class;
    let mut map = Vec::with_capacity(n);
    for i in 0..n {
        let f = factorial(n - 1 - i);
        let idx = rest / f;
        rest %= f;
        map.push(available.remove(idx));
    }
    Ok(Permutation { map })
}

/// n shuffled snippets plus the ground-truth permutation and order class.
#[derive(Debug, Clone)]
pub struct SnippetTuple {
    pub snippets: Vec<VideoTensor>,
    pub true_permutation: Permutation,
    pub order_class: usize,
}

/// Synthetic generator controls. The moving classes are 4 directions x 2
/// speeds of a periodic texture translating on a torus, with a contrast ramp
/// along the video (the order signal), video-specific flickering distractor
/// waves (retrieval nuisance, scaled by pattern_amp), and per-pixel noise.
#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_amp: f64,
    pub pattern_amp: f64,
}

impl GenConfig {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        GenConfig {
            channels,
            frames,
            height,
            width,
            noise_amp: 0.02,
            pattern_amp: std::env::var("TCGL_AMP")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(3.2),
        }
    }
}

const BACKGROUND: f64 = 0.5;
const TEXTURE_PEAK: f64 = 0.70;
const TEXTURE_WAVES: usize = 1;
const DISTRACTOR_WAVES: usize = 2;
const SPEEDS: [f64; 2] = [0.6, 2.0];

/// Per-segment contrast levels. Every video cycles through the same three
/// levels, one per temporal third, so the level multiset carries no class
/// information; only their temporal arrangement does.
const LEVELS: [f64; 3] = [0.2, 0.6, 1.0];

/// Rank -> level-index bijection: every motion video runs its contrast
/// levels ascending in time. Reading a snippet's level off the video
/// requires estimating the texture amplitude against the much stronger
/// fast-flickering distractors, which pushes the encoder toward
/// temporal-band-selective filters — the same filters that separate the
/// speed tiers and directions for retrieval.
const LEVEL_MAPS: [[usize; 3]; 2] = [[0, 1, 2], [0, 1, 2]];

/// Deterministic per-video layout drawn once from the seed: a dense periodic
/// texture (sum of random plane waves) translating at a class-specific
/// velocity, with a class-keyed contrast level per temporal third, plus
/// class-agnostic distractor waves drifting at fast random temporal
/// frequencies in random directions.
struct VideoParams {
    vx: f64,
    vy: f64,
    static_class: bool,
    // contrast level for each temporal third, already mapped by the class's
    // rank -> level bijection
    levels: [f64; 3],
    // integer spatial frequencies, amplitude, phase per traveling wave
    waves: Vec<(i32, i32, f64, f64)>,
    // spatial frequencies, temporal frequency, amplitude, two phases
    distractors: Vec<(i32, i32, f64, f64, f64, f64)>,
}

fn random_wave_vector(rng: &mut ChaCha12Rng) -> (i32, i32) {
    let (mut kx, mut ky) = (0, 0);
    while kx == 0 && ky == 0 {
        kx = rng.gen_range(-3..=3);
        ky = rng.gen_range(-3..=3);
    }
    (kx, ky)
}

impl VideoParams {
    fn derive(motion_class: usize, cfg: &GenConfig, rng: &mut ChaCha12Rng) -> Self {
        let dir = motion_class % 4;
        let mut waves = Vec::with_capacity(TEXTURE_WAVES);
        let mut total = 0.0;
        for _ in 0..TEXTURE_WAVES {
            // the along-motion frequency component is held at +/-1 so the
            // texture's temporal frequency directly reflects the speed tier
            // and stays in a slow band well below the distractor flicker
            let (kx, ky) = if motion_class == STATIC_CLASS {
                random_wave_vector(rng)
            } else {
                let along = if rng.gen_bool(0.5) { 1 } else { -1 };
                let across = rng.gen_range(-5..=5);
                if dir % 2 == 0 {
                    (along, across)
                } else {
                    (across, along)
                }
            };
            let a = 1.0;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            total += a;
            waves.push((kx, ky, a, phase));
        }
        // normalize so the texture stays within [-1, 1]
        for w in &mut waves {
            w.2 /= total;
        }
        // distractors carry no class information: random spatial frequency
        // and a fast random flicker rate scramble the energy profile that an
        // untrained encoder could otherwise use to separate classes
        let mut distractors = Vec::with_capacity(DISTRACTOR_WAVES);
        for _ in 0..DISTRACTOR_WAVES {
            let (kx, ky) = random_wave_vector(rng);
            let nu = rng.gen_range(0.33..0.46);
            let a = cfg.pattern_amp / DISTRACTOR_WAVES as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let psi = rng.gen_range(0.0..std::f64::consts::TAU);
            distractors.push((kx, ky, nu, a, phase, psi));
        }
        if motion_class == STATIC_CLASS {
            // the static control must produce bitwise-identical frames
            distractors.clear();
            return VideoParams {
                vx: 0.0,
                vy: 0.0,
                static_class: true,
                levels: [1.0; 3],
                waves,
                distractors,
            };
        }
        // per-video speed jitter keeps the two speed tiers separated while
        // decorrelating the temporal-frequency signature within a class
        let tier = (motion_class / 4) % SPEEDS.len();
        let speed = SPEEDS[tier] * rng.gen_range(0.9..1.1);
        let (dx, dy) = match dir {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        let map = LEVEL_MAPS[tier];
        let levels = [LEVELS[map[0]], LEVELS[map[1]], LEVELS[map[2]]];
        VideoParams {
            vx: dx * speed,
            vy: dy * speed,
            static_class: false,
            levels,
            waves,
            distractors,
        }
    }

    /// Noise-free sample value at (t, y, x); periodic in space. The texture
    /// translates rigidly and the distractor waves drift in random
    /// directions; both share the per-third contrast level, so a snippet's
    /// motion-residual energy reveals its level regardless of how the two
    /// mix — but mapping levels back to temporal ranks takes the class's
    /// bijection.
    fn signal(&self, cfg: &GenConfig, t: usize, y: usize, x: usize) -> f64 {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let tau = std::f64::consts::TAU;
        let tf = t as f64;
        let u = x as f64 - self.vx * tf;
        let v = y as f64 - self.vy * tf;
        let tex: f64 = self
            .waves
            .iter()
            .map(|&(kx, ky, a, phase)| {
                let arg = tau * (kx as f64 * u / w + ky as f64 * v / h) + phase;
                a * arg.cos()
            })
            .sum();
        let dist: f64 = self
            .distractors
            .iter()
            .map(|&(kx, ky, nu, a, phase, psi)| {
                let spatial = tau * (kx as f64 * x as f64 / w + ky as f64 * y as f64 / h) + phase;
                // a traveling wave along the (random) direction of its wave
                // vector: its drift scrambles the directional motion-energy
                // cue an untrained encoder could read off the texture
                a * (spatial - tau * nu * tf + psi).cos()
            })
            .sum();
        let third = (t * 3 / cfg.frames.max(1)).min(2);
        let level = self.levels[third];
        (BACKGROUND + level * (TEXTURE_PEAK * tex + dist)).clamp(0.0, 1.0)
    }
}

/// Generate one synthetic video. The static control class produces
/// bitwise-identical frames; every other class is order-learnable through
/// its contrast-level arrangement and class-specific translation.
pub fn generate_video(motion_class: usize, cfg: &GenConfig, seed: u64) -> Result<VideoTensor> {
    if motion_class != STATIC_CLASS && motion_class >= NUM_MOTION_CLASSES {
        return Err(TcglError::InvalidConfig(format!(
            "motion class {motion_class} out of range"
        )));
    }
    if cfg.frames == 0 || cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 {
        return Err(TcglError::InvalidConfig("empty video geometry".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let params = VideoParams::derive(motion_class, cfg, &mut rng);

    let mut video = VideoTensor::zeros(cfg.channels, cfg.frames, cfg.height, cfg.width);
    video.class_label = motion_class as u32;

    for c in 0..cfg.channels {
        for t in 0..cfg.frames {
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let mut v = params.signal(cfg, t, y, x);
                    if !params.static_class && cfg.noise_amp > 0.0 {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        v += cfg.noise_amp * e;
                    }
                    let idx = video.idx(c, t, y, x);
                    video.samples[idx] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(video)
}

/// Extract n snippets at starts i*(l+p) and shuffle them by a uniformly
/// random permutation drawn from the seed.
pub fn sample_and_shuffle(
    video: &VideoTensor,
    config: &SamplerConfig,
    seed: u64,
) -> Result<SnippetTuple> {
    config.validate()?;
    if video.frames < config.min_frames() {
        return Err(TcglError::InvalidConfig(format!(
            "video of {} frames too short for {} snippets of {} (+{} gap)",
            video.frames, config.n, config.l, config.p
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let order_class = rng.gen_range(0..factorial(config.n));
    let perm = decode_class(order_class, config.n)?;
    let snippets = perm
        .slots()
        .iter()
        .map(|&rank| video.slice_frames(rank * (config.l + config.p), config.l))
        .collect();
    Ok(SnippetTuple { snippets, true_permutation: perm, order_class })
}

/// Contiguous, non-overlapping, order-preserving partition of a snippet
/// into m frame-sets of l/m frames each.
pub fn partition_framesets(snippet: &VideoTensor, m: usize) -> Result<Vec<VideoTensor>> {
    if m == 0 || snippet.frames % m != 0 {
        return Err(TcglError::InvalidConfig(format!(
            "cannot divide {} frames into {} frame-sets",
            snippet.frames, m
        )));
    }
    let len = snippet.frames / m;
    Ok((0..m).map(|k| snippet.slice_frames(k * len, len)).collect())
}

const DATASET_MAGIC: &[u8; 4] = b"TCGV";
const DATASET_VERSION: u32 = 1;

/// Write a dataset split: magic "TCGV", version, count, then per video
/// class-label, C, L, H, W and 64-bit little-endian samples.
pub fn dump_dataset<W: Write>(videos: &[VideoTensor], mut w: W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(videos.len() as u32).to_le_bytes())?;
    for v in videos {
        w.write_all(&v.class_label.to_le_bytes())?;
        for dim in [v.channels, v.frames, v.height, v.width] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for s in &v.samples {
            w.write_all(&s.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset<R: Read>(mut r: R) -> Result<Vec<VideoTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(TcglError::CheckpointFormat("bad dataset magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(TcglError::CheckpointFormat(format!(
            "unsupported dataset version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut videos = Vec::with_capacity(count);
    for _ in 0..count {
        let class_label = read_u32(&mut r)?;
        let c = read_u32(&mut r)? as usize;
        let l = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let mut video = VideoTensor::zeros(c, l, h, w);
        video.class_label = class_label;
        let mut buf = [0u8; 8];
        for s in video.samples.iter_mut() {
            r.read_exact(&mut buf)?;
            *s = f64::from_le_bytes(buf);
        }
        videos.push(video);
    }
    Ok(videos)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
