//! Synthetic block-image benchmarks.
//!
//! Images are 9×9, split into nine 3×3 blocks X_{t,s} (t, s ∈ 1..=3). Pixels
//! of a dark block are N(1, 0.5²), pixels of a bright block N(0, 1). Block
//! operators: `sum_tanh` = Σ tanh(x), `sum` = Σ x, `tanh_sum` = tanh(Σ x).
//!
//! * R-C: dark block (3,3). y₁ ~ N(g₁, 1) with
//!   g₁ = sum_tanh(X₁₁) + sum(X₂₂) + tanh_sum(X₃₃), and
//!   y₂ ~ Bernoulli(𝒮(sum(X₂₂))).
//! * R-R: dark blocks (1,1), (2,2), (3,3), (1,3), (3,1). g₁ as above,
//!   g₂ = sum_tanh(X₁₃) + sum(X₂₂) + tanh_sum(X₃₃), and
//!   (y₁, y₂) = (g₁, g₂) + ε with ε ~ MVN(0, [[1, 1.4], [1.4, 4]]).
//!
//! # Random streams
//!
//! Sample `i` of a dataset with seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `i` (`set_stream(i)`).
//! Within a sample the draws are: 81 standard normals for the pixels in
//! row-major order, then the response noise (R-C: one standard normal for
//! y₁, then one uniform in [0,1) for y₂; R-R: two standard normals mapped
//! through the Cholesky factor of Σ). Normals come from
//! `rand_distr::StandardNormal`, uniforms from `Rng::random::<f64>()`.
//!
//! # Container format
//!
//! All integers and floats are little-endian.
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CECNNDS1` |
//! | 4     | u32 format version (1) |
//! | 4     | u32 task kind (0 = rc, 1 = rr) |
//! | 8     | u64 sample count n |
//! | 4×3   | u32 channels, height, width (1, 9, 9) |
//! | 4     | u32 response count (2) |
//! | n×rec | records |
//!
//! Each record is 81 f64 pixels (row-major), then y₁, y₂, then the noiseless
//! g₁ and the second latent mean (R-C: sum(X₂₂); R-R: g₂), all f64.
//!
//! The CSV manifest has header `index,y1,y2,latent1,latent2` and one row per
//! sample, numbers in shortest round-trip decimal form.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::special::sigmoid;

pub const SIDE: usize = 9;
pub const PIXELS: usize = SIDE * SIDE;
const MAGIC: &[u8; 8] = b"CECNNDS1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 12 + 4;
const RECORD_LEN: usize = (PIXELS + 4) * 8;

/// Dark-block pixel law N(1, 0.5²).
pub const DARK_MEAN: f64 = 1.0;
pub const DARK_SD: f64 = 0.5;

/// Error covariance of the R-R benchmark, diag(1,2)·[[1,0.7],[0.7,1]]·diag(1,2).
pub const RR_SIGMAS: [f64; 2] = [1.0, 2.0];
pub const RR_CORRELATION: f64 = 0.7;

pub fn rr_covariance() -> Matrix<f64> {
    let [s1, s2] = RR_SIGMAS;
    let c = RR_CORRELATION * s1 * s2;
    Matrix::from_rows(&[vec![s1 * s1, c], vec![c, s2 * s2]]).expect("2x2 rows")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Rc,
    Rr,
}

impl DataKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DataKind::Rc => "rc",
            DataKind::Rr => "rr",
        }
    }

    /// Dark blocks, 1-based (t, s).
    pub fn dark_blocks(self) -> &'static [(usize, usize)] {
        match self {
            DataKind::Rc => &[(3, 3)],
            DataKind::Rr => &[(1, 1), (2, 2), (3, 3), (1, 3), (3, 1)],
        }
    }

    fn code(self) -> u32 {
        match self {
            DataKind::Rc => 0,
            DataKind::Rr => 1,
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rc" => Ok(DataKind::Rc),
            "rr" => Ok(DataKind::Rr),
            other => Err(Error::Config(format!(
                "unknown data kind {other:?} (expected rc or rr)"
            ))),
        }
    }
}

/// 9×9 single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockImage {
    pixels: [f64; PIXELS],
}

impl BlockImage {
    pub fn new(pixels: [f64; PIXELS]) -> Self {
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f64; PIXELS] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * SIDE + col]
    }

    /// Entries of block X_{t,s}, 1-based, row-major.
    pub fn block(&self, t: usize, s: usize) -> [f64; 9] {
        assert!(
            (1..=3).contains(&t) && (1..=3).contains(&s),
            "block index out of range"
        );
        let mut out = [0.0; 9];
        for k in 0..3 {
            for l in 0..3 {
                out[k * 3 + l] = self.get((t - 1) * 3 + k, (s - 1) * 3 + l);
            }
        }
        out
    }

    /// Copy with block (t, s) replaced.
    pub fn with_block(&self, t: usize, s: usize, values: &[f64; 9]) -> Self {
        let mut out = self.clone();
        for k in 0..3 {
            for l in 0..3 {
                out.pixels[((t - 1) * 3 + k) * SIDE + (s - 1) * 3 + l] = values[k * 3 + l];
            }
        }
        out
    }
}

pub fn sum_tanh(block: &[f64; 9]) -> f64 {
    block.iter().map(|x| x.tanh()).sum()
}

pub fn sum(block: &[f64; 9]) -> f64 {
    block.iter().sum()
}

pub fn tanh_sum(block: &[f64; 9]) -> f64 {
    sum(block).tanh()
}

/// g₁ = sum_tanh(X₁₁) + sum(X₂₂) + tanh_sum(X₃₃), shared by both tasks.
pub fn g1(image: &BlockImage) -> f64 {
    sum_tanh(&image.block(1, 1)) + sum(&image.block(2, 2)) + tanh_sum(&image.block(3, 3))
}

/// R-C classification index sum(X₂₂); P(y₂ = 1) = 𝒮 of it.
pub fn rc_logit(image: &BlockImage) -> f64 {
    sum(&image.block(2, 2))
}

/// R-R second mean g₂ = sum_tanh(X₁₃) + sum(X₂₂) + tanh_sum(X₃₃).
pub fn g2_rr(image: &BlockImage) -> f64 {
    sum_tanh(&image.block(1, 3)) + sum(&image.block(2, 2)) + tanh_sum(&image.block(3, 3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: BlockImage,
    pub y1: f64,
    /// Binary (0/1) for R-C, real for R-R.
    pub y2: f64,
    /// Noiseless (g₁, second index): R-C (g₁, sum(X₂₂)), R-R (g₁, g₂).
    pub latent_mean: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DataKind,
    pub samples: Vec<SyntheticSample>,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_image(rng: &mut ChaCha8Rng, dark: &[(usize, usize)]) -> BlockImage {
    let mut pixels = [0.0; PIXELS];
    for (idx, px) in pixels.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        let block = (idx / SIDE / 3 + 1, idx % SIDE / 3 + 1);
        *px = if dark.contains(&block) {
            DARK_MEAN + DARK_SD * z
        } else {
            z
        };
    }
    BlockImage::new(pixels)
}

fn rc_sample(seed: u64, index: usize) -> SyntheticSample {
    let mut rng = sample_rng(seed, index);
    let image = draw_image(&mut rng, DataKind::Rc.dark_blocks());
    let g = g1(&image);
    let logit = rc_logit(&image);
    let noise: f64 = StandardNormal.sample(&mut rng);
    let u: f64 = rng.random();
    SyntheticSample {
        y1: g + noise,
        y2: if u < sigmoid(logit) { 1.0 } else { 0.0 },
        latent_mean: [g, logit],
        image,
    }
}

fn rr_sample(seed: u64, index: usize, chol: &Cholesky<f64>) -> SyntheticSample {
    let mut rng = sample_rng(seed, index);
    let image = draw_image(&mut rng, DataKind::Rr.dark_blocks());
    let (a, b) = (g1(&image), g2_rr(&image));
    let z = [
        StandardNormal.sample(&mut rng),
        StandardNormal.sample(&mut rng),
    ];
    let e = chol.lower_mul(&z);
    SyntheticSample {
        y1: a + e[0],
        y2: b + e[1],
        latent_mean: [a, b],
        image,
    }
}

/// Regression-classification benchmark with `n` samples.
pub fn gen_rc_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Parameter("dataset size must be at least 1".into()));
    }
    Ok(Dataset {
        kind: DataKind::Rc,
        samples: (0..n).map(|i| rc_sample(seed, i)).collect(),
    })
}

/// Regression-regression benchmark with `n` samples.
pub fn gen_rr_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Parameter("dataset size must be at least 1".into()));
    }
    let chol = Cholesky::new(&rr_covariance())?;
    Ok(Dataset {
        kind: DataKind::Rr,
        samples: (0..n).map(|i| rr_sample(seed, i, &chol)).collect(),
    })
}

pub fn gen_dataset(kind: DataKind, n: usize, seed: u64) -> Result<Dataset> {
    match kind {
        DataKind::Rc => gen_rc_dataset(n, seed),
        DataKind::Rr => gen_rr_dataset(n, seed),
    }
}

/// `n` draws from MVN(mean, cov) as an n×p matrix, using the Cholesky factor
/// of `cov` and one ChaCha8 stream seeded with `seed`.
pub fn mvn_sample(mean: &[f64], cov: &Matrix<f64>, n: usize, seed: u64) -> Result<Matrix<f64>> {
    let p = mean.len();
    if cov.rows() != p || cov.cols() != p {
        return Err(Error::Dimension(format!(
            "mean of length {p} with a {}x{} covariance",
            cov.rows(),
            cov.cols()
        )));
    }
    let chol = Cholesky::new(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * p);
    let mut z = vec![0.0; p];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = chol.lower_mul(&z);
        data.extend(x.iter().zip(mean).map(|(a, m)| a + m));
    }
    Matrix::from_vec(n, p, data)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Images of the selected samples as a `[n, 1, 9, 9]` tensor.
    pub fn images<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * PIXELS);
        for &i in idx {
            data.extend(self.samples[i].image.pixels().iter().map(|&v| T::lit(v)));
        }
        Tensor::new(&[idx.len(), 1, SIDE, SIDE], data).expect("image tensor shape")
    }

    pub fn y1<T: Scalar>(&self, idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| T::lit(self.samples[i].y1)).collect()
    }

    pub fn y2<T: Scalar>(&self, idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| T::lit(self.samples[i].y2)).collect()
    }

    /// Responses of the selected samples as an n×2 matrix.
    pub fn responses<T: Scalar>(&self, idx: &[usize]) -> Matrix<T> {
        let data = idx
            .iter()
            .flat_map(|&i| [T::lit(self.samples[i].y1), T::lit(self.samples[i].y2)])
            .collect();
        Matrix::from_vec(idx.len(), 2, data).expect("n x 2")
    }

    /// Container bytes as documented in the module header.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * RECORD_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for d in [1u32, SIDE as u32, SIDE as u32, 2] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for s in &self.samples {
            for v in s.image.pixels() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in [s.y1, s.y2, s.latent_mean[0], s.latent_mean[1]] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a dataset container (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let kind = match u32_at(12) {
            0 => DataKind::Rc,
            1 => DataKind::Rr,
            k => return Err(Error::Format(format!("unknown task code {k}"))),
        };
        let n = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let dims = [u32_at(24), u32_at(28), u32_at(32), u32_at(36)];
        if dims != [1, SIDE as u32, SIDE as u32, 2] {
            return Err(Error::Format(format!(
                "unsupported shape/response layout {dims:?}"
            )));
        }
        let expected = n
            .checked_mul(RECORD_LEN)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("sample count overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "container holds {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let samples = (0..n)
            .map(|i| {
                let base = HEADER_LEN + i * RECORD_LEN;
                let mut pixels = [0.0; PIXELS];
                for (k, px) in pixels.iter_mut().enumerate() {
                    *px = f64_at(base + 8 * k);
                }
                let tail = base + 8 * PIXELS;
                SyntheticSample {
                    image: BlockImage::new(pixels),
                    y1: f64_at(tail),
                    y2: f64_at(tail + 8),
                    latent_mean: [f64_at(tail + 16), f64_at(tail + 24)],
                }
            })
            .collect();
        Ok(Self { kind, samples })
    }

    /// Lowercase hex SHA-256 of the container bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("index,y1,y2,latent1,latent2\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                s.y1, s.y2, s.latent_mean[0], s.latent_mean[1]
            ));
        }
        out
    }

    /// Writes the container to `path` and the CSV manifest next to it
    /// (`<path>.csv`). Returns the manifest path.
    pub fn save(&self, path: &Path) -> Result<std::path::PathBuf> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        let mut manifest = path.as_os_str().to_owned();
        manifest.push(".csv");
        let manifest = std::path::PathBuf::from(manifest);
        fs::write(&manifest, self.manifest_csv())?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
