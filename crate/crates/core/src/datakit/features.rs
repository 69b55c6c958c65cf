//! Feature sequences, the three shape regimes, and the "TAF1" file format.
//!
//! ```text
//! "TAF1" | version u8 | u32 len | canonical JSON {d_a, n_frames, regime, source_id}
//! n_frames × d_a f32 LE, row-major
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{canonical_json, put_f32s, put_u32, ByteReader};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TAF1";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Length proportional to duration, fixed dimension (wav2vec2-like).
    FeatureBased,
    /// Fixed length and dimension (Whisper-encoder-like).
    TransformerBased,
    /// Length proportional to duration, per-model dimension.
    Generative,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::FeatureBased => "feature_based",
            RegimeKind::TransformerBased => "transformer_based",
            RegimeKind::Generative => "generative",
        }
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    /// Accepts the short CLI spellings as well as the serialized names.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" | "feature_based" => Ok(RegimeKind::FeatureBased),
            "transformer" | "transformer_based" => Ok(RegimeKind::TransformerBased),
            "generative" => Ok(RegimeKind::Generative),
            other => Err(Error::Config(format!(
                "unknown regime {other:?} (expected feature, transformer or generative)"
            ))),
        }
    }
}

/// Shape law of an encoder family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureRegime {
    pub kind: RegimeKind,
    pub d_f: usize,
    pub frames_per_second: f64,
    pub fixed_len: usize,
    pub d_t: usize,
    /// Inclusive range for the generative dimension.
    pub d_g_range: (usize, usize),
}

impl FeatureRegime {
    pub fn new(kind: RegimeKind) -> Self {
        FeatureRegime {
            kind,
            d_f: 768,
            frames_per_second: 50.0,
            fixed_len: 1500,
            d_t: 512,
            d_g_range: (512, 1024),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_f, self.fixed_len, self.d_t, self.d_g_range.0];
        if dims.contains(&0) || !(self.frames_per_second > 0.0) {
            return Err(Error::Config(format!("regime dimensions must be positive: {self:?}")));
        }
        if self.d_g_range.0 > self.d_g_range.1 {
            return Err(Error::Config(format!(
                "d_g_range min {} exceeds max {}",
                self.d_g_range.0, self.d_g_range.1
            )));
        }
        Ok(())
    }

    /// Frame count for an utterance of the given length.
    pub fn frames_for(&self, duration_seconds: f64) -> usize {
        match self.kind {
            RegimeKind::TransformerBased => self.fixed_len,
            _ => ((duration_seconds * self.frames_per_second).round() as usize).max(1),
        }
    }

    /// Feature dimension; the generative one is drawn from `d_g_range`.
    pub fn dim(&self, rng: &mut impl Rng) -> usize {
        match self.kind {
            RegimeKind::FeatureBased => self.d_f,
            RegimeKind::TransformerBased => self.d_t,
            RegimeKind::Generative => rng.gen_range(self.d_g_range.0..=self.d_g_range.1),
        }
    }
}

impl Default for FeatureRegime {
    fn default() -> Self {
        Self::new(RegimeKind::FeatureBased)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    regime: RegimeKind,
    source_id: String,
    data: Tensor<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    d_a: usize,
    n_frames: usize,
    regime: RegimeKind,
    source_id: String,
}

impl FeatureSequence {
    /// `data` must be `[1, N, D_a]` with `N, D_a ≥ 1`.
    pub fn new(regime: RegimeKind, source_id: impl Into<String>, data: Tensor<f32>) -> Result<Self> {
        match data.shape() {
            &[1, n, d] if n >= 1 && d >= 1 => Ok(FeatureSequence {
                regime,
                source_id: source_id.into(),
                data,
            }),
            s => Err(Error::Shape(format!("feature data must be [1, N>=1, D>=1], got {s:?}"))),
        }
    }

    pub fn regime(&self) -> RegimeKind {
        self.regime
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn n_frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn d_a(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<f32> {
        self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = canonical_json(&Header {
            d_a: self.d_a(),
            n_frames: self.n_frames(),
            regime: self.regime,
            source_id: self.source_id.clone(),
        })?;
        let mut out = Vec::with_capacity(9 + header.len() + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        put_f32s(&mut out, self.data.data());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let header: Header = serde_json::from_value(r.json("feature header")?)
            .map_err(|e| FormatError::Header(e.to_string()))?;
        if header.n_frames == 0 || header.d_a == 0 {
            return Err(FormatError::Header(format!(
                "empty feature block: n_frames {}, d_a {}",
                header.n_frames, header.d_a
            ))
            .into());
        }
        let count = header
            .n_frames
            .checked_mul(header.d_a)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| FormatError::Header("feature dims overflow".into()))?;
        if r.remaining() != count {
            return Err(FormatError::ByteCountMismatch {
                expected: count,
                actual: r.remaining(),
            }
            .into());
        }
        let data = r.f32s(header.n_frames * header.d_a, "feature data")?;
        let data = Tensor::new(vec![1, header.n_frames, header.d_a], data)?;
        Self::new(header.regime, header.source_id, data)
    }

    /// Reads only the header; cheap validation for large manifests.
    pub fn peek_header(bytes: &[u8]) -> Result<(RegimeKind, usize, usize)> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let header: Header = serde_json::from_value(r.json("feature header")?)
            .map_err(|e| FormatError::Header(e.to_string()))?;
        Ok((header.regime, header.n_frames, header.d_a))
    }
}

pub fn write_features(fs: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, fs.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

/// Smooth seeded features with no transcript attached.
///
/// Frames are grouped into segments of roughly half a second; each segment
/// is a sum of three low-frequency sinusoids across the feature axis with a
/// slow drift over time, plus small Gaussian noise.
pub fn synth_features(regime: &FeatureRegime, duration_seconds: f64, seed: u64) -> Result<FeatureSequence> {
    regime.validate()?;
    if !(duration_seconds > 0.0) || !duration_seconds.is_finite() {
        return Err(Error::Input(format!("duration must be positive, got {duration_seconds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = regime.frames_for(duration_seconds);
    let d = regime.dim(&mut rng);
    let per_segment = (regime.frames_per_second / 2.0).round().max(1.0) as usize;
    let segments = n.div_ceil(per_segment);
    let codebook = super::synth::Codebook::new(rng.gen());
    let ids: Vec<u32> = (0..segments).map(|_| rng.gen_range(2..64)).collect();
    let sigs: Vec<_> = ids.iter().map(|&id| codebook.signature(id)).collect();
    let data = super::synth::render(&sigs, n, d, super::synth::DEFAULT_NOISE, &mut rng);
    FeatureSequence::new(regime.kind, format!("synth-{seed}"), Tensor::new(vec![1, n, d], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_shapes() {
        let fb = FeatureRegime::new(RegimeKind::FeatureBased);
        let fs = synth_features(&fb, 2.0, 1).unwrap();
        assert_eq!((fs.n_frames(), fs.d_a()), (100, 768));

        let tb = FeatureRegime::new(RegimeKind::TransformerBased);
        for dur in [0.3, 4.0] {
            let fs = synth_features(&tb, dur, 2).unwrap();
            assert_eq!(fs.data().shape(), &[1, 1500, 512]);
        }

        let gen = FeatureRegime::new(RegimeKind::Generative);
        let fs = synth_features(&gen, 1.0, 3).unwrap();
        assert_eq!(fs.n_frames(), 50);
        assert!((512..=1024).contains(&fs.d_a()));
    }

    #[test]
    fn synth_is_deterministic_and_bad_duration_rejected() {
        let r = FeatureRegime::default();
        assert_eq!(synth_features(&r, 0.5, 9).unwrap(), synth_features(&r, 0.5, 9).unwrap());
        assert_ne!(synth_features(&r, 0.5, 9).unwrap(), synth_features(&r, 0.5, 10).unwrap());
        assert!(synth_features(&r, 0.0, 1).is_err());
        assert!(synth_features(&r, f64::NAN, 1).is_err());
    }

    #[test]
    fn taf_roundtrip_and_header() {
        let fs = synth_features(&FeatureRegime::default(), 0.2, 4).unwrap();
        let bytes = fs.to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"TAF1\x01");
        let back = FeatureSequence::from_bytes(&bytes).unwrap();
        assert_eq!(back, fs);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(
            FeatureSequence::peek_header(&bytes).unwrap(),
            (RegimeKind::FeatureBased, 10, 768)
        );
    }

    #[test]
    fn taf_corruption() {
        let fs = synth_features(&FeatureRegime::default(), 0.1, 4).unwrap();
        let bytes = fs.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'?';
        assert!(matches!(
            FeatureSequence::from_bytes(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::ByteCountMismatch { .. }))
        ));
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes[..7]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn regime_names_parse() {
        assert_eq!("feature".parse::<RegimeKind>().unwrap(), RegimeKind::FeatureBased);
        assert_eq!("transformer_based".parse::<RegimeKind>().unwrap(), RegimeKind::TransformerBased);
        assert!("audio".parse::<RegimeKind>().is_err());
    }
}
