use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, KinematicConditioning};
use crate::sdf::dataset::{NormalizationTransform, SdfTarget};

pub const MODEL_FORMAT: &str = "kinsdf-decoder";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub mode: FeatureMode,
    pub target: SdfTarget,
    /// Length of the visual code prepended to the kinematic feature.
    pub visual_dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub normalization: Option<NormalizationTransform>,
    /// Pose the fitted shape is conditioned on, in normalized coordinates.
    #[serde(default)]
    pub conditioning: Option<KinematicConditioning>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ModelHeader {
    pub fn new(widths: Vec<usize>, mode: FeatureMode, target: SdfTarget, visual_dim: usize, seed: u64) -> Self {
        ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            widths,
            mode,
            target,
            visual_dim,
            seed,
            normalization: None,
            conditioning: None,
            metadata: BTreeMap::new(),
        }
    }
}

/// A decoder plus everything needed to query it again.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub header: ModelHeader,
    pub params: MlpParams,
}

impl DecoderModel {
    /// u32 header length, JSON header, u32 blob length, then the parameters
    /// as little-endian f32 in layer-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.header.widths != self.params.widths() {
            return Err(Error::DimensionMismatch {
                expected: self.params.input_dim(),
                actual: self.header.widths.first().copied().unwrap_or(0),
                context: "model header widths",
            });
        }
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let flat = self.params.to_flat();
        w.write_all(&((flat.len() * 4) as u32).to_le_bytes())?;
        let mut blob = Vec::with_capacity(flat.len() * 4);
        for v in flat {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let ctx = "decoder model";
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| Error::parse(ctx, "missing header length"))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(|_| Error::parse(ctx, "truncated header"))?;
        let header: ModelHeader =
            serde_json::from_slice(&header).map_err(|e| Error::parse(ctx, e.to_string()))?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(Error::parse(ctx, format!("unsupported format {} v{}", header.format, header.version)));
        }
        r.read_exact(&mut len).map_err(|_| Error::parse(ctx, "missing parameter length"))?;
        let mut blob = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut blob).map_err(|_| Error::parse(ctx, "truncated parameters"))?;
        let flat: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let params = MlpParams::from_flat(&header.widths, &flat).map_err(|e| Error::parse(ctx, e.to_string()))?;
        params.validate()?;
        Ok(DecoderModel { header, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&bytes[..]).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Parameters as stored, i.e. rounded to f32.
    pub fn quantized(&self) -> MlpParams {
        let flat: Vec<f64> = self.params.to_flat().iter().map(|v| *v as f32 as f64).collect();
        MlpParams::from_flat(&self.params.widths(), &flat).expect("same widths")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::mlp::decoder_widths;

    #[test]
    fn model_roundtrip() {
        let widths = decoder_widths(54, 16);
        let params = MlpParams::init(&widths, 3).unwrap();
        let mut header = ModelHeader::new(widths, FeatureMode::K3, SdfTarget::Hand, 0, 3);
        header.metadata.insert("epochs".into(), 12.into());
        let model = DecoderModel { header, params };
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let hl = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        let json: serde_json::Value = serde_json::from_slice(&buf[4..4 + hl]).unwrap();
        assert_eq!(json["mode"], "k3");
        assert_eq!(json["seed"], 3);
        let back = DecoderModel::read_from(&buf[..]).unwrap();
        assert_eq!(back.header, model.header);
        assert_eq!(back.params, model.quantized());
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
        assert!(DecoderModel::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
