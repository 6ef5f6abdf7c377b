//! Versioned JSON documents for warping scales, filterbanks and GMMs.
//!
//! Floats are written with 17 significant digits, which reproduces every
//! `f64` exactly on reading. The payload digest in the provenance block is
//! recomputed on load.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::filterbank::{Filterbank, FilterbankLayout, ShapeKind};
use crate::gmm::GmmModel;
use crate::scale::{ScaleKind, WarpingScale};

use super::{atomic_write, sha256_hex};

pub const SCHEMA_VERSION: u64 = 1;
const KEYS: [&str; 6] = ["schema_version", "kind", "sample_rate_hz", "n_fft", "payload", "provenance"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "warping-scale")]
    WarpingScale,
    #[serde(rename = "filterbank")]
    Filterbank,
    #[serde(rename = "gmm")]
    Gmm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::WarpingScale => "warping-scale",
            ModelKind::Filterbank => "filterbank",
            ModelKind::Gmm => "gmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    WarpingScale(WarpingScale),
    Filterbank(Filterbank),
    Gmm(GmmModel),
}

impl Payload {
    pub fn kind(&self) -> ModelKind {
        match self {
            Payload::WarpingScale(_) => ModelKind::WarpingScale,
            Payload::Filterbank(_) => ModelKind::Filterbank,
            Payload::Gmm(_) => ModelKind::Gmm,
        }
    }
}

/// Where a document came from. `payload_sha256` is filled in on save.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config: Value,
    pub config_digest: String,
    pub manifest_digest: String,
    #[serde(default)]
    pub payload_sha256: String,
}

impl Provenance {
    pub fn new(config: Value, manifest_digest: impl Into<String>) -> Self {
        let config_digest = sha256_hex(&to_text(&config, false));
        Self {
            config,
            config_digest,
            manifest_digest: manifest_digest.into(),
            payload_sha256: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    /// 0 for documents that do not depend on the audio rate (GMMs).
    pub sample_rate_hz: u32,
    /// FFT length the payload was built for; 0 when not applicable.
    pub n_fft: usize,
    pub payload: Payload,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalePayload {
    scale_kind: ScaleKind,
    knots: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterbankPayload {
    shape: ShapeKind,
    boundary_bins: Vec<usize>,
    responses: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmPayload {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, n_cols: Option<usize>) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = n_cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Format(format!("{name}: ragged rows")));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Format(format!("{name}: {e}")))
}

/// 17 significant digits for floats; everything else as pretty JSON.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Compact form 17-digit form for digests, pretty for files.
fn to_text(v: &Value, pretty: bool) -> Vec<u8> {
    let mut out = Vec::new();
    if pretty {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
        v.serialize(&mut ser).expect("in-memory write");
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, Compact17);
        v.serialize(&mut ser).expect("in-memory write");
    }
    out
}

struct Compact17;

impl Formatter for Compact17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

fn check_finite(v: &Value) -> Result<()> {
    match v {
        Value::Null => Err(Error::InvalidArgument("non-finite number in document".into())),
        Value::Array(a) => a.iter().try_for_each(check_finite),
        Value::Object(o) => o.values().try_for_each(check_finite),
        _ => Ok(()),
    }
}

fn payload_value(p: &Payload) -> Result<Value> {
    let v = match p {
        Payload::WarpingScale(s) => serde_json::to_value(ScalePayload {
            scale_kind: s.kind,
            knots: s.knots.clone(),
        })?,
        Payload::Filterbank(fb) => serde_json::to_value(FilterbankPayload {
            shape: fb.shape,
            boundary_bins: fb.layout.boundary_bins.clone(),
            responses: rows(&fb.responses),
        })?,
        Payload::Gmm(g) => serde_json::to_value(GmmPayload {
            weights: g.weights.clone(),
            means: rows(&g.means),
            variances: rows(&g.variances),
        })?,
    };
    // serde_json turns NaN and infinities into null
    check_finite(&v)?;
    Ok(v)
}

impl ModelDocument {
    pub fn kind(&self) -> ModelKind {
        self.payload.kind()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let payload = payload_value(&self.payload)?;
        let mut prov = self.provenance.clone();
        prov.payload_sha256 = sha256_hex(&to_text(&payload, false));
        let mut top = Map::new();
        top.insert("schema_version".into(), SCHEMA_VERSION.into());
        top.insert("kind".into(), self.kind().name().into());
        top.insert("sample_rate_hz".into(), self.sample_rate_hz.into());
        top.insert("n_fft".into(), self.n_fft.into());
        top.insert("payload".into(), payload);
        top.insert("provenance".into(), serde_json::to_value(prov)?);
        let mut text = to_text(&Value::Object(top), true);
        text.push(b'\n');
        Ok(text)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let v: Value = serde_json::from_slice(bytes)?;
        let Value::Object(mut top) = v else {
            return Err(Error::Format("document is not a JSON object".into()));
        };
        let mut keys: Vec<&str> = top.keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut want = KEYS;
        want.sort_unstable();
        if keys != want {
            return Err(Error::Format(format!("document keys {keys:?}, expected {want:?}")));
        }
        let version = top["schema_version"]
            .as_u64()
            .ok_or_else(|| Error::Format("schema_version is not an integer".into()))?;
        if version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind: ModelKind = serde_json::from_value(top["kind"].clone())
            .map_err(|_| Error::Format(format!("unknown document kind {}", top["kind"])))?;
        let sample_rate_hz = top["sample_rate_hz"]
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| Error::Format("sample_rate_hz is not a u32".into()))?;
        let n_fft = top["n_fft"]
            .as_u64()
            .ok_or_else(|| Error::Format("n_fft is not an integer".into()))? as usize;
        let provenance: Provenance = serde_json::from_value(top.remove("provenance").expect("checked"))?;
        let payload_json = top.remove("payload").expect("checked");
        let digest = sha256_hex(&to_text(&payload_json, false));
        if digest != provenance.payload_sha256 {
            return Err(Error::ChecksumMismatch {
                expected: provenance.payload_sha256.clone(),
                found: digest,
            });
        }
        let payload = match kind {
            ModelKind::WarpingScale => {
                let p: ScalePayload = serde_json::from_value(payload_json)?;
                let s = WarpingScale {
                    kind: p.scale_kind,
                    knots: p.knots,
                };
                s.validate()?;
                Payload::WarpingScale(s)
            }
            ModelKind::Filterbank => {
                let p: FilterbankPayload = serde_json::from_value(payload_json)?;
                let layout = FilterbankLayout {
                    boundary_bins: p.boundary_bins,
                    sample_rate_hz,
                    n_fft,
                };
                let fb = Filterbank {
                    responses: matrix("responses", p.responses, Some(layout.n_bins()))?,
                    layout,
                    shape: p.shape,
                };
                fb.validate()?;
                Payload::Filterbank(fb)
            }
            ModelKind::Gmm => {
                let p: GmmPayload = serde_json::from_value(payload_json)?;
                let g = GmmModel {
                    weights: p.weights,
                    means: matrix("means", p.means, None)?,
                    variances: matrix("variances", p.variances, None)?,
                };
                g.validate()?;
                Payload::Gmm(g)
            }
        };
        Ok(Self {
            sample_rate_hz,
            n_fft,
            payload,
            provenance,
        })
    }
}

pub fn save_model(doc: &ModelDocument, path: &Path) -> Result<()> {
    let text = doc.to_json()?;
    atomic_write(path, |w| Ok(w.write_all(&text)?))
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    let bytes = std::fs::read(path)?;
    ModelDocument::from_json(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn wrong(expected: ModelKind, found: ModelKind) -> Error {
    Error::WrongKind {
        expected: expected.name().into(),
        found: found.name().into(),
    }
}

pub fn load_scale(path: &Path) -> Result<(ModelDocument, WarpingScale)> {
    let doc = load_model(path)?;
    match &doc.payload {
        Payload::WarpingScale(s) => {
            let s = s.clone();
            Ok((doc, s))
        }
        other => Err(wrong(ModelKind::WarpingScale, other.kind())),
    }
}

pub fn load_filterbank(path: &Path) -> Result<(ModelDocument, Filterbank)> {
    let doc = load_model(path)?;
    match &doc.payload {
        Payload::Filterbank(f) => {
            let f = f.clone();
            Ok((doc, f))
        }
        other => Err(wrong(ModelKind::Filterbank, other.kind())),
    }
}

pub fn load_gmm(path: &Path) -> Result<(ModelDocument, GmmModel)> {
    let doc = load_model(path)?;
    match &doc.payload {
        Payload::Gmm(g) => {
            let g = g.clone();
            Ok((doc, g))
        }
        other => Err(wrong(ModelKind::Gmm, other.kind())),
    }
}
