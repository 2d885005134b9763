//! On-disk formats.
//!
//! Datasets are a little-endian binary stream: the magic `SCRD`, a `u32`
//! version, `u32` height and width, the `f64` sample rate and a `u32` channel
//! count, followed by one record per frame holding the time (`f64`), the
//! commanded and actual pressures (`f64` each) and the pixels (`f32`).
//!
//! Everything else is a JSON document tagged with its kind and version.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::WaypointTarget;
use crate::plant::{Dataset, CHANNELS};
use crate::sysid::{Checkpoint, EpochRecord, RestPair, TrainConfig};
use crate::tensor::{self, TensorMap};

pub const DATASET_MAGIC: [u8; 4] = *b"SCRD";
pub const DATASET_VERSION: u32 = 1;
pub const DOCUMENT_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    data.validate()?;
    let mut w = BufWriter::new(out);
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(data.height as u32).to_le_bytes())?;
    w.write_all(&(data.width as u32).to_le_bytes())?;
    w.write_all(&data.rate_hz.to_le_bytes())?;
    w.write_all(&(CHANNELS as u32).to_le_bytes())?;
    for i in 0..data.len() {
        w.write_all(&data.times[i].to_le_bytes())?;
        for v in data.u_cmd[i].iter().chain(&data.p_act[i]) {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in data.frame_pixels(i) {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn malformed_dataset(reason: impl Into<String>) -> Error {
    Error::Malformed {
        format: "dataset",
        reason: reason.into(),
    }
}

/// Fills `buf` completely, or returns `false` at a clean end of stream.
fn read_record<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(malformed_dataset("truncated frame record")),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = BufReader::new(input);
    let mut header = [0u8; 28];
    r.read_exact(&mut header)
        .map_err(|_| malformed_dataset("truncated header"))?;
    if header[0..4] != DATASET_MAGIC {
        return Err(malformed_dataset("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            format: "dataset",
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let (height, width) = (u32_at(8) as usize, u32_at(12) as usize);
    let rate = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let channels = u32_at(24) as usize;
    if channels != CHANNELS {
        return Err(malformed_dataset(format!("{channels} channels, expected {CHANNELS}")));
    }
    let pixels = height * width;
    let mut data = Dataset::new(height, width, rate);
    let mut rec = vec![0u8; 8 * (1 + 2 * CHANNELS) + 4 * pixels];
    while read_record(&mut r, &mut rec)? {
        let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap());
        data.times.push(f(0));
        data.u_cmd.push(std::array::from_fn(|c| f(1 + c)));
        data.p_act.push(std::array::from_fn(|c| f(1 + CHANNELS + c)));
        let base = 8 * (1 + 2 * CHANNELS);
        data.pixels.extend(
            rec[base..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
    }
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, fs::File::create(path)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    version: u32,
}

/// Serializes `body` as a document of the given kind.
pub fn write_document<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope {
        kind: kind.to_string(),
        version: DOCUMENT_VERSION,
        body,
    })?)
}

/// Parses a document, checking its kind and version first.
pub fn read_document<T: DeserializeOwned>(kind: &'static str, text: &str) -> Result<T> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Malformed {
        format: kind,
        reason: e.to_string(),
    })?;
    if header.kind != kind {
        return Err(Error::Malformed {
            format: kind,
            reason: format!("document kind is {}", header.kind),
        });
    }
    if header.version != DOCUMENT_VERSION {
        return Err(Error::Version {
            format: kind,
            found: header.version,
            expected: DOCUMENT_VERSION,
        });
    }
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| Error::Malformed {
        format: kind,
        reason: e.to_string(),
    })?;
    Ok(env.body)
}

/// The `kind` field of a document, without parsing its body.
pub fn document_kind(text: &str) -> Result<String> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Malformed {
        format: "document",
        reason: e.to_string(),
    })?;
    Ok(header.kind)
}

pub fn save_document<T: Serialize>(kind: &str, body: &T, path: &Path) -> Result<()> {
    fs::write(path, write_document(kind, body)?)?;
    Ok(())
}

pub fn load_document<T: DeserializeOwned>(kind: &'static str, path: &Path) -> Result<T> {
    read_document(kind, &fs::read_to_string(path)?)
}

pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    config: TrainConfig,
    height: usize,
    width: usize,
    latent_scale: f64,
    #[serde(with = "tensor::dvec")]
    z0: DVector<f64>,
    rest: RestPair,
    tensors: TensorMap,
    history: Vec<EpochRecord>,
}

pub fn write_checkpoint(ck: &Checkpoint) -> Result<String> {
    write_document(
        CHECKPOINT_KIND,
        &CheckpointBody {
            config: ck.config.clone(),
            height: ck.height,
            width: ck.width,
            latent_scale: ck.latent_scale,
            z0: ck.z0().clone(),
            rest: ck.rest.clone(),
            tensors: ck.tensors(),
            history: ck.history.clone(),
        },
    )
}

pub fn read_checkpoint(text: &str) -> Result<Checkpoint> {
    let b: CheckpointBody = read_document(CHECKPOINT_KIND, text)?;
    b.config.validate()?;
    let ck = Checkpoint::from_parts(b.config, b.height, b.width, &b.tensors, b.latent_scale, b.rest, b.history)?;
    if ck.z0() != &b.z0 {
        return Err(Error::Malformed {
            format: "checkpoint",
            reason: "rest latent disagrees with the dynamics tensors".into(),
        });
    }
    if ck.rest.observation.len() != ck.height * ck.width {
        return Err(Error::Malformed {
            format: "checkpoint",
            reason: "rest observation size disagrees with the frame size".into(),
        });
    }
    Ok(ck)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&fs::read_to_string(path)?)
}

pub const WAYPOINT_EXPORT_KIND: &str = "waypoint_export";

/// One state saved in the live simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedState {
    /// Decoded observation, row-major.
    pub observation: Vec<f64>,
    pub u: [f64; CHANNELS],
    #[serde(with = "tensor::dvec")]
    pub z: DVector<f64>,
    #[serde(with = "tensor::dvec")]
    pub zdot: DVector<f64>,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointExport {
    pub model_id: String,
    pub height: usize,
    pub width: usize,
    /// Horizon chosen at export time, if any.
    pub horizon: Option<usize>,
    pub states: Vec<SavedState>,
}

impl WaypointExport {
    /// Target observations for [`crate::ocp::make_waypoints`]; latents are
    /// re-derived by whichever model consumes them.
    pub fn targets(&self) -> Vec<WaypointTarget> {
        self.states
            .iter()
            .map(|s| WaypointTarget {
                observation: s.observation.clone(),
                neighbors: None,
                is_static: s.is_static,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dynamics::FamilyKind;
    use crate::plant::{generate_dataset, ExcitationProfile, PlantParams};
    use crate::sysid::{DecoderKind, SysModel};

    fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut d = Dataset::new(h, w, rng.random_range(1.0..100.0));
        let n = rng.random_range(1..20);
        for i in 0..n {
            d.times.push(i as f64 / d.rate_hz);
            d.u_cmd.push(std::array::from_fn(|_| rng.random_range(-1e3..1e3)));
            d.p_act.push(std::array::from_fn(|_| rng.random::<f64>()));
            d.pixels.extend((0..h * w).map(|_| rng.random::<f32>()));
        }
        d
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let d = random_dataset(&mut rng);
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf).unwrap();
            assert_eq!(buf.len(), 28 + d.len() * (72 + 4 * d.frame_size()));
            assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
        }
        let d = generate_dataset(ExcitationProfile::Step, 10.0, 3, &PlantParams::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn dataset_header_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_dataset(&mut rng);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_dataset(bad.as_slice()), Err(Error::Version { found: 2, .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(bad.as_slice()), Err(Error::Malformed { .. })));
        let bad = &buf[..buf.len() - 1];
        assert!(matches!(read_dataset(bad), Err(Error::Malformed { .. })));
        assert!(read_dataset(&buf[..10]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (family, decoder) in [
            (FamilyKind::Oscillator, DecoderKind::KeypointBroadcast),
            (FamilyKind::Koopman, DecoderKind::Dense),
            (FamilyKind::Mlp, DecoderKind::KeypointBroadcast),
        ] {
            let mut config = TrainConfig::for_model(family, decoder);
            config.encoder_hidden = 6;
            config.decoder_hidden = 5;
            config.dynamics.oscillators = 2;
            let mut model = SysModel::init(&config, 8, 8, &mut rng);
            let p: Vec<f64> = model.params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            model.set_params(&p);
            let ck = Checkpoint {
                config,
                model,
                latent_scale: rng.random_range(0.1..1.0),
                rest: RestPair {
                    observation: (0..64).map(|_| rng.random()).collect(),
                    command: DVector::from_element(4, 43.0),
                },
                height: 8,
                width: 8,
                history: Vec::new(),
            };
            let text = write_checkpoint(&ck).unwrap();
            assert_eq!(read_checkpoint(&text).unwrap(), ck);
            let bumped = text.replacen("\"version\": 1", "\"version\": 7", 1);
            assert!(matches!(read_checkpoint(&bumped), Err(Error::Version { found: 7, .. })));
        }
    }

    #[test]
    fn waypoint_export_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rv = |rng: &mut ChaCha8Rng, n: usize| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let export = WaypointExport {
            model_id: "osc".into(),
            height: 2,
            width: 2,
            horizon: Some(40),
            states: (0..3)
                .map(|k| SavedState {
                    observation: (0..4).map(|_| rng.random()).collect(),
                    u: std::array::from_fn(|_| rng.random_range(0.0..120.0)),
                    z: rv(&mut rng, 6),
                    zdot: if k == 1 { DVector::zeros(6) } else { rv(&mut rng, 6) },
                    is_static: k == 1,
                })
                .collect(),
        };
        let text = write_document(WAYPOINT_EXPORT_KIND, &export).unwrap();
        let back: WaypointExport = read_document(WAYPOINT_EXPORT_KIND, &text).unwrap();
        assert_eq!(back, export);
        assert!(read_document::<WaypointExport>(CHECKPOINT_KIND, &text).is_err());
        let t = export.targets();
        assert_eq!(t.len(), 3);
        assert!(t[1].is_static && !t[0].is_static);
    }
}
