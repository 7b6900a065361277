//! Checkpoint files: `key = value` header lines, a `---` line, then the flat
//! parameter vector as little-endian `f64`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functions::Domain;
use crate::losses::{HyperParams, LossParts};
use crate::tensor::{Mlp, ParamVector};
use crate::training::TrainedModel;
use crate::transforms::{Prnn, RevNet, Transform, TransformKind};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "drills-checkpoint";
const SEPARATOR: &[u8] = b"---\n";

/// Training set a checkpoint was fitted on, enough to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetInfo {
    pub function: String,
    pub domain: Domain,
    pub n_train: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub dataset: Option<DatasetInfo>,
}

fn header(ck: &Checkpoint, params: &[f64]) -> Vec<(String, String)> {
    let m = &ck.model;
    let mut h: Vec<(String, String)> = vec![
        ("version".into(), CHECKPOINT_VERSION.to_string()),
        ("kind".into(), m.transform.kind().as_str().into()),
        ("dim".into(), m.transform.dim().to_string()),
    ];
    match &m.transform {
        Transform::Prnn(p) => {
            let sizes: Vec<String> = p.layer_sizes().iter().map(|s| s.to_string()).collect();
            h.push(("layers".into(), sizes.join(",")));
        }
        Transform::RevNet(r) => {
            h.push(("blocks".into(), r.num_blocks().to_string()));
            h.push(("hidden".into(), r.hidden().to_string()));
            h.push(("step_size".into(), format!("{:e}", r.step_size())));
        }
    }
    let hp = &m.hyper;
    h.extend([
        ("lambda1".into(), format!("{:e}", hp.lambda1)),
        ("lambda2".into(), format!("{:e}", hp.lambda2)),
        ("alpha".into(), format!("{:e}", hp.alpha)),
        ("sigma".into(), format!("{:e}", hp.sigma)),
        ("k_star".into(), hp.k_star.to_string()),
        ("revnet_bounded_derivative".into(), hp.revnet_bounded_derivative.to_string()),
        ("final_loss".into(), format!("{:e}", m.final_loss)),
        ("final_l1".into(), format!("{:e}", m.final_parts.l1)),
        ("final_l2".into(), format!("{:e}", m.final_parts.l2)),
        ("final_l3".into(), format!("{:e}", m.final_parts.l3)),
        ("adam_steps".into(), m.adam_steps.to_string()),
        ("lbfgs_steps".into(), m.lbfgs_steps.to_string()),
        ("converged".into(), m.converged.to_string()),
        ("seed".into(), m.seed.to_string()),
    ]);
    if let Some(ds) = &ck.dataset {
        h.extend([
            ("function".into(), ds.function.clone()),
            ("domain".into(), ds.domain.as_str().into()),
            ("n_train".into(), ds.n_train.to_string()),
            ("data_seed".into(), ds.seed.to_string()),
        ]);
    }
    h.push(("param_count".into(), params.len().to_string()));
    h.push(("sha256".into(), digest(params)));
    h
}

fn digest(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let params = ck.model.transform.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    for (k, v) in header(ck, params.as_slice()) {
        out.extend_from_slice(format!("{k} = {v}\n").as_bytes());
    }
    out.extend_from_slice(SEPARATOR);
    for p in params.as_slice() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck);
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing header field `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::CorruptCheckpoint(format!("bad value `{v}` for `{key}`")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    let split = bytes
        .windows(SEPARATOR.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == SEPARATOR)
        .ok_or_else(|| corrupt("no header separator"))?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not UTF-8"))?;
    let payload = &bytes[split + 1 + SEPARATOR.len()..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing magic line"));
    }
    let mut map = BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::CorruptCheckpoint(format!("malformed header line `{line}`")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let f = Fields(map);
    let version: u32 = f.parse("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let count: usize = f.parse("param_count")?;
    if payload.len() != count * 8 {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            payload.len()
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if digest(&params) != f.raw("sha256")? {
        return Err(corrupt("parameter checksum mismatch"));
    }

    let kind: TransformKind = f.parse("kind")?;
    let d: usize = f.parse("dim")?;
    let mut transform = match kind {
        TransformKind::Prnn => {
            let sizes: Vec<usize> = f
                .raw("layers")?
                .split(',')
                .map(|s| s.parse().map_err(|_| corrupt("bad layer size")))
                .collect::<Result<_>>()?;
            if sizes.first() != Some(&d) || sizes.last() != Some(&d) {
                return Err(Error::ShapeMismatch(format!("layer sizes {sizes:?} do not match dim {d}")));
            }
            let zeros = Mlp::zeros(&sizes).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            Transform::Prnn(Prnn::new(zeros.clone(), zeros)?)
        }
        TransformKind::RevNet => Transform::RevNet(
            RevNet::zeros(d, f.parse("blocks")?, f.parse("hidden")?, f.parse("step_size")?)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        ),
    };
    if transform.param_count() != count {
        return Err(Error::ShapeMismatch(format!(
            "architecture needs {} parameters, file holds {count}",
            transform.param_count()
        )));
    }
    transform.set_params(&ParamVector(params))?;

    let hyper = HyperParams {
        lambda1: f.parse("lambda1")?,
        lambda2: f.parse("lambda2")?,
        alpha: f.parse("alpha")?,
        sigma: f.parse("sigma")?,
        k_star: f.parse("k_star")?,
        omega: HyperParams::omega_pattern(d, f.parse("k_star")?),
        revnet_bounded_derivative: f.parse("revnet_bounded_derivative")?,
    };
    hyper
        .validate(d)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let model = TrainedModel {
        transform,
        hyper,
        final_loss: f.parse("final_loss")?,
        final_parts: LossParts {
            l1: f.parse("final_l1")?,
            l2: f.parse("final_l2")?,
            l3: f.parse("final_l3")?,
        },
        adam_steps: f.parse("adam_steps")?,
        lbfgs_steps: f.parse("lbfgs_steps")?,
        converged: f.parse("converged")?,
        seed: f.parse("seed")?,
    };
    let dataset = if f.0.contains_key("function") {
        Some(DatasetInfo {
            function: f.raw("function")?.to_string(),
            domain: f.parse("domain")?,
            n_train: f.parse("n_train")?,
            seed: f.parse("data_seed")?,
        })
    } else {
        None
    };
    Ok(Checkpoint { model, dataset })
}
