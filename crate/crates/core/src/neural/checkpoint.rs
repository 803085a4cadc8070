//! Checkpoint container: a versioned header, a JSON shape manifest, and
//! raw little-endian parameter/moment buffers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::net::{NetConfig, PolicyValueNet};
use crate::neural::optim::RmsProp;

const MAGIC: &[u8; 4] = b"RTCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    lr: f64,
    decay: f64,
    epsilon: f64,
    buffers: Vec<BufferEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: NetConfig,
    buffers: Vec<BufferEntry>,
    optimizer: Option<OptimizerEntry>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &PolicyValueNet,
    optimizer: Option<&RmsProp>,
) -> Result<()> {
    let path = path.as_ref();
    let names = net.buffer_names();
    let params = net.param_buffers();
    let manifest = Manifest {
        config: net.config().clone(),
        buffers: names
            .iter()
            .zip(&params)
            .map(|(name, buf)| BufferEntry {
                name: name.clone(),
                dtype: "f32".into(),
                len: buf.len(),
            })
            .collect(),
        optimizer: optimizer.map(|opt| OptimizerEntry {
            lr: opt.lr,
            decay: opt.decay,
            epsilon: opt.epsilon,
            buffers: names
                .iter()
                .zip(opt.moments())
                .map(|(name, buf)| BufferEntry {
                    name: format!("moment.{name}"),
                    dtype: "f64".into(),
                    len: buf.len(),
                })
                .collect(),
        }),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        out.write_all(bytes).map_err(|e| io_err(path, e))
    };
    write(&mut out, MAGIC)?;
    write(&mut out, &VERSION.to_le_bytes())?;
    write(&mut out, &(manifest_bytes.len() as u64).to_le_bytes())?;
    write(&mut out, &manifest_bytes)?;
    for buf in &params {
        for v in *buf {
            write(&mut out, &v.to_le_bytes())?;
        }
    }
    if let Some(opt) = optimizer {
        for buf in opt.moments() {
            for v in buf {
                write(&mut out, &v.to_le_bytes())?;
            }
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyValueNet, Option<RmsProp>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint".into()));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word).map_err(|e| io_err(path, e))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    reader
        .read_exact(&mut len_bytes)
        .map_err(|e| io_err(path, e))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    reader
        .read_exact(&mut manifest_bytes)
        .map_err(|e| io_err(path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;

    let mut net = PolicyValueNet::zeroed(manifest.config.clone())?;
    {
        let names = net.buffer_names();
        let bufs = net.param_buffers_mut();
        if names.len() != manifest.buffers.len() {
            return Err(Error::Checkpoint("buffer count mismatch".into()));
        }
        for ((name, buf), entry) in names.iter().zip(bufs).zip(&manifest.buffers) {
            if entry.name != *name || entry.dtype != "f32" || entry.len != buf.len() {
                return Err(Error::Checkpoint(format!(
                    "buffer '{}' does not match the network shape",
                    entry.name
                )));
            }
            let mut raw = vec![0u8; entry.len * 4];
            reader.read_exact(&mut raw).map_err(|e| io_err(path, e))?;
            for (v, chunk) in buf.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }

    let optimizer = match manifest.optimizer {
        None => None,
        Some(entry) => {
            let mut moments = Vec::with_capacity(entry.buffers.len());
            for spec in &entry.buffers {
                if spec.dtype != "f64" {
                    return Err(Error::Checkpoint(format!(
                        "moment '{}' has dtype {}",
                        spec.name, spec.dtype
                    )));
                }
                let mut raw = vec![0u8; spec.len * 8];
                reader.read_exact(&mut raw).map_err(|e| io_err(path, e))?;
                moments.push(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect::<Vec<f64>>(),
                );
            }
            Some(RmsProp::from_moments(
                entry.lr,
                entry.decay,
                entry.epsilon,
                moments,
            ))
        }
    };
    Ok((net, optimizer))
}
