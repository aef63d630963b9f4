//! Prior files: `b"LMPR"`, a little-endian `u32` header length, a JSON
//! header, then per axis the weights, means and variances as `f64` LE.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gmm, GmmPrior};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LMPR";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    components: usize,
    vertices: usize,
    axes: Vec<String>,
    variance_floor: f64,
}

pub fn prior_bytes(prior: &GmmPrior) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        components: prior.components(),
        vertices: prior.num_vertices(),
        axes: vec!["x".into(), "y".into(), "z".into()],
        variance_floor: prior.variance_floor,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for g in &prior.axes {
        for x in g.weights.iter().chain(&g.means).chain(&g.variances) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn prior_from_bytes(bytes: &[u8], name: &str) -> Result<GmmPrior> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(name, "missing LMPR header"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::format(name, "truncated header"))?;
    let h: Header = serde_json::from_slice(body).map_err(|e| Error::format(name, e.to_string()))?;
    if h.version != VERSION || h.axes.len() != 3 {
        return Err(Error::format(name, format!("unsupported prior version {}", h.version)));
    }
    let (k, n) = (h.components, h.vertices);
    let per_axis = k + 2 * k * n;
    let floats: Vec<f64> = bytes[8 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if (bytes.len() - 8 - hlen) != 8 * 3 * per_axis {
        return Err(Error::format(name, format!("expected {} floats, found {}", 3 * per_axis, floats.len())));
    }
    let axis = |d: usize| {
        let b = &floats[d * per_axis..(d + 1) * per_axis];
        Gmm {
            dim: n,
            weights: b[..k].to_vec(),
            means: b[k..k + k * n].to_vec(),
            variances: b[k + k * n..].to_vec(),
        }
    };
    let prior = GmmPrior {
        axes: [axis(0), axis(1), axis(2)],
        variance_floor: h.variance_floor,
    };
    prior.validate().map_err(|e| Error::format(name, e.to_string()))?;
    Ok(prior)
}

pub fn write_prior(path: &Path, prior: &GmmPrior) -> Result<()> {
    std::fs::write(path, prior_bytes(prior)?)?;
    Ok(())
}

pub fn read_prior(path: &Path) -> Result<GmmPrior> {
    prior_from_bytes(&std::fs::read(path)?, &path.display().to_string())
}
