//! Network checkpoints: every array as an `FPT1` container concatenated in
//! `params.fpt`, indexed by `manifest.txt` (name, shape, byte offset).
//!
//! Parameters, batch-norm running statistics and Adam moments are all
//! stored, so training can resume exactly. Payloads are f32, which makes the
//! round trip bit-exact for f32 networks only.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{build_unet, Network, NetworkSpec, Scalar};

use super::container::Container;

pub const PARAMS_FILE: &str = "params.fpt";
pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "framepool-checkpoint 1";

/// Header fields of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    /// Bank label (`none` for direct learning).
    pub bank: String,
    pub spec: NetworkSpec,
    pub precision: String,
    pub adam_step: u64,
}

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Every array of the network with its name, in a fixed order.
fn arrays<T: Scalar>(net: &Network<T>) -> Vec<(String, Vec<usize>, Vec<T>)> {
    let mut out = Vec::new();
    for p in net.params() {
        out.push((p.name.clone(), p.shape.clone(), p.data.clone()));
    }
    for (i, r) in net.running().iter().enumerate() {
        out.push((format!("bn{i}.running_mean"), vec![r.mean.len()], r.mean.clone()));
        out.push((format!("bn{i}.running_var"), vec![r.var.len()], r.var.clone()));
    }
    for (k, p) in net.params().iter().enumerate() {
        out.push((format!("adam.m.{}", p.name), p.shape.clone(), net.adam.m[k].clone()));
        out.push((format!("adam.v.{}", p.name), p.shape.clone(), net.adam.v[k].clone()));
    }
    out
}

pub fn save<T: Scalar>(dir: &Path, net: &Network<T>, bank_label: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let s = net.spec();
    let mut manifest = format!(
        "{MANIFEST_MAGIC}\nbank={bank_label}\nvariant={}\nin_channels={}\nbase_depth={}\nn_levels={}\nimage_side={}\ngrowth={}\nprecision={}\nadam_step={}\n",
        s.variant, s.in_channels, s.base_depth, s.n_levels, s.image_side, s.growth, T::NAME, net.adam.step
    );
    let mut bytes = Vec::new();
    for (name, shape, data) in arrays(net) {
        let offset = bytes.len();
        let c = Container::new(shape.clone(), data.iter().map(|v| v.as_f64() as f32).collect())?;
        c.write_to(&mut bytes);
        manifest.push_str(&format!("{name} {} {offset}\n", dims_text(&shape)));
    }
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn read_header(dir: &Path) -> Result<CheckpointHeader> {
    Ok(read_manifest(dir)?.0)
}

type Entries = Vec<(String, String, usize)>;

fn read_manifest(dir: &Path) -> Result<(CheckpointHeader, Entries)> {
    let path = dir.join(MANIFEST_FILE);
    let origin = path.display().to_string();
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::format(origin.clone(), format!("cannot read manifest: {e}")))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_MAGIC) {
        return Err(Error::format(origin, "not a checkpoint manifest"));
    }
    let mut fields = HashMap::new();
    let mut entries = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, dims, offset] = parts.as_slice() else {
            return Err(Error::format(origin, format!("bad entry '{line}'")));
        };
        let offset = offset
            .parse()
            .map_err(|_| Error::format(origin.clone(), format!("bad offset in '{line}'")))?;
        entries.push((name.to_string(), dims.to_string(), offset));
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::format(origin.clone(), format!("manifest lacks '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(origin.clone(), format!("bad value for '{k}'")))
    };
    let spec = NetworkSpec {
        variant: num("variant")?,
        in_channels: num("in_channels")?,
        base_depth: num("base_depth")?,
        n_levels: num("n_levels")?,
        image_side: num("image_side")?,
        growth: get("growth")?.parse()?,
    };
    let header = CheckpointHeader {
        bank: get("bank")?,
        spec,
        precision: get("precision")?,
        adam_step: num("adam_step")? as u64,
    };
    Ok((header, entries))
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(Network<T>, CheckpointHeader)> {
    let (header, entries) = read_manifest(dir)?;
    let path = dir.join(PARAMS_FILE);
    let origin = path.display().to_string();
    let bytes = fs::read(&path)?;
    let mut net: Network<T> = build_unet(header.spec, 0)?;
    let expected = arrays(&net);
    if entries.len() != expected.len() {
        return Err(Error::Consistency(format!(
            "{origin}: {} arrays stored, network needs {}",
            entries.len(),
            expected.len()
        )));
    }
    let mut values: Vec<Vec<T>> = Vec::with_capacity(entries.len());
    for ((name, dims, offset), (want_name, want_shape, _)) in entries.iter().zip(&expected) {
        if name != want_name || *dims != dims_text(want_shape) {
            return Err(Error::Consistency(format!(
                "{origin}: entry {name} {dims} does not match expected {want_name} {}",
                dims_text(want_shape)
            )));
        }
        let slice = bytes
            .get(*offset..)
            .ok_or_else(|| Error::format(origin.clone(), format!("offset {offset} past end")))?;
        let (c, _) = Container::parse(slice, &origin)?;
        if c.dims != *want_shape {
            return Err(Error::format(origin, format!("{name}: stored dims {:?}", c.dims)));
        }
        values.push(c.data.iter().map(|&v| T::of(v as f64)).collect());
    }
    let mut it = values.into_iter();
    let np = net.params().len();
    for p in net.params_mut() {
        p.data = it.next().expect("counted");
    }
    for r in net.running_mut() {
        r.mean = it.next().expect("counted");
        r.var = it.next().expect("counted");
    }
    for k in 0..np {
        net.adam.m[k] = it.next().expect("counted");
        net.adam.v[k] = it.next().expect("counted");
    }
    net.adam.step = header.adam_step;
    Ok((net, header))
}
