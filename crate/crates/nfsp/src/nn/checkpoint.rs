//! Network checkpoint files.
//!
//! Layout: 8-byte magic `NFSPNET\0`, u32 LE format version, u32 LE length of
//! the JSON-serialized [`ArchSpec`], that JSON, u64 LE parameter count, then
//! the parameters as little-endian f64 words. Round-trips are bit-exact.

use super::{ArchSpec, Network, NnError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"NFSPNET\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_network(net: &Network, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let arch = serde_json::to_vec(net.arch()).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(&(arch.len() as u32).to_le_bytes())?;
    w.write_all(&arch)?;
    w.write_all(&(net.param_count() as u64).to_le_bytes())?;
    for p in net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let arch_len = u32::from_le_bytes(u32buf) as usize;
    let mut arch_buf = vec![0u8; arch_len];
    r.read_exact(&mut arch_buf)?;
    let arch: ArchSpec =
        serde_json::from_slice(&arch_buf).map_err(|e| NnError::Format(e.to_string()))?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut params = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut f64buf)?;
        params.push(f64::from_le_bytes(f64buf));
    }
    Network::from_parts(arch, params)
}
