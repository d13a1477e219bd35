//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian u32, all floats little-endian f64,
//! matrices row-major:
//!
//! ```text
//! magic "CLAD" | version | D | K | ratio | C | flags
//! centers (D*K) | transforms 0..K-1 (each D*D)
//! norm_in gain (D) | norm_in bias (D) | norm_mid gain (D) | norm_mid bias (D)
//! W1 (D*ratio*D) | b1 (ratio*D) | W2 (ratio*D*D) | b2 (D)
//! W_hd (D*C) | b_hd (C)
//! [flags bit 0 set: input_dim (u32) | projection (input_dim*D)]
//! ```
//!
//! Flags bit 0 records an embedded backbone projection; runs that train the
//! backbone set it so evaluation can be reproduced from the file alone. The
//! norm epsilons are structural constants and are not serialized.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use cladapter_core::adapter::{AdapterParams, DEFAULT_L2_EPS, DEFAULT_NORM_EPS};
use cladapter_core::finetune::HeadParams;
use cladapter_core::numerics::{AffineNorm, Matrix};

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"CLAD";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_BACKBONE: u32 = 1;

/// Adapter plus head (plus, optionally, the backbone projection).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub adapter: AdapterParams,
    pub head: HeadParams,
    pub backbone_projection: Option<Matrix>,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Format(msg.into()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let adapter = &ckpt.adapter;
    let head = &ckpt.head;
    let d = adapter.d();
    if head.d() != d {
        return format_err(format!(
            "adapter width {} and head width {} disagree",
            d,
            head.d()
        ));
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    let flags = if ckpt.backbone_projection.is_some() {
        FLAG_BACKBONE
    } else {
        0
    };
    for v in [
        FORMAT_VERSION,
        d as u32,
        adapter.k() as u32,
        adapter.ratio as u32,
        head.classes() as u32,
        flags,
    ] {
        buf.write_u32::<LittleEndian>(v)?;
    }
    for v in adapter.flatten() {
        buf.write_f64::<LittleEndian>(v)?;
    }
    for v in head.flatten() {
        buf.write_f64::<LittleEndian>(v)?;
    }
    if let Some(projection) = &ckpt.backbone_projection {
        if projection.cols() != d {
            return format_err(format!(
                "backbone projection is {}x{}, expected output width {}",
                projection.rows(),
                projection.cols(),
                d
            ));
        }
        buf.write_u32::<LittleEndian>(projection.rows() as u32)?;
        for v in projection.data() {
            buf.write_f64::<LittleEndian>(*v)?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(&bytes);

    let mut magic = [0u8; 4];
    cursor.read_exact(&mut magic)?;
    if magic != MAGIC {
        return format_err(format!(
            "bad magic {:02x?}, expected {:02x?} (\"CLAD\")",
            magic, MAGIC
        ));
    }
    let version = cursor.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return format_err(format!(
            "unsupported format version {version}, this build reads version {FORMAT_VERSION}"
        ));
    }
    let d = cursor.read_u32::<LittleEndian>()? as usize;
    let k = cursor.read_u32::<LittleEndian>()? as usize;
    let ratio = cursor.read_u32::<LittleEndian>()? as usize;
    let c = cursor.read_u32::<LittleEndian>()? as usize;
    let flags = cursor.read_u32::<LittleEndian>()?;
    for (name, v) in [("D", d), ("K", k), ("ratio", ratio), ("C", c)] {
        if v == 0 {
            return format_err(format!("dimension {name} must be >= 1, header says 0"));
        }
    }
    if flags & !FLAG_BACKBONE != 0 {
        return format_err(format!("unknown flag bits {flags:#x}"));
    }
    let has_backbone = flags & FLAG_BACKBONE != 0;

    // Validate the byte budget against the header before reading arrays, so
    // inconsistent dimensions are reported as such.
    let adapter_entries = cladapter_core::adapter::adapter_param_count(d, k, ratio);
    let head_entries = d * c + c;
    let mut expected = (adapter_entries + head_entries) * 8;
    let header_len = cursor.position() as usize;
    let remaining = bytes.len() - header_len;
    let input_dim = if has_backbone {
        if remaining < 4 {
            return Err(CliError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "checkpoint truncated before the backbone input dimension",
            )));
        }
        let mut peek = std::io::Cursor::new(&bytes[bytes.len() - remaining..]);
        // input_dim sits after the fixed arrays; read it once the budget of
        // the fixed part is known to be present.
        if remaining < expected + 4 {
            return Err(CliError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "checkpoint truncated or dims inconsistent: header \
                     (D={d}, K={k}, ratio={ratio}, C={c}, flags={flags}) implies \
                     at least {} parameter bytes, file holds {remaining}",
                    expected + 4
                ),
            )));
        }
        peek.set_position(expected as u64);
        let input_dim = peek.read_u32::<LittleEndian>()? as usize;
        if input_dim == 0 {
            return format_err("backbone input dimension must be >= 1, header says 0");
        }
        expected += 4 + input_dim * d * 8;
        Some(input_dim)
    } else {
        None
    };
    if remaining < expected {
        return Err(CliError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!(
                "checkpoint truncated or dims inconsistent: header \
                 (D={d}, K={k}, ratio={ratio}, C={c}, flags={flags}) implies \
                 {expected} parameter bytes, file holds {remaining}"
            ),
        )));
    }
    if remaining > expected {
        return format_err(format!(
            "trailing data: header (D={d}, K={k}, ratio={ratio}, C={c}, flags={flags}) \
             implies {expected} parameter bytes, file holds {remaining}"
        ));
    }

    let read_f64s = |cursor: &mut std::io::Cursor<&Vec<u8>>, n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(cursor.read_f64::<LittleEndian>()?);
        }
        Ok(out)
    };

    let mut adapter = AdapterParams {
        centers: Matrix::zeros(d, k),
        transforms: (0..k).map(|_| Matrix::zeros(d, d)).collect(),
        norm_in: AffineNorm::identity(d, DEFAULT_NORM_EPS),
        norm_mid: AffineNorm::identity(d, DEFAULT_NORM_EPS),
        w1: Matrix::zeros(d, ratio * d),
        b1: vec![0.0; ratio * d],
        w2: Matrix::zeros(ratio * d, d),
        b2: vec![0.0; d],
        ratio,
        l2_eps: DEFAULT_L2_EPS,
    };
    let flat = read_f64s(&mut cursor, adapter_entries)?;
    adapter.set_flatten(&flat)?;

    let mut head = HeadParams::zeros(d, c);
    let flat = read_f64s(&mut cursor, head_entries)?;
    head.set_flatten(&flat)?;

    let backbone_projection = match input_dim {
        Some(input_dim) => {
            let stored = cursor.read_u32::<LittleEndian>()? as usize;
            debug_assert_eq!(stored, input_dim);
            let data = read_f64s(&mut cursor, input_dim * d)?;
            Some(Matrix::from_vec(input_dim, d, data)?)
        }
        None => None,
    };

    Ok(Checkpoint {
        adapter,
        head,
        backbone_projection,
    })
}
