//! Checkpoint serialization.
//!
//! Layout: magic `OMQA-CKPT\x01`, a u64-LE length-prefixed UTF-8 metadata
//! block (d, gamma, vocabularies in id order, array manifest), then the raw
//! little-endian f32 arrays in manifest order. Fixed endianness, so files
//! load unchanged across platforms.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{DeepSets, Mlp, Parameters, Vocab};

const MAGIC: &[u8; 10] = b"OMQA-CKPT\x01";

fn array_manifest(p: &Parameters) -> Vec<(&'static str, usize)> {
    let d = p.d;
    vec![
        ("entity", p.entity_rows() * d),
        ("rel_center", p.vocab.relations.len() * d),
        ("rel_offset", p.vocab.relations.len() * d),
        ("attn_w1", d * d),
        ("attn_b1", d),
        ("attn_w2", d * d),
        ("attn_b2", d),
        ("ds_u1", d * d),
        ("ds_c1", d),
        ("ds_u2", d * d),
        ("ds_c2", d),
        ("ds_v", d * d),
        ("ds_c3", d),
    ]
}

fn arrays_of(p: &Parameters) -> Vec<&[f32]> {
    vec![
        &p.entity,
        &p.rel_center,
        &p.rel_offset,
        &p.attn.w1,
        &p.attn.b1,
        &p.attn.w2,
        &p.attn.b2,
        &p.deepsets.u1,
        &p.deepsets.c1,
        &p.deepsets.u2,
        &p.deepsets.c2,
        &p.deepsets.v,
        &p.deepsets.c3,
    ]
}

pub fn save(params: &Parameters, mut w: impl Write) -> Result<()> {
    let mut meta = String::new();
    meta.push_str(&format!("d = {}\n", params.d));
    meta.push_str(&format!("gamma = {}\n", params.gamma));
    meta.push_str(&format!("entities = {}\n", params.vocab.entities.len()));
    meta.push_str(&format!("concepts = {}\n", params.vocab.concepts.len()));
    meta.push_str(&format!("relations = {}\n", params.vocab.relations.len()));
    let manifest: Vec<String> = array_manifest(params)
        .iter()
        .map(|(name, len)| format!("{name}:{len}"))
        .collect();
    meta.push_str(&format!("arrays = {}\n", manifest.join(",")));
    for e in &params.vocab.entities {
        meta.push_str("e ");
        meta.push_str(e);
        meta.push('\n');
    }
    for c in &params.vocab.concepts {
        meta.push_str("c ");
        meta.push_str(c);
        meta.push('\n');
    }
    for r in &params.vocab.relations {
        meta.push_str("r ");
        meta.push_str(r);
        meta.push('\n');
    }
    w.write_all(MAGIC)?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    for arr in arrays_of(params) {
        for &x in arr {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(mut r: impl Read) -> Result<Parameters> {
    let mut magic = [0u8; 10];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic[..9] != MAGIC[..9] {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    if magic[9] != MAGIC[9] {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            magic[9]
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated metadata length".into()))?;
    let meta_len = u64::from_le_bytes(len_bytes);
    if meta_len > 1 << 30 {
        return Err(Error::Format("unreasonable metadata length".into()));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Format("truncated metadata".into()))?;
    let meta = String::from_utf8(meta_bytes)
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;

    let mut d = None;
    let mut gamma = None;
    let mut counts = [None::<usize>; 3];
    let mut arrays: Option<Vec<(String, usize)>> = None;
    let mut vocab = Vocab { entities: vec![], concepts: vec![], relations: vec![] };
    for line in meta.lines() {
        if let Some(name) = line.strip_prefix("e ") {
            vocab.entities.push(name.to_string());
        } else if let Some(name) = line.strip_prefix("c ") {
            vocab.concepts.push(name.to_string());
        } else if let Some(name) = line.strip_prefix("r ") {
            vocab.relations.push(name.to_string());
        } else if let Some((key, value)) = line.split_once(" = ") {
            match key {
                "d" => d = value.parse().ok(),
                "gamma" => gamma = value.parse().ok(),
                "entities" => counts[0] = value.parse().ok(),
                "concepts" => counts[1] = value.parse().ok(),
                "relations" => counts[2] = value.parse().ok(),
                "arrays" => {
                    let mut list = Vec::new();
                    for part in value.split(',') {
                        let (name, len) = part
                            .split_once(':')
                            .ok_or_else(|| Error::Format("bad array manifest entry".into()))?;
                        let len: usize = len
                            .parse()
                            .map_err(|_| Error::Format("bad array length".into()))?;
                        list.push((name.to_string(), len));
                    }
                    arrays = Some(list);
                }
                _ => return Err(Error::Format(format!("unknown metadata key `{key}`"))),
            }
        } else if !line.is_empty() {
            return Err(Error::Format(format!("unparseable metadata line `{line}`")));
        }
    }
    let d = d.ok_or_else(|| Error::Format("missing dimension".into()))?;
    if d == 0 || d > 65_536 {
        return Err(Error::Format("dimension out of range".into()));
    }
    let gamma = gamma.ok_or_else(|| Error::Format("missing gamma".into()))?;
    let arrays = arrays.ok_or_else(|| Error::Format("missing array manifest".into()))?;
    for (key, declared, have) in [
        ("entities", counts[0], vocab.entities.len()),
        ("concepts", counts[1], vocab.concepts.len()),
        ("relations", counts[2], vocab.relations.len()),
    ] {
        let declared =
            declared.ok_or_else(|| Error::Format(format!("missing {key} count")))?;
        if declared != have {
            return Err(Error::Format(format!("{key} count does not match vocabulary")));
        }
    }

    let mut params = Parameters {
        d,
        gamma,
        entity: vec![],
        rel_center: vec![],
        rel_offset: vec![],
        attn: Mlp { w1: vec![], b1: vec![], w2: vec![], b2: vec![] },
        deepsets: DeepSets {
            u1: vec![],
            c1: vec![],
            u2: vec![],
            c2: vec![],
            v: vec![],
            c3: vec![],
        },
        vocab,
    };
    let expected = array_manifest(&params);
    if arrays.len() != expected.len() {
        return Err(Error::Format("array manifest has wrong arity".into()));
    }
    for ((name, len), (want_name, want_len)) in arrays.iter().zip(&expected) {
        if name != want_name || len != want_len {
            return Err(Error::Format(format!(
                "array `{name}`×{len} does not match expected `{want_name}`×{want_len}"
            )));
        }
    }
    let mut read_array = |len: usize| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format("truncated array data".into()))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    params.entity = read_array(expected[0].1)?;
    params.rel_center = read_array(expected[1].1)?;
    params.rel_offset = read_array(expected[2].1)?;
    params.attn.w1 = read_array(expected[3].1)?;
    params.attn.b1 = read_array(expected[4].1)?;
    params.attn.w2 = read_array(expected[5].1)?;
    params.attn.b2 = read_array(expected[6].1)?;
    params.deepsets.u1 = read_array(expected[7].1)?;
    params.deepsets.c1 = read_array(expected[8].1)?;
    params.deepsets.u2 = read_array(expected[9].1)?;
    params.deepsets.c2 = read_array(expected[10].1)?;
    params.deepsets.v = read_array(expected[11].1)?;
    params.deepsets.c3 = read_array(expected[12].1)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after arrays".into()));
    }
    Ok(params)
}
