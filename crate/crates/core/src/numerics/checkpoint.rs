//! Versioned checkpoint container.
//!
//! Layout: an ASCII header followed by a flat little-endian `f64` payload.
//!
//! ```text
//! lragnn-checkpoint
//! version 1
//! entries <k>
//! <name> <rows> <cols> <byte offset into payload>   (k lines)
//! end
//! <payload bytes>
//! ```
//!
//! Values round-trip bit-exactly. Gradients and optimizer moments are not stored.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &str = "lragnn-checkpoint";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    let mut header = format!("{MAGIC}\nversion {VERSION}\nentries {}\n", store.len());
    let mut offset = 0usize;
    for (_, name, p) in store.iter() {
        let (r, c) = p.value.shape();
        header.push_str(&format!("{name} {r} {c} {offset}\n"));
        offset += r * c * 8;
    }
    header.push_str("end\n");
    out.write_all(header.as_bytes())?;
    for (_, _, p) in store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Error::Format("unexpected end of header".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<ParamStore> {
    if read_line(&mut input)? != MAGIC {
        return Err(Error::Format("missing checkpoint magic line".into()));
    }
    let version_line = read_line(&mut input)?;
    let version: u32 = match version_line.strip_prefix("version ") {
        Some(v) => parse(v, "version")?,
        None => return Err(Error::Format(format!("bad version line {version_line:?}"))),
    };
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let entries_line = read_line(&mut input)?;
    let count: usize = match entries_line.strip_prefix("entries ") {
        Some(v) => parse(v, "entry count")?,
        None => return Err(Error::Format(format!("bad entries line {entries_line:?}"))),
    };
    let mut specs = Vec::with_capacity(count);
    let mut expected_offset = 0usize;
    for _ in 0..count {
        let line = read_line(&mut input)?;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("bad entry line {line:?}")));
        }
        let rows: usize = parse(fields[1], "rows")?;
        let cols: usize = parse(fields[2], "cols")?;
        let offset: usize = parse(fields[3], "offset")?;
        if offset != expected_offset {
            return Err(Error::Format(format!("entry {} has offset {offset}, expected {expected_offset}", fields[0])));
        }
        expected_offset += rows * cols * 8;
        specs.push((fields[0].to_string(), rows, cols));
    }
    if read_line(&mut input)? != "end" {
        return Err(Error::Format("missing header terminator".into()));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != expected_offset {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header describes {expected_offset}",
            payload.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut cursor = 0usize;
    for (name, rows, cols) in specs {
        let n = rows * cols;
        let data = payload[cursor..cursor + n * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        cursor += n * 8;
        store.insert(name, Matrix::new(rows, cols, data)?)?;
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(store, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shapes in prop::collection::vec((1usize..5, 1usize..5), 0..5),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            for (i, (r, c)) in shapes.iter().enumerate() {
                let mut m = Matrix::uniform(*r, *c, -1e3, 1e3, &mut rng);
                if i == 0 { m.data_mut()[0] = -0.0; }
                store.insert(format!("p{i}.w"), m).unwrap();
            }
            let mut bytes = Vec::new();
            write_checkpoint(&store, &mut bytes).unwrap();
            let back = read_checkpoint(&bytes[..]).unwrap();
            prop_assert_eq!(back.len(), store.len());
            for ((_, n1, p1), (_, n2, p2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(p1.value.shape(), p2.value.shape());
                for (a, b) in p1.value.data().iter().zip(p2.value.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::filled(2, 2, 1.5)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        bytes.pop();
        assert!(matches!(read_checkpoint(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn header_is_readable_text() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::zeros(1, 2)).unwrap();
        store.insert("b", Matrix::zeros(3, 1)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        let header = String::from_utf8_lossy(&bytes[..bytes.len() - 5 * 8]);
        assert_eq!(header, "lragnn-checkpoint\nversion 1\nentries 2\na 1 2 0\nb 3 1 16\nend\n");
    }
}
