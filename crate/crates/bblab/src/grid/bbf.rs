//! BBF1 on-disk field format.
//!
//! Layout: magic bytes `BBF1`, then little-endian u32 `d`, u32 `n`, then
//! n^d little-endian f64 samples in row-major order. Round-trips are
//! bit-exact.

use super::{ScalarField, TorusGrid};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BBF1";

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(g.d() as u32).to_le_bytes())?;
    out.write_all(&(g.n() as u32).to_le_bytes())?;
    for v in field.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut inp = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", magic)));
    }
    let mut word = [0u8; 4];
    inp.read_exact(&mut word)?;
    let d = u32::from_le_bytes(word) as usize;
    inp.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    let grid = TorusGrid::new(d, n)
        .map_err(|e| Error::Format(format!("header (d={d}, n={n}): {e}")))?;
    let mut data = Vec::with_capacity(grid.len());
    let mut sample = [0u8; 8];
    for _ in 0..grid.len() {
        inp.read_exact(&mut sample)
            .map_err(|_| Error::Format("payload shorter than n^d samples".into()))?;
        data.push(f64::from_le_bytes(sample));
    }
    // Trailing bytes mean the header lied about the payload size.
    if inp.read(&mut sample)? != 0 {
        return Err(Error::Format("payload longer than n^d samples".into()));
    }
    ScalarField::from_vec(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = TorusGrid::new(2, 8).unwrap();
        let mut f = ScalarField::from_fn(g, |_| rng.gen_range(-1e3..1e3));
        f.data_mut()[0] = -0.0;
        f.data_mut()[1] = f64::MIN_POSITIVE / 2.0; // subnormal
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bbf");
        write_field(&path, &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.grid(), g);
        for (a, b) in f.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_corrupt_headers_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bbf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_field(&path).is_err());

        let g = TorusGrid::new(1, 8).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let good = dir.path().join("good.bbf");
        write_field(&good, &f).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_field(&path), Err(Error::Format(_))));
    }
}
