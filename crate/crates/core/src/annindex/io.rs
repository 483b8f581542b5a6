//! Index files: magic `PFIX`, u16 version, u8 backend tag, parameter block,
//! record table, raw vectors, backend payload. Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::hkmeans::{HkNode, HkTree};
use super::kdtree::{KdForest, KdTree, Node};
use super::pq::{Codes, PqIndex};
use super::{Backend, IndexHandle, IndexParams, RecordTable, Structure, DIM};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PFIX";
const VERSION: u16 = 1;
const NONE_U64: u64 = u64::MAX;

pub fn save_index(index: &IndexHandle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_index(index, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<IndexHandle> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_index(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn opt_u64(v: Option<usize>) -> u64 {
    v.map_or(NONE_U64, |x| x as u64)
}

fn from_opt_u64(v: u64) -> Option<usize> {
    (v != NONE_U64).then_some(v as usize)
}

pub fn write_index<W: Write>(index: &IndexHandle, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u8(index.backend.code())?;

    let p = &index.params;
    w.write_u64::<LE>(opt_u64(p.max_leaf_checks))?;
    w.write_f32::<LE>(p.epsilon)?;
    for v in [p.num_trees, p.kd_leaf_size, p.pq_subvectors, p.pq_centroids, p.pq_iterations] {
        w.write_u32::<LE>(v as u32)?;
    }
    w.write_u64::<LE>(opt_u64(p.pq_rerank))?;
    w.write_u64::<LE>(p.pq_train_size as u64)?;
    for v in [p.branching, p.hk_leaf_size, p.hk_iterations] {
        w.write_u32::<LE>(v as u32)?;
    }
    w.write_u64::<LE>(index.seed)?;
    w.write_f64::<LE>(index.build_seconds)?;

    let t = &index.records;
    w.write_u32::<LE>(t.image_names.len() as u32)?;
    for name in &t.image_names {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
    }
    w.write_u32::<LE>(t.len() as u32)?;
    for (img, ord) in t.image_of.iter().zip(&t.ordinals) {
        w.write_u32::<LE>(*img)?;
        w.write_u32::<LE>(*ord)?;
    }
    write_f32s(w, &index.vectors)?;

    match &index.structure {
        Structure::Brute => {}
        Structure::Kd(f) => {
            w.write_u32::<LE>(f.leaf_size as u32)?;
            w.write_u32::<LE>(f.trees.len() as u32)?;
            for tree in &f.trees {
                w.write_u32::<LE>(tree.nodes.len() as u32)?;
                for nd in &tree.nodes {
                    w.write_u32::<LE>(nd.dim)?;
                    w.write_f32::<LE>(nd.split)?;
                    w.write_u32::<LE>(nd.a)?;
                    w.write_u32::<LE>(nd.b)?;
                }
                write_u32s(w, &tree.perm)?;
            }
        }
        Structure::Pq(pq) => {
            w.write_u32::<LE>(pq.n as u32)?;
            w.write_u32::<LE>(pq.m as u32)?;
            w.write_u32::<LE>(pq.ksub as u32)?;
            write_f32s(w, &pq.codebooks)?;
            match &pq.codes {
                Codes::U8(c) => {
                    w.write_u8(1)?;
                    w.write_u64::<LE>(c.len() as u64)?;
                    w.write_all(c)?;
                }
                Codes::U16(c) => {
                    w.write_u8(2)?;
                    w.write_u64::<LE>(c.len() as u64)?;
                    for &v in c {
                        w.write_u16::<LE>(v)?;
                    }
                }
            }
        }
        Structure::HKMeans(h) => {
            w.write_u32::<LE>(h.nodes.len() as u32)?;
            for nd in &h.nodes {
                for v in [nd.first_child, nd.count, nd.start, nd.end] {
                    w.write_u32::<LE>(v)?;
                }
            }
            write_f32s(w, &h.centers)?;
            write_f32s(w, &h.radii)?;
            write_u32s(w, &h.perm)?;
        }
    }
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> std::io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    for &x in v {
        w.write_f32::<LE>(x)?;
    }
    Ok(())
}

fn write_u32s<W: Write>(w: &mut W, v: &[u32]) -> std::io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    for &x in v {
        w.write_u32::<LE>(x)?;
    }
    Ok(())
}

struct Reader<'a, R: Read> {
    r: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn io(e: std::io::Error) -> Error {
        Error::io("<index stream>", e)
    }

    fn u8(&mut self) -> Result<u8> {
        self.r.read_u8().map_err(Self::io)
    }

    fn u16(&mut self) -> Result<u16> {
        self.r.read_u16::<LE>().map_err(Self::io)
    }

    fn u32(&mut self) -> Result<u32> {
        self.r.read_u32::<LE>().map_err(Self::io)
    }

    fn u64(&mut self) -> Result<u64> {
        self.r.read_u64::<LE>().map_err(Self::io)
    }

    fn f32(&mut self) -> Result<f32> {
        self.r.read_f32::<LE>().map_err(Self::io)
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(Error::Format(format!("array length {n} exceeds plausible bound {limit}")));
        }
        Ok(n)
    }

    fn f32s(&mut self, limit: usize) -> Result<Vec<f32>> {
        let n = self.len(limit)?;
        let mut v = vec![0f32; n];
        self.r.read_f32_into::<LE>(&mut v).map_err(Self::io)?;
        Ok(v)
    }

    fn u32s(&mut self, limit: usize) -> Result<Vec<u32>> {
        let n = self.len(limit)?;
        let mut v = vec![0u32; n];
        self.r.read_u32_into::<LE>(&mut v).map_err(Self::io)?;
        Ok(v)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(Self::io)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn read_index<R: Read>(r: &mut R) -> Result<IndexHandle> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(Reader::<R>::io)?;
    if &magic != MAGIC {
        return Err(Error::VersionMismatch(format!("not an index file (magic {magic:?})")));
    }
    let mut rd = Reader { r };
    let version = rd.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch(format!("index version {version}, expected {VERSION}")));
    }
    let backend = Backend::from_code(rd.u8()?).ok_or_else(|| Error::Format("unknown backend tag".into()))?;

    let max_leaf_checks = from_opt_u64(rd.u64()?);
    let epsilon = rd.f32()?;
    let num_trees = rd.u32()? as usize;
    let kd_leaf_size = rd.u32()? as usize;
    let pq_subvectors = rd.u32()? as usize;
    let pq_centroids = rd.u32()? as usize;
    let pq_iterations = rd.u32()? as usize;
    let pq_rerank = from_opt_u64(rd.u64()?);
    let pq_train_size = rd.u64()? as usize;
    let branching = rd.u32()? as usize;
    let hk_leaf_size = rd.u32()? as usize;
    let hk_iterations = rd.u32()? as usize;
    let params = IndexParams {
        max_leaf_checks,
        epsilon,
        num_trees,
        kd_leaf_size,
        pq_subvectors,
        pq_centroids,
        pq_iterations,
        pq_rerank,
        pq_train_size,
        branching,
        hk_leaf_size,
        hk_iterations,
    };
    let seed = rd.u64()?;
    let build_seconds = rd.r.read_f64::<LE>().map_err(Reader::<R>::io)?;

    let n_images = rd.u32()? as usize;
    let mut image_names = Vec::with_capacity(n_images.min(1 << 20));
    for _ in 0..n_images {
        image_names.push(rd.string()?);
    }
    let n = rd.u32()? as usize;
    let mut image_of = Vec::with_capacity(n.min(1 << 24));
    let mut ordinals = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let img = rd.u32()?;
        if img as usize >= n_images {
            return Err(Error::Format(format!("record references image {img} of {n_images}")));
        }
        image_of.push(img);
        ordinals.push(rd.u32()?);
    }
    let records = RecordTable {
        image_names,
        image_of,
        ordinals,
    };
    let vectors = rd.f32s(n * DIM)?;
    if vectors.len() != n * DIM {
        return Err(Error::Format("vector block size does not match record count".into()));
    }
    let structure = match backend {
        Backend::Brute => Structure::Brute,
        Backend::KdTree | Backend::KdForest => {
            let leaf_size = rd.u32()? as usize;
            let count = rd.u32()? as usize;
            let mut trees = Vec::with_capacity(count.min(64));
            for _ in 0..count {
                let nn = rd.u32()? as usize;
                let mut nodes = Vec::with_capacity(nn.min(2 * n + 1));
                for _ in 0..nn {
                    nodes.push(Node {
                        dim: rd.u32()?,
                        split: rd.f32()?,
                        a: rd.u32()?,
                        b: rd.u32()?,
                    });
                }
                let perm = rd.u32s(n)?;
                trees.push(KdTree { nodes, perm });
            }
            Structure::Kd(KdForest { trees, leaf_size })
        }
        Backend::Pq => {
            let pn = rd.u32()? as usize;
            let m = rd.u32()? as usize;
            let ksub = rd.u32()? as usize;
            let codebooks = rd.f32s(ksub * DIM)?;
            let codes = match rd.u8()? {
                1 => {
                    let len = rd.len(n * DIM)?;
                    let mut c = vec![0u8; len];
                    rd.r.read_exact(&mut c).map_err(Reader::<R>::io)?;
                    Codes::U8(c)
                }
                2 => {
                    let len = rd.len(n * DIM)?;
                    let mut c = vec![0u16; len];
                    rd.r.read_u16_into::<LE>(&mut c).map_err(Reader::<R>::io)?;
                    Codes::U16(c)
                }
                t => return Err(Error::Format(format!("unknown pq code width tag {t}"))),
            };
            Structure::Pq(PqIndex {
                n: pn,
                m,
                ksub,
                codebooks,
                codes,
            })
        }
        Backend::HKMeans => {
            let nn = rd.u32()? as usize;
            let mut nodes = Vec::with_capacity(nn.min(2 * n + 1));
            for _ in 0..nn {
                nodes.push(HkNode {
                    first_child: rd.u32()?,
                    count: rd.u32()?,
                    start: rd.u32()?,
                    end: rd.u32()?,
                });
            }
            let centers = rd.f32s(nn * DIM)?;
            let radii = rd.f32s(nn)?;
            let perm = rd.u32s(n)?;
            Structure::HKMeans(HkTree {
                nodes,
                centers,
                radii,
                perm,
            })
        }
    };
    Ok(IndexHandle {
        backend,
        params,
        seed,
        records,
        vectors,
        structure,
        build_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::build;
    use crate::annindex::testdata::{gaussian_queries, gaussian_records};

    #[test]
    fn round_trip_preserves_queries() {
        let rec = gaussian_records(2500, 41);
        let queries = gaussian_queries(100, 42);
        let dir = tempfile::tempdir().unwrap();
        for b in Backend::ALL {
            let idx = build(&rec, b, &IndexParams::default(), 8).unwrap();
            let path = dir.path().join(format!("{b}.pfix"));
            save_index(&idx, &path).unwrap();
            let back = load_index(&path).unwrap();
            assert_eq!(back.stats(), idx.stats());
            assert_eq!(back.records(), idx.records());
            for q in &queries {
                assert_eq!(back.knn(q, 5), idx.knn(q, 5), "{b}");
            }
        }
    }

    #[test]
    fn wrong_magic_is_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfix");
        std::fs::write(&path, b"NOPE\x01\x00\x00").unwrap();
        assert!(matches!(load_index(&path), Err(Error::VersionMismatch(_))));
        let mut bytes = b"PFIX".to_vec();
        bytes.extend_from_slice(&99u16.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_index(&path), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let idx = build(&gaussian_records(5, 1), Backend::Brute, &IndexParams::default(), 0).unwrap();
        let err = save_index(&idx, "/nonexistent-dir/sub/index.pfix").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(matches!(load_index("/nonexistent-dir/x.pfix"), Err(Error::Io { .. })));
    }
}
