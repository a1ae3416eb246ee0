use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use super::npy::{expect, read_header, write_header, Header};
use super::{pack, Dataset, FactorTable, Source, CANVAS, DSPRITES_BASES, PIXELS};
use crate::error::{Error, Result};

const IMGS: &str = "imgs";
const CLASSES: &str = "latents_classes";

fn open_member<'a, R: Read + Seek>(zip: &'a mut ZipArchive<R>, name: &str) -> Result<zip::read::ZipFile<'a, R>> {
    let with_ext = format!("{name}.npy");
    let found = zip
        .file_names()
        .filter_map(|n| n.ok())
        .find(|n| *n == with_ext || *n == name)
        .map(|n| n.into_owned())
        .ok_or_else(|| Error::format(name, "member missing from archive"))?;
    zip.by_name(&found).map_err(|e| Error::format(name, e.to_string()))
}

/// Loads the official sprite archive (full 737 280-image grid).
pub fn load_archive(path: &Path) -> Result<Dataset> {
    load_archive_with_bases(path, &DSPRITES_BASES)
}

/// Loads an archive laid out like the official one over an arbitrary full
/// factor grid. Images are placed at the canonical index of their classes.
pub fn load_archive_with_bases(path: &Path, bases: &[usize]) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut zip = ZipArchive::new(BufReader::new(file)).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let grid = FactorTable::full_grid(bases)?;
    let n = grid.len();
    let k = bases.len();

    let order = {
        let mut r = open_member(&mut zip, CLASSES)?;
        let h = read_header(&mut r, CLASSES)?;
        expect(&h, CLASSES, &["<i8"], &[Some(n), Some(k + 1)])?;
        let mut raw = vec![0u8; n * (k + 1) * 8];
        r.read_exact(&mut raw)
            .map_err(|e| Error::format(CLASSES, format!("truncated data: {e}")))?;
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut row = vec![0u32; k];
        for (i, rec) in raw.chunks_exact((k + 1) * 8).enumerate() {
            let vals: Vec<i64> = rec.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect();
            if vals[0] != 0 {
                return Err(Error::format(CLASSES, format!("row {i}: colour column is {} not 0", vals[0])));
            }
            for (f, &v) in vals[1..].iter().enumerate() {
                if v < 0 || v as usize >= bases[f] {
                    return Err(Error::format(CLASSES, format!("row {i}: factor {f} class {v} out of range")));
                }
                row[f] = v as u32;
            }
            let idx = grid.index(&row)?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::format(CLASSES, format!("row {i}: duplicate class tuple {row:?}")));
            }
            order.push(idx);
        }
        order
    };

    let mut bits = vec![0u64; n * PIXELS / 64];
    {
        let mut r = open_member(&mut zip, IMGS)?;
        let h = read_header(&mut r, IMGS)?;
        expect(&h, IMGS, &["|u1", "<u1"], &[Some(n), Some(CANVAS), Some(CANVAS)])?;
        let mut r = BufReader::with_capacity(1 << 20, r);
        let mut img = vec![0u8; PIXELS];
        let mut packed = Vec::with_capacity(PIXELS / 64);
        for (i, &dst) in order.iter().enumerate() {
            r.read_exact(&mut img)
                .map_err(|e| Error::format(IMGS, format!("truncated at image {i}: {e}")))?;
            packed.clear();
            pack(&img, &mut packed).map_err(|e| Error::format(IMGS, format!("image {i}: {e}")))?;
            bits[dst * PIXELS / 64..(dst + 1) * PIXELS / 64].copy_from_slice(&packed);
        }
    }
    Dataset::from_bits(bits, grid, Source::Archive(path.to_path_buf()))
}

/// Writes `ds` in the archive layout read by [`load_archive_with_bases`].
pub fn write_archive(ds: &Dataset, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let zerr = |e: zip::result::ZipError| Error::io(path, std::io::Error::other(e));
    let file = File::create(path).map_err(io)?;
    let mut zip = ZipWriter::new(BufWriter::new(file));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .large_file(ds.len() * PIXELS >= u32::MAX as usize);
    let n = ds.len();
    let k = ds.factors.num_factors();

    zip.start_file(format!("{IMGS}.npy"), opts).map_err(zerr)?;
    let header = Header {
        descr: "|u1".into(),
        fortran_order: false,
        shape: vec![n, CANVAS, CANVAS],
    };
    write_header(&mut zip, &header).map_err(io)?;
    for i in 0..n {
        zip.write_all(&ds.image(i)).map_err(io)?;
    }

    zip.start_file(format!("{CLASSES}.npy"), opts).map_err(zerr)?;
    let header = Header {
        descr: "<i8".into(),
        fortran_order: false,
        shape: vec![n, k + 1],
    };
    write_header(&mut zip, &header).map_err(io)?;
    for i in 0..n {
        zip.write_all(&0i64.to_le_bytes()).map_err(io)?;
        for &c in ds.factors.classes(i) {
            zip.write_all(&(c as i64).to_le_bytes()).map_err(io)?;
        }
    }
    zip.finish().map_err(zerr)?.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_procedural;

    const BASES: [usize; 5] = [3, 2, 2, 2, 2];

    fn write_members(path: &Path, members: &[(&str, Vec<u8>)], method: CompressionMethod) {
        let mut zip = ZipWriter::new(File::create(path).unwrap());
        let opts = SimpleFileOptions::default().compression_method(method);
        for (name, bytes) in members {
            zip.start_file(*name, opts).unwrap();
            zip.write_all(bytes).unwrap();
        }
        zip.finish().unwrap();
    }

    fn npy(descr: &str, shape: Vec<usize>, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let h = Header {
            descr: descr.into(),
            fortran_order: false,
            shape,
        };
        write_header(&mut out, &h).unwrap();
        out.extend_from_slice(data);
        out
    }

    fn classes_bytes(ds: &Dataset, rows: &[usize]) -> Vec<u8> {
        rows.iter()
            .flat_map(|&i| std::iter::once(0i64).chain(ds.factors.classes(i).iter().map(|&c| c as i64)))
            .flat_map(i64::to_le_bytes)
            .collect()
    }

    fn image_bytes(ds: &Dataset, rows: &[usize]) -> Vec<u8> {
        rows.iter().flat_map(|&i| ds.image(i)).collect()
    }

    #[test]
    fn written_archive_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sprites.npz");
        let ds = generate_procedural(&BASES).unwrap();
        write_archive(&ds, &path).unwrap();
        let back = load_archive_with_bases(&path, &BASES).unwrap();
        assert_eq!(back.factors, ds.factors);
        assert_eq!(back.source, Source::Archive(path.clone()));
        assert!((0..ds.len()).all(|i| back.image(i) == ds.image(i)));
        assert_eq!(back.factors.classes(0), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn shuffled_stored_rows_are_reordered_canonically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shuffled.npz");
        let ds = generate_procedural(&BASES).unwrap();
        let rows: Vec<usize> = (0..ds.len()).rev().collect();
        let n = ds.len();
        write_members(
            &path,
            &[
                ("latents_classes.npy", npy("<i8", vec![n, 6], &classes_bytes(&ds, &rows))),
                ("imgs.npy", npy("|u1", vec![n, 64, 64], &image_bytes(&ds, &rows))),
            ],
            CompressionMethod::Stored,
        );
        let back = load_archive_with_bases(&path, &BASES).unwrap();
        assert!((0..n).all(|i| back.image(i) == ds.image(i)));
    }

    fn format_member(result: Result<Dataset>) -> String {
        match result {
            Err(Error::Format { member, .. }) => member,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_archives_name_the_offending_member() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_procedural(&BASES).unwrap();
        let n = ds.len();
        let all: Vec<usize> = (0..n).collect();
        let classes = npy("<i8", vec![n, 6], &classes_bytes(&ds, &all));
        let imgs = npy("|u1", vec![n, 64, 64], &image_bytes(&ds, &all));

        let mut truncated = imgs.clone();
        truncated.truncate(imgs.len() - 100);
        let wrong_shape = npy("|u1", vec![n, 32, 128], &image_bytes(&ds, &all));
        let wrong_dtype = npy("<f4", vec![n, 64, 64], &image_bytes(&ds, &all));
        let mut bad_magic = imgs.clone();
        bad_magic[0] = 0;
        let short_classes = npy("<i8", vec![n - 1, 6], &classes_bytes(&ds, &all[1..]));
        let mut non_binary = imgs.clone();
        *non_binary.last_mut().unwrap() = 7;

        let cases = [
            (classes.clone(), truncated, IMGS),
            (classes.clone(), wrong_shape, IMGS),
            (classes.clone(), wrong_dtype, IMGS),
            (classes.clone(), bad_magic, IMGS),
            (classes.clone(), non_binary, IMGS),
            (short_classes, imgs.clone(), CLASSES),
        ];
        for (i, (c, im, member)) in cases.into_iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.npz"));
            write_members(&path, &[("latents_classes.npy", c), ("imgs.npy", im)], CompressionMethod::Deflated);
            assert_eq!(format_member(load_archive_with_bases(&path, &BASES)), member, "case {i}");
        }

        let path = dir.path().join("missing.npz");
        write_members(&path, &[("latents_classes.npy", classes)], CompressionMethod::Stored);
        assert_eq!(format_member(load_archive_with_bases(&path, &BASES)), IMGS);
    }

    #[test]
    fn official_shapes_are_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.npz");
        write_archive(&generate_procedural(&BASES).unwrap(), &path).unwrap();
        // a valid small archive is rejected when the full grid is expected
        assert_eq!(format_member(load_archive(&path)), CLASSES);
        assert!(matches!(load_archive(&dir.path().join("absent.npz")), Err(Error::Io { .. })));
    }
}
