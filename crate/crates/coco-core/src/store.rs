//! On-disk activation-dump format and validated in-memory datasets.
//!
//! A dump is a neuron-output matrix (row = neuron, column = sample) plus
//! per-sample metadata. Two encodings are supported:
//!
//! * binary container: magic `COCA`, little-endian header, `f32` row-major
//!   matrix, then one metadata record per sample;
//! * text pair: a `.csv` matrix with a `.jsonl` metadata sidecar whose first
//!   line is a header object.
//!
//! [`load_activation_dump`] / [`write_activation_dump`] pick the encoding from
//! the file extension (`.csv` selects text, anything else binary).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"COCA";
const FORMAT_VERSION: u16 = 1;
const FLAG_PREDICTIONS: u8 = 0b0000_0001;

/// Metadata attached to one sample column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub class_label: u16,
    pub domain_label: u16,
    /// Model prediction for the sample, when the producer classified it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<u16>,
}

/// Validated activation matrix plus sample metadata.
///
/// Immutable after construction; rows are neurons (ids contiguous from 0),
/// columns are samples in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    activations: Array2<f32>,
    samples: Vec<SampleMeta>,
    neuron_ids: Vec<u32>,
    n_classes: u16,
    n_domains: u16,
    layer_name: String,
}

impl ActivationDataset {
    /// Build a dataset, enforcing every invariant: matching dimensions,
    /// finite entries, labels within bounds, and all-or-none predictions.
    pub fn new(
        activations: Array2<f32>,
        samples: Vec<SampleMeta>,
        n_classes: u16,
        n_domains: u16,
        layer_name: impl Into<String>,
    ) -> Result<Self> {
        let (n, m) = activations.dim();
        if samples.len() != m {
            return Err(Error::Consistency(format!(
                "matrix has {m} sample columns but metadata has {} rows",
                samples.len()
            )));
        }
        for (row, col) in iter_row_major(&activations.view()) {
            let v = activations[(row, col)];
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    neuron: row,
                    sample: col,
                });
            }
        }
        let with_pred = samples.iter().filter(|s| s.predicted_class.is_some()).count();
        if with_pred != 0 && with_pred != samples.len() {
            return Err(Error::Consistency(format!(
                "predictions present on {with_pred} of {} samples; must be all or none",
                samples.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.class_label >= n_classes {
                return Err(Error::Consistency(format!(
                    "sample {i} ({}): class {} out of bounds (C = {n_classes})",
                    s.sample_id, s.class_label
                )));
            }
            if s.domain_label >= n_domains {
                return Err(Error::Consistency(format!(
                    "sample {i} ({}): domain {} out of bounds (S = {n_domains})",
                    s.sample_id, s.domain_label
                )));
            }
            if let Some(p) = s.predicted_class {
                if p >= n_classes {
                    return Err(Error::Consistency(format!(
                        "sample {i} ({}): predicted class {p} out of bounds (C = {n_classes})",
                        s.sample_id
                    )));
                }
            }
        }
        Ok(Self {
            activations,
            samples,
            neuron_ids: (0..n as u32).collect(),
            n_classes,
            n_domains,
            layer_name: layer_name.into(),
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.activations.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.activations.ncols()
    }

    pub fn n_classes(&self) -> u16 {
        self.n_classes
    }

    pub fn n_domains(&self) -> u16 {
        self.n_domains
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn activations(&self) -> ArrayView2<'_, f32> {
        self.activations.view()
    }

    pub fn samples(&self) -> &[SampleMeta] {
        &self.samples
    }

    pub fn neuron_ids(&self) -> &[u32] {
        &self.neuron_ids
    }

    /// True when every sample carries a predicted class.
    pub fn has_predictions(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.predicted_class.is_some())
    }

    /// View of the columns matching `(class_label, domain_label)`, optionally
    /// restricted to correctly predicted samples.
    pub fn slice(&self, class_label: u16, domain_label: u16, correct_only: bool) -> Result<SliceView<'_>> {
        if class_label >= self.n_classes {
            return Err(Error::Consistency(format!(
                "slice class {class_label} out of bounds (C = {})",
                self.n_classes
            )));
        }
        if domain_label >= self.n_domains {
            return Err(Error::Consistency(format!(
                "slice domain {domain_label} out of bounds (S = {})",
                self.n_domains
            )));
        }
        if correct_only && !self.has_predictions() {
            return Err(Error::MissingPredictions(format!(
                "slice(class {class_label}, domain {domain_label}) requested correct_only but the dataset has no predictions"
            )));
        }
        let column_indices = self
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.class_label == class_label
                    && s.domain_label == domain_label
                    && (!correct_only || s.predicted_class == Some(class_label))
            })
            .map(|(i, _)| i)
            .collect();
        Ok(SliceView {
            parent: self,
            column_indices,
            class_label,
            domain_label,
        })
    }

    /// Distinct sample ids in first-occurrence order. Ids are not required to
    /// be unique: producers may reuse an id across domains to mark the same
    /// underlying stimulus.
    pub fn distinct_sample_ids(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.sample_id.as_str()) {
                out.push(s.sample_id.as_str());
            }
        }
        out
    }
}

/// Ordered selection of sample columns for one `(class, domain)` cell.
#[derive(Debug, Clone)]
pub struct SliceView<'a> {
    parent: &'a ActivationDataset,
    column_indices: Vec<usize>,
    class_label: u16,
    domain_label: u16,
}

impl<'a> SliceView<'a> {
    pub fn parent(&self) -> &'a ActivationDataset {
        self.parent
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.column_indices
    }

    pub fn class_label(&self) -> u16 {
        self.class_label
    }

    pub fn domain_label(&self) -> u16 {
        self.domain_label
    }

    pub fn len(&self) -> usize {
        self.column_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column_indices.is_empty()
    }

    /// Materialize the selected columns as an `N x |slice|` matrix.
    pub fn activations(&self) -> Array2<f32> {
        self.parent.activations.select(Axis(1), &self.column_indices)
    }

    /// Sample ids of the selected columns, in column order.
    pub fn sample_ids(&self) -> Vec<&'a str> {
        self.column_indices
            .iter()
            .map(|&i| self.parent.samples[i].sample_id.as_str())
            .collect()
    }
}

/// Load a dump, picking binary or text form from the extension.
pub fn load_activation_dump(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    let path = path.as_ref();
    if is_text_path(path) {
        load_text(path)
    } else {
        load_binary(path)
    }
}

/// Write a dump, picking binary or text form from the extension.
pub fn write_activation_dump(ds: &ActivationDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_text_path(path) {
        write_text(ds, path)
    } else {
        write_binary(ds, path)
    }
}

fn is_text_path(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

fn metadata_sidecar(path: &Path) -> PathBuf {
    path.with_extension("jsonl")
}

// ---------------------------------------------------------------------------
// binary form
// ---------------------------------------------------------------------------

fn load_binary(path: &Path) -> Result<ActivationDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            MAGIC
        )));
    }
    let version = read_u16(&mut r, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let n = read_u32(&mut r, path)? as usize;
    let m = read_u32(&mut r, path)? as usize;
    let n_classes = read_u16(&mut r, path)?;
    let n_domains = read_u16(&mut r, path)?;
    let flags = read_u8(&mut r, path)?;
    let has_predictions = flags & FLAG_PREDICTIONS != 0;
    let layer_name = read_string(&mut r, path)?;

    let mut values = vec![0f32; n * m];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|e| Error::io(path, e))?;
    let activations = Array2::from_shape_vec((n, m), values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let sample_id = read_string(&mut r, path)?;
        let class_label = read_u16(&mut r, path)?;
        let domain_label = read_u16(&mut r, path)?;
        let predicted_class = if has_predictions {
            Some(read_u16(&mut r, path)?)
        } else {
            None
        };
        samples.push(SampleMeta {
            sample_id,
            class_label,
            domain_label,
            predicted_class,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {m} metadata records",
            path.display()
        )));
    }

    ActivationDataset::new(activations, samples, n_classes, n_domains, layer_name)
}

fn write_binary(ds: &ActivationDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    write_u16(&mut w, FORMAT_VERSION, path)?;
    write_u32(&mut w, ds.n_neurons() as u32, path)?;
    write_u32(&mut w, ds.n_samples() as u32, path)?;
    write_u16(&mut w, ds.n_classes, path)?;
    write_u16(&mut w, ds.n_domains, path)?;
    let flags = if ds.has_predictions() { FLAG_PREDICTIONS } else { 0 };
    w.write_u8(flags).map_err(|e| Error::io(path, e))?;
    write_string(&mut w, &ds.layer_name, path)?;

    for (row, col) in iter_row_major(&ds.activations.view()) {
        w.write_f32::<LittleEndian>(ds.activations[(row, col)])
            .map_err(|e| Error::io(path, e))?;
    }
    for s in &ds.samples {
        write_string(&mut w, &s.sample_id, path)?;
        write_u16(&mut w, s.class_label, path)?;
        write_u16(&mut w, s.domain_label, path)?;
        if let Some(p) = s.predicted_class {
            write_u16(&mut w, p, path)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// text form: CSV matrix + JSONL metadata sidecar
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TextHeader {
    version: u16,
    n_classes: u16,
    n_domains: u16,
    layer_name: String,
}

fn load_text(path: &Path) -> Result<ActivationDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f32>().map_err(|e| {
                    Error::Format(format!(
                        "{}: line {}: cannot parse {tok:?} as float: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "{}: line {}: expected {} columns, found {}",
                    path.display(),
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    let activations =
        Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).expect("rectangular rows");

    let meta_path = metadata_sidecar(path);
    let meta_file = File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut lines = BufReader::new(meta_file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: missing header line", meta_path.display())))?
        .map_err(|e| Error::io(&meta_path, e))?;
    let header: TextHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", meta_path.display())))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {}",
            meta_path.display(),
            header.version
        )));
    }
    let mut samples = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(&meta_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: SampleMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}: bad metadata record: {e}", meta_path.display())))?;
        samples.push(meta);
    }
    ActivationDataset::new(
        activations,
        samples,
        header.n_classes,
        header.n_domains,
        header.layer_name,
    )
}

fn write_text(ds: &ActivationDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in ds.activations.rows() {
        let line = row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta_path = metadata_sidecar(path);
    let meta_file = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut w = BufWriter::new(meta_file);
    let header = TextHeader {
        version: FORMAT_VERSION,
        n_classes: ds.n_classes,
        n_domains: ds.n_domains,
        layer_name: ds.layer_name.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(|e| Error::io(&meta_path, e))?;
    for s in &ds.samples {
        writeln!(w, "{}", serde_json::to_string(s).expect("metadata serializes"))
            .map_err(|e| Error::io(&meta_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&meta_path, e))
}

// ---------------------------------------------------------------------------
// little-endian helpers
// ---------------------------------------------------------------------------

fn iter_row_major(a: &ArrayView2<'_, f32>) -> impl Iterator<Item = (usize, usize)> {
    let (n, m) = a.dim();
    (0..n).flat_map(move |row| (0..m).map(move |col| (row, col)))
}

fn read_u8(r: &mut impl Read, path: &Path) -> Result<u8> {
    r.read_u8().map_err(|e| Error::io(path, e))
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))
}

fn read_string(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = read_u16(r, path)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("{}: invalid UTF-8: {e}", path.display())))
}

fn write_u16(w: &mut impl Write, v: u16, path: &Path) -> Result<()> {
    w.write_u16::<LittleEndian>(v).map_err(|e| Error::io(path, e))
}

fn write_u32(w: &mut impl Write, v: u32, path: &Path) -> Result<()> {
    w.write_u32::<LittleEndian>(v).map_err(|e| Error::io(path, e))
}

fn write_string(w: &mut impl Write, s: &str, path: &Path) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Format(format!(
            "string field of {} bytes exceeds the u16 length prefix",
            bytes.len()
        )));
    }
    write_u16(w, bytes.len() as u16, path)?;
    w.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, class: u16, domain: u16, pred: Option<u16>) -> SampleMeta {
        SampleMeta {
            sample_id: id.to_string(),
            class_label: class,
            domain_label: domain,
            predicted_class: pred,
        }
    }

    fn small_dataset() -> ActivationDataset {
        let act = Array2::from_shape_vec((2, 3), vec![0.5, -1.25, 3.0, 2.0, 0.0, -0.5]).unwrap();
        ActivationDataset::new(
            act,
            vec![
                meta("a", 0, 0, Some(0)),
                meta("b", 1, 0, Some(1)),
                meta("c", 1, 1, Some(0)),
            ],
            2,
            2,
            "feat",
        )
        .unwrap()
    }

    #[test]
    fn zero_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.bin");
        let ds = ActivationDataset::new(
            Array2::zeros((4, 3)),
            vec![meta("s0", 0, 0, None), meta("s1", 0, 0, None), meta("s2", 0, 0, None)],
            1,
            1,
            "feat",
        )
        .unwrap();
        write_activation_dump(&ds, &path).unwrap();
        let loaded = load_activation_dump(&path).unwrap();
        assert_eq!(loaded.n_neurons(), 4);
        assert_eq!(loaded.n_samples(), 3);
        assert!(loaded.activations().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn metadata_count_mismatch_is_consistency_error() {
        let act = Array2::zeros((4, 3));
        let err = ActivationDataset::new(act, vec![meta("a", 0, 0, None), meta("b", 0, 0, None)], 1, 1, "feat")
            .unwrap_err();
        assert_eq!(err.category(), "consistency");
    }

    #[test]
    fn binary_metadata_shorter_than_declared_fails() {
        // Declared M = 3 but only 2 metadata records present.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truncated.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes()); // N
        bytes.extend_from_slice(&3u32.to_le_bytes()); // M
        bytes.extend_from_slice(&1u16.to_le_bytes()); // C
        bytes.extend_from_slice(&1u16.to_le_bytes()); // S
        bytes.push(0); // flags
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(b"feat");
        for v in [0f32, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for id in ["a", "b"] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&0u16.to_le_bytes());
            bytes.extend_from_slice(&0u16.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let err = load_activation_dump(&path).unwrap_err();
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn text_metadata_count_mismatch_is_consistency_error() {
        // 3 matrix columns but only 2 metadata records.
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "0,0,0\n0,0,0\n").unwrap();
        let jsonl = dir.path().join("d.jsonl");
        std::fs::write(
            &jsonl,
            concat!(
                "{\"version\":1,\"n_classes\":1,\"n_domains\":1,\"layer_name\":\"feat\"}\n",
                "{\"sample_id\":\"a\",\"class_label\":0,\"domain_label\":0}\n",
                "{\"sample_id\":\"b\",\"class_label\":0,\"domain_label\":0}\n"
            ),
        )
        .unwrap();
        let err = load_activation_dump(&csv).unwrap_err();
        assert_eq!(err.category(), "consistency");
    }

    #[test]
    fn nan_entry_names_first_offender() {
        let mut act = Array2::zeros((2, 2));
        act[(1, 0)] = f32::NAN;
        let err =
            ActivationDataset::new(act, vec![meta("a", 0, 0, None), meta("b", 0, 0, None)], 1, 1, "feat")
                .unwrap_err();
        match err {
            Error::NonFinite { neuron, sample } => {
                assert_eq!((neuron, sample), (1, 0));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn canonical_fixture_round_trips_byte_identical() {
        // Fixture bytes assembled by hand, independent of the writer.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes()); // N
        bytes.extend_from_slice(&2u32.to_le_bytes()); // M
        bytes.extend_from_slice(&2u16.to_le_bytes()); // C
        bytes.extend_from_slice(&1u16.to_le_bytes()); // S
        bytes.push(FLAG_PREDICTIONS);
        bytes.extend_from_slice(&5u16.to_le_bytes());
        bytes.extend_from_slice(b"layer");
        for v in [1.5f32, -2.0, 0.25, 8.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for (id, c, s, p) in [("x0", 0u16, 0u16, 0u16), ("x1", 1, 0, 1)] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&c.to_le_bytes());
            bytes.extend_from_slice(&s.to_le_bytes());
            bytes.extend_from_slice(&p.to_le_bytes());
        }

        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("canonical.bin");
        std::fs::write(&src, &bytes).unwrap();
        let ds = load_activation_dump(&src).unwrap();
        let dst = dir.path().join("rewritten.bin");
        write_activation_dump(&ds, &dst).unwrap();
        assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        for name in ["roundtrip.bin", "roundtrip.csv"] {
            let path = dir.path().join(name);
            write_activation_dump(&ds, &path).unwrap();
            let loaded = load_activation_dump(&path).unwrap();
            assert_eq!(loaded, ds, "{name}");
        }
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let ds = small_dataset();
        let err = write_activation_dump(&ds, "/nonexistent-dir/out.bin").unwrap_err();
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn slice_matches_labels_and_predictions() {
        // classes [0,1,1], domains [0,0,1], predictions [0,1,0]
        let act = Array2::zeros((2, 3));
        let ds = ActivationDataset::new(
            act,
            vec![meta("a", 0, 0, Some(0)), meta("b", 1, 0, Some(1)), meta("c", 1, 1, Some(0))],
            2,
            2,
            "feat",
        )
        .unwrap();

        let empty = ds.slice(1, 0, false).unwrap();
        assert_eq!(empty.column_indices(), &[1]);
        let strict = ds.slice(1, 0, true).unwrap();
        assert_eq!(strict.column_indices(), &[1]);
        // (c=1, s=1) exists but is mispredicted.
        let missed = ds.slice(1, 1, true).unwrap();
        assert!(missed.is_empty());
        // no sample has (c=0, s=1)
        assert!(ds.slice(0, 1, false).unwrap().is_empty());
    }

    #[test]
    fn slice_without_predictions_errors_when_correct_only() {
        let act = Array2::zeros((1, 1));
        let ds = ActivationDataset::new(act, vec![meta("a", 0, 0, None)], 1, 1, "feat").unwrap();
        let err = ds.slice(0, 0, true).unwrap_err();
        assert_eq!(err.category(), "missing-predictions");
    }

    #[test]
    fn slices_partition_the_columns() {
        let ds = small_dataset();
        let mut seen = Vec::new();
        for c in 0..ds.n_classes() {
            for s in 0..ds.n_domains() {
                seen.extend(ds.slice(c, s, false).unwrap().column_indices().to_vec());
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..ds.n_samples()).collect::<Vec<_>>());
    }
}
