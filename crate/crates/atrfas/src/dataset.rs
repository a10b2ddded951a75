//! On-disk dataset container and batching.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.txt          index, see below
//! sample_00000.bin      frames [N0,1,H,W], flash_levels [N0], depth_label [H/4,W/4]
//! sample_00001.bin      ...
//! ```
//!
//! `manifest.txt` starts with the magic line `ATRFAS-DS v1`, followed by
//! `key<TAB>value` metadata lines (`n0`, `size`, `experts`, `seed`, `samples`),
//! then a header row and one tab-separated row per sample:
//!
//! ```text
//! id  split  cls  attack  file  offsets  gate  seed
//! ```
//!
//! `offsets` lists the byte offsets of the three tensors inside `file`, and
//! `gate` is the comma-separated gate label.

use std::fmt;
use std::fs;
use std::io::{BufReader, Cursor, Write};
use std::path::Path;
use std::str::FromStr;

use ndarr_core::{RngStream, Tensor};

use crate::diffnorm::{AttackType, FlashSequence, InputTransform};
use crate::error::{AtrError, Result};
use crate::synthgen::LabeledSample;

pub const DATASET_MAGIC: &str = "ATRFAS-DS v1";
pub const MANIFEST: &str = "manifest.txt";
const COLUMNS: &str = "id\tsplit\tcls\tattack\tfile\toffsets\tgate\tseed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(AtrError::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub n0: usize,
    pub size: usize,
    pub experts: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, samples: Vec<LabeledSample>) -> Result<Self> {
        for s in &samples {
            let shape = s.sequence.frames.shape();
            if shape != [meta.n0, 1, meta.size, meta.size] {
                return Err(AtrError::Format(format!("sample {} has frames {shape:?}", s.id)));
            }
            if s.depth_label.shape() != [meta.size / 4, meta.size / 4] {
                return Err(AtrError::Format(format!("sample {} depth label has wrong shape", s.id)));
            }
        }
        Ok(Self { meta, samples })
    }

    pub fn meta(&self) -> DatasetMeta {
        self.meta
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&LabeledSample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }
}

fn sample_file(id: usize) -> String {
    format!("sample_{id:05}.bin")
}

fn fmt_gate(gate: &[f32]) -> String {
    gate.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the container, creating `dir` if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AtrError::io(dir, e))?;
    let m = dataset.meta;
    let mut manifest = format!(
        "{DATASET_MAGIC}\nn0\t{}\nsize\t{}\nexperts\t{}\nseed\t{}\nsamples\t{}\n{COLUMNS}\n",
        m.n0,
        m.size,
        m.experts,
        m.seed,
        dataset.samples.len()
    );
    for s in &dataset.samples {
        let mut bytes = Vec::new();
        let mut offsets = Vec::with_capacity(3);
        let levels = Tensor::new(vec![s.sequence.flash_levels.len()], s.sequence.flash_levels.clone())?;
        for t in [&s.sequence.frames, &levels, &s.depth_label] {
            offsets.push(bytes.len().to_string());
            t.write_to(&mut bytes).expect("writing to a Vec cannot fail");
        }
        let file = sample_file(s.id);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| AtrError::io(&path, e))?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{file}\t{}\t{}\t{}\n",
            s.id,
            s.split,
            s.cls_label(),
            s.attack(),
            offsets.join(","),
            fmt_gate(&s.gate_label),
            s.seed
        ));
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| AtrError::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| AtrError::io(&path, e))?;
    Ok(())
}

fn parse<T: FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| AtrError::Format(format!("bad {what} field {field:?}")))
}

/// Reads a container written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| AtrError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(AtrError::Format(format!("{} does not start with {DATASET_MAGIC:?}", path.display())));
    }
    let (mut n0, mut size, mut experts, mut seed, mut count) = (None, None, None, None, None);
    for line in lines.by_ref() {
        if line == COLUMNS {
            break;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| AtrError::Format(format!("bad manifest line {line:?}")))?;
        match key {
            "n0" => n0 = Some(parse(value, key)?),
            "size" => size = Some(parse(value, key)?),
            "experts" => experts = Some(parse(value, key)?),
            "seed" => seed = Some(parse(value, key)?),
            "samples" => count = Some(parse::<usize>(value, key)?),
            other => return Err(AtrError::Format(format!("unknown manifest key {other:?}"))),
        }
    }
    let missing = |k: &str| AtrError::Format(format!("manifest lacks {k}"));
    let meta = DatasetMeta {
        n0: n0.ok_or_else(|| missing("n0"))?,
        size: size.ok_or_else(|| missing("size"))?,
        experts: experts.ok_or_else(|| missing("experts"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    let mut samples = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(AtrError::Format(format!("manifest row has {} fields", f.len())));
        }
        let attack: AttackType = f[3].parse().map_err(|_| AtrError::Format(format!("bad attack {:?}", f[3])))?;
        let cls: u8 = parse(f[2], "cls")?;
        if cls != attack.label().cls() {
            return Err(AtrError::Format(format!("row {} has cls {cls} for attack {attack}", f[0])));
        }
        let file = dir.join(f[4]);
        let bytes = fs::read(&file).map_err(|e| AtrError::io(&file, e))?;
        let offsets: Vec<usize> = f[5].split(',').map(|o| parse(o, "offset")).collect::<Result<_>>()?;
        let read_at = |k: usize| -> Result<Tensor> {
            let start = *offsets.get(k).ok_or_else(|| AtrError::Format("missing offset".into()))?;
            let mut r = BufReader::new(Cursor::new(bytes.get(start..).unwrap_or_default()));
            Ok(Tensor::read_from(&mut r)?)
        };
        let frames = read_at(0)?;
        let levels = read_at(1)?.into_data();
        samples.push(LabeledSample {
            id: parse(f[0], "id")?,
            split: f[1].parse()?,
            seed: parse(f[7], "seed")?,
            sequence: FlashSequence::new(frames, levels, None, attack)?,
            depth_label: read_at(2)?,
            gate_label: f[6].split(',').map(|g| parse(g, "gate")).collect::<Result<_>>()?,
        });
    }
    if count != Some(samples.len()) {
        return Err(AtrError::Format(format!(
            "manifest declares {count:?} samples but lists {}",
            samples.len()
        )));
    }
    Dataset::new(meta, samples)
}

/// Network input for one sequence: `[N, H, W]` after the frame transform
/// (single-channel frames, channel axis dropped).
pub fn prepare_input(seq: &FlashSequence, transform: InputTransform, standardize: bool) -> Result<Tensor> {
    let x = transform.apply(&seq.frames)?;
    let s = x.shape().to_vec();
    if s[1] != 1 {
        return Err(AtrError::Parameter(format!("expected single-channel frames, got {}", s[1])));
    }
    let mut x = x.reshape(&[s[0], s[2], s[3]])?;
    if standardize {
        let mean = x.mean();
        let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / x.numel() as f64;
        let inv = 1.0 / var.sqrt().max(1e-8);
        x = x.map(|v| ((v as f64 - mean) * inv) as f32);
    }
    Ok(x)
}

/// One training/evaluation batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, N, H, W]`.
    pub inputs: Tensor,
    /// `[B, H/4, W/4]`.
    pub depth: Tensor,
    /// `[B, M]`.
    pub gate: Tensor,
    /// `[B]`, 0 live and 1 spoof.
    pub cls: Tensor,
    pub attacks: Vec<AttackType>,
}

/// Inputs prepared once per sample so epochs do not repeat the differencing.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub inputs: Vec<Tensor>,
    pub depth: Vec<Tensor>,
    pub gate: Vec<Vec<f32>>,
    pub cls: Vec<u8>,
    pub attacks: Vec<AttackType>,
}

impl PreparedSet {
    pub fn new(samples: &[&LabeledSample], transform: InputTransform, standardize: bool) -> Result<Self> {
        let mut set = PreparedSet {
            inputs: Vec::with_capacity(samples.len()),
            depth: Vec::with_capacity(samples.len()),
            gate: Vec::with_capacity(samples.len()),
            cls: Vec::with_capacity(samples.len()),
            attacks: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            set.inputs.push(prepare_input(&s.sequence, transform, standardize)?);
            set.depth.push(s.depth_label.clone());
            set.gate.push(s.gate_label.clone());
            set.cls.push(s.cls_label());
            set.attacks.push(s.attack());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let pick = |v: &[Tensor]| Tensor::stack(&indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>());
        let m = self.gate.first().map_or(0, Vec::len);
        let gate = indices.iter().flat_map(|&i| self.gate[i].iter().copied()).collect();
        Ok(Batch {
            inputs: pick(&self.inputs)?,
            depth: pick(&self.depth)?,
            gate: Tensor::new(vec![indices.len(), m], gate)?,
            cls: Tensor::new(vec![indices.len()], indices.iter().map(|&i| self.cls[i] as f32).collect())?,
            attacks: indices.iter().map(|&i| self.attacks[i]).collect(),
        })
    }
}

/// Splits `indices` into `(train, validation)` with roughly `fraction` of every
/// attack type held out (at least one per type when the type has two or more).
pub fn stratified_holdout(
    indices: &[usize],
    attacks: impl Fn(usize) -> AttackType,
    fraction: f64,
    rng: &mut RngStream,
) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for attack in AttackType::ALL {
        let mut group: Vec<usize> = indices.iter().copied().filter(|&i| attacks(i) == attack).collect();
        rng.shuffle(&mut group);
        let mut held = (group.len() as f64 * fraction).round() as usize;
        if held == 0 && group.len() >= 2 && fraction > 0.0 {
            held = 1;
        }
        val.extend_from_slice(&group[..held]);
        train.extend_from_slice(&group[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_dataset, ClassCounts, GeneratorConfig};

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            size: 16,
            train: ClassCounts {
                live: 2,
                print: 1,
                replay: 1,
                mask: 1,
            },
            test: ClassCounts {
                live: 1,
                print: 1,
                replay: 0,
                mask: 1,
            },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = generate_dataset(&tiny(), dir.path(), 1).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.meta(), ds.meta());
        assert_eq!(back.samples().len(), 8);
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.sequence.frames, b.sequence.frames);
            assert_eq!(a.sequence.flash_levels, b.sequence.flash_levels);
            assert_eq!(a.depth_label, b.depth_label);
            assert_eq!(a.gate_label, b.gate_label);
            assert_eq!((a.id, a.split, a.seed, a.attack()), (b.id, b.split, b.seed, b.attack()));
        }
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.starts_with("ATRFAS-DS v1\n"));
    }

    #[test]
    fn corrupt_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny(), dir.path(), 1).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("ATRFAS-DS v1", "ATRFAS-DS v0", 1)).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(AtrError::Format(_))));
        assert!(matches!(read_dataset(&dir.path().join("absent")), Err(AtrError::Io { .. })));
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let attacks: Vec<AttackType> = (0..40).map(|i| AttackType::ALL[i % 4]).collect();
        let idx: Vec<usize> = (0..40).collect();
        let (train, val) = stratified_holdout(&idx, |i| attacks[i], 0.1, &mut RngStream::new(3));
        assert_eq!(val.len(), 4);
        assert_eq!(train.len(), 36);
        for a in AttackType::ALL {
            assert_eq!(val.iter().filter(|&&i| attacks[i] == a).count(), 1);
        }
        assert!(val.iter().all(|v| !train.contains(v)));
    }

    #[test]
    fn standardized_input_has_zero_mean() {
        let (ds, _) = crate::synthgen::generate_samples(&tiny(), 1).unwrap();
        let x = prepare_input(&ds.samples()[0].sequence, InputTransform::DiffNorm, true).unwrap();
        assert_eq!(x.shape(), &[6, 16, 16]);
        assert!(x.mean().abs() < 1e-5);
    }
}
