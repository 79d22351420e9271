//! Sample tables, the stress-dataset CSV contract, preprocessing, LOSO splits
//! and a synthetic subject/task generator.
//!
//! CSV contract (UTF-8, comma separated, header required):
//!
//! ```text
//! subject,trial,label,t,accel_x,accel_y,accel_z,temp,eda,hr,spo2
//! ```
//!
//! Labels: 0 = physical, 1 = cognitive, 2 = emotional, 3 = relaxation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHANNELS: [&str; 7] = ["accel_x", "accel_y", "accel_z", "temp", "eda", "hr", "spo2"];
pub const LABELS: [&str; 4] = ["physical", "cognitive", "emotional", "relaxation"];
pub const RELAXATION: usize = 3;
const KEY_COLUMNS: [&str; 4] = ["subject", "trial", "label", "t"];

/// Per-sample observations with their labels, in columnar form.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    /// 1-based subject identifiers
    pub subject: Vec<u32>,
    pub trial: Vec<u32>,
    pub label: Vec<usize>,
    pub t: Vec<u32>,
    pub x: Matrix,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub s: usize,
    pub l: usize,
    pub c: usize,
    pub n: usize,
    pub class_counts: Vec<usize>,
    pub channel_mean: Option<Vec<f64>>,
    pub channel_std: Option<Vec<f64>>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.x.cols()
    }

    /// Sorted distinct subject identifiers.
    pub fn subjects(&self) -> Vec<u32> {
        self.subject.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// 0-based subject index of every row (position in [`Self::subjects`]).
    pub fn subject_indices(&self) -> Vec<usize> {
        let ids = self.subjects();
        self.subject
            .iter()
            .map(|s| ids.binary_search(s).expect("subject listed"))
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> SampleTable {
        SampleTable {
            subject: idx.iter().map(|&i| self.subject[i]).collect(),
            trial: idx.iter().map(|&i| self.trial[i]).collect(),
            label: idx.iter().map(|&i| self.label[i]).collect(),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            x: self.x.select_rows(idx),
            num_classes: self.num_classes,
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        let mut class_counts = vec![0; self.num_classes];
        for &l in &self.label {
            class_counts[l] += 1;
        }
        DatasetMeta {
            s: self.subjects().len(),
            l: self.num_classes,
            c: self.channels(),
            n: self.len(),
            class_counts,
            channel_mean: None,
            channel_std: None,
        }
    }

    /// Row counts per (subject, label) cell.
    pub fn cell_counts(&self) -> BTreeMap<(u32, usize), usize> {
        let mut m = BTreeMap::new();
        for (&s, &l) in self.subject.iter().zip(&self.label) {
            *m.entry((s, l)).or_insert(0) += 1;
        }
        m
    }

    fn cells_of(&self, idx: &[usize]) -> BTreeMap<(u32, usize), Vec<usize>> {
        let mut m: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
        for &i in idx {
            m.entry((self.subject[i], self.label[i])).or_default().push(i);
        }
        m
    }

    /// Writes the table under the CSV contract. Requires 7 channels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if self.channels() != CHANNELS.len() {
            return Err(Error::Argument(format!(
                "CSV contract has {} channels, table has {}",
                CHANNELS.len(),
                self.channels()
            )));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let header: Vec<&str> = KEY_COLUMNS.iter().chain(CHANNELS.iter()).copied().collect();
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.subject[i].to_string(),
                self.trial[i].to_string(),
                self.label[i].to_string(),
                self.t[i].to_string(),
            ];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Reads and validates a CSV file under the contract.
pub fn load_csv(path: &Path) -> Result<(SampleTable, DatasetMeta)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Like [`load_csv`] over any reader. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<(SampleTable, DatasetMeta)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Ingest { row: 1, message: e.to_string() })?
        .clone();
    let expected: Vec<&str> = KEY_COLUMNS.iter().chain(CHANNELS.iter()).copied().collect();
    for (i, col) in expected.iter().enumerate() {
        match header.get(i) {
            Some(h) if h.trim() == *col => {}
            Some(h) => {
                return Err(Error::Ingest {
                    row: 1,
                    message: format!("column {} should be '{col}', found '{h}'", i + 1),
                })
            }
            None => {
                return Err(Error::Ingest {
                    row: 1,
                    message: format!("missing column '{col}'"),
                })
            }
        }
    }
    if header.len() != expected.len() {
        return Err(Error::Ingest {
            row: 1,
            message: format!("expected {} columns, found {}", expected.len(), header.len()),
        });
    }

    let mut subject = Vec::new();
    let mut trial = Vec::new();
    let mut label = Vec::new();
    let mut t = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Ingest { row, message: e.to_string() })?;
        if rec.len() != expected.len() {
            return Err(Error::Ingest {
                row,
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let int = |k: usize| -> Result<i64> {
            rec[k].trim().parse::<i64>().map_err(|_| Error::Ingest {
                row,
                message: format!("{} '{}' is not an integer", expected[k], &rec[k]),
            })
        };
        let s = int(0)?;
        let tr = int(1)?;
        let l = int(2)?;
        let ts = int(3)?;
        if s < 1 {
            return Err(Error::Ingest { row, message: format!("subject {s} must be >= 1") });
        }
        if tr < 1 {
            return Err(Error::Ingest { row, message: format!("trial {tr} must be >= 1") });
        }
        if !(0..LABELS.len() as i64).contains(&l) {
            return Err(Error::Ingest {
                row,
                message: format!("label {l} outside 0..{}", LABELS.len() - 1),
            });
        }
        if ts < 0 {
            return Err(Error::Ingest { row, message: format!("time {ts} is negative") });
        }
        let key = (s as u32, tr as u32, ts as u32);
        if !seen.insert(key) {
            return Err(Error::Ingest {
                row,
                message: format!("duplicate (subject, trial, t) = {key:?}"),
            });
        }
        for k in 4..expected.len() {
            let v: f64 = rec[k].trim().parse().map_err(|_| Error::Ingest {
                row,
                message: format!("{} '{}' is not a number", expected[k], &rec[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest { row, message: format!("{} is not finite", expected[k]) });
            }
            data.push(v);
        }
        subject.push(key.0);
        trial.push(key.1);
        label.push(l as usize);
        t.push(key.2);
    }
    let n = label.len();
    let table = SampleTable {
        subject,
        trial,
        label,
        t,
        x: Matrix::from_vec(n, CHANNELS.len(), data)?,
        num_classes: LABELS.len(),
    };
    let meta = table.meta();
    Ok((table, meta))
}

/// Per-channel z-scoring statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation over `idx` rows.
    pub fn fit(x: &Matrix, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Argument("normalization needs at least one training row".into()));
        }
        let c = x.cols();
        let n = idx.len() as f64;
        let mut mean = vec![0.0; c];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for &i in idx {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        if let Some(k) = std.iter().position(|&s| !(s > 1e-12)) {
            let name = CHANNELS.get(k).copied().unwrap_or("channel");
            return Err(Error::Numeric(format!(
                "channel {k} ({name}) has zero variance on the training rows"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::dim("normalize", self.mean.len(), x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Z-scores every row with statistics from `train_idx` only.
pub fn preprocess(table: &SampleTable, train_idx: &[usize]) -> Result<(SampleTable, Normalizer)> {
    let norm = Normalizer::fit(&table.x, train_idx)?;
    let mut out = table.clone();
    out.x = norm.apply(&table.x)?;
    Ok((out, norm))
}

/// Keeps only the earliest relaxation trial of every subject.
pub fn balance_relaxation(table: &SampleTable) -> Result<SampleTable> {
    let mut first: BTreeMap<u32, u32> = BTreeMap::new();
    for i in 0..table.len() {
        if table.label[i] == RELAXATION {
            let e = first.entry(table.subject[i]).or_insert(table.trial[i]);
            *e = (*e).min(table.trial[i]);
        }
    }
    for s in table.subjects() {
        if !first.contains_key(&s) {
            return Err(Error::Argument(format!("subject {s} has no relaxation trial")));
        }
    }
    let keep: Vec<usize> = (0..table.len())
        .filter(|&i| table.label[i] != RELAXATION || first[&table.subject[i]] == table.trial[i])
        .collect();
    let out = table.select(&keep);
    let counts = out.cell_counts();
    let mut per_subject: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (&(s, _), &c) in &counts {
        per_subject.entry(s).or_default().insert(c);
    }
    if let Some((s, sizes)) = per_subject.iter().find(|(_, v)| v.len() > 1) {
        return Err(Error::Argument(format!(
            "subject {s} remains unbalanced after keeping one relaxation trial: cell sizes {sizes:?}"
        )));
    }
    Ok(out)
}

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub held_out: u32,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl FoldSpec {
    /// Content hash of the index sets, used to assert pairing between runs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.held_out.to_le_bytes());
        for part in [&self.train, &self.val, &self.test] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub const VALIDATION_FRACTION: f64 = 0.10;

/// Holds out every row of `held_out`; splits the rest 90/10 stratified by
/// (subject, label).
pub fn loso_split(table: &SampleTable, held_out: u32, seed: u64) -> Result<FoldSpec> {
    if !table.subject.contains(&held_out) {
        return Err(Error::Argument(format!("subject {held_out} is not in the table")));
    }
    let test: Vec<usize> = (0..table.len()).filter(|&i| table.subject[i] == held_out).collect();
    let rest: Vec<usize> = (0..table.len()).filter(|&i| table.subject[i] != held_out).collect();
    if rest.is_empty() {
        return Err(Error::Argument("no training subjects remain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(held_out as u64);
    let mut cells = table.cells_of(&rest);
    for v in cells.values_mut() {
        v.shuffle(&mut rng);
    }
    let quotas = largest_remainder(
        &cells.values().map(Vec::len).collect::<Vec<_>>(),
        VALIDATION_FRACTION,
    );
    let mut train = Vec::with_capacity(rest.len());
    let mut val = Vec::new();
    for (v, q) in cells.values().zip(quotas) {
        val.extend_from_slice(&v[..q]);
        train.extend_from_slice(&v[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(FoldSpec {
        held_out,
        train,
        val,
        test,
        seed,
    })
}

/// Apportions `round(frac · Σ sizes)` across cells: floors first, then the
/// largest fractional remainders (earlier cells win ties).
fn largest_remainder(sizes: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = ((total as f64) * frac + 0.5).floor() as usize;
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * frac).collect();
    let mut q: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - q[a] as f64;
        let rb = exact[b] - q[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(q.iter().sum());
    for &k in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if q[k] < sizes[k] {
            q[k] += 1;
            left -= 1;
        }
    }
    q
}

/// Keeps `round(fraction · n)` rows of every (subject, label) cell among `idx`.
pub fn stratified_subsample(
    table: &SampleTable,
    idx: &[usize],
    fraction: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(idx.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Vec::new();
    for ((s, l), mut v) in table.cells_of(idx) {
        let keep = ((v.len() as f64) * fraction + 0.5).floor() as usize;
        if keep == 0 {
            return Err(Error::Argument(format!(
                "fraction {fraction} empties cell (subject {s}, label {l}) of {} rows",
                v.len()
            )));
        }
        v.shuffle(&mut rng);
        out.extend_from_slice(&v[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub subjects: usize,
    pub classes: usize,
    pub channels: usize,
    pub per_cell: usize,
    pub sigma_task: f64,
    pub sigma_subject: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            subjects: 20,
            classes: 4,
            channels: 7,
            per_cell: 30,
            sigma_task: 1.0,
            sigma_subject: 1.5,
            sigma_noise: 0.3,
            seed: 0,
        }
    }
}

/// `X = T·onehot(y) + U·onehot(s) + ε` with `T`, `U` drawn once per seed.
///
/// Every (subject, label) cell gets `per_cell` rows, so labels and subjects
/// are exactly independent. Each cell is one trial (`trial = label + 1`) with
/// `t = 0..per_cell`.
pub fn synth_generate(p: &SynthParams) -> Result<SampleTable> {
    if p.subjects == 0 || p.classes == 0 || p.channels == 0 || p.per_cell == 0 {
        return Err(Error::Argument("synthetic counts must be >= 1".into()));
    }
    for (name, s) in [("task", p.sigma_task), ("subject", p.sigma_subject), ("noise", p.sigma_noise)] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Argument(format!("sigma_{name} must be >= 0")));
        }
    }
    let draw = |stream: u64, sigma: f64, n: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..n).map(|_| sigma * normal.sample(&mut rng)).collect()
    };
    let c = p.channels;
    // column-major by class / subject: entry [k * c + ch]
    let task = draw(1, p.sigma_task, c * p.classes);
    let subj = draw(2, p.sigma_subject, c * p.subjects);
    let n = p.subjects * p.classes * p.per_cell;
    let noise = draw(3, p.sigma_noise, n * c);

    let mut subject = Vec::with_capacity(n);
    let mut trial = Vec::with_capacity(n);
    let mut label = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * c);
    let mut row = 0;
    for s in 0..p.subjects {
        for y in 0..p.classes {
            for k in 0..p.per_cell {
                for ch in 0..c {
                    data.push(task[y * c + ch] + subj[s * c + ch] + noise[row * c + ch]);
                }
                subject.push(s as u32 + 1);
                trial.push(y as u32 + 1);
                label.push(y);
                t.push(k as u32);
                row += 1;
            }
        }
    }
    Ok(SampleTable {
        subject,
        trial,
        label,
        t,
        x: Matrix::from_vec(n, c, data)?,
        num_classes: p.classes,
    })
}
