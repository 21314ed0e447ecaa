//! Labelled datasets, synthetic Gaussian-mixture tasks, and file readers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, CounterRng};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `d x n`, one sample per column.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub task_id: String,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, task_id: impl Into<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if inputs.cols() != labels.len() {
            return Err(Error::shape("dataset", format!("{} samples", labels.len()), inputs.cols()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            task_id: task_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.rows()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select_cols(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
            self.task_id.clone(),
        )
    }

    /// Concatenation of several datasets over the same input space.
    pub fn concat(parts: &[&Dataset], task_id: &str) -> Result<Dataset> {
        let inputs: Vec<&Matrix> = parts.iter().map(|d| &d.inputs).collect();
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let classes = parts.iter().map(|d| d.classes).max().unwrap_or(0);
        Dataset::new(Matrix::hcat(&inputs)?, labels, classes, task_id)
    }

    /// Distinct labels present, ascending.
    pub fn label_set(&self) -> Vec<usize> {
        let mut s = self.labels.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for t in 0..self.len() {
            let mut rec: Vec<String> = (0..self.input_dim())
                .map(|r| self.inputs.get(r, t).to_string())
                .collect();
            rec.push(self.labels[t].to_string());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads `x0..x{d-1},label`. `classes` defaults to `max label + 1`.
    pub fn read_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        let d = header.len().saturating_sub(1);
        let header_ok = header.get(d) == Some("label")
            && (0..d).all(|i| header.get(i) == Some(format!("x{i}").as_str()));
        if !header_ok {
            return Err(Error::invalid(format!(
                "{}: header must be x0..x{{d-1}},label",
                path.display()
            )));
        }
        let mut columns: Vec<Vec<f32>> = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let bad = |what: &str| Error::invalid(format!("{}: row {}: bad {what}", path.display(), line + 1));
            let mut col = Vec::with_capacity(d);
            for i in 0..d {
                col.push(rec.get(i).and_then(|s| s.trim().parse::<f32>().ok()).ok_or_else(|| bad("feature"))?);
            }
            labels.push(rec.get(d).and_then(|s| s.trim().parse::<usize>().ok()).ok_or_else(|| bad("label"))?);
            columns.push(col);
        }
        let n = columns.len();
        let inputs = Matrix::from_fn(d, n, |r, c| columns[c][r]);
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let task_id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Dataset::new(inputs, labels, classes, task_id)
    }

    /// MNIST-style IDX pair: images (`0x00000803`, u8 `n x rows x cols`,
    /// big-endian header) and labels (`0x00000801`, u8 `n`). Pixels are
    /// scaled to `[0, 1]`.
    pub fn read_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
        let img = fs::read(images).map_err(|e| Error::io(images, e))?;
        let lab = fs::read(labels).map_err(|e| Error::io(labels, e))?;
        let (img_dims, img_data) = parse_idx(&img, 0x0000_0803, images)?;
        let (lab_dims, lab_data) = parse_idx(&lab, 0x0000_0801, labels)?;
        let n = img_dims[0];
        if lab_dims[0] != n {
            return Err(Error::shape("IDX labels", n, lab_dims[0]));
        }
        let d: usize = img_dims[1..].iter().product();
        let inputs = Matrix::from_fn(d, n, |r, c| f32::from(img_data[c * d + r]) / 255.0);
        let labels: Vec<usize> = lab_data.iter().map(|&l| usize::from(l)).collect();
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let task_id = images.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Dataset::new(inputs, labels, classes, task_id)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::invalid(format!("{}: {e}", path.display()))
    }
}

fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    let be = |i: usize| -> Option<u32> { bytes.get(i..i + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])) };
    let found = be(0).ok_or_else(|| bad("truncated IDX header"))?;
    if found != magic {
        return Err(bad(&format!("IDX magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|i| be(4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("truncated IDX header"))?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let data = bytes.get(start..start + len).ok_or_else(|| bad("truncated IDX data"))?;
    Ok((dims, data))
}

/// Input transform applied to a task's samples.
#[derive(Clone, Debug, PartialEq)]
pub enum InputTransform {
    Identity,
    /// `Q G(angle) Q^T`, where `G` rotates coordinate pairs `(0,1), (2,3), ...`
    /// by `angle` radians and `Q` is a random orthogonal basis shared by
    /// every task of one universe.
    Rotation { angle: f64 },
    /// An explicit `d x d` orthogonal matrix.
    Explicit(Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// Both tasks use every class; inputs pass through per-task transforms.
    SharedLabelRotation { transforms: [InputTransform; 2] },
    /// Each task draws from its own subset of the classes.
    DisjointLabelSubset { subsets: [Vec<usize>; 2] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskParams {
    pub input_dim: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Minimum distance between class means, in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation of each mixture component.
    pub noise: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            input_dim: 12,
            classes: 6,
            train_per_class: 200,
            test_per_class: 100,
            separation: 3.0,
            noise: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskPair {
    pub train: [Dataset; 2],
    pub test: [Dataset; 2],
}

/// Gaussian mixture universe: `classes` isotropic components in
/// `input_dim` dimensions with pairwise mean distance at least
/// `separation * noise`.
#[derive(Clone, Debug)]
pub struct GaussianUniverse {
    pub params: TaskParams,
    means: Vec<Vec<f64>>,
    basis: Matrix,
    seed: u64,
}

const STREAM_MEANS: u64 = 10;
const STREAM_BASIS: u64 = 11;
const STREAM_TRAIN: u64 = 20;
const STREAM_TEST: u64 = 21;

impl GaussianUniverse {
    pub fn new(params: TaskParams, seed: u64) -> Result<Self> {
        if params.classes < 2 {
            return Err(Error::invalid("a task needs at least 2 classes"));
        }
        if params.input_dim == 0 || params.noise <= 0.0 || params.separation < 0.0 {
            return Err(Error::invalid("input_dim and noise must be positive, separation non-negative"));
        }
        let root = seeded_rng(seed);
        let d = params.input_dim;
        let min_dist = params.separation * params.noise;
        let mut rng = root.fork(STREAM_MEANS);
        let means = if d >= params.classes {
            // Scaled orthonormal directions: every pair exactly `min_dist` apart.
            let q = random_orthogonal(d, &mut rng);
            let s = min_dist / std::f64::consts::SQRT_2;
            (0..params.classes)
                .map(|c| (0..d).map(|r| s * f64::from(q.get(r, c))).collect())
                .collect()
        } else {
            rejection_means(params.classes, d, min_dist, &mut rng)?
        };
        let basis = random_orthogonal(d, &mut root.fork(STREAM_BASIS));
        Ok(GaussianUniverse {
            params,
            means,
            basis,
            seed,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn transform_matrix(&self, t: &InputTransform) -> Result<Option<Matrix>> {
        let d = self.params.input_dim;
        match t {
            InputTransform::Identity => Ok(None),
            InputTransform::Rotation { angle } => {
                let (c, s) = (angle.cos() as f32, angle.sin() as f32);
                let mut g = Matrix::identity(d);
                for p in (0..d.saturating_sub(1)).step_by(2) {
                    g.set(p, p, c);
                    g.set(p, p + 1, -s);
                    g.set(p + 1, p, s);
                    g.set(p + 1, p + 1, c);
                }
                Ok(Some(self.basis.matmul(&g)?.matmul(&self.basis.transpose())?))
            }
            InputTransform::Explicit(m) => {
                if m.shape() != (d, d) {
                    return Err(Error::shape("input transform", format!("{d}x{d}"), format!("{}x{}", m.rows(), m.cols())));
                }
                Ok(Some(m.clone()))
            }
        }
    }

    /// Samples `per_class` points from each class in `classes`, in class
    /// order, then applies `transform`. The noise stream depends only on the
    /// universe seed and `split`, so identical transforms give identical
    /// samples.
    pub fn sample(
        &self,
        classes: &[usize],
        per_class: usize,
        transform: &InputTransform,
        split: Split,
        task_id: &str,
    ) -> Result<Dataset> {
        if classes.is_empty() || per_class == 0 {
            return Err(Error::invalid("class subset and per-class count must be non-empty"));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.params.classes) {
            return Err(Error::invalid(format!("class {c} outside the universe")));
        }
        let stream = match split {
            Split::Train => STREAM_TRAIN,
            Split::Test => STREAM_TEST,
            Split::Custom(s) => s,
        };
        let mut rng = seeded_rng(self.seed).fork(stream);
        let d = self.params.input_dim;
        let n = classes.len() * per_class;
        let mut x = Matrix::zeros(d, n);
        let mut labels = Vec::with_capacity(n);
        for (ci, &c) in classes.iter().enumerate() {
            for s in 0..per_class {
                let col = ci * per_class + s;
                for r in 0..d {
                    x.set(r, col, (self.means[c][r] + self.params.noise * rng.normal()) as f32);
                }
                labels.push(c);
            }
        }
        if let Some(m) = self.transform_matrix(transform)? {
            x = m.matmul(&x)?;
        }
        Dataset::new(x, labels, self.params.classes, task_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Custom(u64),
}

/// Two related classification tasks drawn from one Gaussian universe.
pub fn make_synthetic_task(kind: &TaskKind, params: &TaskParams, seed: u64) -> Result<TaskPair> {
    let universe = GaussianUniverse::new(params.clone(), seed)?;
    let all: Vec<usize> = (0..params.classes).collect();
    let (subsets, transforms) = match kind {
        TaskKind::SharedLabelRotation { transforms } => ([all.clone(), all], transforms.clone()),
        TaskKind::DisjointLabelSubset { subsets } => {
            if subsets.iter().any(Vec::is_empty) {
                return Err(Error::invalid("class subsets must be non-empty"));
            }
            (subsets.clone(), [InputTransform::Identity, InputTransform::Identity])
        }
    };
    let mk = |t: usize, split: Split, per: usize, tag: &str| {
        universe.sample(&subsets[t], per, &transforms[t], split, &format!("task{t}-{tag}"))
    };
    Ok(TaskPair {
        train: [
            mk(0, Split::Train, params.train_per_class, "train")?,
            mk(1, Split::Train, params.train_per_class, "train")?,
        ],
        test: [
            mk(0, Split::Test, params.test_per_class, "test")?,
            mk(1, Split::Test, params.test_per_class, "test")?,
        ],
    })
}

/// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix (columns).
pub fn random_orthogonal(d: usize, rng: &mut CounterRng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for u in &cols {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(d, d, |r, c| cols[c][r] as f32)
}

fn rejection_means(classes: usize, d: usize, min_dist: f64, rng: &mut CounterRng) -> Result<Vec<Vec<f64>>> {
    let scale = min_dist.max(1e-12) * (classes as f64).sqrt();
    for _ in 0..10_000 {
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..d).map(|_| scale * rng.normal()).collect())
            .collect();
        let ok = (0..classes).all(|a| {
            (a + 1..classes).all(|b| {
                let d2: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum();
                d2.sqrt() >= min_dist
            })
        });
        if ok {
            return Ok(means);
        }
    }
    Err(Error::invalid("could not place class means at the requested separation"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot(angle: f64) -> InputTransform {
        InputTransform::Rotation { angle }
    }

    #[test]
    fn identity_transforms_give_identical_train_sets() {
        let kind = TaskKind::SharedLabelRotation {
            transforms: [InputTransform::Identity, InputTransform::Identity],
        };
        let pair = make_synthetic_task(&kind, &TaskParams::default(), 3).unwrap();
        assert_eq!(pair.train[0].inputs, pair.train[1].inputs);
        assert_eq!(pair.train[0].labels, pair.train[1].labels);
        assert_ne!(pair.train[0].inputs, pair.test[0].inputs);
    }

    #[test]
    fn rotations_are_orthogonal_and_change_inputs() {
        let u = GaussianUniverse::new(TaskParams::default(), 1).unwrap();
        let m = u.transform_matrix(&rot(0.7)).unwrap().unwrap();
        let mtm = m.transpose().matmul(&m).unwrap();
        let eye = Matrix::identity(12);
        for (a, b) in mtm.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let kind = TaskKind::SharedLabelRotation {
            transforms: [rot(0.0), rot(0.7)],
        };
        let pair = make_synthetic_task(&kind, &TaskParams::default(), 3).unwrap();
        assert_ne!(pair.train[0].inputs, pair.train[1].inputs);
        assert_eq!(pair.train[0].label_set(), pair.train[1].label_set());
    }

    #[test]
    fn disjoint_subsets_have_disjoint_labels() {
        let params = TaskParams {
            classes: 10,
            ..TaskParams::default()
        };
        let kind = TaskKind::DisjointLabelSubset {
            subsets: [(0..5).collect(), (5..10).collect()],
        };
        let pair = make_synthetic_task(&kind, &params, 0).unwrap();
        let a = pair.train[0].label_set();
        let b = pair.train[1].label_set();
        assert_eq!(a, (0..5).collect::<Vec<_>>());
        assert_eq!(b, (5..10).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_parameters() {
        let params = TaskParams {
            classes: 1,
            ..TaskParams::default()
        };
        let kind = TaskKind::SharedLabelRotation {
            transforms: [InputTransform::Identity, InputTransform::Identity],
        };
        assert!(make_synthetic_task(&kind, &params, 0).is_err());
        let empty = TaskKind::DisjointLabelSubset {
            subsets: [vec![], vec![1]],
        };
        assert!(make_synthetic_task(&empty, &TaskParams::default(), 0).is_err());
    }

    #[test]
    fn separated_means_in_low_dimension() {
        let params = TaskParams {
            input_dim: 2,
            classes: 5,
            separation: 4.0,
            ..TaskParams::default()
        };
        let u = GaussianUniverse::new(params, 9).unwrap();
        let m = u.means();
        for a in 0..5 {
            for b in a + 1..5 {
                let d: f64 = m[a].iter().zip(&m[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 4.0);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![0.5, -1.25, 3.0], vec![2.0, 0.0, 1e-3]]),
            vec![0, 2, 1],
            3,
            "t",
        )
        .unwrap();
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, Some(3)).unwrap();
        assert_eq!(back, ds);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
    }

    #[test]
    fn idx_reader() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0u8, 0, 8, 3];
        for v in [2u32, 1, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(&[0, 255, 51, 102]);
        let mut lab = vec![0u8, 0, 8, 1];
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[1, 0]);
        let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let ds = Dataset::read_idx(&ip, &lp, None).unwrap();
        assert_eq!(ds.inputs.shape(), (2, 2));
        assert_eq!(ds.inputs.column(0), vec![0.0, 1.0]);
        assert_eq!(ds.inputs.column(1), vec![0.2, 0.4]);
        assert_eq!(ds.labels, vec![1, 0]);
        std::fs::write(&lp, &img).unwrap();
        assert!(Dataset::read_idx(&ip, &lp, None).is_err());
    }
}
