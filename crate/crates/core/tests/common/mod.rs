#![allow(dead_code)]

use pleas_core::data::{make_synthetic_task, GaussianUniverse, InputTransform, Split, TaskKind, TaskPair, TaskParams};
use pleas_core::eval::accuracy;
use pleas_core::network::{init_network, train_toy, NetworkCheckpoint, NetworkSpec, TrainHyper};
use pleas_core::rng::CounterRng;
use pleas_core::Matrix;

pub const WIDTHS: [usize; 4] = [12, 16, 16, 6];
/// Rotation between the two tasks of the toy pair.
pub const ANGLE: f64 = 1.2;
/// Rotation of the proxy distribution, between the two task domains.
pub const PROXY_ANGLE: f64 = 0.6;
pub const SEPARATION: f64 = 4.0;
pub const TRAIN_STEPS: usize = 1500;

pub struct Toy {
    pub params: TaskParams,
    pub task_seed: u64,
    pub pair: TaskPair,
    pub a: NetworkCheckpoint,
    pub b: NetworkCheckpoint,
}

impl Toy {
    pub fn tests(&self) -> [&pleas_core::data::Dataset; 2] {
        [&self.pair.test[0], &self.pair.test[1]]
    }

    /// Accuracy averaged over both test sets.
    pub fn mean_accuracy(&self, net: &NetworkCheckpoint) -> f64 {
        self.tests().iter().map(|t| accuracy(net, t).unwrap()).sum::<f64>() / 2.0
    }

    pub fn proxy(&self) -> pleas_core::data::Dataset {
        let universe = GaussianUniverse::new(self.params.clone(), self.task_seed).unwrap();
        let classes: Vec<usize> = (0..self.params.classes).collect();
        universe
            .sample(&classes, 200, &InputTransform::Rotation { angle: PROXY_ANGLE }, Split::Custom(30), "proxy")
            .unwrap()
    }
}

/// Two independently initialized nets trained on the rotated-Gaussian pair.
pub fn toy_pair(seed: u64, steps: usize) -> Toy {
    let params = TaskParams {
        separation: SEPARATION,
        ..TaskParams::default()
    };
    let kind = TaskKind::SharedLabelRotation {
        transforms: [InputTransform::Identity, InputTransform::Rotation { angle: ANGLE }],
    };
    let task_seed = 100 + seed;
    let pair = make_synthetic_task(&kind, &params, task_seed).unwrap();
    let spec = NetworkSpec::new(WIDTHS.to_vec(), false).unwrap();
    let hyper = |s| TrainHyper {
        lr: 0.05,
        steps,
        batch_size: 32,
        seed: s,
    };
    let a = train_toy(&pair.train[0], &spec, hyper(2 * seed + 1)).unwrap().net;
    let b = train_toy(&pair.train[1], &spec, hyper(2 * seed + 2)).unwrap().net;
    Toy {
        params,
        task_seed,
        pair,
        a,
        b,
    }
}

/// Untrained network with random weights and biases.
pub fn random_net(widths: &[usize], batchnorm: bool, seed: u64) -> NetworkCheckpoint {
    init_network(&NetworkSpec::new(widths.to_vec(), batchnorm).unwrap(), seed).unwrap()
}

pub fn gaussian_inputs(rows: usize, cols: usize, rng: &mut CounterRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

/// Every permutation of `0..n`.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                extend(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Distance in units in the last place between two finite f32 values.
pub fn ulps(x: f32, y: f32) -> u32 {
    let key = |v: f32| {
        let bits = v.to_bits() as i32;
        if bits < 0 {
            i32::MIN - bits
        } else {
            bits
        }
    };
    (key(x) as i64 - key(y) as i64).unsigned_abs() as u32
}
