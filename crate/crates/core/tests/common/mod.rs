//! Reference implementations shared by the integration tests and the
//! acceptance runner. Everything here is written directly from the
//! definitions, without reusing the library code under test.

#![allow(dead_code)]

use gradlex::data::{augment, partition, AugmentConfig, Dataset};
use gradlex::nn::{init_params, LayerSpec, ModelState};
use gradlex::optim::LrSchedule;
use gradlex::seed::{self, derive_seed, STREAM_INIT, STREAM_LINEAGE, STREAM_PARTITION};
use gradlex::selection::{LexicaseMode, Termination};
use gradlex::Tensor;
use rand::Rng;

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-3;
/// Instances with a ReLU input or a max-pool runner-up this close to a
/// non-differentiable point are redrawn.
const KINK_MARGIN: f64 = 1e-3;

pub struct GradInstance {
    pub name: &'static str,
    pub model: ModelState,
    pub batch: Tensor,
    pub labels: Vec<usize>,
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Draws the `i`-th instance; cycles through chains that cover every layer
/// kind with varied sizes, strides and padding.
pub fn grad_instance(i: usize, rng: &mut impl Rng) -> GradInstance {
    loop {
        let classes = rng.gen_range(2..=4);
        let batch_n = rng.gen_range(1..=3);
        let (name, input, layers): (&str, Vec<usize>, Vec<LayerSpec>) = match i % 4 {
            0 => {
                let d = rng.gen_range(1..=6);
                ("dense", vec![d], vec![LayerSpec::Dense { inputs: d, outputs: classes }])
            }
            1 => {
                let d = rng.gen_range(2..=5);
                let hid = rng.gen_range(2..=6);
                (
                    "dense-relu",
                    vec![d],
                    vec![
                        LayerSpec::Dense { inputs: d, outputs: hid },
                        LayerSpec::Relu,
                        LayerSpec::Dense { inputs: hid, outputs: classes },
                    ],
                )
            }
            2 => {
                let c = rng.gen_range(1..=2);
                let h = rng.gen_range(3..=6);
                let w = rng.gen_range(3..=6);
                let k = rng.gen_range(1..=3);
                let stride = rng.gen_range(1..=2);
                let padding = rng.gen_range(0..=1);
                let oc = rng.gen_range(1..=3);
                let conv = LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: oc,
                    kernel: k,
                    stride,
                    padding,
                };
                let Ok(out) = conv.output_shape(&[c, h, w]) else { continue };
                let flat: usize = out.iter().product();
                (
                    "conv-flatten",
                    vec![c, h, w],
                    vec![
                        conv,
                        LayerSpec::Flatten,
                        LayerSpec::Dense { inputs: flat, outputs: classes },
                    ],
                )
            }
            _ => {
                let c = rng.gen_range(1..=2);
                let h = rng.gen_range(4..=7);
                let w = rng.gen_range(4..=7);
                let oc = rng.gen_range(1..=3);
                let conv = LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: oc,
                    kernel: 3,
                    stride: 1,
                    padding: rng.gen_range(0..=1),
                };
                let window = rng.gen_range(2..=3);
                let pool = LayerSpec::MaxPool2d {
                    window,
                    stride: rng.gen_range(1..=window),
                };
                let Ok(a) = conv.output_shape(&[c, h, w]) else { continue };
                let Ok(b) = pool.output_shape(&a) else { continue };
                let flat: usize = b.iter().product();
                (
                    "conv-relu-pool",
                    vec![c, h, w],
                    vec![
                        conv,
                        LayerSpec::Relu,
                        pool,
                        LayerSpec::Flatten,
                        LayerSpec::Dense { inputs: flat, outputs: classes },
                    ],
                )
            }
        };
        let mut model = init_params(&input, &layers, classes, rng).expect("valid chain");
        for p in model.params_mut() {
            for v in p.data_mut() {
                // nonzero biases too, so every parameter moves the loss
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut shape = vec![batch_n];
        shape.extend_from_slice(&input);
        let batch = uniform(rng, shape);
        let labels = (0..batch_n).map(|_| rng.gen_range(0..classes)).collect();
        let inst = GradInstance { name, model, batch, labels };
        if clear_of_kinks(&inst) {
            return inst;
        }
    }
}

fn clear_of_kinks(inst: &GradInstance) -> bool {
    let m = &inst.model;
    for (i, layer) in m.layers().iter().enumerate() {
        if i == 0 {
            if matches!(layer, LayerSpec::Relu | LayerSpec::MaxPool2d { .. }) {
                return false;
            }
            continue;
        }
        let input = m.forward_to(&inst.batch, i - 1).expect("forward");
        match *layer {
            LayerSpec::Relu => {
                if input.data().iter().any(|v| v.abs() < KINK_MARGIN) {
                    return false;
                }
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let s = input.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
                for plane in input.data().chunks_exact(h * w).take(n * c) {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut vals: Vec<f64> = (0..window * window)
                                .map(|k| {
                                    plane[(oy * stride + k / window) * w + ox * stride + k % window]
                                })
                                .collect();
                            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                            if vals[0] - vals[1] < KINK_MARGIN {
                                return false;
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    true
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-6)` between the
/// analytic gradient and central differences over every parameter.
pub fn grad_check(inst: &GradInstance) -> f64 {
    let (_, grads) = inst.model.loss_and_grad(&inst.batch, &inst.labels).expect("loss");
    let mut worst = 0.0f64;
    let mut probe = inst.model.clone();
    for t in 0..probe.params().len() {
        for e in 0..probe.params()[t].len() {
            let orig = probe.params()[t].data()[e];
            probe.params_mut()[t].data_mut()[e] = orig + FD_STEP;
            let (up, _) = probe.loss_and_grad(&inst.batch, &inst.labels).expect("loss");
            probe.params_mut()[t].data_mut()[e] = orig - FD_STEP;
            let (down, _) = probe.loss_and_grad(&inst.batch, &inst.labels).expect("loss");
            probe.params_mut()[t].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.0[t].data()[e];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// lexicase

pub struct NaiveOutcome {
    pub selected: usize,
    pub cases_consumed: usize,
    pub termination: Termination,
}

/// Case-by-case lexicase straight from the definition. Uniform picks draw
/// `rng.gen_range(0..survivors)` over survivors kept in pool order.
pub fn naive_lexicase(
    rows: &[Vec<bool>],
    pool: &[usize],
    seq: &[usize],
    rng: &mut impl Rng,
    mode: LexicaseMode,
) -> NaiveOutcome {
    let mut survivors = pool.to_vec();
    if survivors.len() == 1 {
        return NaiveOutcome {
            selected: survivors[0],
            cases_consumed: 0,
            termination: Termination::SingleSurvivor,
        };
    }
    for (k, &case) in seq.iter().enumerate() {
        let passing: Vec<usize> = survivors.iter().copied().filter(|&c| rows[c][case]).collect();
        if passing.is_empty() {
            if mode == LexicaseMode::Modified {
                return NaiveOutcome {
                    selected: survivors[rng.gen_range(0..survivors.len())],
                    cases_consumed: k + 1,
                    termination: Termination::AllFailRandom,
                };
            }
        } else {
            survivors = passing;
        }
        if survivors.len() == 1 {
            return NaiveOutcome {
                selected: survivors[0],
                cases_consumed: k + 1,
                termination: Termination::SingleSurvivor,
            };
        }
    }
    NaiveOutcome {
        selected: survivors[rng.gen_range(0..survivors.len())],
        cases_consumed: seq.len(),
        termination: Termination::ExhaustedRandom,
    }
}

pub struct LexicaseFixture {
    pub rows: Vec<Vec<bool>>,
    pub pool: Vec<usize>,
    pub seq: Vec<usize>,
    pub seed: u64,
}

/// Up to 8 candidates and 64 cases; the pass rate varies per fixture so
/// all three termination reasons occur.
pub fn lexicase_fixture(rng: &mut impl Rng) -> LexicaseFixture {
    let candidates = rng.gen_range(1..=8);
    let cases = rng.gen_range(1..=64);
    let rate: f64 = rng.gen_range(0.05..0.98);
    let rows = (0..candidates)
        .map(|_| (0..cases).map(|_| rng.gen_bool(rate)).collect())
        .collect();
    let mut pool: Vec<usize> = (0..candidates).filter(|_| rng.gen_bool(0.8)).collect();
    if pool.is_empty() {
        pool.push(0);
    }
    let mut seq: Vec<usize> = (0..cases).collect();
    for i in (1..seq.len()).rev() {
        seq.swap(i, rng.gen_range(0..=i));
    }
    seq.truncate(rng.gen_range(1..=cases));
    LexicaseFixture {
        rows,
        pool,
        seq,
        seed: rng.gen(),
    }
}

// ---------------------------------------------------------------------------
// training

/// A straight-line momentum-SGD trainer: each epoch shuffles the data with
/// the partition stream (one subset), augments with the lineage stream and
/// applies `v <- mu * v + g; w <- w - eta * v` by hand.
pub struct DirectLoop {
    pub seed: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub momentum: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub augment: AugmentConfig,
}

impl DirectLoop {
    pub fn train(&self, dataset: &Dataset, arch: &gradlex::nn::Architecture) -> ModelState {
        let images = dataset.normalized();
        let shape = dataset.sample_shape().to_vec();
        let mut model = arch
            .init(&shape, dataset.num_classes(), &mut seed::rng(derive_seed(self.seed, STREAM_INIT, 0)))
            .expect("init");
        let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let n = dataset.len();
        let horizon = self.epochs * n.div_ceil(self.batch_size) as u64;
        let sched = LrSchedule::new(self.lr_max, self.lr_min, horizon).expect("schedule");
        let mut lineage = derive_seed(self.seed, STREAM_LINEAGE, 0);
        let mut t = 0u64;
        for epoch in 0..self.epochs {
            lineage = derive_seed(lineage, epoch, 0);
            let mut aug_rng = seed::rng(lineage);
            let order = partition(n, 1, &mut seed::rng(derive_seed(self.seed, STREAM_PARTITION, epoch)))
                .expect("partition")
                .subsets
                .remove(0);
            for chunk in order.chunks(self.batch_size) {
                let mut data = Vec::new();
                for &i in chunk {
                    let img = Tensor::new(shape.clone(), images.row(i).to_vec()).unwrap();
                    data.extend(augment(&img, &self.augment, &mut aug_rng).unwrap().into_data());
                }
                let mut bshape = vec![chunk.len()];
                bshape.extend_from_slice(&shape);
                let batch = Tensor::new(bshape, data).unwrap();
                let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
                let (_, grads) = model.loss_and_grad(&batch, &labels).expect("finite");
                let eta = sched.eta(t);
                for ((p, g), v) in model.params_mut().iter_mut().zip(&grads.0).zip(&mut velocity) {
                    for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = self.momentum * *vi + gi;
                        *w -= eta * *vi;
                    }
                }
                t += 1;
            }
        }
        model
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
