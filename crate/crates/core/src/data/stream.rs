//! Infinite stream of training batches built from a [`TrainingSet`].

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver};
use rand::Rng;

use super::dataset::TrainingSet;
use super::sampler::{mixup_batch, rejection_filter, sample_patch_pair, ColorTransform, GeoTransform, PatchPair, SamplerConfig};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{derived, SrRng};
use crate::tensor::Tensor;

/// Stream id offset for the rejection generator, kept apart from the patch
/// generator so that accepting everything leaves patch draws untouched.
const REJECTION_STREAM: u64 = 1 << 32;

/// One NCHW training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamOptions {
    pub workers: usize,
    /// Round-robin over workers so the batch order is reproducible.
    pub strict_order: bool,
    /// Batches buffered per worker.
    pub queue_depth: usize,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            workers: 1,
            strict_order: true,
            queue_depth: 2,
        }
    }
}

/// Produces batches for one worker.
struct Producer {
    set: Arc<TrainingSet>,
    cfg: SamplerConfig,
    batch_size: usize,
    rng: SrRng,
    reject_rng: SrRng,
}

impl Producer {
    fn new(set: Arc<TrainingSet>, cfg: SamplerConfig, batch_size: usize, worker: u64) -> Self {
        let seed = cfg.seed;
        Producer {
            set,
            cfg,
            batch_size,
            rng: derived(seed, worker),
            reject_rng: derived(seed, REJECTION_STREAM + worker),
        }
    }

    fn sample_one(&mut self) -> Result<PatchPair> {
        loop {
            let idx = self.rng.random_range(0..self.set.pairs.len());
            let src = &self.set.pairs[idx];
            let pair = sample_patch_pair(&src.name, &src.hr, &src.lr, self.set.scale, self.cfg.patch_size, &mut self.rng)?;
            if let Some(rule) = self.cfg.rejection {
                if !rejection_filter(&pair, rule.threshold_db, rule.reject_prob, &mut self.reject_rng)? {
                    continue;
                }
            }
            let mut pair = pair;
            if self.cfg.geo_aug {
                pair = GeoTransform::sample(&mut self.rng).apply(&pair);
            }
            if self.cfg.color_aug {
                pair = ColorTransform::sample(&mut self.rng).apply(&pair)?;
            }
            return Ok(pair);
        }
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let mut pairs = (0..self.batch_size).map(|_| self.sample_one()).collect::<Result<Vec<_>>>()?;
        if let Some(alpha) = self.cfg.mixup_alpha {
            if pairs.len() >= 2 {
                pairs = mixup_batch(&pairs, alpha, &mut self.rng)?.0;
            }
        }
        let lr: Vec<&ImageTensor> = pairs.iter().map(|p| &p.lr).collect();
        let hr: Vec<&ImageTensor> = pairs.iter().map(|p| &p.hr).collect();
        Ok(Batch {
            lr: ImageTensor::to_batch(&lr)?,
            hr: ImageTensor::to_batch(&hr)?,
            sources: pairs.into_iter().map(|p| p.source_id).collect(),
        })
    }
}

enum Mode {
    Inline(Box<Producer>),
    Workers {
        receivers: Vec<Receiver<Result<Batch>>>,
        next: usize,
        strict: bool,
        stop: Arc<AtomicBool>,
        handles: Vec<JoinHandle<()>>,
    },
}

/// Sequential view of the batch producers. Iterating never ends on its own;
/// an `Err` item means sampling failed and the stream should be dropped.
pub struct BatchStream {
    mode: Mode,
}

impl BatchStream {
    pub fn next_batch(&mut self) -> Result<Batch> {
        match &mut self.mode {
            Mode::Inline(p) => p.next_batch(),
            Mode::Workers {
                receivers, next, strict, ..
            } => {
                let disconnected = || Error::Sampling("data worker stopped".into());
                if *strict {
                    let rx = &receivers[*next];
                    *next = (*next + 1) % receivers.len();
                    rx.recv().map_err(|_| disconnected())?
                } else {
                    let mut sel = crossbeam_channel::Select::new();
                    for rx in receivers.iter() {
                        sel.recv(rx);
                    }
                    let op = sel.select();
                    let i = op.index();
                    op.recv(&receivers[i]).map_err(|_| disconnected())?
                }
            }
        }
    }
}

impl Iterator for BatchStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        if let Mode::Workers {
            receivers, stop, handles, ..
        } = &mut self.mode
        {
            stop.store(true, Ordering::Relaxed);
            // Dropping the receivers unblocks any worker waiting to send.
            receivers.clear();
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}

/// Builds the batch stream. With one worker batches are produced on the
/// caller's thread; otherwise each worker runs with seed `(cfg.seed, id)`.
pub fn make_batch_stream(
    set: Arc<TrainingSet>,
    cfg: &SamplerConfig,
    batch_size: usize,
    opts: StreamOptions,
) -> Result<BatchStream> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Sampling("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if opts.workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    for p in &set.pairs {
        if p.lr.height() < cfg.patch_size || p.lr.width() < cfg.patch_size {
            return Err(Error::Sampling(format!(
                "`{}`: LR image {}x{} is smaller than patch {}",
                p.name,
                p.lr.height(),
                p.lr.width(),
                cfg.patch_size
            )));
        }
    }
    if opts.workers == 1 {
        return Ok(BatchStream {
            mode: Mode::Inline(Box::new(Producer::new(set, cfg.clone(), batch_size, 0))),
        });
    }
    let stop = Arc::new(AtomicBool::new(false));
    let mut receivers = Vec::with_capacity(opts.workers);
    let mut handles = Vec::with_capacity(opts.workers);
    for w in 0..opts.workers {
        let (tx, rx) = bounded(opts.queue_depth.max(1));
        let mut producer = Producer::new(Arc::clone(&set), cfg.clone(), batch_size, w as u64);
        let stop = Arc::clone(&stop);
        handles.push(std::thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                let item = producer.next_batch();
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        }));
        receivers.push(rx);
    }
    Ok(BatchStream {
        mode: Mode::Workers {
            receivers,
            next: 0,
            strict: opts.strict_order,
            stop,
            handles,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::LoadedPair;
    use crate::data::sampler::Rejection;
    use crate::image::ColorSpace;

    fn set() -> Arc<TrainingSet> {
        let pairs = (0..3)
            .map(|k| {
                let hr = ImageTensor::from_fn(40, 36, ColorSpace::Rgb, move |y, x, c| {
                    (((y * (k + 2) + x * 3 + c) % 17) as f32 / 16.0).clamp(0.0, 1.0)
                });
                LoadedPair::new(format!("img{k}"), hr, None, 2).unwrap()
            })
            .collect();
        Arc::new(TrainingSet::from_pairs(2, pairs))
    }

    fn cfg() -> SamplerConfig {
        SamplerConfig {
            patch_size: 8,
            geo_aug: true,
            color_aug: true,
            mixup_alpha: Some(0.15),
            rejection: None,
            seed: 42,
        }
    }

    fn take(stream: &mut BatchStream, n: usize) -> Vec<Batch> {
        (0..n).map(|_| stream.next_batch().unwrap()).collect()
    }

    #[test]
    fn same_seed_same_batches() {
        let s = set();
        let a = take(&mut make_batch_stream(s.clone(), &cfg(), 4, StreamOptions::default()).unwrap(), 10);
        let b = take(&mut make_batch_stream(s, &cfg(), 4, StreamOptions::default()).unwrap(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn batch_shapes() {
        let mut st = make_batch_stream(set(), &cfg(), 5, StreamOptions::default()).unwrap();
        let b = st.next_batch().unwrap();
        assert_eq!(b.lr.shape(), &[5, 3, 8, 8]);
        assert_eq!(b.hr.shape(), &[5, 3, 16, 16]);
        assert!(b.lr.data().iter().chain(b.hr.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejection_that_never_fires_leaves_stream_unchanged() {
        let s = set();
        let plain = take(&mut make_batch_stream(s.clone(), &cfg(), 3, StreamOptions::default()).unwrap(), 5);
        for rule in [
            Rejection { threshold_db: f64::INFINITY, reject_prob: 0.8 },
            Rejection { threshold_db: 24.0, reject_prob: 0.0 },
        ] {
            let c = SamplerConfig { rejection: Some(rule), ..cfg() };
            let filtered = take(&mut make_batch_stream(s.clone(), &c, 3, StreamOptions::default()).unwrap(), 5);
            assert_eq!(plain, filtered);
        }
    }

    #[test]
    fn strict_multi_worker_order_is_reproducible() {
        let opts = StreamOptions { workers: 3, strict_order: true, queue_depth: 1 };
        let a = take(&mut make_batch_stream(set(), &cfg(), 2, opts).unwrap(), 7);
        let b = take(&mut make_batch_stream(set(), &cfg(), 2, opts).unwrap(), 7);
        assert_eq!(a, b);
        // worker 0 of a multi-worker stream matches the single-worker stream
        let single = take(&mut make_batch_stream(set(), &cfg(), 2, StreamOptions::default()).unwrap(), 3);
        assert_eq!(a[0], single[0]);
        assert_eq!(a[3], single[1]);
    }

    #[test]
    fn patch_larger_than_image_is_rejected_up_front() {
        let c = SamplerConfig { patch_size: 32, ..cfg() };
        assert!(matches!(
            make_batch_stream(set(), &c, 2, StreamOptions::default()),
            Err(Error::Sampling(_))
        ));
    }
}
