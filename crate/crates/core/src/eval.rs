//! Depth error metrics over range buckets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
}

impl Bucket {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && z < self.hi
    }

    pub fn label(&self) -> String {
        format!("{}-{} m", self.lo, self.hi)
    }
}

pub const DEFAULT_BUCKETS: [Bucket; 3] = [Bucket::new(0.0, 160.0), Bucket::new(0.0, 220.0), Bucket::new(100.0, 220.0)];

/// Running sums behind the metrics; merging two accumulators pools their pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accum {
    /// Ground-truth pixels in the bucket.
    pub total: usize,
    /// Of those, pixels with a valid prediction.
    pub valid: usize,
    pub sq: f64,
    pub abs: f64,
    pub rel: f64,
    pub hits: [usize; 3],
}

impl Accum {
    pub fn merge(&mut self, o: &Accum) {
        self.total += o.total;
        self.valid += o.valid;
        self.sq += o.sq;
        self.abs += o.abs;
        self.rel += o.rel;
        for i in 0..3 {
            self.hits[i] += o.hits[i];
        }
    }

    pub fn metrics(&self) -> Option<Metrics> {
        if self.total == 0 {
            return None;
        }
        let n = self.valid as f64;
        let pct = |h: usize| 100.0 * h as f64 / self.total as f64;
        Some(Metrics {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            ard: self.rel / n,
            delta: [pct(self.hits[0]), pct(self.hits[1]), pct(self.hits[2])],
            count: self.valid,
            excluded: self.total - self.valid,
        })
    }
}

/// Errors in metres (ARD unitless); `delta[i]` is the percentage of bucket pixels
/// with `max(ẑ/z, z/ẑ) < 1.25^(i+1)`, where invalid predictions count as misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub ard: f64,
    pub delta: [f64; 3],
    /// Pixels entering RMSE/MAE/ARD.
    pub count: usize,
    /// Bucket pixels without a valid prediction.
    pub excluded: usize,
}

pub fn accumulate(pred: &DepthMap, gt: &DepthMap, bucket: Bucket) -> Result<Accum> {
    if !pred.same_size(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut a = Accum::default();
    for i in 0..gt.values.len() {
        let z = gt.values[i];
        if !gt.mask[i] || !bucket.contains(z) {
            continue;
        }
        a.total += 1;
        if !pred.mask[i] {
            continue;
        }
        let p = pred.values[i];
        let e = p - z;
        a.valid += 1;
        a.sq += e * e;
        a.abs += e.abs();
        a.rel += e.abs() / z;
        let ratio = (p / z).max(z / p);
        for (k, h) in a.hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
    }
    Ok(a)
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, bucket: Bucket) -> Result<Metrics> {
    accumulate(pred, gt, bucket)?.metrics().ok_or(Error::EmptyBucket { lo: bucket.lo, hi: bucket.hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: Bucket,
    pub accum: Accum,
    /// `None` when the bucket holds no ground truth.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub buckets: Vec<BucketReport>,
}

impl EvalReport {
    pub fn get(&self, bucket: Bucket) -> Option<&Metrics> {
        self.buckets.iter().find(|b| b.bucket == bucket).and_then(|b| b.metrics.as_ref())
    }

    /// Pools several reports over the same buckets.
    pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
        let Some(first) = reports.first() else {
            return Ok(EvalReport { buckets: Vec::new() });
        };
        let mut buckets = first.buckets.clone();
        for r in &reports[1..] {
            if r.buckets.len() != buckets.len() || r.buckets.iter().zip(&buckets).any(|(a, b)| a.bucket != b.bucket) {
                return Err(Error::ShapeMismatch("reports use different buckets".into()));
            }
            for (b, o) in buckets.iter_mut().zip(&r.buckets) {
                b.accum.merge(&o.accum);
            }
        }
        for b in &mut buckets {
            b.metrics = b.accum.metrics();
        }
        Ok(EvalReport { buckets })
    }
}

pub fn bucketed_report(pred: &DepthMap, gt: &DepthMap, buckets: &[Bucket]) -> Result<EvalReport> {
    let buckets = buckets
        .iter()
        .map(|&bucket| {
            let accum = accumulate(pred, gt, bucket)?;
            Ok(BucketReport { bucket, accum, metrics: accum.metrics() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { buckets })
}
