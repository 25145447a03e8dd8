//! Rate-distortion points and curves, and Bjøntegaard deltas computed with
//! monotone piecewise-cubic (PCHIP) interpolation integrated in closed form.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub name: String,
    pub value: f64,
}

/// PSNR may be `+inf`; JSON has no infinity, so it is written as `"inf"`.
mod psnr_serde {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad psnr value `{t}`"))),
        }
    }
}

/// One model's averaged measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    pub bpp: f64,
    #[serde(default, with = "psnr_serde")]
    pub psnr_db: Option<f64>,
    #[serde(default)]
    pub ms_ssim: Option<f64>,
    #[serde(default)]
    pub task_metric: Option<TaskMetric>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    /// dB; BD quality is reported in dB.
    Psnr,
    /// Scaled by 100, BD quality in percentage points.
    MsSsim,
    /// A task metric by name, scaled by 100.
    Task(String),
}

impl Metric {
    pub fn parse(s: &str) -> Self {
        match s {
            "psnr" => Self::Psnr,
            "ms_ssim" | "ms-ssim" => Self::MsSsim,
            other => Self::Task(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Psnr => "psnr",
            Self::MsSsim => "ms_ssim",
            Self::Task(n) => n,
        }
    }

    /// Plotted/averaged value of a point, if it carries this metric.
    pub fn value(&self, p: &RDPoint) -> Option<f64> {
        match self {
            Self::Psnr => p.psnr_db.filter(|v| v.is_finite()),
            Self::MsSsim => p.ms_ssim.map(|v| 100.0 * v),
            Self::Task(n) => p.task_metric.as_ref().filter(|t| &t.name == n).map(|t| 100.0 * t.value),
        }
    }
}

/// Points of one model family, sorted by strictly increasing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    pub id: String,
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub fn new(id: impl Into<String>, mut points: Vec<RDPoint>) -> Result<Self> {
        if points.iter().any(|p| !(p.bpp >= 0.0) || !p.bpp.is_finite()) {
            return Err(Error::InvalidValue("bpp must be finite and non-negative".into()));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::InvalidValue("duplicate bpp in curve".into()));
        }
        Ok(Self { id: id.into(), points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    /// Curve files hold one JSON point per line.
    pub fn to_jsonl(&self) -> String {
        self.points
            .iter()
            .map(|p| serde_json::to_string(p).expect("point serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: RDPoint =
                serde_json::from_str(line).map_err(|e| Error::Config(format!("curve line {}: {e}", i + 1)))?;
            points.push(p);
        }
        Self::new(id, points)
    }

    /// Reads a curve file; the id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path.file_stem().map_or_else(|| "curve".into(), |s| s.to_string_lossy().into_owned());
        Self::from_jsonl(id, &text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// `(log2 bpp, metric)` pairs where both exist.
    fn samples(&self, metric: &Metric) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.bpp > 0.0)
            .filter_map(|p| metric.value(p).map(|v| (p.bpp.log2(), v)))
            .collect()
    }
}

/// Monotone cubic Hermite interpolant (Fritsch-Carlson slopes with the
/// three-point end conditions).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidValue("interpolation needs at least two points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidValue("interpolation abscissae must increase strictly".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    fn segment(&self, t: f64) -> usize {
        self.x.partition_point(|&v| v <= t).clamp(1, self.x.len() - 1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.d[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.d[i + 1]
    }

    /// Antiderivative of segment `i` from its left end to local `s`.
    fn partial(&self, i: usize, s: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
        h * ((0.5 * s4 - s3 + s) * self.y[i]
            + (0.25 * s4 - 2.0 / 3.0 * s3 + 0.5 * s2) * h * self.d[i]
            + (-0.5 * s4 + s3) * self.y[i + 1]
            + (0.25 * s4 - s3 / 3.0) * h * self.d[i + 1])
    }

    /// Exact integral over `[a, b]` inside the data range.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let local = |i: usize, t: f64| (t - self.x[i]) / (self.x[i + 1] - self.x[i]);
        let (ia, ib) = (self.segment(a), self.segment(b));
        if ia == ib {
            return self.partial(ia, local(ia, b)) - self.partial(ia, local(ia, a));
        }
        let mut total = self.partial(ia, 1.0) - self.partial(ia, local(ia, a));
        for i in ia + 1..ib {
            total += self.partial(i, 1.0);
        }
        total + self.partial(ib, local(ib, b))
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

fn interpolant(mut pts: Vec<(f64, f64)>) -> Result<Pchip> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 2 {
        return Err(Error::InvalidValue("a curve needs at least two points with this metric".into()));
    }
    let (x, y) = pts.into_iter().unzip();
    Pchip::new(x, y)
}

/// Deltas are rounded to 1e-9 of their unit, so that constructed cases
/// (identical curves, constant offsets) come out exact.
fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn mean_gap(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> Result<(f64, (f64, f64))> {
    let a = interpolant(anchor)?;
    let t = interpolant(test)?;
    let lo = a.x[0].max(t.x[0]);
    let hi = a.x[a.x.len() - 1].min(t.x[t.x.len() - 1]);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    Ok(((t.integral(lo, hi) - a.integral(lo, hi)) / (hi - lo), (lo, hi)))
}

/// Average vertical gap `test - anchor` of metric over log2(bpp) on the
/// common rate range. Returns the gap and the overlap in log2(bpp).
pub fn bd_quality_with_overlap(anchor: &RDCurve, test: &RDCurve, metric: &Metric) -> Result<(f64, (f64, f64))> {
    let (gap, overlap) = mean_gap(anchor.samples(metric), test.samples(metric))?;
    Ok((snap(gap), overlap))
}

pub fn bd_quality(anchor: &RDCurve, test: &RDCurve, metric: &Metric) -> Result<f64> {
    Ok(bd_quality_with_overlap(anchor, test, metric)?.0)
}

/// Average rate difference in percent at equal quality: the mean gap of
/// log2(bpp) over the common metric range, mapped through `2^gap - 1`.
pub fn bd_rate_with_overlap(anchor: &RDCurve, test: &RDCurve, metric: &Metric) -> Result<(f64, (f64, f64))> {
    let swap = |c: &RDCurve| -> Vec<(f64, f64)> { c.samples(metric).into_iter().map(|(r, q)| (q, r)).collect() };
    let (gap, overlap) = mean_gap(swap(anchor), swap(test))?;
    Ok((snap(100.0 * (gap.exp2() - 1.0)), overlap))
}

pub fn bd_rate(anchor: &RDCurve, test: &RDCurve, metric: &Metric) -> Result<f64> {
    Ok(bd_rate_with_overlap(anchor, test, metric)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BDReport {
    pub anchor: String,
    pub test: String,
    pub metric: String,
    /// dB for PSNR, percentage points otherwise.
    pub bd_quality: Option<f64>,
    /// Percent; negative means the test curve needs fewer bits.
    pub bd_rate: Option<f64>,
    /// log2(bpp) range used for `bd_quality`.
    pub rate_overlap: Option<(f64, f64)>,
    /// Metric range used for `bd_rate`.
    pub quality_overlap: Option<(f64, f64)>,
    pub error: Option<String>,
}

/// Both deltas; a failure of either is recorded rather than returned.
pub fn bd_report(anchor: &RDCurve, test: &RDCurve, metric: &Metric) -> BDReport {
    let q = bd_quality_with_overlap(anchor, test, metric);
    let r = bd_rate_with_overlap(anchor, test, metric);
    let error = match (&q, &r) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    BDReport {
        anchor: anchor.id.clone(),
        test: test.id.clone(),
        metric: metric.name().to_string(),
        bd_quality: q.as_ref().ok().map(|v| v.0),
        rate_overlap: q.as_ref().ok().map(|v| v.1),
        bd_rate: r.as_ref().ok().map(|v| v.0),
        quality_overlap: r.as_ref().ok().map(|v| v.1),
        error,
    }
}
