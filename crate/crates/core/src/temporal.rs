//! Interval arithmetic on temporal segments.
//!
//! Segments are closed real intervals in seconds. Overlap measures are
//! computed in closed form; nothing here knows about frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A closed interval `[start, end]` in seconds with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment<T>", into = "RawSegment<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TemporalSegment<T> {
    start: T,
    end: T,
}

#[derive(Serialize, Deserialize)]
struct RawSegment<T> {
    start: T,
    end: T,
}

impl<T: Scalar> TryFrom<RawSegment<T>> for TemporalSegment<T> {
    type Error = Error;
    fn try_from(raw: RawSegment<T>) -> Result<Self> {
        TemporalSegment::new(raw.start, raw.end)
    }
}

impl<T: Scalar> From<TemporalSegment<T>> for RawSegment<T> {
    fn from(s: TemporalSegment<T>) -> Self {
        RawSegment { start: s.start, end: s.end }
    }
}

impl<T: Scalar> TemporalSegment<T> {
    pub fn new(start: T, end: T) -> Result<Self> {
        let err = |reason| Error::InvalidSegment { start: start.as_f64(), end: end.as_f64(), reason };
        if !start.is_finite() || !end.is_finite() {
            return Err(err("endpoints must be finite"));
        }
        if start < T::zero() {
            return Err(err("start must be non-negative"));
        }
        if start >= end {
            return Err(err("start must be strictly less than end"));
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn start(&self) -> T {
        self.start
    }

    #[inline]
    pub fn end(&self) -> T {
        self.end
    }

    #[inline]
    pub fn length(&self) -> T {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> T {
        (self.start + self.end) / T::lit(2.0)
    }

    pub fn contains_time(&self, t: T) -> bool {
        self.start <= t && t <= self.end
    }

    /// `self ⊆ other`
    pub fn is_within(&self, other: &Self) -> bool {
        other.start <= self.start && self.end <= other.end
    }

    /// The overlapping part, if it has positive length.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        (s < e).then_some(Self { start: s, end: e })
    }

    pub fn convert<U: Scalar>(&self) -> TemporalSegment<U> {
        TemporalSegment { start: U::lit(self.start.as_f64()), end: U::lit(self.end.as_f64()) }
    }
}

/// Length of a video in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VideoExtent<T> {
    duration: T,
}

impl<T: Scalar> VideoExtent<T> {
    pub fn new(duration: T) -> Result<Self> {
        if !duration.is_finite() || duration <= T::zero() {
            return Err(Error::InvalidDuration(duration.as_f64()));
        }
        Ok(Self { duration })
    }

    #[inline]
    pub fn duration(&self) -> T {
        self.duration
    }

    /// The segment covering the whole video.
    pub fn whole(&self) -> TemporalSegment<T> {
        TemporalSegment { start: T::zero(), end: self.duration }
    }

    pub fn contains(&self, seg: &TemporalSegment<T>) -> bool {
        seg.end <= self.duration
    }
}

/// Overlap length `max(0, min(a.end, b.end) - max(a.start, b.start))`.
#[inline]
pub fn intersect_len<T: Scalar>(a: &TemporalSegment<T>, b: &TemporalSegment<T>) -> T {
    (a.end.min(b.end) - a.start.max(b.start)).max(T::zero())
}

/// Intersection over prediction: the fraction of `pred` lying inside `gt`.
#[inline]
pub fn iop<T: Scalar>(pred: &TemporalSegment<T>, gt: &TemporalSegment<T>) -> T {
    intersect_len(pred, gt) / pred.length()
}

/// Temporal intersection over union.
#[inline]
pub fn iou<T: Scalar>(pred: &TemporalSegment<T>, gt: &TemporalSegment<T>) -> T {
    let inter = intersect_len(pred, gt);
    if inter <= T::zero() {
        return T::zero();
    }
    // Overlapping intervals: the union is their hull.
    let union = pred.end.max(gt.end) - pred.start.min(gt.start);
    inter / union
}

/// Clips a raw `(start, end)` pair to `[0, duration]`.
pub fn clamp_to_video<T: Scalar>(start: T, end: T, extent: &VideoExtent<T>) -> Result<TemporalSegment<T>> {
    let d = extent.duration;
    let s = start.max(T::zero()).min(d);
    let e = end.max(T::zero()).min(d);
    if !(s < e) {
        return Err(Error::EmptyAfterClamp { start: start.as_f64(), end: end.as_f64(), duration: d.as_f64() });
    }
    Ok(TemporalSegment { start: s, end: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: f64, e: f64) -> TemporalSegment<f64> {
        TemporalSegment::new(s, e).unwrap()
    }

    /// Counts 1 ms cells whose midpoints fall inside each interval.
    fn grid_oracle(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let hi = a.1.max(b.1);
        let cells = (hi * 1000.0).ceil() as i64;
        let (mut inter, mut union) = (0i64, 0i64);
        for k in 0..cells {
            let t = (k as f64 + 0.5) / 1000.0;
            let ia = a.0 <= t && t <= a.1;
            let ib = b.0 <= t && t <= b.1;
            inter += (ia && ib) as i64;
            union += (ia || ib) as i64;
        }
        (inter as f64 / 1000.0, union as f64 / 1000.0)
    }

    #[test]
    fn construction_rejects_bad_segments() {
        assert!(TemporalSegment::new(3.0, 3.0).is_err());
        assert!(TemporalSegment::new(4.0, 3.0).is_err());
        assert!(TemporalSegment::new(-1.0, 3.0).is_err());
        assert!(TemporalSegment::new(0.0, f64::INFINITY).is_err());
        assert!(TemporalSegment::new(f64::NAN, 1.0).is_err());
        assert!(VideoExtent::new(0.0).is_err());
        assert!(VideoExtent::new(-2.0).is_err());
    }

    #[test]
    fn intersect_len_examples() {
        assert_eq!(intersect_len(&seg(2.0, 6.0), &seg(0.0, 8.0)), 4.0);
        assert_eq!(intersect_len(&seg(0.0, 3.0), &seg(5.0, 9.0)), 0.0);
        let (oracle, _) = grid_oracle((1.0, 5.0), (4.0, 10.0));
        assert!((intersect_len(&seg(1.0, 5.0), &seg(4.0, 10.0)) - 1.0).abs() < 1e-12);
        assert!((oracle - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iop_examples() {
        assert_eq!(iop(&seg(2.0, 6.0), &seg(0.0, 8.0)), 1.0);
        assert_eq!(iop(&seg(0.0, 8.0), &seg(2.0, 6.0)), 0.5);
        assert_eq!(iop(&seg(0.0, 3.0), &seg(5.0, 9.0)), 0.0);
        let (inter, _) = grid_oracle((0.0, 8.0), (2.0, 6.0));
        assert!((inter / 8.0 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&seg(2.0, 6.0), &seg(2.0, 6.0)), 1.0);
        assert_eq!(iou(&seg(2.0, 6.0), &seg(0.0, 8.0)), 0.5);
        assert!((iou(&seg(0.0, 4.0), &seg(2.0, 6.0)) - 1.0 / 3.0).abs() < 1e-15);
        let (inter, union) = grid_oracle((0.0, 4.0), (2.0, 6.0));
        assert!((inter / union - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn clamp_examples() {
        let v = VideoExtent::new(40.0).unwrap();
        assert_eq!(clamp_to_video(-2.0, 5.0, &v).unwrap(), seg(0.0, 5.0));
        assert_eq!(clamp_to_video(38.0, 45.0, &v).unwrap(), seg(38.0, 40.0));
        assert!(matches!(clamp_to_video(41.0, 45.0, &v), Err(Error::EmptyAfterClamp { .. })));
        assert!(matches!(clamp_to_video(-5.0, -1.0, &v), Err(Error::EmptyAfterClamp { .. })));
    }

    #[test]
    fn serde_validates() {
        let ok: TemporalSegment<f64> = serde_json::from_str(r#"{"start":1.0,"end":2.5}"#).unwrap();
        assert_eq!(ok, seg(1.0, 2.5));
        assert!(serde_json::from_str::<TemporalSegment<f64>>(r#"{"start":3.0,"end":2.5}"#).is_err());
    }

    #[test]
    fn works_in_f32() {
        let a = TemporalSegment::new(0.0f32, 4.0).unwrap();
        let b = TemporalSegment::new(2.0f32, 6.0).unwrap();
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    }

    fn arb_seg() -> impl Strategy<Value = (f64, f64)> {
        (0u32..60_000, 1u32..30_000).prop_map(|(s, l)| (s as f64 / 1000.0, (s + l) as f64 / 1000.0))
    }

    proptest! {
        #[test]
        fn overlaps_are_ratios(a in arb_seg(), b in arb_seg()) {
            let (p, g) = (seg(a.0, a.1), seg(b.0, b.1));
            let (o, u) = (iop(&p, &g), iou(&p, &g));
            prop_assert!((0.0..=1.0).contains(&o));
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!(u <= o.min(iop(&g, &p)) + 1e-15);
            prop_assert_eq!(intersect_len(&p, &g), intersect_len(&g, &p));
            prop_assert_eq!(iou(&p, &g), iou(&g, &p));
        }

        #[test]
        fn whole_video_iop_equals_iou(d in 1u32..100_000, s in 0u32..100_000, l in 1u32..100_000) {
            let d = d as f64 / 1000.0 + 1.0;
            let start = (s as f64 / 1000.0).min(d - 1e-3);
            let end = (start + l as f64 / 1000.0).min(d);
            let gt = seg(start, end);
            let whole = VideoExtent::new(d).unwrap().whole();
            prop_assert_eq!(iop(&whole, &gt), iou(&whole, &gt));
            prop_assert_eq!(iop(&whole, &gt), gt.length() / d);
        }
    }
}
