//! Label ingestion, validation and dataset statistics.
//!
//! CSV schema, one row per question:
//!
//! ```text
//! question_id,video_id,duration_s,answer_index,segments
//! q1,v1,42.0,3,3.5:10.2;20:26
//! ```
//!
//! The JSON mirror is an array of objects with the same field names and
//! `segments` as a list of `[start, end]` pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{json_error_message, GroundingLabel, LabelSet};
use crate::temporal::{iou, TemporalSegment, VideoExtent};

/// Two segments of one video are the same moment when their IoU exceeds this.
pub const SAME_SEGMENT_IOU: f64 = 0.5;

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    question_id: String,
    video_id: String,
    duration_s: f64,
    answer_index: usize,
    segments: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonRow {
    question_id: String,
    video_id: String,
    duration_s: f64,
    answer_index: usize,
    segments: Vec<[f64; 2]>,
}

/// Parses `"s:e;s:e"`.
pub fn parse_segment_list(cell: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    cell.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (s, e) = part.split_once(':').ok_or_else(|| format!("segment `{part}` is not `start:end`"))?;
            let s: f64 = s.trim().parse().map_err(|_| format!("bad start `{s}`"))?;
            let e: f64 = e.trim().parse().map_err(|_| format!("bad end `{e}`"))?;
            Ok((s, e))
        })
        .collect()
}

pub fn format_segment_list(segs: &[TemporalSegment<f64>]) -> String {
    segs.iter().map(|s| format!("{}:{}", s.start(), s.end())).collect::<Vec<_>>().join(";")
}

fn build_label(
    path: &Path,
    line: usize,
    qid: String,
    vid: String,
    duration: f64,
    answer: usize,
    segs: Vec<(f64, f64)>,
) -> Result<GroundingLabel<f64>> {
    let invalid = |message: String| Error::Validation { path: path.into(), line, message };
    let extent = VideoExtent::new(duration).map_err(|e| invalid(e.to_string()))?;
    if segs.is_empty() {
        return Err(invalid(format!("question `{qid}` has no segments")));
    }
    let mut segments = Vec::with_capacity(segs.len());
    for (s, e) in segs {
        let seg = TemporalSegment::new(s, e).map_err(|e| invalid(e.to_string()))?;
        if !extent.contains(&seg) {
            return Err(invalid(format!("segment [{s}, {e}] exceeds video duration {duration}")));
        }
        segments.push(seg);
    }
    GroundingLabel::new(qid, vid, extent, segments, answer).map_err(|e| invalid(e.to_string()))
}

fn insert_unique(set: &mut LabelSet<f64>, label: GroundingLabel<f64>, path: &Path, line: usize) -> Result<()> {
    if set.contains_key(&label.question_id) {
        return Err(Error::Validation { path: path.into(), line, message: format!("duplicate question id `{}`", label.question_id) });
    }
    set.insert(label.question_id.clone(), label);
    Ok(())
}

pub fn parse_labels_csv(text: &str, path: &Path) -> Result<LabelSet<f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = LabelSet::new();
    for rec in reader.deserialize::<CsvRow>() {
        let row = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Validation { path: path.into(), line, message: e.to_string() }
        })?;
        let line = out.len() + 2;
        let segs = parse_segment_list(&row.segments).map_err(|message| Error::Validation { path: path.into(), line, message })?;
        let label = build_label(path, line, row.question_id, row.video_id, row.duration_s, row.answer_index, segs)?;
        insert_unique(&mut out, label, path, line)?;
    }
    Ok(out)
}

pub fn parse_labels_json(text: &str, path: &Path) -> Result<LabelSet<f64>> {
    let rows: Vec<JsonRow> =
        serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), message: json_error_message(text, &e) })?;
    let mut out = LabelSet::new();
    for (i, row) in rows.into_iter().enumerate() {
        let segs = row.segments.iter().map(|[s, e]| (*s, *e)).collect();
        let label = build_label(path, i + 1, row.question_id, row.video_id, row.duration_s, row.answer_index, segs)?;
        insert_unique(&mut out, label, path, i + 1)?;
    }
    Ok(out)
}

/// Loads labels; format chosen by extension (`.json` or CSV otherwise).
pub fn load_labels(path: &Path) -> Result<LabelSet<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_labels_json(&text, path)
    } else {
        parse_labels_csv(&text, path)
    }
}

pub fn labels_to_csv(labels: &LabelSet<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in labels.values() {
        w.serialize(CsvRow {
            question_id: l.question_id.clone(),
            video_id: l.video_id.clone(),
            duration_s: l.extent.duration(),
            answer_index: l.answer_index,
            segments: format_segment_list(&l.segments),
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8 csv")
}

pub fn labels_to_json(labels: &LabelSet<f64>) -> String {
    let rows: Vec<JsonRow> = labels
        .values()
        .map(|l| JsonRow {
            question_id: l.question_id.clone(),
            video_id: l.video_id.clone(),
            duration_s: l.extent.duration(),
            answer_index: l.answer_index,
            segments: l.segments.iter().map(|s| [s.start(), s.end()]).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("labels serialize") + "\n"
}

pub fn save_labels(labels: &LabelSet<f64>, path: &Path) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) { labels_to_json(labels) } else { labels_to_csv(labels) };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct OfficialVideo {
    duration: f64,
    location: BTreeMap<String, Vec<[f64; 2]>>,
}

/// Reads the released annotation layout: a grounding JSON
/// `{video_id: {duration, location: {qid: [[s, e], ...]}}}` plus the QA CSV
/// with `video_id`, `qid`, `answer` and candidate columns `a0..a4`.
///
/// Question ids become `"{video_id}_{qid}"`. Segment ends that overshoot the
/// stated duration by rounding are clipped; starts beyond it are rejected.
pub fn load_official(grounding_json: &Path, qa_csv: &Path) -> Result<LabelSet<f64>> {
    let text = std::fs::read_to_string(grounding_json).map_err(|e| Error::io(grounding_json, e))?;
    let videos: BTreeMap<String, OfficialVideo> = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: grounding_json.into(), message: json_error_message(&text, &e) })?;

    let mut answers: HashMap<(String, String), usize> = HashMap::new();
    let mut reader = csv::Reader::from_path(qa_csv).map_err(|e| Error::Parse { path: qa_csv.into(), message: e.to_string() })?;
    let headers = reader.headers().map_err(|e| Error::Parse { path: qa_csv.into(), message: e.to_string() })?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let vid_col = col("video_id").or_else(|| col("video")).ok_or_else(|| Error::Parse { path: qa_csv.into(), message: "missing video_id column".into() })?;
    let qid_col = col("qid").ok_or_else(|| Error::Parse { path: qa_csv.into(), message: "missing qid column".into() })?;
    let ans_col = col("answer").ok_or_else(|| Error::Parse { path: qa_csv.into(), message: "missing answer column".into() })?;
    let cand_cols: Vec<usize> = (0..5).filter_map(|i| col(&format!("a{i}"))).collect();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Validation { path: qa_csv.into(), line, message: e.to_string() })?;
        let ans = rec.get(ans_col).unwrap_or("").trim();
        let idx = match ans.parse::<usize>() {
            Ok(i) => i,
            Err(_) => cand_cols
                .iter()
                .position(|&c| rec.get(c).map(str::trim) == Some(ans))
                .ok_or_else(|| Error::Validation { path: qa_csv.into(), line, message: format!("answer `{ans}` not among candidates") })?,
        };
        answers.insert((rec.get(vid_col).unwrap_or("").to_string(), rec.get(qid_col).unwrap_or("").to_string()), idx);
    }

    let mut out = LabelSet::new();
    for (n, (vid, video)) in videos.into_iter().enumerate() {
        for (qid, segs) in video.location {
            let Some(&answer) = answers.get(&(vid.clone(), qid.clone())) else { continue };
            let segs = segs.iter().map(|[s, e]| (*s, e.min(video.duration))).collect();
            let label = build_label(grounding_json, n + 1, format!("{vid}_{qid}"), vid.clone(), video.duration, answer, segs)?;
            insert_unique(&mut out, label, grounding_json, n + 1)?;
        }
    }
    Ok(out)
}

/// Dataset-level statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_videos: usize,
    pub n_questions: usize,
    pub n_segments: usize,
    /// Mean over all segments, seconds.
    pub mean_seg_dur: f64,
    /// Mean over distinct videos, seconds.
    pub mean_vid_dur: f64,
    /// Mean over all segments of `segment length / video duration`.
    pub mean_ratio: f64,
    /// Fraction of segments whose midpoint falls in each third of the video.
    pub position_hist: PositionHist,
    /// Number of segments per question -> fraction of questions.
    pub segs_per_qa_hist: BTreeMap<usize, f64>,
    /// Number of questions per distinct moment -> fraction of moments.
    pub qas_per_seg_hist: BTreeMap<usize, f64>,
    /// Segment duration, 5 s bins keyed by lower edge (last bin open-ended).
    pub seg_dur_hist: BTreeMap<String, f64>,
    /// Segment/video ratio, 0.1 bins keyed by lower edge.
    pub ratio_hist: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionHist {
    pub left: f64,
    pub middle: f64,
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Left,
    Middle,
    Right,
}

/// Which third of the video holds the segment midpoint.
pub fn segment_position(seg: &TemporalSegment<f64>, duration: f64) -> Position {
    let mid = seg.center();
    if mid < duration / 3.0 {
        Position::Left
    } else if mid < 2.0 * duration / 3.0 {
        Position::Middle
    } else {
        Position::Right
    }
}

fn normalize<K: Ord>(counts: BTreeMap<K, usize>) -> BTreeMap<K, f64> {
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

const DUR_BIN_S: f64 = 5.0;
const DUR_BINS: usize = 6;

pub fn compute_stats(labels: &LabelSet<f64>) -> Result<DatasetStats> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut video_dur: BTreeMap<&str, f64> = BTreeMap::new();
    let (mut n_segments, mut seg_dur_sum, mut ratio_sum) = (0usize, 0.0, 0.0);
    let mut pos = [0usize; 3];
    let mut segs_per_qa: BTreeMap<usize, usize> = BTreeMap::new();
    let mut dur_bins: BTreeMap<usize, usize> = (0..DUR_BINS).map(|b| (b, 0)).collect();
    let mut ratio_bins: BTreeMap<usize, usize> = (0..10).map(|b| (b, 0)).collect();
    // per video: (representative segment, set of question ids)
    let mut moments: BTreeMap<&str, Vec<(TemporalSegment<f64>, BTreeSet<&str>)>> = BTreeMap::new();

    for l in labels.values() {
        let d = l.extent.duration();
        video_dur.insert(&l.video_id, d);
        *segs_per_qa.entry(l.segments.len()).or_default() += 1;
        let clusters = moments.entry(&l.video_id).or_default();
        for s in &l.segments {
            n_segments += 1;
            seg_dur_sum += s.length();
            let r = s.length() / d;
            ratio_sum += r;
            pos[segment_position(s, d) as usize] += 1;
            *dur_bins.entry(((s.length() / DUR_BIN_S) as usize).min(DUR_BINS - 1)).or_default() += 1;
            *ratio_bins.entry(((r * 10.0) as usize).min(9)).or_default() += 1;
            match clusters.iter_mut().find(|(rep, _)| iou(rep, s) > SAME_SEGMENT_IOU) {
                Some((_, qs)) => {
                    qs.insert(&l.question_id);
                }
                None => clusters.push((*s, BTreeSet::from([l.question_id.as_str()]))),
            }
        }
    }

    let mut qas_per_seg: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, qs) in moments.values().flatten() {
        *qas_per_seg.entry(qs.len()).or_default() += 1;
    }
    let ns = n_segments as f64;
    let dur_key = |b: usize| if b + 1 == DUR_BINS { format!("{}+", b as f64 * DUR_BIN_S) } else { format!("{}", b as f64 * DUR_BIN_S) };

    Ok(DatasetStats {
        n_videos: video_dur.len(),
        n_questions: labels.len(),
        n_segments,
        mean_seg_dur: seg_dur_sum / ns,
        mean_vid_dur: video_dur.values().sum::<f64>() / video_dur.len() as f64,
        mean_ratio: ratio_sum / ns,
        position_hist: PositionHist { left: pos[0] as f64 / ns, middle: pos[1] as f64 / ns, right: pos[2] as f64 / ns },
        segs_per_qa_hist: normalize(segs_per_qa),
        qas_per_seg_hist: normalize(qas_per_seg),
        seg_dur_hist: dur_bins.into_iter().map(|(b, c)| (dur_key(b), c as f64 / ns)).collect(),
        ratio_hist: ratio_bins.into_iter().map(|(b, c)| (format!("{:.1}", b as f64 / 10.0), c as f64 / ns)).collect(),
    })
}

impl DatasetStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: &str = "labels.csv";

    fn csv(rows: &[&str]) -> String {
        let mut s = String::from("question_id,video_id,duration_s,answer_index,segments\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn csv_examples() {
        let l = parse_labels_csv(&csv(&["q1,v1,42.0,3,3.5:10.2"]), Path::new(P)).unwrap();
        assert_eq!(l["q1"].segments.len(), 1);
        assert_eq!(l["q1"].segments[0].start(), 3.5);
        assert_eq!(l["q1"].answer_index, 3);

        let err = parse_labels_csv(&csv(&["q1,v1,42.0,0,1:2", "q2,v1,42.0,0,30:50.0"]), Path::new(P)).unwrap_err();
        match err {
            Error::Validation { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("exceeds"));
            }
            e => panic!("{e:?}"),
        }

        let l = parse_labels_csv(&csv(&["q1,v1,42.0,0,1:4;20:26"]), Path::new(P)).unwrap();
        assert_eq!(l["q1"].segments.len(), 2);
    }

    #[test]
    fn csv_rejections() {
        for bad in ["q1,v1,42.0,0,5:5", "q1,v1,42.0,0,", "q1,v1,0,0,1:2", "q1,v1,42.0,0,abc", "q1,v1,x,0,1:2"] {
            assert!(parse_labels_csv(&csv(&[bad]), Path::new(P)).is_err(), "{bad}");
        }
        assert!(parse_labels_csv(&csv(&["q1,v1,42.0,0,1:2", "q1,v1,42.0,0,1:2"]), Path::new(P)).is_err());
    }

    #[test]
    fn json_mirror_round_trip() {
        let l = parse_labels_csv(&csv(&["q1,v1,42.0,3,3.5:10.2", "q2,v1,42.0,1,1:4;20:26", "q3,v2,30,0,0:30"]), Path::new(P)).unwrap();
        let j = parse_labels_json(&labels_to_json(&l), Path::new("l.json")).unwrap();
        assert_eq!(j, l);
        let c = parse_labels_csv(&labels_to_csv(&l), Path::new(P)).unwrap();
        assert_eq!(c, l);
        assert_eq!(compute_stats(&c).unwrap(), compute_stats(&l).unwrap());
    }

    #[test]
    fn stats_single_whole_video_label() {
        let l = parse_labels_csv(&csv(&["q1,v1,40,0,0:40"]), Path::new(P)).unwrap();
        let s = compute_stats(&l).unwrap();
        assert_eq!((s.n_videos, s.n_questions, s.n_segments), (1, 1, 1));
        assert_eq!(s.mean_ratio, 1.0);
        assert_eq!(s.position_hist, PositionHist { left: 0.0, middle: 1.0, right: 0.0 });
    }

    #[test]
    fn stats_hand_computed() {
        let l = parse_labels_csv(
            &csv(&[
                "q1,v1,30,0,0:6",        // left, ratio 0.2
                "q2,v1,30,0,1:6;24:30",  // first dup of q1's moment (IoU 5/6), right
                "q3,v2,60,0,25:35",      // middle
            ]),
            Path::new(P),
        )
        .unwrap();
        let s = compute_stats(&l).unwrap();
        assert_eq!((s.n_videos, s.n_questions, s.n_segments), (2, 3, 4));
        assert!((s.mean_seg_dur - (6.0 + 5.0 + 6.0 + 10.0) / 4.0).abs() < 1e-12);
        assert!((s.mean_vid_dur - 45.0).abs() < 1e-12);
        let ratio = (0.2 + 5.0 / 30.0 + 0.2 + 10.0 / 60.0) / 4.0;
        assert!((s.mean_ratio - ratio).abs() < 1e-12);
        assert_eq!(s.position_hist, PositionHist { left: 0.5, middle: 0.25, right: 0.25 });
        assert_eq!(s.segs_per_qa_hist, BTreeMap::from([(1, 2.0 / 3.0), (2, 1.0 / 3.0)]));
        // moments: v1{[0,6]: q1,q2}, v1{[24,30]: q2}, v2{[25,35]: q3}
        assert_eq!(s.qas_per_seg_hist, BTreeMap::from([(1, 2.0 / 3.0), (2, 1.0 / 3.0)]));
        for h in [s.segs_per_qa_hist.values().sum::<f64>(), s.qas_per_seg_hist.values().sum(), s.seg_dur_hist.values().sum(), s.ratio_hist.values().sum()] {
            assert!((h - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(compute_stats(&LabelSet::new()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn official_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("gsub_test.json");
        let q = dir.path().join("test.csv");
        std::fs::write(&g, r#"{"100": {"duration": 40.0, "fps": 30, "location": {"0": [[2.0, 8.0]], "1": [[10.0, 40.2], [1.0, 3.0]]}}}"#).unwrap();
        std::fs::write(&q, "video_id,question,answer,qid,type,a0,a1,a2,a3,a4\n100,why?,cry,0,CW,run,cry,sit,eat,go\n100,how?,3,1,CH,a,b,c,d,e\n").unwrap();
        let l = load_official(&g, &q).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l["100_0"].answer_index, 1);
        assert_eq!(l["100_1"].answer_index, 3);
        assert_eq!(l["100_1"].segments[0].end(), 40.0);
    }
}
