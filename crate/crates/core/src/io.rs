//! File formats: track tables, labels, sequence directories.
//!
//! A sequence directory looks like
//!
//! ```text
//! frames/frame_000000.png ...   16-bit grayscale
//! tracks.csv                    frame,track_id,x,y,label,status   (ground truth, optional)
//! features.csv                  frame,track_id,x,y                (frame 0 only)
//! labels.csv                    track_id,label                    (optional)
//! fundamentals.json             per frame pair and body, optional
//! meta.json                     generator metadata, optional
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{load_image, GrayImage, ImagingError};
use crate::synthlab::{Camera, SyntheticSequence};
use crate::tracker::FeatureStatus;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no frames found in {0}")]
    NoFrames(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), IoError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| IoError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Per-point status in a track table. `Occluded` only appears in ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Tracked,
    Lost,
    Degenerate,
    Occluded,
}

impl PointStatus {
    pub fn name(&self) -> &'static str {
        match self {
            PointStatus::Tracked => "tracked",
            PointStatus::Lost => "lost",
            PointStatus::Degenerate => "degenerate",
            PointStatus::Occluded => "occluded",
        }
    }
}

impl fmt::Display for PointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PointStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tracked" => Ok(PointStatus::Tracked),
            "lost" => Ok(PointStatus::Lost),
            "degenerate" => Ok(PointStatus::Degenerate),
            "occluded" => Ok(PointStatus::Occluded),
            _ => Err(format!("unknown status '{s}'")),
        }
    }
}

impl From<FeatureStatus> for PointStatus {
    fn from(s: FeatureStatus) -> Self {
        match s {
            FeatureStatus::Tracked => PointStatus::Tracked,
            FeatureStatus::Lost => PointStatus::Lost,
            FeatureStatus::Degenerate => PointStatus::Degenerate,
        }
    }
}

/// Dense `frames x tracks` table of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTable {
    pub ids: Vec<usize>,
    /// `positions[frame][k]` for track `ids[k]`.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub labels: Option<Vec<usize>>,
    pub status: Option<Vec<Vec<PointStatus>>>,
}

/// Position, label and status of one parsed CSV row.
type Row = ([f64; 2], Option<usize>, Option<PointStatus>);

impl TrackTable {
    /// Tracks with ids `0..n`.
    pub fn new(positions: Vec<Vec<[f64; 2]>>) -> Self {
        let n = positions.first().map_or(0, Vec::len);
        Self {
            ids: (0..n).collect(),
            positions,
            labels: None,
            status: None,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn n_tracks(&self) -> usize {
        self.ids.len()
    }

    pub fn status_at(&self, frame: usize, k: usize) -> PointStatus {
        self.status
            .as_ref()
            .map_or(PointStatus::Tracked, |s| s[frame][k])
    }

    /// Ground-truth table of a synthetic sequence, with labels and occlusion flags.
    pub fn from_sequence(seq: &SyntheticSequence) -> Self {
        let status = seq
            .visible
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| {
                        if v {
                            PointStatus::Tracked
                        } else {
                            PointStatus::Occluded
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            ids: (0..seq.n_features()).collect(),
            positions: seq.tracks.clone(),
            labels: Some(seq.labels.clone()),
            status: Some(status),
        }
    }

    /// Only frame 0, without labels or status.
    pub fn first_frame(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            positions: self.positions.iter().take(1).cloned().collect(),
            labels: None,
            status: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["frame", "track_id", "x", "y"];
        if self.labels.is_some() {
            header.push("label");
        }
        if self.status.is_some() {
            header.push("status");
        }
        w.write_record(&header).expect("in-memory write");
        for (f, row) in self.positions.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                let mut rec = vec![
                    f.to_string(),
                    self.ids[k].to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                ];
                if let Some(l) = &self.labels {
                    rec.push(l[k].to_string());
                }
                if let Some(s) = &self.status {
                    rec.push(s[f][k].name().to_string());
                }
                w.write_record(&rec).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        atomic_write(path, self.to_csv().as_bytes())
    }

    /// Parses `frame,track_id,x,y[,label][,status]`. Every track must appear exactly once
    /// in every frame, and frames must run from 0 without gaps.
    pub fn parse(text: &str, path: &Path) -> Result<Self, IoError> {
        let err = |msg: String| IoError::format(path, msg);
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(cf), Some(ci), Some(cx), Some(cy)) =
            (col("frame"), col("track_id"), col("x"), col("y"))
        else {
            return Err(err("header must contain frame,track_id,x,y".into()));
        };
        let (cl, cs) = (col("label"), col("status"));
        let mut rows: BTreeMap<(usize, usize), Row> = BTreeMap::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let at = |c: usize| rec.get(c).unwrap_or("");
            let field = |c: usize, what: &str| -> Result<&str, IoError> {
                let v = at(c);
                if v.is_empty() {
                    Err(err(format!("row {}: empty {what}", line + 2)))
                } else {
                    Ok(v)
                }
            };
            let int = |c: usize, what: &str| -> Result<usize, IoError> {
                field(c, what)?.parse().map_err(|_| {
                    err(format!(
                        "row {}: {what} is not a non-negative integer",
                        line + 2
                    ))
                })
            };
            let float = |c: usize, what: &str| -> Result<f64, IoError> {
                let v: f64 = field(c, what)?
                    .parse()
                    .map_err(|_| err(format!("row {}: {what} is not a number", line + 2)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("row {}: {what} is not finite", line + 2)))
                }
            };
            let key = (int(cf, "frame")?, int(ci, "track_id")?);
            let label = cl.map(|c| int(c, "label")).transpose()?;
            let status = cs
                .map(|c| {
                    field(c, "status")?
                        .parse::<PointStatus>()
                        .map_err(|e| err(format!("row {}: {e}", line + 2)))
                })
                .transpose()?;
            if rows
                .insert(key, ([float(cx, "x")?, float(cy, "y")?], label, status))
                .is_some()
            {
                return Err(err(format!(
                    "duplicate row for frame {} track {}",
                    key.0, key.1
                )));
            }
        }
        let frames: Vec<usize> = {
            let mut f: Vec<usize> = rows.keys().map(|k| k.0).collect();
            f.dedup();
            f
        };
        if frames.iter().enumerate().any(|(i, &f)| i != f) {
            return Err(err(
                "frames must be numbered 0, 1, 2, ... without gaps".into()
            ));
        }
        let ids: Vec<usize> = rows.keys().filter(|k| k.0 == 0).map(|k| k.1).collect();
        let mut positions = Vec::with_capacity(frames.len());
        let mut status = Vec::with_capacity(frames.len());
        let mut labels: Vec<Option<usize>> = vec![None; ids.len()];
        for &f in &frames {
            let mut pos = Vec::with_capacity(ids.len());
            let mut st = Vec::with_capacity(ids.len());
            for (k, &id) in ids.iter().enumerate() {
                let (p, l, s) = rows
                    .get(&(f, id))
                    .ok_or_else(|| err(format!("track {id} missing in frame {f}")))?;
                pos.push(*p);
                st.push(s.unwrap_or(PointStatus::Tracked));
                if let Some(l) = l {
                    match labels[k] {
                        Some(prev) if prev != *l => {
                            return Err(err(format!("track {id} changes label at frame {f}")));
                        }
                        _ => labels[k] = Some(*l),
                    }
                }
            }
            positions.push(pos);
            status.push(st);
        }
        let per_frame = if ids.is_empty() {
            0
        } else {
            rows.len() / ids.len()
        };
        if rows.len() != ids.len() * frames.len() || per_frame != frames.len() {
            return Err(err(
                "some frames contain tracks that are absent from frame 0".into(),
            ));
        }
        Ok(Self {
            ids,
            positions,
            labels: cl.map(|_| labels.into_iter().map(|l| l.unwrap_or(0)).collect()),
            status: cs.map(|_| status),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        Self::parse(&read_to_string(path)?, path)
    }
}

/// `track_id,label` rows.
pub fn labels_to_csv(ids: &[usize], labels: &[usize]) -> String {
    let mut out = String::from("track_id,label\n");
    for (id, l) in ids.iter().zip(labels) {
        out.push_str(&format!("{id},{l}\n"));
    }
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<usize, usize>, IoError> {
    #[derive(Deserialize)]
    struct Row {
        track_id: usize,
        label: usize,
    }
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| IoError::format(path, e.to_string()))?;
        if out.insert(row.track_id, row.label).is_some() {
            return Err(IoError::format(
                path,
                format!("duplicate track {}", row.track_id),
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub preset: String,
    pub seed: u64,
    pub sigma2: f64,
    pub noise_seed: Option<u64>,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub features: usize,
    pub bodies: usize,
    pub repetitive: bool,
    pub camera: Camera,
}

impl SequenceMeta {
    pub fn from_sequence(seq: &SyntheticSequence) -> Self {
        Self {
            preset: seq.name.clone(),
            seed: seq.seed,
            sigma2: 0.0,
            noise_seed: None,
            frames: seq.n_frames(),
            width: seq.frames[0].width(),
            height: seq.frames[0].height(),
            features: seq.n_features(),
            bodies: seq.n_bodies(),
            repetitive: seq.repetitive,
            camera: seq.camera,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalEntry {
    pub pair: usize,
    pub body: usize,
    /// Row-major, unit Frobenius norm; `None` when the body does not translate.
    pub f: Option<[[f64; 3]; 3]>,
}

pub fn fundamentals_of(seq: &SyntheticSequence) -> Vec<FundamentalEntry> {
    let mut out = Vec::new();
    for (pair, bodies) in seq.fundamentals.iter().enumerate() {
        for (body, f) in bodies.iter().enumerate() {
            let f = f.as_ref().map(|f| {
                let m = f.matrix();
                [
                    [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                    [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                    [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
                ]
            });
            out.push(FundamentalEntry { pair, body, f });
        }
    }
    out
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    serde_json::from_str(&read_to_string(path)?).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub const FRAMES_DIR: &str = "frames";
pub const TRUTH_FILE: &str = "tracks.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FUNDAMENTALS_FILE: &str = "fundamentals.json";
pub const META_FILE: &str = "meta.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// 16-bit PNG bytes, so synthetic renders survive a round trip with ~1.5e-5 error.
pub fn encode_png16(img: &GrayImage) -> Vec<u8> {
    let buf = img.to_luma16();
    let mut bytes = Cursor::new(Vec::new());
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut bytes, image::ImageFormat::Png)
        .expect("PNG encoding into memory");
    bytes.into_inner()
}

pub fn write_frames(dir: impl AsRef<Path>, frames: &[GrayImage]) -> Result<(), IoError> {
    let dir = dir.as_ref().join(FRAMES_DIR);
    for (k, f) in frames.iter().enumerate() {
        atomic_write(dir.join(frame_file_name(k)), &encode_png16(f))?;
    }
    Ok(())
}

/// Writes frames, ground truth, labels, fundamentals and metadata.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    seq: &SyntheticSequence,
    frames: &[GrayImage],
    meta: &SequenceMeta,
) -> Result<(), IoError> {
    let dir = dir.as_ref();
    write_frames(dir, frames)?;
    let truth = TrackTable::from_sequence(seq);
    truth.write(dir.join(TRUTH_FILE))?;
    truth.first_frame().write(dir.join(FEATURES_FILE))?;
    atomic_write(
        dir.join(LABELS_FILE),
        labels_to_csv(&truth.ids, &seq.labels).as_bytes(),
    )?;
    write_json(dir.join(FUNDAMENTALS_FILE), &fundamentals_of(seq))?;
    write_json(dir.join(META_FILE), meta)
}

/// Frame files of a sequence directory in index order.
pub fn frame_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, IoError> {
    let frames_dir = dir.as_ref().join(FRAMES_DIR);
    let entries = fs::read_dir(&frames_dir).map_err(|e| IoError::io(&frames_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                n.starts_with("frame_") && (n.ends_with(".png") || n.ends_with(".pgm"))
            })
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::NoFrames(frames_dir.display().to_string()));
    }
    Ok(paths)
}

pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<GrayImage>, IoError> {
    frame_paths(dir)?
        .iter()
        .map(|p| Ok(load_image(p)?))
        .collect()
}

/// Everything found in a sequence directory.
#[derive(Debug, Clone)]
pub struct SequenceDir {
    pub frames: Vec<GrayImage>,
    pub truth: Option<TrackTable>,
    pub features: Option<TrackTable>,
    pub labels: Option<BTreeMap<usize, usize>>,
    pub meta: Option<SequenceMeta>,
}

pub fn load_sequence(dir: impl AsRef<Path>) -> Result<SequenceDir, IoError> {
    let dir = dir.as_ref();
    let optional = |name: &str| {
        let p = dir.join(name);
        p.is_file().then_some(p)
    };
    Ok(SequenceDir {
        frames: load_frames(dir)?,
        truth: optional(TRUTH_FILE).map(TrackTable::read).transpose()?,
        features: optional(FEATURES_FILE).map(TrackTable::read).transpose()?,
        labels: optional(LABELS_FILE).map(read_labels).transpose()?,
        meta: optional(META_FILE).map(read_json).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::{generate, Preset};

    fn parse(text: &str) -> Result<TrackTable, IoError> {
        TrackTable::parse(text, Path::new("test.csv"))
    }

    #[test]
    fn track_csv_round_trip() {
        let mut t = TrackTable::new(vec![
            vec![[1.5, 2.25], [10.0, 20.125]],
            vec![[1.75, 2.5], [10.5, 19.0]],
        ]);
        assert_eq!(parse(&t.to_csv()).unwrap(), t);
        t.labels = Some(vec![1, 0]);
        t.status = Some(vec![
            vec![PointStatus::Tracked, PointStatus::Tracked],
            vec![PointStatus::Lost, PointStatus::Occluded],
        ]);
        let text = t.to_csv();
        assert!(text.starts_with("frame,track_id,x,y,label,status\n"));
        assert_eq!(parse(&text).unwrap(), t);
    }

    #[test]
    fn float_text_round_trips_exactly() {
        let v = 0.1 + 0.2;
        let t = TrackTable::new(vec![vec![[v, 1.0 / 3.0]]]);
        assert_eq!(parse(&t.to_csv()).unwrap().positions[0][0], [v, 1.0 / 3.0]);
    }

    #[test]
    fn rows_may_come_in_any_order_and_ids_need_not_be_dense() {
        let t = parse("track_id,frame,y,x\n7,1,4,3\n2,0,2,1\n7,0,0,0\n2,1,6,5\n").unwrap();
        assert_eq!(t.ids, vec![2, 7]);
        assert_eq!(t.positions[1], vec![[5.0, 6.0], [3.0, 4.0]]);
        assert!(t.labels.is_none() && t.status.is_none());
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse("frame,id,x,y\n0,0,1,1\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,1,1\n0,0,2,2\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,1,1\n2,0,2,2\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,1,1\n0,1,1,1\n1,0,2,2\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,1,1\n1,0,2,2\n1,1,2,2\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,abc,1\n").is_err());
        assert!(parse("frame,track_id,x,y\n0,0,NaN,1\n").is_err());
        assert!(parse("frame,track_id,x,y\n-1,0,1,1\n").is_err());
        assert!(parse("frame,track_id,x,y,status\n0,0,1,1,flying\n").is_err());
        assert!(parse("frame,track_id,x,y,label\n0,0,1,1,0\n1,0,1,1,1\n").is_err());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        atomic_write(&p, labels_to_csv(&[3, 5], &[1, 0]).as_bytes()).unwrap();
        let m = read_labels(&p).unwrap();
        assert_eq!(m.into_iter().collect::<Vec<_>>(), vec![(3, 1), (5, 0)]);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn sequence_directory_round_trip() {
        let seq = generate(Preset::Static, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = SequenceMeta::from_sequence(&seq);
        write_sequence(dir.path(), &seq, &seq.frames, &meta).unwrap();
        let loaded = load_sequence(dir.path()).unwrap();
        assert_eq!(loaded.frames.len(), seq.n_frames());
        let diff = loaded.frames[3]
            .data()
            .iter()
            .zip(seq.frames[3].data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 0.5 / 65535.0 + 1e-12);
        let truth = loaded.truth.unwrap();
        assert_eq!(truth.positions, seq.tracks);
        assert_eq!(truth.labels.as_deref(), Some(seq.labels.as_slice()));
        assert_eq!(
            loaded.features.unwrap().positions,
            vec![seq.tracks[0].clone()]
        );
        assert_eq!(loaded.labels.unwrap().len(), seq.n_features());
        assert_eq!(loaded.meta.unwrap(), meta);
        let fs: Vec<FundamentalEntry> = read_json(dir.path().join(FUNDAMENTALS_FILE)).unwrap();
        assert!(fs.iter().all(|e| e.f.is_none()));
    }

    #[test]
    fn missing_frames_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_sequence(dir.path()).is_err());
        fs::create_dir(dir.path().join(FRAMES_DIR)).unwrap();
        assert!(matches!(load_frames(dir.path()), Err(IoError::NoFrames(_))));
    }
}
