//! The media catalog: a time-aligned representation ladder with
//! constant-bitrate segments, plus its on-disk text format.
//!
//! ```text
//! # dashsim media catalog
//! title = Big Buck Bunny
//! segment_duration_s = 2
//! segment_count = 300
//!
//! # level bitrate_kbps width height fps
//! 0 100 640 360 30
//! 1 200 640 360 30
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Key/value lines must
//! precede the representation rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::simcore::SimTime;
use crate::{Error, Result};

/// Bitrates of the default ladder, in kbit/s.
pub const DEFAULT_LADDER_KBPS: [u32; 14] = [
    100, 200, 350, 500, 700, 900, 1100, 1300, 1600, 1900, 2300, 2800, 3400, 4500,
];

pub const DEFAULT_SEGMENT_COUNT: u32 = 300;
pub const DEFAULT_TITLE: &str = "Big Buck Bunny";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Representation {
    pub level: usize,
    pub bitrate_kbps: u32,
    pub width: u32,
    pub height: u32,
    pub frame_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentDescriptor {
    pub level: usize,
    pub index: u32,
    pub media_bytes: u64,
    pub url_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaCatalog {
    title: String,
    segment_duration: SimTime,
    segment_count: u32,
    representations: Vec<Representation>,
}

pub fn build_default_catalog() -> MediaCatalog {
    let representations = DEFAULT_LADDER_KBPS
        .iter()
        .enumerate()
        .map(|(level, &bitrate_kbps)| Representation {
            level,
            bitrate_kbps,
            width: 640,
            height: 360,
            frame_rate: 30,
        })
        .collect();
    MediaCatalog {
        title: DEFAULT_TITLE.to_string(),
        segment_duration: SimTime::from_secs(2),
        segment_count: DEFAULT_SEGMENT_COUNT,
        representations,
    }
}

impl MediaCatalog {
    pub fn new(
        title: impl Into<String>,
        segment_duration: SimTime,
        segment_count: u32,
        representations: Vec<Representation>,
    ) -> Result<Self> {
        let catalog = MediaCatalog {
            title: title.into(),
            segment_duration,
            segment_count,
            representations,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<()> {
        if self.title.contains(['\n', '\r']) || self.title.trim() != self.title {
            return Err(Error::invalid(
                "catalog",
                "title must be a single trimmed line",
            ));
        }
        if self.segment_duration == SimTime::ZERO {
            return Err(Error::invalid("catalog", "segment_duration must be > 0"));
        }
        if self.segment_count == 0 {
            return Err(Error::invalid("catalog", "segment_count must be >= 1"));
        }
        if self.representations.is_empty() {
            return Err(Error::invalid("catalog", "no representations"));
        }
        for (i, rep) in self.representations.iter().enumerate() {
            if rep.level != i {
                return Err(Error::invalid(
                    "catalog",
                    format!("representation {i} carries level {}", rep.level),
                ));
            }
            if rep.bitrate_kbps == 0 {
                return Err(Error::invalid("catalog", format!("level {i}: bitrate must be > 0")));
            }
        }
        if let Some(w) = self
            .representations
            .windows(2)
            .find(|w| w[1].bitrate_kbps <= w[0].bitrate_kbps)
        {
            return Err(Error::invalid(
                "catalog",
                format!(
                    "ladder not strictly increasing: level {} ({} kbps) after level {} ({} kbps)",
                    w[1].level, w[1].bitrate_kbps, w[0].level, w[0].bitrate_kbps
                ),
            ));
        }
        Ok(())
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn segment_duration(&self) -> SimTime {
        self.segment_duration
    }

    pub fn segment_count(&self) -> u32 {
        self.segment_count
    }

    pub fn representations(&self) -> &[Representation] {
        &self.representations
    }

    pub fn level_count(&self) -> usize {
        self.representations.len()
    }

    pub fn representation(&self, level: usize) -> Result<&Representation> {
        self.representations.get(level).ok_or(Error::OutOfRange {
            what: "level",
            index: level,
            limit: self.representations.len(),
        })
    }

    /// Total content duration.
    pub fn duration(&self) -> SimTime {
        self.segment_duration * u64::from(self.segment_count)
    }

    /// Same ladder, truncated or extended to `count` segments.
    pub fn with_segment_count(&self, count: u32) -> Result<Self> {
        MediaCatalog::new(
            self.title.clone(),
            self.segment_duration,
            count,
            self.representations.clone(),
        )
    }

    /// Media bytes of one segment: bitrate x duration / 8, rounded half up.
    pub fn segment_bytes(&self, level: usize, segment: u32) -> Result<u64> {
        let rep = self.representation(level)?;
        self.check_segment(segment)?;
        Ok(cbr_bytes(rep.bitrate_kbps, self.segment_duration))
    }

    pub fn segment(&self, level: usize, index: u32) -> Result<SegmentDescriptor> {
        let media_bytes = self.segment_bytes(level, index)?;
        let rep = &self.representations[level];
        Ok(SegmentDescriptor {
            level,
            index,
            media_bytes,
            url_path: format!("/media/{}kbps/seg{}.m4s", rep.bitrate_kbps, index),
        })
    }

    fn check_segment(&self, segment: u32) -> Result<()> {
        if segment >= self.segment_count {
            return Err(Error::OutOfRange {
                what: "segment",
                index: segment as usize,
                limit: self.segment_count as usize,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# dashsim media catalog\n");
        let _ = writeln!(out, "title = {}", self.title);
        let _ = writeln!(
            out,
            "segment_duration_s = {}",
            self.segment_duration.to_decimal_secs()
        );
        let _ = writeln!(out, "segment_count = {}", self.segment_count);
        out.push_str("\n# level bitrate_kbps width height fps\n");
        for r in &self.representations {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                r.level, r.bitrate_kbps, r.width, r.height, r.frame_rate
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, field: &str, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            field: field.to_string(),
            message,
        };
        let mut title = None;
        let mut duration = None;
        let mut count = None;
        let mut reps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if !reps.is_empty() {
                    return Err(perr(lineno, key.trim(), "key after representation rows".into()));
                }
                let key = key.trim();
                let value = value.trim();
                match key {
                    "title" => title = Some(value.to_string()),
                    "segment_duration_s" => {
                        duration = Some(
                            SimTime::parse_decimal_secs(value).map_err(|m| perr(lineno, key, m))?,
                        )
                    }
                    "segment_count" => {
                        count = Some(
                            value
                                .parse::<u32>()
                                .map_err(|e| perr(lineno, key, e.to_string()))?,
                        )
                    }
                    other => return Err(perr(lineno, other, "unknown key".into())),
                }
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            const NAMES: [&str; 5] = ["level", "bitrate_kbps", "width", "height", "fps"];
            if cols.len() != NAMES.len() {
                return Err(perr(
                    lineno,
                    "representation",
                    format!("expected {} columns, found {}", NAMES.len(), cols.len()),
                ));
            }
            let mut nums = [0u32; 5];
            for (i, c) in cols.iter().enumerate() {
                nums[i] = c
                    .parse()
                    .map_err(|e: std::num::ParseIntError| perr(lineno, NAMES[i], e.to_string()))?;
            }
            reps.push(Representation {
                level: nums[0] as usize,
                bitrate_kbps: nums[1],
                width: nums[2],
                height: nums[3],
                frame_rate: nums[4],
            });
        }
        let eof = text.lines().count();
        let title = title.ok_or_else(|| perr(eof, "title", "missing".into()))?;
        let duration = duration.ok_or_else(|| perr(eof, "segment_duration_s", "missing".into()))?;
        let count = count.ok_or_else(|| perr(eof, "segment_count", "missing".into()))?;
        MediaCatalog::new(title, duration, count, reps)
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<MediaCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MediaCatalog::parse(&text, &path.display().to_string())
}

pub fn save_catalog(catalog: &MediaCatalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, catalog.to_text()).map_err(|e| Error::io(path, e))
}

pub(crate) fn cbr_bytes(bitrate_kbps: u32, duration: SimTime) -> u64 {
    // kbit/s * us / 8000 = bytes
    let num = u128::from(bitrate_kbps) * u128::from(duration.as_micros());
    ((num + 4_000) / 8_000) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ladder_endpoints() {
        let c = build_default_catalog();
        assert_eq!(c.level_count(), 14);
        assert_eq!(c.representation(0).unwrap().bitrate_kbps, 100);
        assert_eq!(c.representation(13).unwrap().bitrate_kbps, 4500);
        assert_eq!(c.representation(8).unwrap().bitrate_kbps, 1600);
        assert_eq!(c.segment_duration(), SimTime::from_secs(2));
        assert_eq!(c.segment_count(), 300);
        assert!(c
            .representations()
            .iter()
            .all(|r| (r.width, r.height, r.frame_rate) == (640, 360, 30)));
    }

    #[test]
    fn segment_sizes() {
        let c = build_default_catalog();
        assert_eq!(c.segment_bytes(13, 0).unwrap(), 1_125_000);
        assert_eq!(c.segment_bytes(0, 0).unwrap(), 25_000);
        assert!(matches!(
            c.segment_bytes(14, 0),
            Err(Error::OutOfRange { what: "level", .. })
        ));
        assert!(matches!(
            c.segment_bytes(0, 300),
            Err(Error::OutOfRange { what: "segment", .. })
        ));
    }

    #[test]
    fn cbr_rounding() {
        // 333 kbps over 1.5 s = 62,437.5 bytes
        assert_eq!(cbr_bytes(333, SimTime::from_millis(1_500)), 62_438);
    }

    #[test]
    fn session_bytes_at_fixed_level() {
        let c = build_default_catalog();
        for level in 0..c.level_count() {
            let per = c.segment_bytes(level, 0).unwrap();
            let total: u64 = (0..c.segment_count())
                .map(|s| c.segment_bytes(level, s).unwrap())
                .sum();
            assert_eq!(total, u64::from(c.segment_count()) * per);
        }
    }

    #[test]
    fn url_paths_are_unique() {
        let c = build_default_catalog().with_segment_count(20).unwrap();
        let mut seen = std::collections::HashSet::new();
        for l in 0..c.level_count() {
            for s in 0..c.segment_count() {
                assert!(seen.insert(c.segment(l, s).unwrap().url_path));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let c = build_default_catalog();
        let text = c.to_text();
        let back = MediaCatalog::parse(&text, "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn fractional_duration_round_trip() {
        let c = build_default_catalog();
        let c = MediaCatalog::new("x", SimTime::from_micros(1_250_000), 7, c.representations().to_vec()).unwrap();
        let text = c.to_text();
        assert!(text.contains("segment_duration_s = 1.25\n"));
        assert_eq!(MediaCatalog::parse(&text, "mem").unwrap(), c);
    }

    #[test]
    fn descending_bitrates_rejected() {
        let text = "title = t\nsegment_duration_s = 2\nsegment_count = 3\n0 500 1 1 1\n1 400 1 1 1\n";
        let err = MediaCatalog::parse(text, "mem").unwrap_err();
        assert!(matches!(err, Error::Invalid { what: "catalog", .. }), "{err}");
    }

    #[test]
    fn zero_duration_rejected() {
        let text = "title = t\nsegment_duration_s = 0\nsegment_count = 3\n0 500 1 1 1\n";
        assert!(matches!(
            MediaCatalog::parse(text, "mem"),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let text = "title = t\nsegment_duration_s = 2\nsegment_count = 3\n0 5x0 1 1 1\n";
        match MediaCatalog::parse(text, "cat.txt").unwrap_err() {
            Error::Parse { path, line, field, .. } => {
                assert_eq!(path, "cat.txt");
                assert_eq!(line, 4);
                assert_eq!(field, "bitrate_kbps");
            }
            e => panic!("unexpected {e}"),
        }
        let text = "title = t\nsegment_duration_s = two\n";
        match MediaCatalog::parse(text, "cat.txt").unwrap_err() {
            Error::Parse { line, field, .. } => assert_eq!((line, field.as_str()), (2, "segment_duration_s")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.txt");
        let c = build_default_catalog();
        save_catalog(&c, &path).unwrap();
        assert_eq!(load_catalog(&path).unwrap(), c);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_any_ladder(
                steps in proptest::collection::vec(1u32..5_000, 1..20),
                dur_us in 1u64..20_000_000,
                count in 1u32..10_000,
            ) {
                let mut rate = 0;
                let reps = steps.iter().enumerate().map(|(level, s)| {
                    rate += s;
                    Representation { level, bitrate_kbps: rate, width: 1280, height: 720, frame_rate: 25 }
                }).collect();
                let c = MediaCatalog::new("Ladder", SimTime::from_micros(dur_us), count, reps).unwrap();
                prop_assert_eq!(MediaCatalog::parse(&c.to_text(), "mem").unwrap(), c.clone());
                for l in 1..c.level_count() {
                    prop_assert!(c.segment_bytes(l, 0).unwrap() >= c.segment_bytes(l - 1, 0).unwrap());
                }
            }
        }
    }
}
