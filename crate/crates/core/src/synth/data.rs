use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::seeded_rng;
use crate::error::{Error, Result};

/// Points per sequence, at `x = 1..=16`.
pub const SEQ_LEN: usize = 16;
/// Forecast emissions per sequence, `x = 2..=16`.
pub const FORECAST_LEN: usize = SEQ_LEN - 1;
/// Coefficients are drawn from U(LOW, HIGH).
pub const COEF_LOW: f64 = 5.0;
pub const COEF_HIGH: f64 = 15.0;

const HEADER: &str = "# multidecode synth-pairs v1";
const COLUMNS: &str = "# a,b,c,d,y1[x=1..16],y2[x=1..16]";

/// Two coupled linear sequences: `y1 = a x + b`, `y2 = c x + d + y1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSequences {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub y1: [f64; SEQ_LEN],
    pub y2: [f64; SEQ_LEN],
}

impl PairedSequences {
    pub fn from_coefficients(a: f64, b: f64, c: f64, d: f64) -> Self {
        let mut y1 = [0.0; SEQ_LEN];
        let mut y2 = [0.0; SEQ_LEN];
        for i in 0..SEQ_LEN {
            let x = (i + 1) as f64;
            y1[i] = a * x + b;
            y2[i] = c * x + d + y1[i];
        }
        PairedSequences { a, b, c, d, y1, y2 }
    }

    /// Conditioning coefficients of sequence `which` (0 or 1).
    pub fn coefficients(&self, which: usize) -> [f64; 2] {
        if which == 0 {
            [self.a, self.b]
        } else {
            [self.c, self.d]
        }
    }

    pub fn values(&self, which: usize) -> &[f64; SEQ_LEN] {
        if which == 0 {
            &self.y1
        } else {
            &self.y2
        }
    }
}

pub fn sample_pair<R: Rng>(rng: &mut R) -> PairedSequences {
    let mut draw = || rng.gen_range(COEF_LOW..COEF_HIGH);
    let (a, b, c, d) = (draw(), draw(), draw(), draw());
    PairedSequences::from_coefficients(a, b, c, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<PairedSequences>,
    pub val: Vec<PairedSequences>,
    pub test: Vec<PairedSequences>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl SynthDataset {
    pub fn split(&self, name: &str) -> Option<&[PairedSequences]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }

    /// Writes `train.csv`, `val.csv` and `test.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for name in SPLIT_NAMES {
            let path = dir.join(format!("{name}.csv"));
            write_records(&path, self.split(name).expect("known split"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| read_records(&dir.join(format!("{name}.csv")));
        Ok(SynthDataset {
            train: read("train")?,
            val: read("val")?,
            test: read("test")?,
        })
    }
}

/// Draws the three splits from independent streams of `seed`.
pub fn build_dataset(sizes: SplitSizes, seed: u64) -> SynthDataset {
    let draw = |n: usize, stream: u64| {
        let mut rng = seeded_rng(seed, stream);
        (0..n).map(|_| sample_pair(&mut rng)).collect::<Vec<_>>()
    };
    SynthDataset {
        train: draw(sizes.train, 1),
        val: draw(sizes.val, 2),
        test: draw(sizes.test, 3),
    }
}

/// Text encoding: a version header, a column comment, then one
/// comma-separated record per line with 36 shortest-round-trip floats.
pub fn encode_records(records: &[PairedSequences]) -> String {
    let mut out = String::with_capacity(records.len() * 400);
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    for r in records {
        let fields = [r.a, r.b, r.c, r.d]
            .into_iter()
            .chain(r.y1)
            .chain(r.y2)
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn decode_records(text: &str, origin: &Path) -> Result<Vec<PairedSequences>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        other => {
            return Err(Error::format(
                origin,
                format!("expected header {HEADER:?}, found {other:?}"),
            ))
        }
    }
    let mut records = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::format(origin, format!("line {}: {e}", no + 2)))?;
        if vals.len() != 4 + 2 * SEQ_LEN {
            return Err(Error::format(
                origin,
                format!(
                    "line {}: expected {} fields, found {}",
                    no + 2,
                    4 + 2 * SEQ_LEN,
                    vals.len()
                ),
            ));
        }
        let mut y1 = [0.0; SEQ_LEN];
        let mut y2 = [0.0; SEQ_LEN];
        y1.copy_from_slice(&vals[4..4 + SEQ_LEN]);
        y2.copy_from_slice(&vals[4 + SEQ_LEN..]);
        records.push(PairedSequences {
            a: vals[0],
            b: vals[1],
            c: vals[2],
            d: vals[3],
            y1,
            y2,
        });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[PairedSequences]) -> Result<()> {
    fs::write(path, encode_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PairedSequences>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_records(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_evaluation() {
        let p = PairedSequences::from_coefficients(2.0, 1.0, 0.0, 0.0);
        assert_eq!(p.y1[2], 7.0);
    }

    #[test]
    fn reference_coefficients_start_at_45_33() {
        let p = PairedSequences::from_coefficients(14.56, 5.18, 10.93, 14.66);
        assert!((p.y2[0] - 45.33).abs() < 1e-9);
    }

    #[test]
    fn coupling_identity_holds_exactly() {
        let mut rng = seeded_rng(7, 0);
        for _ in 0..200 {
            let p = sample_pair(&mut rng);
            for v in [p.a, p.b, p.c, p.d] {
                assert!((COEF_LOW..=COEF_HIGH).contains(&v));
            }
            for i in 0..SEQ_LEN {
                let x = (i + 1) as f64;
                assert_eq!(p.y1[i], p.a * x + p.b);
                assert_eq!(p.y2[i], p.c * x + p.d + p.y1[i]);
            }
        }
    }

    #[test]
    fn seeded_and_split_sizes() {
        let sizes = SplitSizes {
            train: 50,
            val: 10,
            test: 10,
        };
        let a = build_dataset(sizes, 3);
        let b = build_dataset(sizes, 3);
        assert_eq!(a, b);
        assert_eq!(a.sizes(), sizes);
        assert_ne!(a.train[0], a.val[0]);
        assert_ne!(a, build_dataset(sizes, 4));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let data = build_dataset(
            SplitSizes {
                train: 5,
                val: 0,
                test: 0,
            },
            11,
        );
        let text = encode_records(&data.train);
        let back = decode_records(&text, Path::new("mem")).unwrap();
        assert_eq!(back, data.train);
    }

    #[test]
    fn rejects_bad_header_and_width() {
        assert!(decode_records("a,b\n", Path::new("x")).is_err());
        let bad = format!("{HEADER}\n1,2,3\n");
        assert!(matches!(
            decode_records(&bad, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }
}
