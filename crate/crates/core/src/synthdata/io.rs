use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::StereoSample;
use crate::error::{Error, Result};
use crate::geometry::{JointSetUvd, StereoRig, Uvd, NUM_JOINTS};
use crate::roi::ImageBuffer;

pub const RIG_FILE: &str = "rig.cfg";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
const HEADER: &str = "id,j,u,v,d";

/// Binary P6 with maxval 255.
pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("not a binary PPM (P6)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse::<usize>().map_err(|_| format!("bad {what}"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (expected 255)"));
    }
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = w * h * 3;
    if bytes.len() < start + n {
        return Err(format!("raster truncated: {} of {n} bytes", bytes.len().saturating_sub(start)));
    }
    if bytes.len() > start + n {
        return Err("trailing bytes after raster".into());
    }
    let data = bytes[start..].iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::from_raw(w, h, data).map_err(|e| e.to_string())
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes).map_err(|m| Error::corrupt(None, format!("{}: {m}", path.display())))
}

/// Shortest round-trip decimal, padded with zeros to at least nine significant digits.
fn decimal(v: f64) -> String {
    let mut s = format!("{v}");
    let significant = s.trim_start_matches('-').trim_start_matches(['0', '.']).chars().filter(char::is_ascii_digit).count();
    if significant < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 9 - significant.max(1)));
    }
    s
}

fn image_path(dir: &Path, id: u64, side: char) -> std::path::PathBuf {
    dir.join(format!("{id:06}_{side}.ppm"))
}

/// Writes `rig.cfg`, one PPM per view and `annotations.csv`, ordered by id.
/// All samples must share one rig.
pub fn write_dataset(samples: &[StereoSample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut order: Vec<&StereoSample> = samples.iter().collect();
    order.sort_by_key(|s| s.id);
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidConfig("duplicate sample id".into()));
    }
    let rig = order.first().map(|s| s.rig).unwrap_or_default();
    if order.iter().any(|s| s.rig != rig) {
        return Err(Error::InvalidConfig("samples use different rigs".into()));
    }
    rig.save(&dir.join(RIG_FILE))?;
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for s in &order {
        write_ppm(&image_path(dir, s.id, 'l'), &s.left)?;
        write_ppm(&image_path(dir, s.id, 'r'), &s.right)?;
        for (j, p) in s.gt.iter().enumerate() {
            let _ = writeln!(csv, "{},{j},{},{},{}", s.id, decimal(p.u), decimal(p.v), decimal(p.d));
        }
    }
    let path = dir.join(ANNOTATIONS_FILE);
    std::fs::write(&path, csv).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset`], validating every sample.
pub fn read_dataset(dir: &Path) -> Result<Vec<StereoSample>> {
    let rig_path = dir.join(RIG_FILE);
    if !rig_path.exists() {
        return Err(Error::corrupt(None, format!("missing {}", rig_path.display())));
    }
    let rig = StereoRig::load(&rig_path).map_err(|e| Error::corrupt(None, format!("{RIG_FILE}: {e}")))?;
    let path = dir.join(ANNOTATIONS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::corrupt(None, format!("missing {}", path.display())),
        _ => Error::io(&path, e),
    })?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::corrupt(None, format!("{ANNOTATIONS_FILE}: header must be `{HEADER}`")));
    }
    let mut joints: BTreeMap<u64, Vec<Option<Uvd>>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 2;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |id: Option<u64>, what: &str| Error::corrupt(id, format!("{ANNOTATIONS_FILE} line {row}: {what}"));
        if fields.len() != 5 {
            return Err(bad(None, "expected 5 fields"));
        }
        let id: u64 = fields[0].parse().map_err(|_| bad(None, "bad id"))?;
        let j: usize = fields[1].parse().map_err(|_| bad(Some(id), "bad joint index"))?;
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let (Some(u), Some(v), Some(d)) = (num(fields[2]), num(fields[3]), num(fields[4])) else {
            return Err(bad(Some(id), "non-numeric coordinate"));
        };
        if j >= NUM_JOINTS {
            return Err(bad(Some(id), &format!("joint index {j} out of range")));
        }
        let slot = &mut joints.entry(id).or_insert_with(|| vec![None; NUM_JOINTS])[j];
        if slot.is_some() {
            return Err(bad(Some(id), &format!("duplicate joint {j}")));
        }
        *slot = Some(Uvd::new(u, v, d));
    }
    let mut samples = Vec::with_capacity(joints.len());
    for (id, rows) in joints {
        let present = rows.iter().filter(|r| r.is_some()).count();
        if present != NUM_JOINTS {
            return Err(Error::corrupt(
                Some(id),
                format!("{present} annotation rows, expected {NUM_JOINTS}"),
            ));
        }
        let gt = JointSetUvd(rows.into_iter().map(|r| r.expect("checked")).collect());
        if let Some(j) = gt.iter().position(|p| !(p.d > 0.0)) {
            return Err(Error::corrupt(Some(id), format!("joint {j} has non-positive disparity")));
        }
        let mut views = Vec::with_capacity(2);
        for side in ['l', 'r'] {
            let p = image_path(dir, id, side);
            if !p.exists() {
                return Err(Error::corrupt(Some(id), format!("missing image {}", p.display())));
            }
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let img = parse_ppm(&bytes).map_err(|m| Error::corrupt(Some(id), format!("{}: {m}", p.display())))?;
            if img.width() != rig.width || img.height() != rig.height {
                return Err(Error::corrupt(
                    Some(id),
                    format!(
                        "{} is {}x{}, rig says {}x{}",
                        p.display(),
                        img.width(),
                        img.height(),
                        rig.width,
                        rig.height
                    ),
                ));
            }
            views.push(img);
        }
        let right = views.pop().expect("two views");
        let left = views.pop().expect("two views");
        samples.push(StereoSample {
            id,
            left,
            right,
            gt,
            rig,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::SynthConfig;

    fn dataset() -> Vec<StereoSample> {
        SynthConfig {
            count: 3,
            seed: 21,
            ..SynthConfig::default()
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn decimal_formatting() {
        for v in [100.0, 0.5, -3.25, 1e-7, 123.456789012345, 0.0, 41.999999999999] {
            let s = decimal(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let digits = s.trim_start_matches('-').trim_start_matches(['0', '.']).chars().filter(char::is_ascii_digit).count();
            assert!(digits >= 9 || v == 0.0, "{s}");
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let samples = dataset();
        write_dataset(&samples, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), samples);
    }

    #[test]
    fn wrong_joint_count_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dataset(), dir.path()).unwrap();
        let path = dir.path().join(ANNOTATIONS_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("1,20,")).collect();
        std::fs::write(&path, kept.join("\n")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::CorruptDataset { id: Some(1), .. }), "{err}");
    }

    #[test]
    fn every_missing_image_names_its_sample() {
        let samples = dataset();
        for s in &samples {
            for side in ['l', 'r'] {
                let dir = tempfile::tempdir().unwrap();
                write_dataset(&samples, dir.path()).unwrap();
                std::fs::remove_file(image_path(dir.path(), s.id, side)).unwrap();
                let err = read_dataset(dir.path()).unwrap_err();
                assert!(matches!(err, Error::CorruptDataset { id: Some(id), .. } if id == s.id), "{err}");
                assert!(err.to_string().contains(&format!("{:06}", s.id)));
            }
        }
    }

    #[test]
    fn rig_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dataset(), dir.path()).unwrap();
        let rig = StereoRig {
            width: 400,
            ..StereoRig::default()
        };
        rig.save(&dir.path().join(RIG_FILE)).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::CorruptDataset { id: Some(0), .. })));
    }

    #[test]
    fn ppm_rejects_truncation() {
        let mut img = ImageBuffer::new(4, 3);
        img.set_pixel(1, 2, [1.0, 0.0, 0.5]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(back.pixel(1, 2), [1.0, 0.0, 128.0 / 255.0]);
        let bytes = std::fs::read(&p).unwrap();
        for cut in 0..bytes.len() {
            assert!(parse_ppm(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
