use std::io;

use serde::{Deserialize, Serialize};

use super::{LidarError, Result};

/// Physical ceiling on canopy height; taller records are data errors.
pub const MAX_CANOPY_HEIGHT: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "GEDI")]
    Gedi,
    #[serde(rename = "ICESAT2")]
    Icesat2,
    #[serde(rename = "UAVLS")]
    Uavls,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Gedi => "GEDI",
            Source::Icesat2 => "ICESAT2",
            Source::Uavls => "UAVLS",
        }
    }
}

/// One georeferenced canopy-height observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub x: f64,
    pub y: f64,
    pub canopy_height: f64,
    pub source: Source,
    pub quality: i32,
}

impl FootprintRecord {
    pub fn new(x: f64, y: f64, canopy_height: f64, source: Source, quality: i32) -> Result<Self> {
        let r = FootprintRecord {
            x,
            y,
            canopy_height,
            source,
            quality,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_CANOPY_HEIGHT).contains(&self.canopy_height) {
            return Err(LidarError::InvalidHeight(self.canopy_height));
        }
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(LidarError::InvalidCoordinate {
                index: 0,
                what: format!("({}, {})", self.x, self.y),
            });
        }
        Ok(())
    }
}

/// Keeps records whose quality flag is exactly 1, preserving order.
pub fn filter_quality(records: &[FootprintRecord]) -> Vec<FootprintRecord> {
    records.iter().filter(|r| r.quality == 1).copied().collect()
}

/// Reads `x,y,canopy_height,source,quality` rows.
pub fn read_footprints_csv<R: io::Read>(reader: R) -> Result<Vec<FootprintRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (index, row) in rdr.deserialize::<FootprintRecord>().enumerate() {
        let r = row?;
        r.validate().map_err(|e| match e {
            LidarError::InvalidCoordinate { what, .. } => LidarError::InvalidCoordinate { index, what },
            other => other,
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_footprints_csv<W: io::Write>(writer: W, records: &[FootprintRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["x", "y", "canopy_height", "source", "quality"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: i32) -> FootprintRecord {
        FootprintRecord::new(1.0, 2.0, 20.0, Source::Gedi, q).unwrap()
    }

    #[test]
    fn keeps_flag_one() {
        assert_eq!(filter_quality(&[rec(1), rec(0), rec(1)]).len(), 2);
        assert!(filter_quality(&[rec(0), rec(0)]).is_empty());
        let mixed = [rec(0), rec(1), rec(2)];
        let kept = filter_quality(&mixed);
        assert_eq!(kept, vec![rec(1)]);
    }

    #[test]
    fn height_bounds() {
        assert!(FootprintRecord::new(0.0, 0.0, -0.1, Source::Uavls, 1).is_err());
        assert!(FootprintRecord::new(0.0, 0.0, 150.5, Source::Uavls, 1).is_err());
        assert!(FootprintRecord::new(0.0, 0.0, 150.0, Source::Uavls, 1).is_ok());
    }

    #[test]
    fn csv_schema() {
        let records = vec![
            FootprintRecord::new(500010.5, 3199990.0, 31.25, Source::Gedi, 1).unwrap(),
            FootprintRecord::new(500020.0, 3199980.0, 12.0, Source::Icesat2, 0).unwrap(),
        ];
        let mut buf = Vec::new();
        write_footprints_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,canopy_height,source,quality\n"));
        assert!(text.contains(",ICESAT2,0"));
        assert_eq!(read_footprints_csv(buf.as_slice()).unwrap(), records);
        let bad = "x,y,canopy_height,source,quality\n1,2,3,LVIS,1\n";
        assert!(read_footprints_csv(bad.as_bytes()).is_err());
        let tall = "x,y,canopy_height,source,quality\n1,2,200,GEDI,1\n";
        assert!(matches!(
            read_footprints_csv(tall.as_bytes()),
            Err(LidarError::InvalidHeight(_))
        ));
    }
}
