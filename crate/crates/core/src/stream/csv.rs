//! CSV rendering of a sample stream.
//!
//! First row `time,tags,<name1>,...,<nameN>`; timestamps are RFC 3339 UTC with
//! nanosecond precision; floats use the shortest decimal that round-trips.
//! NaN payload bits are not preserved (all NaNs render as `NaN`).

use chrono::{DateTime, SecondsFormat, Utc};

use super::{CodecError, MetricHeader, Sample, Tags};

pub fn encode_csv(header: &MetricHeader, samples: &[Sample]) -> Result<String, CodecError> {
    let mut out = Vec::new();
    {
        let mut writer = ::csv::WriterBuilder::new().terminator(::csv::Terminator::Any(b'\n')).from_writer(&mut out);
        let mut row: Vec<String> = vec!["time".into(), "tags".into()];
        row.extend(header.names().iter().cloned());
        writer.write_record(&row).map_err(|e| csv_err(0, e))?;
        for (index, sample) in samples.iter().enumerate() {
            if sample.values.len() != header.len() {
                return Err(CodecError::DimensionMismatch {
                    index,
                    expected: header.len(),
                    found: sample.values.len(),
                });
            }
            row.clear();
            row.push(format_timestamp(sample.timestamp).map_err(|reason| CodecError::Encode { index, reason })?);
            row.push(sample.tags.to_string());
            row.extend(sample.values.iter().map(|v| format_float(*v)));
            writer.write_record(&row).map_err(|e| csv_err(index as u64 + 2, e))?;
        }
        writer.flush()?;
    }
    Ok(String::from_utf8(out).expect("csv writer emits utf-8"))
}

pub fn decode_csv(text: &str) -> Result<(MetricHeader, Vec<Sample>), CodecError> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| csv_err(1, e))?,
        None => return Err(CodecError::Csv { line: 1, reason: "missing header row".into() }),
    };
    if first.len() < 2 || &first[0] != "time" || &first[1] != "tags" {
        return Err(CodecError::Csv {
            line: 1,
            reason: "header row must start with time,tags".into(),
        });
    }
    let header = MetricHeader::new(first.iter().skip(2)).map_err(|e| CodecError::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    let mut samples = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_err(0, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() + 2 {
            return Err(CodecError::Csv {
                line,
                reason: format!("expected {} fields, found {}", header.len() + 2, record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[0]).map_err(|reason| CodecError::Csv { line, reason })?;
        let tags = Tags::parse(&record[1]).map_err(|reason| CodecError::Csv { line, reason })?;
        let values = record
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>().map_err(|_| CodecError::Csv {
                    line,
                    reason: format!("unparsable float {f:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(Sample { timestamp, tags, values });
    }
    Ok((header, samples))
}

pub fn format_timestamp(nanos: u64) -> Result<String, String> {
    let nanos = i64::try_from(nanos).map_err(|_| format!("timestamp {nanos} beyond RFC 3339 range"))?;
    Ok(DateTime::<Utc>::from_timestamp_nanos(nanos).to_rfc3339_opts(SecondsFormat::Nanos, true))
}

pub fn parse_timestamp(s: &str) -> Result<u64, String> {
    let dt = DateTime::parse_from_rfc3339(s).map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
    let nanos = dt
        .timestamp_nanos_opt()
        .ok_or_else(|| format!("timestamp {s:?} out of range"))?;
    u64::try_from(nanos).map_err(|_| format!("timestamp {s:?} precedes the UNIX epoch"))
}

/// Shortest round-trip decimal; `Display` for f64 already guarantees this.
fn format_float(v: f64) -> String {
    v.to_string()
}

fn csv_err(line: u64, e: ::csv::Error) -> CodecError {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    CodecError::Csv { line, reason: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{decode_binary, encode_binary};
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_stream_is_header_row() {
        let header = MetricHeader::new(["m1", "m2"]).unwrap();
        assert_eq!(encode_csv(&header, &[]).unwrap(), "time,tags,m1,m2\n");
    }

    #[test]
    fn formatter_fixed_point() {
        let header = MetricHeader::new(["m1", "m2"]).unwrap();
        let ts = 1_577_836_800_000_000_000; // 2020-01-01T00:00:00Z
        let text = encode_csv(&header, &[Sample::new(ts, Tags::new(), vec![1.5, -0.25])]).unwrap();
        assert_eq!(text, "time,tags,m1,m2\n2020-01-01T00:00:00.000000000Z,,1.5,-0.25\n");
        let (h, s) = decode_csv(&text).unwrap();
        assert_eq!(h, header);
        assert_eq!(s[0].timestamp, ts);
    }

    #[test]
    fn multi_tag_field_is_quoted_and_parsed_back() {
        let header = MetricHeader::new(["m"]).unwrap();
        let s = vec![Sample::new(5, Tags::new().with("host", "a").with("pod", "b"), vec![-0.0])];
        let text = encode_csv(&header, &s).unwrap();
        assert!(text.contains("\"host=a,pod=b\""));
        assert_eq!(decode_csv(&text).unwrap().1, s);
    }

    #[test]
    fn ragged_rows_and_bad_floats_carry_line_numbers() {
        let text = "time,tags,m1,m2\n1970-01-01T00:00:00.000000000Z,,1,2\n1970-01-01T00:00:00.000000001Z,,1\n";
        match decode_csv(text) {
            Err(CodecError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "time,tags,m1\n1970-01-01T00:00:00.000000000Z,,abc\n";
        match decode_csv(text) {
            Err(CodecError::Csv { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_binary_csv_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let header = MetricHeader::new((0..5).map(|i| format!("m{i}"))).unwrap();
        let mut ts = 0u64;
        let samples: Vec<Sample> = (0..1000)
            .map(|i| {
                ts += rng.gen_range(0..5_000_000_000u64);
                let tags = if i % 3 == 0 { Tags::new().with("host", &format!("h{}", i % 7)) } else { Tags::new() };
                let values = (0..5)
                    .map(|_| {
                        let exp: i32 = rng.gen_range(-30..30);
                        rng.gen_range(-1.0..1.0) * 10f64.powi(exp)
                    })
                    .collect();
                Sample::new(ts, tags, values)
            })
            .collect();
        let csv1 = encode_csv(&header, &samples).unwrap();
        let (h, s) = decode_csv(&csv1).unwrap();
        let bin = encode_binary(&h, &s).unwrap();
        let (h2, s2) = decode_binary(&bin).unwrap();
        let csv2 = encode_csv(&h2, &s2).unwrap();
        assert_eq!(csv1, csv2);
        assert_eq!(s2, samples);
    }
}
