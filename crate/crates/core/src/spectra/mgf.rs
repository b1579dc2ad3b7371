use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Peak, Spectrum};
use crate::error::{Error, Result};
use crate::peptide::Vocabulary;

/// Parse every `BEGIN IONS`/`END IONS` block of `text`, in file order.
///
/// Recognised headers: `TITLE`, `PEPMASS` (first field is the precursor m/z),
/// `CHARGE` (optional trailing `+`), `RTINSECONDS` and `SEQ`. Anything else is
/// carried in [`Spectrum::extra_headers`].
pub fn parse_mgf(text: &str, vocab: &Vocabulary) -> Result<Vec<Spectrum>> {
    let mut out = Vec::new();
    let mut current: Option<Block> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match current.as_mut() {
            None => {
                if line == "BEGIN IONS" {
                    current = Some(Block::new(line_no));
                } else {
                    return Err(Error::Mgf {
                        line: line_no,
                        block: String::new(),
                        reason: format!("unexpected line outside of an ion block: {line:?}"),
                    });
                }
            }
            Some(block) => {
                if line == "END IONS" {
                    let block = current.take().unwrap();
                    out.push(block.finish(line_no, vocab)?);
                } else if line == "BEGIN IONS" {
                    return Err(block.error(line_no, "nested BEGIN IONS (missing END IONS)"));
                } else if line.as_bytes()[0].is_ascii_alphabetic() {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| block.error(line_no, "header line without '='"))?;
                    block.header(line_no, key.trim(), value.trim())?;
                } else {
                    let mut fields = line.split_whitespace();
                    let parse = |f: Option<&str>| f.and_then(|s| s.parse::<f64>().ok());
                    let mz = parse(fields.next());
                    let intensity = parse(fields.next());
                    match (mz, intensity, fields.next()) {
                        (Some(mz), Some(intensity), None) if intensity >= 0.0 => {
                            block.peaks.push(Peak { mz, intensity })
                        }
                        _ => return Err(block.error(line_no, &format!("malformed peak line {line:?}"))),
                    }
                }
            }
        }
    }
    if let Some(block) = current {
        return Err(block.error(block.start, "unterminated block (missing END IONS)"));
    }
    Ok(out)
}

pub fn read_mgf(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<Spectrum>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mgf(&text, vocab)
}

struct Block {
    start: usize,
    title: Option<String>,
    pepmass: Option<f64>,
    charge: Option<u32>,
    seq: Option<(usize, String)>,
    rt: Option<f64>,
    extra: Vec<(String, String)>,
    peaks: Vec<Peak>,
}

impl Block {
    fn new(start: usize) -> Self {
        Block {
            start,
            title: None,
            pepmass: None,
            charge: None,
            seq: None,
            rt: None,
            extra: Vec::new(),
            peaks: Vec::new(),
        }
    }

    fn name(&self) -> String {
        self.title
            .clone()
            .unwrap_or_else(|| format!("block starting at line {}", self.start))
    }

    fn error(&self, line: usize, reason: &str) -> Error {
        Error::Mgf {
            line,
            block: self.name(),
            reason: reason.to_string(),
        }
    }

    fn header(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "TITLE" => self.title = Some(value.to_string()),
            "PEPMASS" => {
                let first = value.split_whitespace().next().unwrap_or("");
                let mz = first
                    .parse::<f64>()
                    .map_err(|_| self.error(line, &format!("bad PEPMASS {value:?}")))?;
                self.pepmass = Some(mz);
            }
            "CHARGE" => {
                let digits = value.strip_suffix('+').unwrap_or(value);
                let z = digits
                    .parse::<u32>()
                    .ok()
                    .filter(|&z| z >= 1)
                    .ok_or_else(|| self.error(line, &format!("bad CHARGE {value:?}")))?;
                self.charge = Some(z);
            }
            "RTINSECONDS" => {
                let rt = value
                    .parse::<f64>()
                    .map_err(|_| self.error(line, &format!("bad RTINSECONDS {value:?}")))?;
                self.rt = Some(rt);
            }
            "SEQ" => self.seq = Some((line, value.to_string())),
            _ => self.extra.push((key.to_string(), value.to_string())),
        }
        Ok(())
    }

    fn finish(self, line: usize, vocab: &Vocabulary) -> Result<Spectrum> {
        let precursor_mz = self
            .pepmass
            .ok_or_else(|| self.error(line, "missing PEPMASS"))?;
        let charge = self.charge.ok_or_else(|| self.error(line, "missing CHARGE"))?;
        let annotation = match &self.seq {
            Some((seq_line, s)) => Some(
                vocab
                    .parse_sequence(s)
                    .map_err(|e| self.error(*seq_line, &e.to_string()))?,
            ),
            None => None,
        };
        Ok(Spectrum {
            title: self.title.unwrap_or_default(),
            precursor_mz,
            charge,
            peaks: self.peaks,
            annotation,
            retention_time: self.rt,
            extra_headers: self.extra,
            normalized: false,
        })
    }
}

/// Serialise spectra; numeric fields use six fixed decimals.
pub fn write_mgf<W: Write>(spectra: &[Spectrum], vocab: &Vocabulary, mut out: W) -> std::io::Result<()> {
    for s in spectra {
        writeln!(out, "BEGIN IONS")?;
        writeln!(out, "TITLE={}", s.title)?;
        writeln!(out, "PEPMASS={:.6}", s.precursor_mz)?;
        writeln!(out, "CHARGE={}+", s.charge)?;
        if let Some(rt) = s.retention_time {
            writeln!(out, "RTINSECONDS={rt:.6}")?;
        }
        if let Some(p) = &s.annotation {
            writeln!(out, "SEQ={}", vocab.render(p))?;
        }
        for (k, v) in &s.extra_headers {
            writeln!(out, "{k}={v}")?;
        }
        for p in &s.peaks {
            writeln!(out, "{:.6} {:.6}", p.mz, p.intensity)?;
        }
        writeln!(out, "END IONS")?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_mgf_file(path: impl AsRef<Path>, spectra: &[Spectrum], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_mgf(spectra, vocab, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GA: &str = "BEGIN IONS
TITLE=ga
PEPMASS=74.0418 1234.5
CHARGE=2+
SEQ=GA
58.028736 1.0
90.054951 0.5
END IONS
";

    fn to_string(spectra: &[Spectrum], v: &Vocabulary) -> String {
        let mut buf = Vec::new();
        write_mgf(spectra, v, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn parses_annotated_block() {
        let v = Vocabulary::toy();
        let s = parse_mgf(GA, &v).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].precursor_mz, 74.0418);
        assert_eq!(s[0].charge, 2);
        assert_eq!(s[0].annotation, Some(v.parse_sequence("GA").unwrap()));
        assert_eq!(s[0].peaks.len(), 2);
    }

    #[test]
    fn charge_sign_is_optional() {
        let v = Vocabulary::toy();
        let s = parse_mgf(&GA.replace("CHARGE=2+", "CHARGE=2"), &v).unwrap();
        assert_eq!(s[0].charge, 2);
    }

    #[test]
    fn missing_required_fields() {
        let v = Vocabulary::toy();
        let no_mass = GA.replace("PEPMASS=74.0418 1234.5\n", "");
        match parse_mgf(&no_mass, &v) {
            Err(Error::Mgf { block, reason, line }) => {
                assert_eq!(block, "ga");
                assert!(reason.contains("PEPMASS"));
                assert_eq!(line, 7);
            }
            other => panic!("{other:?}"),
        }
        let no_charge = GA.replace("CHARGE=2+\n", "");
        assert!(matches!(parse_mgf(&no_charge, &v), Err(Error::Mgf { .. })));
    }

    #[test]
    fn malformed_input() {
        let v = Vocabulary::toy();
        assert!(parse_mgf(&GA.replace("90.054951 0.5", "90.05 abc"), &v).is_err());
        assert!(parse_mgf(&GA.replace("90.054951 0.5", "90.05"), &v).is_err());
        assert!(parse_mgf(&GA.replace("END IONS\n", ""), &v).is_err());
        assert!(parse_mgf(&GA.replace("SEQ=GA", "SEQ=GK"), &v).is_err());
    }

    #[test]
    fn write_cases() {
        let v = Vocabulary::toy();
        assert_eq!(to_string(&[], &v), "");
        let mut s = parse_mgf(GA, &v).unwrap();
        s[0].annotation = None;
        let text = to_string(&s, &v);
        assert!(!text.contains("SEQ="));
        assert_eq!(parse_mgf(&text, &v).unwrap(), s);
    }

    #[test]
    fn unknown_headers_survive() {
        let v = Vocabulary::toy();
        let text = GA.replace("SEQ=GA", "SEQ=GA\nSCANS=17\nFOO=bar baz");
        let s = parse_mgf(&text, &v).unwrap();
        assert_eq!(
            s[0].extra_headers,
            vec![("SCANS".into(), "17".into()), ("FOO".into(), "bar baz".into())]
        );
        assert_eq!(parse_mgf(&to_string(&s, &v), &v).unwrap(), s);
    }
}
