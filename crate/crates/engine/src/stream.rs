//! Update streams as CSV: one event per line, `+|-,relation,mult,v1,v2,...`.
//!
//! A field that parses as a 64-bit integer is an integer value; any other
//! field is a string. Lines starting with `#` are comments.

use std::io::{Read, Write};

use dynjoin_core::gmr::Value;
use dynjoin_core::query::Update;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamEvent {
    /// 1-based position in the stream.
    pub seq: u64,
    pub relation: String,
    /// Signed: negative multiplicities delete.
    pub mult: i64,
    pub values: Vec<Value>,
}

impl StreamEvent {
    pub fn insert(seq: u64, relation: &str, values: Vec<Value>) -> Self {
        StreamEvent {
            seq,
            relation: relation.to_string(),
            mult: 1,
            values,
        }
    }

    pub fn to_update(&self) -> Update {
        Update::single(&self.relation, self.values.clone(), self.mult)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("line {line}: {msg}")]
    Format { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_field(f: &str) -> Value {
    match f.parse::<i64>() {
        Ok(v) => Value::Int(v),
        Err(_) => Value::str(f),
    }
}

/// Reads events lazily; the first malformed line ends the stream with an
/// error.
pub struct StreamReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    seq: u64,
    failed: bool,
}

impl<R: Read> StreamReader<R> {
    pub fn new(input: R) -> Self {
        let records = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input)
            .into_records();
        StreamReader {
            records,
            seq: 0,
            failed: false,
        }
    }

    fn event(&mut self, rec: &csv::StringRecord) -> Result<StreamEvent, StreamError> {
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| StreamError::Format { line, msg };
        if rec.len() < 3 {
            return Err(bad(format!("expected sign, relation and multiplicity, found {} fields", rec.len())));
        }
        let sign = match &rec[0] {
            "+" => 1,
            "-" => -1,
            s => return Err(bad(format!("sign must be + or -, found {s:?}"))),
        };
        let relation = &rec[1];
        if relation.is_empty() {
            return Err(bad("empty relation name".into()));
        }
        let mult: i64 = rec[2].parse().map_err(|_| bad(format!("bad multiplicity {:?}", &rec[2])))?;
        if mult <= 0 {
            return Err(bad(format!("multiplicity must be positive, found {mult}")));
        }
        self.seq += 1;
        Ok(StreamEvent {
            seq: self.seq,
            relation: relation.to_string(),
            mult: sign * mult,
            values: rec.iter().skip(3).map(parse_field).collect(),
        })
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<StreamEvent, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let out = match self.records.next()? {
            Ok(rec) => self.event(&rec),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                Err(match e.into_kind() {
                    csv::ErrorKind::Io(io) => StreamError::Io(io),
                    other => StreamError::Format {
                        line,
                        msg: format!("{other:?}"),
                    },
                })
            }
        };
        self.failed = out.is_err();
        Some(out)
    }
}

pub fn read_stream<R: Read>(input: R) -> Result<Vec<StreamEvent>, StreamError> {
    StreamReader::new(input).collect()
}

pub struct StreamWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(out: W) -> Self {
        StreamWriter {
            inner: csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(out),
        }
    }

    pub fn write(&mut self, e: &StreamEvent) -> std::io::Result<()> {
        let sign = if e.mult < 0 { "-" } else { "+" };
        let mut rec = vec![sign.to_string(), e.relation.clone(), e.mult.unsigned_abs().to_string()];
        rec.extend(e.values.iter().map(plain));
        self.inner.write_record(&rec).map_err(csv_io)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

pub(crate) fn plain(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Str(s) => s.to_string(),
    }
}

pub(crate) fn csv_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn write_stream<W: Write>(out: W, events: &[StreamEvent]) -> std::io::Result<W> {
    let mut w = StreamWriter::new(out);
    for e in events {
        w.write(e)?;
    }
    w.finish()
}
