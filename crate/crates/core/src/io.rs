//! Plain-text, line-oriented file formats.
//!
//! Dataset files:
//!
//! ```text
//! #dataset v1
//! #vocab a b c ... t
//! #pattern f b c          (optional, repeatable: generating rule patterns)
//! #blockers e             (optional: generating rule blockers)
//! a f b c e f 0           (events..., then label 0/1)
//! ```
//!
//! Model files hold the hyper-parameters, the vocabulary the model was
//! trained against, and every tensor in canonical order, one row per line.
//! Floats are printed with 17 significant digits, which round-trips `f64`
//! exactly, so saving and reloading a model reproduces it bit for bit.
//! Writes go through a temporary file in the target directory followed by a
//! rename, so readers never observe a half-written file.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::data::{Dataset, RuleSpec, Session, Vocab};
use crate::linalg::Matrix;
use crate::model::{DirectionParams, HyperParams, LstmType, ModelParams, OptimizerKind};
use crate::{Error, Result};

const DATASET_MAGIC: &str = "#dataset";
const MODEL_MAGIC: &str = "#model";
const FORMAT_VERSION: &str = "v1";

/// Formats an `f64` so that parsing it back yields the identical bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// Writes `contents` to `path` atomically: the data lands in a temporary
/// file in the same directory, which is then renamed over the target.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    std::io::Write::write_all(&mut tmp, contents.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Renders a dataset in the line format above.
pub fn render_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "#vocab {}", ds.vocab.names().join(" "));
    if let Some(rules) = &ds.rules {
        for p in rules.patterns() {
            let _ = writeln!(out, "#pattern {}", ds.vocab.render(p));
        }
        if !rules.blockers().is_empty() {
            let names: Vec<&str> = rules
                .blockers()
                .iter()
                .filter_map(|&e| ds.vocab.name(e))
                .collect();
            let _ = writeln!(out, "#blockers {}", names.join(" "));
        }
    }
    for s in &ds.sessions {
        let _ = writeln!(
            out,
            "{} {}",
            ds.vocab.render(&s.events),
            if s.label { 1 } else { 0 }
        );
    }
    out
}

/// Saves a dataset atomically.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    atomic_write(path, &render_dataset(ds))
}

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses a dataset from a reader; `origin` names the source in errors.
pub fn read_dataset(reader: impl Read, origin: &str) -> Result<Dataset> {
    let reader = BufReader::new(reader);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((idx + 1, line));
        }
    }
    let mut it = lines.into_iter();
    let (ln, magic) = it
        .next()
        .ok_or_else(|| parse_err(origin, 1, "empty file"))?;
    let expected = format!("{DATASET_MAGIC} {FORMAT_VERSION}");
    if magic.trim() != expected {
        if magic.starts_with(DATASET_MAGIC) {
            return Err(Error::FormatVersion {
                found: magic.trim().to_string(),
                expected,
            });
        }
        return Err(parse_err(
            origin,
            ln,
            format!("expected {expected:?} header"),
        ));
    }
    let (ln, vocab_line) = it
        .next()
        .ok_or_else(|| parse_err(origin, ln, "missing #vocab line"))?;
    let vocab_names: Vec<&str> = vocab_line
        .strip_prefix("#vocab")
        .ok_or_else(|| parse_err(origin, ln, "expected #vocab line"))?
        .split_whitespace()
        .collect();
    let vocab = Vocab::new(vocab_names).map_err(|e| parse_err(origin, ln, e.to_string()))?;

    let mut patterns: Vec<Vec<u32>> = Vec::new();
    let mut blockers = std::collections::BTreeSet::new();
    let mut sessions = Vec::new();
    let mut in_records = false;
    for (ln, line) in it {
        if let Some(rest) = line.strip_prefix("#pattern") {
            if in_records {
                return Err(parse_err(origin, ln, "#pattern after session records"));
            }
            let p: Vec<u32> = rest
                .split_whitespace()
                .map(|n| vocab.require(n))
                .collect::<Result<_>>()
                .map_err(|e| parse_err(origin, ln, e.to_string()))?;
            patterns.push(p);
        } else if let Some(rest) = line.strip_prefix("#blockers") {
            if in_records {
                return Err(parse_err(origin, ln, "#blockers after session records"));
            }
            for n in rest.split_whitespace() {
                blockers.insert(
                    vocab
                        .require(n)
                        .map_err(|e| parse_err(origin, ln, e.to_string()))?,
                );
            }
        } else if line.starts_with('#') {
            return Err(parse_err(
                origin,
                ln,
                format!("unexpected header line {line:?}"),
            ));
        } else {
            in_records = true;
            let mut tokens: Vec<&str> = line.split_whitespace().collect();
            let label_tok = tokens
                .pop()
                .ok_or_else(|| parse_err(origin, ln, "blank record"))?;
            let label = match label_tok {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        origin,
                        ln,
                        format!("label must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            if tokens.is_empty() {
                return Err(parse_err(origin, ln, "session has no events"));
            }
            let events: Vec<u32> = tokens
                .iter()
                .map(|n| vocab.require(n))
                .collect::<Result<_>>()
                .map_err(|e| parse_err(origin, ln, e.to_string()))?;
            sessions.push(Session::new(events, label));
        }
    }
    let rules = if patterns.is_empty() {
        if !blockers.is_empty() {
            return Err(parse_err(origin, 0, "#blockers given without any #pattern"));
        }
        None
    } else {
        Some(RuleSpec::new(patterns, blockers).map_err(|e| parse_err(origin, 0, e.to_string()))?)
    };
    Ok(Dataset {
        vocab,
        sessions,
        rules,
    })
}

/// Opens a file, tagging IO failures with the path.
fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Loads a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?, &path.display().to_string())
}

/// A trained model bundled with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub hp: HyperParams,
    pub vocab: Vocab,
    pub params: ModelParams,
}

fn lstm_type_name(t: LstmType) -> &'static str {
    match t {
        LstmType::Standard => "standard",
        LstmType::Bidirectional => "bidirectional",
    }
}

fn optimizer_name(o: OptimizerKind) -> &'static str {
    match o {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

fn direction_name(i: usize) -> &'static str {
    if i == 0 {
        "forward"
    } else {
        "backward"
    }
}

/// Renders a model in the line format described in the module docs.
pub fn render_model(m: &SavedModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(
        out,
        "#hyperparams embedding={} lstm={} type={} lr={} dropout={} batch={} epochs={} optimizer={} seed={}",
        m.hp.embedding_size,
        m.hp.lstm_size,
        lstm_type_name(m.hp.lstm_type),
        fmt_f64(m.hp.learning_rate),
        fmt_f64(m.hp.dropout_rate),
        m.hp.batch_size,
        m.hp.max_epochs,
        optimizer_name(m.hp.optimizer),
        m.hp.seed,
    );
    let _ = writeln!(out, "#vocab {}", m.vocab.names().join(" "));
    let tensor = |out: &mut String, name: &str, mat: &Matrix| {
        let _ = writeln!(out, "#tensor {name} {} {}", mat.rows(), mat.cols());
        for r in 0..mat.rows() {
            let row: Vec<String> = mat.row(r).iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    };
    let vector = |out: &mut String, name: &str, v: &[f64]| {
        let _ = writeln!(out, "#vector {name} {}", v.len());
        let row: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    };
    tensor(&mut out, "embedding", &m.params.embedding);
    for (i, d) in m.params.directions.iter().enumerate() {
        let dir = direction_name(i);
        for (name, mat) in [
            ("w_forget", &d.w_forget),
            ("w_input", &d.w_input),
            ("w_candidate", &d.w_candidate),
            ("w_output", &d.w_output),
        ] {
            tensor(&mut out, &format!("{dir}.{name}"), mat);
        }
        for (name, b) in [
            ("b_forget", &d.b_forget),
            ("b_input", &d.b_input),
            ("b_candidate", &d.b_candidate),
            ("b_output", &d.b_output),
        ] {
            vector(&mut out, &format!("{dir}.{name}"), b);
        }
    }
    vector(&mut out, "dense_weights", &m.params.dense_w);
    let _ = writeln!(out, "#scalar dense_bias");
    let _ = writeln!(out, "{}", fmt_f64(m.params.dense_b));
    let _ = writeln!(out, "#end");
    out
}

/// Saves a model atomically.
pub fn save_model(m: &SavedModel, path: &Path) -> Result<()> {
    atomic_write(path, &render_model(m))
}

struct LineCursor {
    origin: String,
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl LineCursor {
    fn next(&mut self) -> Result<(usize, &str)> {
        let item = self
            .lines
            .get(self.pos)
            .ok_or_else(|| parse_err(&self.origin, 0, "unexpected end of file"))?;
        self.pos += 1;
        Ok((item.0, item.1.as_str()))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        parse_err(&self.origin, line, msg)
    }
}

fn parse_f64(cur: &LineCursor, ln: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| cur.err(ln, format!("bad float {tok:?}")))
}

fn parse_floats(cur: &LineCursor, ln: usize, line: &str, expect: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| parse_f64(cur, ln, t))
        .collect::<Result<_>>()?;
    if vals.len() != expect {
        return Err(cur.err(ln, format!("expected {expect} values, got {}", vals.len())));
    }
    Ok(vals)
}

fn read_tensor(cur: &mut LineCursor, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let (ln, header) = cur.next()?;
    let header = header.to_string();
    let expect = format!("#tensor {name} {rows} {cols}");
    if header != expect {
        return Err(cur.err(ln, format!("expected {expect:?}, got {header:?}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (ln, line) = cur.next()?;
        let line = line.to_string();
        data.extend(parse_floats(cur, ln, &line, cols)?);
    }
    Matrix::from_vec(rows, cols, data)
}

fn read_vector(cur: &mut LineCursor, name: &str, len: usize) -> Result<Vec<f64>> {
    let (ln, header) = cur.next()?;
    let header = header.to_string();
    let expect = format!("#vector {name} {len}");
    if header != expect {
        return Err(cur.err(ln, format!("expected {expect:?}, got {header:?}")));
    }
    let (ln, line) = cur.next()?;
    let line = line.to_string();
    parse_floats(cur, ln, &line, len)
}

/// Parses a model from a reader; `origin` names the source in errors.
pub fn read_model(reader: impl Read, origin: &str) -> Result<SavedModel> {
    let buf = BufReader::new(reader);
    let mut lines = Vec::new();
    for (idx, line) in buf.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((idx + 1, line));
        }
    }
    let mut cur = LineCursor {
        origin: origin.to_string(),
        lines,
        pos: 0,
    };
    let (ln, magic) = cur.next()?;
    let expected = format!("{MODEL_MAGIC} {FORMAT_VERSION}");
    if magic != expected {
        if magic.starts_with(MODEL_MAGIC) {
            return Err(Error::FormatVersion {
                found: magic.to_string(),
                expected,
            });
        }
        return Err(cur.err(ln, format!("expected {expected:?} header")));
    }

    let (ln, hp_line) = cur.next()?;
    let hp_line = hp_line.to_string();
    let body = hp_line
        .strip_prefix("#hyperparams ")
        .ok_or_else(|| cur.err(ln, "expected #hyperparams line"))?;
    let mut kv = std::collections::HashMap::new();
    for pair in body.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| cur.err(ln, format!("bad key=value pair {pair:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        kv.get(k)
            .cloned()
            .ok_or_else(|| cur.err(ln, format!("missing hyper-parameter {k:?}")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| cur.err(ln, format!("bad integer for {k:?}")))
    };
    let hp = HyperParams {
        embedding_size: parse_usize("embedding")?,
        lstm_size: parse_usize("lstm")?,
        lstm_type: match get("type")?.as_str() {
            "standard" => LstmType::Standard,
            "bidirectional" => LstmType::Bidirectional,
            other => return Err(cur.err(ln, format!("unknown LSTM type {other:?}"))),
        },
        learning_rate: parse_f64(&cur, ln, &get("lr")?)?,
        dropout_rate: parse_f64(&cur, ln, &get("dropout")?)?,
        batch_size: parse_usize("batch")?,
        max_epochs: parse_usize("epochs")?,
        optimizer: match get("optimizer")?.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            other => return Err(cur.err(ln, format!("unknown optimizer {other:?}"))),
        },
        seed: get("seed")?
            .parse()
            .map_err(|_| cur.err(ln, "bad integer for \"seed\""))?,
    };

    let (ln, vocab_line) = cur.next()?;
    let vocab_line = vocab_line.to_string();
    let names: Vec<&str> = vocab_line
        .strip_prefix("#vocab")
        .ok_or_else(|| cur.err(ln, "expected #vocab line"))?
        .split_whitespace()
        .collect();
    let vocab = Vocab::new(names).map_err(|e| cur.err(ln, e.to_string()))?;

    let l = hp.lstm_size;
    let joint = l + hp.embedding_size;
    let embedding = read_tensor(&mut cur, "embedding", vocab.len() + 1, hp.embedding_size)?;
    let mut directions = Vec::new();
    for i in 0..hp.lstm_type.num_directions() {
        let dir = direction_name(i);
        let w_forget = read_tensor(&mut cur, &format!("{dir}.w_forget"), l, joint)?;
        let w_input = read_tensor(&mut cur, &format!("{dir}.w_input"), l, joint)?;
        let w_candidate = read_tensor(&mut cur, &format!("{dir}.w_candidate"), l, joint)?;
        let w_output = read_tensor(&mut cur, &format!("{dir}.w_output"), l, joint)?;
        let b_forget = read_vector(&mut cur, &format!("{dir}.b_forget"), l)?;
        let b_input = read_vector(&mut cur, &format!("{dir}.b_input"), l)?;
        let b_candidate = read_vector(&mut cur, &format!("{dir}.b_candidate"), l)?;
        let b_output = read_vector(&mut cur, &format!("{dir}.b_output"), l)?;
        directions.push(DirectionParams {
            w_forget,
            w_input,
            w_candidate,
            w_output,
            b_forget,
            b_input,
            b_candidate,
            b_output,
        });
    }
    let dense_w = read_vector(&mut cur, "dense_weights", l * hp.lstm_type.num_directions())?;
    let (ln, scalar_header) = cur.next()?;
    if scalar_header != "#scalar dense_bias" {
        return Err(cur.err(ln, "expected \"#scalar dense_bias\""));
    }
    let (ln, bias_line) = cur.next()?;
    let bias_line = bias_line.to_string();
    let dense_b = parse_floats(&cur, ln, &bias_line, 1)?[0];
    let (ln, end) = cur.next()?;
    if end != "#end" {
        return Err(cur.err(ln, "expected \"#end\" footer"));
    }
    let params = ModelParams {
        embedding,
        directions,
        dense_w,
        dense_b,
    };
    if !params.all_finite() {
        return Err(cur.err(0, "model contains non-finite values"));
    }
    Ok(SavedModel { hp, vocab, params })
}

/// Loads a model file.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    read_model(open(path)?, &path.display().to_string())
}
