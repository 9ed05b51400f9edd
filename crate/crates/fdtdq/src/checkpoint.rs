//! Text checkpoints of a [`StaggeredState`].
//!
//! Every value is written with 17 significant digits, which round-trips
//! binary64 exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::stepper::{History, StaggeredState};

const MAGIC: &str = "fdtdq-checkpoint 1";

pub fn write_checkpoint<W: Write>(state: &StaggeredState, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "n {}", state.n)?;
    writeln!(w, "nodes {}", state.psi_r.len())?;
    let hanging = state.history.as_ref().map_or(0, |h| h.grad_r.len());
    writeln!(w, "history {}", u8::from(state.history.is_some()))?;
    writeln!(w, "hanging {hanging}")?;
    let mut block = |name: &str, xs: &[f64]| -> std::io::Result<()> {
        writeln!(w, "{name}")?;
        for x in xs {
            writeln!(w, "{x:.16e}")?;
        }
        Ok(())
    };
    block("psi_r", &state.psi_r)?;
    block("psi_i", &state.psi_i)?;
    if let Some(h) = &state.history {
        block("psi_r_prev", &h.psi_r)?;
        block("psi_i_prev", &h.psi_i)?;
        block("grad_r", &h.grad_r)?;
        block("grad_i", &h.grad_i)?;
    }
    Ok(())
}

struct Reader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Reader<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Checkpoint(format!("unexpected end of file at line {}", self.line))),
        }
    }

    fn field(&mut self, key: &str) -> Result<u64> {
        let l = self.next()?;
        let mut it = l.split_whitespace();
        match (it.next(), it.next().map(str::parse::<u64>)) {
            (Some(k), Some(Ok(v))) if k == key => Ok(v),
            _ => Err(Error::Checkpoint(format!("line {}: expected `{key} <integer>`", self.line))),
        }
    }

    fn block(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        if self.next()?.trim() != name {
            return Err(Error::Checkpoint(format!("line {}: expected block `{name}`", self.line)));
        }
        (0..len)
            .map(|_| {
                let l = self.next()?;
                l.trim().parse::<f64>().map_err(|e| Error::Checkpoint(format!("line {}: {e}", self.line)))
            })
            .collect()
    }
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<StaggeredState> {
    let mut rd = Reader { lines: r.lines(), line: 0 };
    if rd.next()?.trim() != MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let n = rd.field("n")?;
    let nodes = rd.field("nodes")? as usize;
    let has_history = rd.field("history")? != 0;
    let hanging = rd.field("hanging")? as usize;
    let psi_r = rd.block("psi_r", nodes)?;
    let psi_i = rd.block("psi_i", nodes)?;
    let history = if has_history {
        Some(History {
            psi_r: rd.block("psi_r_prev", nodes)?,
            psi_i: rd.block("psi_i_prev", nodes)?,
            grad_r: rd.block("grad_r", hanging)?,
            grad_i: rd.block("grad_i", hanging)?,
        })
    } else {
        None
    };
    Ok(StaggeredState { n, psi_r, psi_i, history })
}

pub fn save(path: impl AsRef<Path>, state: &StaggeredState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(state, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<StaggeredState> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.731).sin() * 10f64.powi(i % 40 - 20)).collect();
        let st = StaggeredState {
            n: 17,
            psi_r: xs.clone(),
            psi_i: xs.iter().map(|x| -x / 3.0).collect(),
            history: Some(History {
                psi_r: xs.iter().map(|x| x * std::f64::consts::PI).collect(),
                psi_i: xs.iter().map(|x| x / 7.0).collect(),
                grad_r: vec![1e-300, 2.5, f64::MIN_POSITIVE],
                grad_i: vec![-7.0, f64::MAX, 1.0 / 3.0],
            }),
        };
        let mut buf = Vec::new();
        write_checkpoint(&st, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, st);
        for (a, b) in back.psi_r.iter().zip(&st.psi_r) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let st = StaggeredState::new(vec![1.0, 2.0], vec![3.0, 4.0]);
        let mut buf = Vec::new();
        write_checkpoint(&st, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
