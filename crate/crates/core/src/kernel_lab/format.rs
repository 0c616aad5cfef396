//! `AFM-SPECTRUM v1` text format.
//!
//! ```text
//! AFM-SPECTRUM v1 nkernels=<n> nfreq=<m> lambda_max=<Λ>
//! <ω> <α^(1)> … <α^(n)>        (m lines)
//! ```
//!
//! A file may hold several blocks back to back.

use std::io::{BufRead, Write};

use crate::error::{AfmError, Result};

use super::Spectrum;

const MAGIC: &str = "AFM-SPECTRUM";

pub fn write_spectrum<W: Write>(mut w: W, s: &Spectrum) -> Result<()> {
    writeln!(
        w,
        "{MAGIC} v1 nkernels={} nfreq={} lambda_max={:.16e}",
        s.nkernels(),
        s.nfreq(),
        s.lambda_max
    )?;
    for (j, f) in s.frequencies.iter().enumerate() {
        write!(w, "{f:.16e}")?;
        for row in &s.weights {
            write!(w, " {:.16e}", row[j])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_spectra<R: BufRead>(r: R) -> Result<Vec<Spectrum>> {
    let mut out = Vec::new();
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    while let Some((lineno, header)) = lines.next() {
        let header = header?;
        let (nk, nf, lm) = parse_header(&header, lineno)?;
        let mut freqs = Vec::with_capacity(nf);
        let mut weights = vec![Vec::with_capacity(nf); nk];
        for _ in 0..nf {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| AfmError::parse(lineno, "truncated spectrum block"))?;
            let line = line?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| AfmError::parse(ln, e.to_string()))?;
            if vals.len() != nk + 1 {
                return Err(AfmError::parse(
                    ln,
                    format!("expected {} values, got {}", nk + 1, vals.len()),
                ));
            }
            freqs.push(vals[0]);
            for (i, v) in vals[1..].iter().enumerate() {
                weights[i].push(*v);
            }
        }
        let s = Spectrum::new(freqs, weights, lm)
            .map_err(|e| AfmError::parse(lineno, e.to_string()))?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(AfmError::Format("no AFM-SPECTRUM block found".into()));
    }
    Ok(out)
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize, f64)> {
    let mut toks = line.split_whitespace();
    if toks.next() != Some(MAGIC) || toks.next() != Some("v1") {
        return Err(AfmError::parse(lineno, "expected `AFM-SPECTRUM v1` header"));
    }
    let (mut nk, mut nf, mut lm) = (None, None, None);
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| AfmError::parse(lineno, format!("bad field `{t}`")))?;
        let bad = || AfmError::parse(lineno, format!("bad value in `{t}`"));
        match k {
            "nkernels" => nk = Some(v.parse::<usize>().map_err(|_| bad())?),
            "nfreq" => nf = Some(v.parse::<usize>().map_err(|_| bad())?),
            "lambda_max" => lm = Some(v.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(AfmError::parse(lineno, format!("unknown field `{k}`"))),
        }
    }
    match (nk, nf, lm) {
        (Some(a), Some(b), Some(c)) if a > 0 && b > 0 => Ok((a, b, c)),
        _ => Err(AfmError::parse(lineno, "incomplete spectrum header")),
    }
}
