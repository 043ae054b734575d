//! SNR grid and method list parsing.

use hblab_core::eval::Method;
use hblab_core::Error;

/// `start:step:stop` (inclusive) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Config(format!("bad SNR grid `{text}` (expected start:step:stop or a comma list)"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            if n > 10_000 {
                return Err(bad());
            }
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        [_] => text.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() || grid.iter().any(|v: &f64| !v.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

pub fn parse_methods(text: &str) -> Result<Vec<Method>, Error> {
    let mut out = Vec::new();
    for m in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = m.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    Ok(out)
}
