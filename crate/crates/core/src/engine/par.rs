//! Row-level kernels with a rayon path for large inputs. Without the
//! `parallel` feature, or below the threshold, they run sequentially.

use std::borrow::Cow;

use indexmap::IndexMap;

use crate::error::Result;
use crate::expr::ScalarExpr;
use crate::zset::Tuple;

use super::query::{Acc, Grouping, Row};
use super::ExecOptions;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
fn use_parallel(n: usize, opts: ExecOptions) -> bool {
    opts.parallel && n >= opts.parallel_threshold
}

pub(crate) fn filter<'a>(rows: Vec<Row<'a>>, pred: &ScalarExpr, #[allow(unused_variables)] opts: ExecOptions) -> Result<Vec<Row<'a>>> {
    let keep = |r: &Row<'a>| pred.eval_predicate(&r.0);
    #[cfg(feature = "parallel")]
    if use_parallel(rows.len(), opts) {
        let flags: Vec<bool> = rows.par_iter().map(keep).collect::<Result<_>>()?;
        return Ok(rows.into_iter().zip(flags).filter(|(_, f)| *f).map(|(r, _)| r).collect());
    }
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if keep(&r)? {
            out.push(r);
        }
    }
    Ok(out)
}

pub(crate) fn project<'a>(rows: Vec<Row<'a>>, exprs: &[ScalarExpr], #[allow(unused_variables)] opts: ExecOptions) -> Result<Vec<Row<'a>>> {
    let one = |r: &Row<'a>| -> Result<Row<'a>> {
        let t: Tuple = exprs.iter().map(|e| e.eval(&r.0)).collect::<Result<_>>()?;
        Ok((Cow::Owned(t), r.1))
    };
    #[cfg(feature = "parallel")]
    if use_parallel(rows.len(), opts) {
        return rows.par_iter().map(one).collect();
    }
    rows.iter().map(one).collect()
}

type Groups = IndexMap<Tuple, Vec<Acc>>;

fn group_chunk(rows: &[Row<'_>], g: &Grouping, init: &[Acc]) -> Result<Groups> {
    let mut out: Groups = IndexMap::new();
    for (row, c) in rows {
        let key: Tuple = g.keys.iter().map(|k| k.eval(row)).collect::<Result<_>>()?;
        let accs = out.entry(key).or_insert_with(|| init.to_vec());
        for (acc, (_, arg)) in accs.iter_mut().zip(&g.aggs) {
            let v = match arg {
                Some(a) => Some(a.eval(row)?),
                None => None,
            };
            acc.update(v, *c)?;
        }
    }
    Ok(out)
}

/// Groups in first-appearance order with their aggregate states.
pub(crate) fn group(rows: &[Row<'_>], g: &Grouping, init: &[Acc], #[allow(unused_variables)] opts: ExecOptions) -> Result<Groups> {
    #[cfg(feature = "parallel")]
    if use_parallel(rows.len(), opts) {
        let chunk = opts.parallel_threshold.max(1);
        let parts: Vec<Groups> = rows
            .par_chunks(chunk)
            .map(|c| group_chunk(c, g, init))
            .collect::<Result<_>>()?;
        let mut out: Groups = IndexMap::new();
        for part in parts {
            for (k, accs) in part {
                match out.get_mut(&k) {
                    Some(existing) => {
                        for (a, b) in existing.iter_mut().zip(&accs) {
                            a.merge(b)?;
                        }
                    }
                    None => {
                        out.insert(k, accs);
                    }
                }
            }
        }
        return Ok(out);
    }
    group_chunk(rows, g, init)
}
