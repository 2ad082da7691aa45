//! Closed-loop hybrid simulation and its diagnostics.

use std::io::Write;
use std::path::Path;

use crate::manifold::{ds_value, DsIndicator};
use crate::training::{ResolvedModel, SurrogateModel};

/// Default blow-up ceiling relative to the initial state norm.
pub const DEFAULT_CEILING: f64 = 1e6;
/// Default stopping-time threshold.
pub const DEFAULT_K: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimRun {
    pub states: Vec<Vec<f64>>,
    pub rel_error: Vec<f64>,
    pub ds_curve: Vec<f64>,
    /// Index of the first step that produced a non-finite or out-of-range state.
    pub blew_up_at: Option<usize>,
    /// Set when some truth state had zero norm and the absolute error was reported instead.
    pub absolute_fallback: bool,
}

impl SimRun {
    pub fn final_rel_error(&self) -> f64 {
        if self.blew_up_at.is_some() {
            return f64::INFINITY;
        }
        self.rel_error.last().copied().unwrap_or(f64::NAN)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Iterates `u_{k+1} = step(u_k, φ(u_k, t_k), t_k)` for `n_steps` steps from `u0` at `t0`.
/// Stops early on a non-finite state, a norm above `ceiling · ‖u0‖`, or a resolved-solver
/// failure, recording the failing step.
pub fn run_hybrid(
    rm: &ResolvedModel,
    surrogate: &SurrogateModel,
    u0: &[f64],
    t0: f64,
    n_steps: usize,
    ceiling: f64,
) -> SimRun {
    let limit = ceiling * norm(u0).max(f64::MIN_POSITIVE);
    let dt = rm.dt();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(u0.to_vec());
    let mut blew_up_at = None;
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        let u = &states[k];
        let y = surrogate.predict(u, t);
        match rm.step(u, &y, t) {
            Ok(next) if next.iter().all(|v| v.is_finite()) && norm(&next) <= limit => states.push(next),
            _ => {
                blew_up_at = Some(k + 1);
                break;
            }
        }
    }
    SimRun {
        states,
        blew_up_at,
        ..Default::default()
    }
}

/// Fills `rel_error_t = ‖û_t − u_t‖/‖u_t‖` and `ds_t = F(û_t)`.
pub fn evaluate_run(mut run: SimRun, truth: &[Vec<f64>], ind: Option<&DsIndicator>) -> Result<SimRun, String> {
    if truth.len() < run.states.len() {
        return Err(format!(
            "truth has {} states but the run has {}",
            truth.len(),
            run.states.len()
        ));
    }
    run.rel_error.clear();
    run.absolute_fallback = false;
    for (s, u) in run.states.iter().zip(truth) {
        let err = s.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let n = norm(u);
        if n > 0.0 {
            run.rel_error.push(err / n);
        } else {
            run.absolute_fallback = true;
            run.rel_error.push(err);
        }
    }
    run.ds_curve = match ind {
        Some(ind) => run.states.iter().map(|s| ds_value(ind, s)).collect(),
        None => vec![0.0; run.states.len()],
    };
    Ok(run)
}

/// Last index of the prefix with `rel_error ≤ K`; 0 if the first entry already exceeds `K`.
pub fn stopping_time(rel_error: &[f64], k: f64) -> usize {
    let n = rel_error.iter().take_while(|&&e| e <= k).count();
    n.saturating_sub(1)
}

/// Spearman rank correlation with average ranks for ties; NaN if either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da * db).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// `step,rel_error,ds`.
pub fn write_run_csv(path: &Path, run: &SimRun) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,rel_error,ds")?;
    for (k, (e, d)) in run.rel_error.iter().zip(&run.ds_curve).enumerate() {
        writeln!(w, "{k},{e:e},{d:e}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::linear::{simulate_linear, toy_system, SimMode};

    #[test]
    fn exact_linear_surrogate_matches_simulation() {
        let sys = toy_system(3);
        let s = SurrogateModel::from_matrix(&sys.c_star).unwrap();
        let rm = ResolvedModel::Linear { sys: sys.clone(), mode: SimMode::DiscreteMap };
        let run = run_hybrid(&rm, &s, &[0.7, 0.01], 0.0, 30, DEFAULT_CEILING);
        let sim = simulate_linear(&sys, &sys.c_star, &[0.7, 0.01], 30, SimMode::DiscreteMap).unwrap();
        assert_eq!(run.states, sim);
    }

    #[test]
    fn blow_up_is_recorded() {
        let sys = toy_system(0);
        let c = DenseMatrix::from_diag(&[50.0, 50.0]);
        let s = SurrogateModel::from_matrix(&c).unwrap();
        let rm = ResolvedModel::Linear { sys, mode: SimMode::DiscreteMap };
        let run = run_hybrid(&rm, &s, &[1.0, 1.0], 0.0, 100, DEFAULT_CEILING);
        let at = run.blew_up_at.unwrap();
        assert_eq!(run.states.len(), at);
        assert!(at < 10);
        assert!(run.final_rel_error().is_infinite());
    }

    #[test]
    fn evaluation_of_exact_run() {
        let truth = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let run = SimRun { states: truth.clone(), ..Default::default() };
        let ev = evaluate_run(run, &truth, None).unwrap();
        assert_eq!(ev.rel_error, vec![0.0, 0.0]);
        let short = evaluate_run(SimRun { states: truth.clone(), ..Default::default() }, &truth[..1], None);
        assert!(short.is_err());
    }

    #[test]
    fn zero_truth_falls_back_to_absolute() {
        let run = SimRun { states: vec![vec![3.0, 4.0]], ..Default::default() };
        let ev = evaluate_run(run, &[vec![0.0, 0.0]], None).unwrap();
        assert!(ev.absolute_fallback);
        assert_eq!(ev.rel_error, vec![5.0]);
    }

    #[test]
    fn stopping_time_examples() {
        assert_eq!(stopping_time(&[0.1, 0.5, 1.2], 1.0), 1);
        assert_eq!(stopping_time(&[0.1, 0.5, 0.2], 1.0), 2);
        assert_eq!(stopping_time(&[2.0, 0.5], 1.0), 0);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]) - 0.9486832980505138).abs() < 1e-12);
    }
}
