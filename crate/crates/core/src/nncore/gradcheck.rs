use super::{Graph, Param, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel_error={:.3e} tol={:.0e} checked={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.checked
        )?;
        if let Some((name, i)) = &self.worst {
            let (a, n) = self.worst_values;
            write!(f, " worst={name}[{i}] analytic={a:.6e} numeric={n:.6e}")?;
        }
        Ok(())
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central finite differences of
/// `eval` with respect to every element of every trainable parameter.
pub fn compare_gradients(
    params: &mut [Param],
    analytic: &[Vec<f64>],
    mut eval: impl FnMut(&[Param]) -> Result<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        tolerance,
    };
    for pi in 0..params.len() {
        if !params[pi].trainable {
            continue;
        }
        #[allow(clippy::needless_range_loop)]
        for i in 0..params[pi].value.len() {
            let orig = params[pi].value.data()[i];
            params[pi].value.data_mut()[i] = orig + FD_STEP;
            let plus = eval(params)?;
            params[pi].value.data_mut()[i] = orig - FD_STEP;
            let minus = eval(params)?;
            params[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_error(analytic[pi][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params[pi].name.clone(), i));
                report.worst_values = (analytic[pi][i], numeric);
            }
        }
    }
    Ok(report)
}

/// Gradient check for a scalar function built on a [`Graph`]: `build`
/// receives one leaf per parameter (in order) and returns the scalar output.
pub fn gradient_check<F>(params: &mut [Param], build: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let run = |ps: &[Param]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps
            .iter()
            .map(|p| {
                if p.trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = run(params)?;
    let grads = g.backward(out);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| {
            grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.value.len()])
        })
        .collect();
    compare_gradients(
        params,
        &analytic,
        |ps| {
            let (g, _, out) = run(ps)?;
            Ok(g.value(out).item())
        },
        tolerance,
    )
}

/// Deterministic pseudo-random tensor for tests and gradient checks.
pub(crate) fn test_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}
