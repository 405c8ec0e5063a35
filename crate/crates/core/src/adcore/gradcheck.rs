use super::graph::{Graph, NodeId};
use super::rng::RngStream;
use super::store::ParameterStore;
use super::AdError;

/// Denominator floor for relative error, so entries whose true gradient is
/// essentially zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Cap on checked entries per parameter; `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Entry index where the worst error occurred.
    pub worst_entry: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic gradients of the scalar built by `build` against
/// central finite differences, parameter by parameter.
///
/// `build` is called once for the analytic pass and twice per checked
/// entry; any randomness it uses must be re-seeded inside the closure so
/// every evaluation sees the same dropout masks.
pub fn check_gradients<F>(
    store: &ParameterStore<f64>,
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AdError>
where
    F: for<'s> Fn(&mut Graph<'s, f64>) -> Result<NodeId, AdError>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        g.backward(out)?
    };
    let mut work = store.clone();
    let mut pick = RngStream::new(opts.seed);
    let mut params = Vec::new();
    for (name, grad) in &analytic {
        let entries = select_entries(grad.data(), opts.max_entries_per_param, &mut pick);
        let mut worst = 0.0f64;
        let mut worst_entry = 0;
        for &e in &entries {
            let original = work.get(name).unwrap().data()[e];
            work.get_mut(name).unwrap().data_mut()[e] = original + opts.step;
            let plus = eval(&work, &build)?;
            work.get_mut(name).unwrap().data_mut()[e] = original - opts.step;
            let minus = eval(&work, &build)?;
            work.get_mut(name).unwrap().data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(grad.data()[e], numeric);
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_entry = e;
            }
        }
        params.push(ParamCheck {
            name: name.clone(),
            checked: entries.len(),
            max_relative_error: worst,
            worst_entry,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}

fn eval<F>(store: &ParameterStore<f64>, build: &F) -> Result<f64, AdError>
where
    F: for<'s> Fn(&mut Graph<'s, f64>) -> Result<NodeId, AdError>,
{
    let mut g = Graph::new(store);
    let out = build(&mut g)?;
    g.scalar_value(out).ok_or(AdError::NotScalar {
        node: out.index(),
        shape: g.value(out).shape().to_vec(),
    })
}

/// Half the budget goes to entries with nonzero analytic gradient, the rest
/// is drawn uniformly, so sparse embedding gradients are actually exercised.
fn select_entries(grad: &[f64], cap: Option<usize>, rng: &mut RngStream) -> Vec<usize> {
    let n = grad.len();
    let cap = match cap {
        Some(c) if c < n => c,
        _ => return (0..n).collect(),
    };
    let mut nonzero: Vec<usize> = (0..n).filter(|&i| grad[i] != 0.0).collect();
    rng.shuffle(&mut nonzero);
    let mut chosen: Vec<usize> = nonzero.into_iter().take(cap / 2).collect();
    while chosen.len() < cap {
        let i = rng.index(n);
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen
}
