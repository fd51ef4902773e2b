use std::collections::HashMap;

use super::{route, shifted_outcomes, Assignment, CutMenu, OptConfig, OptError, TreeSkeleton};
use crate::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    /// `f64::INFINITY` when unbounded.
    pub upper: f64,
}

/// What a variable stands for. Nodes and leaves are heap ids, samples and
/// cut indices 0-based, treatments 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarMeaning {
    /// Weight of cut `cut` at internal node `node`.
    Gamma { node: usize, cut: usize },
    /// Bit `bit` of the binary code of the chosen cut at `node`.
    Delta { node: usize, bit: usize },
    /// Sample `sample` lands in `leaf`.
    W { sample: usize, leaf: usize },
    /// `leaf` prescribes `treatment`.
    Lambda { leaf: usize, treatment: usize },
    /// Mean shifted outcome of the prescribed treatment in `leaf`.
    Mu { leaf: usize },
    /// `mu[leaf] * w[sample, leaf]`.
    Nu { sample: usize, leaf: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// `(variable index, coefficient)`, no zeros, no repeats.
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A minimization MIP with a registry of variable meanings.
#[derive(Debug, Clone, PartialEq)]
pub struct MipModel {
    pub name: String,
    pub variables: Vec<Variable>,
    /// Parallel to `variables`.
    pub meanings: Vec<VarMeaning>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    /// Big-M used in the treatment/mean consistency rows.
    pub big_m: f64,
}

impl MipModel {
    pub fn binary_count(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, a)| a * values[j]).sum()
    }
}

/// Bits needed to encode `k` choices.
pub(crate) fn code_bits(k: usize) -> usize {
    (usize::BITS - (k.max(1) - 1).leading_zeros()) as usize
}

struct Builder {
    model: MipModel,
}

impl Builder {
    fn var(&mut self, name: String, kind: VarKind, lower: f64, upper: f64, meaning: VarMeaning) -> usize {
        self.model.variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        self.model.meanings.push(meaning);
        self.model.variables.len() - 1
    }

    fn row(&mut self, name: String, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, a) in terms {
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some((_, b)) => *b += a,
                None => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.model.constraints.push(Constraint {
            name,
            terms: merged,
            sense,
            rhs,
        });
    }
}

/// Emits the depth-`delta` tree problem over `menu` as a MIP in shifted
/// outcomes `Ybar = Y - min Y`:
///
/// * cut weights `gamma[p]` in `[0, 1]`, one per menu entry, summing to 1
///   and tied to binary codes `delta[p]` by `sum_c bit_b(c) gamma[p, c] = delta[p, b]`;
/// * routing weights `w[i, p]` in `[0, 1]` squeezed between the ancestors'
///   branch indicators `chi = sum_c 1[x_i,f(c) <= theta(c)] gamma[q, c]`:
///   `w + R chi <= (1 + R) / 2` per ancestor and
///   `w + sum_q R chi >= 1 - sum_q (1 - R) / 2`, with `R = +1` for a right turn;
/// * `sum_{T_i = t} w[i, p] >= n_min_leaf` for every leaf and treatment;
/// * `nu[i, p] = mu[p] w[i, p]` linearized with `Ybar_max`;
/// * one binary `lambda[p, t]` per leaf, exactly one set, and
///   `|sum_{T_i = t} (nu - Ybar_i w)| <= M (1 - lambda[p, t])` with
///   `M = Ybar_max (max_t n_t - leaves * n_min_leaf)`;
/// * objective `sum nu`.
pub fn build_mip(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    config: &OptConfig,
) -> Result<MipModel, OptError> {
    let n = ds.n();
    let m = ds.m();
    let leaves = skeleton.leaf_count();
    let n_min = config.n_min_leaf;
    if n < leaves * m * n_min {
        return Err(OptError::Infeasible(format!(
            "n = {n} < leaves * m * n_min_leaf = {}",
            leaves * m * n_min
        )));
    }
    if menu.nodes() != skeleton.internal_count() {
        return Err(OptError::Config("menu does not match skeleton".into()));
    }
    let (ybar, _) = shifted_outcomes(ds);
    let ymax = ybar.iter().copied().fold(0.0, f64::max);
    let n_max = ds.treatment_counts().into_iter().max().unwrap_or(0);
    let big_m = ymax * (n_max as f64 - (leaves * n_min) as f64);

    let mut b = Builder {
        model: MipModel {
            name: format!("opt_d{}", skeleton.depth()),
            variables: Vec::new(),
            meanings: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            big_m,
        },
    };

    let mut gamma: HashMap<usize, Vec<usize>> = HashMap::new();
    for p in skeleton.internal() {
        let g = (0..menu.cuts(p).len())
            .map(|c| {
                b.var(
                    format!("gamma_{p}_{c}"),
                    VarKind::Continuous,
                    0.0,
                    1.0,
                    VarMeaning::Gamma { node: p, cut: c },
                )
            })
            .collect();
        gamma.insert(p, g);
    }
    let mut delta: HashMap<usize, Vec<usize>> = HashMap::new();
    for p in skeleton.internal() {
        let k = code_bits(menu.cuts(p).len());
        let d = (0..k)
            .map(|bit| {
                b.var(
                    format!("delta_{p}_{bit}"),
                    VarKind::Binary,
                    0.0,
                    1.0,
                    VarMeaning::Delta { node: p, bit },
                )
            })
            .collect();
        delta.insert(p, d);
    }
    let mut w = vec![vec![0usize; leaves]; n];
    for (i, row) in w.iter_mut().enumerate() {
        for p in skeleton.leaves() {
            row[p - leaves] = b.var(
                format!("w_{i}_{p}"),
                VarKind::Continuous,
                0.0,
                1.0,
                VarMeaning::W { sample: i, leaf: p },
            );
        }
    }
    let mut lambda = vec![vec![0usize; m]; leaves];
    for p in skeleton.leaves() {
        for t in 1..=m {
            lambda[p - leaves][t - 1] = b.var(
                format!("lambda_{p}_{t}"),
                VarKind::Binary,
                0.0,
                1.0,
                VarMeaning::Lambda {
                    leaf: p,
                    treatment: t,
                },
            );
        }
    }
    let mu: Vec<usize> = skeleton
        .leaves()
        .map(|p| {
            b.var(
                format!("mu_{p}"),
                VarKind::Continuous,
                0.0,
                f64::INFINITY,
                VarMeaning::Mu { leaf: p },
            )
        })
        .collect();
    let mut nu = vec![vec![0usize; leaves]; n];
    for (i, row) in nu.iter_mut().enumerate() {
        for p in skeleton.leaves() {
            row[p - leaves] = b.var(
                format!("nu_{i}_{p}"),
                VarKind::Continuous,
                0.0,
                f64::INFINITY,
                VarMeaning::Nu { sample: i, leaf: p },
            );
        }
    }

    // Cut selection.
    for p in skeleton.internal() {
        let g = &gamma[&p];
        b.row(
            format!("pick_cut_{p}"),
            g.iter().map(|&j| (j, 1.0)).collect(),
            Sense::Eq,
            1.0,
        );
        for (bit, &dj) in delta[&p].iter().enumerate() {
            let mut terms: Vec<(usize, f64)> = g
                .iter()
                .enumerate()
                .filter(|(c, _)| (c >> bit) & 1 == 1)
                .map(|(_, &j)| (j, 1.0))
                .collect();
            terms.push((dj, -1.0));
            b.row(format!("code_{p}_{bit}"), terms, Sense::Eq, 0.0);
        }
    }

    // chi_i(gamma_q) as a term list.
    let chi = |i: usize, q: usize, scale: f64| -> Vec<(usize, f64)> {
        menu.cuts(q)
            .iter()
            .zip(&gamma[&q])
            .filter(|(cut, _)| cut.goes_left(ds.row(i)))
            .map(|(_, &j)| (j, scale))
            .collect()
    };

    // Routing.
    for i in 0..n {
        for p in skeleton.leaves() {
            let path = skeleton.ancestors(p);
            for &(q, r) in &path {
                let r = f64::from(r);
                let mut terms = vec![(w[i][p - leaves], 1.0)];
                terms.extend(chi(i, q, r));
                b.row(format!("route_{i}_{p}_{q}"), terms, Sense::Le, (1.0 + r) / 2.0);
            }
            let mut terms = vec![(w[i][p - leaves], 1.0)];
            let mut rhs = 1.0;
            for &(q, r) in &path {
                let r = f64::from(r);
                terms.extend(chi(i, q, r));
                rhs -= (1.0 - r) / 2.0;
            }
            b.row(format!("reach_{i}_{p}"), terms, Sense::Ge, rhs);
        }
    }

    // Leaf occupancy.
    for p in skeleton.leaves() {
        for t in 1..=m {
            let terms = (0..n)
                .filter(|&i| ds.treatment(i) == t)
                .map(|i| (w[i][p - leaves], 1.0))
                .collect();
            b.row(format!("occupy_{p}_{t}"), terms, Sense::Ge, n_min as f64);
        }
    }

    // nu = mu * w.
    for i in 0..n {
        for p in skeleton.leaves() {
            let (v, wv, mv) = (nu[i][p - leaves], w[i][p - leaves], mu[p - leaves]);
            b.row(
                format!("nu_w_{i}_{p}"),
                vec![(v, 1.0), (wv, -ymax)],
                Sense::Le,
                0.0,
            );
            b.row(
                format!("nu_mu_{i}_{p}"),
                vec![(v, 1.0), (mv, -1.0)],
                Sense::Le,
                0.0,
            );
            b.row(
                format!("nu_lo_{i}_{p}"),
                vec![(v, 1.0), (mv, -1.0), (wv, -ymax)],
                Sense::Ge,
                -ymax,
            );
        }
    }

    // Treatment choice and consistency with mu.
    for p in skeleton.leaves() {
        b.row(
            format!("pick_t_{p}"),
            lambda[p - leaves].iter().map(|&j| (j, 1.0)).collect(),
            Sense::Eq,
            1.0,
        );
    }
    for p in skeleton.leaves() {
        for t in 1..=m {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for i in (0..n).filter(|&i| ds.treatment(i) == t) {
                terms.push((nu[i][p - leaves], 1.0));
                terms.push((w[i][p - leaves], -ybar[i]));
            }
            let lj = lambda[p - leaves][t - 1];
            let mut up = terms.clone();
            up.push((lj, big_m));
            b.row(format!("mean_up_{p}_{t}"), up, Sense::Le, big_m);
            terms.push((lj, -big_m));
            b.row(format!("mean_lo_{p}_{t}"), terms, Sense::Ge, -big_m);
        }
    }

    b.model.objective = nu.iter().flatten().map(|&j| (j, 1.0)).collect();
    Ok(b.model)
}

/// Variable values implied by a tree: one-hot `gamma` with its binary code,
/// 0/1 routing weights, one-hot `lambda`, `mu` the prescribed arm's mean
/// shifted outcome in each leaf (0 for an empty arm), and `nu = mu * w`.
pub fn induced_solution(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    assignment: &Assignment,
    model: &MipModel,
) -> Vec<f64> {
    let (ybar, _) = shifted_outcomes(ds);
    let leaf_of: Vec<usize> = ds
        .rows()
        .map(|x| route(skeleton, menu, &assignment.cuts, x))
        .collect();
    let leaves = skeleton.leaf_count();
    let mut mu = vec![0.0; leaves];
    for p in skeleton.leaves() {
        let t = assignment.treatments[p - leaves];
        let (mut sum, mut count) = (0.0, 0usize);
        for i in (0..ds.n()).filter(|&i| leaf_of[i] == p && ds.treatment(i) == t) {
            sum += ybar[i];
            count += 1;
        }
        if count > 0 {
            mu[p - leaves] = sum / count as f64;
        }
    }
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    model
        .meanings
        .iter()
        .map(|meaning| match *meaning {
            VarMeaning::Gamma { node, cut } => indicator(assignment.cuts[node - 1] == cut),
            VarMeaning::Delta { node, bit } => indicator((assignment.cuts[node - 1] >> bit) & 1 == 1),
            VarMeaning::W { sample, leaf } => indicator(leaf_of[sample] == leaf),
            VarMeaning::Lambda { leaf, treatment } => {
                indicator(assignment.treatments[leaf - leaves] == treatment)
            }
            VarMeaning::Mu { leaf } => mu[leaf - leaves],
            VarMeaning::Nu { sample, leaf } => indicator(leaf_of[sample] == leaf) * mu[leaf - leaves],
        })
        .collect()
}

/// A bound, integrality, or row violated by more than the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub name: String,
    /// Amount by which the condition is missed.
    pub excess: f64,
}

/// Every bound, integrality, and row condition of `model` missed by more
/// than `tol` at `values`.
pub fn check_solution(model: &MipModel, values: &[f64], tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (v, &x) in model.variables.iter().zip(values) {
        let excess = (v.lower - x).max(x - v.upper).max(0.0);
        if excess > tol || !x.is_finite() {
            out.push(Violation {
                name: v.name.clone(),
                excess,
            });
        }
        if v.kind == VarKind::Binary {
            let gap = (x - x.round()).abs();
            if gap > tol {
                out.push(Violation {
                    name: format!("{}:integrality", v.name),
                    excess: gap,
                });
            }
        }
    }
    for c in &model.constraints {
        let lhs: f64 = c.terms.iter().map(|&(j, a)| a * values[j]).sum();
        let excess = match c.sense {
            Sense::Le => lhs - c.rhs,
            Sense::Ge => c.rhs - lhs,
            Sense::Eq => (lhs - c.rhs).abs(),
        };
        if excess > tol {
            out.push(Violation {
                name: c.name.clone(),
                excess,
            });
        }
    }
    out
}

/// Orders a name-to-value map by the model's variables. Unknown names and
/// missing variables are errors.
pub fn values_from_names(model: &MipModel, map: &HashMap<String, f64>) -> Result<Vec<f64>, OptError> {
    let index: HashMap<&str, usize> = model
        .variables
        .iter()
        .enumerate()
        .map(|(j, v)| (v.name.as_str(), j))
        .collect();
    if let Some(name) = map.keys().find(|k| !index.contains_key(k.as_str())) {
        return Err(OptError::UnknownVariable(name.clone()));
    }
    model
        .variables
        .iter()
        .map(|v| {
            map.get(&v.name)
                .copied()
                .ok_or_else(|| OptError::MissingVariable(v.name.clone()))
        })
        .collect()
}
