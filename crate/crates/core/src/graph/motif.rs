//! Benzene-NO₂ detection and the Mutag₀ sub-dataset filter.

use std::collections::BTreeSet;

use super::{canonical, Dataset, Edge, Graph, GraphError, Task};

/// One-hot feature columns for the atoms the motif needs, and the class id
/// marking mutagenic molecules. Defaults follow the 14-species
/// Mutagenicity encoding (C=0, O=1, N=4; mutagen = class 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomEncoding {
    pub carbon: usize,
    pub nitrogen: usize,
    pub oxygen: usize,
    pub mutagenic_label: usize,
}

impl Default for AtomEncoding {
    fn default() -> Self {
        Self {
            carbon: 0,
            nitrogen: 4,
            oxygen: 1,
            mutagenic_label: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Atom {
    C,
    N,
    O,
}

// six ring carbons, the nitro nitrogen, two oxygens
const PATTERN: [Atom; 9] = [
    Atom::C,
    Atom::C,
    Atom::C,
    Atom::C,
    Atom::C,
    Atom::C,
    Atom::N,
    Atom::O,
    Atom::O,
];
const PATTERN_EDGES: [Edge; 9] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (4, 5),
    (0, 5),
    (0, 6),
    (6, 7),
    (6, 8),
];

/// Decodes the species of every atom from one-hot features.
fn atom_species(g: &Graph) -> Result<Vec<usize>, GraphError> {
    let x = g.features();
    (0..g.num_nodes())
        .map(|i| {
            let row = x.row(i);
            let hot: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, _)| k)
                .collect();
            match hot.as_slice() {
                [k] if row[*k] == 1.0 => Ok(*k),
                _ => Err(GraphError::Usage(format!(
                    "atom {i} is not one-hot encoded; the filter needs atom-species features"
                ))),
            }
        })
        .collect()
}

fn matches_atom(species: usize, atom: Atom, enc: &AtomEncoding) -> bool {
    match atom {
        Atom::C => species == enc.carbon,
        Atom::N => species == enc.nitrogen,
        Atom::O => species == enc.oxygen,
    }
}

/// Every embedding of benzene-NO₂ in `g`, as the union of matched edges.
/// Bond types are not consulted. Empty when the group is absent.
pub fn benzene_no2_edges(g: &Graph, enc: &AtomEncoding) -> Result<Vec<Edge>, GraphError> {
    let species = atom_species(g)?;
    let adj = g.neighbors();
    let mut assignment: Vec<usize> = Vec::with_capacity(PATTERN.len());
    let mut found = BTreeSet::new();
    extend(&species, &adj, enc, &mut assignment, &mut found);
    Ok(found.into_iter().collect())
}

/// Depth-first extension over pattern positions in order. Every pattern
/// node after the first is adjacent to an earlier one, so candidates come
/// from the neighbor list of that anchor.
fn extend(
    species: &[usize],
    adj: &[Vec<usize>],
    enc: &AtomEncoding,
    assignment: &mut Vec<usize>,
    found: &mut BTreeSet<Edge>,
) {
    let pos = assignment.len();
    if pos == PATTERN.len() {
        for &(a, b) in &PATTERN_EDGES {
            found.insert(canonical(assignment[a], assignment[b]));
        }
        return;
    }
    let candidates: Vec<usize> = match PATTERN_EDGES
        .iter()
        .find(|&&(a, b)| b == pos && a < pos)
        .map(|&(a, _)| a)
    {
        Some(anchor) => adj[assignment[anchor]].clone(),
        None => (0..species.len()).collect(),
    };
    for cand in candidates {
        if !matches_atom(species[cand], PATTERN[pos], enc) || assignment.contains(&cand) {
            continue;
        }
        let consistent = PATTERN_EDGES
            .iter()
            .filter(|&&(a, b)| b == pos && a < pos)
            .all(|&(a, _)| adj[assignment[a]].binary_search(&cand).is_ok());
        if !consistent {
            continue;
        }
        assignment.push(cand);
        extend(species, adj, enc, assignment, found);
        assignment.pop();
    }
}

/// Keeps mutagens that contain benzene-NO₂ (annotated with its edges as
/// ground truth) and non-mutagens that do not. Split membership is kept.
pub fn filter_mutag0(ds: &Dataset, enc: &AtomEncoding) -> Result<Dataset, GraphError> {
    if ds.task != Task::Graph {
        return Err(GraphError::Usage("the molecule filter needs a graph-classification dataset".into()));
    }
    for (name, col) in [("carbon", enc.carbon), ("nitrogen", enc.nitrogen), ("oxygen", enc.oxygen)] {
        if col >= ds.feature_dim {
            return Err(GraphError::Usage(format!(
                "{name} column {col} outside feature_dim {}",
                ds.feature_dim
            )));
        }
    }
    let mut kept = Vec::new();
    let mut new_id = vec![None; ds.graphs.len()];
    for (gi, g) in ds.graphs.iter().enumerate() {
        let motif = benzene_no2_edges(g, enc)?;
        let mutagenic = g.label() == Some(enc.mutagenic_label);
        let keep = if mutagenic { !motif.is_empty() } else { motif.is_empty() };
        if !keep {
            continue;
        }
        let g = if mutagenic {
            g.clone().with_ground_truth(&motif)?
        } else {
            g.clone()
        };
        new_id[gi] = Some(kept.len());
        kept.push(g);
    }
    let remap = |idx: &[usize]| idx.iter().filter_map(|&i| new_id[i]).collect::<Vec<_>>();
    let out = Dataset {
        task: Task::Graph,
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
        train_idx: remap(&ds.train_idx),
        test_idx: remap(&ds.test_idx),
        graphs: kept,
        meta: ds.meta.clone(),
    };
    out.validate()?;
    Ok(out)
}
