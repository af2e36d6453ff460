//! Per-template vectors (span2vec / log2vec) read out of a trained model:
//! pooled learned word vectors, nearest-neighbour queries and a
//! deterministic 2D principal-component projection for plotting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TemplateEncoder;
use crate::template_miner::{Modality, TemplateId, TemplateRecord};
use crate::vocab::{pad_template, PadStats, WordDictionary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub modality: Modality,
    pub vectors: BTreeMap<TemplateId, Vec<f64>>,
    /// Content hash of the checkpoint the vectors came from.
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// Pools the encoder's word vectors for every mined template.
pub fn extract(
    encoder: &TemplateEncoder,
    dict: &WordDictionary,
    templates: &[TemplateRecord],
    provenance: &str,
) -> Result<EmbeddingTable> {
    let mismatch = |what: String| Error::Data(format!("vocabulary mismatch: {what}"));
    if encoder.words.vocab() != dict.len() {
        return Err(mismatch(format!(
            "checkpoint has {} words, dictionary {}",
            encoder.words.vocab(),
            dict.len()
        )));
    }
    if encoder.bank.len() != templates.len() + 1 {
        return Err(mismatch(format!(
            "checkpoint has {} templates, dump {}",
            encoder.bank.len() - 1,
            templates.len()
        )));
    }
    let mut stats = PadStats::default();
    let mut vectors = BTreeMap::new();
    for t in templates {
        let padded = pad_template(t, dict, encoder.bank.max_len, &mut stats);
        if encoder.bank.rows.get(t.template_id.index()) != Some(&padded.word_indices) {
            return Err(mismatch(format!("template {} differs", t.template_id)));
        }
        vectors.insert(t.template_id, encoder.encode_template(&padded)?);
    }
    Ok(EmbeddingTable {
        modality: dict.modality(),
        vectors,
        provenance: provenance.to_string(),
    })
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
            }
        }
    }
}

/// The `n` closest other templates, ties by lower id.
pub fn nearest(
    table: &EmbeddingTable,
    id: TemplateId,
    n: usize,
    metric: Metric,
) -> Result<Vec<(TemplateId, f64)>> {
    let q = table
        .vectors
        .get(&id)
        .ok_or_else(|| Error::Data(format!("template {id} not in embedding table")))?;
    let mut out: Vec<(TemplateId, f64)> = table
        .vectors
        .iter()
        .filter(|(&other, _)| other != id)
        .map(|(&other, v)| (other, distance(q, v, metric)))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.truncate(n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSeparation {
    pub group: String,
    pub templates: usize,
    /// Mean distance over pairs inside the group.
    pub intra: f64,
    /// Mean distance from group members to templates of the other groups.
    pub inter: f64,
}

/// Intra- and inter-group mean distances for each group of template ids.
pub fn group_separation(
    table: &EmbeddingTable,
    groups: &BTreeMap<String, BTreeSet<TemplateId>>,
    metric: Metric,
) -> Result<Vec<GroupSeparation>> {
    let vec_of = |id: &TemplateId| {
        table
            .vectors
            .get(id)
            .ok_or_else(|| Error::Data(format!("template {id} not in embedding table")))
    };
    let mut out = Vec::with_capacity(groups.len());
    for (name, members) in groups {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "group {name} needs at least 2 templates"
            )));
        }
        let own: Vec<&Vec<f64>> = members.iter().map(vec_of).collect::<Result<_>>()?;
        let others: Vec<&Vec<f64>> = groups
            .iter()
            .filter(|(g, _)| *g != name)
            .flat_map(|(_, m)| m.iter().filter(|id| !members.contains(id)))
            .map(vec_of)
            .collect::<Result<_>>()?;
        if others.is_empty() {
            return Err(Error::Data("separation needs at least two groups".into()));
        }
        let (mut intra, mut pairs) = (0.0, 0usize);
        for i in 0..own.len() {
            for j in i + 1..own.len() {
                intra += distance(own[i], own[j], metric);
                pairs += 1;
            }
        }
        let inter: f64 = own
            .iter()
            .flat_map(|a| others.iter().map(move |b| distance(a, b, metric)))
            .sum();
        out.push(GroupSeparation {
            group: name.clone(),
            templates: own.len(),
            intra: intra / pairs as f64,
            inter: inter / (own.len() * others.len()) as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<(TemplateId, f64, f64)>,
    pub warning: Option<String>,
}

const RANK_TOL: f64 = 1e-10;

/// Coordinates on the top two principal directions of the centered vectors.
///
/// Each direction is oriented so its largest-magnitude component is
/// positive. With fewer than two non-degenerate directions the missing
/// coordinates are zero and a warning is attached.
pub fn project_2d(table: &EmbeddingTable) -> Result<Projection> {
    let n = table.vectors.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "projection needs at least 3 templates, got {n}"
        )));
    }
    let ids: Vec<TemplateId> = table.vectors.keys().copied().collect();
    let dim = table.vectors.values().next().map(Vec::len).unwrap_or(0);
    let mut mean = vec![0.0; dim];
    for v in table.vectors.values() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, dim, |i, j| table.vectors[&ids[i]][j] - mean[j]);
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let scale = eig.eigenvalues[order[0]].abs().max(1.0);

    let mut coords = [vec![0.0; n], vec![0.0; n]];
    let mut warning = None;
    for (k, c) in coords.iter_mut().enumerate() {
        let lambda = eig.eigenvalues[order[k]];
        if lambda <= RANK_TOL * scale {
            warning = Some(format!(
                "embedding table has fewer than {} non-degenerate directions",
                k + 1
            ));
            break;
        }
        let u = eig.eigenvectors.column(order[k]);
        let mut dir = x.transpose() * u;
        let norm = dir.norm();
        dir /= norm;
        let mut lead = 0;
        for j in 0..dim {
            if dir[j].abs() > dir[lead].abs() + 1e-12 {
                lead = j;
            }
        }
        if dir[lead] < 0.0 {
            dir = -dir;
        }
        let proj = &x * dir;
        c.copy_from_slice(proj.as_slice());
    }
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(Projection {
        points: ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, coords[0][i], coords[1][i]))
            .collect(),
        warning,
    })
}

/// `template_id,modality,v0,...`
pub fn write_embedding_csv<W: Write>(table: &EmbeddingTable, out: W) -> Result<()> {
    let dim = table.vectors.values().next().map(Vec::len).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["template_id".to_string(), "modality".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, v) in &table.vectors {
        let mut rec = vec![id.to_string(), table.modality.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

/// `template_id,label,x,y` with the template text as label.
pub fn write_projection_csv<W: Write>(
    projection: &Projection,
    templates: &[TemplateRecord],
    out: W,
) -> Result<()> {
    let labels: BTreeMap<TemplateId, String> = templates
        .iter()
        .map(|t| (t.template_id, t.text()))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["template_id", "label", "x", "y"])
        .map_err(csv_err)?;
    for (id, x, y) in &projection.points {
        let label = labels.get(id).cloned().unwrap_or_default();
        w.write_record([id.to_string(), label, x.to_string(), y.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn separation_of_two_tight_groups() {
        let t = table(vec![
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 1.0],
        ]);
        let groups: BTreeMap<String, BTreeSet<TemplateId>> = [
            ("a".to_string(), [TemplateId(1), TemplateId(2)].into()),
            ("b".to_string(), [TemplateId(3), TemplateId(4)].into()),
        ]
        .into();
        let sep = group_separation(&t, &groups, Metric::Euclidean).unwrap();
        assert_abs_diff_eq!(sep[0].intra, 0.1, epsilon = 1e-12);
        let inter = (2f64.sqrt() + 1.81f64.sqrt() * 2.0 + 2f64.sqrt() * 0.9) / 4.0;
        assert_abs_diff_eq!(sep[0].inter, inter, epsilon = 1e-12);
        assert!(sep.iter().all(|g| g.intra < g.inter));
        let lone: BTreeMap<String, BTreeSet<TemplateId>> =
            [("a".to_string(), [TemplateId(1)].into())].into();
        assert!(group_separation(&t, &lone, Metric::Cosine).is_err());
    }

    fn table(vs: Vec<Vec<f64>>) -> EmbeddingTable {
        EmbeddingTable {
            modality: Modality::Span,
            vectors: vs
                .into_iter()
                .enumerate()
                .map(|(i, v)| (TemplateId(i as u32 + 1), v))
                .collect(),
            provenance: "test".into(),
        }
    }

    #[test]
    fn duplicate_vector_is_nearest() {
        let t = table(vec![vec![1.0, 2.0], vec![5.0, -1.0], vec![1.0, 2.0]]);
        let nn = nearest(&t, TemplateId(1), 2, Metric::Cosine).unwrap();
        assert_eq!(nn[0].0, TemplateId(3));
        assert_abs_diff_eq!(nn[0].1, 0.0, epsilon = 1e-12);
        assert_eq!(
            nearest(&t, TemplateId(1), 10, Metric::Euclidean)
                .unwrap()
                .len(),
            2
        );
        assert!(nearest(&t, TemplateId(9), 1, Metric::Cosine).is_err());
    }

    #[test]
    fn orthogonal_vectors() {
        assert_abs_diff_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine), 1.0);
        assert_abs_diff_eq!(
            distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Euclidean),
            2f64.sqrt()
        );
    }

    #[test]
    fn two_dimensional_input_is_isometric() {
        let vs = vec![
            vec![0.0, 0.0],
            vec![3.0, 1.0],
            vec![-1.0, 2.0],
            vec![2.0, -2.0],
        ];
        let p = project_2d(&table(vs.clone())).unwrap();
        assert!(p.warning.is_none());
        for i in 0..vs.len() {
            for j in 0..vs.len() {
                let d0 = distance(&vs[i], &vs[j], Metric::Euclidean);
                let (pi, pj) = (p.points[i], p.points[j]);
                let d1 = ((pi.1 - pj.1).powi(2) + (pi.2 - pj.2).powi(2)).sqrt();
                assert_abs_diff_eq!(d0, d1, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn identical_vectors_project_to_origin() {
        let p = project_2d(&table(vec![vec![1.0, 2.0, 3.0]; 4])).unwrap();
        assert!(p.points.iter().all(|&(_, x, y)| x == 0.0 && y == 0.0));
        assert!(p.warning.is_some());
    }

    #[test]
    fn collinear_vectors_warn() {
        let p = project_2d(&table(vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]])).unwrap();
        assert!(p.warning.is_some());
        assert!(p.points.iter().all(|&(_, _, y)| y == 0.0));
        assert!(p.points.iter().any(|&(_, x, _)| x != 0.0));
    }

    #[test]
    fn too_few_templates() {
        assert!(project_2d(&table(vec![vec![1.0], vec![2.0]])).is_err());
    }

    #[test]
    fn csv_outputs() {
        let t = table(vec![vec![0.5, -1.0], vec![1.0, 0.0], vec![0.0, 3.0]]);
        let mut buf = Vec::new();
        write_embedding_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("template_id,modality,v0,v1\n1,span,0.5,-1\n"));
        let p = project_2d(&t).unwrap();
        let recs: Vec<TemplateRecord> = (1..=3)
            .map(|i| TemplateRecord {
                template_id: TemplateId(i),
                modality: Modality::Span,
                tokens: vec!["GET".into(), format!("r{i}")],
                support_count: 1,
            })
            .collect();
        let mut buf = Vec::new();
        write_projection_csv(&p, &recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("template_id,label,x,y\n1,GET r1,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric_distance_and_centered_projection(
                vs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3..8)
            ) {
                for a in &vs {
                    for b in &vs {
                        for m in [Metric::Cosine, Metric::Euclidean] {
                            prop_assert!((distance(a, b, m) - distance(b, a, m)).abs() < 1e-12);
                        }
                    }
                }
                let t = table(vs);
                let p = project_2d(&t).unwrap();
                let n = p.points.len() as f64;
                let cx: f64 = p.points.iter().map(|q| q.1).sum::<f64>() / n;
                let cy: f64 = p.points.iter().map(|q| q.2).sum::<f64>() / n;
                prop_assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
                prop_assert_eq!(project_2d(&t).unwrap(), p);
            }
        }
    }
}
