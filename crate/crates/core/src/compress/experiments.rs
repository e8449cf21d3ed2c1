use serde::{Deserialize, Serialize};

use super::{compress_network, CompressError, CompressionConfig, CompressionOrder, Datasets, Result};
use crate::data::{subset, Dataset};
use crate::nn::{evaluate, train, Network, ParamFilter, TrainConfig};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Shared inputs of the sweep and faithfulness protocols.
#[derive(Debug, Clone)]
pub struct Protocol<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub baseline: TrainConfig,
    pub compression: CompressionConfig,
    pub layers: Vec<String>,
    pub order: CompressionOrder,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: usize,
    pub n: usize,
    pub inverse_rho_tot: f64,
    pub eta_nn: f64,
    pub eta: f64,
    pub accuracy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessRow {
    pub n_train: usize,
    pub eta_nn: f64,
    pub eta: f64,
}

fn train_baseline<T: Scalar>(net: &mut Network<T>, train_set: &Dataset, p: &Protocol<'_>, tag: u64) -> Result<f64> {
    train(net, train_set, None, &p.baseline, ParamFilter::ALL, derive_seed(p.seed, "baseline", tag))?;
    Ok(evaluate(net, p.test, 1000)?)
}

/// For every width `s`, trains `build(s, seed)` and compresses it with at
/// most `n` ADTNs per layer for every `n`. Rows come out in `s`-major order.
pub fn sweep_overparam<T: Scalar>(
    build: impl Fn(usize, u64) -> Result<Network<T>>,
    s_values: &[usize],
    n_values: &[usize],
    protocol: &Protocol<'_>,
) -> Result<Vec<SweepRow>> {
    if n_values.contains(&0) {
        return Err(CompressError::Config("ADTN counts must be positive".into()));
    }
    let mut rows = Vec::with_capacity(s_values.len() * n_values.len());
    for &s in s_values {
        let mut base = build(s, derive_seed(protocol.seed, "init", s as u64))?;
        let eta_nn = train_baseline(&mut base, protocol.train, protocol, s as u64)?;
        for &n in n_values {
            let mut net = base.clone();
            let config = CompressionConfig { max_chunks: Some(n), ..protocol.compression };
            let report = compress_network(
                &mut net,
                &protocol.layers,
                protocol.order,
                &config,
                Datasets { train: protocol.train, test: protocol.test },
                derive_seed(protocol.seed, "compress", (s * 1000 + n) as u64),
            )?;
            rows.push(SweepRow {
                s,
                n,
                inverse_rho_tot: 1.0 / report.rho_tot,
                eta_nn,
                eta: report.eta,
                accuracy_ratio: report.eta / eta_nn,
            });
        }
    }
    Ok(rows)
}

/// Trains and compresses `build(seed)` on nested training subsets of the
/// given sizes; rows are sorted by subset size.
pub fn faithfulness_curve<T: Scalar>(
    build: impl Fn(u64) -> Result<Network<T>>,
    sizes: &[usize],
    protocol: &Protocol<'_>,
) -> Result<Vec<FaithfulnessRow>> {
    if sizes.contains(&0) {
        return Err(CompressError::Config("training subsets must be non-empty".into()));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::with_capacity(sizes.len());
    for n in sizes {
        let part = subset(protocol.train, n, derive_seed(protocol.seed, "subset", n as u64))?;
        let mut net = build(derive_seed(protocol.seed, "init", n as u64))?;
        let eta_nn = train_baseline(&mut net, &part, protocol, n as u64)?;
        let report = compress_network(
            &mut net,
            &protocol.layers,
            protocol.order,
            &protocol.compression,
            Datasets { train: &part, test: protocol.test },
            derive_seed(protocol.seed, "compress", n as u64),
        )?;
        rows.push(FaithfulnessRow { n_train: n, eta_nn, eta: report.eta });
    }
    Ok(rows)
}

/// Header row plus one record per row.
pub fn rows_to_csv<R: Serialize>(rows: &[R]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{FinetuneConfig, PretrainConfig};
    use crate::nn::{build_model, ModelId, OptimizerConfig};
    use crate::tensor::Tensor;

    fn stripes(n: usize, offset: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| (i + offset) % 2).collect();
        let images = Tensor::from_fn(vec![n, 1, 4, 4], |i| {
            let on = if labels[i[0]] == 0 { i[2] % 2 == 0 } else { i[3] % 2 == 0 };
            if on { 0.9 } else { 0.1 }
        })
        .unwrap();
        Dataset::new(images, labels, 2).unwrap()
    }

    fn protocol<'a>(train: &'a Dataset, test: &'a Dataset) -> Protocol<'a> {
        Protocol {
            train,
            test,
            baseline: TrainConfig { epochs: 3, batch_size: 8, optimizer: OptimizerConfig::adam(1e-2), ..TrainConfig::default() },
            compression: CompressionConfig {
                min_chunk: 16,
                pretrain: PretrainConfig { max_steps: 50, ..PretrainConfig::default() },
                finetune: FinetuneConfig { epochs: 1, batch_size: 8, ..FinetuneConfig::default() },
                ..CompressionConfig::default()
            },
            layers: vec!["fc1".into()],
            order: CompressionOrder::Backward,
            seed: 0,
        }
    }

    #[test]
    fn sweep_has_one_row_per_grid_point() {
        let (tr, te) = (stripes(32, 0), stripes(16, 1));
        let p = protocol(&tr, &te);
        let rows = sweep_overparam(
            |s, seed| Ok(build_model::<f32>(ModelId::Fc2 { hidden: s }, &[1, 4, 4], 2, seed)?),
            &[4, 8],
            &[1, 2],
            &p,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| (r.s, r.n)).collect::<Vec<_>>(), vec![(4, 1), (4, 2), (8, 1), (8, 2)]);
        for r in &rows {
            assert!(r.inverse_rho_tot > 0.0 && r.inverse_rho_tot.is_finite());
        }
        let csv = rows_to_csv(&rows).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn faithfulness_rows_are_sorted_and_empty_subsets_rejected() {
        let (tr, te) = (stripes(40, 0), stripes(16, 1));
        let p = protocol(&tr, &te);
        let build = |seed| Ok(build_model::<f32>(ModelId::Fc2 { hidden: 4 }, &[1, 4, 4], 2, seed)?);
        let rows = faithfulness_curve(build, &[30, 10], &p).unwrap();
        assert_eq!(rows.iter().map(|r| r.n_train).collect::<Vec<_>>(), vec![10, 30]);
        assert!(matches!(faithfulness_curve(build, &[0, 10], &p), Err(CompressError::Config(_))));
    }
}
