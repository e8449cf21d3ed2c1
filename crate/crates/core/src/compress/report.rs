use serde::{Deserialize, Serialize};

use super::{CompressError, CompressionOrder, PretrainOutcome, Result};
use crate::nn::{Layer, Network, WeightSource};
use crate::scalar::Scalar;

/// Stage-1 summary for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkFit {
    pub q: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub relative_loss: f64,
    pub seconds: f64,
}

impl ChunkFit {
    pub fn new(q: usize, outcome: &PretrainOutcome, seconds: f64) -> Self {
        ChunkFit {
            q,
            steps: outcome.curve.len(),
            initial_loss: outcome.initial_loss(),
            final_loss: outcome.best_loss,
            relative_loss: outcome.relative(),
            seconds,
        }
    }
}

/// One compressed layer. `p` counts the weight entries replaced by ADTNs
/// and `adtn_params` the scalars in those ADTNs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub position: usize,
    pub p: usize,
    pub adtn_params: usize,
    pub rho: Option<f64>,
    pub n_adtns: usize,
    pub residual: usize,
    pub chunks: Vec<ChunkFit>,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
    pub finetune_loss: Option<f64>,
    pub accuracy_after_pretrain: Option<f64>,
    pub accuracy_after_finetune: Option<f64>,
    pub error: Option<String>,
}

impl LayerReport {
    pub fn new(layer: &str, position: usize) -> Self {
        LayerReport {
            layer: layer.to_string(),
            position,
            p: 0,
            adtn_params: 0,
            rho: None,
            n_adtns: 0,
            residual: 0,
            chunks: Vec::new(),
            stage1_seconds: 0.0,
            stage2_seconds: 0.0,
            finetune_loss: None,
            accuracy_after_pretrain: None,
            accuracy_after_finetune: None,
            error: None,
        }
    }

    pub(super) fn record_layer<T: Scalar>(&mut self, layer: &Layer<T>, chunks: Vec<ChunkFit>) {
        if let Some(WeightSource::Compressed(c)) = &layer.weight {
            self.p = c.plan().encoded_len();
            self.adtn_params = c.adtn_param_count();
            self.rho = ratio(self.adtn_params, self.p).ok();
            self.n_adtns = c.plan().n_adtns();
            self.residual = c.residual_len();
        }
        self.chunks = chunks;
    }
}

/// Whole-network counts: `nn_total` for the original network, `adtn` for
/// all ADTN tensors and `residual` for everything stored densely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub nn_total: usize,
    pub adtn: usize,
    pub residual: usize,
}

impl ParamCounts {
    pub fn of<T: Scalar>(net: &Network<T>, nn_total: usize) -> Self {
        let adtn = net
            .layers()
            .iter()
            .filter_map(|l| match &l.weight {
                Some(WeightSource::Compressed(c)) => Some(c.adtn_param_count()),
                _ => None,
            })
            .sum();
        ParamCounts { nn_total, adtn, residual: net.stored_param_count() - adtn }
    }
}

/// Compression ratio of one encoded block: ADTN parameters over the
/// parameters they replace.
pub fn ratio(adtn_params: usize, replaced: usize) -> Result<f64> {
    if replaced == 0 {
        return Err(CompressError::ZeroDenominator { numerator: adtn_params });
    }
    Ok(adtn_params as f64 / replaced as f64)
}

/// `(#ADTN + #residual) / #NN`.
pub fn total_ratio(c: &ParamCounts) -> Result<f64> {
    ratio(c.adtn + c.residual, c.nn_total)
}

/// `#residual / #NN`, the usual approximation when ADTNs are negligible.
pub fn total_ratio_approx(c: &ParamCounts) -> Result<f64> {
    ratio(c.residual, c.nn_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub order: CompressionOrder,
    pub m: usize,
    pub eta_nn: f64,
    pub eta: f64,
    /// Training-set accuracy after compression.
    pub eta_train: f64,
    pub counts: ParamCounts,
    pub rho_tot: f64,
    pub rho_tot_approx: f64,
    pub n_adtns: usize,
    pub layers: Vec<LayerReport>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    row: &'a str,
    layer: &'a str,
    position: Option<usize>,
    order: CompressionOrder,
    m: usize,
    p: usize,
    adtn_params: usize,
    rho: Option<f64>,
    n_adtns: usize,
    residual: usize,
    chunk_q: String,
    stage1_relative_loss: String,
    stage1_seconds: Option<f64>,
    stage2_seconds: Option<f64>,
    eta_after_pretrain: Option<f64>,
    eta_after_finetune: Option<f64>,
    eta_nn: Option<f64>,
    eta: Option<f64>,
    eta_train: Option<f64>,
    nn_params: Option<usize>,
    rho_tot: Option<f64>,
    rho_tot_approx: Option<f64>,
    error: &'a str,
}

fn joined<I: IntoIterator<Item = String>>(items: I) -> String {
    items.into_iter().collect::<Vec<_>>().join(";")
}

impl CompressionReport {
    /// One row per layer, then a summary row.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for l in &self.layers {
            w.serialize(CsvRow {
                row: "layer",
                layer: &l.layer,
                position: Some(l.position),
                order: self.order,
                m: self.m,
                p: l.p,
                adtn_params: l.adtn_params,
                rho: l.rho,
                n_adtns: l.n_adtns,
                residual: l.residual,
                chunk_q: joined(l.chunks.iter().map(|c| c.q.to_string())),
                stage1_relative_loss: joined(l.chunks.iter().map(|c| format!("{:.6e}", c.relative_loss))),
                stage1_seconds: Some(l.stage1_seconds),
                stage2_seconds: Some(l.stage2_seconds),
                eta_after_pretrain: l.accuracy_after_pretrain,
                eta_after_finetune: l.accuracy_after_finetune,
                eta_nn: None,
                eta: None,
                eta_train: None,
                nn_params: None,
                rho_tot: None,
                rho_tot_approx: None,
                error: l.error.as_deref().unwrap_or(""),
            })?;
        }
        let p: usize = self.layers.iter().map(|l| l.p).sum();
        w.serialize(CsvRow {
            row: "summary",
            layer: "",
            position: None,
            order: self.order,
            m: self.m,
            p,
            adtn_params: self.counts.adtn,
            rho: ratio(self.counts.adtn, p).ok(),
            n_adtns: self.n_adtns,
            residual: self.counts.residual,
            chunk_q: String::new(),
            stage1_relative_loss: String::new(),
            stage1_seconds: Some(self.layers.iter().map(|l| l.stage1_seconds).sum()),
            stage2_seconds: Some(self.layers.iter().map(|l| l.stage2_seconds).sum()),
            eta_after_pretrain: None,
            eta_after_finetune: None,
            eta_nn: Some(self.eta_nn),
            eta: Some(self.eta),
            eta_train: Some(self.eta_train),
            nn_params: Some(self.counts.nn_total),
            rho_tot: Some(self.rho_tot),
            rho_tot_approx: Some(self.rho_tot_approx),
            error: "",
        })?;
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
