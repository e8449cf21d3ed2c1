use super::{Adtn, AdtnError, AdtnSpec, CompressionPlan, Result};
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A weight tensor stored as ADTN-encoded chunks plus an uncompressed
/// residual. The flat weight is `concat(chunk decodes) ++ residual`,
/// reshaped row-major to `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedWeight<T: Scalar> {
    shape: Vec<usize>,
    plan: CompressionPlan,
    adtns: Vec<Adtn<T>>,
    residual: Option<Tensor<T>>,
}

impl<T: Scalar> CompressedWeight<T> {
    pub fn new(shape: Vec<usize>, plan: CompressionPlan, adtns: Vec<Adtn<T>>, residual: Option<Tensor<T>>) -> Result<Self> {
        let total: usize = shape.iter().product();
        if plan.total != total {
            return Err(AdtnError::Wiring(format!("plan covers {} entries, weight has {total}", plan.total)));
        }
        let mut offset = 0;
        for c in &plan.chunks {
            if c.offset != offset || plan.d.checked_pow(c.q as u32) != Some(c.len) {
                return Err(AdtnError::Wiring(format!("chunk {c:?} does not continue the plan at offset {offset}")));
            }
            offset += c.len;
        }
        if plan.residual.offset != offset || offset.checked_add(plan.residual.len) != Some(total) {
            return Err(AdtnError::Wiring(format!("chunks and residual {:?} do not tile {total} entries", plan.residual)));
        }
        if adtns.len() != plan.chunks.len() {
            return Err(AdtnError::Wiring(format!("{} ADTNs for {} chunks", adtns.len(), plan.chunks.len())));
        }
        for (chunk, adtn) in plan.chunks.iter().zip(&adtns) {
            if adtn.spec().encoded_size() != chunk.len {
                return Err(AdtnError::Wiring(format!(
                    "chunk at offset {} holds {} entries but its ADTN encodes {}",
                    chunk.offset,
                    chunk.len,
                    adtn.spec().encoded_size()
                )));
            }
        }
        let residual_len = residual.as_ref().map_or(0, Tensor::len);
        if residual_len != plan.residual.len {
            return Err(AdtnError::Wiring(format!(
                "residual has {residual_len} entries, plan expects {}",
                plan.residual.len
            )));
        }
        Ok(CompressedWeight { shape, plan, adtns, residual })
    }

    /// Encodes `weight` with fresh ADTNs built by `make(chunk_index, spec)`;
    /// the residual is copied from the tail of the dense weight.
    pub fn from_dense(
        weight: &Tensor<T>,
        plan: CompressionPlan,
        mut make: impl FnMut(usize, AdtnSpec) -> Result<Adtn<T>>,
        template: AdtnSpec,
    ) -> Result<Self> {
        let adtns = plan
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| make(i, AdtnSpec { q: c.q, d: plan.d, ..template }))
            .collect::<Result<Vec<_>>>()?;
        let residual = match plan.residual.len {
            0 => None,
            len => Some(weight.slice_flat(plan.residual.offset, len)?),
        };
        Self::new(weight.shape().to_vec(), plan, adtns, residual)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn plan(&self) -> &CompressionPlan {
        &self.plan
    }

    pub fn adtns(&self) -> &[Adtn<T>] {
        &self.adtns
    }

    pub fn adtns_mut(&mut self) -> &mut [Adtn<T>] {
        &mut self.adtns
    }

    pub fn residual(&self) -> Option<&Tensor<T>> {
        self.residual.as_ref()
    }

    pub fn residual_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.residual.as_mut()
    }

    /// Disjoint mutable access to the ADTNs and the residual.
    pub fn parts_mut(&mut self) -> (&mut [Adtn<T>], Option<&mut Tensor<T>>) {
        (&mut self.adtns, self.residual.as_mut())
    }

    pub fn adtn_param_count(&self) -> usize {
        self.adtns.iter().map(Adtn::param_count).sum()
    }

    pub fn residual_len(&self) -> usize {
        self.plan.residual.len
    }

    /// Dense weight with the current ADTN tensors.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let decoded = self.adtns.iter().map(|a| a.contract().map(|e| e.into_flat())).collect::<Result<Vec<_>>>()?;
        let mut parts: Vec<&Tensor<T>> = decoded.iter().collect();
        parts.extend(self.residual.as_ref());
        Ok(Tensor::concat_flat(&parts).into_reshape(self.shape.clone())?)
    }

    /// Reconstruction recorded on `tape`. `gates[i]` holds the variables for
    /// the tensors of ADTN `i`; `residual` stands in for the residual.
    pub fn reconstruct_on<'t>(
        &self,
        tape: &'t Tape<T>,
        gates: &[Vec<Var<'t, T>>],
        residual: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        if gates.len() != self.adtns.len() || residual.is_some() != self.residual.is_some() {
            return Err(AdtnError::Wiring("variable layout does not match the compressed weight".into()));
        }
        let mut parts = self
            .adtns
            .iter()
            .zip(gates)
            .map(|(a, g)| a.contract_on(tape, g))
            .collect::<Result<Vec<_>>>()?;
        parts.extend(residual);
        let flat = Var::concat(&parts)?;
        Ok(flat.reshape(self.shape.clone())?)
    }
}
