use crate::error::{config_err, Result};
use crate::feature_map::FeatureMapKind;

/// Default denominator floor.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Positional scale `m` of the cosine weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// `m = max(n_q, n_k)` of each call.
    SequenceLength,
    Fixed(usize),
}

impl Horizon {
    pub fn resolve(self, n_q: usize, n_k: usize) -> usize {
        match self {
            Horizon::SequenceLength => n_q.max(n_k),
            Horizon::Fixed(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReweightScheme {
    #[default]
    None,
    Cosine(Horizon),
}

impl ReweightScheme {
    pub fn cosine(m: usize) -> Self {
        ReweightScheme::Cosine(Horizon::Fixed(m))
    }

    /// Resolves and validates the horizon for an `n_q` x `n_k` call.
    /// Returns `None` when no re-weighting is configured.
    pub fn horizon_for(self, n_q: usize, n_k: usize) -> Result<Option<usize>> {
        match self {
            ReweightScheme::None => Ok(None),
            ReweightScheme::Cosine(h) => {
                let m = h.resolve(n_q, n_k);
                if m == 0 || m < n_q.max(n_k) {
                    return config_err(format!(
                        "cosine horizon {m} is smaller than sequence length {}",
                        n_q.max(n_k)
                    ));
                }
                Ok(Some(m))
            }
        }
    }
}

/// Per-call knobs of a kernelized attention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub feature_map: FeatureMapKind,
    pub reweight: ReweightScheme,
    pub causal: bool,
    /// Floor applied to each row's scalar denominator.
    pub eps: f64,
    /// Divide logits by `sqrt(d_k)`; only read by the softmax reference.
    pub softmax_scale: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            feature_map: FeatureMapKind::Relu,
            reweight: ReweightScheme::None,
            causal: false,
            eps: DEFAULT_EPS,
            softmax_scale: true,
        }
    }
}

impl AttentionConfig {
    /// ReLU features with cosine re-weighting at the default horizon.
    pub fn cosformer(causal: bool) -> Self {
        Self {
            reweight: ReweightScheme::Cosine(Horizon::SequenceLength),
            causal,
            ..Self::default()
        }
    }

    /// Kernelized attention without re-weighting.
    pub fn linear(feature_map: FeatureMapKind, causal: bool) -> Self {
        Self {
            feature_map,
            causal,
            ..Self::default()
        }
    }

    pub fn with_horizon(mut self, m: usize) -> Self {
        self.reweight = ReweightScheme::cosine(m);
        self
    }

    pub fn with_feature_map(mut self, feature_map: FeatureMapKind) -> Self {
        self.feature_map = feature_map;
        self
    }

    /// Checks the invariants that do not depend on input shapes.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return config_err(format!("eps must be positive, got {}", self.eps));
        }
        if let FeatureMapKind::LeakyRelu { slope } = self.feature_map {
            if !(slope > 0.0 && slope < 1.0) {
                return config_err(format!("leaky_relu slope {slope} outside (0, 1)"));
            }
        }
        if matches!(self.reweight, ReweightScheme::Cosine(_)) && !self.feature_map.is_non_negative() {
            return config_err(format!(
                "cosine re-weighting needs a non-negative feature map, got {}",
                self.feature_map.name()
            ));
        }
        if let ReweightScheme::Cosine(Horizon::Fixed(0)) = self.reweight {
            return config_err("cosine horizon must be positive");
        }
        Ok(())
    }
}
