use super::{check_mask, AttributionError, AttributionVector, BaselineSpec, Method, SpanMask};
use crate::backend::{Backend, BackendError, EncodedPrompt};

/// DeepLift (rescale rule) relative to the prompt with masked tokens padded.
/// A token's score is the sum of its embedding-row contributions.
pub fn deeplift(
    backend: &dyn Backend,
    prompt: &EncodedPrompt,
    mask: &SpanMask,
    target: &str,
) -> Result<AttributionVector, AttributionError> {
    let model = backend.differentiable().ok_or(BackendError::CapabilityMissing("embedding access"))?;
    check_mask(prompt, mask)?;
    let ids = prompt.ids();
    let baseline = BaselineSpec { replacement_token_id: model.pad_token_id(), applies_to: mask.clone() };
    let input = model.embed(&ids);
    let reference = model.embed(&baseline.apply(&ids));
    let contributions = model.deeplift_contributions(&input, &reference, target)?;
    let per_token: Vec<f64> = mask.positions().iter().map(|&p| contributions.row(p).sum()).collect();
    Ok(AttributionVector::from_masked(&per_token, mask, target, Method::Deeplift))
}
