use super::{LogLikStream, MetricError, MetricKind, MetricReport};

pub fn perplexity(stream: &LogLikStream) -> MetricReport {
    pooled_perplexity(std::slice::from_ref(stream)).expect("a validated stream is never empty")
}

/// Token-weighted perplexity over several documents: all token
/// log-likelihoods are pooled before averaging.
pub fn pooled_perplexity(streams: &[LogLikStream]) -> Result<MetricReport, MetricError> {
    let tokens: usize = streams.iter().map(LogLikStream::token_count).sum();
    if tokens == 0 {
        return Err(MetricError::EmptyStream);
    }
    let total: f64 = streams.iter().map(LogLikStream::total).sum();
    let mean_nll = -total / tokens as f64;
    // averaged in bits: ln(1/2^k)/ln 2 is exact, so uniform models over 2^k
    // symbols give exactly 2^k
    let bits: f64 = streams
        .iter()
        .flat_map(|s| s.token_loglik().iter())
        .map(|ll| ll / std::f64::consts::LN_2)
        .sum();
    let value = (-bits / tokens as f64).exp2().max(1.0);
    Ok(MetricReport::new(MetricKind::Perplexity, value)
        .detail("mean_nll", mean_nll)
        .detail("token_count", tokens)
        .detail("documents", streams.len())
        .detail("log_base", "e"))
}
