#pragma once

// Diversity and coverage metrics over finished generations.
//
// Embeddings are the backbone's own final-layer states, mean-pooled over the
// generated tokens and L2-normalized. That keeps the metrics self-contained,
// but it also means the absolute values are not comparable to numbers
// computed with an external embedding model — they are for comparing runs of
// this engine against each other.

#include <vector>

#include "esamp/numerics.hpp"
#include "esamp/trace.hpp"

namespace esamp {

double cosine_sim(const Vector& a, const Vector& b);

// mean cosine over all unordered pairs. Zero embeddings (failed or empty
// generations) are excluded first; ContractError if fewer than two remain.
double pairwise_cosine_mean(const std::vector<Vector>& embeddings);

// exp(entropy) of the eigenvalues of K/n, K the cosine similarity matrix of
// the (unit-norm, nonzero) embeddings: an effective count of distinct
// clusters in [1, n]. NumericError on non-finite input.
double vendi_score(const std::vector<Vector>& embeddings);

// unbiased estimator 1 − C(n−c, k)/C(n, k) via the stable product form;
// probability that k draws from n samples with c correct hit ≥1 correct
double pass_at_k(long long n, long long c, long long k);

// one similarity value per step from per-step prefix embeddings
// (step_embeddings[t] holds one embedding per sequence at step t)
std::vector<double> divergence_curve(
    const std::vector<std::vector<Vector>>& step_embeddings);

// mean logp_ref per generated token from a trace. A self-scored likelihood
// diagnostic: scored by the generating model itself, so not comparable to
// perplexity under an external judge model.
double mean_self_logprob(const Trace& trace);

} // namespace esamp
