#include "esamp/metrics.hpp"

#include <cmath>

#include "esamp/errors.hpp"

namespace esamp {

namespace {

bool is_zero(const Vector& v) {
    for (double x : v)
        if (x != 0.0) return false;
    return true;
}

std::vector<const Vector*> usable(const std::vector<Vector>& embeddings) {
    std::vector<const Vector*> out;
    out.reserve(embeddings.size());
    for (const auto& e : embeddings) {
        for (double x : e)
            if (!std::isfinite(x)) throw NumericError("non-finite embedding");
        if (!is_zero(e)) out.push_back(&e);
    }
    return out;
}

} // namespace

double cosine_sim(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0)
        throw ContractError("cosine of a zero vector is undefined");
    return dot(a, b) / (na * nb);
}

double pairwise_cosine_mean(const std::vector<Vector>& embeddings) {
    const auto embs = usable(embeddings);
    if (embs.size() < 2)
        throw ContractError("pairwise similarity needs at least two nonzero embeddings");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < embs.size(); ++i)
        for (std::size_t j = i + 1; j < embs.size(); ++j) {
            sum += cosine_sim(*embs[i], *embs[j]);
            ++pairs;
        }
    return sum / double(pairs);
}

double vendi_score(const std::vector<Vector>& embeddings) {
    const auto embs = usable(embeddings);
    const std::size_t n = embs.size();
    if (n == 0) throw ContractError("vendi score needs at least one nonzero embedding");
    Matrix K(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        K.at(i, i) = 1.0 / double(n);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = cosine_sim(*embs[i], *embs[j]) / double(n);
            K.at(i, j) = v;
            K.at(j, i) = v;
        }
    }
    const Vector lam = sym_eigenvalues(K);
    double entropy = 0.0;
    for (double l : lam) {
        if (l < -1e-9) throw NumericError("similarity kernel has a negative eigenvalue");
        if (l <= 0.0) continue;   // 0·ln 0 := 0; tiny negatives are round-off
        entropy -= l * std::log(l);
    }
    return std::exp(entropy);
}

double pass_at_k(long long n, long long c, long long k) {
    if (n < 1 || k < 1 || k > n) throw ContractError("pass@k requires 1 <= k <= n");
    if (c < 0 || c > n) throw ContractError("pass@k requires 0 <= c <= n");
    if (c == 0) return 0.0;
    // 1 − Π_{i=n−c+1..n} (1 − k/i); hits an exact zero factor when k > n−c
    double prod = 1.0;
    for (long long i = n - c + 1; i <= n; ++i)
        prod *= 1.0 - double(k) / double(i);
    return 1.0 - prod;
}

std::vector<double> divergence_curve(
    const std::vector<std::vector<Vector>>& step_embeddings) {
    std::vector<double> out;
    out.reserve(step_embeddings.size());
    for (const auto& embs : step_embeddings)
        out.push_back(pairwise_cosine_mean(embs));
    return out;
}

double mean_self_logprob(const Trace& trace) {
    if (trace.records.empty())
        throw ContractError("trace has no step records");
    double sum = 0.0;
    for (const auto& r : trace.records) sum += r.logp_ref;
    return sum / double(trace.records.size());
}

} // namespace esamp
