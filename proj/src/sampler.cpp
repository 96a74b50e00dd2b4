#include "esamp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "esamp/errors.hpp"

namespace esamp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_same_size(const Vector& a, const Vector& b, const char* who) {
    if (a.size() != b.size())
        throw DimensionError(std::string(who) + ": size mismatch");
}

// indices sorted by (logit descending, id ascending) — the tie rule every
// filter shares
std::vector<int> order_desc(const Vector& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (v[std::size_t(a)] != v[std::size_t(b)]) return v[std::size_t(a)] > v[std::size_t(b)];
        return a < b;
    });
    return idx;
}

} // namespace

void FusionConfig::validate() const {
    if (!std::isfinite(beta))
        throw ConfigError("fusion: beta must be finite");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ConfigError("fusion: temperature must be positive and finite");
    switch (filter.kind) {
        case FilterKind::none:
            break;
        case FilterKind::top_k:
            if (filter.k <= 0) throw ConfigError("fusion: top-k needs k >= 1");
            break;
        case FilterKind::top_p:
        case FilterKind::min_p:
            if (!(filter.p > 0.0) || filter.p > 1.0)
                throw ConfigError("fusion: p must be in (0, 1]");
            break;
    }
}

Vector fuse_logits(const Vector& logits_ref, const Vector& logits_dist, double beta,
                   FusionForm form) {
    check_same_size(logits_ref, logits_dist, "fuse_logits");
    if (!std::isfinite(beta))
        throw ConfigError("fuse_logits: beta must be finite");
    if (beta == 0.0) return logits_ref;
    Vector out(logits_ref.size());
    const double ref_coef = (form == FusionForm::amplified) ? 1.0 + beta : 1.0;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = ref_coef * logits_ref[i] - beta * logits_dist[i];
    return out;
}

Vector fuse_latent(const Vector& hl, const Vector& hl_hat, double beta) {
    check_same_size(hl, hl_hat, "fuse_latent");
    if (!std::isfinite(beta))
        throw ConfigError("fuse_latent: beta must be finite");
    if (beta == 0.0) return hl;
    Vector out(hl.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 + beta) * hl[i] - beta * hl_hat[i];
    return out;
}

double intrinsic_reward(const Vector& pi_ref, const Vector& q_dist, std::size_t z) {
    check_same_size(pi_ref, q_dist, "intrinsic_reward");
    if (z >= pi_ref.size())
        throw ContractError("intrinsic_reward: token index out of range");
    if (!(pi_ref[z] > 0.0) || !(q_dist[z] > 0.0))
        throw NumericError("intrinsic_reward: probabilities must be strictly positive");
    return std::log(pi_ref[z]) - std::log(q_dist[z]);
}

Vector intrinsic_reward_from_logits(const Vector& logits_ref, const Vector& logits_dist) {
    check_same_size(logits_ref, logits_dist, "intrinsic_reward_from_logits");
    Vector lr = log_softmax(logits_ref), ld = log_softmax(logits_dist);
    Vector r(lr.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = lr[i] - ld[i];
    return r;
}

std::vector<int> filter_candidates(const Vector& logits, const FilterPolicy& policy) {
    if (logits.empty())
        throw ContractError("filter: empty logits");
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("filter: non-finite logit");

    std::vector<int> keep;
    switch (policy.kind) {
        case FilterKind::none: {
            keep.resize(logits.size());
            std::iota(keep.begin(), keep.end(), 0);
            return keep;
        }
        case FilterKind::top_k: {
            if (policy.k <= 0) throw ConfigError("filter: top-k needs k >= 1");
            std::vector<int> idx = order_desc(logits);
            const std::size_t n = std::min(std::size_t(policy.k), idx.size());
            keep.assign(idx.begin(), idx.begin() + long(n));
            break;
        }
        case FilterKind::top_p: {
            if (!(policy.p > 0.0) || policy.p > 1.0)
                throw ConfigError("filter: top-p needs p in (0, 1]");
            Vector probs = softmax(logits);
            std::vector<int> idx = order_desc(logits);
            double cum = 0.0;
            for (int id : idx) {
                keep.push_back(id);
                cum += probs[std::size_t(id)];
                if (cum >= policy.p) break;
            }
            break;
        }
        case FilterKind::min_p: {
            if (!(policy.p > 0.0) || policy.p > 1.0)
                throw ConfigError("filter: min-p needs p in (0, 1]");
            Vector probs = softmax(logits);
            const double mx = *std::max_element(probs.begin(), probs.end());
            const double thr = policy.p * mx;
            for (std::size_t i = 0; i < probs.size(); ++i)
                if (probs[i] >= thr) keep.push_back(int(i));
            break;
        }
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

Vector apply_filter(const Vector& logits, const FilterPolicy& policy) {
    std::vector<int> keep = filter_candidates(logits, policy);
    Vector out(logits.size(), kNegInf);
    for (int id : keep) out[std::size_t(id)] = logits[std::size_t(id)];
    return out;
}

Vector post_filter_fuse(const Vector& logits_ref, const Vector& logits_dist,
                        const std::vector<int>& candidates, double beta, FusionForm form) {
    check_same_size(logits_ref, logits_dist, "post_filter_fuse");
    if (candidates.empty())
        throw ContractError("post_filter_fuse: empty candidate set");
    if (!std::isfinite(beta))
        throw ConfigError("post_filter_fuse: beta must be finite");
    Vector out(logits_ref.size(), kNegInf);
    const double ref_coef = (form == FusionForm::amplified) ? 1.0 + beta : 1.0;
    for (int id : candidates) {
        if (id < 0 || std::size_t(id) >= logits_ref.size())
            throw ContractError("post_filter_fuse: candidate out of range");
        const std::size_t z = std::size_t(id);
        out[z] = (beta == 0.0) ? logits_ref[z]
                               : ref_coef * logits_ref[z] - beta * logits_dist[z];
    }
    return out;
}

Vector matched_noise(const Vector& e, Rng& rng) {
    const double target = norm2(e);
    Vector noise(e.size(), 0.0);
    if (target == 0.0 || e.empty()) return noise;
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& v : noise) {
            v = rng.normal();
            n2 += v * v;
        }
    } while (n2 == 0.0);
    const double scale = target / std::sqrt(n2);
    for (double& v : noise) v *= scale;
    return noise;
}

int sample_index(const Vector& logits, double temperature, double u) {
    Vector probs = masked_softmax(logits, temperature);
    if (!(u >= 0.0) || u >= 1.0)
        throw ContractError("sample_index: uniform draw outside [0, 1)");
    double cum = 0.0;
    int last_finite = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_finite = int(i);
        cum += probs[i];
        if (u < cum) return int(i);
    }
    return last_finite;   // u landed in the rounding tail
}

int sample_token(const Vector& logits, double temperature, Rng& rng) {
    return sample_index(logits, temperature, rng.uniform01());
}

void novelty_decomposition(const Vector& e, const Matrix& head,
                           const std::vector<int>& candidates, double beta,
                           NoveltySignal& out) {
    if (head.cols != e.size())
        throw DimensionError("novelty_decomposition: head/error width mismatch");
    out.e_norm = norm2(e);
    out.tokens.resize(candidates.size());
    out.delta_logit.resize(candidates.size());
    out.cosine.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const int id = candidates[i];
        if (id < 0 || std::size_t(id) >= head.rows)
            throw ContractError("novelty_decomposition: candidate out of range");
        const double* w = head.row(std::size_t(id));
        double ip = 0.0, wn = 0.0;
        for (std::size_t jj = 0; jj < e.size(); ++jj) {
            ip += w[jj] * e[jj];
            wn += w[jj] * w[jj];
        }
        wn = std::sqrt(wn);
        out.tokens[i] = id;
        out.delta_logit[i] = beta * ip;
        out.cosine[i] = (wn > 0.0 && out.e_norm > 0.0) ? ip / (wn * out.e_norm) : 0.0;
    }
}

} // namespace esamp
