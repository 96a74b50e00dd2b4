#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "esamp/errors.hpp"
#include "esamp/rng.hpp"
#include "esamp/sampler.hpp"

using namespace esamp;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector random_vec(std::size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Vector v(n);
    for (double& x : v) x = rng.normal() * scale;
    return v;
}

// independent softmax used as the oracle side of the equivalence checks
Vector ref_softmax(const Vector& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    Vector p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

Vector logits_for_probs(const std::vector<double>& probs) {
    Vector l(probs.size());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log(probs[i]);
    return l;
}

} // namespace

TEST_SUITE("sampler") {

TEST_CASE("fusion worked example and identities") {
    const Vector ref{2.0, 0.0}, dist{1.0, 1.0};
    const Vector out = fuse_logits(ref, dist, 0.25);
    CHECK(out[0] == doctest::Approx(2.25).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(-0.25).epsilon(1e-14));

    // β=0 is the bit-exact identity
    const Vector same = fuse_logits(ref, dist, 0.0);
    CHECK(same[0] == ref[0]);
    CHECK(same[1] == ref[1]);

    // equal inputs are a fixed point for any β
    for (double beta : {0.1, 0.25, 1.0, 3.0}) {
        const Vector fp = fuse_logits(ref, ref, beta);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(fp[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }

    // subtraction form keeps the reference coefficient at 1
    const Vector sub = fuse_logits(ref, dist, 0.25, FusionForm::subtraction);
    CHECK(sub[0] == doctest::Approx(2.0 - 0.25).epsilon(1e-14));
    CHECK(sub[1] == doctest::Approx(0.0 - 0.25).epsilon(1e-14));

    CHECK_THROWS_AS((void)fuse_logits(ref, Vector{1.0}, 0.25), DimensionError);
    CHECK_THROWS_AS((void)fuse_logits(ref, dist, std::nan("")), ConfigError);
}

TEST_CASE("latent mixing commutes with the output head") {
    const std::size_t d = 16, vocab = 24;
    Matrix head(vocab, d);
    Rng rng(505);
    for (double& v : head.a) v = rng.normal();
    const Vector hl = random_vec(d, 1), hat = random_vec(d, 2);

    for (double beta : {0.0, 0.25, 0.7}) {
        const Vector mix = fuse_latent(hl, hat, beta);
        // project both ways with an independent loop
        Vector via_latent(vocab, 0.0), lref(vocab, 0.0), ldist(vocab, 0.0);
        for (std::size_t z = 0; z < vocab; ++z)
            for (std::size_t j = 0; j < d; ++j) {
                via_latent[z] += head.at(z, j) * mix[j];
                lref[z] += head.at(z, j) * hl[j];
                ldist[z] += head.at(z, j) * hat[j];
            }
        const Vector via_logits = fuse_logits(lref, ldist, beta);
        for (std::size_t z = 0; z < vocab; ++z)
            CHECK(std::abs(via_latent[z] - via_logits[z]) <= 1e-10);
    }

    const Vector fp = fuse_latent(hl, hl, 0.4);
    for (std::size_t j = 0; j < d; ++j) CHECK(fp[j] == doctest::Approx(hl[j]).epsilon(1e-14));
    CHECK_THROWS_AS((void)fuse_latent(hl, random_vec(d + 1, 3), 0.1), DimensionError);
}

TEST_CASE("intrinsic reward basics") {
    const Vector p{0.5, 0.25, 0.25};
    CHECK(intrinsic_reward(p, p, 0) == 0.0);
    CHECK(intrinsic_reward(p, p, 2) == 0.0);

    const Vector q{0.25, 0.5, 0.25};
    CHECK(intrinsic_reward(p, q, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    const Vector z{0.0, 1.0, 0.0};
    CHECK_THROWS_AS((void)intrinsic_reward(z, p, 0), NumericError);
    CHECK_THROWS_AS((void)intrinsic_reward(p, z, 2), NumericError);
    CHECK_THROWS_AS((void)intrinsic_reward(p, q, 5), ContractError);
}

TEST_CASE("reward-tilted sampling equals fused-logit sampling") {
    // softmax(logits_ref + β·r) must match softmax((1+β)·ref − β·dist): the
    // exploration rule has two equivalent faces
    for (uint64_t seed = 0; seed < 6; ++seed) {
        const Vector lref = random_vec(32, 100 + seed, 2.0);
        const Vector ldist = random_vec(32, 200 + seed, 2.0);
        const Vector r = intrinsic_reward_from_logits(lref, ldist);
        for (double beta : {0.0, 0.1, 0.25, 0.5, 1.0}) {
            Vector tilted(lref.size());
            for (std::size_t i = 0; i < tilted.size(); ++i)
                tilted[i] = lref[i] + beta * r[i];
            const Vector a = ref_softmax(tilted);
            const Vector b = ref_softmax(fuse_logits(lref, ldist, beta));
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK(std::abs(a[i] - b[i]) <= 1e-10);
        }
    }
}

TEST_CASE("fused distribution is the normalized amplification ratio") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        const Vector lref = random_vec(20, 300 + seed, 2.0);
        const Vector ldist = random_vec(20, 400 + seed, 2.0);
        const Vector pref = ref_softmax(lref), qdist = ref_softmax(ldist);
        for (double beta : {0.1, 0.25, 0.5, 1.0}) {
            Vector ratio(pref.size());
            double sum = 0.0;
            for (std::size_t i = 0; i < ratio.size(); ++i) {
                ratio[i] = std::pow(pref[i], 1.0 + beta) / std::pow(qdist[i], beta);
                sum += ratio[i];
            }
            for (double& v : ratio) v /= sum;
            const Vector fused = ref_softmax(fuse_logits(lref, ldist, beta));
            for (std::size_t i = 0; i < ratio.size(); ++i)
                CHECK(std::abs(fused[i] - ratio[i]) <= 1e-10);
        }
    }
}

TEST_CASE("intrinsic reward from logits matches the probability-space value") {
    const Vector lref = random_vec(16, 7, 2.0), ldist = random_vec(16, 8, 2.0);
    const Vector pref = ref_softmax(lref), qdist = ref_softmax(ldist);
    const Vector r = intrinsic_reward_from_logits(lref, ldist);
    for (std::size_t z = 0; z < r.size(); ++z)
        CHECK(r[z] == doctest::Approx(intrinsic_reward(pref, qdist, z)).epsilon(1e-10));
}

TEST_CASE("filters: none, top-k, top-p, min-p against hand-worked cases") {
    const Vector l{3.0, 1.0, 2.0};

    FilterPolicy none;
    const Vector kept = apply_filter(l, none);
    for (std::size_t i = 0; i < l.size(); ++i) CHECK(kept[i] == l[i]);

    FilterPolicy k1{FilterKind::top_k, 1, 0.0};
    const Vector top1 = apply_filter(l, k1);
    CHECK(top1[0] == 3.0);
    CHECK(top1[1] == -kInf);
    CHECK(top1[2] == -kInf);
    CHECK(filter_candidates(l, k1) == std::vector<int>{0});

    FilterPolicy k5{FilterKind::top_k, 5, 0.0};
    CHECK(filter_candidates(l, k5) == std::vector<int>{0, 1, 2});

    // min-p: threshold 0.1 · 0.7 = 0.07 keeps exactly the two largest
    FilterPolicy mp{FilterKind::min_p, 0, 0.1};
    const Vector ml = logits_for_probs({0.7, 0.2, 0.06, 0.04});
    CHECK(filter_candidates(ml, mp) == std::vector<int>{0, 1});

    // top-p: smallest prefix of the sorted list reaching the target mass
    FilterPolicy tp{FilterKind::top_p, 0, 0.7};
    const Vector tl = logits_for_probs({0.4, 0.3, 0.2, 0.1});
    CHECK(filter_candidates(tl, tp) == std::vector<int>{0, 1});
    tp.p = 0.71;
    CHECK(filter_candidates(tl, tp) == std::vector<int>{0, 1, 2});
    tp.p = 1.0;
    CHECK(filter_candidates(tl, tp) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("filter ties go to the lower token id") {
    const Vector flat{1.0, 1.0, 1.0, 1.0};
    FilterPolicy k2{FilterKind::top_k, 2, 0.0};
    CHECK(filter_candidates(flat, k2) == std::vector<int>{0, 1});
    FilterPolicy tp{FilterKind::top_p, 0, 0.5};
    CHECK(filter_candidates(flat, tp) == std::vector<int>{0, 1});
    FilterPolicy mp{FilterKind::min_p, 0, 1.0};
    CHECK(filter_candidates(flat, mp) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("filter and fusion configs reject bad values") {
    const Vector l{1.0, 2.0};
    CHECK_THROWS_AS((void)apply_filter(l, FilterPolicy{FilterKind::top_k, 0, 0.0}), ConfigError);
    CHECK_THROWS_AS((void)apply_filter(l, FilterPolicy{FilterKind::top_p, 0, 0.0}), ConfigError);
    CHECK_THROWS_AS((void)apply_filter(l, FilterPolicy{FilterKind::top_p, 0, 1.5}), ConfigError);
    CHECK_THROWS_AS((void)apply_filter(l, FilterPolicy{FilterKind::min_p, 0, -0.2}), ConfigError);
    CHECK_THROWS_AS((void)apply_filter(Vector{1.0, std::nan("")}, FilterPolicy{}), NumericError);

    FusionConfig fc;
    fc.validate();
    fc.temperature = 0.0;
    CHECK_THROWS_AS(fc.validate(), ConfigError);
    fc.temperature = 1.0;
    fc.beta = kInf;
    CHECK_THROWS_AS(fc.validate(), ConfigError);
    fc.beta = 0.25;
    fc.filter = FilterPolicy{FilterKind::top_k, -3, 0.0};
    CHECK_THROWS_AS(fc.validate(), ConfigError);
}

TEST_CASE("post-filter fusion over the full vocabulary reduces to plain fusion") {
    const Vector lref = random_vec(12, 9, 2.0), ldist = random_vec(12, 10, 2.0);
    std::vector<int> all(12);
    for (int i = 0; i < 12; ++i) all[std::size_t(i)] = i;
    const Vector a = post_filter_fuse(lref, ldist, all, 0.25);
    const Vector b = fuse_logits(lref, ldist, 0.25);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("a singleton candidate set forces that token") {
    const Vector lref = random_vec(8, 11), ldist = random_vec(8, 12);
    for (double beta : {0.0, 0.25, 2.0}) {
        const Vector out = post_filter_fuse(lref, ldist, {5}, beta);
        for (double u : {0.0, 0.31, 0.97})
            CHECK(sample_index(out, 1.0, u) == 5);
    }
    CHECK_THROWS_AS((void)post_filter_fuse(lref, ldist, {}, 0.25), ContractError);
    CHECK_THROWS_AS((void)post_filter_fuse(lref, ldist, {8}, 0.25), ContractError);
}

TEST_CASE("restricted fusion matches the brute-force ratio distribution") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const Vector lref = random_vec(24, 500 + seed, 2.0);
        const Vector ldist = random_vec(24, 600 + seed, 2.0);
        const std::vector<int> cand = filter_candidates(lref, FilterPolicy{FilterKind::top_k, 4, 0.0});
        REQUIRE(cand.size() == 4);

        const double beta = 0.25;
        const Vector fused = post_filter_fuse(lref, ldist, cand, beta);
        const Vector got = masked_softmax(fused);

        // oracle: restrict π_ref^(1+β)/q^β to the candidates, renormalize
        const Vector pref = ref_softmax(lref), qdist = ref_softmax(ldist);
        double sum = 0.0;
        std::vector<double> want(cand.size());
        for (std::size_t i = 0; i < cand.size(); ++i) {
            const std::size_t z = std::size_t(cand[i]);
            want[i] = std::pow(pref[z], 1.0 + beta) / std::pow(qdist[z], beta);
            sum += want[i];
        }
        for (std::size_t i = 0; i < cand.size(); ++i)
            CHECK(std::abs(got[std::size_t(cand[i])] - want[i] / sum) <= 1e-10);
        for (std::size_t z = 0; z < got.size(); ++z)
            if (std::find(cand.begin(), cand.end(), int(z)) == cand.end())
                CHECK(got[z] == 0.0);
    }
}

TEST_CASE("matched noise keeps the magnitude and loses the direction") {
    Rng rng(909);
    const Vector zero(16, 0.0);
    for (double v : matched_noise(zero, rng)) CHECK(v == 0.0);

    const std::size_t d = 64;
    const Vector e = random_vec(d, 13, 2.0);
    const double en = norm2(e);
    double mean_cos = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Vector n = matched_noise(e, rng);
        CHECK(std::abs(norm2(n) - en) <= 1e-12 * (1.0 + en));
        mean_cos += dot(n, e) / (norm2(n) * en);
    }
    mean_cos /= draws;
    CHECK(std::abs(mean_cos) <= 3.0 / std::sqrt(double(d)));
}

TEST_CASE("inverse-CDF sampling walks the cumulative exactly") {
    // uniform logits over 4 tokens: cumulative 0.25 / 0.5 / 0.75 / 1.0
    const Vector flat{1.0, 1.0, 1.0, 1.0};
    CHECK(sample_index(flat, 1.0, 0.6) == 2);
    CHECK(sample_index(flat, 1.0, 0.0) == 0);
    CHECK(sample_index(flat, 1.0, 0.24) == 0);
    CHECK(sample_index(flat, 1.0, 0.25) == 1);
    CHECK(sample_index(flat, 1.0, 0.999) == 3);

    Vector one_alive{-kInf, 4.0, -kInf};
    for (double u : {0.0, 0.5, 0.99}) CHECK(sample_index(one_alive, 1.0, u) == 1);

    CHECK_THROWS_AS((void)sample_index(Vector{-kInf, -kInf}, 1.0, 0.5), ContractError);
    CHECK_THROWS_AS((void)sample_index(flat, 1.0, 1.0), ContractError);
    CHECK_THROWS_AS((void)sample_index(flat, 1.0, -0.1), ContractError);
}

TEST_CASE("sample frequencies follow the softmax within three sigma") {
    const Vector logits{1.2, 0.3, -0.5, 2.0, 0.0};
    const Vector p = ref_softmax(logits);
    Rng rng(7777);
    const int n = 100000;
    std::vector<int> counts(logits.size(), 0);
    for (int i = 0; i < n; ++i) ++counts[std::size_t(sample_token(logits, 1.0, rng))];
    for (std::size_t z = 0; z < p.size(); ++z) {
        const double sigma = std::sqrt(double(n) * p[z] * (1.0 - p[z]));
        CHECK(std::abs(double(counts[z]) - double(n) * p[z]) <= 3.0 * sigma);
    }
}

TEST_CASE("temperature rescales logits before the draw") {
    const Vector logits = random_vec(10, 14, 3.0);
    for (double T : {0.5, 1.7}) {
        Vector manual(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) manual[i] = logits[i] / T;
        for (double u : {0.05, 0.42, 0.88})
            CHECK(sample_index(logits, T, u) == sample_index(manual, 1.0, u));
    }
}

TEST_CASE("a constant-bias distilled head cannot change sampling") {
    const Vector lref = random_vec(16, 15, 2.0);
    for (double c : {-3.0, 0.5, 10.0}) {
        Vector ldist(lref.size());
        for (std::size_t i = 0; i < lref.size(); ++i) ldist[i] = lref[i] + c;
        const Vector a = ref_softmax(fuse_logits(lref, ldist, 0.25));
        const Vector b = ref_softmax(lref);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    }
}

TEST_CASE("novelty decomposition satisfies the three-factor identity") {
    const std::size_t d = 24, vocab = 32;
    Matrix head(vocab, d);
    Rng rng(1616);
    for (double& v : head.a) v = rng.normal();

    std::vector<int> cand{0, 3, 7, 31};
    NoveltySignal sig;

    const Vector zero(d, 0.0);
    novelty_decomposition(zero, head, cand, 0.25, sig);
    CHECK(sig.e_norm == 0.0);
    for (double v : sig.delta_logit) CHECK(v == 0.0);
    for (double v : sig.cosine) CHECK(v == 0.0);

    const Vector e = random_vec(d, 17, 1.5);
    const double beta = 0.25;
    novelty_decomposition(e, head, cand, beta, sig);
    REQUIRE(sig.tokens == cand);
    for (std::size_t i = 0; i < cand.size(); ++i) {
        const double* w = head.row(std::size_t(cand[i]));
        double ip = 0.0, wn = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            ip += w[j] * e[j];
            wn += w[j] * w[j];
        }
        wn = std::sqrt(wn);
        CHECK(std::abs(sig.delta_logit[i] - beta * ip) <= 1e-9);
        CHECK(std::abs(sig.delta_logit[i] - beta * wn * sig.e_norm * sig.cosine[i]) <= 1e-9);
    }

    // aligned error: cosine exactly 1 for the aligned row
    Vector aligned(head.row(3), head.row(3) + d);
    const double an = norm2(aligned);
    for (double& v : aligned) v /= an;
    novelty_decomposition(aligned, head, {3}, beta, sig);
    CHECK(sig.cosine[0] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(novelty_decomposition(random_vec(d + 1, 18), head, cand, beta, sig),
                    DimensionError);
    CHECK_THROWS_AS(novelty_decomposition(e, head, {99}, beta, sig), ContractError);
}

TEST_CASE("fused shift equals the decomposition's per-token delta") {
    // the latent-mix shift (fused − reference logit) must equal β·⟨w_z, e⟩
    const std::size_t d = 16, vocab = 20;
    Matrix head(vocab, d);
    Rng rng(1919);
    for (double& v : head.a) v = rng.normal();

    const Vector hl = random_vec(d, 19), hat = random_vec(d, 20);
    Vector e(d);
    for (std::size_t j = 0; j < d; ++j) e[j] = hl[j] - hat[j];

    const double beta = 0.25;
    const Vector mix = fuse_latent(hl, hat, beta);
    std::vector<int> cand(vocab);
    for (int i = 0; i < int(vocab); ++i) cand[std::size_t(i)] = i;
    NoveltySignal sig;
    novelty_decomposition(e, head, cand, beta, sig);
    for (std::size_t z = 0; z < vocab; ++z) {
        double fz = 0.0, rz = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            fz += head.at(z, j) * mix[j];
            rz += head.at(z, j) * hl[j];
        }
        CHECK(std::abs((fz - rz) - sig.delta_logit[z]) <= 1e-9);
    }
}

} // TEST_SUITE
