#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "esamp/errors.hpp"
#include "esamp/metrics.hpp"
#include "esamp/rng.hpp"

using namespace esamp;

namespace {

Vector unit_vec(std::size_t d, std::size_t axis) {
    Vector v(d, 0.0);
    v[axis] = 1.0;
    return v;
}

Vector random_unit(std::size_t d, uint64_t seed) {
    Rng rng(seed);
    Vector v(d);
    double n = 0.0;
    for (double& x : v) {
        x = rng.normal();
        n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

// exhaustive k-subset enumeration: fraction of subsets hitting >=1 correct,
// with samples 0..c-1 marked correct
double pass_at_k_enumerated(int n, int c, int k) {
    long long total = 0, hit = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (__builtin_popcount(mask) != k) continue;
        ++total;
        if (c > 0 && (mask & ((1u << c) - 1u)) != 0) ++hit;
    }
    return double(hit) / double(total);
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("cosine similarity basics") {
    CHECK(cosine_sim(unit_vec(4, 0), unit_vec(4, 0)) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cosine_sim(unit_vec(4, 0), unit_vec(4, 2)) == doctest::Approx(0.0).epsilon(1e-14));
    Vector neg = unit_vec(4, 1);
    neg[1] = -1.0;
    CHECK(cosine_sim(unit_vec(4, 1), neg) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("pairwise mean over identical and orthogonal sets") {
    const std::vector<Vector> same(5, random_unit(8, 1));
    CHECK(pairwise_cosine_mean(same) == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<Vector> ortho{unit_vec(4, 0), unit_vec(4, 1)};
    CHECK(pairwise_cosine_mean(ortho) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("pairwise mean equals the double-loop oracle") {
    std::vector<Vector> es;
    for (uint64_t s = 0; s < 5; ++s) es.push_back(random_unit(16, 100 + s));
    double acc = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < es.size(); ++i)
        for (std::size_t j = i + 1; j < es.size(); ++j) {
            double ip = 0.0;
            for (std::size_t t = 0; t < es[i].size(); ++t) ip += es[i][t] * es[j][t];
            acc += ip;   // unit vectors: dot is the cosine
            ++pairs;
        }
    CHECK(std::abs(pairwise_cosine_mean(es) - acc / pairs) <= 1e-12);
}

TEST_CASE("pairwise mean ignores order and drops zero embeddings") {
    std::vector<Vector> es;
    for (uint64_t s = 0; s < 6; ++s) es.push_back(random_unit(12, 200 + s));
    const double base = pairwise_cosine_mean(es);

    std::vector<Vector> shuffled = es;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[1], shuffled[4]);
    CHECK(pairwise_cosine_mean(shuffled) == doctest::Approx(base).epsilon(1e-14));

    std::vector<Vector> padded = es;
    padded.insert(padded.begin() + 2, Vector(12, 0.0));
    padded.push_back(Vector(12, 0.0));
    CHECK(pairwise_cosine_mean(padded) == doctest::Approx(base).epsilon(1e-14));

    CHECK_THROWS_AS((void)pairwise_cosine_mean({random_unit(4, 1)}), ContractError);
    CHECK_THROWS_AS((void)pairwise_cosine_mean({random_unit(4, 1), Vector(4, 0.0)}),
                    ContractError);
}

TEST_CASE("effective cluster count collapses and saturates correctly") {
    const Vector v = random_unit(10, 3);
    CHECK(vendi_score(std::vector<Vector>(7, v)) == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<Vector> ortho;
    for (std::size_t i = 0; i < 6; ++i) ortho.push_back(unit_vec(8, i));
    CHECK(vendi_score(ortho) == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("effective cluster count matches the eigenvalue oracle") {
    std::vector<Vector> es;
    for (uint64_t s = 0; s < 6; ++s) es.push_back(random_unit(16, 300 + s));
    const std::size_t n = es.size();

    Matrix K(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double ip = 0.0;
            for (std::size_t t = 0; t < es[i].size(); ++t) ip += es[i][t] * es[j][t];
            K.at(i, j) = ip;
        }
    const Vector lam = sym_eigenvalues(K);
    double entropy = 0.0, lsum = 0.0;
    for (double l : lam) {
        const double p = l / double(n);
        lsum += p;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    CHECK(std::abs(lsum - 1.0) <= 1e-9);   // trace(K) = n
    CHECK(std::abs(vendi_score(es) - std::exp(entropy)) <= 1e-8);
}

TEST_CASE("effective cluster count stays inside its range") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vector> es;
        const std::size_t n = 2 + rng.next_u64() % 6;
        for (std::size_t i = 0; i < n; ++i)
            es.push_back(random_unit(6, 1000 + uint64_t(trial) * 10 + i));
        const double vs = vendi_score(es);
        CHECK(vs >= 1.0 - 1e-9);
        CHECK(vs <= double(n) + 1e-9);
    }
    std::vector<Vector> bad{unit_vec(3, 0), Vector{std::nan(""), 0.0, 0.0}};
    CHECK_THROWS_AS((void)vendi_score(bad), NumericError);
}

TEST_CASE("hit-probability estimator: edge values and the worked case") {
    for (long long k = 1; k <= 6; ++k) {
        CHECK(pass_at_k(6, 0, k) == 0.0);
        CHECK(pass_at_k(6, 6, k) == 1.0);
    }
    // 4 samples, 2 correct, pick 2: of the 6 pairs only {bad,bad} misses
    CHECK(pass_at_k(4, 2, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-14));

    CHECK_THROWS_AS((void)pass_at_k(4, 2, 5), ContractError);
    CHECK_THROWS_AS((void)pass_at_k(4, 2, 0), ContractError);
    CHECK_THROWS_AS((void)pass_at_k(4, 5, 1), ContractError);
}

TEST_CASE("hit-probability estimator matches exhaustive enumeration up to n=12") {
    for (int n = 1; n <= 12; ++n)
        for (int c = 0; c <= n; ++c)
            for (int k = 1; k <= n; ++k)
                CHECK(std::abs(pass_at_k(n, c, k) - pass_at_k_enumerated(n, c, k)) <= 1e-12);
}

TEST_CASE("hit probability grows with both k and the correct count") {
    for (int n = 2; n <= 12; n += 2)
        for (int c = 0; c <= n; ++c)
            for (int k = 1; k < n; ++k) {
                CHECK(pass_at_k(n, c, k + 1) >= pass_at_k(n, c, k) - 1e-15);
                if (c < n) CHECK(pass_at_k(n, c + 1, k) >= pass_at_k(n, c, k) - 1e-15);
            }
}

TEST_CASE("divergence curve: shared prefixes read as similarity one") {
    const Vector shared = random_unit(8, 5);
    std::vector<std::vector<Vector>> steps;
    steps.push_back({shared, shared, shared});   // prompt-only step
    steps.push_back({shared, shared, shared});   // identical continuations
    const std::vector<double> curve = divergence_curve(steps);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(curve[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("divergence curve is the per-step pairwise mean") {
    std::vector<std::vector<Vector>> steps;
    for (uint64_t t = 0; t < 4; ++t) {
        std::vector<Vector> row;
        for (uint64_t r = 0; r < 3; ++r) row.push_back(random_unit(10, 50 + t * 10 + r));
        steps.push_back(row);
    }
    const std::vector<double> curve = divergence_curve(steps);
    REQUIRE(curve.size() == steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t)
        CHECK(curve[t] == doctest::Approx(pairwise_cosine_mean(steps[t])).epsilon(1e-14));
}

TEST_CASE("self-scored likelihood averages the reference log-probs") {
    Trace tr;
    tr.meta.rows = 2;
    tr.meta.steps = 2;
    const double vals[] = {-0.5, -1.5, -2.0, -4.0};
    int i = 0;
    for (uint32_t step = 0; step < 2; ++step)
        for (uint32_t row = 0; row < 2; ++row) {
            TraceRecord rec;
            rec.step = step;
            rec.row = row;
            rec.token = int(i);
            rec.logp_ref = vals[i++];
            tr.records.push_back(rec);
        }
    CHECK(mean_self_logprob(tr) == doctest::Approx(-2.0).epsilon(1e-14));
}

} // TEST_SUITE
