#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "esamp/errors.hpp"
#include "esamp/numerics.hpp"
#include "esamp/sampler.hpp"
#include "esamp/synthetic_branch.hpp"
#include "esamp/tiny_transformer.hpp"

using namespace esamp;

namespace {

std::vector<int> token_stream(std::size_t n, uint64_t seed, std::size_t vocab) {
    Rng rng(seed);
    std::vector<int> out(n);
    for (auto& t : out) t = int(rng.next_u64() % vocab);
    return out;
}

struct TempFile {
    std::string path;
    explicit TempFile(const char* name)
        : path((std::filesystem::temp_directory_path() / name).string()) {}
    ~TempFile() { std::filesystem::remove(path); }
};

} // namespace

TEST_SUITE("backbone") {

TEST_CASE("same seed builds the same transformer bit for bit") {
    TinyTransformerConfig cfg;
    TinyTransformer a(cfg), b(cfg);
    auto sa = a.prefill({3, 1, 4});
    auto sb = b.prefill({3, 1, 4});
    for (int t : {1, 5, 9, 2, 6}) {
        const StepOutput oa = a.decode_step(*sa, t);
        const StepOutput ob = b.decode_step(*sb, t);
        CHECK(oa.h1 == ob.h1);
        CHECK(oa.hl == ob.hl);
        CHECK(oa.logits == ob.logits);
    }
}

TEST_CASE("different seeds build different weights") {
    TinyTransformerConfig cfg;
    TinyTransformer a(cfg);
    cfg.spec.seed += 1;
    TinyTransformer b(cfg);
    auto sa = a.prefill({});
    auto sb = b.prefill({});
    CHECK(a.decode_step(*sa, 7).logits != b.decode_step(*sb, 7).logits);
}

TEST_CASE("logits always equal the head applied to the deep state") {
    TinyTransformerConfig cfg;
    TinyTransformer m(cfg);
    auto st = m.prefill({5});
    for (int t : token_stream(20, 99, cfg.spec.vocab)) {
        const StepOutput o = m.decode_step(*st, t);
        const Vector re = m.apply_head(o.hl);
        REQUIRE(re.size() == o.logits.size());
        for (std::size_t z = 0; z < re.size(); ++z)
            CHECK(std::abs(re[z] - o.logits[z]) <= 1e-12);
    }
}

TEST_CASE("two-layer model: the shallow state is the final block's input") {
    TinyTransformerConfig cfg;
    cfg.spec.layers = 2;
    cfg.capture_streams = true;
    TinyTransformer m(cfg);
    auto st = m.prefill({});
    // with capture on, the state stashes the residual stream after each block
    const StepOutput o = m.decode_step(*st, 11);
    const auto& streams = TinyTransformer::captured_streams(*st);
    REQUIRE(streams.size() == 2);
    CHECK(o.h1 == streams[0]);
}

TEST_CASE("head has no bias: zero state gives zero logits") {
    TinyTransformer m{TinyTransformerConfig{}};
    const Vector zero(m.spec().d_model, 0.0);
    for (double v : m.apply_head(zero)) CHECK(v == 0.0);
}

TEST_CASE("head on a unit basis vector reads off one column") {
    TinyTransformer m{TinyTransformerConfig{}};
    const std::size_t j = 13;
    Vector e(m.spec().d_model, 0.0);
    e[j] = 1.0;
    const Vector col = m.apply_head(e);
    for (std::size_t z = 0; z < m.spec().vocab; ++z)
        CHECK(col[z] == m.head().at(z, j));
}

TEST_CASE("head matches an independently coded mat-vec") {
    TinyTransformer m{TinyTransformerConfig{}};
    Rng rng(4242);
    Vector h(m.spec().d_model);
    for (double& x : h) x = rng.normal();
    const Vector got = m.apply_head(h);
    for (std::size_t z = 0; z < m.spec().vocab; ++z) {
        double acc = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) acc += m.head().at(z, i) * h[i];
        CHECK(std::abs(got[z] - acc) <= 1e-12);
    }
}

TEST_CASE("parameter count matches shape-by-shape arithmetic") {
    TinyTransformerConfig cfg;   // |V|=64, d=64, L=4, ffn 256, ctx 256
    const std::size_t V = 64, d = 64, L = 4, f = 256, ctx = 256;
    const std::size_t per_layer = d /*attn_norm*/ + 4 * d * d /*wq..wo*/ +
                                  d /*ffn_norm*/ + 2 * f * d /*gate,up*/ +
                                  d * f /*down*/;
    const std::size_t expected =
        V * d /*tok*/ + ctx * d /*pos*/ + L * per_layer + d /*final_norm*/ + V * d /*head*/;
    CHECK(TinyTransformer::param_count(cfg) == expected);
    CHECK(TinyTransformer(cfg).param_count() == expected);
}

TEST_CASE("prefill then decode equals feeding the prompt token by token") {
    TinyTransformerConfig cfg;
    TinyTransformer m(cfg);
    const std::vector<int> prompt{9, 2, 31, 7};

    auto fast = m.prefill(prompt);
    auto slow = m.prefill({prompt.front()});
    for (std::size_t i = 1; i < prompt.size(); ++i) m.decode_step(*slow, prompt[i]);

    const StepOutput a = m.decode_step(*fast, 5);
    const StepOutput b = m.decode_step(*slow, 5);
    CHECK(a.h1 == b.h1);
    CHECK(a.hl == b.hl);
    CHECK(a.logits == b.logits);
}

TEST_CASE("empty prompt starts at position zero") {
    TinyTransformer m{TinyTransformerConfig{}};
    auto st = m.prefill({});
    CHECK(st->tokens.empty());
    CHECK(st->prompt_len == 0);
    CHECK(st->phase == Phase::decode);
    for (double v : m.decode_step(*st, 0).logits) CHECK(std::isfinite(v));
}

TEST_CASE("token and capacity errors") {
    TinyTransformerConfig cfg;
    cfg.spec.ctx = 4;
    TinyTransformer m(cfg);
    CHECK_THROWS_AS((void)m.prefill({0, 1, int(cfg.spec.vocab)}), InputError);
    CHECK_THROWS_AS((void)m.prefill({0, -1}), InputError);

    auto st = m.prefill({0, 1, 2});
    m.decode_step(*st, 3);                                   // fills the window
    CHECK_THROWS_AS((void)m.decode_step(*st, 4), CapacityError);
}

TEST_CASE("shallow/deep protocol misuse is rejected") {
    TinyTransformer m{TinyTransformerConfig{}};
    auto st = m.prefill({1});
    CHECK_THROWS_AS((void)m.decode_deep(*st), ContractError);
    m.decode_shallow(*st, 2);
    CHECK_THROWS_AS((void)m.decode_shallow(*st, 3), ContractError);
    (void)m.decode_deep(*st);
}

TEST_CASE("checkpoint round trip preserves behavior exactly") {
    TempFile f("esamp_test_tiny.ckpt");
    TinyTransformerConfig cfg;
    cfg.spec.seed = 0xabcdULL;
    TinyTransformer m(cfg);
    m.save(f.path);
    TinyTransformer r = TinyTransformer::load(f.path);
    CHECK(r.spec().vocab == m.spec().vocab);
    CHECK(r.spec().seed == m.spec().seed);

    auto sm = m.prefill({4, 4});
    auto sr = r.prefill({4, 4});
    for (int t : {8, 0, 63}) {
        const StepOutput a = m.decode_step(*sm, t);
        const StepOutput b = r.decode_step(*sr, t);
        CHECK(a.hl == b.hl);
        CHECK(a.logits == b.logits);
    }
}

TEST_CASE("branch model: menu step weights every branch token equally") {
    for (std::size_t M : {2ul, 4ul, 8ul}) {
        SyntheticBranchConfig bc;
        bc.modes = M;
        SyntheticBranchModel m(bc);
        auto st = m.prefill({kSynthWaitToken});
        const StepOutput o = m.decode_step(*st, kSynthGoToken);   // menu step
        const Vector p = softmax(o.logits);
        for (std::size_t k = 0; k < M; ++k) {
            const double pb = p[std::size_t(bc.branch_tokens.empty()
                                                ? int(2 + k)
                                                : bc.branch_tokens[k])];
            CHECK(std::abs(pb - 1.0 / double(M)) <= 1e-6);
        }
    }
}

TEST_CASE("branch model: two uniform picks cover 1.5 modes on average") {
    SyntheticBranchConfig bc;
    bc.modes = 2;
    SyntheticBranchModel m(bc);
    auto st = m.prefill({kSynthWaitToken});
    const Vector p = softmax(m.decode_step(*st, kSynthGoToken).logits);
    // exact enumeration over two independent picks from the menu distribution
    double p_same = 0.0, mass = 0.0;
    for (double v : p) {
        p_same += v * v;
        mass += v;
    }
    CHECK(std::abs(mass - 1.0) <= 1e-12);
    const double expected_distinct = 2.0 - p_same;
    CHECK(std::abs(expected_distinct - 1.5) <= 1e-6);
}

TEST_CASE("branch model: deep state carries the logits in its first block") {
    SyntheticBranchConfig bc;
    SyntheticBranchModel m(bc);
    auto st = m.prefill({kSynthWaitToken});
    const StepOutput o = m.decode_step(*st, kSynthWaitToken);
    const Vector re = m.apply_head(o.hl);
    for (std::size_t z = 0; z < re.size(); ++z)
        CHECK(std::abs(re[z] - o.logits[z]) <= 1e-12);
}

TEST_CASE("branch model: trajectory mode tracks the token after go") {
    SyntheticBranchConfig bc;
    SyntheticBranchModel m(bc);
    const int b2 = bc.branch_tokens.empty() ? 4 : bc.branch_tokens[2];

    CHECK(m.trajectory_mode({kSynthWaitToken, kSynthWaitToken}) == std::nullopt);
    CHECK(m.trajectory_mode({kSynthWaitToken, kSynthGoToken}) == std::nullopt);
    CHECK(m.trajectory_mode({kSynthWaitToken, kSynthGoToken, b2}) == 2);
    CHECK(m.trajectory_mode({kSynthGoToken, b2, 9, 9, 9}) == 2);
    // a non-branch token right after go leaves the trajectory mode-less
    CHECK(m.trajectory_mode({kSynthGoToken, m.body_begin(0)}) == std::nullopt);

    CHECK(m.mode_of_token(b2) == 2);
    CHECK(m.mode_of_token(kSynthWaitToken) == std::nullopt);
    CHECK(m.mode_of_token(m.body_begin(1)) == std::nullopt);
}

TEST_CASE("branch model: every emitted mode label matches its branch token") {
    SyntheticBranchConfig bc;
    SyntheticBranchModel m(bc);
    Rng rng(808);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> toks{kSynthWaitToken};
        auto st = m.prefill({});
        std::optional<int> committed;
        for (int t = 0; t < 50; ++t) {
            const StepOutput o = m.decode_step(*st, toks.back());
            const int z = sample_index(o.logits, 1.0, rng.uniform01());
            toks.push_back(z);
            if (!committed) {
                // first token after the first go commits the trajectory
                for (std::size_t i = 0; i + 1 < toks.size(); ++i)
                    if (toks[i] == kSynthGoToken) {
                        committed = m.mode_of_token(toks[i + 1]);
                        break;
                    }
            }
        }
        CHECK(m.trajectory_mode(toks) == committed);
    }
}

TEST_CASE("branch model rejects malformed setups") {
    SyntheticBranchConfig bad;
    bad.modes = 9;
    CHECK_THROWS_AS((void)SyntheticBranchModel(bad), ConfigError);

    SyntheticBranchConfig dup;
    dup.branch_tokens = {2, 2, 3, 4};
    CHECK_THROWS_AS((void)SyntheticBranchModel(dup), ConfigError);

    SyntheticBranchConfig collide;
    collide.branch_tokens = {kSynthGoToken, 2, 3, 4};
    CHECK_THROWS_AS((void)SyntheticBranchModel(collide), ConfigError);

    SyntheticBranchConfig tiny;
    tiny.vocab = 8;
    CHECK_THROWS_AS((void)SyntheticBranchModel(tiny), ConfigError);
}

TEST_CASE("branch model is deterministic across instances") {
    SyntheticBranchConfig bc;
    SyntheticBranchModel a(bc), b(bc);
    auto sa = a.prefill({kSynthWaitToken});
    auto sb = b.prefill({kSynthWaitToken});
    for (int t : {kSynthWaitToken, kSynthGoToken, 3, 9}) {
        const StepOutput oa = a.decode_step(*sa, t);
        const StepOutput ob = b.decode_step(*sb, t);
        CHECK(oa.h1 == ob.h1);
        CHECK(oa.hl == ob.hl);
    }
}

} // TEST_SUITE
