#include "esamp/tiny_transformer.hpp"

#include <cmath>

#include "esamp/checkpoint.hpp"
#include "esamp/errors.hpp"
#include "esamp/rng.hpp"

namespace esamp {

struct TinyTransformer::State final : SequenceState {
    std::vector<Matrix> kcache, vcache;   // per layer, [ctx × d]
    Vector pending_x;                     // residual stream after block 1
    Vector h1;
    bool pending = false;
    std::vector<Vector> streams;          // per-layer post-block streams (capture mode)
};

namespace {

void fill_uniform(Matrix& m, uint64_t seed, uint64_t idx, double scale) {
    Rng rng(derive_stream(seed, idx));
    for (double& v : m.a) v = rng.uniform(-scale, scale);
}

} // namespace

TinyTransformer::TinyTransformer(const TinyTransformerConfig& cfg) : cfg_(cfg) {
    const auto& s = cfg_.spec;
    if (s.layers < 2)
        throw ConfigError("tiny transformer: needs at least 2 layers");
    if (s.heads == 0 || s.d_model % s.heads != 0)
        throw ConfigError("tiny transformer: d_model must be divisible by heads");
    if (s.vocab == 0 || s.ctx == 0 || cfg_.ffn_inner == 0)
        throw ConfigError("tiny transformer: zero-sized dimension");
    init_weights();
}

void TinyTransformer::init_weights() {
    const auto& s = cfg_.spec;
    const std::size_t d = s.d_model, f = cfg_.ffn_inner;
    const double ds = 1.0 / std::sqrt(double(d));
    const double fs = 1.0 / std::sqrt(double(f));

    uint64_t idx = 0;
    tok_emb_ = Matrix(s.vocab, d);
    fill_uniform(tok_emb_, s.seed, idx++, ds);
    pos_emb_ = Matrix(s.ctx, d);
    fill_uniform(pos_emb_, s.seed, idx++, ds);

    layers_.resize(s.layers);
    for (LayerWeights& lw : layers_) {
        lw.attn_norm = Matrix(1, d);
        for (double& v : lw.attn_norm.a) v = 1.0;
        ++idx;
        lw.wq = Matrix(d, d); fill_uniform(lw.wq, s.seed, idx++, ds);
        lw.wk = Matrix(d, d); fill_uniform(lw.wk, s.seed, idx++, ds);
        lw.wv = Matrix(d, d); fill_uniform(lw.wv, s.seed, idx++, ds);
        lw.wo = Matrix(d, d); fill_uniform(lw.wo, s.seed, idx++, ds);
        lw.ffn_norm = Matrix(1, d);
        for (double& v : lw.ffn_norm.a) v = 1.0;
        ++idx;
        lw.w_gate = Matrix(f, d); fill_uniform(lw.w_gate, s.seed, idx++, ds);
        lw.w_up   = Matrix(f, d); fill_uniform(lw.w_up, s.seed, idx++, ds);
        lw.w_down = Matrix(d, f); fill_uniform(lw.w_down, s.seed, idx++, fs);
    }
    final_norm_ = Matrix(1, d);
    for (double& v : final_norm_.a) v = 1.0;
    ++idx;
    head_ = Matrix(s.vocab, d);
    fill_uniform(head_, s.seed, idx++, ds);
}

Vector TinyTransformer::rmsnorm(const Vector& x, const Matrix& gain) const {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms = ms / double(x.size()) + 1e-6;
    const double inv = 1.0 / std::sqrt(ms);
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain.a[i];
    return y;
}

void TinyTransformer::run_block(std::size_t layer, Vector& x, State& st, std::size_t pos) const {
    const auto& s = cfg_.spec;
    const std::size_t d = s.d_model, H = s.heads, dh = d / H;
    const LayerWeights& lw = layers_[layer];

    // attention
    Vector a = rmsnorm(x, lw.attn_norm);
    Vector q = matvec(lw.wq, a), k = matvec(lw.wk, a), v = matvec(lw.wv, a);
    double* krow = st.kcache[layer].row(pos);
    double* vrow = st.vcache[layer].row(pos);
    for (std::size_t i = 0; i < d; ++i) {
        krow[i] = k[i];
        vrow[i] = v[i];
    }
    Vector mixed(d, 0.0);
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    Vector scores(pos + 1);
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t base = h * dh;
        double mx = -1e300;
        for (std::size_t j = 0; j <= pos; ++j) {
            const double* kj = st.kcache[layer].row(j);
            double acc = 0.0;
            for (std::size_t i = 0; i < dh; ++i) acc += q[base + i] * kj[base + i];
            scores[j] = acc * inv_sqrt_dh;
            mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= pos; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            sum += scores[j];
        }
        for (std::size_t j = 0; j <= pos; ++j) {
            const double w = scores[j] / sum;
            const double* vj = st.vcache[layer].row(j);
            for (std::size_t i = 0; i < dh; ++i) mixed[base + i] += w * vj[base + i];
        }
    }
    Vector attn_out = matvec(lw.wo, mixed);
    for (std::size_t i = 0; i < d; ++i) x[i] += attn_out[i];

    // FFN
    Vector b = rmsnorm(x, lw.ffn_norm);
    Matrix bx(1, d);
    for (std::size_t i = 0; i < d; ++i) bx.a[i] = b[i];
    SwiGluParams p{lw.w_gate, lw.w_up, lw.w_down};
    Matrix y = swiglu_forward(p, bx);
    for (std::size_t i = 0; i < d; ++i) x[i] += y.a[i];
}

std::unique_ptr<SequenceState> TinyTransformer::prefill(const std::vector<int>& prompt) const {
    const auto& s = cfg_.spec;
    auto st = std::make_unique<State>();
    st->kcache.assign(s.layers, Matrix(s.ctx, s.d_model));
    st->vcache.assign(s.layers, Matrix(s.ctx, s.d_model));
    st->phase = Phase::prefill;
    for (int t : prompt) {
        decode_shallow(*st, t);
        decode_deep(*st);
    }
    st->prompt_len = st->tokens.size();
    st->phase = Phase::decode;
    return st;
}

const Vector& TinyTransformer::decode_shallow(SequenceState& s, int token) const {
    auto& st = dynamic_cast<State&>(s);
    if (st.pending)
        throw ContractError("tiny transformer: decode_deep not called for previous token");
    check_token(token);
    const std::size_t pos = st.tokens.size();
    if (pos >= cfg_.spec.ctx)
        throw CapacityError("tiny transformer: context window exhausted");

    const std::size_t d = cfg_.spec.d_model;
    Vector x(d);
    const double* te = tok_emb_.row(std::size_t(token));
    const double* pe = pos_emb_.row(pos);
    for (std::size_t i = 0; i < d; ++i) x[i] = te[i] + pe[i];

    if (cfg_.capture_streams) st.streams.clear();
    run_block(0, x, st, pos);
    if (cfg_.capture_streams) st.streams.push_back(x);

    st.h1 = (cfg_.spec.tap == ShallowTap::post_block) ? x : rmsnorm(x, layers_[1].attn_norm);
    st.pending_x = std::move(x);
    st.tokens.push_back(token);
    st.pending = true;
    return st.h1;
}

StepOutput TinyTransformer::decode_deep(SequenceState& s) const {
    auto& st = dynamic_cast<State&>(s);
    if (!st.pending)
        throw ContractError("tiny transformer: no pending shallow step");
    const std::size_t pos = st.tokens.size() - 1;

    Vector x = std::move(st.pending_x);
    for (std::size_t l = 1; l < cfg_.spec.layers; ++l) {
        run_block(l, x, st, pos);
        if (cfg_.capture_streams) st.streams.push_back(x);
    }
    StepOutput out;
    out.h1 = st.h1;
    out.hl = rmsnorm(x, final_norm_);
    if (st.phase == Phase::decode) out.logits = matvec(head_, out.hl);
    st.pending = false;
    return out;
}

const std::vector<Vector>& TinyTransformer::captured_streams(const SequenceState& s) {
    return dynamic_cast<const State&>(s).streams;
}

std::size_t TinyTransformer::param_count(const TinyTransformerConfig& cfg) {
    const auto& s = cfg.spec;
    const std::size_t d = s.d_model, f = cfg.ffn_inner;
    return s.vocab * d + s.ctx * d +
           s.layers * (d + 4 * d * d + d + 3 * d * f) +
           d + s.vocab * d;
}

std::size_t TinyTransformer::param_count() const { return param_count(cfg_); }

void TinyTransformer::save(const std::string& path) const {
    Checkpoint c;
    c.kind = kKindTinyTransformer;
    const auto& s = cfg_.spec;
    c.fields = {s.vocab, s.d_model, s.layers, s.heads, s.ctx,
                cfg_.ffn_inner, uint64_t(s.tap), s.seed};
    c.tensors.push_back(tok_emb_);
    c.tensors.push_back(pos_emb_);
    for (const LayerWeights& lw : layers_) {
        c.tensors.push_back(lw.attn_norm);
        c.tensors.push_back(lw.wq);
        c.tensors.push_back(lw.wk);
        c.tensors.push_back(lw.wv);
        c.tensors.push_back(lw.wo);
        c.tensors.push_back(lw.ffn_norm);
        c.tensors.push_back(lw.w_gate);
        c.tensors.push_back(lw.w_up);
        c.tensors.push_back(lw.w_down);
    }
    c.tensors.push_back(final_norm_);
    c.tensors.push_back(head_);
    save_checkpoint(path, c);
}

TinyTransformer TinyTransformer::load(const std::string& path) {
    Checkpoint c = load_checkpoint(path);
    if (c.kind != kKindTinyTransformer)
        throw InputError("tiny transformer: checkpoint kind mismatch");
    if (c.fields.size() != 8)
        throw InputError("tiny transformer: unexpected field count");

    TinyTransformerConfig cfg;
    cfg.spec.vocab = c.fields[0];
    cfg.spec.d_model = c.fields[1];
    cfg.spec.layers = c.fields[2];
    cfg.spec.heads = c.fields[3];
    cfg.spec.ctx = c.fields[4];
    cfg.ffn_inner = c.fields[5];
    cfg.spec.tap = ShallowTap(c.fields[6]);
    cfg.spec.seed = c.fields[7];

    TinyTransformer model(cfg);
    const std::size_t expect = 2 + cfg.spec.layers * 9 + 2;
    if (c.tensors.size() != expect)
        throw InputError("tiny transformer: unexpected tensor count");

    std::size_t i = 0;
    auto take = [&](Matrix& dst) {
        if (!dst.same_shape(c.tensors[i]))
            throw InputError("tiny transformer: tensor shape mismatch in checkpoint");
        dst = std::move(c.tensors[i++]);
    };
    take(model.tok_emb_);
    take(model.pos_emb_);
    for (LayerWeights& lw : model.layers_) {
        take(lw.attn_norm);
        take(lw.wq);
        take(lw.wk);
        take(lw.wv);
        take(lw.wo);
        take(lw.ffn_norm);
        take(lw.w_gate);
        take(lw.w_up);
        take(lw.w_down);
    }
    take(model.final_norm_);
    take(model.head_);
    return model;
}

} // namespace esamp
