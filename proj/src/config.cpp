#include "esamp/config.hpp"

#include <cctype>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "esamp/errors.hpp"
#include "esamp/synthetic_branch.hpp"
#include "esamp/tiny_transformer.hpp"

namespace esamp {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace((unsigned char)s[b])) ++b;
    while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
    return s.substr(b, e - b);
}

long long to_int(const KvMap& kv, const std::string& key) {
    const std::string& v = kv.at(key);
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const KvMap& kv, const std::string& key) {
    const std::string& v = kv.at(key);
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

uint64_t to_u64(const KvMap& kv, const std::string& key) {
    const std::string& v = kv.at(key);
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

bool to_bool(const KvMap& kv, const std::string& key) {
    const std::string& v = kv.at(key);
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected on/off, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            std::size_t pos = 0;
            out.push_back(std::stoi(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': bad token id '" + item + "'");
        }
    }
    if (out.empty())
        throw ConfigError("config key '" + key + "': empty token list");
    return out;
}

} // namespace

KvMap default_config() {
    return {
        {"backbone", "tiny"},
        {"beta", "0.25"},
        {"temperature", "1.0"},
        {"filter", "none"},
        {"filter_k", "0"},
        {"filter_p", "0"},
        {"placement", "latent_mix"},
        {"form", "amplified"},
        {"ablation", "off"},
        {"scope", "shared"},
        {"pipeline", "sync"},
        {"prompts", "1"},
        {"k", "1"},
        {"steps", "16"},
        {"seed", "1"},
        {"prompt", "0"},
        {"distiller", "on"},
        {"train", "on"},
        {"hidden", "384"},
        {"lr", "0.0004"},
        {"eps", "0.0001"},
        {"clip", "0.5"},
        {"init_scale", "1.0"},
        {"distiller_seed", "7"},
        {"rendezvous_timeout_ms", "10000"},
        {"ring_capacity", "0"},
        {"tiny.vocab", "64"},
        {"tiny.d_model", "64"},
        {"tiny.layers", "4"},
        {"tiny.heads", "2"},
        {"tiny.ctx", "0"},          // 0 = prompt length + steps
        {"tiny.ffn_inner", "256"},
        {"tiny.tap", "post_block"},
        {"tiny.seed", "24333"},
        {"branch.modes", "4"},
        {"branch.vocab", "64"},
        {"branch.scratch", "16"},
        {"branch.seed", "1234"},
        {"out_dir", "esamp_out"},
    };
}

KvMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    KvMap kv;
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + path + ": bad JSON: " + e.what());
        }
        if (!j.is_object())
            throw ConfigError("config file " + path + ": expected a flat JSON object");
        for (const auto& [key, val] : j.items()) {
            if (val.is_string())
                kv[key] = val.get<std::string>();
            else if (val.is_boolean())
                kv[key] = val.get<bool>() ? "on" : "off";
            else if (val.is_number() || val.is_null())
                kv[key] = val.dump();
            else
                throw ConfigError("config key '" + key + "': nested values not allowed");
        }
        return kv;
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file " + path + " line " +
                              std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw ConfigError("config file " + path + " line " +
                              std::to_string(lineno) + ": empty key");
        kv[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

KvMap resolve_config(const KvMap& file_kv, const KvMap& overrides) {
    KvMap out = default_config();
    const auto merge = [&](const KvMap& src) {
        for (const auto& [k, v] : src) {
            // per-prompt token lists are the only open-ended key family
            if (out.find(k) == out.end() && k.rfind("prompt.", 0) != 0)
                throw ConfigError("unknown config key: '" + k + "'");
            out[k] = v;
        }
    };
    merge(file_kv);
    merge(overrides);
    return out;
}

uint64_t config_hash(const KvMap& kv) {
    uint64_t h = 0xcbf29ce484222325ULL;
    const auto feed = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [k, v] : kv) {   // std::map iterates sorted
        if (k == "out_dir") continue; // where results land, not what runs
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    return h;
}

BuiltSession build_session(const KvMap& kv) {
    BuiltSession out;
    out.resolved = kv;
    out.out_dir = kv.at("out_dir");

    SessionConfig& s = out.session;
    s.prompts = (std::size_t)to_int(kv, "prompts");
    s.samples_per_prompt = (std::size_t)to_int(kv, "k");
    s.steps = (std::size_t)to_int(kv, "steps");
    s.seed = to_u64(kv, "seed");
    s.fusion.beta = to_double(kv, "beta");
    s.fusion.temperature = to_double(kv, "temperature");

    const std::string filter = kv.at("filter");
    if (filter == "none")
        s.fusion.filter.kind = FilterKind::none;
    else if (filter == "top_k") {
        s.fusion.filter.kind = FilterKind::top_k;
        s.fusion.filter.k = (int)to_int(kv, "filter_k");
    } else if (filter == "top_p") {
        s.fusion.filter.kind = FilterKind::top_p;
        s.fusion.filter.p = to_double(kv, "filter_p");
    } else if (filter == "min_p") {
        s.fusion.filter.kind = FilterKind::min_p;
        s.fusion.filter.p = to_double(kv, "filter_p");
    } else {
        throw ConfigError("config key 'filter': unknown policy '" + filter + "'");
    }

    const std::string placement = kv.at("placement");
    if (placement == "latent_mix")
        s.fusion.placement = FusionPlacement::latent_mix;
    else if (placement == "post_filter")
        s.fusion.placement = FusionPlacement::post_filter;
    else
        throw ConfigError("config key 'placement': unknown value '" + placement + "'");

    const std::string form = kv.at("form");
    if (form == "amplified")
        s.fusion.form = FusionForm::amplified;
    else if (form == "subtraction")
        s.fusion.form = FusionForm::subtraction;
    else
        throw ConfigError("config key 'form': unknown value '" + form + "'");

    const std::string ablation = kv.at("ablation");
    if (ablation == "off")
        s.fusion.ablation = AblationMode::off;
    else if (ablation == "matched_noise")
        s.fusion.ablation = AblationMode::matched_noise;
    else
        throw ConfigError("config key 'ablation': unknown value '" + ablation + "'");

    const std::string scope = kv.at("scope");
    if (scope == "shared")
        s.scope = DistillerScope::shared;
    else if (scope == "per_prompt")
        s.scope = DistillerScope::per_prompt;
    else
        throw ConfigError("config key 'scope': unknown value '" + scope + "'");

    const std::string pipeline = kv.at("pipeline");
    if (pipeline == "sync")
        s.pipeline = Pipeline::sync;
    else if (pipeline == "async")
        s.pipeline = Pipeline::async;
    else
        throw ConfigError("config key 'pipeline': unknown value '" + pipeline + "'");

    s.distiller_enabled = to_bool(kv, "distiller");
    s.train = to_bool(kv, "train");
    s.distiller.hidden = (std::size_t)to_int(kv, "hidden");
    s.distiller.adam.lr = to_double(kv, "lr");
    s.distiller.adam.eps = to_double(kv, "eps");
    s.distiller.adam.clip = to_double(kv, "clip");
    s.distiller.init_scale = to_double(kv, "init_scale");
    s.distiller.seed = to_u64(kv, "distiller_seed");
    s.rendezvous_timeout_ms = to_double(kv, "rendezvous_timeout_ms");
    s.ring_capacity = (std::size_t)to_int(kv, "ring_capacity");

    const std::vector<int> shared_prompt = to_int_list(kv.at("prompt"), "prompt");
    s.prompt_tokens.assign(s.prompts, shared_prompt);
    std::size_t max_prompt_len = shared_prompt.size();
    for (std::size_t p = 0; p < s.prompts; ++p) {
        const std::string key = "prompt." + std::to_string(p);
        const auto it = kv.find(key);
        if (it == kv.end()) continue;
        s.prompt_tokens[p] = to_int_list(it->second, key);
        max_prompt_len = std::max(max_prompt_len, s.prompt_tokens[p].size());
    }

    const std::string backbone = kv.at("backbone");
    if (backbone == "tiny") {
        TinyTransformerConfig tc;
        tc.spec.vocab = (std::size_t)to_int(kv, "tiny.vocab");
        tc.spec.d_model = (std::size_t)to_int(kv, "tiny.d_model");
        tc.spec.layers = (std::size_t)to_int(kv, "tiny.layers");
        tc.spec.heads = (std::size_t)to_int(kv, "tiny.heads");
        tc.spec.ctx = (std::size_t)to_int(kv, "tiny.ctx");
        if (tc.spec.ctx == 0) tc.spec.ctx = max_prompt_len + s.steps;
        tc.spec.seed = to_u64(kv, "tiny.seed");
        tc.ffn_inner = (std::size_t)to_int(kv, "tiny.ffn_inner");
        const std::string tap = kv.at("tiny.tap");
        if (tap == "post_block")
            tc.spec.tap = ShallowTap::post_block;
        else if (tap == "post_norm")
            tc.spec.tap = ShallowTap::post_norm;
        else
            throw ConfigError("config key 'tiny.tap': unknown value '" + tap + "'");
        out.backbone = std::make_unique<TinyTransformer>(tc);
    } else if (backbone == "branch") {
        SyntheticBranchConfig bc;
        bc.modes = (std::size_t)to_int(kv, "branch.modes");
        bc.vocab = (std::size_t)to_int(kv, "branch.vocab");
        bc.scratch = (std::size_t)to_int(kv, "branch.scratch");
        bc.seed = to_u64(kv, "branch.seed");
        out.backbone = std::make_unique<SyntheticBranchModel>(bc);
    } else {
        throw ConfigError("config key 'backbone': unknown value '" + backbone + "'");
    }

    s.distiller.d = out.backbone->spec().d_model;
    s.config_hash = config_hash(kv);
    s.validate();
    return out;
}

void write_manifest(const std::string& path, const Manifest& m) {
    nlohmann::json j;
    j["schema"] = "esamp.manifest.v1";
    j["config_hash"] = m.config_hash;
    j["build"] = m.build_id;
    j["seed"] = m.seed;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["outputs"] = m.outputs;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : m.resolved_config) cfg[k] = v;
    j["config"] = cfg;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open manifest for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw InputError("manifest write failed: " + path);
}

std::string build_identifier() {
    return std::string("esamp 0.1.0 (") + __VERSION__ + ")";
}

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace esamp
