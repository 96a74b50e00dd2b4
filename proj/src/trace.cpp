#include "esamp/trace.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

#include "esamp/errors.hpp"

namespace esamp {

namespace {

using nlohmann::json;

json meta_to_json(const TraceMeta& m) {
    return json{{"kind", "meta"},
                {"schema", m.schema},
                {"seed", m.seed},
                {"rows", m.rows},
                {"steps", m.steps},
                {"beta", m.beta},
                {"temperature", m.temperature},
                {"mode", m.mode},
                {"placement", m.placement},
                {"fusion", m.fusion},
                {"filter", m.filter},
                {"filter_value", m.filter_value},
                {"scope", m.scope},
                {"ablation", m.ablation},
                {"config_hash", m.config_hash}};
}

json record_to_json(const TraceRecord& r, bool include_timings) {
    return json{{"kind", "step"},
                {"step", r.step},
                {"row", r.row},
                {"token", r.token},
                {"u", r.u},
                {"logp_ref", r.logp_ref},
                {"logp_new", r.logp_new},
                {"delta", r.delta},
                {"norm_e", r.norm_e},
                {"cos_align", r.cos_align},
                {"loss", r.loss},
                {"t1_ms", include_timings ? r.t1_ms : 0.0},
                {"t2_ms", include_timings ? r.t2_ms : 0.0},
                {"fallback", r.fallback},
                {"trained", r.trained},
                {"ablated", r.ablated}};
}

double as_double(const json& j, const char* key) {
    const auto& v = j.at(key);
    // nlohmann serializes non-finite doubles as null
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return v.get<double>();
}

} // namespace

void save_trace(const std::string& path, const Trace& trace, bool include_timings) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open trace file for writing: " + path);
    out << meta_to_json(trace.meta).dump() << '\n';
    for (const auto& r : trace.records)
        out << record_to_json(r, include_timings).dump() << '\n';
    out.flush();
    if (!out) throw InputError("trace write failed: " + path);
}

Trace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open trace file: " + path);
    Trace trace;
    std::string line;
    bool have_meta = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("trace line " + std::to_string(lineno) +
                             ": bad JSON: " + e.what());
        }
        try {
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "meta") {
                if (have_meta)
                    throw InputError("trace line " + std::to_string(lineno) +
                                     ": duplicate meta record");
                TraceMeta& m = trace.meta;
                m.schema = j.at("schema").get<std::string>();
                if (m.schema != "esamp.trace.v1")
                    throw InputError("unsupported trace schema: " + m.schema);
                m.seed = j.at("seed").get<uint64_t>();
                m.rows = j.at("rows").get<uint32_t>();
                m.steps = j.at("steps").get<uint32_t>();
                m.beta = as_double(j, "beta");
                m.temperature = as_double(j, "temperature");
                m.mode = j.at("mode").get<std::string>();
                m.placement = j.at("placement").get<std::string>();
                m.fusion = j.at("fusion").get<std::string>();
                m.filter = j.at("filter").get<std::string>();
                m.filter_value = as_double(j, "filter_value");
                m.scope = j.at("scope").get<std::string>();
                m.ablation = j.at("ablation").get<std::string>();
                m.config_hash = j.at("config_hash").get<uint64_t>();
                have_meta = true;
            } else if (kind == "step") {
                if (!have_meta)
                    throw InputError("trace step record before meta record");
                TraceRecord r;
                r.step = j.at("step").get<uint32_t>();
                r.row = j.at("row").get<uint32_t>();
                r.token = j.at("token").get<int>();
                r.u = as_double(j, "u");
                r.logp_ref = as_double(j, "logp_ref");
                r.logp_new = as_double(j, "logp_new");
                r.delta = as_double(j, "delta");
                r.norm_e = as_double(j, "norm_e");
                r.cos_align = as_double(j, "cos_align");
                r.loss = as_double(j, "loss");
                r.t1_ms = as_double(j, "t1_ms");
                r.t2_ms = as_double(j, "t2_ms");
                r.fallback = j.at("fallback").get<bool>();
                r.trained = j.at("trained").get<bool>();
                r.ablated = j.at("ablated").get<bool>();
                trace.records.push_back(r);
            } else {
                throw InputError("trace line " + std::to_string(lineno) +
                                 ": unknown record kind: " + kind);
            }
        } catch (const json::exception& e) {
            throw InputError("trace line " + std::to_string(lineno) +
                             ": missing or mistyped field: " + e.what());
        }
    }
    if (!have_meta) throw InputError("trace has no meta record: " + path);
    return trace;
}

namespace {

bool traces_match(const Trace& a, const Trace& b, bool cross_pipeline) {
    const TraceMeta &x = a.meta, &y = b.meta;
    if (x.schema != y.schema || x.seed != y.seed || x.rows != y.rows ||
        x.steps != y.steps || x.beta != y.beta ||
        x.temperature != y.temperature || x.placement != y.placement ||
        x.fusion != y.fusion || x.filter != y.filter ||
        x.filter_value != y.filter_value || x.scope != y.scope ||
        x.ablation != y.ablation || x.config_hash != y.config_hash)
        return false;
    if (!cross_pipeline && x.mode != y.mode) return false;
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const TraceRecord &r = a.records[i], &s = b.records[i];
        if (r.step != s.step || r.row != s.row || r.token != s.token ||
            r.u != s.u || r.logp_ref != s.logp_ref ||
            r.logp_new != s.logp_new || r.delta != s.delta ||
            r.norm_e != s.norm_e || r.cos_align != s.cos_align ||
            r.loss != s.loss || r.trained != s.trained ||
            r.ablated != s.ablated)
            return false;
        if (!cross_pipeline && r.fallback != s.fallback) return false;
    }
    return true;
}

} // namespace

bool trace_equal_excluding_times(const Trace& a, const Trace& b) {
    return traces_match(a, b, false);
}

bool trace_equal_cross_pipeline(const Trace& a, const Trace& b) {
    return traces_match(a, b, true);
}

} // namespace esamp
