#pragma once

// Session configuration plumbing for the CLI: flat key=value files (or a
// flat JSON object), defaults, override merging, a stable config hash, and
// run manifests. Key reference lives in the README; unknown keys are
// rejected so typos fail loudly.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "esamp/backbone.hpp"
#include "esamp/engine.hpp"

namespace esamp {

using KvMap = std::map<std::string, std::string>;

// defaults for every known key
KvMap default_config();

// key=value lines ('#' comments) or, for *.json paths, one flat JSON object
KvMap parse_config_file(const std::string& path);

// start from defaults, overlay the file, overlay CLI overrides; unknown keys
// throw ConfigError naming the key
KvMap resolve_config(const KvMap& file_kv, const KvMap& overrides);

// FNV-1a over the sorted canonical "key=value" lines
uint64_t config_hash(const KvMap& kv);

struct BuiltSession {
    std::unique_ptr<Backbone> backbone;
    SessionConfig session;
    KvMap resolved;
    std::string out_dir;
};

// turn a resolved config into a backbone + session; ConfigError with the
// offending key on any malformed value
BuiltSession build_session(const KvMap& resolved);

struct Manifest {
    uint64_t config_hash = 0;
    std::string build_id;
    uint64_t seed = 0;
    std::string started_at, finished_at;   // UTC, ISO-8601
    std::vector<std::string> outputs;
    KvMap resolved_config;
};

void write_manifest(const std::string& path, const Manifest& m);
std::string build_identifier();
std::string timestamp_utc();

} // namespace esamp
