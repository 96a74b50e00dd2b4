// esamp command-line front end.
//
//   decode        run one decoding session, write trace + generations + metrics inputs
//   bench         vanilla vs sync vs async timing comparison
//   ablate-noise  paired matched-noise ablation sweep on the branch backbone
//   verify        numerical verification suite (solver, decision process, fusion audit)
//   metrics       diversity / coverage metrics over a finished run directory
//
// Every command writes a manifest next to its outputs. Exit codes: 0 success,
// 1 failure (bad input, failed check), 2 command-line parse error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "esamp/config.hpp"
#include "esamp/engine.hpp"
#include "esamp/errors.hpp"
#include "esamp/metrics.hpp"
#include "esamp/rng.hpp"
#include "esamp/synthetic_branch.hpp"
#include "esamp/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace esamp;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out_dir;   // overrides the config's out_dir when set
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_file, "key=value or flat-JSON config file");
    cmd->add_option("--set", c.sets, "override one config key, e.g. --set beta=0.5")
        ->type_name("KEY=VALUE");
    cmd->add_option("--out", c.out_dir, "output directory (overrides out_dir)");
}

KvMap resolve_common(const CommonOpts& c) {
    KvMap file_kv;
    if (!c.config_file.empty()) file_kv = parse_config_file(c.config_file);
    KvMap overrides;
    for (const std::string& s : c.sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!c.out_dir.empty()) overrides["out_dir"] = c.out_dir;
    return resolve_config(file_kv, overrides);
}

Manifest start_manifest(const KvMap& resolved) {
    Manifest m;
    m.config_hash = config_hash(resolved);
    m.build_id = build_identifier();
    m.seed = 0;
    const auto it = resolved.find("seed");
    if (it != resolved.end()) m.seed = std::stoull(it->second);
    m.started_at = timestamp_utc();
    m.resolved_config = resolved;
    return m;
}

void finish_manifest(Manifest& m, const fs::path& path) {
    m.finished_at = timestamp_utc();
    write_manifest(path.string(), m);
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open for writing: " + path.string());
    for (const std::string& l : lines) out << l << '\n';
    if (!out) throw InputError("write failed: " + path.string());
}

std::string join_csv(const Vector& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

double median(std::vector<double> v) {
    if (v.empty()) throw ContractError("median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json json_or_null(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

// per-step phase totals from an in-memory trace (records duplicate the step
// values across rows, so sum each step once)
std::pair<double, double> phase_totals(const Trace& t) {
    double p1 = 0.0, p2 = 0.0;
    uint32_t last = UINT32_MAX;
    for (const TraceRecord& r : t.records) {
        if (r.step == last) continue;
        last = r.step;
        p1 += r.t1_ms;
        p2 += r.t2_ms;
    }
    return {p1, p2};
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

void write_session_outputs(const fs::path& dir, const SessionResult& res,
                           bool include_timings, Manifest& manifest) {
    fs::create_directories(dir);

    save_trace((dir / "trace.jsonl").string(), res.trace, include_timings);

    std::vector<std::string> gen_lines;
    for (const SequenceResult& s : res.sequences) {
        std::ostringstream os;
        for (std::size_t i = 0; i < s.generated.size(); ++i) {
            if (i) os << ' ';
            os << s.generated[i];
        }
        gen_lines.push_back(os.str());
    }
    write_lines(dir / "generations.txt", gen_lines);

    std::vector<std::string> emb_lines;
    for (const Vector& e : res.embeddings) emb_lines.push_back(join_csv(e));
    write_lines(dir / "embeddings.csv", emb_lines);

    std::vector<std::string> div_lines{"step,mean_pairwise_cosine"};
    for (std::size_t t = 0; t < res.divergence.size(); ++t) {
        std::ostringstream os;
        os.precision(17);
        os << t << ',' << res.divergence[t];
        div_lines.push_back(os.str());
    }
    write_lines(dir / "divergence.csv", div_lines);

    manifest.outputs = {"trace.jsonl", "generations.txt", "embeddings.csv",
                        "divergence.csv"};
}

int cmd_decode(const CommonOpts& copts, bool include_timings) {
    const KvMap resolved = resolve_common(copts);
    Manifest manifest = start_manifest(resolved);

    BuiltSession built = build_session(resolved);
    const SessionResult res = run_session(*built.backbone, built.session);

    const fs::path dir(built.out_dir);
    write_session_outputs(dir, res, include_timings, manifest);
    finish_manifest(manifest, dir / "manifest.json");

    const SessionCounters& c = res.counters;
    std::cout << "rows = " << res.sequences.size()
              << "\nsteps = " << built.session.steps
              << "\ndecode_steps = " << c.decode_steps
              << "\ndistiller_updates = " << c.distiller_updates
              << "\nrows_trained = " << c.rows_trained
              << "\nfallbacks = " << c.fallbacks
              << "\nskipped_rows = " << c.skipped_rows
              << "\nfailed_updates = " << c.failed_updates
              << "\ntruncated_sequences = " << c.truncated_sequences
              << "\nring_violations = " << c.ring_violations
              << "\nwall_ms = " << res.wall_ms
              << "\nout_dir = " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchStats {
    std::vector<double> wall, p1, p2;
    SessionCounters last_counters{};
};

BenchStats bench_variant(const Backbone& bb, SessionConfig cfg, int warmup,
                         int reps, int inner) {
    BenchStats st;
    for (int i = 0; i < warmup; ++i) (void)run_session(bb, cfg);
    for (int i = 0; i < reps; ++i) {
        double wall = 0.0, p1 = 0.0, p2 = 0.0;
        for (int j = 0; j < inner; ++j) {
            const SessionResult r = run_session(bb, cfg);
            wall += r.wall_ms;
            const auto [a, b] = phase_totals(r.trace);
            p1 += a;
            p2 += b;
            if (i == reps - 1 && j == inner - 1) st.last_counters = r.counters;
        }
        st.wall.push_back(wall / inner);
        st.p1.push_back(p1 / inner);
        st.p2.push_back(p2 / inner);
    }
    return st;
}

int cmd_bench(const CommonOpts& copts, int warmup, int reps) {
    const KvMap resolved = resolve_common(copts);
    Manifest manifest = start_manifest(resolved);
    BuiltSession built = build_session(resolved);

    SessionConfig vanilla = built.session;
    vanilla.distiller_enabled = false;
    vanilla.pipeline = Pipeline::sync;
    SessionConfig sync = built.session;
    sync.distiller_enabled = true;
    sync.pipeline = Pipeline::sync;
    SessionConfig async = sync;
    async.pipeline = Pipeline::async;

    // size the timing loop so one measurement is well above timer noise
    const SessionResult probe = run_session(*built.backbone, vanilla);
    int inner = 1;
    if (probe.wall_ms < 1.0)
        inner = (int)std::min(1000.0, std::ceil(10.0 / std::max(probe.wall_ms, 0.01)));

    const BenchStats sv = bench_variant(*built.backbone, vanilla, warmup, reps, inner);
    const BenchStats ss = bench_variant(*built.backbone, sync, warmup, reps, inner);
    const BenchStats sa = bench_variant(*built.backbone, async, warmup, reps, inner);

    const double mv = median(sv.wall), ms = median(ss.wall), ma = median(sa.wall);
    const double over_sync = 100.0 * (ms - mv) / mv;
    const double over_async = 100.0 * (ma - mv) / mv;

    json j;
    j["schema"] = "esamp.bench.v1";
    j["warmup"] = warmup;
    j["reps"] = reps;
    j["inner_iterations"] = inner;
    j["hardware_threads"] = (int)std::thread::hardware_concurrency();
    const auto pack = [](const BenchStats& st) {
        json v;
        v["wall_ms"] = st.wall;
        v["median_wall_ms"] = median(st.wall);
        v["median_phase1_ms"] = median(st.p1);
        v["median_phase2_ms"] = median(st.p2);
        return v;
    };
    j["vanilla"] = pack(sv);
    j["sync"] = pack(ss);
    j["async"] = pack(sa);
    j["sync"]["overhead_vs_vanilla_pct"] = over_sync;
    j["async"]["overhead_vs_vanilla_pct"] = over_async;
    j["async"]["overlap_steps"] = sa.last_counters.overlap_steps;
    j["async"]["overlap_eligible"] = sa.last_counters.overlap_eligible;
    j["async"]["fallbacks"] = sa.last_counters.fallbacks;

    const fs::path dir(built.out_dir);
    fs::create_directories(dir);
    std::ofstream out(dir / "bench.json", std::ios::trunc);
    out << j.dump(2) << '\n';
    manifest.outputs = {"bench.json"};
    finish_manifest(manifest, dir / "bench_manifest.json");

    std::printf("variant   median_wall_ms  phase1_ms  phase2_ms  overhead\n");
    std::printf("vanilla   %14.3f  %9.3f  %9.3f  %8s\n", mv, median(sv.p1),
                median(sv.p2), "-");
    std::printf("sync      %14.3f  %9.3f  %9.3f  %7.1f%%\n", ms, median(ss.p1),
                median(ss.p2), over_sync);
    std::printf("async     %14.3f  %9.3f  %9.3f  %7.1f%%\n", ma, median(sa.p1),
                median(sa.p2), over_async);
    std::printf("async overlap: %lld/%lld steps, fallbacks %lld\n",
                sa.last_counters.overlap_steps, sa.last_counters.overlap_eligible,
                sa.last_counters.fallbacks);
    return 0;
}

// ---------------------------------------------------------------------------
// ablate-noise
// ---------------------------------------------------------------------------

// distinct committed modes across each prompt's K rows, averaged over prompts
double mode_coverage(const SyntheticBranchModel& bb, const SessionConfig& cfg,
                     const SessionResult& res) {
    const std::size_t P = cfg.prompts, K = cfg.samples_per_prompt;
    double total = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        std::vector<bool> seen(bb.config().modes, false);
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<int> consumed = cfg.prompt_tokens[p];
            const auto& gen = res.sequences[p * K + k].generated;
            consumed.insert(consumed.end(), gen.begin(), gen.end());
            if (const auto m = bb.trajectory_mode(consumed)) seen[*m] = true;
        }
        for (bool b : seen) total += b ? 1.0 : 0.0;
    }
    return total / double(P);
}

double similarity_or_nan(const std::vector<Vector>& embeddings) {
    try {
        return pairwise_cosine_mean(embeddings);
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

struct PairedSummary {
    double mean_delta = 0.0, ci_lo = 0.0, ci_hi = 0.0;
    int wins = 0, losses = 0, ties = 0;
};

PairedSummary paired(const std::vector<double>& a, const std::vector<double>& b) {
    // summarizes a − b over paired seeds; normal-approximation 95% CI
    PairedSummary s;
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a[i] - b[i];
        if (d[i] > 0) ++s.wins;
        else if (d[i] < 0) ++s.losses;
        else ++s.ties;
    }
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= double(n);
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    var = n > 1 ? var / double(n - 1) : 0.0;
    const double half = 1.96 * std::sqrt(var / double(n));
    s.mean_delta = mean;
    s.ci_lo = mean - half;
    s.ci_hi = mean + half;
    return s;
}

json paired_json(const PairedSummary& s) {
    return json{{"mean_delta", s.mean_delta},
                {"ci95", {s.ci_lo, s.ci_hi}},
                {"wins", s.wins},
                {"losses", s.losses},
                {"ties", s.ties}};
}

int cmd_ablate(const CommonOpts& copts, int seeds) {
    KvMap file_kv;
    if (!copts.config_file.empty()) file_kv = parse_config_file(copts.config_file);
    KvMap overrides;
    overrides["backbone"] = "branch";   // coverage needs queryable ground truth
    for (const std::string& s : copts.sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!copts.out_dir.empty()) overrides["out_dir"] = copts.out_dir;
    const KvMap resolved = resolve_config(file_kv, overrides);
    if (resolved.at("backbone") != "branch")
        throw ConfigError("ablate-noise requires backbone=branch");
    Manifest manifest = start_manifest(resolved);

    BuiltSession built = build_session(resolved);
    const auto& bb = dynamic_cast<const SyntheticBranchModel&>(*built.backbone);

    SessionConfig vanilla = built.session;
    vanilla.distiller_enabled = false;
    SessionConfig noise = built.session;
    noise.distiller_enabled = true;
    noise.fusion.ablation = AblationMode::matched_noise;
    SessionConfig truth = built.session;
    truth.distiller_enabled = true;
    truth.fusion.ablation = AblationMode::off;

    const uint64_t base_seed = built.session.seed;
    std::vector<double> cov_v, cov_n, cov_t, sim_v, sim_n, sim_t;
    std::vector<std::string> csv{"seed,cov_vanilla,cov_noise,cov_true,"
                                 "sim_vanilla,sim_noise,sim_true"};
    for (int i = 0; i < seeds; ++i) {
        const uint64_t seed = base_seed + (uint64_t)i;
        vanilla.seed = noise.seed = truth.seed = seed;
        const SessionResult rv = run_session(bb, vanilla);
        const SessionResult rn = run_session(bb, noise);
        const SessionResult rt = run_session(bb, truth);
        cov_v.push_back(mode_coverage(bb, vanilla, rv));
        cov_n.push_back(mode_coverage(bb, noise, rn));
        cov_t.push_back(mode_coverage(bb, truth, rt));
        sim_v.push_back(similarity_or_nan(rv.embeddings));
        sim_n.push_back(similarity_or_nan(rn.embeddings));
        sim_t.push_back(similarity_or_nan(rt.embeddings));
        std::ostringstream os;
        os.precision(17);
        os << seed << ',' << cov_v.back() << ',' << cov_n.back() << ','
           << cov_t.back() << ',' << sim_v.back() << ',' << sim_n.back() << ','
           << sim_t.back();
        csv.push_back(os.str());
    }

    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / double(v.size());
    };

    json j;
    j["schema"] = "esamp.ablate.v1";
    j["seeds"] = seeds;
    j["base_seed"] = base_seed;
    j["coverage_mean"] = {{"vanilla", mean(cov_v)},
                          {"matched_noise", mean(cov_n)},
                          {"true_error", mean(cov_t)}};
    j["similarity_mean"] = {{"vanilla", json_or_null(mean(sim_v))},
                            {"matched_noise", json_or_null(mean(sim_n))},
                            {"true_error", json_or_null(mean(sim_t))}};
    j["coverage_noise_minus_vanilla"] = paired_json(paired(cov_n, cov_v));
    j["coverage_true_minus_noise"] = paired_json(paired(cov_t, cov_n));
    j["coverage_true_minus_vanilla"] = paired_json(paired(cov_t, cov_v));

    const fs::path dir(built.out_dir);
    fs::create_directories(dir);
    write_lines(dir / "ablate.csv", csv);
    std::ofstream out(dir / "ablate.json", std::ios::trunc);
    out << j.dump(2) << '\n';
    manifest.outputs = {"ablate.csv", "ablate.json"};
    finish_manifest(manifest, dir / "ablate_manifest.json");

    std::printf("coverage: vanilla %.4f | matched_noise %.4f | true_error %.4f\n",
                mean(cov_v), mean(cov_n), mean(cov_t));
    const PairedSummary tn = paired(cov_t, cov_n);
    std::printf("true - noise: %.4f  [%.4f, %.4f] 95%% CI, wins %d/%d\n",
                tn.mean_delta, tn.ci_lo, tn.ci_hi, tn.wins, seeds);
    const PairedSummary nv = paired(cov_n, cov_v);
    std::printf("noise - vanilla: %.4f  [%.4f, %.4f] 95%% CI\n", nv.mean_delta,
                nv.ci_lo, nv.ci_hi);
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

SimplexProblem random_problem(Rng& rng) {
    SimplexProblem p;
    const std::size_t m = 2 + (std::size_t)(rng.next_u64() % 15);   // 2..16
    p.r.resize(m);
    for (double& x : p.r) x = -2.0 + 4.0 * rng.uniform01();
    Vector raw(m);
    for (double& x : raw) x = rng.normal();
    const Vector probs = softmax(raw);
    p.pi_ref = probs;
    // log-uniform α in [0.1, 10]
    p.alpha = std::exp(std::log(0.1) + rng.uniform01() * std::log(100.0));
    return p;
}

int cmd_verify(int problems, int mdps, uint64_t seed, double tol_tv,
               double tol_res, bool inject_fault, const std::string& out_path) {
    bool all_ok = true;
    json report;
    report["schema"] = "esamp.verify.v1";

    // 1. KL solver agreement
    Rng rng(derive_stream(seed, 101));
    double worst_tv = 0.0, worst_res = 0.0, worst_grid = 0.0;
    double worst_gap = -std::numeric_limits<double>::infinity();
    int solved = 0, grid_checked = 0;
    for (int i = 0; i < problems; ++i) {
        const SimplexProblem p = random_problem(rng);
        const Vector star = closed_form_policy(p);
        SolveReport sr;
        const Vector num = solve_kl_numeric(p, &sr);
        const double tv = total_variation(star, num);
        const double res = stationarity_spread(p, star);
        // the closed form must score at least as well as the iterate
        const double gap = kl_objective(p, num) - kl_objective(p, star);
        worst_tv = std::max(worst_tv, tv);
        worst_res = std::max(worst_res, res);
        worst_gap = std::max(worst_gap, gap);
        if (tv <= tol_tv && res <= tol_res && gap <= 1e-8) ++solved;
        if (p.size() <= 3) {
            const Vector grid = solve_kl_grid(p);
            worst_grid = std::max(worst_grid, total_variation(star, grid));
            ++grid_checked;
        }
    }
    const bool kl_ok = solved == problems && worst_grid <= 5e-3;
    all_ok = all_ok && kl_ok;
    report["kl"] = {{"problems", problems},
                    {"within_tolerance", solved},
                    {"max_tv", worst_tv},
                    {"max_stationarity_spread", worst_res},
                    {"max_objective_excess", worst_gap},
                    {"grid_checked", grid_checked},
                    {"max_grid_tv", worst_grid},
                    {"tol_tv", tol_tv},
                    {"tol_residual", tol_res},
                    {"ok", kl_ok}};
    std::printf("[%s] kl-solver: %d/%d within tol, max TV %.3e, max residual %.3e\n",
                kl_ok ? "ok" : "FAIL", solved, problems, worst_tv, worst_res);

    // 2. first-entry reward process: Q* == r on the committing form,
    //    violated on the re-arming control
    int vanish_ok = 0, rearm_violations = 0;
    const auto vmdps = make_vanishing_mdps((std::size_t)mdps, derive_stream(seed, 102));
    for (const ToyMdp& m : vmdps)
        if (check_q_equals_r(m).equality_holds) ++vanish_ok;
    const auto rmdps = make_rearming_mdps((std::size_t)mdps, derive_stream(seed, 103));
    double min_rearm_gap = std::numeric_limits<double>::infinity();
    for (const ToyMdp& m : rmdps) {
        const MdpCheck c = check_q_equals_r(m);
        if (!c.equality_holds) ++rearm_violations;
        min_rearm_gap = std::min(min_rearm_gap, c.max_gap);
    }
    const bool mdp_ok = vanish_ok == mdps && rearm_violations == mdps;
    all_ok = all_ok && mdp_ok;
    report["decision_process"] = {{"vanishing_instances", mdps},
                                  {"vanishing_exact", vanish_ok},
                                  {"rearming_instances", mdps},
                                  {"rearming_violations", rearm_violations},
                                  {"min_rearming_gap", min_rearm_gap},
                                  {"ok", mdp_ok}};
    std::printf("[%s] decision-process: %d/%d exact, %d/%d controls violated "
                "(min gap %.3e)\n",
                mdp_ok ? "ok" : "FAIL", vanish_ok, mdps, rearm_violations, mdps,
                min_rearm_gap);

    // 3. fresh-session fusion audit
    KvMap kv = default_config();
    kv["k"] = "4";
    kv["steps"] = "40";
    kv["seed"] = std::to_string(derive_stream(seed, 104) % 100000);
    kv["prompt"] = "1,2,3";
    BuiltSession built = build_session(kv);
    built.session.capture_audit = true;
    const SessionResult res = run_session(*built.backbone, built.session);
    const AuditReport ar = session_identity_audit(res.audit, built.backbone->head(),
                                                  1e-9, inject_fault);
    all_ok = all_ok && ar.ok;
    report["audit"] = {{"steps_checked", ar.steps_checked},
                       {"tol", ar.tol},
                       {"max_logit_dev", ar.max_logit_dev},
                       {"max_ratio_dev", ar.max_ratio_dev},
                       {"max_recon_dev", ar.max_recon_dev},
                       {"sign_fault_injected", inject_fault},
                       {"ok", ar.ok}};
    if (ar.ok) {
        std::printf("[ok] fusion-audit: %lld decisions replayed, max dev %.3e\n",
                    ar.steps_checked,
                    std::max({ar.max_logit_dev, ar.max_ratio_dev, ar.max_recon_dev}));
    } else {
        std::printf("[FAIL] fusion-audit: first mismatch at step %u row %u "
                    "(logit dev %.3e, ratio dev %.3e, recon dev %.3e)\n",
                    ar.first_bad_step, ar.first_bad_row, ar.max_logit_dev,
                    ar.max_ratio_dev, ar.max_recon_dev);
    }

    report["ok"] = all_ok;
    if (!out_path.empty()) {
        const fs::path p(out_path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::trunc);
        out << report.dump(2) << '\n';
    }
    std::printf("verify: %s\n", all_ok ? "all checks passed" : "FAILURES");
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::vector<Vector> load_embeddings(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open embeddings: " + path.string());
    std::vector<Vector> out;
    std::string line;
    while (std::getline(in, line)) {
        Vector v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<int>> load_generations(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open generations: " + path.string());
    std::vector<std::vector<int>> out;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<int> row;
        std::stringstream ss(line);
        int tok;
        while (ss >> tok) row.push_back(tok);
        out.push_back(std::move(row));
    }
    return out;
}

int cmd_metrics(const std::string& run_dir, int required_token,
                const std::string& correct_file, const std::string& pass_ks) {
    const fs::path dir(run_dir);
    const Trace trace = load_trace((dir / "trace.jsonl").string());
    const std::vector<Vector> embeddings = load_embeddings(dir / "embeddings.csv");
    const std::vector<std::vector<int>> gens = load_generations(dir / "generations.txt");
    const long long n = (long long)gens.size();

    json j;
    j["schema"] = "esamp.metrics.v1";
    j["rows"] = n;
    j["config_hash"] = trace.meta.config_hash;
    // self-embedding values: comparable across runs of this engine only, not
    // to numbers produced with an external embedding model
    j["embedding_source"] = "backbone_self";

    double sim = std::numeric_limits<double>::quiet_NaN();
    double vendi = std::numeric_limits<double>::quiet_NaN();
    try {
        sim = pairwise_cosine_mean(embeddings);
        vendi = vendi_score(embeddings);
    } catch (const Error& e) {
        j["embedding_metrics_error"] = e.what();
    }
    j["pairwise_cosine_mean"] = json_or_null(sim);
    j["vendi_score"] = json_or_null(vendi);
    j["mean_self_logprob"] = json_or_null(mean_self_logprob(trace));

    // correctness: explicit 0/1 file wins; otherwise a required token id
    long long correct = -1;
    if (!correct_file.empty()) {
        std::ifstream in(correct_file);
        if (!in) throw InputError("cannot open correctness file: " + correct_file);
        correct = 0;
        int flag;
        long long rows = 0;
        while (in >> flag) {
            if (flag != 0 && flag != 1)
                throw InputError("correctness file entries must be 0 or 1");
            correct += flag;
            ++rows;
        }
        if (rows != n)
            throw InputError("correctness file has " + std::to_string(rows) +
                             " entries for " + std::to_string(n) + " rows");
        j["correctness_source"] = "file";
    } else if (required_token >= 0) {
        correct = 0;
        for (const auto& g : gens)
            if (std::find(g.begin(), g.end(), required_token) != g.end()) ++correct;
        j["correctness_source"] = "required_token";
        j["required_token"] = required_token;
    }

    if (correct >= 0) {
        j["correct"] = correct;
        json pk = json::object();
        std::stringstream ss(pass_ks);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell.empty()) continue;
            const long long k = std::stoll(cell);
            pk[cell] = pass_at_k(n, correct, k);
        }
        j["pass_at_k"] = pk;
    }

    std::vector<double> divergence;
    {
        std::ifstream in(dir / "divergence.csv");
        std::string line;
        if (in && std::getline(in, line)) {   // header
            while (std::getline(in, line)) {
                const std::size_t comma = line.find(',');
                if (comma == std::string::npos) continue;
                divergence.push_back(std::stod(line.substr(comma + 1)));
            }
        }
    }
    json div = json::array();
    for (double d : divergence) div.push_back(json_or_null(d));
    j["divergence"] = div;

    std::ofstream out(dir / "metrics.json", std::ios::trunc);
    if (!out) throw InputError("cannot write metrics.json in " + run_dir);
    out << j.dump(2) << '\n';

    Manifest manifest;
    manifest.config_hash = trace.meta.config_hash;
    manifest.build_id = build_identifier();
    manifest.seed = trace.meta.seed;
    manifest.started_at = manifest.finished_at = timestamp_utc();
    manifest.outputs = {"metrics.json"};
    write_manifest((dir / "metrics_manifest.json").string(), manifest);

    std::cout << "rows = " << n
              << "\npairwise_cosine_mean = " << sim
              << "\nvendi_score = " << vendi
              << "\nmean_self_logprob = " << mean_self_logprob(trace) << "\n";
    if (correct >= 0) {
        std::cout << "correct = " << correct << "/" << n << "\n";
        for (const auto& [k, v] : j["pass_at_k"].items())
            std::cout << "pass@" << k << " = " << v.get<double>() << "\n";
    }
    std::cout << "note: embedding metrics are self-scored; compare only "
                 "against runs of this engine\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"exploratory sampling engine"};
    app.require_subcommand(1);

    CommonOpts decode_opts;
    bool decode_timings = false;
    CLI::App* decode = app.add_subcommand("decode", "run one decoding session");
    add_common(decode, decode_opts);
    decode->add_flag("--timings", decode_timings,
                     "keep measured wall times in the trace (nondeterministic)");

    CommonOpts bench_opts;
    int bench_warmup = 2, bench_reps = 5;
    CLI::App* bench = app.add_subcommand("bench", "vanilla vs sync vs async timing");
    add_common(bench, bench_opts);
    bench->add_option("--warmup", bench_warmup, "warmup repetitions")
        ->check(CLI::NonNegativeNumber);
    bench->add_option("--reps", bench_reps, "timed repetitions")
        ->check(CLI::PositiveNumber);

    CommonOpts ablate_opts;
    int ablate_seeds = 20;
    CLI::App* ablate = app.add_subcommand("ablate-noise",
                                          "paired matched-noise ablation sweep");
    add_common(ablate, ablate_opts);
    ablate->add_option("--seeds", ablate_seeds, "paired seeds")
        ->check(CLI::PositiveNumber);

    int verify_problems = 200, verify_mdps = 40;
    uint64_t verify_seed = 2024;
    double verify_tol_tv = 1e-5, verify_tol_res = 1e-8;
    bool inject_fault = false;
    std::string verify_out;
    CLI::App* verify = app.add_subcommand("verify", "numerical verification suite");
    verify->add_option("--problems", verify_problems, "KL problems to solve")
        ->check(CLI::PositiveNumber);
    verify->add_option("--mdps", verify_mdps, "decision-process instances per family")
        ->check(CLI::PositiveNumber);
    verify->add_option("--seed", verify_seed, "generator seed");
    verify->add_option("--tol-tv", verify_tol_tv, "total-variation tolerance");
    verify->add_option("--tol-residual", verify_tol_res, "stationarity tolerance");
    verify->add_flag("--inject-fault", inject_fault,
                     "flip the audit combination sign (must cause a failure)");
    verify->add_option("--report", verify_out, "write the JSON report here");

    std::string metrics_run;
    int metrics_token = -1;
    std::string metrics_correct, metrics_ks = "1";
    CLI::App* metrics = app.add_subcommand("metrics", "metrics over a run directory");
    metrics->add_option("--run", metrics_run, "decode output directory")->required();
    metrics->add_option("--required-token", metrics_token,
                        "row counts as correct when it emits this token");
    metrics->add_option("--correct-file", metrics_correct,
                        "file with one 0/1 correctness flag per row");
    metrics->add_option("--pass-k", metrics_ks, "comma-separated k values for pass@k");

    CLI11_PARSE(app, argc, argv);

    try {
        if (decode->parsed()) return cmd_decode(decode_opts, decode_timings);
        if (bench->parsed()) return cmd_bench(bench_opts, bench_warmup, bench_reps);
        if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_seeds);
        if (verify->parsed())
            return cmd_verify(verify_problems, verify_mdps, verify_seed,
                              verify_tol_tv, verify_tol_res, inject_fault,
                              verify_out);
        if (metrics->parsed())
            return cmd_metrics(metrics_run, metrics_token, metrics_correct,
                               metrics_ks);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
