#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/curriculum.hpp"
#include "tablerl/judge.hpp"
#include "tablerl/optimizer.hpp"
#include "tablerl/pipeline.hpp"
#include "tablerl/policy.hpp"
#include "tablerl/reward.hpp"
#include "tablerl/table_env.hpp"
#include "tablerl/trajectory.hpp"

namespace tablerl::cli {

namespace fs = std::filesystem;

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// ----------------------------------------------------------------------------
// JSONL I/O
// ----------------------------------------------------------------------------

template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("input not found: " + path);
    std::vector<T> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid JSON");
        out.push_back(j.get<T>());
    }
    return out;
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write: " + path);
    for (const T& item : items) {
        nlohmann::json j = item;
        f << j.dump() << "\n";
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config not found: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("invalid JSON in " + path);
    return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write: " + path);
    f << j.dump(2) << "\n";
}

// ----------------------------------------------------------------------------
// Shared wiring
// ----------------------------------------------------------------------------

/// Rebuilds the executable task instance behind a spec: prefer the CSV the
/// spec points at, fall back to deterministic regeneration from its seed.
inline env::TaskInstance task_instance_for(const env::TaskSpec& spec) {
    env::TaskInstance inst;
    inst.spec = spec;
    if (!spec.table_path.empty() && fs::exists(spec.table_path)) {
        inst.table = env::read_table_csv(spec.table_path, spec.task_id);
        return inst;
    }
    env::TaskInstance regen = env::generate_task(spec.seed, spec.template_id);
    inst.table = std::move(regen.table);
    return inst;
}

/// Response scorer with the same reward routes as training; records carrying
/// a task backlink get the DSL run hook for Run-routed verification.
inline pipeline::ResponseScorer make_record_scorer(judge::Judge* judge_handle) {
    return [judge_handle](const pipeline::DatasetRecord& r, const std::string& response) {
        env::TaskSpec task = pipeline::record_to_taskspec(r);
        reward::RunHook hook;
        if (r.task_seed && r.template_id) {
            env::TaskInstance inst = env::generate_task(*r.task_seed, *r.template_id);
            hook = reward::make_dsl_run_hook(inst.table);
        }
        return reward::score_response_text(task, response, judge_handle, hook);
    };
}

/// Difficulty-sampling generator: records linked to a synthetic task are
/// answered by rolling out the given policy; free-form records fall back to a
/// noisy reference sampler (correct / corrupted / evasive).
inline pipeline::ResponseGenerator make_response_generator(
    std::shared_ptr<policy::ToyPolicy> pol, size_t rollout_budget = 6) {
    return [pol, rollout_budget](const pipeline::DatasetRecord& r, Rng& rng) -> std::string {
        if (r.task_seed && r.template_id) {
            env::TaskInstance inst = env::generate_task(*r.task_seed, *r.template_id);
            env::RolloutSample s =
                env::rollout_one(*pol, inst.spec, inst.table, rollout_budget, rng);
            return traj::serialize_trajectory(s.trajectory, traj::TagDialect::canonical());
        }
        double u = rng.uniform_real();
        if (u < 0.34) return r.reference_response;
        if (u < 0.67) return "The answer is " + std::to_string(rng.uniform(1000)) + ".";
        return "I am not sure how to answer this.";
    };
}

inline std::unique_ptr<judge::Judge> make_judge(bool mock,
                                                const std::string& endpoint_path) {
    if (mock || endpoint_path.empty()) return std::make_unique<judge::MockJudge>();
    throw ConfigError("HTTP judge endpoints are wired in tools/tablerl.cpp; "
                      "pass --mock-judge for offline runs");
}

// ----------------------------------------------------------------------------
// gen-tasks
// ----------------------------------------------------------------------------

struct GenTasksConfig {
    std::string tasks_out;
    std::string records_out;  // optional
    std::string table_dir = "tables";
    size_t count = 40;
    uint64_t seed = 0;
};

/// Emits a balanced synthetic task corpus, CSV files for path-mode tasks, and
/// (optionally) matching dataset records for the curation pipeline.
inline int cmd_gen_tasks(const GenTasksConfig& cfg) {
    if (cfg.tasks_out.empty()) throw ConfigError("gen-tasks needs --tasks-out");
    if (cfg.count == 0) throw ConfigError("gen-tasks needs --count > 0");
    fs::create_directories(cfg.table_dir);

    const auto& gen_templates = env::general_templates();
    const auto& tab_templates = env::table_agentic_templates();

    std::vector<env::TaskSpec> specs;
    std::vector<pipeline::DatasetRecord> records;
    for (size_t i = 0; i < cfg.count; ++i) {
        int template_id = i % 2 == 0 ? gen_templates[(i / 2) % gen_templates.size()]
                                     : tab_templates[(i / 2) % tab_templates.size()];
        env::TaskInstance inst = env::generate_task(cfg.seed + i, template_id);

        if (inst.spec.input_mode == InputMode::TablePath) {
            fs::path p = fs::path(cfg.table_dir) / (inst.spec.task_id + ".csv");
            inst.spec.table_path = p.string();
            env::write_table_csv(inst.table, p.string());
        }
        specs.push_back(inst.spec);

        if (!cfg.records_out.empty()) {
            pipeline::DatasetRecord r;
            r.id = inst.spec.task_id;
            r.task_type = inst.spec.task_type;
            r.category = inst.spec.category;
            r.prompt = env::render_prompt(inst.spec);
            r.reference_response = traj::serialize_trajectory(
                env::reference_trajectory(inst.spec, inst.table),
                traj::TagDialect::canonical());
            r.label = inst.spec.label;
            r.need_plot = inst.spec.need_plot;
            r.error_style = inst.spec.error_style;
            r.task_seed = inst.spec.seed;
            r.template_id = inst.spec.template_id;
            records.push_back(std::move(r));
        }
    }
    write_jsonl(cfg.tasks_out, specs);
    if (!cfg.records_out.empty()) write_jsonl(cfg.records_out, records);

    std::cout << nlohmann::json{{"tasks", specs.size()},
                                {"records", records.size()},
                                {"table_dir", cfg.table_dir}}
                     .dump()
              << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------------
// pipeline
// ----------------------------------------------------------------------------

struct PipelineCmdConfig {
    std::string in;
    std::string out;
    std::string report_out;  // optional
    uint64_t seed = 0;
    unsigned jobs = 1;
    bool mock_judge = true;
    std::string reg_config;  // unused by the pipeline itself, reserved for parity
    pipeline::PipelineConfig stages;
};

inline int cmd_pipeline(const PipelineCmdConfig& cfg, judge::Judge* judge_handle) {
    if (cfg.in.empty() || cfg.out.empty()) throw ConfigError("pipeline needs --in and --out");
    if (!fs::exists(cfg.in)) throw ConfigError("input not found: " + cfg.in);

    std::vector<pipeline::DatasetRecord> records =
        read_jsonl<pipeline::DatasetRecord>(cfg.in);

    pipeline::PipelineConfig stage_cfg = cfg.stages;
    stage_cfg.seed = cfg.seed;
    stage_cfg.jobs = cfg.jobs;

    auto base_policy = std::make_shared<policy::ToyPolicy>(env::action_vocab());
    pipeline::PipelineResult result =
        pipeline::run_pipeline(std::move(records), stage_cfg,
                               make_record_scorer(judge_handle),
                               make_response_generator(base_policy));

    write_jsonl(cfg.out, result.survivors);

    nlohmann::json report{{"stages", result.stages},
                          {"survivors", result.survivors.size()},
                          {"duplicates_removed", result.duplicates.size()}};
    if (!cfg.report_out.empty()) write_json_file(cfg.report_out, report);
    std::cout << report.dump() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------------
// score
// ----------------------------------------------------------------------------

struct ScoreCmdConfig {
    std::string in;     // trajectory records, one JSON object per line
    std::string tasks;  // task corpus
    std::string out;    // reward breakdowns
    bool mock_judge = true;
    reward::RegConfig reg;
};

inline int cmd_score(const ScoreCmdConfig& cfg, judge::Judge* judge_handle) {
    if (cfg.in.empty() || cfg.tasks.empty() || cfg.out.empty())
        throw ConfigError("score needs --in, --tasks and --out");
    if (!fs::exists(cfg.in)) throw ConfigError("input not found: " + cfg.in);
    if (!fs::exists(cfg.tasks)) throw ConfigError("input not found: " + cfg.tasks);

    std::vector<env::TaskSpec> tasks = read_jsonl<env::TaskSpec>(cfg.tasks);
    std::map<std::string, env::TaskSpec> by_id;
    for (const env::TaskSpec& t : tasks) by_id[t.task_id] = t;

    std::vector<traj::TrajectoryRecord> inputs = read_jsonl<traj::TrajectoryRecord>(cfg.in);

    std::ofstream out(cfg.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + cfg.out);

    size_t failures = 0;
    for (const traj::TrajectoryRecord& rec : inputs) {
        try {
            auto it = by_id.find(rec.task_id);
            if (it == by_id.end())
                throw std::runtime_error("unknown task_id: " + rec.task_id);
            env::TaskInstance inst = task_instance_for(it->second);
            traj::Trajectory t = traj::record_to_trajectory(rec);
            std::vector<StepOutcome> outcomes =
                env::derive_outcomes(t, inst.spec, inst.table);
            reward::RewardBreakdown b = reward::aggregate_return(
                t, outcomes, cfg.reg, inst.spec, judge_handle,
                reward::make_dsl_run_hook(inst.table));
            nlohmann::json j = b;
            out << j.dump() << "\n";
        } catch (const std::exception& e) {
            ++failures;
            out << nlohmann::json{{"task_id", rec.task_id}, {"error", e.what()}}.dump()
                << "\n";
        }
    }
    if (!inputs.empty() && failures == inputs.size()) return kExitRuntime;
    return kExitOk;
}

// ----------------------------------------------------------------------------
// rollout
// ----------------------------------------------------------------------------

struct RolloutCmdConfig {
    std::string tasks;
    std::string out;
    std::string policy_ckpt;  // optional; uniform policy when absent
    size_t group_size = 4;
    size_t budget = 6;
    uint64_t seed = 0;
};

inline int cmd_rollout(const RolloutCmdConfig& cfg) {
    if (cfg.tasks.empty() || cfg.out.empty()) throw ConfigError("rollout needs --tasks and --out");
    if (!fs::exists(cfg.tasks)) throw ConfigError("input not found: " + cfg.tasks);
    if (!cfg.policy_ckpt.empty() && !fs::exists(cfg.policy_ckpt))
        throw ConfigError("checkpoint not found: " + cfg.policy_ckpt);
    if (cfg.group_size < 2) throw ConfigError("rollout needs --group >= 2");

    policy::ToyPolicy pol = cfg.policy_ckpt.empty()
                                ? policy::ToyPolicy(env::action_vocab())
                                : policy::ToyPolicy::load(cfg.policy_ckpt);

    std::vector<env::TaskSpec> tasks = read_jsonl<env::TaskSpec>(cfg.tasks);
    std::vector<traj::TrajectoryRecord> out;
    Rng root(hash_bytes("rollout-cmd", cfg.seed));
    for (const env::TaskSpec& spec : tasks) {
        env::TaskInstance inst = task_instance_for(spec);
        Rng rng = root.split(spec.task_id);
        std::vector<env::RolloutSample> group = env::rollout_group(
            pol, inst.spec, inst.table, cfg.group_size, cfg.budget, rng);
        for (size_t g = 0; g < group.size(); ++g) {
            traj::Trajectory& t = group[g].trajectory;
            t.meta["group_index"] = std::to_string(g);
            out.push_back(traj::make_record(t, traj::TagDialect::canonical()));
        }
    }
    write_jsonl(cfg.out, out);
    std::cout << nlohmann::json{{"trajectories", out.size()}}.dump() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------------
// train
// ----------------------------------------------------------------------------

struct TrainCmdConfig {
    std::string tasks;
    std::string plan;  // optional stage-plan JSON; defaults to default_plan()
    std::string out_dir = "train_out";
    uint64_t seed = 0;
    unsigned jobs = 1;
    bool mock_judge = true;
    reward::RegConfig reg;
};

inline std::vector<curriculum::StageConfig> load_plan(const std::string& path) {
    nlohmann::json j = read_json_file(path);
    if (!j.contains("stages") || !j["stages"].is_array() || j["stages"].empty())
        throw ConfigError("plan must contain a non-empty 'stages' array");
    std::vector<curriculum::StageConfig> plan;
    try {
        for (const nlohmann::json& s : j["stages"])
            plan.push_back(s.get<curriculum::StageConfig>());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid stage plan: ") + e.what());
    }
    return plan;
}

inline int cmd_train(const TrainCmdConfig& cfg, judge::Judge* judge_handle) {
    if (cfg.tasks.empty()) throw ConfigError("train needs --tasks");
    if (!fs::exists(cfg.tasks)) throw ConfigError("input not found: " + cfg.tasks);

    std::vector<curriculum::StageConfig> plan =
        cfg.plan.empty() ? curriculum::default_plan() : load_plan(cfg.plan);
    for (curriculum::StageConfig& stage : plan) {
        stage.hp.seed = hash_bytes("stage-seed",
                                   cfg.seed * 2654435761ULL + static_cast<uint64_t>(stage.stage));
        stage.validate();
    }

    std::vector<env::TaskSpec> specs = read_jsonl<env::TaskSpec>(cfg.tasks);
    if (specs.empty()) throw ConfigError("task corpus is empty");
    curriculum::TaskPools pools;
    for (const env::TaskSpec& spec : specs)
        pools[spec.category.empty() ? "general" : spec.category].push_back(
            task_instance_for(spec));

    fs::create_directories(cfg.out_dir);

    policy::ToyPolicy pol(env::action_vocab());
    curriculum::CurriculumResult result =
        curriculum::run_curriculum(plan, std::move(pools), pol, cfg.reg, judge_handle,
                                   cfg.jobs);

    // per-stage reports, a flat training log, and the final checkpoint
    std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl", std::ios::binary);
    nlohmann::json summary = nlohmann::json::array();
    for (const curriculum::StageReport& report : result.reports) {
        write_json_file(
            (fs::path(cfg.out_dir) / ("stage-" + std::to_string(report.stage) + ".json"))
                .string(),
            report);
        for (const opt::TrainLogEntry& e : report.curve) {
            nlohmann::json j = e;
            j["stage"] = report.stage;
            log << j.dump() << "\n";
        }
        double final_terminal = 0.0;
        if (!report.curve.empty()) {
            size_t window = std::min<size_t>(10, report.curve.size());
            for (size_t i = report.curve.size() - window; i < report.curve.size(); ++i)
                final_terminal += report.curve[i].mean_terminal;
            final_terminal /= static_cast<double>(window);
        }
        summary.push_back({{"stage", report.stage},
                           {"steps_run", report.steps_run},
                           {"aborted", report.aborted},
                           {"retained", report.retained},
                           {"filtered", report.filtered},
                           {"final_mean_terminal", final_terminal}});
    }
    pol.save((fs::path(cfg.out_dir) / "policy.json").string());
    write_json_file((fs::path(cfg.out_dir) / "curriculum.json").string(),
                    {{"stages", summary}});
    std::cout << nlohmann::json{{"stages", summary}}.dump() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------------
// sft-export
// ----------------------------------------------------------------------------

struct SftExportConfig {
    std::string in;
    std::string out;
    double fraction = 0.03;
    uint64_t seed = 0;
};

inline int cmd_sft_export(const SftExportConfig& cfg) {
    if (cfg.in.empty() || cfg.out.empty()) throw ConfigError("sft-export needs --in and --out");
    if (!fs::exists(cfg.in)) throw ConfigError("input not found: " + cfg.in);
    if (cfg.fraction < 0.0 || cfg.fraction > 1.0)
        throw ConfigError("--fraction must lie in [0,1]");

    std::vector<pipeline::DatasetRecord> corpus =
        read_jsonl<pipeline::DatasetRecord>(cfg.in);
    Rng rng(hash_bytes("sft-export", cfg.seed));
    std::vector<pipeline::DatasetRecord> subset =
        curriculum::sample_sft_subset(corpus, cfg.fraction, rng);
    write_jsonl(cfg.out, subset);

    std::map<std::string, size_t> composition;
    for (const pipeline::DatasetRecord& r : subset) ++composition[r.category];
    std::cout << nlohmann::json{{"selected", subset.size()},
                                {"of", corpus.size()},
                                {"composition", composition}}
                     .dump()
              << "\n";
    return kExitOk;
}

}  // namespace tablerl::cli
