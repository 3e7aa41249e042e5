#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/optimizer.hpp"
#include "tablerl/pipeline.hpp"
#include "tablerl/reward.hpp"
#include "tablerl/table_env.hpp"

namespace tablerl::curriculum {

// ----------------------------------------------------------------------------
// Stage configuration
// ----------------------------------------------------------------------------

class EmptyMixCategory : public std::runtime_error {
public:
    explicit EmptyMixCategory(const std::string& category)
        : std::runtime_error("stage mix requires category '" + category +
                             "' but its task pool is empty") {}
};

struct StageConfig {
    int stage = 1;
    std::map<std::string, double> mix;  // category -> sampling proportion
    int max_steps = 200;
    int passk_k = 8;
    int band_low = 3;
    int band_high = 7;
    opt::HyperParams hp;

    void validate() const {
        if (stage < 1) throw std::invalid_argument("stage index must be >= 1");
        if (max_steps < 0) throw std::invalid_argument("max_steps must be non-negative");
        double sum = 0.0;
        for (const auto& [cat, p] : mix) {
            if (p < 0.0) throw std::invalid_argument("mix proportion for '" + cat +
                                                     "' is negative");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("stage mix must sum to 1");
        if (!(0 <= band_low && band_low <= band_high && band_high <= passk_k))
            throw std::invalid_argument("retention band must satisfy 0 <= low <= high <= k");
        hp.validate();
    }
};

inline void to_json(nlohmann::json& j, const StageConfig& c) {
    j = nlohmann::json{{"stage", c.stage},
                       {"mix", c.mix},
                       {"max_steps", c.max_steps},
                       {"passk_k", c.passk_k},
                       {"band", nlohmann::json::array({c.band_low, c.band_high})},
                       {"hyperparams", c.hp}};
}

inline void from_json(const nlohmann::json& j, StageConfig& c) {
    j.at("stage").get_to(c.stage);
    c.mix = j.at("mix").get<std::map<std::string, double>>();
    c.max_steps = j.value("max_steps", 200);
    c.passk_k = j.value("passk_k", 8);
    if (j.contains("band")) {
        c.band_low = j.at("band").at(0).get<int>();
        c.band_high = j.at("band").at(1).get<int>();
    }
    if (j.contains("hyperparams")) c.hp = j.at("hyperparams").get<opt::HyperParams>();
    c.validate();
}

/// Stage mixes default to general-dominated, then table-heavy, then hard-only.
inline std::vector<StageConfig> default_plan() {
    std::vector<StageConfig> plan(3);
    plan[0].stage = 1;
    plan[0].mix = {{"general", 0.8}, {"table_agentic", 0.2}};
    plan[1].stage = 2;
    plan[1].mix = {{"general", 0.3}, {"table_agentic", 0.7}};
    plan[2].stage = 3;
    plan[2].mix = {{"hard", 1.0}};
    return plan;
}

// Task pools keyed by data-mix category.
using TaskPools = std::map<std::string, std::vector<env::TaskInstance>>;

struct StageReport {
    int stage = 0;
    int steps_run = 0;
    bool aborted = false;  // set only by a non-finite gradient
    std::vector<opt::TrainLogEntry> curve;
    std::map<std::string, size_t> composition;     // sampled category counts
    size_t retained = 0;                           // pass@k outcome into the next stage
    size_t filtered = 0;
    std::map<std::string, int> success_counts;     // task_id -> successes out of k
    std::map<std::string, double> sample_scores;   // task_id -> 0-10 scale mean score

    void check() const {
        if (steps_run > static_cast<int>(curve.size()))
            throw std::logic_error("steps_run exceeds curve length");
    }
};

inline void to_json(nlohmann::json& j, const StageReport& r) {
    j = nlohmann::json{{"stage", r.stage},
                       {"steps_run", r.steps_run},
                       {"aborted", r.aborted},
                       {"curve", r.curve},
                       {"composition", r.composition},
                       {"retained", r.retained},
                       {"filtered", r.filtered},
                       {"success_counts", r.success_counts},
                       {"sample_scores", r.sample_scores}};
}

// ----------------------------------------------------------------------------
// Stage execution
// ----------------------------------------------------------------------------

/// Runs one RL stage: tasks are drawn per the stage mix each step, training
/// stops at max_steps, and only a non-finite gradient aborts early.
inline StageReport run_stage(const StageConfig& cfg, const TaskPools& pools,
                             policy::ToyPolicy& pol, const reward::RegConfig& reg,
                             judge::Judge* judge_handle) {
    cfg.validate();
    std::vector<std::pair<std::string, double>> mix_order(cfg.mix.begin(), cfg.mix.end());
    for (const auto& [cat, p] : mix_order) {
        if (p <= 0.0) continue;
        auto it = pools.find(cat);
        if (it == pools.end() || it->second.empty()) throw EmptyMixCategory(cat);
    }

    StageReport report;
    report.stage = cfg.stage;

    opt::TrainContext ctx;
    ctx.reg = reg;
    ctx.judge = judge_handle;
    ctx.next_task = [&](int, Rng& rng) -> const env::TaskInstance& {
        double u = rng.uniform_real();
        double acc = 0.0;
        const std::string* chosen = &mix_order.back().first;
        for (const auto& [cat, p] : mix_order) {
            acc += p;
            if (u < acc) {
                chosen = &cat;
                break;
            }
        }
        const std::vector<env::TaskInstance>& pool = pools.at(*chosen);
        ++report.composition[*chosen];
        return pool[rng.uniform(pool.size())];
    };

    Rng rng(hash_bytes("stage-loop", cfg.hp.seed + static_cast<uint64_t>(cfg.stage) * 977));
    for (int step = 0; step < cfg.max_steps; ++step) {
        try {
            report.curve.push_back(opt::train_step(pol, ctx, cfg.hp, step, rng));
        } catch (const opt::NonFiniteGradient&) {
            report.aborted = true;
            break;
        }
        ++report.steps_run;
    }
    report.check();
    return report;
}

// ----------------------------------------------------------------------------
// Inter-stage filtering
// ----------------------------------------------------------------------------

struct PasskOutcome {
    std::vector<env::TaskInstance> retained;
    std::map<std::string, int> success_counts;    // task_id -> successes out of k
    std::map<std::string, double> sample_scores;  // task_id -> mean terminal * 10
};

/// Retention is a pure function of the success count: inside the band stays,
/// both too-easy and too-hard samples drop.
constexpr bool passk_retained(int successes, int band_low, int band_high) {
    return successes >= band_low && successes <= band_high;
}

/// Rolls each task k times with the current policy and keeps samples whose
/// success count (terminal reward >= 0.7) lies inside [band_low, band_high].
inline PasskOutcome filter_passk(const std::vector<env::TaskInstance>& corpus,
                                 const policy::ToyPolicy& pol, const reward::RegConfig& reg,
                                 judge::Judge* judge_handle, int k, int band_low,
                                 int band_high, uint64_t seed, unsigned jobs = 1,
                                 size_t rollout_budget = 6) {
    if (k < band_high)
        throw std::invalid_argument("pass@k needs k >= the retention band's upper edge");

    std::vector<int> successes(corpus.size(), 0);
    std::vector<double> means(corpus.size(), 0.0);
    parallel_for(corpus.size(), jobs, [&](size_t i) {
        const env::TaskInstance& inst = corpus[i];
        Rng rng(hash_bytes(inst.spec.task_id, hash_bytes("passk", seed)));
        reward::RunHook hook = reward::make_dsl_run_hook(inst.table);
        double sum = 0.0;
        int wins = 0;
        for (int rep = 0; rep < k; ++rep) {
            env::RolloutSample r =
                env::rollout_one(pol, inst.spec, inst.table, rollout_budget, rng);
            reward::RewardBreakdown b = reward::aggregate_return(
                r.trajectory, r.outcomes, reg, inst.spec, judge_handle, hook);
            sum += b.terminal;
            wins += b.terminal >= 0.7;
        }
        successes[i] = wins;
        means[i] = sum / static_cast<double>(k);
    });

    PasskOutcome out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        out.success_counts[corpus[i].spec.task_id] = successes[i];
        out.sample_scores[corpus[i].spec.task_id] = means[i] * 10.0;
        if (passk_retained(successes[i], band_low, band_high))
            out.retained.push_back(corpus[i]);
    }
    return out;
}

/// Stage-3 mining: keep samples whose recorded score on the judge's 0-10
/// scale is strictly below 5.
inline std::vector<env::TaskInstance> select_hard_samples(
    const std::map<std::string, double>& sample_scores,
    const std::vector<env::TaskInstance>& corpus) {
    std::vector<env::TaskInstance> out;
    for (const env::TaskInstance& inst : corpus) {
        auto it = sample_scores.find(inst.spec.task_id);
        if (it != sample_scores.end() && it->second < 5.0) out.push_back(inst);
    }
    return out;
}

// ----------------------------------------------------------------------------
// Full curriculum
// ----------------------------------------------------------------------------

struct CurriculumResult {
    std::vector<StageReport> reports;
};

/// Runs the staged plan. Between stages the corpus is pass@k-filtered with the
/// current policy; entering the final stage, hard samples (score < 5) are
/// selected and trained exclusively under the "hard" category.
inline CurriculumResult run_curriculum(const std::vector<StageConfig>& plan, TaskPools pools,
                                       policy::ToyPolicy& pol, const reward::RegConfig& reg,
                                       judge::Judge* judge_handle, unsigned jobs = 1) {
    if (plan.empty()) throw std::invalid_argument("curriculum plan is empty");
    for (size_t i = 0; i < plan.size(); ++i) {
        plan[i].validate();
        if (plan[i].stage != static_cast<int>(i) + 1)
            throw std::invalid_argument("plan stages must be ordered 1..n");
    }

    CurriculumResult result;
    for (size_t i = 0; i < plan.size(); ++i) {
        const StageConfig& cfg = plan[i];
        StageReport report = run_stage(cfg, pools, pol, reg, judge_handle);

        if (i + 1 < plan.size()) {
            // flatten, filter with the current policy, and rebuild pools
            std::vector<env::TaskInstance> corpus;
            for (const auto& [cat, tasks] : pools)
                corpus.insert(corpus.end(), tasks.begin(), tasks.end());
            PasskOutcome outcome = filter_passk(
                corpus, pol, reg, judge_handle, cfg.passk_k, cfg.band_low, cfg.band_high,
                cfg.hp.seed + static_cast<uint64_t>(cfg.stage) * 7919, jobs,
                cfg.hp.rollout_budget);
            report.success_counts = outcome.success_counts;
            report.sample_scores = outcome.sample_scores;
            report.retained = outcome.retained.size();
            report.filtered = corpus.size() - outcome.retained.size();

            bool into_final = i + 2 == plan.size();
            TaskPools next;
            if (into_final) {
                std::vector<env::TaskInstance> hard =
                    select_hard_samples(outcome.sample_scores, outcome.retained);
                next["hard"] = std::move(hard);
            } else {
                for (const env::TaskInstance& inst : outcome.retained)
                    next[inst.spec.category].push_back(inst);
            }
            pools = std::move(next);
        }
        result.reports.push_back(std::move(report));
    }
    return result;
}

// ----------------------------------------------------------------------------
// SFT warm-up subset
// ----------------------------------------------------------------------------

/// Stratified sample preserving the corpus composition ratios; the subset size
/// is round(fraction * N). Emitted for an external trainer.
inline std::vector<pipeline::DatasetRecord> sample_sft_subset(
    const std::vector<pipeline::DatasetRecord>& corpus, double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("fraction must be within [0,1]");
    size_t target = static_cast<size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
    if (target == 0) return {};

    std::map<std::string, std::vector<size_t>> strata;
    std::vector<std::string> order;  // first-seen category order
    for (size_t i = 0; i < corpus.size(); ++i) {
        const std::string& cat = corpus[i].category;
        if (!strata.count(cat)) order.push_back(cat);
        strata[cat].push_back(i);
    }

    // largest-remainder allocation of the target across strata
    std::vector<size_t> quota(order.size(), 0);
    std::vector<std::pair<double, size_t>> remainders;
    size_t allocated = 0;
    for (size_t c = 0; c < order.size(); ++c) {
        double exact = fraction * static_cast<double>(strata[order[c]].size());
        quota[c] = static_cast<size_t>(std::floor(exact));
        allocated += quota[c];
        remainders.push_back({exact - std::floor(exact), c});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (size_t r = 0; allocated < target && r < remainders.size(); ++r) {
        size_t c = remainders[r].second;
        if (quota[c] < strata[order[c]].size()) {
            ++quota[c];
            ++allocated;
        }
    }

    std::vector<size_t> chosen;
    for (size_t c = 0; c < order.size(); ++c) {
        Rng stratum_rng = rng.split("sft-" + order[c]);
        std::vector<size_t> picked = stratum_rng.sample(strata[order[c]], quota[c]);
        chosen.insert(chosen.end(), picked.begin(), picked.end());
    }
    std::sort(chosen.begin(), chosen.end());

    std::vector<pipeline::DatasetRecord> out;
    out.reserve(chosen.size());
    for (size_t i : chosen) out.push_back(corpus[i]);
    return out;
}

}  // namespace tablerl::curriculum
