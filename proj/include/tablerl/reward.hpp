#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/judge.hpp"
#include "tablerl/table_env.hpp"
#include "tablerl/trajectory.hpp"
#include "tablerl/types.hpp"

namespace tablerl::reward {

// ----------------------------------------------------------------------------
// Task-adaptive routing
// ----------------------------------------------------------------------------

enum class FeedbackMethod { LLMEval, Rule, RunAndRule, RunAndLLMEval };

constexpr std::string_view to_string(FeedbackMethod m) {
    switch (m) {
        case FeedbackMethod::LLMEval: return "llm_eval";
        case FeedbackMethod::Rule: return "rule";
        case FeedbackMethod::RunAndRule: return "run_and_rule";
        case FeedbackMethod::RunAndLLMEval: return "run_and_llm_eval";
    }
    return "rule";
}

/// Terminal-feedback routing by task type.
constexpr FeedbackMethod route_task(TaskType t) {
    switch (t) {
        case TaskType::General: return FeedbackMethod::LLMEval;
        case TaskType::MathLogic: return FeedbackMethod::Rule;
        case TaskType::Coding: return FeedbackMethod::RunAndRule;
        case TaskType::TableQAPython: return FeedbackMethod::RunAndLLMEval;
        case TaskType::SQL: return FeedbackMethod::RunAndRule;
        case TaskType::TableQAWithLabel: return FeedbackMethod::Rule;
        case TaskType::QAWithLabel: return FeedbackMethod::Rule;
    }
    return FeedbackMethod::Rule;
}

// ----------------------------------------------------------------------------
// Rule verification
// ----------------------------------------------------------------------------

class MissingLabel : public std::runtime_error {
public:
    explicit MissingLabel(const std::string& task_id)
        : std::runtime_error("rule verification needs a label (task " + task_id + ")") {}
};

/// Answer normalization shared by rule checks and consensus labeling:
/// case fold plus whitespace collapse.
inline std::string normalize_answer(std::string_view s) {
    return collapse_whitespace(to_lower_ascii(s));
}

namespace detail {

inline std::string canonical_cell(std::string_view cell) {
    std::string c = normalize_answer(cell);
    double v;
    if (parse_number(c, v)) return format_number(v);
    return c;
}

inline bool numbers_equal(double a, double b) {
    return std::fabs(a - b) <= 1e-6 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace detail

/// Result-set rows as canonical strings, order-insensitive (SQL comparisons).
inline std::vector<std::string> result_multiset(std::string_view text) {
    std::vector<std::string> rows;
    for (const std::string& line : split(text, '\n')) {
        std::string t = trim(line);
        if (t.empty()) continue;
        std::string canon;
        auto cells = split(t, ',');
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) canon.push_back('\x1f');
            canon += detail::canonical_cell(cells[i]);
        }
        rows.push_back(std::move(canon));
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

/// Binary rule check: case/whitespace-normalized string match, numeric match
/// with 1e-6 relative tolerance, and order-insensitive row-multiset match for
/// SQL-style result sets.
inline double verify_rule(std::string_view answer, std::string_view label, TaskType type) {
    if (type == TaskType::SQL)
        return result_multiset(answer) == result_multiset(label) ? 1.0 : 0.0;
    std::string na = normalize_answer(answer);
    std::string nb = normalize_answer(label);
    if (na == nb) return 1.0;
    double va, vb;
    if (parse_number(na, va) && parse_number(nb, vb))
        return detail::numbers_equal(va, vb) ? 1.0 : 0.0;
    return 0.0;
}

// ----------------------------------------------------------------------------
// Process step reward
// ----------------------------------------------------------------------------

/// Shaped reward for a non-terminal step: -0.2 for a wrong function choice,
/// +0.1 for correct-and-successful, -0.1 for correct-but-failed execution.
inline double step_reward(const StepOutcome& o) {
    if (o.terminal)
        throw std::invalid_argument("terminal steps are scored by terminal_reward");
    if (!o.function_correct) return -0.2;
    return o.execution_success ? 0.1 : -0.1;
}

// ----------------------------------------------------------------------------
// Behavioral regularization
// ----------------------------------------------------------------------------

struct RegConfig {
    size_t length_budget = 256;  // tokens per model step
    double w_length = 0.1;       // per budget-fraction of overflow
    double w_repeat = 0.2;
    double w_wait = 0.05;  // per lexicon hit
    double wait_cap = 0.25;
    double p_plot = 1.0;
    std::vector<std::string> wait_lexicon = {"wait", "hmm", "actually", "hold"};
    size_t repeat_ngram = 3;
    double repeat_threshold = 0.5;

    void validate() const {
        for (double w : {w_length, w_repeat, w_wait, wait_cap, p_plot})
            if (!(std::isfinite(w) && w >= 0.0))
                throw std::invalid_argument("penalty weights must be finite and non-negative");
        if (!(repeat_threshold > 0.0 && repeat_threshold <= 1.0))
            throw std::invalid_argument("repeat_threshold must be in (0,1]");
        if (length_budget == 0) throw std::invalid_argument("length_budget must be positive");
        if (repeat_ngram == 0) throw std::invalid_argument("repeat_ngram must be positive");
    }
};

inline void to_json(nlohmann::json& j, const RegConfig& c) {
    j = nlohmann::json{{"length_budget", c.length_budget},
                       {"w_length", c.w_length},
                       {"w_repeat", c.w_repeat},
                       {"w_wait", c.w_wait},
                       {"wait_cap", c.wait_cap},
                       {"p_plot", c.p_plot},
                       {"wait_lexicon", c.wait_lexicon},
                       {"repeat_ngram", c.repeat_ngram},
                       {"repeat_threshold", c.repeat_threshold}};
}

inline void from_json(const nlohmann::json& j, RegConfig& c) {
    RegConfig defaults;
    c.length_budget = j.value("length_budget", defaults.length_budget);
    c.w_length = j.value("w_length", defaults.w_length);
    c.w_repeat = j.value("w_repeat", defaults.w_repeat);
    c.w_wait = j.value("w_wait", defaults.w_wait);
    c.wait_cap = j.value("wait_cap", defaults.wait_cap);
    c.p_plot = j.value("p_plot", defaults.p_plot);
    c.wait_lexicon = j.value("wait_lexicon", defaults.wait_lexicon);
    c.repeat_ngram = j.value("repeat_ngram", defaults.repeat_ngram);
    c.repeat_threshold = j.value("repeat_threshold", defaults.repeat_threshold);
    c.validate();
}

namespace detail {

inline double repeated_ngram_ratio(const std::vector<std::string>& tokens, size_t n) {
    if (tokens.size() < n) return 0.0;
    size_t total = tokens.size() - n + 1;
    std::set<std::string> unique;
    for (size_t i = 0; i < total; ++i) {
        std::string key;
        for (size_t k = 0; k < n; ++k) {
            key += tokens[i + k];
            key.push_back('\x1f');
        }
        unique.insert(std::move(key));
    }
    return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace detail

/// Composite per-step penalty (always <= 0): length overflow, n-gram
/// repetition, "wait"-style filler, and plotting against a need_plot=false
/// sample.
inline double regularization_penalty(std::string_view step_text, const RegConfig& cfg,
                                     bool need_plot, const StepOutcome& o) {
    double penalty = 0.0;

    size_t tokens = traj::count_tokens(step_text);
    if (tokens > cfg.length_budget)
        penalty += cfg.w_length * static_cast<double>(tokens - cfg.length_budget) /
                   static_cast<double>(cfg.length_budget);

    std::vector<std::string> toks = traj::tokenize(step_text);
    if (detail::repeated_ngram_ratio(toks, cfg.repeat_ngram) > cfg.repeat_threshold)
        penalty += cfg.w_repeat;

    size_t wait_hits = 0;
    for (const std::string& t : toks) {
        std::string lower = to_lower_ascii(t);
        for (const std::string& w : cfg.wait_lexicon)
            if (lower == w) {
                ++wait_hits;
                break;
            }
    }
    penalty += std::min(cfg.w_wait * static_cast<double>(wait_hits), cfg.wait_cap);

    if (o.produced_plot && !need_plot) penalty += cfg.p_plot;

    return -penalty;
}

// ----------------------------------------------------------------------------
// Terminal reward
// ----------------------------------------------------------------------------

/// Re-executes a trajectory's code for Run-routed verification. Implementations
/// may throw ExecutionTimeout, which scores the run as 0.
using RunHook =
    std::function<env::Observation(const traj::Trajectory&, const env::TaskSpec&)>;

/// Run hook that replays every tool call through the deterministic DSL
/// executor and reports the final computed result.
inline RunHook make_dsl_run_hook(env::Table table) {
    return [table](const traj::Trajectory& t,
                   const env::TaskSpec& task) -> env::Observation {
        env::Session s = env::make_session(task, table);
        env::Observation last{env::ObsStatus::Success, ""};
        for (const traj::Segment& seg : t.segments) {
            if (seg.kind != traj::SegmentKind::ToolCall) continue;
            std::optional<env::ToolAction> action = env::parse_call(seg.content);
            if (!action)
                return {env::ObsStatus::Error, "InvalidArguments: unparseable tool call"};
            last = env::execute_tool(table, *action, s, task.error_style);
            if (!last.ok()) return last;
        }
        if (s.result) return {env::ObsStatus::Success, *s.result};
        return last;
    };
}

namespace detail {

inline double judge_score(judge::Judge& j, const env::TaskSpec& task,
                          const std::string& response) {
    double v = j.score(task, response).score / 10.0;
    return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// Terminal evaluation of a complete trajectory, dispatched by route_task.
/// Rule routes need a label; LLM routes need a judge; Run routes execute the
/// trajectory's code first when a hook is provided (failures and timeouts
/// score 0).
inline double terminal_reward(const traj::Trajectory& t, const env::TaskSpec& task,
                              judge::Judge* judge_handle, const RunHook& run_hook = nullptr) {
    if (!t.complete())
        throw std::invalid_argument("terminal_reward requires a complete trajectory");
    const std::string& answer = t.answer()->content;

    FeedbackMethod route = route_task(task.task_type);
    bool needs_run = route == FeedbackMethod::RunAndRule ||
                     route == FeedbackMethod::RunAndLLMEval;

    std::string verified_answer = answer;
    if (needs_run && run_hook) {
        env::Observation obs;
        try {
            obs = run_hook(t, task);
        } catch (const ExecutionTimeout&) {
            return 0.0;
        }
        if (!obs.ok()) return 0.0;
        if (route == FeedbackMethod::RunAndRule) verified_answer = obs.payload;
    }

    if (route == FeedbackMethod::Rule || route == FeedbackMethod::RunAndRule) {
        if (!task.label) throw MissingLabel(task.task_id);
        return verify_rule(verified_answer, *task.label, task.task_type);
    }
    if (!judge_handle)
        throw judge::JudgeUnavailable("task " + task.task_id + " routes to LLM evaluation");
    return detail::judge_score(*judge_handle, task, answer);
}

/// Scores a free-form response under terminal-reward semantics: if the text
/// parses as a complete trajectory its answer segment is evaluated, otherwise
/// the whole text stands in for the answer. Used by the data-quality gate and
/// difficulty estimation.
inline double score_response_text(const env::TaskSpec& task, const std::string& response,
                                  judge::Judge* judge_handle,
                                  const RunHook& run_hook = nullptr) {
    for (const traj::TagDialect* d :
         {&traj::TagDialect::canonical(), &traj::TagDialect::function_call()}) {
        try {
            traj::Trajectory t = parse_trajectory(response, *d);
            if (t.complete()) {
                traj::Trajectory named = t;
                named.task_id = task.task_id;
                return terminal_reward(named, task, judge_handle, run_hook);
            }
        } catch (const traj::ParseError&) {
        }
    }
    FeedbackMethod route = route_task(task.task_type);
    if (route == FeedbackMethod::Rule || route == FeedbackMethod::RunAndRule) {
        if (!task.label) throw MissingLabel(task.task_id);
        return verify_rule(response, *task.label, task.task_type);
    }
    if (!judge_handle)
        throw judge::JudgeUnavailable("task " + task.task_id + " routes to LLM evaluation");
    return detail::judge_score(*judge_handle, task, response);
}

// ----------------------------------------------------------------------------
// Aggregation (total return over a trajectory)
// ----------------------------------------------------------------------------

struct StepReward {
    double base = 0.0;
    double reg = 0.0;
};

struct RewardBreakdown {
    std::string task_id;
    std::vector<StepReward> steps;  // final step's base is the terminal reward
    double terminal = 0.0;
    double total = 0.0;  // exactly sum over steps of (base + reg)
};

inline void to_json(nlohmann::json& j, const RewardBreakdown& b) {
    nlohmann::json steps = nlohmann::json::array();
    for (const StepReward& s : b.steps)
        steps.push_back(nlohmann::json{{"base", s.base}, {"reg", s.reg}});
    j = nlohmann::json{{"task_id", b.task_id},
                       {"steps", std::move(steps)},
                       {"terminal", b.terminal},
                       {"total", b.total}};
}

/// Model-authored text per turn (think + tool call, or think + answer); the
/// environment's tool responses are not penalized.
struct Turn {
    std::string model_text;
    bool terminal = false;
};

inline std::vector<Turn> decompose_turns(const traj::Trajectory& t) {
    std::vector<Turn> turns;
    std::string pending;
    for (const traj::Segment& seg : t.segments) {
        switch (seg.kind) {
            case traj::SegmentKind::Think:
                if (!pending.empty()) pending.push_back('\n');
                pending += seg.content;
                break;
            case traj::SegmentKind::ToolCall:
                if (!pending.empty()) pending.push_back('\n');
                pending += seg.content;
                break;
            case traj::SegmentKind::ToolResponse:
                turns.push_back({pending, false});
                pending.clear();
                break;
            case traj::SegmentKind::Answer:
                if (!pending.empty()) pending.push_back('\n');
                pending += seg.content;
                turns.push_back({pending, true});
                pending.clear();
                break;
        }
    }
    if (!pending.empty()) turns.push_back({pending, false});  // open trajectory remainder
    return turns;
}

/// Total return R = sum over steps of (base + regularization): intermediate
/// bases from the process step reward, the final base from terminal
/// evaluation, regularization applied at every step. Open trajectories get no
/// terminal contribution.
inline RewardBreakdown aggregate_return(const traj::Trajectory& t,
                                        const std::vector<StepOutcome>& outcomes,
                                        const RegConfig& cfg, const env::TaskSpec& task,
                                        judge::Judge* judge_handle,
                                        const RunHook& run_hook = nullptr) {
    std::vector<Turn> turns = decompose_turns(t);
    if (turns.size() != outcomes.size())
        throw std::invalid_argument("outcomes must align 1:1 with trajectory turns");

    RewardBreakdown b;
    b.task_id = task.task_id;
    for (size_t i = 0; i < turns.size(); ++i) {
        StepReward s;
        if (outcomes[i].terminal) {
            s.base = terminal_reward(t, task, judge_handle, run_hook);
            b.terminal = s.base;
        } else {
            s.base = step_reward(outcomes[i]);
        }
        s.reg = regularization_penalty(turns[i].model_text, cfg, task.need_plot, outcomes[i]);
        b.total += s.base + s.reg;
        b.steps.push_back(s);
    }
    return b;
}

}  // namespace tablerl::reward
