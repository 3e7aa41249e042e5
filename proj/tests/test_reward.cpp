#include <catch2/catch_amalgamated.hpp>

#include "tablerl/reward.hpp"

#include "test_support.hpp"

using namespace tablerl;
using namespace tablerl::reward;
using Catch::Approx;

namespace {

/// Judge stub returning a fixed verdict.
class FixedJudge : public judge::Judge {
public:
    explicit FixedJudge(double score) : score_(score) {}
    judge::JudgeVerdict score(const env::TaskSpec&, const std::string&) override {
        return {score_, "fixed"};
    }

private:
    double score_;
};

env::TaskSpec labeled_task(TaskType type, const std::string& label) {
    env::TaskSpec t;
    t.task_id = "fixture";
    t.question = "q";
    t.task_type = type;
    t.label = label;
    return t;
}

/// think/call/response turns followed by an answer, with matching outcomes.
struct Scenario {
    traj::Trajectory t;
    std::vector<StepOutcome> outcomes;

    void add_tool_turn(bool correct, bool success, bool plotted = false) {
        traj::append_segment(t, traj::SegmentKind::Think, "step");
        traj::append_segment(t, traj::SegmentKind::ToolCall, "op()");
        traj::append_segment(t, traj::SegmentKind::ToolResponse, "ok");
        outcomes.push_back({correct, success, false, plotted});
    }
    void add_answer(const std::string& text, bool correct = true) {
        traj::append_segment(t, traj::SegmentKind::Think, "done");
        traj::append_segment(t, traj::SegmentKind::Answer, text);
        outcomes.push_back({correct, true, true, false});
    }
};

}  // namespace

TEST_CASE("route_task: the full seven-row taxonomy") {
    CHECK(route_task(TaskType::General) == FeedbackMethod::LLMEval);
    CHECK(route_task(TaskType::MathLogic) == FeedbackMethod::Rule);
    CHECK(route_task(TaskType::Coding) == FeedbackMethod::RunAndRule);
    CHECK(route_task(TaskType::TableQAPython) == FeedbackMethod::RunAndLLMEval);
    CHECK(route_task(TaskType::SQL) == FeedbackMethod::RunAndRule);
    CHECK(route_task(TaskType::TableQAWithLabel) == FeedbackMethod::Rule);
    CHECK(route_task(TaskType::QAWithLabel) == FeedbackMethod::Rule);
}

TEST_CASE("verify_rule: normalization, numbers, result sets") {
    CHECK(verify_rule("Paris", "paris ", TaskType::QAWithLabel) == 1.0);
    CHECK(verify_rule("  the   answer ", "The Answer", TaskType::General) == 1.0);
    CHECK(verify_rule("3.140", "3.14", TaskType::MathLogic) == 1.0);
    CHECK(verify_rule("3.15", "3.14", TaskType::MathLogic) == 0.0);
    CHECK(verify_rule("1000000.5", "1000000.5000001", TaskType::MathLogic) == 1.0);
    CHECK(verify_rule("rome", "paris", TaskType::QAWithLabel) == 0.0);

    // order-insensitive row multisets for SQL
    CHECK(verify_rule("1,a\n2,b", "2,b\n1,a", TaskType::SQL) == 1.0);
    CHECK(verify_rule("1,a\n2,b", "2,b\n1,c", TaskType::SQL) == 0.0);
    CHECK(verify_rule("1,a\n1,a\n2,b", "1,a\n2,b", TaskType::SQL) == 0.0);  // multiset, not set
}

TEST_CASE("verify_rule: multiset comparison is symmetric and normalized") {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        std::vector<std::string> rows;
        size_t n = 1 + rng.uniform(5);
        for (size_t r = 0; r < n; ++r)
            rows.push_back(std::to_string(rng.uniform(5)) + "," +
                           std::string(1, static_cast<char>('a' + rng.uniform(3))));
        std::string a, b;
        std::vector<std::string> shuffled = rows;
        rng.shuffle(shuffled);
        for (const std::string& r : rows) a += r + "\n";
        for (const std::string& r : shuffled) b += r + "\n";
        CHECK(verify_rule(a, b, TaskType::SQL) == 1.0);
        CHECK(verify_rule(b, a, TaskType::SQL) == verify_rule(a, b, TaskType::SQL));
    }
    // case/whitespace invariance on plain labels
    CHECK(verify_rule("Alpha  Beta", "alpha beta", TaskType::QAWithLabel) == 1.0);
}

TEST_CASE("step_reward: exact shaped values") {
    CHECK(step_reward({false, true, false, false}) == Approx(-0.2));
    CHECK(step_reward({false, false, false, false}) == Approx(-0.2));
    CHECK(step_reward({true, true, false, false}) == Approx(0.1));
    CHECK(step_reward({true, false, false, false}) == Approx(-0.1));
    CHECK_THROWS_AS(step_reward({true, true, true, false}), std::invalid_argument);

    // range is exactly {-0.2, -0.1, +0.1} over all non-terminal flag combos
    for (bool fc : {false, true})
        for (bool ex : {false, true})
            for (bool plot : {false, true}) {
                double r = step_reward({fc, ex, false, plot});
                CHECK((r == -0.2 || r == -0.1 || r == 0.1));
            }
}

TEST_CASE("regularization_penalty: individual triggers") {
    RegConfig cfg;
    StepOutcome plain{true, true, false, false};

    CHECK(regularization_penalty("compute the sum", cfg, false, plain) == 0.0);

    SECTION("opportunistic plotting") {
        StepOutcome plotted{true, true, false, true};
        CHECK(regularization_penalty("plot", cfg, false, plotted) == Approx(-1.0));
        CHECK(regularization_penalty("plot", cfg, true, plotted) == 0.0);
    }

    SECTION("wait lexicon, 0.05 per hit") {
        CHECK(regularization_penalty("wait I should wait and wait", cfg, false, plain) ==
              Approx(-0.15));
        // capped at 0.25
        CHECK(regularization_penalty("wait wait wait wait wait wait wait", cfg, false,
                                     plain) == Approx(-0.25));
    }

    SECTION("length overflow, proportional to budget fraction") {
        cfg.length_budget = 10;
        std::string text;
        for (int i = 0; i < 15; ++i) text += "tok ";
        CHECK(regularization_penalty(text, cfg, false, plain) ==
              Approx(-cfg.w_length * 5.0 / 10.0));
    }

    SECTION("n-gram repetition flag") {
        std::string repeated;
        for (int i = 0; i < 12; ++i) repeated += "same thing again ";
        CHECK(regularization_penalty(repeated, cfg, false, plain) == Approx(-cfg.w_repeat));
    }
}

TEST_CASE("regularization_penalty: never positive") {
    RegConfig cfg;
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        StepOutcome o{rng.coin(), rng.coin(), false, rng.coin()};
        CHECK(regularization_penalty(testsupport::random_content(rng), cfg, rng.coin(), o) <=
              0.0);
    }
}

TEST_CASE("RegConfig: validation bounds") {
    RegConfig bad;
    bad.repeat_threshold = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = RegConfig{};
    bad.w_repeat = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    nlohmann::json j = RegConfig{};
    CHECK_NOTHROW(j.get<RegConfig>());
}

TEST_CASE("terminal_reward: rule path") {
    Scenario s;
    s.add_answer("Paris");
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");
    CHECK(terminal_reward(s.t, task, nullptr) == 1.0);

    env::TaskSpec wrong = labeled_task(TaskType::QAWithLabel, "rome");
    CHECK(terminal_reward(s.t, wrong, nullptr) == 0.0);

    env::TaskSpec unlabeled = labeled_task(TaskType::QAWithLabel, "x");
    unlabeled.label.reset();
    CHECK_THROWS_AS(terminal_reward(s.t, unlabeled, nullptr), MissingLabel);
}

TEST_CASE("terminal_reward: judge verdict 8 normalizes to 0.8") {
    Scenario s;
    s.add_answer("open ended response");
    env::TaskSpec task = labeled_task(TaskType::General, "");
    task.label.reset();
    FixedJudge judge8(8.0);
    CHECK(terminal_reward(s.t, task, &judge8) == Approx(0.8));
    CHECK_THROWS_AS(terminal_reward(s.t, task, nullptr), judge::JudgeUnavailable);
}

TEST_CASE("terminal_reward: SQL multiset mismatch scores zero") {
    Scenario s;
    s.add_answer("1,a\n2,b");
    env::TaskSpec task = labeled_task(TaskType::SQL, "2,b\n1,a");
    CHECK(terminal_reward(s.t, task, nullptr) == 1.0);
    env::TaskSpec task2 = labeled_task(TaskType::SQL, "3,z");
    CHECK(terminal_reward(s.t, task2, nullptr) == 0.0);
}

TEST_CASE("terminal_reward: run hook replays the trajectory's code") {
    env::TaskInstance inst = env::generate_task(6, 8);  // coding template, RunAndRule
    traj::Trajectory good = env::reference_trajectory(inst.spec, inst.table);
    RunHook hook = make_dsl_run_hook(inst.table);
    CHECK(terminal_reward(good, inst.spec, nullptr, hook) == 1.0);

    // a right answer backed by broken code is rejected once the run hook runs it
    traj::Trajectory faked;
    traj::append_segment(faked, traj::SegmentKind::Think, "skip work");
    traj::append_segment(faked, traj::SegmentKind::ToolCall,
                         "aggregate(\"min\", \"missing\")");
    traj::append_segment(faked, traj::SegmentKind::ToolResponse, "made up");
    traj::append_segment(faked, traj::SegmentKind::Answer, *inst.spec.label);
    CHECK(terminal_reward(faked, inst.spec, nullptr, hook) == 0.0);
    // without a hook the rule check falls back to the answer text
    CHECK(terminal_reward(faked, inst.spec, nullptr) == 1.0);
}

TEST_CASE("terminal_reward: execution timeout scores zero") {
    Scenario s;
    s.add_tool_turn(true, true);
    s.add_answer("42");
    env::TaskSpec task = labeled_task(TaskType::Coding, "42");
    RunHook timeout_hook = [](const traj::Trajectory&,
                              const env::TaskSpec&) -> env::Observation {
        throw ExecutionTimeout("sandbox");
    };
    CHECK(terminal_reward(s.t, task, nullptr, timeout_hook) == 0.0);
}

TEST_CASE("terminal_reward: requires a complete trajectory") {
    traj::Trajectory open;
    traj::append_segment(open, traj::SegmentKind::Think, "planning");
    CHECK_THROWS_AS(terminal_reward(open, labeled_task(TaskType::QAWithLabel, "x"), nullptr),
                    std::invalid_argument);
}

TEST_CASE("aggregate_return: two successes plus terminal 1.0 totals 1.2") {
    Scenario s;
    s.add_tool_turn(true, true);
    s.add_tool_turn(true, true);
    s.add_answer("Paris");
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");

    RegConfig cfg;
    RewardBreakdown b = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    REQUIRE(b.steps.size() == 3);
    CHECK(b.steps[0].base == Approx(0.1));
    CHECK(b.steps[1].base == Approx(0.1));
    CHECK(b.steps[2].base == Approx(1.0));
    CHECK(b.terminal == Approx(1.0));
    CHECK(b.total == Approx(1.2).margin(1e-12));

    // exact identity: total is the sum of all (base + reg)
    double sum = 0;
    for (const StepReward& sr : b.steps) sum += sr.base + sr.reg;
    CHECK(b.total == sum);
}

TEST_CASE("aggregate_return: single-turn trajectory collapses to terminal + reg") {
    Scenario s;
    s.add_answer("Paris");
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");
    RegConfig cfg;
    RewardBreakdown b = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    REQUIRE(b.steps.size() == 1);
    CHECK(b.total == Approx(b.terminal + b.steps[0].reg));
}

TEST_CASE("aggregate_return: need_plot violation subtracts exactly p_plot") {
    Scenario s;
    s.add_tool_turn(true, true, /*plotted=*/true);
    s.add_tool_turn(true, true);
    s.add_answer("Paris");
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");
    task.need_plot = false;
    RegConfig cfg;  // p_plot = 1.0
    RewardBreakdown b = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    CHECK(b.total == Approx(0.2).margin(1e-12));

    task.need_plot = true;
    RewardBreakdown ok = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    CHECK(ok.total == Approx(1.2).margin(1e-12));
}

TEST_CASE("aggregate_return: linearity in penalty-free successful steps") {
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");
    RegConfig cfg;
    for (int n = 0; n < 5; ++n) {
        Scenario s;
        for (int i = 0; i < n; ++i) s.add_tool_turn(true, true);
        s.add_answer("Paris");
        RewardBreakdown b = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
        CHECK(b.total == Approx(1.0 + 0.1 * n).margin(1e-12));
    }
}

TEST_CASE("aggregate_return: open trajectory gets no terminal contribution") {
    Scenario s;
    s.add_tool_turn(true, true);
    s.add_tool_turn(false, false);
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "x");
    RegConfig cfg;
    RewardBreakdown b = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    CHECK(b.terminal == 0.0);
    CHECK(b.total == Approx(0.1 - 0.2));
}

TEST_CASE("aggregate_return: outcome misalignment is rejected") {
    Scenario s;
    s.add_tool_turn(true, true);
    s.add_answer("x");
    s.outcomes.pop_back();
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "x");
    RegConfig cfg;
    CHECK_THROWS_AS(aggregate_return(s.t, s.outcomes, cfg, task, nullptr),
                    std::invalid_argument);
}

TEST_CASE("reward breakdown: audit JSON schema") {
    Scenario s;
    s.add_tool_turn(true, true);
    s.add_answer("Paris");
    env::TaskSpec task = labeled_task(TaskType::QAWithLabel, "paris");
    task.task_id = "task-7";
    RegConfig cfg;
    nlohmann::json j = aggregate_return(s.t, s.outcomes, cfg, task, nullptr);
    CHECK(j.at("task_id") == "task-7");
    CHECK(j.at("steps").is_array());
    CHECK(j.at("steps").size() == 2);
    CHECK(j.at("steps")[0].contains("base"));
    CHECK(j.at("steps")[0].contains("reg"));
    CHECK(j.contains("terminal"));
    CHECK(j.contains("total"));
}
