#include <catch2/catch_amalgamated.hpp>

#include "tablerl/table_env.hpp"

#include "test_support.hpp"

using namespace tablerl;
using namespace tablerl::env;

namespace {

size_t action_index(const std::string& name) {
    const auto& v = action_vocab();
    return static_cast<size_t>(std::find(v.begin(), v.end(), name) - v.begin());
}

/// Policy that deterministically follows the task's reference actions.
policy::ToyPolicy reference_policy(const TaskSpec& task, size_t budget = 8) {
    policy::ToyPolicy pol(action_vocab());
    std::vector<std::string> ref = reference_actions(task);
    for (size_t turn = 0; turn < budget; ++turn) {
        std::string name = turn < ref.size() ? ref[turn] : "answer";
        pol.logits(context_key(task, turn))[action_index(name)] = 40.0;
    }
    return pol;
}

Table three_row_table() {
    Table t;
    t.name = "fixture";
    t.columns = {{"id", ColumnType::Int}, {"sales", ColumnType::Float}};
    t.rows = {{int64_t{1}, 10.5}, {int64_t{2}, 2.0}, {int64_t{3}, 7.5}};
    return t;
}

}  // namespace

TEST_CASE("generate_task: deterministic in seed") {
    for (uint64_t seed : {0ull, 1ull, 17ull, 99999ull}) {
        TaskInstance a = generate_task(seed);
        TaskInstance b = generate_task(seed);
        CHECK(a.spec.task_id == b.spec.task_id);
        CHECK(a.spec.question == b.spec.question);
        CHECK(a.spec.label == b.spec.label);
        CHECK(a.table.rows == b.table.rows);
    }
}

TEST_CASE("generate_task: labels match independent brute-force evaluation") {
    // template 3 is the sum-where family; check the label by a raw row loop
    for (uint64_t seed = 0; seed < 50; ++seed) {
        TaskInstance inst = generate_task(seed, 3);
        const TaskSpec& t = inst.spec;
        int target = inst.table.column_index(t.target_col);
        int filter = inst.table.column_index(t.filter_col);
        REQUIRE(target >= 0);
        REQUIRE(filter >= 0);
        double sum = 0;
        for (const auto& row : inst.table.rows)
            if (value_as_number(row[filter]) > t.filter_value)
                sum += value_as_number(row[target]);
        CHECK(*t.label == format_number(sum));
    }
    // template 4: plain mean
    for (uint64_t seed = 0; seed < 30; ++seed) {
        TaskInstance inst = generate_task(seed, 4);
        double sum = testsupport::brute_force_sum(inst.table, inst.spec.target_col);
        CHECK(*inst.spec.label ==
              format_number(sum / static_cast<double>(inst.table.rows.size())));
    }
}

TEST_CASE("generate_task: chart template forces need_plot") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        CHECK(generate_task(seed, 7).spec.need_plot);
        CHECK_FALSE(generate_task(seed, 3).spec.need_plot);
    }
}

TEST_CASE("generate_task: every rule-routed template carries a label") {
    for (uint64_t seed = 0; seed < 10; ++seed)
        for (int tpl = 0; tpl < kNumTaskTemplates; ++tpl) {
            const TaskSpec& spec = generate_task(seed, tpl).spec;
            if (requires_label(spec.task_type)) REQUIRE(spec.label.has_value());
        }
}

TEST_CASE("execute_tool: head returns the first rows") {
    Table t = three_row_table();
    TaskSpec task;
    task.input_mode = InputMode::TableInfo;
    Session s = make_session(task, t);
    Observation obs = execute_tool(t, {ToolOp::Head, {"2"}}, s);
    REQUIRE(obs.ok());
    CHECK(obs.payload == "id,sales\n1,10.5\n2,2");
}

TEST_CASE("execute_tool: aggregate equals a brute-force row loop") {
    Rng rng(11);
    for (int i = 0; i < 30; ++i) {
        TaskInstance inst = generate_task(rng.next_u64() % 1000, 4);
        TaskSpec info = inst.spec;
        info.input_mode = InputMode::TableInfo;
        Session s = make_session(info, inst.table);
        Observation obs =
            execute_tool(inst.table, {ToolOp::Aggregate, {"sum", info.target_col}}, s);
        REQUIRE(obs.ok());
        double expect = testsupport::brute_force_sum(inst.table, info.target_col);
        CHECK(*s.result == format_number(expect));
    }
}

TEST_CASE("execute_tool: unknown column error in both styles") {
    Table t = three_row_table();
    TaskSpec task;
    task.input_mode = InputMode::TableInfo;
    Session s = make_session(task, t);

    Observation minimal =
        execute_tool(t, {ToolOp::Filter, {"missing", ">", "1"}}, s, ErrorStyle::Minimal);
    CHECK_FALSE(minimal.ok());
    CHECK(minimal.payload == "UnknownColumn: no column named 'missing'");

    Observation trace =
        execute_tool(t, {ToolOp::Filter, {"missing", ">", "1"}}, s, ErrorStyle::Trace);
    CHECK_FALSE(trace.ok());
    CHECK(trace.payload.find("Traceback (most recent call last):") == 0);
    CHECK(trace.payload.find("UnknownColumn") != std::string::npos);
}

TEST_CASE("execute_tool: errors never mutate the session") {
    Table t = three_row_table();
    TaskSpec task;
    task.input_mode = InputMode::TableInfo;
    Session s = make_session(task, t);
    REQUIRE(execute_tool(t, {ToolOp::Filter, {"sales", ">", "5"}}, s).ok());

    Session before = s;
    ToolAction bad_actions[] = {
        {ToolOp::Filter, {"nope", ">", "1"}},
        {ToolOp::Aggregate, {"sum", "nope"}},
        {ToolOp::Aggregate, {"frobnicate", "sales"}},
        {ToolOp::Sort, {"sales", "sideways"}},
        {ToolOp::Head, {}},
    };
    for (const ToolAction& a : bad_actions) {
        Observation obs = execute_tool(t, a, s);
        REQUIRE_FALSE(obs.ok());
        CHECK(s.view.rows == before.view.rows);
        CHECK(s.result == before.result);
        CHECK(s.loaded == before.loaded);
    }
}

TEST_CASE("execute_tool: not-loaded gate in path mode") {
    Table t = three_row_table();
    TaskSpec task;
    task.input_mode = InputMode::TablePath;
    Session s = make_session(task, t);
    Observation obs = execute_tool(t, {ToolOp::Aggregate, {"sum", "sales"}}, s);
    REQUIRE_FALSE(obs.ok());
    CHECK(obs.payload.find("NotLoaded") != std::string::npos);
    REQUIRE(execute_tool(t, {ToolOp::Load, {}}, s).ok());
    CHECK(execute_tool(t, {ToolOp::Aggregate, {"sum", "sales"}}, s).ok());
}

TEST_CASE("executor determinism: identical inputs, identical observations") {
    Table t = three_row_table();
    TaskSpec task;
    task.input_mode = InputMode::TableInfo;
    for (const ToolAction& a : {ToolAction{ToolOp::Filter, {"sales", ">", "5"}},
                                ToolAction{ToolOp::Aggregate, {"mean", "sales"}},
                                ToolAction{ToolOp::Sort, {"sales", "desc"}}}) {
        Session s1 = make_session(task, t);
        Session s2 = make_session(task, t);
        Observation o1 = execute_tool(t, a, s1);
        Observation o2 = execute_tool(t, a, s2);
        CHECK(o1.status == o2.status);
        CHECK(o1.payload == o2.payload);
        CHECK(s1.view.rows == s2.view.rows);
    }
}

TEST_CASE("reference trajectory: replay reaches the label on every template") {
    for (uint64_t seed = 0; seed < 12; ++seed)
        for (int tpl = 0; tpl < kNumTaskTemplates; ++tpl) {
            TaskInstance inst = generate_task(seed, tpl);
            traj::Trajectory t = reference_trajectory(inst.spec, inst.table);
            REQUIRE(t.complete());
            REQUIRE(inst.spec.label.has_value());
            CHECK(t.answer()->content == *inst.spec.label);
        }
}

TEST_CASE("reference trajectory: load only appears in path mode") {
    for (uint64_t seed = 0; seed < 40; ++seed) {
        TaskInstance inst = generate_task(seed, 4);
        std::vector<std::string> ref = reference_actions(inst.spec);
        if (inst.spec.input_mode == InputMode::TablePath) {
            CHECK(ref.front() == "load");
        } else {
            CHECK(std::find(ref.begin(), ref.end(), "load") == ref.end());
        }
    }
}

TEST_CASE("reference trajectory: chart tasks include the plot action") {
    TaskInstance inst = generate_task(5, 7);
    std::vector<std::string> ref = reference_actions(inst.spec);
    CHECK(std::find(ref.begin(), ref.end(), "plot") != ref.end());
    CHECK(inst.spec.need_plot);
}

TEST_CASE("rollout_group: one-hot policy gives identical trajectories") {
    TaskInstance inst = generate_task(3, 3);
    policy::ToyPolicy pol = reference_policy(inst.spec);
    Rng rng(1);
    auto group = rollout_group(pol, inst.spec, inst.table, 4, 8, rng);
    REQUIRE(group.size() == 4);
    for (const RolloutSample& r : group) {
        CHECK(r.trajectory.segments == group[0].trajectory.segments);
        CHECK(r.trajectory.complete());
        CHECK(r.trajectory.answer()->content == *inst.spec.label);
        for (const StepOutcome& o : r.outcomes) {
            CHECK(o.function_correct);
            CHECK(o.execution_success);
        }
    }
}

TEST_CASE("rollout_group: seeded stochastic rollouts replay exactly") {
    TaskInstance inst = generate_task(9, 5);
    policy::ToyPolicy pol(action_vocab());  // uniform
    Rng rng1(42), rng2(42);
    auto g1 = rollout_group(pol, inst.spec, inst.table, 4, 6, rng1);
    auto g2 = rollout_group(pol, inst.spec, inst.table, 4, 6, rng2);
    bool any_difference = false;
    for (size_t i = 0; i < g1.size(); ++i) {
        CHECK(g1[i].trajectory.segments == g2[i].trajectory.segments);
        CHECK(g1[i].actions == g2[i].actions);
        CHECK(g1[i].logps == g2[i].logps);
        if (i > 0 && g1[i].actions != g1[0].actions) any_difference = true;
    }
    CHECK(any_difference);  // uniform policy should not collapse to one path
}

TEST_CASE("rollout_group: budget bounds the number of turns") {
    TaskInstance inst = generate_task(2, 3);
    policy::ToyPolicy pol(action_vocab());
    Rng rng(8);
    auto group = rollout_group(pol, inst.spec, inst.table, 4, 1, rng);
    for (const RolloutSample& r : group) {
        CHECK(r.outcomes.size() <= 1);
        if (!r.trajectory.complete()) {
            CHECK(r.truncated);
            CHECK(r.trajectory.meta.at("truncated") == "true");
        }
    }
}

TEST_CASE("rollout_group: input preconditions") {
    TaskInstance inst = generate_task(1, 4);
    policy::ToyPolicy pol(action_vocab());
    Rng rng(0);
    CHECK_THROWS_AS(rollout_group(pol, inst.spec, inst.table, 1, 4, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(rollout_group(pol, inst.spec, inst.table, 2, 0, rng),
                    std::invalid_argument);
}

TEST_CASE("rollout outcomes agree with derive_outcomes replay") {
    Rng rng(77);
    for (int i = 0; i < 20; ++i) {
        TaskInstance inst = generate_task(rng.next_u64() % 500);
        policy::ToyPolicy pol(action_vocab());
        Rng roll_rng(i);
        auto group = rollout_group(pol, inst.spec, inst.table, 2, 5, roll_rng);
        for (const RolloutSample& r : group) {
            std::vector<StepOutcome> replayed =
                derive_outcomes(r.trajectory, inst.spec, inst.table);
            REQUIRE(replayed.size() == r.outcomes.size());
            for (size_t k = 0; k < replayed.size(); ++k) {
                CHECK(replayed[k].function_correct == r.outcomes[k].function_correct);
                CHECK(replayed[k].execution_success == r.outcomes[k].execution_success);
                CHECK(replayed[k].terminal == r.outcomes[k].terminal);
                CHECK(replayed[k].produced_plot == r.outcomes[k].produced_plot);
            }
        }
    }
}

TEST_CASE("DSL call text round-trips through parse_call") {
    const ToolAction actions[] = {
        {ToolOp::Load, {"tables/task-1.csv"}},
        {ToolOp::Filter, {"qty", ">", "12"}},
        {ToolOp::Aggregate, {"sum", "sales"}},
        {ToolOp::Select, {"sales"}},
        {ToolOp::Head, {"3"}},
        {ToolOp::Plot, {"bar", "sales"}},
        {ToolOp::Answer, {"42"}},
    };
    for (const ToolAction& a : actions) {
        std::optional<ToolAction> back = parse_call(render_call(a));
        REQUIRE(back.has_value());
        CHECK(back->op == a.op);
        CHECK(back->args == a.args);
    }
    CHECK_FALSE(parse_call("not a call").has_value());
    CHECK_FALSE(parse_call("unknown_op(1)").has_value());
}

TEST_CASE("CSV: write/read round trip preserves values and types") {
    Rng rng(15);
    for (int i = 0; i < 20; ++i) {
        TaskInstance inst = generate_task(rng.next_u64() % 300, 3);
        std::string csv = table_to_csv(inst.table);
        Table back = table_from_csv(csv, inst.table.name);
        REQUIRE(back.columns.size() == inst.table.columns.size());
        for (size_t c = 0; c < back.columns.size(); ++c) {
            CHECK(back.columns[c].name == inst.table.columns[c].name);
            CHECK(back.columns[c].type == inst.table.columns[c].type);
        }
        CHECK(back.rows == inst.table.rows);
    }
    // quoted fields
    Table t;
    t.name = "q";
    t.columns = {{"text", ColumnType::Text}};
    t.rows = {{std::string("a,b")}, {std::string("line\nbreak")}, {std::string("q\"uote")}};
    Table back = table_from_csv(table_to_csv(t), "q");
    CHECK(back.rows == t.rows);
}
