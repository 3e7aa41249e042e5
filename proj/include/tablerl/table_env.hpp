#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/policy.hpp"
#include "tablerl/table.hpp"
#include "tablerl/trajectory.hpp"
#include "tablerl/types.hpp"

namespace tablerl::env {

// ----------------------------------------------------------------------------
// TaskSpec: one training sample over a synthetic table.
// ----------------------------------------------------------------------------

struct TaskSpec {
    std::string task_id;
    std::string question;
    InputMode input_mode = InputMode::TableInfo;
    std::string table_path;    // set in TablePath mode
    std::string table_inline;  // first-rows CSV preview, set in TableInfo mode
    TaskType task_type = TaskType::TableQAWithLabel;
    std::optional<std::string> label;
    bool need_plot = false;
    uint64_t seed = 0;
    std::string category;  // data-mix tag: "general" | "table_agentic"
    int template_id = 0;
    ErrorStyle error_style = ErrorStyle::Minimal;

    // tool-argument bindings for the closed action vocabulary
    std::string target_col;
    std::string filter_col;
    std::string filter_cmp;
    double filter_value = 0.0;
};

/// Task types whose terminal verification is rule-based and therefore require
/// a ground-truth label.
inline bool requires_label(TaskType t) {
    switch (t) {
        case TaskType::MathLogic:
        case TaskType::Coding:
        case TaskType::SQL:
        case TaskType::TableQAWithLabel:
        case TaskType::QAWithLabel:
            return true;
        case TaskType::General:
        case TaskType::TableQAPython:
            return false;
    }
    return false;
}

inline void to_json(nlohmann::json& j, const TaskSpec& t) {
    j = nlohmann::json{
        {"task_id", t.task_id},
        {"question", t.question},
        {"input_mode", std::string(to_string(t.input_mode))},
        {"table_path", t.table_path},
        {"table_inline", t.table_inline},
        {"task_type", std::string(to_string(t.task_type))},
        {"need_plot", t.need_plot},
        {"seed", t.seed},
        {"category", t.category},
        {"template_id", t.template_id},
        {"error_style", std::string(to_string(t.error_style))},
        {"target_col", t.target_col},
        {"filter_col", t.filter_col},
        {"filter_cmp", t.filter_cmp},
        {"filter_value", t.filter_value},
    };
    if (t.label) j["label"] = *t.label;
}

inline void from_json(const nlohmann::json& j, TaskSpec& t) {
    j.at("task_id").get_to(t.task_id);
    j.at("question").get_to(t.question);
    t.input_mode = input_mode_from_string(j.value("input_mode", "table_info"));
    t.table_path = j.value("table_path", "");
    t.table_inline = j.value("table_inline", "");
    t.task_type = task_type_from_string(j.value("task_type", "table_qa_with_label"));
    if (j.contains("label") && !j.at("label").is_null()) t.label = j.at("label").get<std::string>();
    t.need_plot = j.value("need_plot", false);
    t.seed = j.value("seed", uint64_t{0});
    t.category = j.value("category", "");
    t.template_id = j.value("template_id", 0);
    t.error_style = error_style_from_string(j.value("error_style", "minimal"));
    t.target_col = j.value("target_col", "");
    t.filter_col = j.value("filter_col", "");
    t.filter_cmp = j.value("filter_cmp", "");
    t.filter_value = j.value("filter_value", 0.0);
}

/// Question plus its table context, as the model would see it.
inline std::string render_prompt(const TaskSpec& t) {
    std::string out = t.question;
    if (t.input_mode == InputMode::TableInfo) {
        out += "\n\nTable preview:\n" + t.table_inline;
    } else {
        out += "\n\nTable file: " + t.table_path;
    }
    return out;
}

// ----------------------------------------------------------------------------
// Tool actions and observations
// ----------------------------------------------------------------------------

enum class ToolOp { Load, Head, Select, Filter, Aggregate, Sort, Plot, Answer };

constexpr std::string_view to_string(ToolOp op) {
    switch (op) {
        case ToolOp::Load: return "load";
        case ToolOp::Head: return "head";
        case ToolOp::Select: return "select";
        case ToolOp::Filter: return "filter";
        case ToolOp::Aggregate: return "aggregate";
        case ToolOp::Sort: return "sort";
        case ToolOp::Plot: return "plot";
        case ToolOp::Answer: return "answer";
    }
    return "load";
}

struct ToolAction {
    ToolOp op = ToolOp::Load;
    std::vector<std::string> args;
};

enum class ObsStatus { Success, Error };

struct Observation {
    ObsStatus status = ObsStatus::Success;
    std::string payload;

    bool ok() const { return status == ObsStatus::Success; }
};

namespace detail {

/// The two error-message shapes used for "error message diversity": a bare
/// one-liner and a Python-trace-like template.
inline Observation make_error(const std::string& kind, const std::string& message,
                              ErrorStyle style) {
    if (style == ErrorStyle::Minimal)
        return {ObsStatus::Error, kind + ": " + message};
    return {ObsStatus::Error,
            "Traceback (most recent call last):\n  File \"<tool>\", line 1, in <module>\n" + kind +
                ": " + message};
}

inline std::string render_rows(const Table& t, size_t limit) {
    std::string out;
    for (size_t c = 0; c < t.columns.size(); ++c) {
        if (c) out.push_back(',');
        out += t.columns[c].name;
    }
    out.push_back('\n');
    size_t n = std::min(limit, t.rows.size());
    for (size_t r = 0; r < n; ++r) {
        for (size_t c = 0; c < t.rows[r].size(); ++c) {
            if (c) out.push_back(',');
            out += value_to_string(t.rows[r][c]);
        }
        if (r + 1 < n) out.push_back('\n');
    }
    return out;
}

inline bool compare_values(const Value& v, std::string_view cmp, double rhs,
                           const std::string& rhs_text) {
    if (std::holds_alternative<std::string>(v)) {
        if (cmp == "==") return std::get<std::string>(v) == rhs_text;
        if (cmp == "!=") return std::get<std::string>(v) != rhs_text;
        return false;  // numeric comparison on text is rejected upstream
    }
    double lhs = value_as_number(v);
    if (cmp == ">") return lhs > rhs;
    if (cmp == "<") return lhs < rhs;
    if (cmp == ">=") return lhs >= rhs;
    if (cmp == "<=") return lhs <= rhs;
    if (cmp == "==") return lhs == rhs;
    if (cmp == "!=") return lhs != rhs;
    return false;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Session + executor
// ----------------------------------------------------------------------------

/// Mutable per-rollout state. A session is owned by exactly one rollout.
struct Session {
    bool loaded = false;
    Table view;                         // working view (select/filter/sort apply here)
    std::optional<std::string> result;  // last computed result, bound by the answer action
};

inline Session make_session(const TaskSpec& task, const Table& table) {
    Session s;
    if (task.input_mode == InputMode::TableInfo) {
        s.loaded = true;
        s.view = table;
    }
    return s;
}

/// Executes one tool action against the session. Failures come back as Error
/// observations and leave the session untouched.
inline Observation execute_tool(const Table& table, const ToolAction& a, Session& s,
                                ErrorStyle style = ErrorStyle::Minimal) {
    using detail::make_error;

    auto arity_error = [&](size_t want) {
        return make_error("InvalidArguments",
                          std::string(to_string(a.op)) + " expects " + std::to_string(want) +
                              " argument(s), got " + std::to_string(a.args.size()),
                          style);
    };

    if (a.op == ToolOp::Load) {
        if (a.args.size() > 1) return arity_error(1);
        s.loaded = true;
        s.view = table;
        s.result.reset();
        return {ObsStatus::Success, "loaded table '" + table.name + "' with " +
                                        std::to_string(table.rows.size()) + " rows and " +
                                        std::to_string(table.columns.size()) + " columns"};
    }
    if (!s.loaded)
        return make_error("NotLoaded", "no table loaded; call load first", style);

    switch (a.op) {
        case ToolOp::Head: {
            if (a.args.size() != 1) return arity_error(1);
            double n = 0;
            if (!parse_number(a.args[0], n) || n < 0)
                return make_error("InvalidArguments", "head needs a non-negative row count",
                                  style);
            return {ObsStatus::Success,
                    detail::render_rows(s.view, static_cast<size_t>(n))};
        }
        case ToolOp::Select: {
            if (a.args.empty()) return arity_error(1);
            std::vector<int> idx;
            for (const std::string& col : a.args) {
                int i = s.view.column_index(col);
                if (i < 0)
                    return make_error("UnknownColumn", "no column named '" + col + "'", style);
                idx.push_back(i);
            }
            Table projected;
            projected.name = s.view.name;
            for (int i : idx) projected.columns.push_back(s.view.columns[i]);
            for (const auto& row : s.view.rows) {
                std::vector<Value> out;
                for (int i : idx) out.push_back(row[i]);
                projected.rows.push_back(std::move(out));
            }
            std::string rendering;
            for (size_t r = 0; r < projected.rows.size(); ++r) {
                for (size_t c = 0; c < projected.rows[r].size(); ++c) {
                    if (c) rendering.push_back(',');
                    rendering += value_to_string(projected.rows[r][c]);
                }
                if (r + 1 < projected.rows.size()) rendering.push_back('\n');
            }
            s.view = std::move(projected);
            s.result = rendering;
            return {ObsStatus::Success, rendering};
        }
        case ToolOp::Filter: {
            if (a.args.size() != 3) return arity_error(3);
            const std::string& col = a.args[0];
            const std::string& cmp = a.args[1];
            int i = s.view.column_index(col);
            if (i < 0) return make_error("UnknownColumn", "no column named '" + col + "'", style);
            static const std::set<std::string> cmps = {">", "<", ">=", "<=", "==", "!="};
            if (!cmps.count(cmp))
                return make_error("InvalidArguments", "unknown comparator '" + cmp + "'", style);
            bool text_col = s.view.columns[i].type == ColumnType::Text;
            if (text_col && cmp != "==" && cmp != "!=")
                return make_error("TypeMismatch",
                                  "ordering comparison on text column '" + col + "'", style);
            double rhs = 0;
            if (!text_col && !parse_number(a.args[2], rhs))
                return make_error("TypeMismatch",
                                  "non-numeric comparison value '" + a.args[2] + "'", style);
            std::vector<std::vector<Value>> kept;
            for (const auto& row : s.view.rows)
                if (detail::compare_values(row[i], cmp, rhs, a.args[2])) kept.push_back(row);
            size_t m = kept.size();
            s.view.rows = std::move(kept);
            return {ObsStatus::Success, std::to_string(m) + " rows match " + col + " " + cmp +
                                            " " + a.args[2]};
        }
        case ToolOp::Aggregate: {
            if (a.args.size() != 2) return arity_error(2);
            const std::string& func = a.args[0];
            const std::string& col = a.args[1];
            int i = s.view.column_index(col);
            if (i < 0) return make_error("UnknownColumn", "no column named '" + col + "'", style);
            bool numeric = s.view.columns[i].type != ColumnType::Text;
            double out = 0;
            if (func == "count") {
                out = static_cast<double>(s.view.rows.size());
            } else if (func == "sum" || func == "mean" || func == "min" || func == "max") {
                if (!numeric)
                    return make_error("TypeMismatch",
                                      func + " over text column '" + col + "'", style);
                if (s.view.rows.empty() && func != "sum") {
                    return make_error("InvalidArguments", func + " of an empty view", style);
                }
                double sum = 0, mn = 0, mx = 0;
                for (size_t r = 0; r < s.view.rows.size(); ++r) {
                    double v = value_as_number(s.view.rows[r][i]);
                    sum += v;
                    if (r == 0 || v < mn) mn = v;
                    if (r == 0 || v > mx) mx = v;
                }
                if (func == "sum") out = sum;
                else if (func == "mean") out = sum / static_cast<double>(s.view.rows.size());
                else if (func == "min") out = mn;
                else out = mx;
            } else {
                return make_error("InvalidArguments", "unknown aggregate '" + func + "'", style);
            }
            std::string rendered = format_number(out);
            s.result = rendered;
            return {ObsStatus::Success, func + "(" + col + ") = " + rendered};
        }
        case ToolOp::Sort: {
            if (a.args.size() != 2) return arity_error(2);
            const std::string& col = a.args[0];
            const std::string& dir = a.args[1];
            int i = s.view.column_index(col);
            if (i < 0) return make_error("UnknownColumn", "no column named '" + col + "'", style);
            if (dir != "asc" && dir != "desc")
                return make_error("InvalidArguments", "sort direction must be asc or desc",
                                  style);
            bool asc = dir == "asc";
            bool text_col = s.view.columns[i].type == ColumnType::Text;
            std::stable_sort(s.view.rows.begin(), s.view.rows.end(),
                             [&](const auto& a_, const auto& b_) {
                                 if (text_col) {
                                     const auto& x = std::get<std::string>(a_[i]);
                                     const auto& y = std::get<std::string>(b_[i]);
                                     return asc ? x < y : y < x;
                                 }
                                 double x = value_as_number(a_[i]);
                                 double y = value_as_number(b_[i]);
                                 return asc ? x < y : y < x;
                             });
            return {ObsStatus::Success, "sorted by " + col + " (" + dir + ")"};
        }
        case ToolOp::Plot: {
            if (a.args.size() != 2) return arity_error(2);
            int i = s.view.column_index(a.args[1]);
            if (i < 0)
                return make_error("UnknownColumn", "no column named '" + a.args[1] + "'", style);
            // intent only; no plotting backend
            return {ObsStatus::Success, "rendered " + a.args[0] + " chart of '" + a.args[1] +
                                            "' (" + std::to_string(s.view.rows.size()) +
                                            " rows)"};
        }
        case ToolOp::Answer: {
            std::string text = a.args.empty() ? "" : a.args[0];
            s.result = text;
            return {ObsStatus::Success, text};
        }
        case ToolOp::Load:
            break;  // handled above
    }
    return detail::make_error("InvalidArguments", "unhandled op", style);
}

// ----------------------------------------------------------------------------
// DSL call rendering and parsing (tool_call segment contents)
// ----------------------------------------------------------------------------

inline std::string render_call(const ToolAction& a) {
    std::string out(to_string(a.op));
    out.push_back('(');
    for (size_t i = 0; i < a.args.size(); ++i) {
        if (i) out += ", ";
        double num;
        if (parse_number(a.args[i], num)) {
            out += a.args[i];
        } else {
            out.push_back('"');
            out += a.args[i];
            out.push_back('"');
        }
    }
    out.push_back(')');
    return out;
}

/// Parses `name("arg", 3, ...)` back into a ToolAction; returns nullopt on any
/// malformed input.
inline std::optional<ToolAction> parse_call(std::string_view text) {
    std::string s = trim(text);
    size_t open = s.find('(');
    if (open == std::string::npos || s.back() != ')') return std::nullopt;
    std::string name = trim(s.substr(0, open));
    ToolAction a;
    if (name == "load") a.op = ToolOp::Load;
    else if (name == "head") a.op = ToolOp::Head;
    else if (name == "select") a.op = ToolOp::Select;
    else if (name == "filter") a.op = ToolOp::Filter;
    else if (name == "aggregate") a.op = ToolOp::Aggregate;
    else if (name == "sort") a.op = ToolOp::Sort;
    else if (name == "plot") a.op = ToolOp::Plot;
    else if (name == "answer") a.op = ToolOp::Answer;
    else return std::nullopt;

    std::string_view body(s);
    body = body.substr(open + 1, s.size() - open - 2);
    size_t i = 0;
    auto skip_ws = [&] { while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i; };
    skip_ws();
    while (i < body.size()) {
        if (body[i] == '"') {
            std::string arg;
            ++i;
            while (i < body.size() && body[i] != '"') {
                if (body[i] == '\\' && i + 1 < body.size()) ++i;
                arg.push_back(body[i]);
                ++i;
            }
            if (i >= body.size()) return std::nullopt;
            ++i;  // closing quote
            a.args.push_back(std::move(arg));
        } else {
            size_t start = i;
            while (i < body.size() && body[i] != ',') ++i;
            std::string arg = trim(body.substr(start, i - start));
            if (arg.empty()) return std::nullopt;
            a.args.push_back(std::move(arg));
        }
        skip_ws();
        if (i < body.size()) {
            if (body[i] != ',') return std::nullopt;
            ++i;
            skip_ws();
        }
    }
    return a;
}

// ----------------------------------------------------------------------------
// Task generation
// ----------------------------------------------------------------------------

struct TaskInstance {
    Table table;
    TaskSpec spec;
};

constexpr int kNumTaskTemplates = 11;

/// Template ids grouped by data-mix category.
inline const std::vector<int>& general_templates() {
    static const std::vector<int> v = {0, 1, 2, 10};
    return v;
}
inline const std::vector<int>& table_agentic_templates() {
    static const std::vector<int> v = {3, 4, 5, 6, 7, 8, 9};
    return v;
}

namespace detail {

inline const std::vector<std::string>& numeric_names() {
    static const std::vector<std::string> v = {"sales", "price", "qty", "score", "units",
                                               "rating"};
    return v;
}
inline const std::vector<std::string>& text_names() {
    static const std::vector<std::string> v = {"region", "team", "category"};
    return v;
}
inline const std::vector<std::string>& text_values() {
    static const std::vector<std::string> v = {"north", "south", "east", "west", "central"};
    return v;
}

}  // namespace detail

/// Deterministic task + table for one template. The label is computed by
/// exhaustive evaluation over the generated rows.
inline TaskInstance generate_task(uint64_t seed, int template_id) {
    if (template_id < 0 || template_id >= kNumTaskTemplates)
        throw std::invalid_argument("template_id out of range");
    Rng rng(hash_bytes("task", seed * 1315423911ULL + static_cast<uint64_t>(template_id)));

    TaskInstance inst;
    TaskSpec& t = inst.spec;
    Table& table = inst.table;
    t.seed = seed;
    t.template_id = template_id;
    t.task_id = "task-" + std::to_string(seed) + "-t" + std::to_string(template_id);
    t.input_mode = rng.coin() ? InputMode::TableInfo : InputMode::TablePath;
    t.error_style = rng.coin() ? ErrorStyle::Minimal : ErrorStyle::Trace;
    t.table_path = t.task_id + ".csv";

    bool general = std::find(general_templates().begin(), general_templates().end(),
                             template_id) != general_templates().end();
    t.category = general ? "general" : "table_agentic";

    if (general) {
        // small single-column table
        table.name = t.task_id;
        table.columns = {{"value", ColumnType::Int}};
        size_t nrows = template_id == 0 ? 2 : 2 + rng.uniform(5);
        for (size_t r = 0; r < nrows; ++r)
            table.rows.push_back({static_cast<int64_t>(1 + rng.uniform(12))});
        t.target_col = "value";
        int64_t total = 0;
        for (const auto& row : table.rows) total += std::get<int64_t>(row[0]);
        switch (template_id) {
            case 0: {
                int64_t a = std::get<int64_t>(table.rows[0][0]);
                int64_t b = std::get<int64_t>(table.rows[1][0]);
                t.task_type = TaskType::MathLogic;
                t.question = "What is " + std::to_string(a) + " plus " + std::to_string(b) +
                             "? Both values are stored in column 'value'.";
                t.label = std::to_string(a + b);
                break;
            }
            case 1:
                t.task_type = TaskType::MathLogic;
                t.question = "How many values does column 'value' contain?";
                t.label = std::to_string(table.rows.size());
                break;
            case 2:
                t.task_type = TaskType::General;
                t.question = "Give a one-line summary stating the total of column 'value'.";
                t.label = std::to_string(total);
                break;
            case 10:
                t.task_type = TaskType::QAWithLabel;
                t.question = "How many rows does this table have?";
                t.label = std::to_string(table.rows.size());
                break;
        }
    } else {
        table.name = t.task_id;
        size_t nrows = 5 + rng.uniform(6);

        std::string a_name = detail::numeric_names()[rng.uniform(detail::numeric_names().size())];
        std::string b_name = a_name;
        while (b_name == a_name)
            b_name = detail::numeric_names()[rng.uniform(detail::numeric_names().size())];
        std::string txt_name = detail::text_names()[rng.uniform(detail::text_names().size())];

        bool a_float = rng.coin();
        table.columns = {{"id", ColumnType::Int},
                         {a_name, a_float ? ColumnType::Float : ColumnType::Int},
                         {b_name, ColumnType::Int},
                         {txt_name, ColumnType::Text}};

        // distinct filter-column values so thresholds are never degenerate
        std::vector<int64_t> b_pool;
        for (int64_t v = 0; v <= 25; ++v) b_pool.push_back(v);
        rng.shuffle(b_pool);

        for (size_t r = 0; r < nrows; ++r) {
            Value a_val = a_float ? Value(static_cast<double>(rng.uniform(200)) / 10.0)
                                  : Value(static_cast<int64_t>(rng.uniform(21)));
            table.rows.push_back(
                {static_cast<int64_t>(r + 1), a_val, b_pool[r],
                 detail::text_values()[rng.uniform(detail::text_values().size())]});
        }

        // threshold at the median of the filter column: both sides non-empty
        std::vector<int64_t> b_sorted;
        for (const auto& row : table.rows) b_sorted.push_back(std::get<int64_t>(row[2]));
        std::sort(b_sorted.begin(), b_sorted.end());
        int64_t k = b_sorted[(b_sorted.size() - 1) / 2];

        t.target_col = a_name;
        t.filter_col = b_name;
        t.filter_value = static_cast<double>(k);

        auto sum_where = [&](auto pred) {
            double s = 0;
            for (const auto& row : table.rows)
                if (pred(std::get<int64_t>(row[2]))) s += value_as_number(row[1]);
            return s;
        };

        switch (template_id) {
            case 3: {
                t.task_type = TaskType::TableQAWithLabel;
                t.filter_cmp = ">";
                t.question = "What is the sum of '" + a_name + "' across rows where '" + b_name +
                             "' > " + std::to_string(k) + "?";
                t.label = format_number(sum_where([&](int64_t b) { return b > k; }));
                break;
            }
            case 4: {
                t.task_type = TaskType::TableQAWithLabel;
                double s = 0;
                for (const auto& row : table.rows) s += value_as_number(row[1]);
                t.question = "What is the mean of column '" + a_name + "'?";
                t.label = format_number(s / static_cast<double>(table.rows.size()));
                break;
            }
            case 5: {
                t.task_type = TaskType::TableQAWithLabel;
                t.filter_cmp = "<=";
                double best = 0;
                bool first = true;
                for (const auto& row : table.rows) {
                    if (std::get<int64_t>(row[2]) <= k) {
                        double v = value_as_number(row[1]);
                        if (first || v > best) best = v;
                        first = false;
                    }
                }
                t.question = "What is the maximum '" + a_name + "' among rows where '" + b_name +
                             "' <= " + std::to_string(k) + "?";
                t.label = format_number(best);
                break;
            }
            case 6: {
                t.task_type = TaskType::SQL;
                t.filter_cmp = ">";
                std::string rows_text;
                bool any = false;
                for (const auto& row : table.rows) {
                    if (std::get<int64_t>(row[2]) > k) {
                        if (any) rows_text.push_back('\n');
                        rows_text += value_to_string(row[1]);
                        any = true;
                    }
                }
                t.question = "List the values of '" + a_name + "' for rows where '" + b_name +
                             "' > " + std::to_string(k) + " (any order).";
                t.label = rows_text;
                break;
            }
            case 7: {
                t.task_type = TaskType::TableQAWithLabel;
                t.need_plot = true;
                t.question = "Plot a bar chart of '" + a_name +
                             "' and report how many rows were plotted.";
                t.label = std::to_string(table.rows.size());
                break;
            }
            case 8: {
                t.task_type = TaskType::Coding;
                t.filter_cmp = ">";
                double best = 0;
                bool first = true;
                for (const auto& row : table.rows) {
                    if (std::get<int64_t>(row[2]) > k) {
                        double v = value_as_number(row[1]);
                        if (first || v < best) best = v;
                        first = false;
                    }
                }
                t.question = "Using the table tools, compute the minimum '" + a_name +
                             "' over rows where '" + b_name + "' > " + std::to_string(k) + ".";
                t.label = format_number(best);
                break;
            }
            case 9: {
                t.task_type = TaskType::TableQAPython;
                double s = 0;
                for (const auto& row : table.rows) s += value_as_number(row[1]);
                t.question = "Work out the mean of column '" + a_name +
                             "' and state it clearly.";
                t.label = format_number(s / static_cast<double>(table.rows.size()));
                break;
            }
        }
    }

    // first-N-rows preview for the table-info input mode
    t.table_inline = detail::render_rows(table, 5);
    return inst;
}

inline TaskInstance generate_task(uint64_t seed) {
    Rng pick(hash_bytes("template-pick", seed));
    return generate_task(seed, static_cast<int>(pick.uniform(kNumTaskTemplates)));
}

// ----------------------------------------------------------------------------
// Action vocabulary, binding, reference trajectories
// ----------------------------------------------------------------------------

/// Closed macro-action set the policy chooses from. Arguments are bound from
/// the task spec, so policies are finitely parameterizable.
inline const std::vector<std::string>& action_vocab() {
    static const std::vector<std::string> v = {
        "load",    "head",      "select", "filter",  "agg_sum", "agg_mean",
        "agg_count", "agg_max", "agg_min", "sort",   "plot",    "answer"};
    return v;
}

inline ToolAction bind_action(const std::string& name, const TaskSpec& task, const Session& s) {
    if (name == "load") return {ToolOp::Load, {task.table_path}};
    if (name == "head") return {ToolOp::Head, {"3"}};
    if (name == "select") return {ToolOp::Select, {task.target_col}};
    if (name == "filter") {
        std::string col = task.filter_col.empty() ? task.target_col : task.filter_col;
        std::string cmp = task.filter_cmp.empty() ? ">" : task.filter_cmp;
        return {ToolOp::Filter, {col, cmp, format_number(task.filter_value)}};
    }
    if (name == "agg_sum") return {ToolOp::Aggregate, {"sum", task.target_col}};
    if (name == "agg_mean") return {ToolOp::Aggregate, {"mean", task.target_col}};
    if (name == "agg_count") return {ToolOp::Aggregate, {"count", task.target_col}};
    if (name == "agg_max") return {ToolOp::Aggregate, {"max", task.target_col}};
    if (name == "agg_min") return {ToolOp::Aggregate, {"min", task.target_col}};
    if (name == "sort") return {ToolOp::Sort, {task.target_col, "asc"}};
    if (name == "plot") return {ToolOp::Plot, {"bar", task.target_col}};
    if (name == "answer") return {ToolOp::Answer, {s.result.value_or("")}};
    throw std::invalid_argument("unknown action: " + name);
}

/// Known-correct macro-action sequence for a generated task; the oracle for
/// function-selection correctness in step rewards.
inline std::vector<std::string> reference_actions(const TaskSpec& task) {
    std::vector<std::string> body;
    switch (task.template_id) {
        case 0: case 2: body = {"agg_sum", "answer"}; break;
        case 1: case 10: body = {"agg_count", "answer"}; break;
        case 3: body = {"filter", "agg_sum", "answer"}; break;
        case 4: case 9: body = {"agg_mean", "answer"}; break;
        case 5: body = {"filter", "agg_max", "answer"}; break;
        case 6: body = {"filter", "select", "answer"}; break;
        case 7: body = {"plot", "agg_count", "answer"}; break;
        case 8: body = {"filter", "agg_min", "answer"}; break;
        default: body = {"answer"}; break;
    }
    if (task.input_mode == InputMode::TablePath) body.insert(body.begin(), "load");
    return body;
}

namespace detail {

inline std::string think_text(const TaskSpec& task, size_t turn, const std::string& action) {
    if (action == "answer")
        return "The computed result is ready; I will state the final answer.";
    if (turn == 0)
        return "The question is: " + task.question + " I will start with " + action + ".";
    return "Continuing the analysis with " + action + ".";
}

}  // namespace detail

/// Builds the reference trajectory by replaying the reference actions through
/// the executor. The final answer is whatever the session computed, which the
/// label-soundness property pins to the task label.
inline traj::Trajectory reference_trajectory(const TaskSpec& task, const Table& table) {
    Session s = make_session(task, table);
    traj::Trajectory t;
    t.task_id = task.task_id;
    for (const std::string& name : reference_actions(task)) {
        traj::append_segment(t, traj::SegmentKind::Think,
                             detail::think_text(task, t.segments.size() / 3, name));
        if (name == "answer") {
            ToolAction a = bind_action(name, task, s);
            traj::append_segment(t, traj::SegmentKind::Answer,
                                 a.args.empty() ? "" : a.args[0]);
        } else {
            ToolAction a = bind_action(name, task, s);
            Observation obs = execute_tool(table, a, s, task.error_style);
            traj::append_segment(t, traj::SegmentKind::ToolCall, render_call(a));
            traj::append_segment(t, traj::SegmentKind::ToolResponse, obs.payload);
        }
    }
    return t;
}

// ----------------------------------------------------------------------------
// Group rollouts
// ----------------------------------------------------------------------------

/// Context key the toy policy conditions on: template, input mode, turn index.
inline std::string context_key(const TaskSpec& task, size_t turn) {
    return "tpl" + std::to_string(task.template_id) + "|" +
           (task.input_mode == InputMode::TableInfo ? "info" : "path") + "|t" +
           std::to_string(turn);
}

struct RolloutSample {
    traj::Trajectory trajectory;
    std::vector<std::string> contexts;  // context key per emitted action
    std::vector<size_t> actions;        // action index per turn
    std::vector<double> logps;          // behavior-policy log-probs (pi_old)
    std::vector<StepOutcome> outcomes;  // per turn
    std::vector<std::string> step_texts;  // model-authored text per turn
    bool truncated = false;
};

/// Samples one trajectory from the policy. Each turn emits think + tool_call +
/// tool_response segments (or think + answer on termination); hitting the turn
/// budget leaves the trajectory open and marks it truncated.
inline RolloutSample rollout_one(const policy::ToyPolicy& pol, const TaskSpec& task,
                                 const Table& table, size_t budget, Rng& rng) {
    RolloutSample out;
    out.trajectory.task_id = task.task_id;
    Session s = make_session(task, table);
    const auto& vocab = pol.vocab();

    std::vector<std::string> ref = reference_actions(task);
    for (size_t turn = 0; turn < budget; ++turn) {
        std::string ctx = context_key(task, turn);
        size_t a = pol.sample(ctx, rng);
        const std::string& name = vocab.at(a);
        out.contexts.push_back(ctx);
        out.actions.push_back(a);
        out.logps.push_back(pol.log_prob(ctx, a));

        bool on_reference = turn < ref.size() && ref[turn] == name;
        std::string think = detail::think_text(task, turn, name);

        if (name == "answer") {
            ToolAction bound = bind_action(name, task, s);
            std::string answer_text = bound.args.empty() ? "" : bound.args[0];
            traj::append_segment(out.trajectory, traj::SegmentKind::Think, think);
            traj::append_segment(out.trajectory, traj::SegmentKind::Answer, answer_text);
            out.outcomes.push_back({on_reference, true, true, false});
            out.step_texts.push_back(think + "\n" + answer_text);
            return out;
        }

        ToolAction bound = bind_action(name, task, s);
        Observation obs = execute_tool(table, bound, s, task.error_style);
        std::string call_text = render_call(bound);
        traj::append_segment(out.trajectory, traj::SegmentKind::Think, think);
        traj::append_segment(out.trajectory, traj::SegmentKind::ToolCall, call_text);
        traj::append_segment(out.trajectory, traj::SegmentKind::ToolResponse, obs.payload);
        out.outcomes.push_back({on_reference, obs.ok(), false, name == "plot"});
        out.step_texts.push_back(think + "\n" + call_text);
    }
    out.truncated = true;
    out.trajectory.meta["truncated"] = "true";
    return out;
}

/// True when a concrete tool action realizes the named macro action for this
/// task (op match, plus the aggregate function where applicable).
inline bool action_matches(const std::string& macro_name, const ToolAction& a,
                           const TaskSpec& task) {
    Session probe = make_session(task, Table{});
    ToolAction expected = bind_action(macro_name, task, probe);
    if (expected.op != a.op) return false;
    if (a.op == ToolOp::Aggregate)
        return !a.args.empty() && !expected.args.empty() && a.args[0] == expected.args[0];
    return true;
}

/// Reconstructs per-turn outcomes for an externally produced trajectory by
/// replaying its tool calls and checking them against the reference sequence.
inline std::vector<StepOutcome> derive_outcomes(const traj::Trajectory& t,
                                                const TaskSpec& task, const Table& table) {
    std::vector<StepOutcome> out;
    Session s = make_session(task, table);
    std::vector<std::string> ref = reference_actions(task);
    for (const traj::Segment& seg : t.segments) {
        size_t turn = out.size();
        if (seg.kind == traj::SegmentKind::ToolCall) {
            StepOutcome o;
            if (std::optional<ToolAction> a = parse_call(seg.content)) {
                Observation obs = execute_tool(table, *a, s, task.error_style);
                o.execution_success = obs.ok();
                o.produced_plot = a->op == ToolOp::Plot;
                o.function_correct = turn < ref.size() && action_matches(ref[turn], *a, task);
            }
            out.push_back(o);
        } else if (seg.kind == traj::SegmentKind::Answer) {
            StepOutcome o;
            o.terminal = true;
            o.execution_success = true;
            o.function_correct = turn < ref.size() && ref[turn] == "answer";
            out.push_back(o);
        }
    }
    // an open trajectory ending in a think segment still forms a final turn
    if (!t.segments.empty() && t.segments.back().kind == traj::SegmentKind::Think) {
        StepOutcome o;
        o.execution_success = true;
        out.push_back(o);
    }
    return out;
}

/// G trajectories for one task with per-action behavior log-probs recorded.
inline std::vector<RolloutSample> rollout_group(const policy::ToyPolicy& pol,
                                                const TaskSpec& task, const Table& table,
                                                size_t group_size, size_t budget, Rng& rng) {
    if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
    if (budget < 1) throw std::invalid_argument("rollout budget must be >= 1");
    std::vector<RolloutSample> out;
    out.reserve(group_size);
    for (size_t g = 0; g < group_size; ++g)
        out.push_back(rollout_one(pol, task, table, budget, rng));
    return out;
}

}  // namespace tablerl::env
