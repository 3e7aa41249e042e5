#pragma once

// Shared fixtures for the test suite: random content/trajectory generators and
// a brute-force table evaluator kept independent of the library's own paths.

#include <string>
#include <vector>

#include "tablerl/common.hpp"
#include "tablerl/table.hpp"
#include "tablerl/trajectory.hpp"

namespace testsupport {

using tablerl::Rng;

/// Adversarial content: embedded tags, backslashes, newlines, unicode.
inline std::string random_content(Rng& rng) {
    static const std::vector<std::string> fragments = {
        "alpha",  "beta",    "42",          " ",        "\n",          "\t",
        "\\",     "<",       ">",           "</think>", "</tool_call>", "<answer>",
        "</answer>", "a<b",  "x\\<y",       "中文",     "é",           ",",
        "{\"k\":1}", "sum(", ")",           "</function_call>", "\\\\", "</tool_response>"};
    std::string out;
    size_t n = rng.uniform(8);
    for (size_t i = 0; i < n; ++i) out += fragments[rng.uniform(fragments.size())];
    return out;
}

/// Structurally valid trajectory: think-first, paired calls, optional answer.
inline tablerl::traj::Trajectory random_valid_trajectory(Rng& rng, bool force_complete = false) {
    using namespace tablerl::traj;
    Trajectory t;
    t.task_id = "t" + std::to_string(rng.uniform(1000));
    append_segment(t, SegmentKind::Think, random_content(rng));
    size_t turns = rng.uniform(4);
    for (size_t i = 0; i < turns; ++i) {
        if (rng.coin(0.4)) append_segment(t, SegmentKind::Think, random_content(rng));
        append_segment(t, SegmentKind::ToolCall, random_content(rng));
        append_segment(t, SegmentKind::ToolResponse, random_content(rng));
    }
    if (force_complete || rng.coin(0.8))
        append_segment(t, SegmentKind::Answer, random_content(rng));
    return t;
}

/// Independent brute-force evaluation helpers over tables (row loops only).
inline double brute_force_sum(const tablerl::env::Table& t, const std::string& col) {
    int idx = t.column_index(col);
    double s = 0;
    for (const auto& row : t.rows) s += tablerl::env::value_as_number(row[idx]);
    return s;
}

}  // namespace testsupport
