#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tablerl {

// ----------------------------------------------------------------------------
// Task taxonomy shared by the environment, the reward system and the pipeline.
// ----------------------------------------------------------------------------

enum class TaskType {
    General,
    MathLogic,
    Coding,
    TableQAPython,
    SQL,
    TableQAWithLabel,
    QAWithLabel,
};

constexpr std::string_view to_string(TaskType t) {
    switch (t) {
        case TaskType::General: return "general";
        case TaskType::MathLogic: return "math_logic";
        case TaskType::Coding: return "coding";
        case TaskType::TableQAPython: return "table_qa_python";
        case TaskType::SQL: return "sql";
        case TaskType::TableQAWithLabel: return "table_qa_with_label";
        case TaskType::QAWithLabel: return "qa_with_label";
    }
    return "general";
}

inline TaskType task_type_from_string(std::string_view s) {
    if (s == "general") return TaskType::General;
    if (s == "math_logic") return TaskType::MathLogic;
    if (s == "coding") return TaskType::Coding;
    if (s == "table_qa_python") return TaskType::TableQAPython;
    if (s == "sql") return TaskType::SQL;
    if (s == "table_qa_with_label") return TaskType::TableQAWithLabel;
    if (s == "qa_with_label") return TaskType::QAWithLabel;
    throw std::invalid_argument("unknown task type: " + std::string(s));
}

constexpr TaskType kAllTaskTypes[] = {
    TaskType::General,          TaskType::MathLogic,   TaskType::Coding,
    TaskType::TableQAPython,    TaskType::SQL,         TaskType::TableQAWithLabel,
    TaskType::QAWithLabel,
};

/// How a task presents its table to the model.
enum class InputMode { TableInfo, TablePath };

constexpr std::string_view to_string(InputMode m) {
    return m == InputMode::TableInfo ? "table_info" : "table_path";
}

inline InputMode input_mode_from_string(std::string_view s) {
    if (s == "table_info") return InputMode::TableInfo;
    if (s == "table_path") return InputMode::TablePath;
    throw std::invalid_argument("unknown input mode: " + std::string(s));
}

/// Shape of execution-error text returned by the environment.
enum class ErrorStyle { Minimal, Trace };

constexpr std::string_view to_string(ErrorStyle e) {
    return e == ErrorStyle::Minimal ? "minimal" : "trace";
}

inline ErrorStyle error_style_from_string(std::string_view s) {
    if (s == "minimal") return ErrorStyle::Minimal;
    if (s == "trace") return ErrorStyle::Trace;
    throw std::invalid_argument("unknown error style: " + std::string(s));
}

/// Per-turn outcome flags used by process step rewards.
struct StepOutcome {
    bool function_correct = false;
    bool execution_success = false;
    bool terminal = false;
    bool produced_plot = false;
};

/// Raised when an external execution exceeds its wall-clock budget; the reward
/// system scores the affected run as 0.
class ExecutionTimeout : public std::runtime_error {
public:
    explicit ExecutionTimeout(const std::string& msg)
        : std::runtime_error("execution timeout: " + msg) {}
};

}  // namespace tablerl
