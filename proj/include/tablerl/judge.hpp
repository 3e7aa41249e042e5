#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/table_env.hpp"
#include "tablerl/trajectory.hpp"

namespace tablerl::judge {

// ----------------------------------------------------------------------------
// Criteria-injected judging. Evaluation criteria are generated once per task
// by a teacher, cached, and injected into the scoring prompt; the judge
// returns a 0-10 verdict which the reward system normalizes to [0,1].
// ----------------------------------------------------------------------------

struct CriteriaSet {
    std::string task_id;
    std::vector<std::string> criteria;
    std::string source;  // teacher identifier
};

struct JudgeVerdict {
    double score = 0.0;  // 0..10; non-integer values are accepted
    std::string explanation;
};

struct EndpointConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8811
    std::string path = "/v1/chat/completions";
    std::string model = "judge";
    std::string auth_env;  // name of the env var holding the bearer token
    double timeout_s = 30.0;
    int max_retries = 2;
    int max_concurrent = 4;
};

inline void to_json(nlohmann::json& j, const EndpointConfig& c) {
    j = nlohmann::json{{"base_url", c.base_url},       {"path", c.path},
                       {"model", c.model},             {"auth_env", c.auth_env},
                       {"timeout_s", c.timeout_s},     {"max_retries", c.max_retries},
                       {"max_concurrent", c.max_concurrent}};
}

inline void from_json(const nlohmann::json& j, EndpointConfig& c) {
    j.at("base_url").get_to(c.base_url);
    c.path = j.value("path", "/v1/chat/completions");
    c.model = j.value("model", "judge");
    c.auth_env = j.value("auth_env", "");
    c.timeout_s = j.value("timeout_s", 30.0);
    c.max_retries = j.value("max_retries", 2);
    c.max_concurrent = j.value("max_concurrent", 4);
    if (c.max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
    if (c.max_concurrent < 1) throw std::invalid_argument("max_concurrent must be >= 1");
}

class JudgeUnavailable : public std::runtime_error {
public:
    explicit JudgeUnavailable(const std::string& msg)
        : std::runtime_error("judge unavailable: " + msg) {}
};

class TeacherUnavailable : public std::runtime_error {
public:
    explicit TeacherUnavailable(const std::string& msg)
        : std::runtime_error("teacher unavailable: " + msg) {}
};

class MalformedVerdict : public std::runtime_error {
public:
    explicit MalformedVerdict(const std::string& msg)
        : std::runtime_error("malformed verdict: " + msg) {}
};

// ----------------------------------------------------------------------------
// Scoring prompt
// ----------------------------------------------------------------------------

/// Scoring prompt template. {criteria} and {response} are substitution slots;
/// {{ and }} denote literal braces.
inline const std::string& judge_prompt_template() {
    static const std::string tmpl =
        "## You are a reward model. Your task is to evaluate the quality of the assistant's "
        "response based on the following criteria:\n"
        "\n"
        "{criteria}\n"
        "\n"
        "The assistant's response is as follows:\n"
        "{response}\n"
        "\n"
        "Assign a numeric score between 0 and 10, where 0 is the worst and 10 is the best. "
        "Then provide a concise explanation for the score.\n"
        "\n"
        "## Output strictly in JSON format with the following keys:\n"
        "- \"score\": numeric value (0-10)\n"
        "- \"explanation\": a brief text explaining the score\n"
        "\n"
        "Do not include any other text outside the JSON. The explanation should be short and "
        "focused on the criteria.\n"
        "\n"
        "## Example of correct output:\n"
        "\n"
        "{{\n"
        "  \"score\": 8,\n"
        "  \"explanation\": \"The response is mostly accurate but misses one key detail.\"\n"
        "}}\n";
    return tmpl;
}

inline std::string render_criteria(const CriteriaSet& c) {
    std::string out;
    for (size_t i = 0; i < c.criteria.size(); ++i) {
        if (i) out.push_back('\n');
        out += std::to_string(i + 1) + ". " + c.criteria[i];
    }
    return out;
}

/// Single-pass template instantiation: slot values are inserted verbatim and
/// never re-scanned, so braces inside criteria or the response stay literal.
inline std::string build_judge_prompt(const CriteriaSet& c, std::string_view response) {
    if (c.criteria.empty()) throw std::invalid_argument("criteria set must be non-empty");
    const std::string& tmpl = judge_prompt_template();
    std::string criteria_text = render_criteria(c);
    std::string out;
    out.reserve(tmpl.size() + criteria_text.size() + response.size());
    for (size_t i = 0; i < tmpl.size();) {
        if (tmpl.compare(i, 2, "{{") == 0) {
            out.push_back('{');
            i += 2;
        } else if (tmpl.compare(i, 2, "}}") == 0) {
            out.push_back('}');
            i += 2;
        } else if (tmpl.compare(i, 10, "{criteria}") == 0) {
            out += criteria_text;
            i += 10;
        } else if (tmpl.compare(i, 10, "{response}") == 0) {
            out += response;
            i += 10;
        } else {
            out.push_back(tmpl[i]);
            ++i;
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Verdict parsing
// ----------------------------------------------------------------------------

/// First parseable JSON object embedded in free-form text.
inline std::optional<nlohmann::json> extract_first_json(std::string_view text) {
    for (size_t start = 0; (start = text.find('{', start)) != std::string_view::npos; ++start) {
        int depth = 0;
        bool in_string = false;
        for (size_t i = start; i < text.size(); ++i) {
            char ch = text[i];
            if (in_string) {
                if (ch == '\\') ++i;
                else if (ch == '"') in_string = false;
            } else if (ch == '"') {
                in_string = true;
            } else if (ch == '{') {
                ++depth;
            } else if (ch == '}') {
                if (--depth == 0) {
                    auto parsed = nlohmann::json::parse(text.substr(start, i - start + 1),
                                                        nullptr, false);
                    if (!parsed.is_discarded()) return parsed;
                    break;
                }
            }
        }
    }
    return std::nullopt;
}

/// Strict parse of a judge reply: the first JSON object must carry a numeric
/// "score" in [0,10]. Anything else is a MalformedVerdict.
inline JudgeVerdict parse_verdict(std::string_view reply) {
    std::optional<nlohmann::json> j = extract_first_json(reply);
    if (!j) throw MalformedVerdict("no JSON object in reply");
    if (!j->contains("score")) throw MalformedVerdict("reply has no score field");
    const nlohmann::json& s = (*j)["score"];
    if (!s.is_number()) throw MalformedVerdict("score is not numeric");
    double score = s.get<double>();
    if (!(score >= 0.0 && score <= 10.0))
        throw MalformedVerdict("score " + format_number(score) + " outside [0,10]");
    JudgeVerdict v;
    v.score = score;
    if (j->contains("explanation") && (*j)["explanation"].is_string())
        v.explanation = (*j)["explanation"].get<std::string>();
    return v;
}

// ----------------------------------------------------------------------------
// Teachers and the criteria cache
// ----------------------------------------------------------------------------

class Teacher {
public:
    virtual ~Teacher() = default;
    virtual CriteriaSet criteria_for(const env::TaskSpec& task) = 0;
};

/// Deterministic offline teacher. Expected values are marked with backticks so
/// the mock judge can check them without any model in the loop.
class MockTeacher : public Teacher {
public:
    CriteriaSet criteria_for(const env::TaskSpec& task) override {
        CriteriaSet c;
        c.task_id = task.task_id;
        c.source = "mock-teacher";
        if (task.label && !task.label->empty()) {
            c.criteria.push_back("The final answer states the value `" + *task.label + "`.");
        }
        c.criteria.push_back("The response directly addresses the question: " + task.question);
        return c;
    }
};

/// Per-run criteria cache: at most one teacher request per task id.
class CriteriaCache {
public:
    /// Returns the cached set or generates it via the teacher exactly once.
    CriteriaSet get_or_generate(const env::TaskSpec& task, Teacher& teacher) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(task.task_id);
        if (it != cache_.end()) return it->second;
        CriteriaSet c = teacher.criteria_for(task);
        if (c.criteria.empty()) throw TeacherUnavailable("teacher returned no criteria");
        cache_.emplace(task.task_id, c);
        return c;
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return cache_.size();
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, CriteriaSet> cache_;
};

// ----------------------------------------------------------------------------
// Judges
// ----------------------------------------------------------------------------

class Judge {
public:
    virtual ~Judge() = default;
    /// 0-10 verdict for a response to the given task.
    virtual JudgeVerdict score(const env::TaskSpec& task, const std::string& response) = 0;
};

/// Offline deterministic judge for tests and CI: checks each criterion by
/// keyword match. A criterion carrying a backtick-quoted expectation is
/// satisfied when the response contains or numerically equals it (weight 8,
/// split across such criteria); the remaining criteria are satisfied by a
/// non-empty response (weight 2, split).
class MockJudge : public Judge {
public:
    MockJudge() : teacher_(std::make_shared<MockTeacher>()) {}
    explicit MockJudge(std::shared_ptr<Teacher> teacher) : teacher_(std::move(teacher)) {}

    JudgeVerdict score(const env::TaskSpec& task, const std::string& response) override {
        CriteriaSet cs = cache_.get_or_generate(task, *teacher_);
        std::vector<bool> satisfied;
        std::vector<bool> is_value;
        size_t value_count = 0;
        for (const std::string& criterion : cs.criteria) {
            std::optional<std::string> expected = backtick_value(criterion);
            if (expected) {
                ++value_count;
                is_value.push_back(true);
                satisfied.push_back(matches_value(response, *expected));
            } else {
                is_value.push_back(false);
                satisfied.push_back(!trim(response).empty());
            }
        }
        size_t other_count = cs.criteria.size() - value_count;
        double value_weight = value_count ? 8.0 / static_cast<double>(value_count) : 0.0;
        double other_weight = 0.0;
        if (other_count)
            other_weight = (value_count ? 2.0 : 10.0) / static_cast<double>(other_count);
        double score = 0.0;
        size_t hits = 0;
        for (size_t i = 0; i < cs.criteria.size(); ++i) {
            if (!satisfied[i]) continue;
            ++hits;
            score += is_value[i] ? value_weight : other_weight;
        }
        JudgeVerdict v;
        v.score = std::min(10.0, score);
        v.explanation = std::to_string(hits) + " of " + std::to_string(cs.criteria.size()) +
                        " criteria satisfied";
        return v;
    }

    const CriteriaCache& cache() const { return cache_; }

private:
    static std::optional<std::string> backtick_value(const std::string& criterion) {
        size_t a = criterion.find('`');
        if (a == std::string::npos) return std::nullopt;
        size_t b = criterion.find('`', a + 1);
        if (b == std::string::npos) return std::nullopt;
        return criterion.substr(a + 1, b - a - 1);
    }

    static bool matches_value(const std::string& response, const std::string& expected) {
        std::string r = collapse_whitespace(to_lower_ascii(response));
        std::string e = collapse_whitespace(to_lower_ascii(expected));
        if (!e.empty() && r.find(e) != std::string::npos) return true;
        double rv, ev;
        if (parse_number(r, rv) && parse_number(e, ev))
            return std::fabs(rv - ev) <= 1e-6 * std::max({1.0, std::fabs(rv), std::fabs(ev)});
        return false;
    }

    std::shared_ptr<Teacher> teacher_;
    CriteriaCache cache_;
};

}  // namespace tablerl::judge
