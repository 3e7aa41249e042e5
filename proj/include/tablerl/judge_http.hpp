#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "tablerl/judge.hpp"

namespace tablerl::judge {

namespace detail {

/// Counting semaphore with a runtime limit (bounds in-flight judge requests).
class RequestGate {
public:
    explicit RequestGate(int limit) : available_(limit) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

struct GateGuard {
    RequestGate& gate;
    explicit GateGuard(RequestGate& g) : gate(g) { gate.acquire(); }
    ~GateGuard() { gate.release(); }
};

}  // namespace detail

/// Optional request/response transcript sink for audit logs.
using TranscriptSink = std::function<void(const std::string& request_body,
                                          const std::string& response_body)>;

// ----------------------------------------------------------------------------
// Chat-completion client shared by the HTTP teacher and judge. Sends a JSON
// body with a messages list and reads the generated text out of the reply.
// ----------------------------------------------------------------------------

class ChatClient {
public:
    explicit ChatClient(EndpointConfig cfg, TranscriptSink sink = nullptr)
        : cfg_(std::move(cfg)), sink_(std::move(sink)), gate_(cfg_.max_concurrent) {}

    const EndpointConfig& config() const { return cfg_; }

    /// One request, no retries; throws JudgeUnavailable on transport failure
    /// and MalformedVerdict-agnostic errors upward as runtime_error.
    std::string complete_once(const std::string& prompt) {
        detail::GateGuard guard(gate_);
        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(std::chrono::milliseconds(
            static_cast<int>(cfg_.timeout_s * 1000)));
        client.set_read_timeout(std::chrono::milliseconds(
            static_cast<int>(cfg_.timeout_s * 1000)));

        httplib::Headers headers;
        if (!cfg_.auth_env.empty()) {
            if (const char* token = std::getenv(cfg_.auth_env.c_str()); token && *token)
                headers.emplace("Authorization", std::string("Bearer ") + token);
        }

        nlohmann::json body = {
            {"model", cfg_.model},
            {"messages", nlohmann::json::array({nlohmann::json{{"role", "user"},
                                                               {"content", prompt}}})},
        };
        std::string body_text = body.dump();
        httplib::Result res = client.Post(cfg_.path, headers, body_text, "application/json");
        if (!res)
            throw JudgeUnavailable("transport error: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw JudgeUnavailable("endpoint returned HTTP " + std::to_string(res->status));
        if (sink_) sink_(body_text, res->body);
        return extract_text(res->body);
    }

private:
    /// Generated text from common serving reply shapes.
    static std::string extract_text(const std::string& reply) {
        nlohmann::json j = nlohmann::json::parse(reply, nullptr, false);
        if (j.is_discarded()) return reply;  // plain-text endpoint
        if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
            const nlohmann::json& c = j["choices"][0];
            if (c.contains("message") && c["message"].contains("content"))
                return c["message"]["content"].get<std::string>();
            if (c.contains("text")) return c["text"].get<std::string>();
        }
        if (j.contains("content") && j["content"].is_string())
            return j["content"].get<std::string>();
        if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
        return reply;
    }

    EndpointConfig cfg_;
    TranscriptSink sink_;
    detail::RequestGate gate_;
};

// ----------------------------------------------------------------------------
// HTTP teacher: generates evaluation criteria in advance of scoring.
// ----------------------------------------------------------------------------

/// Default criteria-generation prompt (the scoring template is fixed; this one
/// is configuration with the documented default below).
inline const std::string& criteria_generation_template() {
    static const std::string tmpl =
        "Write a short list of objective evaluation criteria for judging an assistant's answer "
        "to the following task. One criterion per line, no preamble.\n\nTask:\n{question}\n";
    return tmpl;
}

class HttpTeacher : public Teacher {
public:
    explicit HttpTeacher(EndpointConfig cfg, TranscriptSink sink = nullptr)
        : client_(std::move(cfg), std::move(sink)) {}

    CriteriaSet criteria_for(const env::TaskSpec& task) override {
        std::string prompt =
            replace_all(criteria_generation_template(), "{question}", env::render_prompt(task));
        std::string reply;
        int attempts = client_.config().max_retries + 1;
        for (int i = 0; i < attempts; ++i) {
            try {
                reply = client_.complete_once(prompt);
                break;
            } catch (const JudgeUnavailable& e) {
                if (i + 1 == attempts) throw TeacherUnavailable(e.what());
            }
        }
        CriteriaSet c;
        c.task_id = task.task_id;
        c.source = client_.config().model;
        for (std::string line : split(reply, '\n')) {
            std::string s = trim(line);
            while (!s.empty() && (std::isdigit(static_cast<unsigned char>(s.front())) ||
                                  s.front() == '.' || s.front() == '-' || s.front() == '*' ||
                                  s.front() == ')'))
                s.erase(s.begin());
            s = trim(s);
            if (!s.empty()) c.criteria.push_back(s);
        }
        if (c.criteria.empty()) throw TeacherUnavailable("teacher reply contained no criteria");
        return c;
    }

private:
    ChatClient client_;
};

// ----------------------------------------------------------------------------
// HTTP judge: criteria-injected scoring over a chat-completion endpoint.
// ----------------------------------------------------------------------------

class HttpJudge : public Judge {
public:
    HttpJudge(EndpointConfig cfg, std::shared_ptr<Teacher> teacher,
              TranscriptSink sink = nullptr)
        : client_(std::move(cfg), std::move(sink)), teacher_(std::move(teacher)) {}

    JudgeVerdict score(const env::TaskSpec& task, const std::string& response) override {
        CriteriaSet criteria = cache_.get_or_generate(task, *teacher_);
        std::string prompt = build_judge_prompt(criteria, response);

        int attempts = client_.config().max_retries + 1;
        std::string last_error;
        for (int i = 0; i < attempts; ++i) {
            std::string reply;
            try {
                reply = client_.complete_once(prompt);
            } catch (const JudgeUnavailable& e) {
                last_error = e.what();
                continue;
            }
            try {
                return parse_verdict(reply);
            } catch (const MalformedVerdict& e) {
                last_error = e.what();  // re-request; the endpoint may self-correct
            }
        }
        if (last_error.find("malformed") != std::string::npos ||
            last_error.find("score") != std::string::npos ||
            last_error.find("JSON") != std::string::npos)
            throw MalformedVerdict("retries exhausted: " + last_error);
        throw JudgeUnavailable("retries exhausted: " + last_error);
    }

    const CriteriaCache& cache() const { return cache_; }

private:
    ChatClient client_;
    std::shared_ptr<Teacher> teacher_;
    CriteriaCache cache_;
};

}  // namespace tablerl::judge
