#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"

namespace tablerl::policy {

// ----------------------------------------------------------------------------
// ToyPolicy: a tabular categorical policy. Each context key (task features x
// turn index) owns a logit vector over a closed action vocabulary; action
// probabilities are the softmax of those logits. Contexts materialize lazily
// with zero logits (uniform behavior), so unseen contexts are well-defined.
// ----------------------------------------------------------------------------

class ToyPolicy {
public:
    ToyPolicy() = default;
    explicit ToyPolicy(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {}

    const std::vector<std::string>& vocab() const { return vocab_; }
    size_t vocab_size() const { return vocab_.size(); }

    std::vector<double>& logits(const std::string& context) {
        auto it = table_.find(context);
        if (it == table_.end())
            it = table_.emplace(context, std::vector<double>(vocab_.size(), 0.0)).first;
        return it->second;
    }

    const std::vector<double>* find_logits(const std::string& context) const {
        auto it = table_.find(context);
        return it == table_.end() ? nullptr : &it->second;
    }

    /// Softmax probabilities for a context (uniform when never visited).
    std::vector<double> probs(const std::string& context) const {
        const std::vector<double>* l = find_logits(context);
        if (!l) return std::vector<double>(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()));
        return softmax(*l);
    }

    double log_prob(const std::string& context, size_t action) const {
        std::vector<double> p = probs(context);
        return std::log(std::max(p.at(action), 1e-300));
    }

    /// Inverse-CDF sample; deterministic given the Rng stream.
    size_t sample(const std::string& context, Rng& rng) const {
        std::vector<double> p = probs(context);
        double u = rng.uniform_real();
        double acc = 0.0;
        for (size_t a = 0; a < p.size(); ++a) {
            acc += p[a];
            if (u < acc) return a;
        }
        return p.size() - 1;
    }

    /// Shannon entropy in nats.
    double entropy(const std::string& context) const {
        double h = 0.0;
        for (double p : probs(context))
            if (p > 0.0) h -= p * std::log(p);
        return h;
    }

    const std::map<std::string, std::vector<double>>& table() const { return table_; }
    std::map<std::string, std::vector<double>>& table() { return table_; }

    bool finite() const {
        for (const auto& [ctx, l] : table_)
            for (double v : l)
                if (!std::isfinite(v)) return false;
        return true;
    }

    static std::vector<double> softmax(const std::vector<double>& logits) {
        double mx = *std::max_element(logits.begin(), logits.end());
        std::vector<double> p(logits.size());
        double sum = 0.0;
        for (size_t i = 0; i < logits.size(); ++i) {
            p[i] = std::exp(logits[i] - mx);
            sum += p[i];
        }
        for (double& v : p) v /= sum;
        return p;
    }

    // Checkpoint: the full logit mapping as JSON.
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["vocab"] = vocab_;
        nlohmann::json tbl = nlohmann::json::object();
        for (const auto& [ctx, l] : table_) tbl[ctx] = l;
        j["logits"] = tbl;
        return j;
    }

    static ToyPolicy from_json(const nlohmann::json& j) {
        ToyPolicy p(j.at("vocab").get<std::vector<std::string>>());
        for (const auto& [ctx, l] : j.at("logits").items()) {
            std::vector<double> v = l.get<std::vector<double>>();
            if (v.size() != p.vocab_.size())
                throw std::invalid_argument("checkpoint logit vector has wrong arity");
            p.table_[ctx] = std::move(v);
        }
        return p;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
        f << to_json().dump(2) << "\n";
    }

    static ToyPolicy load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }

private:
    std::vector<std::string> vocab_;
    std::map<std::string, std::vector<double>> table_;
};

}  // namespace tablerl::policy
