#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/policy.hpp"
#include "tablerl/reward.hpp"
#include "tablerl/table_env.hpp"

namespace tablerl::opt {

// ----------------------------------------------------------------------------
// GRPO++: group-normalized advantages, sentence-level importance ratios,
// asymmetric clipping, and scheduled entropy regularization, with analytic
// gradients over the tabular toy policy.
// ----------------------------------------------------------------------------

struct HyperParams {
    double eps_low = 0.2;    // lower clip width (ratio floor 1 - eps_low)
    double eps_high = 0.28;  // upper clip width (ratio ceiling 1 + eps_high)
    double entropy_bonus = 1e-3;  // C_H, exploration bonus coefficient
    double entropy_decay = 1e-3;  // eta, entropy-increase suppression coefficient
    int activation_step = 50;     // both entropy terms are zero before this step
    double learning_rate = 0.1;
    size_t group_size = 8;
    uint64_t seed = 0;
    int inner_updates = 2;      // gradient steps per old-policy refresh
    size_t rollout_budget = 6;  // max turns per rollout

    void validate() const {
        if (!(eps_low > 0.0 && eps_high > 0.0))
            throw std::invalid_argument("clip widths must be positive");
        if (entropy_bonus < 0.0 || entropy_decay < 0.0)
            throw std::invalid_argument("entropy coefficients must be non-negative");
        if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
        if (activation_step < 0) throw std::invalid_argument("activation_step must be >= 0");
        if (inner_updates < 1) throw std::invalid_argument("inner_updates must be >= 1");
        if (rollout_budget < 1) throw std::invalid_argument("rollout_budget must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const HyperParams& h) {
    j = nlohmann::json{{"eps_low", h.eps_low},
                       {"eps_high", h.eps_high},
                       {"entropy_bonus", h.entropy_bonus},
                       {"entropy_decay", h.entropy_decay},
                       {"activation_step", h.activation_step},
                       {"learning_rate", h.learning_rate},
                       {"group_size", h.group_size},
                       {"seed", h.seed},
                       {"inner_updates", h.inner_updates},
                       {"rollout_budget", h.rollout_budget}};
}

inline void from_json(const nlohmann::json& j, HyperParams& h) {
    HyperParams d;
    h.eps_low = j.value("eps_low", d.eps_low);
    h.eps_high = j.value("eps_high", d.eps_high);
    h.entropy_bonus = j.value("entropy_bonus", d.entropy_bonus);
    h.entropy_decay = j.value("entropy_decay", d.entropy_decay);
    h.activation_step = j.value("activation_step", d.activation_step);
    h.learning_rate = j.value("learning_rate", d.learning_rate);
    h.group_size = j.value("group_size", d.group_size);
    h.seed = j.value("seed", d.seed);
    h.inner_updates = j.value("inner_updates", d.inner_updates);
    h.rollout_budget = j.value("rollout_budget", d.rollout_budget);
    h.validate();
}

class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(const std::string& msg)
        : std::runtime_error("non-finite gradient: " + msg) {}
};

// ----------------------------------------------------------------------------
// Equation primitives
// ----------------------------------------------------------------------------

/// Group-normalized advantages: A_i = (r_i - mean) / std, population std with
/// a 1e-8 degeneracy floor that maps constant groups to zero advantage.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2)
        throw std::invalid_argument("advantage normalization needs a group of >= 2");
    double mean = 0.0;
    for (double r : rewards) {
        if (!std::isfinite(r)) throw std::invalid_argument("rewards must be finite");
        mean += r;
    }
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rewards.size());
    double std_dev = std::sqrt(var);
    std::vector<double> a(rewards.size(), 0.0);
    if (std_dev < 1e-8) return a;
    for (size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / std_dev;
    return a;
}

/// Sentence-level importance ratio: exp of the mean per-token log-prob
/// difference between the new and old policies.
inline double sequence_ratio(const std::vector<double>& new_logps,
                             const std::vector<double>& old_logps) {
    if (new_logps.empty() || new_logps.size() != old_logps.size())
        throw std::invalid_argument("log-prob lists must be non-empty and equal length");
    double sum = 0.0;
    for (size_t i = 0; i < new_logps.size(); ++i) sum += new_logps[i] - old_logps[i];
    return std::exp(sum / static_cast<double>(new_logps.size()));
}

/// Clipped surrogate term: min(s*A, clip(s, 1-eps_low, 1+eps_high)*A).
inline double clipped_term(double s, double advantage, double eps_low, double eps_high) {
    double clipped = std::clamp(s, 1.0 - eps_low, 1.0 + eps_high);
    return std::min(s * advantage, clipped * advantage);
}

inline double policy_entropy(const policy::ToyPolicy& pol, const std::string& context) {
    return pol.entropy(context);
}

/// Scheduled entropy contribution: zero before activation_step, then
/// C_H * H_new - eta * max(0, H_new - H_old).
inline double entropy_terms(double h_new, double h_old, int step, const HyperParams& hp) {
    if (step < hp.activation_step) return 0.0;
    return hp.entropy_bonus * h_new - hp.entropy_decay * std::max(0.0, h_new - h_old);
}

// ----------------------------------------------------------------------------
// Objective and analytic gradient
// ----------------------------------------------------------------------------

struct SequenceSample {
    std::vector<std::string> contexts;
    std::vector<size_t> actions;
    std::vector<double> old_logps;
    double reward = 0.0;  // aggregated trajectory return
};

struct RolloutBatch {
    std::vector<SequenceSample> sequences;

    void validate(size_t vocab_size) const {
        if (sequences.size() < 2) throw std::invalid_argument("batch needs >= 2 sequences");
        for (const SequenceSample& s : sequences) {
            if (s.contexts.empty() || s.contexts.size() != s.actions.size() ||
                s.contexts.size() != s.old_logps.size())
                throw std::invalid_argument("sequence fields must be non-empty and aligned");
            if (!std::isfinite(s.reward))
                throw std::invalid_argument("sequence reward must be finite");
            for (size_t a : s.actions)
                if (a >= vocab_size) throw std::invalid_argument("action outside vocabulary");
        }
    }
};

inline RolloutBatch batch_from_rollouts(const std::vector<env::RolloutSample>& rollouts,
                                        const std::vector<double>& rewards) {
    if (rollouts.size() != rewards.size())
        throw std::invalid_argument("one reward per rollout required");
    RolloutBatch b;
    for (size_t i = 0; i < rollouts.size(); ++i) {
        SequenceSample s;
        s.contexts = rollouts[i].contexts;
        s.actions = rollouts[i].actions;
        s.old_logps = rollouts[i].logps;
        s.reward = rewards[i];
        b.sequences.push_back(std::move(s));
    }
    return b;
}

using Gradient = std::map<std::string, std::vector<double>>;

struct ObjectiveStats {
    double objective = 0.0;
    Gradient gradient;
    double surrogate = 0.0;
    double entropy_contribution = 0.0;
    double mean_ratio = 1.0;
    double clipped_fraction = 0.0;
    double mean_entropy = 0.0;  // over contexts visited in the batch
};

/// Objective value and analytic gradient over every context's logits.
///
/// objective = (1/G) sum_i min(s_i A_i, clip(s_i) A_i)
///           + mean over visited steps of the scheduled entropy terms
///
/// The gradient flows through s_i (d log softmax = onehot - probs) and, when
/// active, through both entropy terms (dH/dz_b = -p_b (log p_b + H)).
inline ObjectiveStats loss_and_grad(const policy::ToyPolicy& pol,
                                    const policy::ToyPolicy& old_pol,
                                    const RolloutBatch& batch, const HyperParams& hp,
                                    int step) {
    batch.validate(pol.vocab_size());
    const size_t group = batch.sequences.size();

    std::vector<double> rewards;
    rewards.reserve(group);
    for (const SequenceSample& s : batch.sequences) rewards.push_back(s.reward);
    std::vector<double> advantages = compute_advantages(rewards);

    ObjectiveStats stats;
    Gradient& grad = stats.gradient;
    auto grad_row = [&](const std::string& ctx) -> std::vector<double>& {
        auto it = grad.find(ctx);
        if (it == grad.end())
            it = grad.emplace(ctx, std::vector<double>(pol.vocab_size(), 0.0)).first;
        return it->second;
    };

    // ---- clipped surrogate over sequences ----
    size_t clipped_count = 0;
    double ratio_sum = 0.0;
    for (size_t i = 0; i < group; ++i) {
        const SequenceSample& seq = batch.sequences[i];
        const double len = static_cast<double>(seq.contexts.size());

        std::vector<double> new_logps(seq.contexts.size());
        std::vector<std::vector<double>> probs(seq.contexts.size());
        for (size_t t = 0; t < seq.contexts.size(); ++t) {
            probs[t] = pol.probs(seq.contexts[t]);
            new_logps[t] = std::log(std::max(probs[t][seq.actions[t]], 1e-300));
        }
        double s = sequence_ratio(new_logps, seq.old_logps);
        ratio_sum += s;

        double a = advantages[i];
        double unclipped = s * a;
        double clipped = std::clamp(s, 1.0 - hp.eps_low, 1.0 + hp.eps_high) * a;
        stats.surrogate += std::min(unclipped, clipped) / static_cast<double>(group);

        // d(min)/ds: the unclipped branch contributes A, the clipped branch
        // contributes A inside the band and 0 beyond it
        double dterm_ds;
        if (unclipped <= clipped) {
            dterm_ds = a;
        } else {
            ++clipped_count;
            bool inside = s > 1.0 - hp.eps_low && s < 1.0 + hp.eps_high;
            dterm_ds = inside ? a : 0.0;
        }
        if (dterm_ds != 0.0) {
            // ds/dlogit = s * (1/len) * dlogpi/dlogit
            double coeff = dterm_ds * s / len / static_cast<double>(group);
            for (size_t t = 0; t < seq.contexts.size(); ++t) {
                std::vector<double>& row = grad_row(seq.contexts[t]);
                const std::vector<double>& p = probs[t];
                for (size_t b = 0; b < row.size(); ++b)
                    row[b] += coeff * ((b == seq.actions[t] ? 1.0 : 0.0) - p[b]);
            }
        }
    }
    stats.mean_ratio = ratio_sum / static_cast<double>(group);
    stats.clipped_fraction = static_cast<double>(clipped_count) / static_cast<double>(group);

    // ---- entropy terms over visited contexts (with multiplicity) ----
    std::map<std::string, size_t> visit_counts;
    size_t total_visits = 0;
    for (const SequenceSample& seq : batch.sequences)
        for (const std::string& ctx : seq.contexts) {
            ++visit_counts[ctx];
            ++total_visits;
        }

    double entropy_sum = 0.0;
    double contribution = 0.0;
    bool active = step >= hp.activation_step &&
                  (hp.entropy_bonus > 0.0 || hp.entropy_decay > 0.0);
    for (const auto& [ctx, count] : visit_counts) {
        double weight = static_cast<double>(count) / static_cast<double>(total_visits);
        std::vector<double> p = pol.probs(ctx);
        double h_new = 0.0;
        for (double v : p)
            if (v > 0.0) h_new -= v * std::log(v);
        entropy_sum += weight * h_new;
        if (!active) continue;

        double h_old = old_pol.entropy(ctx);
        contribution += weight * entropy_terms(h_new, h_old, step, hp);

        // d/dz of C_H*H - eta*max(0, H - H_old); subgradient 0 at equality
        double scale = hp.entropy_bonus - (h_new > h_old ? hp.entropy_decay : 0.0);
        if (scale == 0.0) continue;
        std::vector<double>& row = grad_row(ctx);
        for (size_t b = 0; b < p.size(); ++b) {
            double dh = p[b] > 0.0 ? -p[b] * (std::log(p[b]) + h_new) : 0.0;
            row[b] += weight * scale * dh;
        }
    }
    stats.mean_entropy = entropy_sum;
    stats.entropy_contribution = contribution;
    stats.objective = stats.surrogate + contribution;

    if (!std::isfinite(stats.objective))
        throw NonFiniteGradient("objective is not finite");
    for (const auto& [ctx, row] : grad)
        for (double g : row)
            if (!std::isfinite(g)) throw NonFiniteGradient("context " + ctx);
    return stats;
}

/// Gradient-ascent update: logits += lr * grad.
inline void apply_gradient(policy::ToyPolicy& pol, const Gradient& grad, double lr) {
    for (const auto& [ctx, row] : grad) {
        std::vector<double>& logits = pol.logits(ctx);
        for (size_t b = 0; b < row.size(); ++b) logits[b] += lr * row[b];
    }
}

// ----------------------------------------------------------------------------
// Training loop
// ----------------------------------------------------------------------------

struct TrainLogEntry {
    int step = 0;
    std::string task_id;
    double objective = 0.0;
    double mean_reward = 0.0;    // mean aggregated return over the group
    double mean_terminal = 0.0;  // mean terminal reward over the group
    double mean_entropy = 0.0;
    double mean_ratio = 1.0;
    double clipped_fraction = 0.0;
};

inline void to_json(nlohmann::json& j, const TrainLogEntry& e) {
    j = nlohmann::json{{"step", e.step},
                       {"task_id", e.task_id},
                       {"objective", e.objective},
                       {"mean_reward", e.mean_reward},
                       {"mean_terminal", e.mean_terminal},
                       {"mean_entropy", e.mean_entropy},
                       {"mean_ratio", e.mean_ratio},
                       {"clipped_fraction", e.clipped_fraction}};
}

struct TrainContext {
    /// Supplies the task trained on at a given step (the curriculum samples
    /// by stage mix; standalone training samples uniformly).
    std::function<const env::TaskInstance&(int step, Rng& rng)> next_task;
    reward::RegConfig reg;
    judge::Judge* judge = nullptr;
    bool dsl_run_hook = true;  // replay tool calls for Run-routed terminal checks
};

/// One outer optimization step: snapshot the old policy, roll out a group,
/// score it, then take inner_updates ascent steps on the GRPO++ objective.
inline TrainLogEntry train_step(policy::ToyPolicy& pol, TrainContext& ctx,
                                const HyperParams& hp, int step, Rng& rng) {
    const env::TaskInstance& inst = ctx.next_task(step, rng);
    policy::ToyPolicy old_pol = pol;  // refreshed exactly once per outer step

    Rng rollout_rng = rng.split("rollout-" + std::to_string(step));
    std::vector<env::RolloutSample> rollouts = env::rollout_group(
        old_pol, inst.spec, inst.table, hp.group_size, hp.rollout_budget, rollout_rng);

    reward::RunHook hook;
    if (ctx.dsl_run_hook) hook = reward::make_dsl_run_hook(inst.table);

    std::vector<double> rewards;
    double terminal_sum = 0.0;
    rewards.reserve(rollouts.size());
    for (const env::RolloutSample& r : rollouts) {
        reward::RewardBreakdown b = reward::aggregate_return(
            r.trajectory, r.outcomes, ctx.reg, inst.spec, ctx.judge, hook);
        rewards.push_back(b.total);
        terminal_sum += b.terminal;
    }

    RolloutBatch batch = batch_from_rollouts(rollouts, rewards);
    ObjectiveStats stats;
    for (int k = 0; k < hp.inner_updates; ++k) {
        stats = loss_and_grad(pol, old_pol, batch, hp, step);
        apply_gradient(pol, stats.gradient, hp.learning_rate);
    }

    TrainLogEntry e;
    e.step = step;
    e.task_id = inst.spec.task_id;
    e.objective = stats.objective;
    e.mean_reward = 0.0;
    for (double r : rewards) e.mean_reward += r;
    e.mean_reward /= static_cast<double>(rewards.size());
    e.mean_terminal = terminal_sum / static_cast<double>(rewards.size());
    e.mean_entropy = stats.mean_entropy;
    e.mean_ratio = stats.mean_ratio;
    e.clipped_fraction = stats.clipped_fraction;
    return e;
}

/// Deterministic training run; returns the replayable per-step log.
inline std::vector<TrainLogEntry> train_loop(policy::ToyPolicy& pol, TrainContext& ctx,
                                             const HyperParams& hp, int max_steps) {
    hp.validate();
    std::vector<TrainLogEntry> log;
    Rng rng(hash_bytes("train-loop", hp.seed));
    for (int step = 0; step < max_steps; ++step)
        log.push_back(train_step(pol, ctx, hp, step, rng));
    return log;
}

}  // namespace tablerl::opt
