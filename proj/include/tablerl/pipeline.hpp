#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"
#include "tablerl/reward.hpp"
#include "tablerl/table_env.hpp"
#include "tablerl/trajectory.hpp"
#include "tablerl/types.hpp"

namespace tablerl::pipeline {

// ----------------------------------------------------------------------------
// Corpus records
// ----------------------------------------------------------------------------

enum class DifficultyTier { High, Medium, Low };

constexpr std::string_view to_string(DifficultyTier t) {
    switch (t) {
        case DifficultyTier::High: return "high";
        case DifficultyTier::Medium: return "medium";
        case DifficultyTier::Low: return "low";
    }
    return "medium";
}

inline DifficultyTier difficulty_tier_from_string(std::string_view s) {
    if (s == "high") return DifficultyTier::High;
    if (s == "medium") return DifficultyTier::Medium;
    if (s == "low") return DifficultyTier::Low;
    throw std::invalid_argument("unknown difficulty tier: " + std::string(s));
}

/// Tier thresholds on the mean score of the sampled responses: below 0.3 is
/// high difficulty, above 0.7 is low, both boundaries fall into medium.
inline DifficultyTier tier_for(double mean_score) {
    if (mean_score < 0.3) return DifficultyTier::High;
    if (mean_score > 0.7) return DifficultyTier::Low;
    return DifficultyTier::Medium;
}

struct DatasetRecord {
    std::string id;
    TaskType task_type = TaskType::General;
    std::string category;  // composition tag, e.g. "general" | "table_agentic"
    std::string prompt;
    std::string reference_response;
    std::optional<std::string> label;
    bool need_plot = false;

    std::string prompt_lang;    // set by language alignment
    std::string response_lang;  // set by language alignment
    std::optional<double> quality_score;
    std::optional<DifficultyTier> difficulty;

    // augmentation surface
    std::string system_prompt;
    std::string dialect = "canonical";
    ErrorStyle error_style = ErrorStyle::Minimal;

    // backlink to the synthetic task this record was derived from, if any
    std::optional<uint64_t> task_seed;
    std::optional<int> template_id;
};

inline void to_json(nlohmann::json& j, const DatasetRecord& r) {
    j = nlohmann::json{{"id", r.id},
                       {"task_type", std::string(to_string(r.task_type))},
                       {"category", r.category},
                       {"prompt", r.prompt},
                       {"reference_response", r.reference_response},
                       {"need_plot", r.need_plot},
                       {"system_prompt", r.system_prompt},
                       {"dialect", r.dialect},
                       {"error_style", std::string(to_string(r.error_style))}};
    if (r.label) j["label"] = *r.label;
    if (!r.prompt_lang.empty()) j["prompt_lang"] = r.prompt_lang;
    if (!r.response_lang.empty()) j["response_lang"] = r.response_lang;
    if (r.quality_score) j["quality_score"] = *r.quality_score;
    if (r.difficulty) j["difficulty"] = std::string(to_string(*r.difficulty));
    if (r.task_seed) j["task_seed"] = *r.task_seed;
    if (r.template_id) j["template_id"] = *r.template_id;
}

inline void from_json(const nlohmann::json& j, DatasetRecord& r) {
    j.at("id").get_to(r.id);
    r.task_type = task_type_from_string(j.value("task_type", "general"));
    r.category = j.value("category", "");
    j.at("prompt").get_to(r.prompt);
    r.reference_response = j.value("reference_response", "");
    if (j.contains("label") && !j.at("label").is_null()) r.label = j.at("label").get<std::string>();
    r.need_plot = j.value("need_plot", false);
    r.prompt_lang = j.value("prompt_lang", "");
    r.response_lang = j.value("response_lang", "");
    if (j.contains("quality_score")) r.quality_score = j.at("quality_score").get<double>();
    if (j.contains("difficulty"))
        r.difficulty = difficulty_tier_from_string(j.at("difficulty").get<std::string>());
    r.system_prompt = j.value("system_prompt", "");
    r.dialect = j.value("dialect", "canonical");
    r.error_style = error_style_from_string(j.value("error_style", "minimal"));
    if (j.contains("task_seed")) r.task_seed = j.at("task_seed").get<uint64_t>();
    if (j.contains("template_id")) r.template_id = j.at("template_id").get<int>();
}

/// TaskSpec view of a record, used to score responses with the same reward
/// routes as training.
inline env::TaskSpec record_to_taskspec(const DatasetRecord& r) {
    if (r.task_seed && r.template_id) {
        env::TaskInstance inst = env::generate_task(*r.task_seed, *r.template_id);
        return inst.spec;
    }
    env::TaskSpec t;
    t.task_id = r.id;
    t.question = r.prompt;
    t.task_type = r.task_type;
    t.label = r.label;
    t.need_plot = r.need_plot;
    t.category = r.category;
    t.error_style = r.error_style;
    return t;
}

/// Gate metric for length filtering: prompt plus reference response.
inline size_t record_token_count(const DatasetRecord& r) {
    return traj::count_tokens(r.prompt) + traj::count_tokens(r.reference_response);
}

// ----------------------------------------------------------------------------
// Stage: length filter
// ----------------------------------------------------------------------------

inline bool filter_length(const DatasetRecord& r, size_t limit = 8192) {
    return record_token_count(r) <= limit;
}

// ----------------------------------------------------------------------------
// Stage: MinHash/LSH near-duplicate removal
// ----------------------------------------------------------------------------

struct MinHashConfig {
    size_t shingle_tokens = 5;
    size_t num_permutations = 128;
    size_t bands = 32;
    size_t rows_per_band = 4;
    double jaccard_threshold = 0.85;
    uint64_t seed = 0x9d2c5680;

    void validate() const {
        if (bands * rows_per_band != num_permutations)
            throw std::invalid_argument("bands * rows_per_band must equal num_permutations");
        if (shingle_tokens == 0) throw std::invalid_argument("shingle_tokens must be positive");
        if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0))
            throw std::invalid_argument("jaccard_threshold must be in (0,1]");
    }
};

struct MinHashSignature {
    std::vector<uint64_t> mins;
};

/// Shingle set of a text: hashes of k-token windows (case-folded tokens).
/// Shorter texts collapse to a single whole-text shingle.
inline std::set<uint64_t> shingle_set(std::string_view text, size_t k) {
    std::vector<std::string> tokens = traj::tokenize(to_lower_ascii(text));
    std::set<uint64_t> shingles;
    auto window_hash = [&](size_t start, size_t len) {
        uint64_t h = 0x243f6a8885a308d3ULL;
        for (size_t i = start; i < start + len; ++i)
            h = hash_bytes(tokens[i], h);
        return h;
    };
    if (tokens.empty()) return shingles;
    if (tokens.size() < k) {
        shingles.insert(window_hash(0, tokens.size()));
        return shingles;
    }
    for (size_t i = 0; i + k <= tokens.size(); ++i) shingles.insert(window_hash(i, k));
    return shingles;
}

/// Exact Jaccard similarity of two shingle sets.
inline double exact_jaccard(const std::set<uint64_t>& a, const std::set<uint64_t>& b) {
    if (a.empty() && b.empty()) return 1.0;
    size_t inter = 0;
    for (uint64_t x : a) inter += b.count(x);
    size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

constexpr uint64_t kMersenne61 = (uint64_t{1} << 61) - 1;

struct Permutations {
    std::vector<uint64_t> a, b;

    static Permutations make(size_t n, uint64_t seed) {
        Permutations p;
        Rng rng(hash_bytes("minhash-perms", seed));
        p.a.reserve(n);
        p.b.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            p.a.push_back(1 + rng.uniform(kMersenne61 - 1));
            p.b.push_back(rng.uniform(kMersenne61));
        }
        return p;
    }

    uint64_t apply(size_t i, uint64_t x) const {
        __uint128_t v = static_cast<__uint128_t>(a[i]) * (x % kMersenne61) + b[i];
        return static_cast<uint64_t>(v % kMersenne61);
    }
};

}  // namespace detail

inline MinHashSignature compute_signature(const std::set<uint64_t>& shingles,
                                          const detail::Permutations& perms) {
    MinHashSignature sig;
    sig.mins.assign(perms.a.size(), UINT64_MAX);
    for (uint64_t sh : shingles)
        for (size_t i = 0; i < perms.a.size(); ++i)
            sig.mins[i] = std::min(sig.mins[i], perms.apply(i, sh));
    return sig;
}

inline double estimated_jaccard(const MinHashSignature& x, const MinHashSignature& y) {
    size_t match = 0;
    for (size_t i = 0; i < x.mins.size(); ++i) match += x.mins[i] == y.mins[i];
    return static_cast<double>(match) / static_cast<double>(x.mins.size());
}

struct DuplicateEntry {
    std::string dropped_id;
    std::string kept_id;
    double estimated_jaccard = 1.0;
    bool exact = false;
};

struct DedupResult {
    std::vector<DatasetRecord> survivors;
    std::vector<DuplicateEntry> duplicates;
};

/// Exact duplicates always drop; LSH candidate pairs with estimated Jaccard at
/// or above the threshold drop the later record by ingest order. Signature
/// computation is the concurrent phase; the index build is sequential.
inline DedupResult dedup(const std::vector<DatasetRecord>& records, const MinHashConfig& cfg,
                         unsigned jobs = 1) {
    cfg.validate();
    detail::Permutations perms = detail::Permutations::make(cfg.num_permutations, cfg.seed);

    std::vector<MinHashSignature> sigs(records.size());
    parallel_for(records.size(), jobs, [&](size_t i) {
        sigs[i] = compute_signature(shingle_set(records[i].prompt, cfg.shingle_tokens), perms);
    });

    DedupResult out;
    std::unordered_map<uint64_t, size_t> exact_index;           // text hash -> first index
    std::unordered_map<uint64_t, std::vector<size_t>> buckets;  // band key -> kept indices

    auto band_key = [&](size_t band, const MinHashSignature& sig) {
        uint64_t h = hash_bytes("band", band);
        for (size_t r = 0; r < cfg.rows_per_band; ++r) {
            uint64_t v = sig.mins[band * cfg.rows_per_band + r];
            h = hash_bytes(std::string_view(reinterpret_cast<const char*>(&v), sizeof(v)), h);
        }
        return h;
    };

    for (size_t i = 0; i < records.size(); ++i) {
        uint64_t text_hash = hash_bytes(records[i].prompt);
        if (auto it = exact_index.find(text_hash); it != exact_index.end()) {
            out.duplicates.push_back({records[i].id, records[it->second].id, 1.0, true});
            continue;
        }

        std::set<size_t> candidates;
        for (size_t band = 0; band < cfg.bands; ++band) {
            auto it = buckets.find(band_key(band, sigs[i]));
            if (it == buckets.end()) continue;
            candidates.insert(it->second.begin(), it->second.end());
        }

        double best_est = 0.0;
        size_t best_j = records.size();
        for (size_t j : candidates) {
            double est = estimated_jaccard(sigs[i], sigs[j]);
            if (est >= cfg.jaccard_threshold && est > best_est) {
                best_est = est;
                best_j = j;
            }
        }
        if (best_j < records.size()) {
            out.duplicates.push_back({records[i].id, records[best_j].id, best_est, false});
            continue;
        }

        exact_index.emplace(text_hash, i);
        for (size_t band = 0; band < cfg.bands; ++band)
            buckets[band_key(band, sigs[i])].push_back(i);
        out.survivors.push_back(records[i]);
    }
    return out;
}

// ----------------------------------------------------------------------------
// Stage: rule-based cleaning
// ----------------------------------------------------------------------------

struct CleanConfig {
    double control_density_limit = 0.05;
    std::vector<std::string> blocklist = {"make a bomb", "kill yourself"};
    std::vector<std::string> identity_patterns = {
        "as an ai language model", "as a large language model", "i am chatgpt",
        "i am claude",             "trained by openai",         "developed by anthropic"};
};

inline void to_json(nlohmann::json& j, const CleanConfig& c) {
    j = nlohmann::json{{"control_density_limit", c.control_density_limit},
                       {"blocklist", c.blocklist},
                       {"identity_patterns", c.identity_patterns}};
}

inline void from_json(const nlohmann::json& j, CleanConfig& c) {
    CleanConfig d;
    c.control_density_limit = j.value("control_density_limit", d.control_density_limit);
    c.blocklist = j.value("blocklist", d.blocklist);
    c.identity_patterns = j.value("identity_patterns", d.identity_patterns);
}

namespace detail {

inline double control_char_density(std::string_view text) {
    size_t total = 0, control = 0;
    for_each_codepoint(text, [&](char32_t cp, bool valid) {
        ++total;
        bool ctrl = (cp < 0x20 && cp != '\t' && cp != '\n' && cp != '\r') || cp == 0x7F ||
                    !valid || cp == 0xFFFD;
        control += ctrl;
    });
    return total == 0 ? 0.0 : static_cast<double>(control) / static_cast<double>(total);
}

}  // namespace detail

struct CleanDecision {
    bool keep = true;
    std::string reason;  // "garbled" | "harmful" | "identity"
};

inline CleanDecision clean_rules(const DatasetRecord& r, const CleanConfig& cfg) {
    std::string combined = r.prompt + "\n" + r.reference_response;
    if (detail::control_char_density(combined) > cfg.control_density_limit)
        return {false, "garbled"};
    for (const std::string& term : cfg.blocklist)
        if (contains_ci(combined, term)) return {false, "harmful"};
    for (const std::string& pattern : cfg.identity_patterns)
        if (contains_ci(combined, pattern)) return {false, "identity"};
    return {true, ""};
}

// ----------------------------------------------------------------------------
// Stage: language alignment
// ----------------------------------------------------------------------------

enum class ScriptClass { Latin, CJK, Other, Unknown };

constexpr std::string_view to_string(ScriptClass s) {
    switch (s) {
        case ScriptClass::Latin: return "latin";
        case ScriptClass::CJK: return "cjk";
        case ScriptClass::Other: return "other";
        case ScriptClass::Unknown: return "unknown";
    }
    return "unknown";
}

struct ScriptEstimate {
    ScriptClass script = ScriptClass::Unknown;
    double dominance = 0.0;  // share of letters in the dominant script

    bool confident() const { return script != ScriptClass::Unknown && dominance > 0.6; }
};

/// Dominant Unicode script among letter codepoints.
inline ScriptEstimate classify_script(std::string_view text) {
    size_t latin = 0, cjk = 0, other = 0;
    for_each_codepoint(text, [&](char32_t cp, bool valid) {
        if (!valid) return;
        bool is_latin = (cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z') ||
                        (cp >= 0xC0 && cp <= 0x24F);
        bool is_cjk = (cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
                      (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0xAC00 && cp <= 0xD7AF) ||
                      (cp >= 0xF900 && cp <= 0xFAFF);
        bool is_letterish = (cp >= 0x370 && cp <= 0x1FFF) || (cp >= 0x2E80 && cp <= 0xD7FF) ||
                            (cp >= 0xF900 && cp <= 0xFFDC) || cp >= 0x10000;
        if (is_latin) ++latin;
        else if (is_cjk) ++cjk;
        else if (is_letterish) ++other;
    });
    size_t total = latin + cjk + other;
    ScriptEstimate e;
    if (total == 0) return e;
    size_t best = std::max({latin, cjk, other});
    e.dominance = static_cast<double>(best) / static_cast<double>(total);
    if (best == latin) e.script = ScriptClass::Latin;
    else if (best == cjk) e.script = ScriptClass::CJK;
    else e.script = ScriptClass::Other;
    return e;
}

/// Drops prompt/response pairs whose dominant scripts differ with confidence
/// on both sides; tags the record with the detected languages either way.
inline bool language_alignment(DatasetRecord& r) {
    ScriptEstimate p = classify_script(r.prompt);
    ScriptEstimate q = classify_script(r.reference_response);
    r.prompt_lang = std::string(to_string(p.script));
    r.response_lang = std::string(to_string(q.script));
    if (p.confident() && q.confident() && p.script != q.script) return false;
    return true;
}

// ----------------------------------------------------------------------------
// Stage: quality gate and difficulty estimation
// ----------------------------------------------------------------------------

/// Scores a candidate response for a record on the [0,1] terminal-reward
/// scale (same routes as training).
using ResponseScorer = std::function<double(const DatasetRecord&, const std::string&)>;

/// Produces one sampled response for a record (toy policy or mock).
using ResponseGenerator = std::function<std::string(const DatasetRecord&, Rng&)>;

struct QualityDecision {
    bool keep = false;
    double score = 0.0;
};

/// Scores the reference response; keeps the record iff score >= threshold
/// (inclusive), recording the score on the record.
inline QualityDecision quality_filter(DatasetRecord& r, const ResponseScorer& scorer,
                                      double threshold = 0.7) {
    double score = scorer(r, r.reference_response);
    r.quality_score = score;
    return {score >= threshold, score};
}

struct DifficultyEstimate {
    double mean = 0.0;
    DifficultyTier tier = DifficultyTier::Medium;
    std::vector<double> scores;
};

/// Mean score of n independently sampled responses decides the tier.
inline DifficultyEstimate estimate_difficulty(const DatasetRecord& r,
                                              const ResponseGenerator& generate,
                                              const ResponseScorer& scorer, int n, Rng& rng) {
    if (n <= 0) throw std::invalid_argument("difficulty estimation needs n >= 1");
    DifficultyEstimate est;
    for (int i = 0; i < n; ++i) {
        std::string response = generate(r, rng);
        double score = scorer(r, response);
        est.scores.push_back(score);
        est.mean += score;
    }
    est.mean /= static_cast<double>(n);
    est.tier = tier_for(est.mean);
    return est;
}

// ----------------------------------------------------------------------------
// Stage: stratified resampling
// ----------------------------------------------------------------------------

class EmptyTier : public std::runtime_error {
public:
    explicit EmptyTier(DifficultyTier t)
        : std::runtime_error("no records in difficulty tier '" +
                             std::string(to_string(t)) + "'") {}
};

struct StratifyTargets {
    double high = 0.2;
    double medium = 0.6;
    double low = 0.2;

    double fraction(DifficultyTier t) const {
        switch (t) {
            case DifficultyTier::High: return high;
            case DifficultyTier::Medium: return medium;
            case DifficultyTier::Low: return low;
        }
        return 0.0;
    }
};

/// Resamples to the target tier mix without replacement. The output size is
/// the largest total the limiting tier supports; achieved proportions land
/// within one record of the targets.
inline std::vector<DatasetRecord> stratify_resample(const std::vector<DatasetRecord>& records,
                                                    const StratifyTargets& targets, Rng& rng) {
    constexpr DifficultyTier tiers[] = {DifficultyTier::High, DifficultyTier::Medium,
                                        DifficultyTier::Low};
    std::map<DifficultyTier, std::vector<size_t>> by_tier;
    for (size_t i = 0; i < records.size(); ++i) {
        if (!records[i].difficulty)
            throw std::invalid_argument("record " + records[i].id + " has no difficulty tier");
        by_tier[*records[i].difficulty].push_back(i);
    }

    double total = 0.0;
    bool first = true;
    for (DifficultyTier t : tiers) {
        double frac = targets.fraction(t);
        if (frac <= 0.0) continue;
        auto it = by_tier.find(t);
        if (it == by_tier.end() || it->second.empty()) throw EmptyTier(t);
        double cap = std::floor(static_cast<double>(it->second.size()) / frac);
        if (first || cap < total) total = cap;
        first = false;
    }

    std::vector<size_t> chosen;
    for (DifficultyTier t : tiers) {
        double frac = targets.fraction(t);
        if (frac <= 0.0) continue;
        auto& pool = by_tier[t];
        size_t want = static_cast<size_t>(std::llround(frac * total));
        want = std::min(want, pool.size());
        Rng tier_rng = rng.split("stratify-" + std::string(to_string(t)));
        std::vector<size_t> picked = tier_rng.sample(pool, want);
        chosen.insert(chosen.end(), picked.begin(), picked.end());
    }
    std::sort(chosen.begin(), chosen.end());

    std::vector<DatasetRecord> out;
    out.reserve(chosen.size());
    for (size_t i : chosen) out.push_back(records[i]);
    return out;
}

// ----------------------------------------------------------------------------
// Augmentation
// ----------------------------------------------------------------------------

inline const std::vector<std::string>& system_prompt_templates() {
    static const std::vector<std::string> v = {
        "You are a data analyst. Think step by step, run table tools, then answer.",
        "Answer the question about the table. Use tools when needed and keep the final "
        "answer short.",
        "You are an assistant for tabular reasoning. Inspect the data, compute, then reply "
        "with just the answer.",
        "Work through the table task carefully and verify intermediate results before "
        "answering.",
    };
    return v;
}

inline void apply_system_prompt(DatasetRecord& r, size_t template_index) {
    r.system_prompt = system_prompt_templates()[template_index %
                                                system_prompt_templates().size()];
}

/// Rewrites the reference response under the other tag dialect (parse +
/// reserialize when possible, plain marker replacement otherwise).
inline void apply_dialect_alternation(DatasetRecord& r) {
    const traj::TagDialect& from = traj::TagDialect::by_name(r.dialect);
    const traj::TagDialect& to = r.dialect == "canonical"
                                     ? traj::TagDialect::function_call()
                                     : traj::TagDialect::canonical();
    try {
        traj::Trajectory t = traj::parse_trajectory(r.reference_response, from);
        r.reference_response = traj::serialize_trajectory(t, to);
    } catch (const traj::ParseError&) {
        std::string s = r.reference_response;
        s = replace_all(std::move(s), "<" + from.tool_call + ">", "<" + to.tool_call + ">");
        s = replace_all(std::move(s), "</" + from.tool_call + ">", "</" + to.tool_call + ">");
        s = replace_all(std::move(s), "<" + from.tool_response + ">",
                        "<" + to.tool_response + ">");
        s = replace_all(std::move(s), "</" + from.tool_response + ">",
                        "</" + to.tool_response + ">");
        r.reference_response = std::move(s);
    }
    r.dialect = to.name;
}

namespace detail {

inline const std::string kTracePrefix =
    "Traceback (most recent call last):\n  File \"<tool>\", line 1, in <module>\n";

/// Converts our two error-message templates into the target style.
inline std::string convert_error_style(const std::string& text, ErrorStyle target) {
    if (text.rfind(kTracePrefix, 0) == 0) {
        std::string tail = text.substr(kTracePrefix.size());
        return target == ErrorStyle::Minimal ? tail : text;
    }
    // minimal style is "Kind: message" with a known error kind
    static const std::vector<std::string> kinds = {"UnknownColumn", "TypeMismatch", "NotLoaded",
                                                   "InvalidArguments", "SandboxError"};
    for (const std::string& k : kinds)
        if (text.rfind(k + ":", 0) == 0)
            return target == ErrorStyle::Trace ? kTracePrefix + text : text;
    return text;
}

}  // namespace detail

/// Flips the record's error style and re-renders any recognizable error
/// observations in the reference response.
inline void apply_error_style_flip(DatasetRecord& r) {
    ErrorStyle target =
        r.error_style == ErrorStyle::Minimal ? ErrorStyle::Trace : ErrorStyle::Minimal;
    try {
        traj::Trajectory t =
            traj::parse_trajectory(r.reference_response, traj::TagDialect::by_name(r.dialect));
        for (traj::Segment& seg : t.segments)
            if (seg.kind == traj::SegmentKind::ToolResponse)
                seg.content = detail::convert_error_style(seg.content, target);
        r.reference_response =
            traj::serialize_trajectory(t, traj::TagDialect::by_name(r.dialect));
    } catch (const traj::ParseError&) {
        // response is not a trajectory; only the flag flips
    }
    r.error_style = target;
}

/// Swaps the prompt's table block between the inline preview and the file
/// path form. Records without a task backlink are left unchanged.
inline void apply_input_mode_flip(DatasetRecord& r) {
    if (!r.task_seed || !r.template_id) return;
    env::TaskInstance inst = env::generate_task(*r.task_seed, *r.template_id);
    const std::string preview_block = "\n\nTable preview:\n" + inst.spec.table_inline;
    const std::string path_block = "\n\nTable file: " + inst.spec.table_path;
    if (size_t pos = r.prompt.find(preview_block); pos != std::string::npos) {
        r.prompt.replace(pos, preview_block.size(), path_block);
    } else if (size_t pos2 = r.prompt.find(path_block); pos2 != std::string::npos) {
        r.prompt.replace(pos2, path_block.size(), preview_block);
    }
}

/// Applies a seeded subset of the augmentations. Question semantics, label and
/// need_plot are never touched.
inline DatasetRecord augment_record(const DatasetRecord& r, uint64_t seed) {
    DatasetRecord out = r;
    Rng rng(hash_bytes(r.id, hash_bytes("augment", seed)));
    if (rng.coin()) apply_system_prompt(out, rng.uniform(system_prompt_templates().size()));
    if (rng.coin()) apply_dialect_alternation(out);
    if (rng.coin()) apply_error_style_flip(out);
    if (rng.coin()) apply_input_mode_flip(out);
    return out;
}

// ----------------------------------------------------------------------------
// Consensus labeling
// ----------------------------------------------------------------------------

class GeneratorUnavailable : public std::runtime_error {
public:
    explicit GeneratorUnavailable(const std::string& msg)
        : std::runtime_error("answer generator unavailable: " + msg) {}
};

/// One answer source for consensus labeling (a strong model in production,
/// mocks in tests).
using AnswerSource = std::function<std::string(const DatasetRecord&)>;

struct ConsensusResult {
    bool accepted = false;
    std::string label;
    size_t agreement = 0;  // how many sources produced the winning answer
};

namespace detail {

inline std::string consensus_key(const std::string& answer, TaskType type) {
    if (type == TaskType::SQL) {
        std::string key;
        for (const std::string& row : reward::result_multiset(answer)) {
            key += row;
            key.push_back('\n');
        }
        return key;
    }
    std::string n = reward::normalize_answer(answer);
    double v;
    if (parse_number(n, v)) return format_number(v);
    return n;
}

}  // namespace detail

/// Keeps the record only when at least two sources produce the same final
/// answer under rule normalization; the winning group's first raw answer
/// becomes the label.
inline ConsensusResult consensus_label(const DatasetRecord& r,
                                       const std::vector<AnswerSource>& sources) {
    if (sources.size() < 3)
        throw std::invalid_argument("consensus labeling needs at least 3 answer sources");
    std::vector<std::string> answers;
    answers.reserve(sources.size());
    for (const AnswerSource& s : sources) answers.push_back(s(r));

    std::map<std::string, std::pair<size_t, size_t>> groups;  // key -> (count, first index)
    for (size_t i = 0; i < answers.size(); ++i) {
        std::string key = detail::consensus_key(answers[i], r.task_type);
        auto [it, inserted] = groups.emplace(key, std::make_pair(size_t{0}, i));
        ++it->second.first;
    }

    size_t best_count = 0, best_first = answers.size();
    for (const auto& [key, cf] : groups) {
        if (cf.first > best_count || (cf.first == best_count && cf.second < best_first)) {
            best_count = cf.first;
            best_first = cf.second;
        }
    }
    if (best_count < 2) return {};
    return {true, answers[best_first], best_count};
}

// ----------------------------------------------------------------------------
// Pipeline driver (fixed stage order, reconciled stage reports)
// ----------------------------------------------------------------------------

struct StageReport {
    std::string stage;
    size_t in = 0;
    size_t kept = 0;
    size_t dropped = 0;
    std::map<std::string, size_t> reasons;
};

inline void to_json(nlohmann::json& j, const StageReport& s) {
    j = nlohmann::json{{"stage", s.stage},
                       {"in", s.in},
                       {"kept", s.kept},
                       {"dropped", s.dropped},
                       {"reasons", s.reasons}};
}

struct PipelineConfig {
    size_t length_limit = 8192;
    MinHashConfig minhash;
    CleanConfig clean;
    double quality_threshold = 0.7;
    int difficulty_samples = 5;
    StratifyTargets targets;
    uint64_t seed = 0;
    unsigned jobs = 1;
};

struct PipelineResult {
    std::vector<DatasetRecord> survivors;
    std::vector<StageReport> stages;
    std::vector<DuplicateEntry> duplicates;
};

/// Fixed stage order: length -> dedup -> clean -> language -> quality ->
/// difficulty -> stratify. Every stage report reconciles (in = kept + dropped).
inline PipelineResult run_pipeline(std::vector<DatasetRecord> records,
                                   const PipelineConfig& cfg, const ResponseScorer& scorer,
                                   const ResponseGenerator& generator) {
    PipelineResult result;
    auto report = [&](const std::string& stage, size_t in, size_t kept,
                      std::map<std::string, size_t> reasons) {
        result.stages.push_back({stage, in, kept, in - kept, std::move(reasons)});
    };

    // length
    {
        size_t in = records.size();
        std::vector<DatasetRecord> kept;
        std::map<std::string, size_t> reasons;
        for (auto& r : records) {
            if (filter_length(r, cfg.length_limit)) kept.push_back(std::move(r));
            else ++reasons["over_limit"];
        }
        records = std::move(kept);
        report("length", in, records.size(), std::move(reasons));
    }

    // dedup
    {
        size_t in = records.size();
        DedupResult d = dedup(records, cfg.minhash, cfg.jobs);
        std::map<std::string, size_t> reasons;
        for (const DuplicateEntry& e : d.duplicates)
            ++reasons[e.exact ? "exact_duplicate" : "near_duplicate"];
        records = std::move(d.survivors);
        result.duplicates = std::move(d.duplicates);
        report("dedup", in, records.size(), std::move(reasons));
    }

    // clean
    {
        size_t in = records.size();
        std::vector<DatasetRecord> kept;
        std::map<std::string, size_t> reasons;
        for (auto& r : records) {
            CleanDecision d = clean_rules(r, cfg.clean);
            if (d.keep) kept.push_back(std::move(r));
            else ++reasons[d.reason];
        }
        records = std::move(kept);
        report("clean", in, records.size(), std::move(reasons));
    }

    // language
    {
        size_t in = records.size();
        std::vector<DatasetRecord> kept;
        std::map<std::string, size_t> reasons;
        for (auto& r : records) {
            if (language_alignment(r)) kept.push_back(std::move(r));
            else ++reasons["language_mismatch"];
        }
        records = std::move(kept);
        report("language", in, records.size(), std::move(reasons));
    }

    // quality (scored concurrently, gated in order)
    {
        size_t in = records.size();
        std::vector<double> scores(records.size());
        parallel_for(records.size(), cfg.jobs, [&](size_t i) {
            scores[i] = scorer(records[i], records[i].reference_response);
        });
        std::vector<DatasetRecord> kept;
        std::map<std::string, size_t> reasons;
        for (size_t i = 0; i < records.size(); ++i) {
            records[i].quality_score = scores[i];
            if (scores[i] >= cfg.quality_threshold) kept.push_back(std::move(records[i]));
            else ++reasons["below_threshold"];
        }
        records = std::move(kept);
        report("quality", in, records.size(), std::move(reasons));
    }

    // difficulty (annotates, drops nothing)
    {
        size_t in = records.size();
        std::vector<DifficultyEstimate> est(records.size());
        parallel_for(records.size(), cfg.jobs, [&](size_t i) {
            Rng rng(hash_bytes(records[i].id, hash_bytes("difficulty", cfg.seed)));
            est[i] = estimate_difficulty(records[i], generator, scorer,
                                         cfg.difficulty_samples, rng);
        });
        std::map<std::string, size_t> reasons;
        for (size_t i = 0; i < records.size(); ++i) {
            records[i].difficulty = est[i].tier;
            ++reasons["tier_" + std::string(to_string(est[i].tier))];
        }
        report("difficulty", in, records.size(), std::move(reasons));
    }

    // stratify
    {
        size_t in = records.size();
        Rng rng(hash_bytes("stratify", cfg.seed));
        std::vector<DatasetRecord> sampled = stratify_resample(records, cfg.targets, rng);
        std::map<std::string, size_t> reasons;
        if (in > sampled.size()) reasons["resampled_out"] = in - sampled.size();
        records = std::move(sampled);
        report("stratify", in, records.size(), std::move(reasons));
    }

    result.survivors = std::move(records);
    return result;
}

}  // namespace tablerl::pipeline
