#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tablerl/common.hpp"

namespace tablerl::traj {

// ----------------------------------------------------------------------------
// Tagged agentic trajectories
//
// A trajectory is a flat sequence of <think>/<tool_call>/<tool_response>/
// <answer> segments. Structural rules:
//   - every tool_call is immediately followed by exactly one tool_response
//   - at most one answer, and only as the final segment
//   - a trajectory with an answer ("complete") must open with a think segment
// Trajectories without an answer are "open" (mid-rollout) and otherwise valid.
// ----------------------------------------------------------------------------

enum class SegmentKind { Think, ToolCall, ToolResponse, Answer };

struct Segment {
    SegmentKind kind = SegmentKind::Think;
    std::string content;
    int index = 0;  // ordinal position, contiguous from 0

    bool operator==(const Segment&) const = default;
};

/// One tag vocabulary. Dialects differ only in marker spelling; the four
/// logical slots always map one-to-one onto the canonical kinds.
struct TagDialect {
    std::string name;
    std::string think;
    std::string tool_call;
    std::string tool_response;
    std::string answer;

    const std::string& tag_for(SegmentKind k) const {
        switch (k) {
            case SegmentKind::Think: return think;
            case SegmentKind::ToolCall: return tool_call;
            case SegmentKind::ToolResponse: return tool_response;
            case SegmentKind::Answer: return answer;
        }
        return think;
    }

    static const TagDialect& canonical() {
        static const TagDialect d{"canonical", "think", "tool_call", "tool_response", "answer"};
        return d;
    }

    /// Alternate marker set used for special-token augmentation.
    static const TagDialect& function_call() {
        static const TagDialect d{"function_call", "think", "function_call", "function_response",
                                  "answer"};
        return d;
    }

    static const TagDialect& by_name(std::string_view n) {
        if (n == "canonical" || n.empty()) return canonical();
        if (n == "function_call") return function_call();
        throw std::invalid_argument("unknown tag dialect: " + std::string(n));
    }
};

struct Trajectory {
    std::vector<Segment> segments;
    std::string task_id;
    std::map<std::string, std::string> meta;

    bool complete() const {
        return !segments.empty() && segments.back().kind == SegmentKind::Answer;
    }

    const Segment* answer() const {
        if (!complete()) return nullptr;
        return &segments.back();
    }

    bool operator==(const Trajectory&) const = default;
};

/// Appends a segment with the next ordinal index.
inline void append_segment(Trajectory& t, SegmentKind kind, std::string content) {
    t.segments.push_back({kind, std::move(content), static_cast<int>(t.segments.size())});
}

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

enum class ParseErrorKind {
    UnbalancedTag,
    OrphanToolResponse,
    UnpairedToolCall,
    MultipleAnswers,
    TrailingContentAfterAnswer,
    MissingThink,
    StrayText,
};

constexpr std::string_view to_string(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::UnbalancedTag: return "UnbalancedTag";
        case ParseErrorKind::OrphanToolResponse: return "OrphanToolResponse";
        case ParseErrorKind::UnpairedToolCall: return "UnpairedToolCall";
        case ParseErrorKind::MultipleAnswers: return "MultipleAnswers";
        case ParseErrorKind::TrailingContentAfterAnswer: return "TrailingContentAfterAnswer";
        case ParseErrorKind::MissingThink: return "MissingThink";
        case ParseErrorKind::StrayText: return "StrayText";
    }
    return "ParseError";
}

class ParseError : public std::runtime_error {
public:
    ParseErrorKind kind;
    size_t byte_offset;

    ParseError(ParseErrorKind k, size_t offset, const std::string& detail)
        : std::runtime_error(std::string(to_string(k)) + " at byte " + std::to_string(offset) +
                             ": " + detail),
          kind(k),
          byte_offset(offset) {}
};

class InvalidTrajectory : public std::runtime_error {
public:
    explicit InvalidTrajectory(const std::string& msg)
        : std::runtime_error("invalid trajectory: " + msg) {}
};

// ----------------------------------------------------------------------------
// Content escaping
//
// A backslash escapes the next character. Serialization doubles backslashes
// and prefixes any embedded closing marker of the segment's own kind, so the
// closing-tag scan never fires inside content.
// ----------------------------------------------------------------------------

inline std::string escape_content(std::string_view content, const std::string& close_marker) {
    std::string s = replace_all(std::string(content), "\\", "\\\\");
    return replace_all(std::move(s), close_marker, "\\" + close_marker);
}

inline std::string unescape_content(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && (s[i + 1] == '\\' || s[i + 1] == '<')) {
            out.push_back(s[i + 1]);
            ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

namespace detail {

inline bool is_escaped_at(std::string_view raw, size_t pos) {
    size_t backslashes = 0;
    while (pos > backslashes && raw[pos - backslashes - 1] == '\\') ++backslashes;
    return backslashes % 2 == 1;
}

/// First unescaped occurrence of marker at or after `from`.
inline size_t find_unescaped(std::string_view raw, std::string_view marker, size_t from) {
    size_t pos = from;
    while ((pos = raw.find(marker, pos)) != std::string_view::npos) {
        if (!is_escaped_at(raw, pos)) return pos;
        ++pos;
    }
    return std::string_view::npos;
}

inline void validate_sequence(const std::vector<Segment>& segments,
                              const std::vector<size_t>* offsets) {
    auto at = [&](size_t i) { return offsets ? (*offsets)[i] : i; };

    int answers = 0;
    for (size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].index != static_cast<int>(i))
            throw ParseError(ParseErrorKind::StrayText, at(i),
                             "segment indices must be contiguous from 0");
        if (segments[i].kind == SegmentKind::Answer && ++answers > 1)
            throw ParseError(ParseErrorKind::MultipleAnswers, at(i),
                             "more than one answer segment");
    }
    for (size_t i = 0; i < segments.size(); ++i) {
        switch (segments[i].kind) {
            case SegmentKind::ToolCall:
                if (i + 1 >= segments.size() ||
                    segments[i + 1].kind != SegmentKind::ToolResponse)
                    throw ParseError(ParseErrorKind::UnpairedToolCall, at(i),
                                     "tool_call must be immediately followed by a tool_response");
                break;
            case SegmentKind::ToolResponse:
                if (i == 0 || segments[i - 1].kind != SegmentKind::ToolCall)
                    throw ParseError(ParseErrorKind::OrphanToolResponse, at(i),
                                     "tool_response without a preceding tool_call");
                break;
            case SegmentKind::Answer:
                if (i + 1 != segments.size())
                    throw ParseError(ParseErrorKind::TrailingContentAfterAnswer, at(i + 1),
                                     "content after the answer segment");
                break;
            case SegmentKind::Think:
                break;
        }
    }
    if (answers == 1 && segments.front().kind != SegmentKind::Think)
        throw ParseError(ParseErrorKind::MissingThink, at(0),
                         "a complete trajectory must begin with a think segment");
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Parse / serialize
// ----------------------------------------------------------------------------

/// Parses tagged text into a Trajectory. Whitespace between segments is
/// ignored; any other text outside tags raises StrayText with its byte offset.
inline Trajectory parse_trajectory(std::string_view raw, const TagDialect& dialect) {
    struct TagSlot {
        SegmentKind kind;
        std::string open;
        std::string close;
    };
    const TagSlot slots[] = {
        {SegmentKind::Think, "<" + dialect.think + ">", "</" + dialect.think + ">"},
        {SegmentKind::ToolCall, "<" + dialect.tool_call + ">", "</" + dialect.tool_call + ">"},
        {SegmentKind::ToolResponse, "<" + dialect.tool_response + ">",
         "</" + dialect.tool_response + ">"},
        {SegmentKind::Answer, "<" + dialect.answer + ">", "</" + dialect.answer + ">"},
    };

    Trajectory t;
    t.meta["dialect"] = dialect.name;
    std::vector<size_t> offsets;
    size_t pos = 0;
    while (pos < raw.size()) {
        if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
            ++pos;
            continue;
        }
        const TagSlot* match = nullptr;
        for (const TagSlot& slot : slots) {
            if (raw.compare(pos, slot.open.size(), slot.open) == 0) {
                match = &slot;
                break;
            }
        }
        if (!match)
            throw ParseError(ParseErrorKind::StrayText, pos, "text outside of a recognized tag");

        size_t content_start = pos + match->open.size();
        size_t close_pos = detail::find_unescaped(raw, match->close, content_start);
        if (close_pos == std::string_view::npos)
            throw ParseError(ParseErrorKind::UnbalancedTag, pos,
                             "no closing " + match->close + " for tag opened here");

        Segment seg;
        seg.kind = match->kind;
        seg.content = unescape_content(raw.substr(content_start, close_pos - content_start));
        seg.index = static_cast<int>(t.segments.size());
        t.segments.push_back(std::move(seg));
        offsets.push_back(pos);
        pos = close_pos + match->close.size();
    }
    detail::validate_sequence(t.segments, &offsets);
    return t;
}

/// Inverse of parse_trajectory for valid trajectories; content survives
/// byte-exact through a round trip under any dialect.
inline std::string serialize_trajectory(const Trajectory& t, const TagDialect& dialect) {
    try {
        detail::validate_sequence(t.segments, nullptr);
    } catch (const ParseError& e) {
        throw InvalidTrajectory(e.what());
    }
    std::string out;
    for (const Segment& seg : t.segments) {
        const std::string& tag = dialect.tag_for(seg.kind);
        const std::string close = "</" + tag + ">";
        out += "<" + tag + ">";
        out += escape_content(seg.content, close);
        out += close;
    }
    return out;
}

/// Checks the structural invariants without throwing.
inline bool is_valid(const Trajectory& t) {
    try {
        detail::validate_sequence(t.segments, nullptr);
        return true;
    } catch (const ParseError&) {
        return false;
    }
}

// ----------------------------------------------------------------------------
// Token counting
//
// Deterministic whitespace+punctuation tokenizer used as the pipeline's
// length-gate metric: alphanumeric/underscore runs count as one token, every
// other visible ASCII character counts as its own token, CJK codepoints count
// one each, and other non-ASCII letters join the surrounding run.
// ----------------------------------------------------------------------------

namespace detail {

inline bool is_cjk(char32_t cp) {
    return (cp >= 0x2E80 && cp <= 0x9FFF) || (cp >= 0xAC00 && cp <= 0xD7AF) ||
           (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0xFF00 && cp <= 0xFFEF);
}

inline bool is_space_cp(char32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
           cp == 0x00A0 || (cp >= 0x2000 && cp <= 0x200B) || cp == 0x3000;
}

}  // namespace detail

inline size_t count_tokens(std::string_view text) {
    size_t count = 0;
    bool in_run = false;
    for_each_codepoint(text, [&](char32_t cp, bool) {
        if (detail::is_space_cp(cp)) {
            in_run = false;
        } else if (cp < 0x80 && (std::isalnum(static_cast<unsigned char>(cp)) || cp == '_')) {
            if (!in_run) ++count;
            in_run = true;
        } else if (cp >= 0x80 && !detail::is_cjk(cp)) {
            if (!in_run) ++count;
            in_run = true;
        } else {
            // ASCII punctuation or a CJK codepoint: one token each
            ++count;
            in_run = false;
        }
    });
    return count;
}

/// Token list form of count_tokens, used for repetition and shingle analysis.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string run;
    size_t i = 0;
    auto flush = [&] {
        if (!run.empty()) {
            tokens.push_back(run);
            run.clear();
        }
    };
    while (i < text.size()) {
        size_t start = i;
        char32_t cp = utf8_next(text, i);
        std::string bytes(text.substr(start, i - start));
        if (detail::is_space_cp(cp)) {
            flush();
        } else if (cp < 0x80 && (std::isalnum(static_cast<unsigned char>(cp)) || cp == '_')) {
            run += bytes;
        } else if (cp >= 0x80 && !detail::is_cjk(cp)) {
            run += bytes;
        } else {
            flush();
            tokens.push_back(bytes);
        }
    }
    flush();
    return tokens;
}

// ----------------------------------------------------------------------------
// Canonical on-disk form: one JSON object per line.
// ----------------------------------------------------------------------------

struct TrajectoryRecord {
    std::string task_id;
    std::string raw_text;
    std::string dialect = "canonical";
    std::map<std::string, std::string> meta;
};

inline void to_json(nlohmann::json& j, const TrajectoryRecord& r) {
    j = nlohmann::json{{"task_id", r.task_id},
                       {"raw_text", r.raw_text},
                       {"dialect", r.dialect},
                       {"meta", r.meta}};
}

inline void from_json(const nlohmann::json& j, TrajectoryRecord& r) {
    j.at("task_id").get_to(r.task_id);
    j.at("raw_text").get_to(r.raw_text);
    r.dialect = j.value("dialect", "canonical");
    if (j.contains("meta")) j.at("meta").get_to(r.meta);
}

inline TrajectoryRecord make_record(const Trajectory& t, const TagDialect& dialect) {
    TrajectoryRecord r;
    r.task_id = t.task_id;
    r.raw_text = serialize_trajectory(t, dialect);
    r.dialect = dialect.name;
    r.meta = t.meta;
    return r;
}

inline Trajectory record_to_trajectory(const TrajectoryRecord& r) {
    Trajectory t = parse_trajectory(r.raw_text, TagDialect::by_name(r.dialect));
    t.task_id = r.task_id;
    for (const auto& [k, v] : r.meta) t.meta[k] = v;
    return t;
}

}  // namespace tablerl::traj
