#include <catch2/catch_amalgamated.hpp>

#include "tablerl/trajectory.hpp"

#include "test_support.hpp"

using namespace tablerl;
using namespace tablerl::traj;

namespace {

// Independent reference tokenizer used only as an oracle: whitespace splits,
// alnum/underscore runs clump, every other ASCII character stands alone.
size_t reference_token_count(const std::string& s) {
    size_t count = 0;
    bool in_run = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            in_run = false;
        } else if (std::isalnum(c) || c == '_') {
            if (!in_run) ++count;
            in_run = true;
        } else {
            ++count;
            in_run = false;
        }
    }
    return count;
}

}  // namespace

TEST_CASE("parse: minimal complete trajectory") {
    Trajectory t = parse_trajectory("<think>a</think><answer>b</answer>",
                                    TagDialect::canonical());
    REQUIRE(t.segments.size() == 2);
    CHECK(t.segments[0].kind == SegmentKind::Think);
    CHECK(t.segments[0].content == "a");
    CHECK(t.segments[1].kind == SegmentKind::Answer);
    CHECK(t.segments[1].content == "b");
    CHECK(t.complete());
}

TEST_CASE("parse: full think-execute-observe-answer cycle") {
    Trajectory t = parse_trajectory(
        "<think>t</think><tool_call>c</tool_call><tool_response>r</tool_response>"
        "<answer>x</answer>",
        TagDialect::canonical());
    REQUIRE(t.segments.size() == 4);
    CHECK(t.segments[1].kind == SegmentKind::ToolCall);
    CHECK(t.segments[2].kind == SegmentKind::ToolResponse);
    for (int i = 0; i < 4; ++i) CHECK(t.segments[i].index == i);
}

TEST_CASE("parse: structural errors") {
    auto expect_error = [](const std::string& raw, ParseErrorKind kind) {
        try {
            parse_trajectory(raw, TagDialect::canonical());
            FAIL("expected ParseError for: " << raw);
        } catch (const ParseError& e) {
            CHECK(e.kind == kind);
        }
    };

    expect_error("<tool_response>r</tool_response>", ParseErrorKind::OrphanToolResponse);
    expect_error("<think>a</think><tool_call>c</tool_call><answer>x</answer>",
                 ParseErrorKind::UnpairedToolCall);
    expect_error("<think>a</think><answer>x</answer><answer>y</answer>",
                 ParseErrorKind::MultipleAnswers);
    expect_error("<think>a</think><answer>x</answer><think>b</think>",
                 ParseErrorKind::TrailingContentAfterAnswer);
    expect_error("<answer>x</answer>", ParseErrorKind::MissingThink);
    expect_error("<think>a", ParseErrorKind::UnbalancedTag);
}

TEST_CASE("parse: stray text reports its byte offset") {
    try {
        parse_trajectory("<think>a</think>junk<answer>b</answer>", TagDialect::canonical());
        FAIL("expected StrayText");
    } catch (const ParseError& e) {
        CHECK(e.kind == ParseErrorKind::StrayText);
        CHECK(e.byte_offset == 16);
    }
    // whitespace between segments is fine
    CHECK_NOTHROW(parse_trajectory("<think>a</think>\n  <answer>b</answer>",
                                   TagDialect::canonical()));
}

TEST_CASE("serialize: canonical and alternate dialects") {
    Trajectory t;
    append_segment(t, SegmentKind::Think, "plan");
    append_segment(t, SegmentKind::ToolCall, "load(\"x.csv\")");
    append_segment(t, SegmentKind::ToolResponse, "ok");
    append_segment(t, SegmentKind::Answer, "7");

    std::string canonical = serialize_trajectory(t, TagDialect::canonical());
    CHECK(canonical ==
          "<think>plan</think><tool_call>load(\"x.csv\")</tool_call>"
          "<tool_response>ok</tool_response><answer>7</answer>");

    std::string alternate = serialize_trajectory(t, TagDialect::function_call());
    CHECK(alternate.find("<function_call>") != std::string::npos);
    CHECK(alternate.find("<tool_call>") == std::string::npos);

    Trajectory back = parse_trajectory(alternate, TagDialect::function_call());
    CHECK(back.segments == t.segments);
}

TEST_CASE("serialize: rejects invalid trajectories") {
    Trajectory t;
    append_segment(t, SegmentKind::ToolResponse, "orphan");
    CHECK_THROWS_AS(serialize_trajectory(t, TagDialect::canonical()), InvalidTrajectory);
}

TEST_CASE("escaping: literal closing tag inside content") {
    Trajectory t;
    append_segment(t, SegmentKind::Think, "contains </think> literally");
    append_segment(t, SegmentKind::Answer, "backslash \\ and \\</answer> mix");
    std::string raw = serialize_trajectory(t, TagDialect::canonical());
    Trajectory back = parse_trajectory(raw, TagDialect::canonical());
    CHECK(back.segments == t.segments);
}

TEST_CASE("round-trip: newline and binary-ish content is byte-exact") {
    Trajectory t;
    append_segment(t, SegmentKind::Think, "line1\nline2\r\n\ttab");
    append_segment(t, SegmentKind::Answer, " leading and trailing \n");
    for (const TagDialect* d : {&TagDialect::canonical(), &TagDialect::function_call()}) {
        Trajectory back = parse_trajectory(serialize_trajectory(t, *d), *d);
        CHECK(back.segments == t.segments);
    }
}

TEST_CASE("round-trip property: randomized trajectories under both dialects") {
    Rng rng(20260809);
    for (int i = 0; i < 1000; ++i) {
        Trajectory t = testsupport::random_valid_trajectory(rng);
        const TagDialect& d =
            rng.coin() ? TagDialect::canonical() : TagDialect::function_call();
        Trajectory back = parse_trajectory(serialize_trajectory(t, d), d);
        REQUIRE(back.segments == t.segments);
    }
}

TEST_CASE("pairing property: parser accepts iff calls pair with responses") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        Trajectory t = testsupport::random_valid_trajectory(rng, /*force_complete=*/true);
        std::string good = serialize_trajectory(t, TagDialect::canonical());
        CHECK_NOTHROW(parse_trajectory(good, TagDialect::canonical()));

        // drop one tool_response block: must now be rejected
        size_t resp = std::string::npos;
        for (size_t k = 0; k < t.segments.size(); ++k)
            if (t.segments[k].kind == SegmentKind::ToolResponse) resp = k;
        if (resp == std::string::npos) continue;
        Trajectory broken = t;
        broken.segments.erase(broken.segments.begin() + static_cast<long>(resp));
        for (size_t k = 0; k < broken.segments.size(); ++k)
            broken.segments[k].index = static_cast<int>(k);
        std::string raw;
        for (const Segment& seg : broken.segments) {
            const std::string& tag = TagDialect::canonical().tag_for(seg.kind);
            raw += "<" + tag + ">" + escape_content(seg.content, "</" + tag + ">") + "</" +
                   tag + ">";
        }
        CHECK_THROWS_AS(parse_trajectory(raw, TagDialect::canonical()), ParseError);
    }
}

TEST_CASE("dialect equivalence: same logical content, identical segments") {
    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        Trajectory t = testsupport::random_valid_trajectory(rng);
        Trajectory a = parse_trajectory(serialize_trajectory(t, TagDialect::canonical()),
                                        TagDialect::canonical());
        Trajectory b = parse_trajectory(serialize_trajectory(t, TagDialect::function_call()),
                                        TagDialect::function_call());
        CHECK(a.segments == b.segments);
    }
}

TEST_CASE("count_tokens: fixed oracle values") {
    CHECK(count_tokens("") == 0);
    CHECK(count_tokens("a b c") == 3);
    CHECK(count_tokens("   ") == 0);

    // frozen against the independent reference tokenizer
    const std::string fixtures[] = {"pd.read_csv()", "hello, world!", "x=1;y=2",
                                    "sum of column sales where qty > 12",
                                    "a_b_c  d-e"};
    for (const std::string& s : fixtures)
        CHECK(count_tokens(s) == reference_token_count(s));
    CHECK(count_tokens("pd.read_csv()") == 5);
    CHECK(count_tokens("hello, world!") == 4);
}

TEST_CASE("count_tokens: monotone under concatenation") {
    Rng rng(5);
    for (int i = 0; i < 300; ++i) {
        std::string s1 = testsupport::random_content(rng);
        std::string s2 = testsupport::random_content(rng);
        size_t c1 = count_tokens(s1), c2 = count_tokens(s2);
        size_t c = count_tokens(s1 + s2);
        CHECK(c >= std::max(c1, c2));
        CHECK(c <= c1 + c2);
    }
}

TEST_CASE("record form: on-disk JSON round trip") {
    Rng rng(3);
    Trajectory t = testsupport::random_valid_trajectory(rng, true);
    t.task_id = "task-42";
    t.meta["note"] = "fixture";

    TrajectoryRecord rec = make_record(t, TagDialect::function_call());
    nlohmann::json j = rec;
    CHECK(j.at("dialect") == "function_call");
    TrajectoryRecord parsed = j.get<TrajectoryRecord>();
    Trajectory back = record_to_trajectory(parsed);
    CHECK(back.task_id == "task-42");
    CHECK(back.segments == t.segments);
    CHECK(back.meta.at("note") == "fixture");
}
