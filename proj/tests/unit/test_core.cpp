#include <gtest/gtest.h>

#include <promptforge/promptforge.hpp>

#include "support/expect_error.hpp"
#include "support/fixtures.hpp"

using namespace promptforge;

TEST(ValidateSpans, AcceptsMarkedCityExample)
{
    // "he lives in ## Seattle@@" marks characters 12..19 of the unmarked text
    std::string src = "he lives in Seattle";
    auto out        = validate_spans(src, {{12, 19, "LOC", "Seattle"}});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].surface, src.substr(12, 7));
}

TEST(ValidateSpans, EmptyIsFine)
{
    EXPECT_TRUE(validate_spans("abc", {}).empty());
}

TEST(ValidateSpans, RejectsOverlap)
{
    EXPECT_PF_ERROR(validate_spans("abc", {{0, 2, "X", "ab"}, {1, 3, "X", "bc"}}), ErrorCode::span_overlap);
}

TEST(ValidateSpans, RejectsBoundsAndSurface)
{
    EXPECT_PF_ERROR(validate_spans("abc", {{2, 5, "X", "c"}}), ErrorCode::span_out_of_bounds);
    EXPECT_PF_ERROR(validate_spans("abc", {{1, 1, "X", ""}}), ErrorCode::span_out_of_bounds);
    EXPECT_PF_ERROR(validate_spans("abc", {{0, 2, "X", "zz"}}), ErrorCode::surface_mismatch);
}

TEST(ValidateSpans, SortsAndAllowsTouching)
{
    auto out = validate_spans("abcd", {{2, 4, "X", "cd"}, {0, 2, "Y", "ab"}});
    EXPECT_EQ(out[0].start, 0u);
    EXPECT_EQ(out[1].start, 2u);
}

TEST(ValidateSpans, PropertyAgreesWithPairwiseIntersection)
{
    std::mt19937 rng(12);
    std::string src(30, 'x');
    for (int round = 0; round < 500; ++round)
    {
        std::vector<Span> spans;
        for (int n = rng() % 4; n > 0; --n)
        {
            std::size_t a = rng() % 29, b = a + 1 + rng() % 5;
            b = std::min<std::size_t>(b, 30);
            spans.push_back({a, b, "X", src.substr(a, b - a)});
        }
        bool overlap = false;
        for (std::size_t i = 0; i < spans.size(); ++i)
            for (std::size_t j = i + 1; j < spans.size(); ++j)
                overlap |= spans[i].start < spans[j].end && spans[j].start < spans[i].end;
        if (overlap)
            EXPECT_PF_ERROR(validate_spans(src, spans), ErrorCode::span_overlap);
        else
            EXPECT_EQ(validate_spans(src, spans).size(), spans.size());
    }
}

TEST(TaskKinds, ParseNamesAndAliases)
{
    EXPECT_EQ(parse_task_kind("ner"), TaskKind::ner);
    EXPECT_EQ(parse_task_kind("re"), TaskKind::relation_extraction);
    EXPECT_EQ(parse_task_kind("ee"), TaskKind::event_extraction);
    EXPECT_PF_ERROR(parse_task_kind("chess"), ErrorCode::config_error);
    for (auto k : {TaskKind::qa, TaskKind::srl, TaskKind::dependency})
        EXPECT_EQ(parse_task_kind(to_string(k)), k);
}

TEST(TaskSpec, DefaultsValidateForEveryTask)
{
    for (auto k : {TaskKind::sentiment, TaskKind::commonsense, TaskKind::nli, TaskKind::qa, TaskKind::ner,
                   TaskKind::relation_extraction, TaskKind::event_extraction, TaskKind::pos, TaskKind::dependency,
                   TaskKind::srl})
        EXPECT_NO_THROW(TaskSpec::defaults(k).validate()) << to_string(k);
}

TEST(TaskSpec, PosInventoryIsNumberedPennList)
{
    auto s = TaskSpec::defaults(TaskKind::pos);
    EXPECT_EQ(s.labels.size(), 45u);
    EXPECT_EQ(s.label_index("NNPS"), 14u); // shown to the model as "15. NNPS"
    EXPECT_EQ(s.describe("NNPS"), "Proper noun, plural");
}

TEST(TaskSpec, RejectsBrokenConfigs)
{
    auto s   = TaskSpec::defaults(TaskKind::sentiment);
    auto bad = s;
    bad.labels.clear();
    EXPECT_PF_ERROR(bad.validate(), ErrorCode::config_error);
    bad         = s;
    bad.markers = {"##", "##"};
    EXPECT_PF_ERROR(bad.validate(), ErrorCode::config_error);
    bad             = s;
    bad.label_words = {{"good", "positive"}, {"not good", "negative"}};
    EXPECT_PF_ERROR(bad.validate(), ErrorCode::config_error);
    auto re      = TaskSpec::defaults(TaskKind::relation_extraction);
    re.relations = {};
    EXPECT_PF_ERROR(re.validate(), ErrorCode::config_error);
}

TEST(Instances, ValidateRequiredFields)
{
    TaskInstance t;
    t.id   = "x";
    t.text = "Some text";
    EXPECT_NO_THROW(validate_instance(TaskKind::sentiment, t));
    EXPECT_PF_ERROR(validate_instance(TaskKind::qa, t), ErrorCode::invalid_instance);
    EXPECT_PF_ERROR(validate_instance(TaskKind::nli, t), ErrorCode::invalid_instance);
    EXPECT_PF_ERROR(validate_instance(TaskKind::commonsense, t), ErrorCode::invalid_instance);
    t.options = {"a", "a"};
    EXPECT_PF_ERROR(validate_instance(TaskKind::commonsense, t), ErrorCode::invalid_instance);
    t.options   = {"push.01"};
    t.predicate = 5;
    EXPECT_PF_ERROR(validate_instance(TaskKind::srl, t), ErrorCode::invalid_instance);
    t.predicate = 1;
    EXPECT_NO_THROW(validate_instance(TaskKind::srl, t));
    t.gold = Prediction{TaskKind::ner, SpanPayload{}, {}, 0, {}, {}, {}};
    EXPECT_PF_ERROR(validate_instance(TaskKind::srl, t), ErrorCode::invalid_instance);
}

TEST(Instances, PreSplitWordsMustAlign)
{
    TaskInstance t;
    t.id    = "w";
    t.text  = "New York rocks";
    t.words = {"New York", "rocks"};
    EXPECT_EQ(instance_words(t).size(), 2u);
    t.words = {"rocks", "New"};
    EXPECT_PF_ERROR(instance_words(t), ErrorCode::invalid_instance);
}

TEST(PayloadJson, RoundTripsEveryFixtureGold)
{
    using namespace pf_test;
    for (auto k : {TaskKind::sentiment, TaskKind::commonsense, TaskKind::nli, TaskKind::qa, TaskKind::ner,
                   TaskKind::relation_extraction, TaskKind::event_extraction, TaskKind::pos, TaskKind::dependency,
                   TaskKind::srl})
    {
        auto f = make_fixture(k, 15, 0);
        for (const auto& t : f.test)
        {
            auto j    = payload_to_json(f.spec, t, t.gold->payload);
            auto back = payload_from_json(f.spec, t, j);
            EXPECT_EQ(back, t.gold->payload) << to_string(k) << " " << j.dump();
            EXPECT_EQ(payload_key(f.spec, t, back), j.dump());
        }
    }
}

TEST(PayloadJson, RejectsInconsistentSpans)
{
    auto spec = TaskSpec::defaults(TaskKind::ner);
    TaskInstance t;
    t.id   = "s";
    t.text = "he lives in Seattle";
    EXPECT_PF_ERROR(payload_from_json(spec, t, json::parse(R"({"spans":[{"start":12,"end":19,"label":"LOC","text":"Boston"}]})")),
                    ErrorCode::surface_mismatch);
    EXPECT_PF_ERROR(payload_from_json(spec, t, json::parse(R"({"spans":[{"start":12,"end":40,"label":"LOC"}]})")),
                    ErrorCode::span_out_of_bounds);
    EXPECT_PF_ERROR(payload_from_json(spec, t, json::parse(R"({"labels":[]})")), ErrorCode::format_error);
}

TEST(PayloadJson, DependencyUsesOneSlotPerWord)
{
    auto spec = TaskSpec::defaults(TaskKind::dependency);
    TaskInstance t;
    t.id   = "d";
    t.text = "I prefer flights";
    ArcPayload p{{{2, 1, "nsubj"}, {0, 2, "root"}, {2, 3, "dobj"}}};
    auto j = payload_to_json(spec, t, p);
    EXPECT_EQ(j["heads"], json::parse("[2,0,2]"));
    EXPECT_EQ(std::get<ArcPayload>(payload_from_json(spec, t, j)), p);
}
