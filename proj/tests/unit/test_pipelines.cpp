#include <gtest/gtest.h>

#include <promptforge/promptforge.hpp>

#include "support/expect_error.hpp"
#include "support/fixtures.hpp"
#include "support/harness.hpp"

using namespace promptforge;
using pf_test::Harness;
using pf_test::inst;

namespace
{
    std::vector<std::string> surfaces(const std::vector<Span>& spans)
    {
        std::vector<std::string> out;
        for (const auto& s : spans)
            out.push_back(s.surface + "/" + s.label);
        return out;
    }
} // namespace

TEST(Sentiment, LabelWordDecides)
{
    Harness h(TaskKind::sentiment);
    h.answer("s1", step::classify, "", 1, "The sentiment is Negative.");
    auto p = run_classification(inst("s1", "A dull and clumsy film."), h.ctx());
    EXPECT_EQ(std::get<ClassPayload>(p.payload).index, 1u);
    ASSERT_EQ(h.ledger.size(), 1u);
    EXPECT_EQ(h.ledger.entries()[0].prompt_id, "classify/p1");
    EXPECT_EQ(p.source_prompts, std::vector<std::string>{"classify/p1"});
}

TEST(Sentiment, AllAbstainedIsAnError)
{
    Harness h(TaskKind::sentiment, 3);
    h.backend.set_default("I cannot tell.");
    EXPECT_PF_ERROR(run_classification(inst("s1", "Hmm."), h.ctx()), ErrorCode::all_abstained);
    EXPECT_EQ(h.ledger.size(), 3u);
}

TEST(Sentiment, MajorityOfThreeWithOneAbstention)
{
    Harness h(TaskKind::sentiment, 3);
    h.answer("s1", step::classify, "", 1, "positive");
    h.answer("s1", step::classify, "", 2, "no idea");
    h.answer("s1", step::classify, "", 3, "positive!");
    auto p = run_classification(inst("s1", "Lovely."), h.ctx());
    EXPECT_EQ(std::get<ClassPayload>(p.payload).index, 0u);
    EXPECT_EQ(p.abstentions, 1);
    EXPECT_EQ(p.votes.at("positive"), 2);
}

TEST(Commonsense, OptionMarker)
{
    Harness h(TaskKind::commonsense);
    auto t    = inst("c1", "What is small, hard and found in a river bed?");
    t.options = {"waterfall", "bridge", "valley", "pebble", "mountain"};
    h.answer("c1", step::choice, "", 1, "(D) pebble");
    EXPECT_EQ(std::get<ClassPayload>(run_classification(t, h.ctx()).payload).index, 3u);
}

TEST(Nli, HighestYesShareWins)
{
    Harness h(TaskKind::nli, 3);
    auto t       = inst("n1", "A man inspects a uniform.");
    t.premise    = t.text;
    t.hypothesis = "A man looks at clothing.";
    h.backend.set_default("No.");
    for (std::size_t i = 1; i <= 3; ++i)
        h.answer("n1", step::nli, "contradiction", i, "Yes");
    h.answer("n1", step::nli, "entailment", 1, "Yes");
    h.answer("n1", step::nli, "entailment", 2, "Yes");
    auto p = run_nli(t, h.ctx());
    EXPECT_EQ(std::get<ClassPayload>(p.payload).index, 1u); // 3/3 beats 2/3
    EXPECT_EQ(h.ledger.size(), 9u);
}

TEST(Nli, NoYesFallsBackToNeutral)
{
    Harness h(TaskKind::nli);
    auto t       = inst("n1", "A man sleeps.");
    t.premise    = t.text;
    t.hypothesis = "A dog barks.";
    h.backend.set_default("No");
    auto p = run_nli(t, h.ctx());
    EXPECT_EQ(std::get<ClassPayload>(p.payload).index, 2u);
    EXPECT_FALSE(p.diagnostics.empty());
}

TEST(Qa, VotesOverAnswers)
{
    Harness h(TaskKind::qa, 3);
    auto t     = inst("q1", "Tokyo is the capital of Japan. Beijing is the capital of China. Seoul is the capital of Korea.");
    t.question = "What is the capital of Korea?";
    h.answer("q1", step::qa, "", 1, "(3) Seoul");
    h.answer("q1", step::qa, "", 2, "unanswerable");
    h.answer("q1", step::qa, "", 3, "(3) seoul");
    auto p = run_qa(t, h.ctx());
    const auto& a = std::get<QaPayload>(p.payload).answer;
    ASSERT_TRUE(a);
    EXPECT_EQ(a->sentence, 3u);
    EXPECT_EQ(text::lower(a->text), "seoul");
}

TEST(Qa, TieBreaksByKeyOrder)
{
    Harness h(TaskKind::qa, 2);
    auto t     = inst("q1", "Tokyo is the capital of Japan. Seoul is the capital of Korea.");
    t.question = "Name a capital.";
    h.answer("q1", step::qa, "", 1, "unanswerable");
    h.answer("q1", step::qa, "", 2, "(1) Tokyo");
    auto a = std::get<QaPayload>(run_qa(t, h.ctx()).payload).answer;
    ASSERT_TRUE(a); // "(1) tokyo" sorts before "unanswerable"
    EXPECT_EQ(a->text, "Tokyo");
}

TEST(Ner, OneQueryPerTypeAndSpacedMarkers)
{
    Harness h(TaskKind::ner);
    auto t = inst("e1", "He lives in Chicago");
    h.backend.set_default("He lives in Chicago");
    h.answer("e1", step::ner, "LOC", 1, "He lives in ## Chicago @@");
    auto p = run_extraction(t, h.ctx());
    auto spans = std::get<SpanPayload>(p.payload).spans;
    EXPECT_EQ(surfaces(spans), std::vector<std::string>{"Chicago/LOC"});
    EXPECT_EQ(spans[0].start, 12u);
    EXPECT_EQ(h.ledger.count("e1", step::ner), 4u);
}

TEST(Ner, SpanNeedsMajorityOfValidOutputs)
{
    Harness h(TaskKind::ner, 3);
    auto t = inst("e1", "Ana met Bo in Oslo");
    h.backend.set_default("Ana met Bo in Oslo");
    h.answer("e1", step::ner, "PER", 1, "##Ana@@ met ##Bo@@ in Oslo");
    h.answer("e1", step::ner, "PER", 2, "##Ana@@ met Bo in Oslo");
    h.answer("e1", step::ner, "PER", 3, "garbled completely different text here");
    auto spans = std::get<SpanPayload>(run_extraction(t, h.ctx()).payload).spans;
    // two valid outputs: Ana marked twice (kept), Bo once (dropped)
    EXPECT_EQ(surfaces(spans), std::vector<std::string>{"Ana/PER"});
}

TEST(Ner, TwoOfThreeKeepsSpan)
{
    Harness h(TaskKind::ner, 3);
    auto t = inst("e1", "He lives in Chicago");
    h.backend.set_default("He lives in Chicago");
    h.answer("e1", step::ner, "LOC", 1, "He lives in ##Chicago@@");
    h.answer("e1", step::ner, "LOC", 2, "He lives in ##Chicago@@");
    auto spans = std::get<SpanPayload>(run_extraction(t, h.ctx()).payload).spans;
    EXPECT_EQ(surfaces(spans), std::vector<std::string>{"Chicago/LOC"});
}

TEST(Relation, PairsAreAskedPerRelation)
{
    Harness h(TaskKind::relation_extraction);
    auto t = inst("r1", "In 2002, Musk founded SpaceX.");
    h.backend.set_default("No");
    h.answer("r1", step::re_entity, "PER", 1, "In 2002, @Musk# founded SpaceX.");
    h.answer("r1", step::re_entity, "ORG", 1, "In 2002, Musk founded @SpaceX#.");
    h.answer("r1", step::re_entity, "LOC", 1, "In 2002, Musk founded SpaceX.");
    h.answer("r1", step::re_relation, "0-1/founded", 1, "Yes, Musk founded SpaceX.");
    auto p  = run_relation_extraction(t, h.ctx());
    auto rp = std::get<RelationPayload>(p.payload);
    EXPECT_EQ(surfaces(rp.entities), (std::vector<std::string>{"Musk/PER", "SpaceX/ORG"}));
    ASSERT_EQ(rp.triples.size(), 1u);
    EXPECT_EQ(rp.triples[0], (Triple{0, 1, "founded"}));
    EXPECT_EQ(h.ledger.count("r1", step::re_relation), 2u); // both orderings
}

TEST(Event, TriggerThenArguments)
{
    Harness h(TaskKind::event_extraction);
    auto t = inst("v1", "On Sunday, a protester stabbed an officer with a paper cutter.");
    h.answer("v1", step::ee_trigger, "attack", 1, "stabbed");
    h.answer("v1", step::ee_argument, "attack/attacker", 1, "a protester");
    h.answer("v1", step::ee_argument, "attack/target", 1, "The target is an officer.");
    h.answer("v1", step::ee_argument, "attack/instrument", 1, "a paper cutter");
    auto ev = std::get<EventPayload>(run_event_extraction(t, h.ctx()).payload).events;
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].trigger.surface, "stabbed");
    EXPECT_EQ(ev[0].arguments.at("target").surface, "an officer");
    EXPECT_EQ(ev[0].arguments.at("instrument").surface, "a paper cutter");
}

TEST(Event, NullTriggerMeansNoArgumentCalls)
{
    Harness h(TaskKind::event_extraction);
    h.backend.set_default("null");
    auto p = run_event_extraction(inst("v1", "The weather was mild."), h.ctx());
    EXPECT_TRUE(std::get<EventPayload>(p.payload).events.empty());
    EXPECT_EQ(h.ledger.count("v1", step::ee_trigger), 1u);
    EXPECT_EQ(h.ledger.count("v1", step::ee_argument), 0u);
}

TEST(Pos, NumberedTagPerWord)
{
    Harness h(TaskKind::pos);
    auto t = inst("p1", "Americans vote");
    h.answer("p1", step::pos, "w1", 1, "15. NNPS Proper noun, plural");
    h.answer("p1", step::pos, "w2", 1, "I am not sure");
    auto p = run_classification(t, h.ctx());
    EXPECT_EQ(std::get<TagPayload>(p.payload).tags, (std::vector<std::string>{"NNPS", "_"}));
    EXPECT_EQ(p.abstentions, 1);
    EXPECT_FALSE(p.diagnostics.empty());
}

TEST(Dependency, HeadsThenRelations)
{
    Harness h(TaskKind::dependency);
    auto t = inst("d1", "I prefer flights");
    h.backend.set_default("No");
    h.answer("d1", step::dep_head, "w2", 1, "@I# prefer @flights#");
    h.answer("d1", step::dep_relation, "2-1/nsubj", 1, "Yes");
    h.answer("d1", step::dep_relation, "2-3/dobj", 1, "Yes");
    auto arcs = std::get<ArcPayload>(run_dependency(t, h.ctx()).payload).arcs;
    EXPECT_EQ(arcs, (std::vector<Arc>{{2, 1, "nsubj"}, {0, 2, "root"}, {2, 3, "dobj"}}));
    EXPECT_EQ(h.ledger.count("d1", step::dep_head), 3u);
    EXPECT_EQ(h.ledger.count("d1", step::dep_relation), 2u * h.cfg.task.labels.size());
}

TEST(Dependency, UnlabeledArcWhenNoRelationSaysYes)
{
    Harness h(TaskKind::dependency);
    h.backend.set_default("No");
    h.answer("d1", step::dep_head, "w1", 1, "I @prefer#");
    auto arcs = std::get<ArcPayload>(run_dependency(inst("d1", "I prefer"), h.ctx()).payload).arcs;
    EXPECT_EQ(arcs, (std::vector<Arc>{{0, 1, "root"}, {1, 2, "dep"}}));
}

TEST(Srl, SenseThenRoles)
{
    Harness h(TaskKind::srl);
    auto t      = inst("l1", "The stock fell sharply");
    t.predicate = 2;
    t.options   = {"fall.01", "fall.02"};
    h.backend.set_default("null");
    h.answer("l1", step::srl_sense, "s1", 1, "No");
    h.answer("l1", step::srl_sense, "s2", 1, "Yes");
    h.answer("l1", step::srl_argument, "A1", 1, "The stock");
    auto p = std::get<SrlPayload>(run_srl(t, h.ctx()).payload);
    EXPECT_EQ(p.sense, 1u);
    ASSERT_EQ(p.arguments.size(), 1u);
    EXPECT_EQ(p.arguments.at("A1").surface, "The stock");
    EXPECT_EQ(p.arguments.at("A1").start, 0u);
}

TEST(Srl, NoSenseAcceptedUsesFirstWithDiagnostic)
{
    Harness h(TaskKind::srl);
    auto t      = inst("l1", "The stock fell");
    t.predicate = 2;
    t.options   = {"fall.01", "fall.02"};
    h.backend.set_default("No");
    auto p = run_srl(t, h.ctx());
    EXPECT_EQ(std::get<SrlPayload>(p.payload).sense, 0u);
    EXPECT_FALSE(p.diagnostics.empty());
}

TEST(Entries, WrongTaskOrInstanceIsRejected)
{
    Harness h(TaskKind::ner);
    auto t = inst("x", "text");
    EXPECT_PF_ERROR(run_nli(t, h.ctx()), ErrorCode::config_error);
    EXPECT_PF_ERROR(run_classification(t, h.ctx()), ErrorCode::config_error);
    Harness q(TaskKind::qa);
    EXPECT_PF_ERROR(run_qa(t, q.ctx()), ErrorCode::invalid_instance);
}

TEST(Demos, EachPromptGetsItsOwnDemonstrations)
{
    Harness h(TaskKind::sentiment, 2);
    h.cfg.retrieval.k        = 1;
    h.cfg.retrieval.strategy = RetrievalStrategy::random;
    auto good = inst("tr-good", "A lovely film.");
    good.gold = pf_test::gold_prediction(TaskKind::sentiment, ClassPayload{0});
    auto bad  = inst("tr-bad", "A dreadful film.");
    bad.gold  = pf_test::gold_prediction(TaskKind::sentiment, ClassPayload{1});
    h.pool.add(good);
    h.pool.add(bad);
    pf_test::RecordingBackend rec(h.backend);
    h.backend.set_default("positive");
    PipelineContext ctx{h.cfg, rec, h.pool, h.templates, &h.ledger};
    run_classification(inst("q", "A fine film."), ctx);
    auto recs = rec.records();
    ASSERT_EQ(recs.size(), 2u);
    const auto& a = recs[0].first.prompt;
    const auto& b = recs[1].first.prompt;
    EXPECT_NE(a.find("lovely") != std::string::npos, b.find("lovely") != std::string::npos);
    EXPECT_NE(a.find("dreadful") != std::string::npos, b.find("dreadful") != std::string::npos);
}

TEST(Demos, TooFewDemosLowersPromptCount)
{
    Harness h(TaskKind::sentiment, 3);
    h.cfg.retrieval.k        = 2;
    h.cfg.retrieval.strategy = RetrievalStrategy::random;
    for (int i = 0; i < 4; ++i)
    {
        auto d = inst("tr" + std::to_string(i), "Demo number " + std::to_string(i) + ".");
        d.gold = pf_test::gold_prediction(TaskKind::sentiment, ClassPayload{0});
        h.pool.add(d);
    }
    h.backend.set_default("positive");
    run_classification(inst("q", "Fine."), h.ctx());
    EXPECT_EQ(h.ledger.size(), 2u);
}

TEST(Workers, ParallelBatchesGiveTheSamePrediction)
{
    auto f = pf_test::make_fixture(TaskKind::ner, 8, 6);
    pf_test::OracleBackend oracle(f);
    auto cfg = pf_test::fixture_config(f, 3, 2);
    auto serial = pf_test::predict_all(f, cfg, oracle);
    cfg.workers   = 4;
    auto parallel = pf_test::predict_all(f, cfg, oracle);
    EXPECT_EQ(serial, parallel);
}
