#ifndef PROMPTFORGE_EVAL_HPP_INCLUDED
#define PROMPTFORGE_EVAL_HPP_INCLUDED

// Scoring of payloads against gold. All reports carry their support counts;
// value is recomputable from them.

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "text.hpp"

namespace promptforge
{
    struct MetricReport
    {
        std::string name;
        double value = 0;
        // F1-style reports fill tp/fp/fn; ratio reports fill correct/total.
        std::size_t tp = 0, fp = 0, fn = 0;
        std::size_t correct = 0, total = 0;
        double precision = 0, recall = 0;

        bool is_f1() const noexcept
        {
            return total == 0;
        }
    };

    inline MetricReport ratio_report(std::string name, std::size_t correct, std::size_t total)
    {
        MetricReport r;
        r.name    = std::move(name);
        r.correct = correct;
        r.total   = total;
        r.value   = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        return r;
    }

    /// F1 is 0 whenever tp is 0, including the empty-vs-empty case.
    inline MetricReport f1_report(std::string name, std::size_t tp, std::size_t fp, std::size_t fn)
    {
        MetricReport r;
        r.name      = std::move(name);
        r.tp        = tp;
        r.fp        = fp;
        r.fn        = fn;
        r.precision = tp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        r.recall    = tp ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        r.value     = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
        return r;
    }

    namespace detail
    {
        inline void check_aligned(std::size_t a, std::size_t b, const char* what)
        {
            if (a != b)
                throw Error(ErrorCode::length_mismatch, std::string(what) + ": " + std::to_string(a)
                                                            + " predictions for " + std::to_string(b) + " gold items");
        }

        /// Multiset matching: tp is the summed min of per-key counts.
        template <typename Key>
        struct MatchCounter
        {
            std::size_t tp = 0, fp = 0, fn = 0;

            void add(const std::vector<Key>& pred, const std::vector<Key>& gold)
            {
                std::map<Key, long> balance;
                for (const auto& k : gold)
                    ++balance[k];
                for (const auto& k : pred)
                {
                    if (balance[k] > 0)
                        ++tp;
                    else
                        ++fp;
                    --balance[k];
                }
                for (const auto& [_, b] : balance)
                    if (b > 0)
                        fn += static_cast<std::size_t>(b);
            }

            MetricReport report(std::string name) const
            {
                return f1_report(std::move(name), tp, fp, fn);
            }
        };

        using SpanKey = std::tuple<std::size_t, std::size_t, std::string>;

        inline std::vector<SpanKey> span_keys(const std::vector<Span>& spans)
        {
            std::vector<SpanKey> out;
            for (const auto& s : spans)
                out.emplace_back(s.start, s.end, s.label);
            return out;
        }
    } // namespace detail

    inline MetricReport accuracy(const std::vector<std::string>& pred, const std::vector<std::string>& gold,
                                 std::string name = "accuracy")
    {
        detail::check_aligned(pred.size(), gold.size(), "accuracy");
        if (gold.empty())
            throw Error(ErrorCode::empty_eval, "accuracy over zero items");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < gold.size(); ++i)
            correct += pred[i] == gold[i];
        return ratio_report(std::move(name), correct, gold.size());
    }

    /// Micro P/R/F1 over exact (start, end, label) matches, per instance.
    inline MetricReport span_f1(const std::vector<std::vector<Span>>& pred, const std::vector<std::vector<Span>>& gold,
                                std::string name = "span_f1")
    {
        detail::check_aligned(pred.size(), gold.size(), "span_f1");
        detail::MatchCounter<detail::SpanKey> m;
        for (std::size_t i = 0; i < gold.size(); ++i)
            m.add(detail::span_keys(pred[i]), detail::span_keys(gold[i]));
        return m.report(std::move(name));
    }

    //=== dependency ===//
    inline const std::set<std::string>& default_punct_tags()
    {
        static const std::set<std::string> tags{"``", "''", ",", ".", ":"};
        return tags;
    }

    inline std::vector<bool> punct_mask(const std::vector<std::string>& pos_tags,
                                        const std::set<std::string>& punct = default_punct_tags())
    {
        std::vector<bool> out;
        for (const auto& t : pos_tags)
            out.push_back(punct.count(t) > 0);
        return out;
    }

    struct AttachmentScores
    {
        MetricReport uas, las;
    };

    /// Scores every word that has a gold arc. `punct[i][d-1]` marks word d of
    /// sentence i as punctuation; missing masks mean no punctuation.
    inline AttachmentScores uas_las(const std::vector<std::vector<Arc>>& pred, const std::vector<std::vector<Arc>>& gold,
                                    const std::vector<std::vector<bool>>& punct = {}, bool ignore_punct = true)
    {
        detail::check_aligned(pred.size(), gold.size(), "uas_las");
        std::size_t total = 0, heads = 0, labeled = 0;
        for (std::size_t i = 0; i < gold.size(); ++i)
        {
            std::map<std::size_t, const Arc*> predicted;
            for (const auto& a : pred[i])
                predicted.emplace(a.dependent, &a); // first arc per word counts
            for (const auto& g : gold[i])
            {
                if (ignore_punct && i < punct.size() && g.dependent >= 1 && g.dependent <= punct[i].size()
                    && punct[i][g.dependent - 1])
                    continue;
                ++total;
                auto it = predicted.find(g.dependent);
                if (it == predicted.end() || it->second->head != g.head)
                    continue;
                ++heads;
                labeled += it->second->relation == g.relation;
            }
        }
        return {ratio_report("uas", heads, total), ratio_report("las", labeled, total)};
    }

    //=== QA ===//
    /// Lowercase, strip punctuation and the articles a/an/the, collapse spaces.
    inline std::string normalize_answer(std::string_view s)
    {
        auto u = text::to_u32(text::lower(s));
        std::u32string cleaned;
        for (auto c : u)
            cleaned.push_back(text::is_punct(c) ? U' ' : c);
        std::string out;
        for (const auto& tok : text::tokenize(text::to_utf8(cleaned)))
        {
            if (tok.surface == "a" || tok.surface == "an" || tok.surface == "the")
                continue;
            out += (out.empty() ? "" : " ") + tok.surface;
        }
        return out;
    }

    namespace detail
    {
        inline std::vector<std::string> answer_tokens(std::string_view s)
        {
            std::vector<std::string> out;
            for (const auto& t : text::tokenize(normalize_answer(s)))
                out.push_back(t.surface);
            return out;
        }
    } // namespace detail

    /// Token-overlap F1 of two answers; empty answers stand for "unanswerable".
    inline double answer_f1(const std::optional<std::string>& pred, const std::optional<std::string>& gold)
    {
        if (!pred || !gold)
            return !pred && !gold ? 1.0 : 0.0;
        auto p = detail::answer_tokens(*pred), g = detail::answer_tokens(*gold);
        if (p.empty() || g.empty())
            return p.empty() && g.empty() ? 1.0 : 0.0;
        std::map<std::string, int> bag;
        for (const auto& t : g)
            ++bag[t];
        std::size_t common = 0;
        for (const auto& t : p)
            if (bag[t]-- > 0)
                ++common;
        if (!common)
            return 0.0;
        auto precision = static_cast<double>(common) / static_cast<double>(p.size());
        auto recall    = static_cast<double>(common) / static_cast<double>(g.size());
        return 2 * precision * recall / (precision + recall);
    }

    struct QaScores
    {
        MetricReport exact_match, f1;
    };

    inline QaScores qa_scores(const std::vector<std::optional<std::string>>& pred,
                              const std::vector<std::optional<std::string>>& gold)
    {
        detail::check_aligned(pred.size(), gold.size(), "qa");
        if (gold.empty())
            throw Error(ErrorCode::empty_eval, "qa over zero items");
        std::size_t exact = 0;
        double f1_sum     = 0;
        for (std::size_t i = 0; i < gold.size(); ++i)
        {
            bool same = pred[i] && gold[i] ? normalize_answer(*pred[i]) == normalize_answer(*gold[i])
                                           : !pred[i] && !gold[i];
            exact += same;
            f1_sum += answer_f1(pred[i], gold[i]);
        }
        auto f1  = ratio_report("qa_f1", 0, gold.size());
        f1.value = f1_sum / static_cast<double>(gold.size());
        return {ratio_report("qa_exact_match", exact, gold.size()), f1};
    }

    //=== task-level evaluation ===//
    namespace detail
    {
        inline const Payload& payload_of(const TaskInstance& inst)
        {
            if (!inst.gold)
                throw Error(ErrorCode::invalid_instance, "instance '" + inst.id + "' has no gold annotation");
            return inst.gold->payload;
        }

        using TripleKey = std::tuple<SpanKey, SpanKey, std::string>;
        using ArgKey    = std::tuple<std::string, std::size_t, std::size_t, std::string, std::size_t, std::size_t>;

        inline std::vector<TripleKey> triple_keys(const RelationPayload& p)
        {
            std::vector<TripleKey> out;
            auto key = [](const Span& s) { return SpanKey{s.start, s.end, s.label}; };
            for (const auto& t : p.triples)
                if (t.head < p.entities.size() && t.tail < p.entities.size())
                    out.emplace_back(key(p.entities[t.head]), key(p.entities[t.tail]), t.relation);
            return out;
        }

        inline std::vector<SpanKey> trigger_keys(const EventPayload& p)
        {
            std::vector<SpanKey> out;
            for (const auto& e : p.events)
                out.emplace_back(e.trigger.start, e.trigger.end, e.type);
            return out;
        }

        /// An argument is keyed by its trigger, so it only matches when the
        /// trigger matches too.
        inline std::vector<ArgKey> argument_keys(const EventPayload& p)
        {
            std::vector<ArgKey> out;
            for (const auto& e : p.events)
                for (const auto& [role, s] : e.arguments)
                    out.emplace_back(e.type, e.trigger.start, e.trigger.end, role, s.start, s.end);
            return out;
        }

        inline std::vector<SpanKey> srl_keys(const SrlPayload& p)
        {
            std::vector<SpanKey> out;
            for (const auto& [role, s] : p.arguments)
                out.emplace_back(s.start, s.end, role);
            return out;
        }
    } // namespace detail

    /// Scores predictions (by instance id) against the gold instances, using
    /// the metrics that belong to the task. Every gold id needs a prediction.
    inline std::vector<MetricReport> evaluate(const TaskSpec& spec, const std::vector<TaskInstance>& gold,
                                              const std::map<std::string, Payload>& predictions,
                                              const std::set<std::string>& punct = default_punct_tags())
    {
        using namespace detail;
        if (gold.empty())
            throw Error(ErrorCode::empty_eval, "no gold instances");
        std::vector<std::pair<const TaskInstance*, const Payload*>> pairs;
        for (const auto& g : gold)
        {
            auto it = predictions.find(g.id);
            if (it == predictions.end())
                throw Error(ErrorCode::id_mismatch, "no prediction for id '" + g.id + "'");
            if (!payload_matches(spec.kind, it->second))
                throw Error(ErrorCode::config_error, "prediction for '" + g.id + "' has the wrong payload type");
            pairs.emplace_back(&g, &it->second);
        }
        for (const auto& [id, _] : predictions)
            if (std::none_of(gold.begin(), gold.end(), [&](const TaskInstance& g) { return g.id == id; }))
                throw Error(ErrorCode::id_mismatch, "prediction id '" + id + "' is not in the dataset");

        switch (spec.kind)
        {
        case TaskKind::sentiment:
        case TaskKind::nli:
        case TaskKind::commonsense:
        {
            std::vector<std::string> p, g;
            for (auto [inst, pred] : pairs)
            {
                p.push_back(std::to_string(std::get<ClassPayload>(*pred).index));
                g.push_back(std::to_string(std::get<ClassPayload>(payload_of(*inst)).index));
            }
            return {accuracy(p, g)};
        }
        case TaskKind::qa:
        {
            std::vector<std::optional<std::string>> p, g;
            auto text_of = [](const QaPayload& q) {
                return q.answer ? std::optional<std::string>(q.answer->text) : std::nullopt;
            };
            for (auto [inst, pred] : pairs)
            {
                p.push_back(text_of(std::get<QaPayload>(*pred)));
                g.push_back(text_of(std::get<QaPayload>(payload_of(*inst))));
            }
            auto s = qa_scores(p, g);
            return {s.exact_match, s.f1};
        }
        case TaskKind::ner:
        {
            std::vector<std::vector<Span>> p, g;
            for (auto [inst, pred] : pairs)
            {
                p.push_back(std::get<SpanPayload>(*pred).spans);
                g.push_back(std::get<SpanPayload>(payload_of(*inst)).spans);
            }
            return {span_f1(p, g)};
        }
        case TaskKind::relation_extraction:
        {
            MatchCounter<SpanKey> ents;
            MatchCounter<TripleKey> rels;
            for (auto [inst, pred] : pairs)
            {
                const auto& pp = std::get<RelationPayload>(*pred);
                const auto& gp = std::get<RelationPayload>(payload_of(*inst));
                ents.add(span_keys(pp.entities), span_keys(gp.entities));
                rels.add(triple_keys(pp), triple_keys(gp));
            }
            return {ents.report("entity_f1"), rels.report("relation_f1")};
        }
        case TaskKind::event_extraction:
        {
            MatchCounter<SpanKey> triggers;
            MatchCounter<ArgKey> args;
            for (auto [inst, pred] : pairs)
            {
                const auto& pp = std::get<EventPayload>(*pred);
                const auto& gp = std::get<EventPayload>(payload_of(*inst));
                triggers.add(trigger_keys(pp), trigger_keys(gp));
                args.add(argument_keys(pp), argument_keys(gp));
            }
            return {triggers.report("trigger_f1"), args.report("argument_f1")};
        }
        case TaskKind::pos:
        {
            std::vector<std::string> p, g;
            for (auto [inst, pred] : pairs)
            {
                const auto& pt = std::get<TagPayload>(*pred).tags;
                const auto& gt = std::get<TagPayload>(payload_of(*inst)).tags;
                check_aligned(pt.size(), gt.size(), ("pos tags of '" + inst->id + "'").c_str());
                p.insert(p.end(), pt.begin(), pt.end());
                g.insert(g.end(), gt.begin(), gt.end());
            }
            return {accuracy(p, g, "pos_accuracy")};
        }
        case TaskKind::dependency:
        {
            std::vector<std::vector<Arc>> p, g;
            std::vector<std::vector<bool>> masks;
            for (auto [inst, pred] : pairs)
            {
                p.push_back(std::get<ArcPayload>(*pred).arcs);
                g.push_back(std::get<ArcPayload>(payload_of(*inst)).arcs);
                masks.push_back(punct_mask(inst->pos_tags, punct));
            }
            auto s = uas_las(p, g, masks, true);
            return {s.uas, s.las};
        }
        case TaskKind::srl:
        {
            std::vector<std::string> p, g;
            MatchCounter<SpanKey> args;
            for (auto [inst, pred] : pairs)
            {
                const auto& pp = std::get<SrlPayload>(*pred);
                const auto& gp = std::get<SrlPayload>(payload_of(*inst));
                p.push_back(std::to_string(pp.sense));
                g.push_back(std::to_string(gp.sense));
                args.add(srl_keys(pp), srl_keys(gp));
            }
            return {accuracy(p, g, "sense_accuracy"), args.report("argument_f1")};
        }
        }
        return {};
    }

    //=== BIO ===//
    /// Tags of the form B-X / I-X / O. Strict mode rejects an I-X that does not
    /// continue an X span; lenient mode starts a new span there.
    inline std::vector<Span> bio_to_spans(std::string_view source, const std::vector<text::Token>& words,
                                          const std::vector<std::string>& tags, bool strict = true)
    {
        detail::check_aligned(tags.size(), words.size(), "bio tags");
        auto u = text::to_u32(source);
        std::vector<Span> out;
        std::optional<std::size_t> open_start;
        std::string open_label;
        std::size_t open_end = 0;
        auto close           = [&] {
            if (open_start)
                out.push_back(make_span(u, *open_start, open_end, open_label));
            open_start.reset();
        };
        for (std::size_t i = 0; i < tags.size(); ++i)
        {
            const auto& t = tags[i];
            if (t == "O")
            {
                close();
                continue;
            }
            if (t.size() < 3 || (t[0] != 'B' && t[0] != 'I') || t[1] != '-')
                throw Error(ErrorCode::format_error, "bad BIO tag '" + t + "' at word " + std::to_string(i + 1));
            auto label = t.substr(2);
            if (t[0] == 'I' && open_start && open_label == label)
            {
                open_end = words[i].end;
                continue;
            }
            if (t[0] == 'I' && strict)
                throw Error(ErrorCode::format_error,
                            "tag '" + t + "' at word " + std::to_string(i + 1) + " does not continue a span");
            close();
            open_start = words[i].start;
            open_end   = words[i].end;
            open_label = label;
        }
        close();
        return out;
    }

    /// Inverse of bio_to_spans; every span has to cover whole words.
    inline std::vector<std::string> spans_to_bio(const std::vector<text::Token>& words, const std::vector<Span>& spans)
    {
        std::vector<std::string> tags(words.size(), "O");
        for (const auto& s : spans)
        {
            std::size_t first = words.size(), last = words.size();
            for (std::size_t i = 0; i < words.size(); ++i)
            {
                if (words[i].start == s.start)
                    first = i;
                if (words[i].end == s.end)
                    last = i;
            }
            if (first == words.size() || last == words.size() || last < first)
                throw Error(ErrorCode::format_error, "span " + span_key(s) + " does not align with word boundaries");
            for (auto i = first; i <= last; ++i)
            {
                if (tags[i] != "O")
                    throw Error(ErrorCode::span_overlap, "span " + span_key(s) + " overlaps another span");
                tags[i] = (i == first ? "B-" : "I-") + s.label;
            }
        }
        return tags;
    }
} // namespace promptforge

#endif // PROMPTFORGE_EVAL_HPP_INCLUDED
