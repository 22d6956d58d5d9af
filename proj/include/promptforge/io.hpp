#ifndef PROMPTFORGE_IO_HPP_INCLUDED
#define PROMPTFORGE_IO_HPP_INCLUDED

// JSON form of payloads and predictions. The same payload schema is used for
// gold annotations in datasets and for predicted payloads in run output.
//
//   sentiment, nli   {"label": "positive"}
//   commonsense      {"answer": 3}                 (0-based option index)
//   qa               {"answer": {"sentence": 3, "text": "Seoul"}} or {"answer": null}
//   ner              {"spans": [{"start": 12, "end": 19, "label": "LOC"}]}
//   relation_extraction
//                    {"entities": [span...], "relations": [{"head": 0, "tail": 1, "relation": "founded"}]}
//   event_extraction {"events": [{"type": "attack", "trigger": {"start", "end"},
//                                 "arguments": {"target": {"start", "end"}}}]}
//   pos              {"tags": ["NNP", ",", ...]}
//   dependency       {"heads": [2, 0, ...], "relations": ["nsubj", "root", ...]}  (1-based, 0 = root)
//   srl              {"sense": 1, "arguments": {"A1": {"start", "end"}}}
//
// Offsets count Unicode code points of the instance text, end exclusive.

#include <string>
#include <vector>

#include <json.hpp>

#include "codecs.hpp"
#include "core.hpp"
#include "pipelines.hpp"

namespace promptforge
{
    using json = nlohmann::json;

    namespace detail
    {
        [[noreturn]] inline void schema_error(const std::string& what)
        {
            throw Error(ErrorCode::format_error, what);
        }

        inline const json& field(const json& j, const char* name)
        {
            if (!j.is_object() || !j.contains(name))
                schema_error(std::string("missing field \"") + name + "\"");
            return j.at(name);
        }

        inline std::size_t as_index(const json& j, const char* what)
        {
            if (!j.is_number_integer() || j.get<long long>() < 0)
                schema_error(std::string(what) + " must be a non-negative integer");
            return j.get<std::size_t>();
        }

        inline std::string as_string(const json& j, const char* what)
        {
            if (!j.is_string())
                schema_error(std::string(what) + " must be a string");
            return j.get<std::string>();
        }
    } // namespace detail

    inline json span_to_json(const Span& s, bool with_label = true)
    {
        json j{{"start", s.start}, {"end", s.end}, {"text", s.surface}};
        if (with_label)
            j["label"] = s.label;
        return j;
    }

    /// Reads offsets, takes the surface from `text` and checks an optional
    /// "text" field against it.
    inline Span span_from_json(const json& j, std::u32string_view text, const std::string& label = {})
    {
        auto start = detail::as_index(detail::field(j, "start"), "start");
        auto end   = detail::as_index(detail::field(j, "end"), "end");
        if (start >= end || end > text.size())
            throw Error(ErrorCode::span_out_of_bounds, "span [" + std::to_string(start) + ", "
                                                           + std::to_string(end) + ") in text of length "
                                                           + std::to_string(text.size()));
        auto l = label.empty() ? detail::as_string(detail::field(j, "label"), "label") : label;
        auto s = make_span(text, start, end, l);
        if (j.contains("text") && j.at("text").get<std::string>() != s.surface)
            throw Error(ErrorCode::surface_mismatch,
                        "span text \"" + j.at("text").get<std::string>() + "\" but offsets give \"" + s.surface + "\"");
        return s;
    }

    inline json payload_to_json(const TaskSpec& spec, const TaskInstance& inst, const Payload& payload)
    {
        switch (spec.kind)
        {
        case TaskKind::sentiment:
        case TaskKind::nli: return {{"label", spec.labels.at(std::get<ClassPayload>(payload).index)}};
        case TaskKind::commonsense: return {{"answer", std::get<ClassPayload>(payload).index}};
        case TaskKind::qa:
        {
            const auto& a = std::get<QaPayload>(payload).answer;
            if (!a)
                return {{"answer", nullptr}};
            return {{"answer", {{"sentence", a->sentence}, {"text", a->text}}}};
        }
        case TaskKind::ner:
        {
            json spans = json::array();
            for (const auto& s : std::get<SpanPayload>(payload).spans)
                spans.push_back(span_to_json(s));
            return {{"spans", spans}};
        }
        case TaskKind::relation_extraction:
        {
            const auto& p = std::get<RelationPayload>(payload);
            json ents     = json::array();
            for (const auto& s : p.entities)
                ents.push_back(span_to_json(s));
            json rels = json::array();
            for (const auto& t : p.triples)
                rels.push_back({{"head", t.head}, {"tail", t.tail}, {"relation", t.relation}});
            return {{"entities", ents}, {"relations", rels}};
        }
        case TaskKind::event_extraction:
        {
            json events = json::array();
            for (const auto& e : std::get<EventPayload>(payload).events)
            {
                json args = json::object();
                for (const auto& [role, s] : e.arguments)
                    args[role] = span_to_json(s, false);
                events.push_back({{"type", e.type}, {"trigger", span_to_json(e.trigger, false)}, {"arguments", args}});
            }
            return {{"events", events}};
        }
        case TaskKind::pos: return {{"tags", std::get<TagPayload>(payload).tags}};
        case TaskKind::dependency:
        {
            auto n = instance_words(inst).size();
            json heads(json::value_t::array), rels(json::value_t::array);
            for (std::size_t i = 0; i < n; ++i)
            {
                heads.push_back(nullptr);
                rels.push_back(nullptr);
            }
            for (const auto& a : std::get<ArcPayload>(payload).arcs)
                if (a.dependent >= 1 && a.dependent <= n)
                {
                    heads[a.dependent - 1] = a.head;
                    rels[a.dependent - 1]  = a.relation;
                }
            return {{"heads", heads}, {"relations", rels}};
        }
        case TaskKind::srl:
        {
            const auto& p = std::get<SrlPayload>(payload);
            json args     = json::object();
            for (const auto& [role, s] : p.arguments)
                args[role] = span_to_json(s, false);
            json j{{"sense", p.sense}, {"arguments", args}};
            if (p.sense < inst.options.size())
                j["sense_name"] = inst.options[p.sense];
            return j;
        }
        }
        return {};
    }

    inline Payload payload_from_json(const TaskSpec& spec, const TaskInstance& inst, const json& j)
    {
        using namespace detail;
        if (!j.is_object())
            schema_error("payload must be an object");
        auto text = text::to_u32(inst.text);
        switch (spec.kind)
        {
        case TaskKind::sentiment:
        case TaskKind::nli:
        {
            auto label = as_string(field(j, "label"), "label");
            auto it    = std::find(spec.labels.begin(), spec.labels.end(), label);
            if (it == spec.labels.end())
                schema_error("label \"" + label + "\" is not in the label space");
            return ClassPayload{static_cast<std::size_t>(it - spec.labels.begin())};
        }
        case TaskKind::commonsense:
        {
            const auto& a = field(j, "answer");
            std::size_t idx;
            if (a.is_string() && a.get<std::string>().size() == 1)
                idx = static_cast<std::size_t>(a.get<std::string>()[0] - 'A');
            else
                idx = as_index(a, "answer");
            if (idx >= inst.options.size())
                schema_error("answer index " + std::to_string(idx) + " out of range");
            return ClassPayload{idx};
        }
        case TaskKind::qa:
        {
            const auto& a = field(j, "answer");
            if (a.is_null())
                return QaPayload{};
            auto answer    = as_string(field(a, "text"), "answer text");
            auto sentences = text::split_sentences(inst.text);
            std::size_t s  = 0;
            if (a.contains("sentence"))
                s = as_index(a.at("sentence"), "sentence");
            else
                for (std::size_t i = 0; i < sentences.size() && !s; ++i)
                    if (text::normalize_ws(sentences[i]).find(text::normalize_ws(answer)) != std::string::npos)
                        s = i + 1;
            if (s == 0 || s > sentences.size())
                schema_error("answer sentence out of range");
            if (text::normalize_ws(sentences[s - 1]).find(text::normalize_ws(answer)) == std::string::npos)
                throw Error(ErrorCode::answer_not_in_sentence, "\"" + answer + "\" not in sentence " + std::to_string(s));
            return QaPayload{QaAnswer{s, text::normalize_ws(answer)}};
        }
        case TaskKind::ner:
        {
            std::vector<Span> spans;
            for (const auto& s : field(j, "spans"))
                spans.push_back(span_from_json(s, text));
            return SpanPayload{validate_spans(inst.text, std::move(spans))};
        }
        case TaskKind::relation_extraction:
        {
            RelationPayload p;
            for (const auto& s : field(j, "entities"))
                p.entities.push_back(span_from_json(s, text));
            auto sorted = validate_spans(inst.text, p.entities);
            if (sorted != p.entities)
                schema_error("entities must be listed in offset order");
            if (j.contains("relations"))
                for (const auto& r : j.at("relations"))
                {
                    Triple t{as_index(field(r, "head"), "head"), as_index(field(r, "tail"), "tail"),
                             as_string(field(r, "relation"), "relation")};
                    if (t.head >= p.entities.size() || t.tail >= p.entities.size() || t.head == t.tail)
                        schema_error("relation refers to a missing entity");
                    p.triples.push_back(std::move(t));
                }
            std::sort(p.triples.begin(), p.triples.end());
            return p;
        }
        case TaskKind::event_extraction:
        {
            EventPayload p;
            for (const auto& e : field(j, "events"))
            {
                Event ev;
                ev.type    = as_string(field(e, "type"), "type");
                ev.trigger = span_from_json(field(e, "trigger"), text, ev.type);
                if (e.contains("arguments"))
                    for (const auto& [role, s] : e.at("arguments").items())
                        ev.arguments[role] = span_from_json(s, text, role);
                p.events.push_back(std::move(ev));
            }
            return p;
        }
        case TaskKind::pos:
        {
            TagPayload p;
            for (const auto& t : field(j, "tags"))
                p.tags.push_back(as_string(t, "tag"));
            if (p.tags.size() != instance_words(inst).size())
                schema_error("tag count does not match the word count");
            return p;
        }
        case TaskKind::dependency:
        {
            const auto& heads = field(j, "heads");
            const auto& rels  = field(j, "relations");
            auto n            = instance_words(inst).size();
            if (!heads.is_array() || !rels.is_array() || heads.size() != n || rels.size() != n)
                schema_error("heads and relations need one entry per word");
            ArcPayload p;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (heads[i].is_null())
                    continue;
                auto h = as_index(heads[i], "head");
                if (h > n)
                    schema_error("head index out of range");
                p.arcs.push_back({h, i + 1, as_string(rels[i], "relation")});
            }
            return p;
        }
        case TaskKind::srl:
        {
            SrlPayload p;
            p.sense = as_index(field(j, "sense"), "sense");
            if (p.sense >= inst.options.size())
                schema_error("sense index out of range");
            if (j.contains("arguments"))
                for (const auto& [role, s] : j.at("arguments").items())
                    p.arguments[role] = span_from_json(s, text, role);
            return p;
        }
        }
        schema_error("unknown task");
    }

    /// Canonical serialization; equal payloads give equal keys.
    inline std::string payload_key(const TaskSpec& spec, const TaskInstance& inst, const Payload& p)
    {
        return payload_to_json(spec, inst, p).dump();
    }

    inline json prediction_to_json(const TaskSpec& spec, const TaskInstance& inst, const Prediction& pred)
    {
        return {{"id", inst.id},
                {"task", to_string(spec.kind)},
                {"payload", payload_to_json(spec, inst, pred.payload)},
                {"votes", pred.votes},
                {"abstentions", pred.abstentions},
                {"unit_votes", pred.unit_votes},
                {"prompts", pred.source_prompts},
                {"diagnostics", pred.diagnostics}};
    }

    inline json ledger_entry_to_json(const LedgerEntry& e)
    {
        return {{"instance", e.instance_id},
                {"step", e.step},
                {"unit", e.unit},
                {"prompt", e.prompt_id},
                {"tag", e.tag.str()},
                {"backend", e.backend_id},
                {"cached", e.cached},
                {"fidelity", to_string(e.fidelity)},
                {"response", e.response}};
    }
} // namespace promptforge

#endif // PROMPTFORGE_IO_HPP_INCLUDED
