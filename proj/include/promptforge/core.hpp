#ifndef PROMPTFORGE_CORE_HPP_INCLUDED
#define PROMPTFORGE_CORE_HPP_INCLUDED

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "text.hpp"

namespace promptforge
{
    enum class ErrorCode
    {
        // core
        span_out_of_bounds,
        span_overlap,
        surface_mismatch,
        invalid_instance,
        config_error,
        // retrieval
        format_error,
        dimension_mismatch,
        empty_pool,
        // prompting
        query_too_large,
        template_error,
        // backend
        backend_unavailable,
        auth_error,
        script_miss,
        transient,
        // codecs
        unbalanced_markers,
        ambiguous_realign,
        marker_in_source,
        no_match,
        ambiguous_match,
        index_out_of_range,
        answer_not_in_sentence,
        not_in_source,
        no_label_word,
        missing_rationale,
        // strategies / eval
        all_abstained,
        paraphrase_rejected,
        length_mismatch,
        empty_eval,
        id_mismatch,
    };

    inline const char* to_string(ErrorCode c)
    {
        switch (c)
        {
        case ErrorCode::span_out_of_bounds: return "SpanOutOfBounds";
        case ErrorCode::span_overlap: return "SpanOverlap";
        case ErrorCode::surface_mismatch: return "SurfaceMismatch";
        case ErrorCode::invalid_instance: return "InvalidInstance";
        case ErrorCode::config_error: return "ConfigError";
        case ErrorCode::format_error: return "FormatError";
        case ErrorCode::dimension_mismatch: return "DimensionMismatch";
        case ErrorCode::empty_pool: return "EmptyPool";
        case ErrorCode::query_too_large: return "QueryTooLarge";
        case ErrorCode::template_error: return "TemplateError";
        case ErrorCode::backend_unavailable: return "BackendUnavailable";
        case ErrorCode::auth_error: return "AuthError";
        case ErrorCode::script_miss: return "ScriptMiss";
        case ErrorCode::transient: return "TransientError";
        case ErrorCode::unbalanced_markers: return "UnbalancedMarkers";
        case ErrorCode::ambiguous_realign: return "AmbiguousRealign";
        case ErrorCode::marker_in_source: return "MarkerInSource";
        case ErrorCode::no_match: return "NoMatch";
        case ErrorCode::ambiguous_match: return "AmbiguousMatch";
        case ErrorCode::index_out_of_range: return "IndexOutOfRange";
        case ErrorCode::answer_not_in_sentence: return "AnswerNotInSentence";
        case ErrorCode::not_in_source: return "NotInSource";
        case ErrorCode::no_label_word: return "NoLabelWord";
        case ErrorCode::missing_rationale: return "MissingRationale";
        case ErrorCode::all_abstained: return "AllAbstained";
        case ErrorCode::paraphrase_rejected: return "ParaphraseRejected";
        case ErrorCode::length_mismatch: return "LengthMismatch";
        case ErrorCode::empty_eval: return "EmptyEval";
        case ErrorCode::id_mismatch: return "IdMismatch";
        }
        return "Unknown";
    }

    class Error : public std::runtime_error
    {
    public:
        Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
        {}

        ErrorCode code() const noexcept
        {
            return code_;
        }

    private:
        ErrorCode code_;
    };

    //=== task registry ===//
    enum class TaskKind
    {
        qa,
        commonsense,
        nli,
        sentiment,
        ner,
        relation_extraction,
        event_extraction,
        pos,
        dependency,
        srl,
    };

    inline constexpr TaskKind all_tasks[] = {
        TaskKind::qa,  TaskKind::commonsense,         TaskKind::nli,
        TaskKind::sentiment, TaskKind::ner, TaskKind::relation_extraction,
        TaskKind::event_extraction, TaskKind::pos, TaskKind::dependency, TaskKind::srl};

    inline const char* to_string(TaskKind k)
    {
        switch (k)
        {
        case TaskKind::qa: return "qa";
        case TaskKind::commonsense: return "commonsense";
        case TaskKind::nli: return "nli";
        case TaskKind::sentiment: return "sentiment";
        case TaskKind::ner: return "ner";
        case TaskKind::relation_extraction: return "relation_extraction";
        case TaskKind::event_extraction: return "event_extraction";
        case TaskKind::pos: return "pos";
        case TaskKind::dependency: return "dependency";
        case TaskKind::srl: return "srl";
        }
        return "?";
    }

    inline TaskKind parse_task_kind(std::string_view s)
    {
        for (auto k : all_tasks)
            if (s == to_string(k))
                return k;
        if (s == "re")
            return TaskKind::relation_extraction;
        if (s == "ee")
            return TaskKind::event_extraction;
        throw Error(ErrorCode::config_error, "unknown task '" + std::string(s) + "'");
    }

    /// Tasks whose input can be paraphrased without breaking alignment.
    inline bool is_sentence_level(TaskKind k)
    {
        return k == TaskKind::qa || k == TaskKind::commonsense || k == TaskKind::nli
               || k == TaskKind::sentiment;
    }

    enum class CodecFamily
    {
        marker_span,
        binary_question,
        span_or_null,
        multi_choice,
        qa_sentence_index,
        label_word,
    };

    inline const char* to_string(CodecFamily f)
    {
        switch (f)
        {
        case CodecFamily::marker_span: return "marker_span";
        case CodecFamily::binary_question: return "binary_question";
        case CodecFamily::span_or_null: return "span_or_null";
        case CodecFamily::multi_choice: return "multi_choice";
        case CodecFamily::qa_sentence_index: return "qa_sentence_index";
        case CodecFamily::label_word: return "label_word";
        }
        return "?";
    }

    /// One codec family per pipeline step.
    inline std::vector<CodecFamily> codec_families(TaskKind k)
    {
        using F = CodecFamily;
        switch (k)
        {
        case TaskKind::qa: return {F::qa_sentence_index};
        case TaskKind::commonsense: return {F::multi_choice};
        case TaskKind::nli: return {F::binary_question};
        case TaskKind::sentiment: return {F::label_word};
        case TaskKind::ner: return {F::marker_span};
        case TaskKind::relation_extraction: return {F::marker_span, F::binary_question};
        case TaskKind::event_extraction: return {F::span_or_null, F::span_or_null};
        case TaskKind::pos: return {F::multi_choice};
        case TaskKind::dependency: return {F::marker_span, F::binary_question};
        case TaskKind::srl: return {F::binary_question, F::span_or_null};
        }
        return {};
    }

    struct MarkerGrammar
    {
        std::string open  = "##";
        std::string close = "@@";

        friend bool operator==(const MarkerGrammar&, const MarkerGrammar&) = default;
    };

    enum class OptionStyle
    {
        alphabetic, // (A) waterfall
        numeric,    // 15. NNPS
    };

    /// Penn Treebank tags in their conventional numbered order.
    inline const std::vector<std::pair<std::string, std::string>>& penn_tags()
    {
        static const std::vector<std::pair<std::string, std::string>> tags = {
            {"CC", "Coordinating conjunction"},
            {"CD", "Cardinal number"},
            {"DT", "Determiner"},
            {"EX", "Existential there"},
            {"FW", "Foreign word"},
            {"IN", "Preposition or subordinating conjunction"},
            {"JJ", "Adjective"},
            {"JJR", "Adjective, comparative"},
            {"JJS", "Adjective, superlative"},
            {"LS", "List item marker"},
            {"MD", "Modal"},
            {"NN", "Noun, singular or mass"},
            {"NNS", "Noun, plural"},
            {"NNP", "Proper noun, singular"},
            {"NNPS", "Proper noun, plural"},
            {"PDT", "Predeterminer"},
            {"POS", "Possessive ending"},
            {"PRP", "Personal pronoun"},
            {"PRP$", "Possessive pronoun"},
            {"RB", "Adverb"},
            {"RBR", "Adverb, comparative"},
            {"RBS", "Adverb, superlative"},
            {"RP", "Particle"},
            {"SYM", "Symbol"},
            {"TO", "to"},
            {"UH", "Interjection"},
            {"VB", "Verb, base form"},
            {"VBD", "Verb, past tense"},
            {"VBG", "Verb, gerund or present participle"},
            {"VBN", "Verb, past participle"},
            {"VBP", "Verb, non-3rd person singular present"},
            {"VBZ", "Verb, 3rd person singular present"},
            {"WDT", "Wh-determiner"},
            {"WP", "Wh-pronoun"},
            {"WP$", "Possessive wh-pronoun"},
            {"WRB", "Wh-adverb"},
            {"#", "Pound sign"},
            {"$", "Dollar sign"},
            {"''", "Closing quotation mark"},
            {"-LRB-", "Left bracket"},
            {"-RRB-", "Right bracket"},
            {",", "Comma"},
            {".", "Sentence-final punctuation"},
            {":", "Colon or ellipsis"},
            {"``", "Opening quotation mark"},
        };
        return tags;
    }

    /// Per-task configuration: label inventories and codec settings.
    struct TaskSpec
    {
        TaskKind kind = TaskKind::sentiment;
        /// Entity types (NER, RE), event types, POS tags, dependency relations,
        /// sentiment labels, NLI relations, SRL roles.
        std::vector<std::string> labels;
        /// Human-readable names used in prompts, e.g. LOC -> location.
        std::map<std::string, std::string> descriptions;
        /// Relation types (RE only).
        std::vector<std::string> relations;
        /// Role inventory per event type (EE only).
        std::map<std::string, std::vector<std::string>> event_roles;
        /// Label word -> label (sentiment).
        std::vector<std::pair<std::string, std::string>> label_words;
        MarkerGrammar markers;
        OptionStyle option_style = OptionStyle::alphabetic;
        std::string sentinel     = "Answer:";
        /// Relation given to words attached to the artificial root (dependency).
        std::string root_label = "root";

        std::string describe(const std::string& label) const
        {
            auto it = descriptions.find(label);
            return it == descriptions.end() ? label : it->second;
        }

        std::size_t label_index(std::string_view label) const
        {
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i] == label)
                    return i;
            throw Error(ErrorCode::config_error, "label '" + std::string(label) + "' not in label space");
        }

        const std::vector<std::string>& roles_for(const std::string& event_type) const
        {
            static const std::vector<std::string> none;
            auto it = event_roles.find(event_type);
            return it == event_roles.end() ? none : it->second;
        }

        void validate() const
        {
            if (labels.empty())
                throw Error(ErrorCode::config_error, std::string("empty label space for ") + to_string(kind));
            if (markers.open.empty() || markers.close.empty() || markers.open == markers.close)
                throw Error(ErrorCode::config_error, "marker strings must be non-empty and distinct");
            if (kind == TaskKind::relation_extraction && relations.empty())
                throw Error(ErrorCode::config_error, "relation extraction needs relation types");
            if (kind == TaskKind::sentiment)
            {
                if (label_words.empty())
                    throw Error(ErrorCode::config_error, "sentiment needs label words");
                for (const auto& [a, la] : label_words)
                    for (const auto& [b, lb] : label_words)
                        if (a != b && text::lower(b).find(text::lower(a)) != std::string::npos)
                            throw Error(ErrorCode::config_error,
                                        "label word '" + a + "' is a substring of '" + b + "'");
            }
        }

        /// Defaults matching the literal prompt symbols of each task.
        static TaskSpec defaults(TaskKind k)
        {
            TaskSpec s;
            s.kind = k;
            switch (k)
            {
            case TaskKind::qa: s.labels = {"answer"}; break;
            case TaskKind::commonsense: s.labels = {"A", "B", "C", "D", "E"}; break;
            case TaskKind::nli: s.labels = {"entailment", "contradiction", "neutral"}; break;
            case TaskKind::sentiment:
                s.labels      = {"positive", "negative"};
                s.label_words = {{"positive", "positive"}, {"negative", "negative"}};
                break;
            case TaskKind::ner:
                s.labels       = {"PER", "ORG", "LOC", "MISC"};
                s.descriptions = {{"PER", "person"}, {"ORG", "organization"},
                                  {"LOC", "location"}, {"MISC", "miscellaneous"}};
                break;
            case TaskKind::relation_extraction:
                s.labels       = {"PER", "ORG", "LOC"};
                s.descriptions = {{"PER", "person"}, {"ORG", "organization"}, {"LOC", "location"}};
                s.relations    = {"founded"};
                s.markers      = {"@", "#"};
                break;
            case TaskKind::event_extraction:
                s.labels      = {"attack"};
                s.event_roles = {{"attack", {"attacker", "target", "instrument"}}};
                break;
            case TaskKind::pos:
                for (const auto& [tag, name] : penn_tags())
                {
                    s.labels.push_back(tag);
                    s.descriptions[tag] = name;
                }
                s.option_style = OptionStyle::numeric;
                break;
            case TaskKind::dependency:
                s.labels       = {"nsubj", "dobj", "det", "prep", "pobj", "amod", "nn", "punct"};
                s.descriptions = {{"nsubj", "nominal subject"}, {"dobj", "direct object"},
                                  {"det", "determiner"}, {"prep", "prepositional modifier"},
                                  {"pobj", "object of a preposition"}, {"amod", "adjectival modifier"},
                                  {"nn", "noun compound modifier"}, {"punct", "punctuation"}};
                s.markers      = {"@", "#"};
                break;
            case TaskKind::srl:
                s.labels       = {"A0", "A1", "A2", "TMP"};
                s.descriptions = {{"A0", "causer of motion"}, {"A1", "thing moving"},
                                  {"A2", "direction, destination"}, {"TMP", "time, period or direction"}};
                break;
            }
            return s;
        }
    };

    //=== spans ===//
    struct Span
    {
        std::size_t start = 0; // code points, inclusive
        std::size_t end   = 0; // exclusive
        std::string label;
        std::string surface;

        friend bool operator==(const Span&, const Span&) = default;
        friend bool operator<(const Span& a, const Span& b)
        {
            return std::tie(a.start, a.end, a.label, a.surface) < std::tie(b.start, b.end, b.label, b.surface);
        }
    };

    inline std::string span_key(const Span& s)
    {
        return s.label + ":" + std::to_string(s.start) + "-" + std::to_string(s.end);
    }

    inline Span make_span(std::u32string_view source, std::size_t start, std::size_t end, std::string label)
    {
        return {start, end, std::move(label), text::to_utf8(source.substr(start, end - start))};
    }

    inline Span make_span(std::string_view source, std::size_t start, std::size_t end, std::string label)
    {
        return make_span(text::to_u32(source), start, end, std::move(label));
    }

    /// Sorts spans by start and rejects out-of-bounds, same-label overlapping or
    /// surface-mismatched spans. Spans with different labels may overlap.
    inline std::vector<Span> validate_spans(std::string_view source, std::vector<Span> spans)
    {
        auto u = text::to_u32(source);
        auto describe = [](const Span& s) {
            return "(" + std::to_string(s.start) + "," + std::to_string(s.end) + "," + s.label + ",\""
                   + s.surface + "\")";
        };
        for (const auto& s : spans)
        {
            if (s.start >= s.end || s.end > u.size())
                throw Error(ErrorCode::span_out_of_bounds, describe(s));
            if (text::to_utf8(std::u32string_view(u).substr(s.start, s.end - s.start)) != s.surface)
                throw Error(ErrorCode::surface_mismatch, describe(s));
        }
        std::sort(spans.begin(), spans.end());
        std::map<std::string, std::size_t> last_end;
        for (const auto& s : spans)
        {
            auto it = last_end.find(s.label);
            if (it != last_end.end() && s.start < it->second)
                throw Error(ErrorCode::span_overlap, describe(s));
            last_end[s.label] = std::max(s.end, it == last_end.end() ? 0 : it->second);
        }
        return spans;
    }

    //=== payloads ===//
    struct ClassPayload
    {
        std::size_t index = 0; // label index, or option index for commonsense

        friend bool operator==(const ClassPayload&, const ClassPayload&) = default;
    };

    struct QaAnswer
    {
        std::size_t sentence = 0; // 1-based
        std::string text;

        friend bool operator==(const QaAnswer&, const QaAnswer&) = default;
    };

    struct QaPayload
    {
        std::optional<QaAnswer> answer; // empty = unanswerable

        friend bool operator==(const QaPayload&, const QaPayload&) = default;
    };

    struct SpanPayload
    {
        std::vector<Span> spans;

        friend bool operator==(const SpanPayload&, const SpanPayload&) = default;
    };

    struct Triple
    {
        std::size_t head = 0; // index into entities
        std::size_t tail = 0;
        std::string relation;

        friend bool operator==(const Triple&, const Triple&) = default;
        friend auto operator<=>(const Triple&, const Triple&) = default;
    };

    struct RelationPayload
    {
        std::vector<Span> entities;
        std::vector<Triple> triples;

        friend bool operator==(const RelationPayload&, const RelationPayload&) = default;
    };

    struct TagPayload
    {
        std::vector<std::string> tags; // one per word

        friend bool operator==(const TagPayload&, const TagPayload&) = default;
    };

    struct Arc
    {
        std::size_t head      = 0; // 1-based word index, 0 = root
        std::size_t dependent = 0; // 1-based word index
        std::string relation;

        friend bool operator==(const Arc&, const Arc&) = default;
        friend auto operator<=>(const Arc&, const Arc&) = default;
    };

    struct ArcPayload
    {
        std::vector<Arc> arcs; // sorted by dependent

        friend bool operator==(const ArcPayload&, const ArcPayload&) = default;
    };

    struct Event
    {
        std::string type;
        Span trigger;
        std::map<std::string, Span> arguments;

        friend bool operator==(const Event&, const Event&) = default;
    };

    struct EventPayload
    {
        std::vector<Event> events;

        friend bool operator==(const EventPayload&, const EventPayload&) = default;
    };

    struct SrlPayload
    {
        std::size_t sense = 0; // index into the instance's sense inventory
        std::map<std::string, Span> arguments;

        friend bool operator==(const SrlPayload&, const SrlPayload&) = default;
    };

    using Payload = std::variant<ClassPayload, QaPayload, SpanPayload, RelationPayload, TagPayload,
                                 ArcPayload, EventPayload, SrlPayload>;

    inline bool payload_matches(TaskKind k, const Payload& p)
    {
        switch (k)
        {
        case TaskKind::sentiment:
        case TaskKind::commonsense:
        case TaskKind::nli: return std::holds_alternative<ClassPayload>(p);
        case TaskKind::qa: return std::holds_alternative<QaPayload>(p);
        case TaskKind::ner: return std::holds_alternative<SpanPayload>(p);
        case TaskKind::relation_extraction: return std::holds_alternative<RelationPayload>(p);
        case TaskKind::event_extraction: return std::holds_alternative<EventPayload>(p);
        case TaskKind::pos: return std::holds_alternative<TagPayload>(p);
        case TaskKind::dependency: return std::holds_alternative<ArcPayload>(p);
        case TaskKind::srl: return std::holds_alternative<SrlPayload>(p);
        }
        return false;
    }

    struct Prediction
    {
        TaskKind kind = TaskKind::sentiment;
        Payload payload;
        /// Tally of the instance-level decision (classification, QA).
        std::map<std::string, int> votes;
        int abstentions = 0;
        /// Per-unit tallies (e.g. one per word for POS) used by verification.
        std::map<std::string, std::map<std::string, int>> unit_votes;
        std::vector<std::string> source_prompts;
        std::vector<std::string> diagnostics;
    };

    //=== instances ===//
    struct TaskInstance
    {
        std::string id;
        std::string text;
        std::optional<std::string> question;
        std::optional<std::string> premise;
        std::optional<std::string> hypothesis;
        /// Answer options (commonsense) or the predicate's sense inventory (SRL).
        std::vector<std::string> options;
        /// Pre-split words; when empty, words come from tokenize(text).
        std::vector<std::string> words;
        /// SRL predicate, 0-based word index.
        std::optional<std::size_t> predicate;
        /// Gold POS tags, used to exclude punctuation in dependency scoring.
        std::vector<std::string> pos_tags;
        std::optional<Prediction> gold;
    };

    inline std::vector<text::Token> instance_words(const TaskInstance& inst)
    {
        if (inst.words.empty())
            return text::tokenize(inst.text);
        auto aligned = text::align_words(inst.text, inst.words);
        if (aligned.size() != inst.words.size())
            throw Error(ErrorCode::invalid_instance, "words of '" + inst.id + "' do not align with its text");
        return aligned;
    }

    /// Checks that exactly the fields its task needs are present.
    inline void validate_instance(TaskKind k, const TaskInstance& inst)
    {
        auto fail = [&](const std::string& why) {
            throw Error(ErrorCode::invalid_instance, "instance '" + inst.id + "': " + why);
        };
        if (inst.text.empty())
            fail("text is empty");
        switch (k)
        {
        case TaskKind::qa:
            if (!inst.question)
                fail("qa needs a question");
            break;
        case TaskKind::commonsense:
            if (inst.options.empty())
                fail("commonsense needs options");
            for (std::size_t i = 0; i < inst.options.size(); ++i)
                for (std::size_t j = i + 1; j < inst.options.size(); ++j)
                    if (inst.options[i] == inst.options[j])
                        fail("duplicate option '" + inst.options[i] + "'");
            break;
        case TaskKind::nli:
            if (!inst.premise || !inst.hypothesis)
                fail("nli needs premise and hypothesis");
            break;
        case TaskKind::srl:
            if (!inst.predicate || inst.options.empty())
                fail("srl needs a predicate and its sense inventory");
            if (*inst.predicate >= instance_words(inst).size())
                fail("predicate index out of range");
            break;
        default: break;
        }
        if (inst.gold && !payload_matches(k, inst.gold->payload))
            fail("gold payload does not match task");
    }

    struct Demonstration
    {
        TaskInstance instance;
        std::string rendered_label;
        std::optional<std::string> rationale;
        /// Per-demonstration template slots; they override the query's slots.
        std::map<std::string, std::string> slots;
    };
} // namespace promptforge

#endif // PROMPTFORGE_CORE_HPP_INCLUDED
