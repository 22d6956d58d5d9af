#ifndef PROMPTFORGE_PIPELINES_HPP_INCLUDED
#define PROMPTFORGE_PIPELINES_HPP_INCLUDED

// Per-task orchestration. Every task is a fan-out over units (entity types,
// relations, words, senses, ...) times N prompts, followed by a deterministic
// reduction of the decoded outputs.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "backend.hpp"
#include "codecs.hpp"
#include "core.hpp"
#include "prompting.hpp"
#include "retrieval.hpp"
#include "templates.hpp"
#include "vote.hpp"

namespace promptforge
{
    struct PipelineConfig
    {
        TaskSpec task = TaskSpec::defaults(TaskKind::sentiment);
        RetrievalConfig retrieval;  // k = demonstrations per prompt
        std::size_t n_prompts = 1; // N
        bool with_rationale   = false;
        bool self_verify      = false;
        std::size_t paraphrase_k = 0;
        TokenBudget budget;
        double temperature            = 0.0;
        double paraphrase_temperature = 0.7;
        std::size_t max_output_tokens = 512;
        std::size_t workers           = 1;

        void validate() const
        {
            task.validate();
            if (n_prompts == 0)
                throw Error(ErrorCode::config_error, "N must be positive");
            if (retrieval.k == 0)
                throw Error(ErrorCode::config_error, "k must be positive");
            if (paraphrase_k > 0 && !is_sentence_level(task.kind))
                throw Error(ErrorCode::config_error, std::string("paraphrase voting does not apply to ")
                                                         + to_string(task.kind));
        }
    };

    //=== call ledger ===//
    struct LedgerEntry
    {
        std::string instance_id;
        std::string step;
        std::string unit;
        std::string prompt_id;
        RequestTag tag;
        std::string backend_id;
        bool cached       = false;
        Fidelity fidelity = Fidelity::rejected;
        std::string response;
    };

    /// Every backend call made on behalf of a prediction, in issue order.
    class CallLedger
    {
    public:
        void append(std::vector<LedgerEntry> entries)
        {
            std::lock_guard lock(mutex_);
            for (auto& e : entries)
                entries_.push_back(std::move(e));
        }

        std::vector<LedgerEntry> entries() const
        {
            std::lock_guard lock(mutex_);
            return entries_;
        }

        std::size_t size() const
        {
            std::lock_guard lock(mutex_);
            return entries_.size();
        }

        /// Calls for one instance, optionally restricted to one step.
        std::size_t count(const std::string& instance_id, const std::string& step = {}) const
        {
            std::lock_guard lock(mutex_);
            return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const auto& e) {
                return e.instance_id == instance_id && (step.empty() || e.step == step);
            }));
        }

        void clear()
        {
            std::lock_guard lock(mutex_);
            entries_.clear();
        }

    private:
        mutable std::mutex mutex_;
        std::vector<LedgerEntry> entries_;
    };

    //=== demonstration pool ===//

    /// Labeled training instances plus whatever retrieval needs.
    class DemoPool
    {
    public:
        DemoPool() = default;
        explicit DemoPool(std::vector<TaskInstance> instances)
        {
            for (auto& i : instances)
                add(std::move(i));
        }

        void add(TaskInstance inst)
        {
            if (!inst.gold)
                throw Error(ErrorCode::invalid_instance, "demonstration '" + inst.id + "' has no gold");
            if (!index_.emplace(inst.id, instances_.size()).second)
                throw Error(ErrorCode::invalid_instance, "duplicate demonstration id '" + inst.id + "'");
            instances_.push_back(std::move(inst));
        }

        const TaskInstance* find(const std::string& id) const
        {
            auto it = index_.find(id);
            return it == index_.end() ? nullptr : &instances_[it->second];
        }

        const std::vector<TaskInstance>& instances() const noexcept
        {
            return instances_;
        }
        bool empty() const noexcept
        {
            return instances_.empty();
        }

        /// Vectors of the pool instances, keyed by instance id.
        const EmbeddingStore* store = nullptr;
        /// Vectors of instances being predicted, when they are not in `store`.
        const EmbeddingStore* query_store = nullptr;
        /// Instance id -> rationale, used when demonstrations carry rationales.
        std::map<std::string, std::string> rationales;

    private:
        std::vector<TaskInstance> instances_;
        std::map<std::string, std::size_t> index_;
    };

    struct PipelineContext
    {
        const PipelineConfig& cfg;
        Backend& backend;
        const DemoPool& pool;
        const TemplateSet& templates;
        CallLedger* ledger = nullptr;
    };

    namespace detail
    {
        inline std::uint64_t fnv1a(std::string_view s)
        {
            std::uint64_t h = 1469598103934665603ull;
            for (unsigned char c : s)
            {
                h ^= c;
                h *= 1099511628211ull;
            }
            return h;
        }
    } // namespace detail

    /// N*k pool instances ordered by relevance to `inst` (round-robin
    /// partitioning happens later). Empty when the pool is empty.
    inline std::vector<const TaskInstance*> rank_demonstrations(const TaskInstance& inst, const PipelineContext& ctx)
    {
        const auto& pool = ctx.pool;
        if (pool.empty())
            return {};
        auto rc = ctx.cfg.retrieval;
        rc.k    = ctx.cfg.n_prompts * ctx.cfg.retrieval.k;

        std::vector<std::string> ids;
        if (rc.strategy == RetrievalStrategy::random)
        {
            std::vector<std::string> all;
            for (const auto& t : pool.instances())
                if (!(rc.exclude_self && t.id == inst.id))
                    all.push_back(t.id);
            // per-instance stream, so reordering the test set does not change draws
            ids = sample_ids(std::move(all), rc.k, rc.seed ^ detail::fnv1a(inst.id));
        }
        else
        {
            if (!pool.store)
                throw Error(ErrorCode::config_error, "kNN retrieval needs an embedding store");
            const auto& store = *pool.store;
            const EmbeddingStore* qs = store.contains(inst.id) ? &store
                                       : pool.query_store && pool.query_store->contains(inst.id) ? pool.query_store
                                                                                                 : nullptr;
            if (!qs)
                throw Error(ErrorCode::config_error, "no embedding for instance '" + inst.id + "'");
            if (rc.strategy == RetrievalStrategy::knn_sentence)
                ids = qs == &store ? retrieve(store, Query{inst.id}, rc)
                                   : retrieve(store, Query{qs->entry(inst.id).vectors.front()}, rc);
            else
                ids = retrieve_token_level(store, qs->entry(inst.id).vectors, rc, &inst.id);
        }
        std::vector<const TaskInstance*> out;
        for (const auto& id : ids)
            if (auto t = pool.find(id))
                out.push_back(t);
        return out;
    }

    //=== step runner ===//

    /// One sub-question of a step, e.g. one entity type or one word.
    struct Unit
    {
        std::string key;
        TaskInstance query; // what the prompt shows for the instance
        Fields slots;
        /// View of a pool instance as a demonstration for this unit; empty
        /// when the instance cannot illustrate it.
        std::function<std::optional<Demonstration>(const TaskInstance&)> demo;
    };

    namespace detail
    {
        inline std::string prompt_id(const std::string& step, const std::string& unit, std::size_t i)
        {
            return step + "/" + (unit.empty() ? "" : unit + "/") + "p" + std::to_string(i);
        }

        inline Fields common_slots(const TaskSpec& spec)
        {
            Fields f{{"open", spec.markers.open}, {"close", spec.markers.close}};
            std::string words;
            for (const auto& [w, _] : spec.label_words)
                words += (words.empty() ? "" : ", ") + w;
            f["label_words"] = words;
            std::string tags;
            for (std::size_t i = 0; i < spec.labels.size(); ++i)
                tags += (i ? "\n" : "") + option_marker(i, spec.option_style) + " " + spec.labels[i]
                        + (spec.descriptions.count(spec.labels[i]) ? "    " + spec.describe(spec.labels[i]) : "");
            f["tag_list"] = tags;
            return f;
        }
    } // namespace detail

    using UnitDecoder = std::function<Fidelity(std::size_t unit, const std::string& output)>;

    struct StepOptions
    {
        std::size_t n_prompts = 1;
        bool with_rationale   = false;
        double temperature    = 0.0;
    };

    /// Issues `n_prompts` prompts per unit, decodes each response in unit then
    /// prompt order, and records every call in the ledger.
    inline void run_step(const PipelineContext& ctx, const TaskInstance& inst, const std::string& step_name,
                         const std::vector<Unit>& units, const std::vector<const TaskInstance*>& ranked,
                         const StepOptions& so, const UnitDecoder& decode, Prediction& pred)
    {
        if (units.empty())
            return;
        const auto& cfg = ctx.cfg;
        auto tmpl       = ctx.templates.get(step_name);
        tmpl.sentinel   = cfg.task.sentinel;
        auto common     = detail::common_slots(cfg.task);

        std::vector<CompletionRequest> reqs;
        std::vector<std::size_t> owner;
        std::vector<std::string> pids;
        for (std::size_t u = 0; u < units.size(); ++u)
        {
            const auto& unit = units[u];
            AssembleOptions opts{so.with_rationale, merged(common, unit.slots), cfg.task.option_style};
            std::vector<Demonstration> demos;
            if (unit.demo)
                for (const auto* t : ranked)
                {
                    std::optional<Demonstration> d;
                    try
                    {
                        d = unit.demo(*t);
                    }
                    catch (const Error&)
                    {
                        d.reset(); // e.g. markers inside the demo text
                    }
                    if (!d)
                        continue;
                    if (so.with_rationale)
                        if (auto it = ctx.pool.rationales.find(t->id); it != ctx.pool.rationales.end())
                            d->rationale = it->second;
                    demos.push_back(std::move(*d));
                }

            std::vector<std::string> texts;
            if (demos.empty())
            {
                auto bare = assemble_prompt(tmpl, {}, unit.query, cfg.budget, opts).text;
                texts.assign(so.n_prompts, bare);
            }
            else
            {
                auto plan = build_prompt_plan(tmpl, demos, so.n_prompts, cfg.retrieval.k, unit.query, cfg.budget,
                                              opts);
                for (auto& p : plan.prompts)
                    texts.push_back(std::move(p.text));
            }
            for (std::size_t i = 0; i < texts.size(); ++i)
            {
                auto pid = detail::prompt_id(step_name, unit.key, i + 1);
                reqs.push_back({std::move(texts[i]), so.temperature, cfg.max_output_tokens,
                                RequestTag{to_string(cfg.task.kind), inst.id, pid}});
                owner.push_back(u);
                pids.push_back(std::move(pid));
            }
        }

        auto responses = complete_batch(ctx.backend, reqs, cfg.workers);

        std::vector<LedgerEntry> entries;
        entries.reserve(responses.size());
        for (std::size_t i = 0; i < responses.size(); ++i)
        {
            const auto& r = responses[i];
            auto output   = so.with_rationale ? strip_rationale(r.text, cfg.task.sentinel) : r.text;
            auto fid      = decode(owner[i], output);
            if (fid == Fidelity::rejected)
                ++pred.abstentions;
            pred.source_prompts.push_back(pids[i]);
            entries.push_back({inst.id, step_name, units[owner[i]].key, pids[i], reqs[i].tag, r.backend_id,
                               r.cached, fid, r.text});
        }
        if (ctx.ledger)
            ctx.ledger->append(std::move(entries));
    }

    inline StepOptions main_step(const PipelineConfig& cfg)
    {
        return {cfg.n_prompts, cfg.with_rationale, cfg.temperature};
    }

    //=== shared helpers ===//
    namespace detail
    {
        template <typename P>
        const P& gold_of(const TaskInstance& t)
        {
            if (!t.gold)
                throw Error(ErrorCode::invalid_instance, "instance '" + t.id + "' has no gold");
            auto p = std::get_if<P>(&t.gold->payload);
            if (!p)
                throw Error(ErrorCode::invalid_instance, "gold of '" + t.id + "' has the wrong shape");
            return *p;
        }

        inline Span word_span(const TaskInstance& inst, const text::Token& w)
        {
            return make_span(inst.text, w.start, w.end, "");
        }

        inline TaskInstance with_text(TaskInstance inst, std::string text)
        {
            inst.text = std::move(text);
            return inst;
        }

        /// `inst` with the given spans wrapped in markers.
        inline TaskInstance marked(const TaskInstance& inst, std::vector<Span> spans, const MarkerGrammar& g)
        {
            return with_text(inst, marker_encode(inst.text, std::move(spans), g));
        }

        inline std::string quote(const std::string& s)
        {
            return "'" + s + "'";
        }

        /// Tally over "yes"/"no"; `invalid` abstains.
        inline Fidelity binary_vote(VoteTally<std::string>& tally, const std::string& output)
        {
            switch (binary_decode(output))
            {
            case YesNo::yes: tally.add("yes"); return Fidelity::exact;
            case YesNo::no: tally.add("no"); return Fidelity::exact;
            case YesNo::invalid: break;
            }
            tally.abstain();
            return Fidelity::rejected;
        }

        inline double yes_score(const VoteTally<std::string>& t)
        {
            auto v = t.valid();
            return v == 0 ? 0.0 : static_cast<double>(t.count("yes")) / v;
        }

        /// Index of the highest score; ties go to the lowest index. Empty when
        /// every score is zero.
        inline std::optional<std::size_t> argmax_positive(const std::vector<double>& scores)
        {
            std::optional<std::size_t> best;
            for (std::size_t i = 0; i < scores.size(); ++i)
                if (scores[i] > 0 && (!best || scores[i] > scores[*best]))
                    best = i;
            return best;
        }

        inline std::map<std::string, int> yes_no_counts(const VoteTally<std::string>& t)
        {
            return {{"yes", t.count("yes")}, {"no", t.count("no")}, {"abstain", t.abstentions}};
        }

        inline std::string label_word_for(const TaskSpec& spec, const std::string& label)
        {
            for (const auto& [w, l] : spec.label_words)
                if (l == label)
                    return w;
            return label;
        }

        inline std::string span_vote_key(const std::optional<Span>& s)
        {
            return s ? std::to_string(s->start) + "-" + std::to_string(s->end) : "null";
        }

        /// Plurality over span-or-null answers; ties prefer null, then the
        /// earliest span.
        struct SpanOrNullVote
        {
            VoteTally<std::string> tally;
            std::map<std::string, Span> spans;

            Fidelity add(const std::string& output, const std::string& source, const std::string& label,
                         std::vector<std::string>& diagnostics)
            {
                try
                {
                    auto s = span_or_null_decode(output, source, label, &diagnostics);
                    auto k = span_vote_key(s);
                    if (s)
                        spans.emplace(k, *s);
                    tally.add(k);
                    return Fidelity::exact;
                }
                catch (const Error&)
                {
                    tally.abstain();
                    return Fidelity::rejected;
                }
            }

            std::optional<Span> winner() const
            {
                auto before = [this](const std::string& a, const std::string& b) {
                    if ((a == "null") != (b == "null"))
                        return a == "null";
                    return spans.at(a).start < spans.at(b).start
                           || (spans.at(a).start == spans.at(b).start && spans.at(a).end < spans.at(b).end);
                };
                auto w = vote(tally, before);
                if (!w || *w == "null")
                    return std::nullopt;
                return spans.at(*w);
            }
        };

        /// Spans marked in at least floor(V/2)+1 of the V valid outputs.
        struct SpanMajority
        {
            int valid = 0;
            std::map<std::string, int> counts;
            std::map<std::string, Span> spans;

            Fidelity add(const DecodeOutcome<std::vector<Span>>& d)
            {
                if (!d.payload)
                    return Fidelity::rejected;
                ++valid;
                std::set<std::string> seen;
                for (const auto& s : *d.payload)
                {
                    auto k = span_key(s);
                    if (seen.insert(k).second)
                    {
                        ++counts[k];
                        spans.emplace(k, s);
                    }
                }
                return d.fidelity;
            }

            std::vector<Span> kept() const
            {
                std::vector<Span> out;
                for (const auto& [k, c] : counts)
                    if (valid > 0 && c >= valid / 2 + 1)
                        out.push_back(spans.at(k));
                return out;
            }
        };

        inline DecodeOutcome<std::vector<Span>> safe_marker_decode(std::string_view source, std::string_view output,
                                                                   const MarkerGrammar& g, const std::string& label)
        {
            try
            {
                return marker_decode(source, output, g, label);
            }
            catch (const Error& e)
            {
                DecodeOutcome<std::vector<Span>> r;
                r.diagnostics.push_back(e.what());
                return r;
            }
        }
    } // namespace detail

    //=== classification: sentiment, commonsense, POS ===//
    namespace detail
    {
        inline Prediction run_sentiment(const TaskInstance& inst, const PipelineContext& ctx,
                                        const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            Prediction pred;
            pred.kind = spec.kind;
            VoteTally<std::string> tally;
            std::vector<Unit> units{{"", inst, {}, [&](const TaskInstance& t) -> std::optional<Demonstration> {
                                         auto g = gold_of<ClassPayload>(t).index;
                                         return Demonstration{t, label_word_for(spec, spec.labels.at(g)), {}, {}};
                                     }}};
            run_step(ctx, inst, step::classify, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t, const std::string& out) {
                         try
                         {
                             tally.add(label_word_decode(out, spec.label_words));
                             return Fidelity::exact;
                         }
                         catch (const Error&)
                         {
                             tally.abstain();
                             return Fidelity::rejected;
                         }
                     },
                     pred);
            auto w = vote(tally, ListOrder{spec.labels});
            if (!w)
                throw Error(ErrorCode::all_abstained, "instance '" + inst.id + "'");
            pred.payload = ClassPayload{spec.label_index(*w)};
            pred.votes   = tally.counts;
            return pred;
        }

        inline Prediction run_commonsense(const TaskInstance& inst, const PipelineContext& ctx,
                                          const std::vector<const TaskInstance*>& ranked)
        {
            Prediction pred;
            pred.kind = TaskKind::commonsense;
            VoteTally<std::string> tally;
            std::vector<Unit> units{{"", inst, {}, [&](const TaskInstance& t) -> std::optional<Demonstration> {
                                         auto g = gold_of<ClassPayload>(t).index;
                                         return Demonstration{
                                             t, option_marker(g, OptionStyle::alphabetic) + " " + t.options.at(g),
                                             {}, {}};
                                     }}};
            run_step(ctx, inst, step::choice, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t, const std::string& out) {
                         try
                         {
                             tally.add(inst.options[choice_decode(out, inst.options)]);
                             return Fidelity::exact;
                         }
                         catch (const Error&)
                         {
                             tally.abstain();
                             return Fidelity::rejected;
                         }
                     },
                     pred);
            auto w = vote(tally, ListOrder{inst.options});
            if (!w)
                throw Error(ErrorCode::all_abstained, "instance '" + inst.id + "'");
            auto idx     = std::find(inst.options.begin(), inst.options.end(), *w) - inst.options.begin();
            pred.payload = ClassPayload{static_cast<std::size_t>(idx)};
            pred.votes   = tally.counts;
            return pred;
        }

        inline std::string pos_question(const std::string& word, const MarkerGrammar& g)
        {
            return "What is the part-of-speech tag of the word " + quote(word) + " marked with " + g.open + g.close
                   + " in the INPUT?";
        }

        inline Prediction run_pos(const TaskInstance& inst, const PipelineContext& ctx,
                                  const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            Prediction pred;
            pred.kind  = TaskKind::pos;
            auto words = instance_words(inst);
            std::vector<Unit> units;
            for (std::size_t i = 0; i < words.size(); ++i)
            {
                Unit u;
                u.key   = "w" + std::to_string(i + 1);
                u.query = marked(inst, {word_span(inst, words[i])}, g);
                u.slots = {{"word", words[i].surface}, {"ask", pos_question(words[i].surface, g)}};
                u.demo  = [&spec, &g, i](const TaskInstance& t) -> std::optional<Demonstration> {
                    auto tw          = instance_words(t);
                    const auto& tags = gold_of<TagPayload>(t).tags;
                    if (tw.empty() || tags.size() != tw.size())
                        return std::nullopt;
                    auto j   = i % tw.size();
                    auto idx = spec.label_index(tags[j]);
                    Demonstration d{marked(t, {word_span(t, tw[j])}, g),
                                    option_marker(idx, spec.option_style) + " " + tags[j] + "    "
                                        + spec.describe(tags[j]),
                                    {},
                                    {{"word", tw[j].surface}, {"ask", pos_question(tw[j].surface, g)}}};
                    return d;
                };
                units.push_back(std::move(u));
            }
            std::vector<VoteTally<std::string>> tallies(units.size());
            run_step(ctx, inst, step::pos, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& out) {
                         try
                         {
                             tallies[u].add(spec.labels[choice_decode(out, spec.labels)]);
                             return Fidelity::exact;
                         }
                         catch (const Error&)
                         {
                             tallies[u].abstain();
                             return Fidelity::rejected;
                         }
                     },
                     pred);
            TagPayload tags;
            for (std::size_t i = 0; i < units.size(); ++i)
            {
                auto w = vote(tallies[i], ListOrder{spec.labels});
                if (!w)
                    pred.diagnostics.push_back("every prompt abstained for word " + std::to_string(i + 1));
                tags.tags.push_back(w.value_or("_"));
                pred.unit_votes[units[i].key] = tallies[i].counts;
            }
            pred.payload = std::move(tags);
            return pred;
        }
    } // namespace detail

    //=== NLI ===//
    namespace detail
    {
        inline std::string relation_phrase(const std::string& relation)
        {
            if (relation == "entailment")
                return "entail";
            if (relation == "contradiction")
                return "contradict";
            if (relation == "neutral")
                return "neither entail nor contradict";
            return "stand in the relation '" + relation + "' to";
        }

        inline Prediction run_nli(const TaskInstance& inst, const PipelineContext& ctx,
                                  const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            Prediction pred;
            pred.kind = TaskKind::nli;
            std::vector<Unit> units;
            for (const auto& r : spec.labels)
                units.push_back({r, inst, {{"relation", r}, {"relation_phrase", relation_phrase(r)}},
                                 [&spec, r](const TaskInstance& t) -> std::optional<Demonstration> {
                                     auto g = gold_of<ClassPayload>(t).index;
                                     return Demonstration{t, spec.labels.at(g) == r ? "yes" : "no", {}, {}};
                                 }});
            std::vector<VoteTally<std::string>> tallies(units.size());
            run_step(ctx, inst, step::nli, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& out) { return binary_vote(tallies[u], out); }, pred);

            std::vector<double> scores;
            for (std::size_t i = 0; i < units.size(); ++i)
            {
                scores.push_back(yes_score(tallies[i]));
                pred.votes[spec.labels[i]]     = tallies[i].count("yes");
                pred.unit_votes[spec.labels[i]] = yes_no_counts(tallies[i]);
            }
            auto best = argmax_positive(scores);
            if (!best)
            {
                auto it = std::find(spec.labels.begin(), spec.labels.end(), "neutral");
                best    = it == spec.labels.end() ? spec.labels.size() - 1
                                                  : static_cast<std::size_t>(it - spec.labels.begin());
                pred.diagnostics.push_back("no relation received a yes; defaulting to " + spec.labels[*best]);
            }
            pred.payload = ClassPayload{*best};
            return pred;
        }
    } // namespace detail

    //=== QA ===//
    namespace detail
    {
        inline std::string qa_key(const std::optional<QaAnswer>& a)
        {
            return a ? "(" + std::to_string(a->sentence) + ") " + text::lower(text::normalize_ws(a->text))
                     : "unanswerable";
        }

        inline TaskInstance qa_view(const TaskInstance& inst)
        {
            return with_text(inst, render_indexed_sentences(text::split_sentences(inst.text)));
        }

        inline Prediction run_qa(const TaskInstance& inst, const PipelineContext& ctx,
                                 const std::vector<const TaskInstance*>& ranked)
        {
            Prediction pred;
            pred.kind      = TaskKind::qa;
            auto sentences = text::split_sentences(inst.text);
            VoteTally<std::string> tally;
            std::map<std::string, QaAnswer> answers;
            std::vector<Unit> units{{"", qa_view(inst), {}, [](const TaskInstance& t) -> std::optional<Demonstration> {
                                         return Demonstration{qa_view(t), render_qa_answer(gold_of<QaPayload>(t).answer),
                                                              {}, {}};
                                     }}};
            run_step(ctx, inst, step::qa, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t, const std::string& out) {
                         try
                         {
                             auto a = qa_decode(out, sentences);
                             auto k = qa_key(a);
                             if (a)
                             {
                                 auto [it, fresh] = answers.emplace(k, *a);
                                 if (!fresh && a->text < it->second.text)
                                     it->second = *a; // order-independent representative
                             }
                             tally.add(k);
                             return Fidelity::exact;
                         }
                         catch (const Error&)
                         {
                             tally.abstain();
                             return Fidelity::rejected;
                         }
                     },
                     pred);
            auto w = vote(tally);
            if (!w)
                throw Error(ErrorCode::all_abstained, "instance '" + inst.id + "'");
            QaPayload p;
            if (*w != "unanswerable")
                p.answer = answers.at(*w);
            pred.payload = std::move(p);
            pred.votes   = tally.counts;
            return pred;
        }
    } // namespace detail

    //=== span extraction: NER and the entity step of RE ===//
    namespace detail
    {
        using GoldSpans = std::function<std::vector<Span>(const TaskInstance&)>;

        inline std::vector<Span> extract_spans(const TaskInstance& inst, const PipelineContext& ctx,
                                               const std::vector<const TaskInstance*>& ranked,
                                               const std::string& step_name, const GoldSpans& gold,
                                               Prediction& pred)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            std::vector<Unit> units;
            for (const auto& label : spec.labels)
                units.push_back({label, inst, {{"label", label}, {"label_desc", spec.describe(label)}},
                                 [&g, &gold, label](const TaskInstance& t) -> std::optional<Demonstration> {
                                     std::vector<Span> mine;
                                     for (auto& s : gold(t))
                                         if (s.label == label)
                                             mine.push_back(s);
                                     return Demonstration{t, marker_encode(t.text, mine, g), {}, {}};
                                 }});
            std::vector<SpanMajority> votes(units.size());
            run_step(ctx, inst, step_name, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& out) {
                         auto d = safe_marker_decode(inst.text, out, g, units[u].key);
                         for (auto& msg : d.diagnostics)
                             pred.diagnostics.push_back(units[u].key + ": " + msg);
                         return votes[u].add(d);
                     },
                     pred);
            std::vector<Span> kept;
            for (std::size_t u = 0; u < units.size(); ++u)
            {
                auto& uv = pred.unit_votes[units[u].key];
                uv       = votes[u].counts;
                for (auto& s : votes[u].kept())
                    kept.push_back(std::move(s));
            }
            return validate_spans(inst.text, std::move(kept));
        }

        inline Prediction run_ner(const TaskInstance& inst, const PipelineContext& ctx,
                                  const std::vector<const TaskInstance*>& ranked)
        {
            Prediction pred;
            pred.kind  = TaskKind::ner;
            auto spans = extract_spans(
                inst, ctx, ranked, step::ner, [](const TaskInstance& t) { return gold_of<SpanPayload>(t).spans; },
                pred);
            pred.payload = SpanPayload{std::move(spans)};
            return pred;
        }
    } // namespace detail

    //=== relation extraction ===//
    namespace detail
    {
        inline std::string relation_question(const Span& a, const Span& b, const std::string& relation,
                                             const TaskSpec& spec)
        {
            return "Is the relation between " + a.surface + " (" + spec.describe(a.label) + ") and " + b.surface
                   + " (" + spec.describe(b.label) + ") " + quote(relation) + "? Answer yes or no.";
        }

        inline Prediction run_relation_extraction(const TaskInstance& inst, const PipelineContext& ctx,
                                                  const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            Prediction pred;
            pred.kind = TaskKind::relation_extraction;
            RelationPayload out;
            out.entities = extract_spans(
                inst, ctx, ranked, step::re_entity,
                [](const TaskInstance& t) { return gold_of<RelationPayload>(t).entities; }, pred);

            std::vector<Unit> units;
            std::vector<Triple> candidates;
            for (std::size_t i = 0; i < out.entities.size(); ++i)
                for (std::size_t j = 0; j < out.entities.size(); ++j)
                {
                    if (i == j)
                        continue;
                    const auto& a = out.entities[i];
                    const auto& b = out.entities[j];
                    TaskInstance view;
                    try
                    {
                        view = marked(inst, {a, b}, g);
                    }
                    catch (const Error& e)
                    {
                        pred.diagnostics.push_back("pair " + span_key(a) + " / " + span_key(b)
                                                   + " skipped: " + e.what());
                        continue;
                    }
                    for (const auto& r : spec.relations)
                    {
                        Unit u;
                        u.key   = std::to_string(i) + "-" + std::to_string(j) + "/" + r;
                        u.query = view;
                        u.slots = {{"relation", r}, {"ask", relation_question(a, b, r, spec)}};
                        u.demo  = [&spec, &g, r](const TaskInstance& t) -> std::optional<Demonstration> {
                            const auto& gp = gold_of<RelationPayload>(t);
                            if (gp.entities.size() < 2)
                                return std::nullopt;
                            std::size_t h = 0, d = 1;
                            bool yes      = false;
                            auto hit = std::find_if(gp.triples.begin(), gp.triples.end(),
                                                    [&](const Triple& x) { return x.relation == r; });
                            if (hit != gp.triples.end())
                            {
                                h = hit->head, d = hit->tail, yes = true;
                            }
                            else if (!gp.triples.empty())
                            {
                                h = gp.triples.front().head, d = gp.triples.front().tail;
                            }
                            const auto& ea = gp.entities.at(h);
                            const auto& eb = gp.entities.at(d);
                            return Demonstration{marked(t, {ea, eb}, g),
                                                 yes ? "Yes" : "No",
                                                 {},
                                                 {{"relation", r}, {"ask", relation_question(ea, eb, r, spec)}}};
                        };
                        units.push_back(std::move(u));
                        candidates.push_back({i, j, r});
                    }
                }
            std::vector<VoteTally<std::string>> tallies(units.size());
            run_step(ctx, inst, step::re_relation, units, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) { return binary_vote(tallies[u], o); }, pred);
            for (std::size_t u = 0; u < units.size(); ++u)
            {
                pred.unit_votes[units[u].key] = yes_no_counts(tallies[u]);
                if (tallies[u].has_majority("yes"))
                    out.triples.push_back(candidates[u]);
            }
            std::sort(out.triples.begin(), out.triples.end());
            pred.payload = std::move(out);
            return pred;
        }
    } // namespace detail

    //=== event extraction ===//
    namespace detail
    {
        inline const Event* first_event(const TaskInstance& t, const std::string& type)
        {
            const auto& events = gold_of<EventPayload>(t).events;
            for (const auto& e : events)
                if (e.type == type)
                    return &e;
            return events.empty() ? nullptr : &events.front();
        }

        inline Prediction run_event_extraction(const TaskInstance& inst, const PipelineContext& ctx,
                                               const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            Prediction pred;
            pred.kind = TaskKind::event_extraction;

            std::vector<Unit> triggers;
            for (const auto& type : spec.labels)
                triggers.push_back({type, inst, {{"event", type}},
                                    [type](const TaskInstance& t) -> std::optional<Demonstration> {
                                        for (const auto& e : gold_of<EventPayload>(t).events)
                                            if (e.type == type)
                                                return Demonstration{t, e.trigger.surface, {}, {}};
                                        return Demonstration{t, "null", {}, {}};
                                    }});
            std::vector<SpanOrNullVote> trig_votes(triggers.size());
            run_step(ctx, inst, step::ee_trigger, triggers, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) {
                         return trig_votes[u].add(o, inst.text, triggers[u].key, pred.diagnostics);
                     },
                     pred);

            EventPayload out;
            for (std::size_t u = 0; u < triggers.size(); ++u)
            {
                pred.unit_votes[triggers[u].key] = trig_votes[u].tally.counts;
                if (auto s = trig_votes[u].winner())
                    out.events.push_back({triggers[u].key, *s, {}});
            }

            std::vector<Unit> args;
            std::vector<std::pair<std::size_t, std::string>> arg_of;
            for (std::size_t e = 0; e < out.events.size(); ++e)
            {
                const auto& ev = out.events[e];
                TaskInstance view;
                try
                {
                    view = marked(inst, {ev.trigger}, g);
                }
                catch (const Error& err)
                {
                    pred.diagnostics.push_back("event " + ev.type + " skipped: " + err.what());
                    continue;
                }
                for (const auto& role : spec.roles_for(ev.type))
                {
                    Unit u;
                    u.key   = ev.type + "/" + role;
                    u.query = view;
                    u.slots = {{"event", ev.type}, {"role", role}, {"role_desc", spec.describe(role)},
                               {"trigger", ev.trigger.surface}};
                    u.demo  = [&g, type = ev.type, role](const TaskInstance& t) -> std::optional<Demonstration> {
                        auto* te = first_event(t, type);
                        if (!te)
                            return Demonstration{t, "null", {}, {}};
                        auto it = te->arguments.find(role);
                        return Demonstration{marked(t, {te->trigger}, g),
                                             it == te->arguments.end() ? "null" : it->second.surface,
                                             {},
                                             {{"event", te->type}, {"trigger", te->trigger.surface}}};
                    };
                    args.push_back(std::move(u));
                    arg_of.emplace_back(e, role);
                }
            }
            std::vector<SpanOrNullVote> arg_votes(args.size());
            run_step(ctx, inst, step::ee_argument, args, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) {
                         return arg_votes[u].add(o, inst.text, arg_of[u].second, pred.diagnostics);
                     },
                     pred);
            for (std::size_t u = 0; u < args.size(); ++u)
            {
                pred.unit_votes[args[u].key] = arg_votes[u].tally.counts;
                if (auto s = arg_votes[u].winner())
                    out.events[arg_of[u].first].arguments[arg_of[u].second] = *s;
            }
            pred.payload = std::move(out);
            return pred;
        }
    } // namespace detail

    //=== dependency parsing ===//
    namespace detail
    {
        /// 1-based indices of the words lying inside `s`.
        inline std::vector<std::size_t> covered_words(const std::vector<text::Token>& words, const Span& s)
        {
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < words.size(); ++i)
                if (words[i].start >= s.start && words[i].end <= s.end)
                    out.push_back(i + 1);
            return out;
        }

        inline std::string head_question(const std::string& head, std::size_t position)
        {
            return "Which words depend on the head word " + quote(head) + " (word " + std::to_string(position)
                   + ")?";
        }

        inline std::string arc_question(const std::string& head, const std::string& dependent,
                                        const std::string& relation_desc)
        {
            return "Is " + quote(dependent) + " the " + relation_desc + " of " + quote(head)
                   + "? Answer yes or no.";
        }

        inline Prediction run_dependency(const TaskInstance& inst, const PipelineContext& ctx,
                                         const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            Prediction pred;
            pred.kind  = TaskKind::dependency;
            auto words = instance_words(inst);
            auto W     = words.size();

            // step 1: dependents of each head word
            std::vector<Unit> heads;
            for (std::size_t h = 1; h <= W; ++h)
            {
                Unit u;
                u.key   = "w" + std::to_string(h);
                u.query = inst;
                u.slots = {{"head", words[h - 1].surface}, {"ask", head_question(words[h - 1].surface, h)}};
                u.demo  = [&g, h](const TaskInstance& t) -> std::optional<Demonstration> {
                    auto tw = instance_words(t);
                    if (tw.empty())
                        return std::nullopt;
                    auto th = (h - 1) % tw.size() + 1;
                    std::vector<Span> deps;
                    for (const auto& a : gold_of<ArcPayload>(t).arcs)
                        if (a.head == th && a.dependent >= 1 && a.dependent <= tw.size())
                            deps.push_back(word_span(t, tw[a.dependent - 1]));
                    return Demonstration{t, marker_encode(t.text, deps, g), {},
                                         {{"head", tw[th - 1].surface}, {"ask", head_question(tw[th - 1].surface, th)}}};
                };
                heads.push_back(std::move(u));
            }
            std::vector<int> valid(W, 0);
            std::vector<std::map<std::size_t, int>> dep_counts(W);
            run_step(ctx, inst, step::dep_head, heads, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) {
                         auto d = safe_marker_decode(inst.text, o, g, "");
                         if (!d.payload)
                             return Fidelity::rejected;
                         ++valid[u];
                         std::set<std::size_t> deps;
                         for (const auto& s : *d.payload)
                             for (auto w : covered_words(words, s))
                                 if (w != u + 1)
                                     deps.insert(w);
                         for (auto w : deps)
                             ++dep_counts[u][w];
                         return d.fidelity;
                     },
                     pred);

            // majority per head, then one head per dependent
            std::vector<std::size_t> head_of(W + 1, 0);
            std::vector<int> head_votes(W + 1, 0);
            for (std::size_t h = 1; h <= W; ++h)
            {
                auto& uv = pred.unit_votes[heads[h - 1].key];
                for (auto [d, c] : dep_counts[h - 1])
                {
                    uv["w" + std::to_string(d)] = c;
                    if (c < valid[h - 1] / 2 + 1)
                        continue;
                    if (c > head_votes[d]) // ascending h keeps the leftmost head on ties
                    {
                        head_of[d]    = h;
                        head_votes[d] = c;
                    }
                }
            }

            // step 2: relation of each surviving arc
            std::vector<Unit> rels;
            std::vector<std::size_t> rel_dep;
            for (std::size_t d = 1; d <= W; ++d)
            {
                auto h = head_of[d];
                if (h == 0)
                    continue;
                auto view = marked(inst, {word_span(inst, words[h - 1]), word_span(inst, words[d - 1])}, g);
                for (const auto& r : spec.labels)
                {
                    Unit u;
                    u.key   = std::to_string(h) + "-" + std::to_string(d) + "/" + r;
                    u.query = view;
                    u.slots = {{"head", words[h - 1].surface},
                               {"dependent", words[d - 1].surface},
                               {"relation", r},
                               {"relation_desc", spec.describe(r)},
                               {"ask", arc_question(words[h - 1].surface, words[d - 1].surface, spec.describe(r))}};
                    u.demo = [&spec, &g, r](const TaskInstance& t) -> std::optional<Demonstration> {
                        auto tw = instance_words(t);
                        const Arc* pick = nullptr;
                        for (const auto& a : gold_of<ArcPayload>(t).arcs)
                        {
                            if (a.head == 0 || a.head > tw.size() || a.dependent == 0 || a.dependent > tw.size())
                                continue;
                            if (a.relation == r)
                            {
                                pick = &a;
                                break;
                            }
                            if (!pick)
                                pick = &a;
                        }
                        if (!pick)
                            return std::nullopt;
                        const auto& hw = tw[pick->head - 1];
                        const auto& dw = tw[pick->dependent - 1];
                        return Demonstration{marked(t, {word_span(t, hw), word_span(t, dw)}, g),
                                             pick->relation == r ? "Yes" : "No",
                                             {},
                                             {{"head", hw.surface},
                                              {"dependent", dw.surface},
                                              {"ask", arc_question(hw.surface, dw.surface, spec.describe(r))}}};
                    };
                    rels.push_back(std::move(u));
                    rel_dep.push_back(d);
                }
            }
            std::vector<VoteTally<std::string>> tallies(rels.size());
            run_step(ctx, inst, step::dep_relation, rels, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) { return binary_vote(tallies[u], o); }, pred);

            ArcPayload out;
            std::size_t u = 0;
            for (std::size_t d = 1; d <= W; ++d)
            {
                if (head_of[d] == 0)
                {
                    out.arcs.push_back({0, d, spec.root_label});
                    continue;
                }
                std::vector<double> scores;
                for (std::size_t r = 0; r < spec.labels.size(); ++r, ++u)
                {
                    scores.push_back(yes_score(tallies[u]));
                    pred.unit_votes[rels[u].key] = yes_no_counts(tallies[u]);
                }
                auto best = argmax_positive(scores);
                out.arcs.push_back({head_of[d], d, best ? spec.labels[*best] : std::string("dep")});
            }
            pred.payload = std::move(out);
            return pred;
        }
    } // namespace detail

    //=== semantic role labeling ===//
    namespace detail
    {
        inline std::string sense_question(const std::string& predicate, const std::string& sense)
        {
            return "Does the predicate " + quote(predicate) + " have the sense " + quote(sense)
                   + " here? Answer yes or no.";
        }

        inline TaskInstance predicate_view(const TaskInstance& t, const MarkerGrammar& g)
        {
            auto tw = instance_words(t);
            if (!t.predicate || *t.predicate >= tw.size())
                throw Error(ErrorCode::invalid_instance, "instance '" + t.id + "' has no valid predicate");
            return marked(t, {word_span(t, tw[*t.predicate])}, g);
        }

        inline Prediction run_srl(const TaskInstance& inst, const PipelineContext& ctx,
                                  const std::vector<const TaskInstance*>& ranked)
        {
            const auto& spec = ctx.cfg.task;
            const auto& g    = spec.markers;
            Prediction pred;
            pred.kind      = TaskKind::srl;
            auto words     = instance_words(inst);
            auto predicate = words.at(*inst.predicate).surface;
            auto view      = predicate_view(inst, g);

            std::vector<Unit> senses;
            for (std::size_t s = 0; s < inst.options.size(); ++s)
                senses.push_back({"s" + std::to_string(s + 1),
                                  view,
                                  {{"predicate", predicate},
                                   {"sense", inst.options[s]},
                                   {"ask", sense_question(predicate, inst.options[s])}},
                                  [&g, s](const TaskInstance& t) -> std::optional<Demonstration> {
                                      if (t.options.empty())
                                          return std::nullopt;
                                      auto ts   = s % t.options.size();
                                      auto pred_word = instance_words(t).at(*t.predicate).surface;
                                      return Demonstration{predicate_view(t, g),
                                                           gold_of<SrlPayload>(t).sense == ts ? "yes" : "no",
                                                           {},
                                                           {{"predicate", pred_word},
                                                            {"sense", t.options[ts]},
                                                            {"ask", sense_question(pred_word, t.options[ts])}}};
                                  }});
            std::vector<VoteTally<std::string>> sense_tallies(senses.size());
            run_step(ctx, inst, step::srl_sense, senses, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) { return binary_vote(sense_tallies[u], o); }, pred);
            std::vector<double> scores;
            for (std::size_t s = 0; s < senses.size(); ++s)
            {
                scores.push_back(yes_score(sense_tallies[s]));
                pred.votes[inst.options[s]]      = sense_tallies[s].count("yes");
                pred.unit_votes[senses[s].key] = yes_no_counts(sense_tallies[s]);
            }
            SrlPayload out;
            auto best = argmax_positive(scores);
            if (!best)
                pred.diagnostics.push_back("no sense received a yes; using the first listed sense");
            out.sense = best.value_or(0);

            std::vector<Unit> roles;
            for (const auto& role : spec.labels)
                roles.push_back({role,
                                 view,
                                 {{"predicate", predicate}, {"role", role}, {"role_desc", spec.describe(role)}},
                                 [&g, role](const TaskInstance& t) -> std::optional<Demonstration> {
                                     const auto& args = gold_of<SrlPayload>(t).arguments;
                                     auto it          = args.find(role);
                                     return Demonstration{predicate_view(t, g),
                                                          it == args.end() ? "null" : it->second.surface,
                                                          {},
                                                          {{"predicate", instance_words(t).at(*t.predicate).surface}}};
                                 }});
            std::vector<SpanOrNullVote> role_votes(roles.size());
            run_step(ctx, inst, step::srl_argument, roles, ranked, main_step(ctx.cfg),
                     [&](std::size_t u, const std::string& o) {
                         return role_votes[u].add(o, inst.text, roles[u].key, pred.diagnostics);
                     },
                     pred);
            for (std::size_t u = 0; u < roles.size(); ++u)
            {
                pred.unit_votes[roles[u].key] = role_votes[u].tally.counts;
                if (auto s = role_votes[u].winner())
                    out.arguments[roles[u].key] = *s;
            }
            pred.payload = std::move(out);
            return pred;
        }
    } // namespace detail

    //=== public entry points ===//

    /// Sentiment, commonsense and POS (one decision per word).
    inline Prediction run_classification(const TaskInstance& inst, const PipelineContext& ctx)
    {
        validate_instance(ctx.cfg.task.kind, inst);
        auto ranked = rank_demonstrations(inst, ctx);
        switch (ctx.cfg.task.kind)
        {
        case TaskKind::sentiment: return detail::run_sentiment(inst, ctx, ranked);
        case TaskKind::commonsense: return detail::run_commonsense(inst, ctx, ranked);
        case TaskKind::pos: return detail::run_pos(inst, ctx, ranked);
        default: throw Error(ErrorCode::config_error, "run_classification does not handle this task");
        }
    }

#define PROMPTFORGE_ENTRY(name, task_kind)                                                                              \
    inline Prediction name(const TaskInstance& inst, const PipelineContext& ctx)                                   \
    {                                                                                                              \
        if (ctx.cfg.task.kind != TaskKind::task_kind)                                                                   \
            throw Error(ErrorCode::config_error, #name " needs a " #task_kind " configuration");                        \
        validate_instance(TaskKind::task_kind, inst);                                                                   \
        return detail::name(inst, ctx, rank_demonstrations(inst, ctx));                                            \
    }

    PROMPTFORGE_ENTRY(run_nli, nli)
    PROMPTFORGE_ENTRY(run_qa, qa)
    PROMPTFORGE_ENTRY(run_relation_extraction, relation_extraction)
    PROMPTFORGE_ENTRY(run_event_extraction, event_extraction)
    PROMPTFORGE_ENTRY(run_dependency, dependency)
    PROMPTFORGE_ENTRY(run_srl, srl)
#undef PROMPTFORGE_ENTRY

    /// NER; `run_relation_extraction` reuses the same entity step.
    inline Prediction run_extraction(const TaskInstance& inst, const PipelineContext& ctx)
    {
        if (ctx.cfg.task.kind != TaskKind::ner)
            throw Error(ErrorCode::config_error, "run_extraction needs a ner configuration");
        validate_instance(TaskKind::ner, inst);
        return detail::run_ner(inst, ctx, rank_demonstrations(inst, ctx));
    }

    /// Runs the pipeline of the configured task once, without verification or
    /// paraphrasing.
    inline Prediction run_task(const TaskInstance& inst, const PipelineContext& ctx)
    {
        switch (ctx.cfg.task.kind)
        {
        case TaskKind::sentiment:
        case TaskKind::commonsense:
        case TaskKind::pos: return run_classification(inst, ctx);
        case TaskKind::nli: return run_nli(inst, ctx);
        case TaskKind::qa: return run_qa(inst, ctx);
        case TaskKind::ner: return run_extraction(inst, ctx);
        case TaskKind::relation_extraction: return run_relation_extraction(inst, ctx);
        case TaskKind::event_extraction: return run_event_extraction(inst, ctx);
        case TaskKind::dependency: return run_dependency(inst, ctx);
        case TaskKind::srl: return run_srl(inst, ctx);
        }
        throw Error(ErrorCode::config_error, "unknown task");
    }
} // namespace promptforge

#endif // PROMPTFORGE_PIPELINES_HPP_INCLUDED
