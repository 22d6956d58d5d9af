#ifndef PROMPTFORGE_STRATEGIES_HPP_INCLUDED
#define PROMPTFORGE_STRATEGIES_HPP_INCLUDED

// Strategies layered over the task pipelines: rationale generation for
// demonstrations, second-pass verification, and paraphrase voting.

#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "io.hpp"
#include "pipelines.hpp"

namespace promptforge
{
    //=== rationales ===//
    struct RationaleRecord
    {
        std::string instance_id;
        std::string rationale;
        std::string generator_backend_id;
    };

    /// `<instance_id>\t<backend_id>\t<base64 rationale>` per line. One
    /// writer, any number of readers.
    class RationaleStore
    {
    public:
        RationaleStore() = default; // in-memory only
        explicit RationaleStore(std::string path) : path_(std::move(path))
        {
            std::ifstream in(path_);
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line))
            {
                ++lineno;
                if (line.empty())
                    continue;
                auto where = path_ + ":" + std::to_string(lineno);
                auto t1    = line.find('\t');
                auto t2    = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
                if (t2 == std::string::npos)
                    throw Error(ErrorCode::format_error, where + ": expected three tab-separated fields");
                RationaleRecord r{line.substr(0, t1), {}, line.substr(t1 + 1, t2 - t1 - 1)};
                try
                {
                    r.rationale = base64_decode(std::string_view(line).substr(t2 + 1));
                }
                catch (const std::invalid_argument& e)
                {
                    throw Error(ErrorCode::format_error, where + ": " + e.what());
                }
                if (r.rationale.empty())
                    throw Error(ErrorCode::format_error, where + ": empty rationale");
                if (index_.count(r.instance_id))
                    throw Error(ErrorCode::format_error, where + ": duplicate record for '" + r.instance_id + "'");
                index_[r.instance_id] = records_.size();
                records_.push_back(std::move(r));
            }
        }

        bool contains(const std::string& id) const
        {
            std::lock_guard lock(mutex_);
            return index_.count(id) != 0;
        }

        std::optional<std::string> get(const std::string& id) const
        {
            std::lock_guard lock(mutex_);
            auto it = index_.find(id);
            if (it == index_.end())
                return std::nullopt;
            return records_[it->second].rationale;
        }

        /// Appends and persists; an existing id is left untouched.
        bool put(RationaleRecord r)
        {
            if (r.rationale.empty())
                throw Error(ErrorCode::format_error, "empty rationale for '" + r.instance_id + "'");
            std::lock_guard lock(mutex_);
            if (index_.count(r.instance_id))
                return false;
            if (!path_.empty())
            {
                std::ofstream out(path_, std::ios::app);
                out << r.instance_id << '\t' << r.generator_backend_id << '\t' << base64_encode(r.rationale) << '\n';
                if (!out)
                    throw Error(ErrorCode::format_error, "cannot append to '" + path_ + "'");
            }
            index_[r.instance_id] = records_.size();
            records_.push_back(std::move(r));
            return true;
        }

        std::size_t size() const
        {
            std::lock_guard lock(mutex_);
            return records_.size();
        }

        std::vector<RationaleRecord> records() const
        {
            std::lock_guard lock(mutex_);
            return records_;
        }

        std::map<std::string, std::string> as_map() const
        {
            std::lock_guard lock(mutex_);
            std::map<std::string, std::string> out;
            for (const auto& r : records_)
                out[r.instance_id] = r.rationale;
            return out;
        }

    private:
        std::string path_;
        mutable std::mutex mutex_;
        std::vector<RationaleRecord> records_;
        std::map<std::string, std::size_t> index_;
    };


    namespace detail
    {
        inline std::string spans_phrase(const TaskSpec& spec, const std::vector<Span>& spans)
        {
            std::string out;
            for (const auto& s : spans)
                out += (out.empty() ? "" : "; ") + s.surface + " (" + spec.describe(s.label) + ")";
            return out.empty() ? "none" : out;
        }
    } // namespace detail

    /// Plain-language statement of an instance's gold annotation, used as the
    /// OUTPUT a rationale has to justify.
    inline std::string describe_gold(const TaskSpec& spec, const TaskInstance& t)
    {
        using detail::gold_of;
        switch (spec.kind)
        {
        case TaskKind::sentiment:
            return detail::label_word_for(spec, spec.labels.at(gold_of<ClassPayload>(t).index));
        case TaskKind::nli: return spec.labels.at(gold_of<ClassPayload>(t).index);
        case TaskKind::commonsense:
        {
            auto i = gold_of<ClassPayload>(t).index;
            return option_marker(i, OptionStyle::alphabetic) + " " + t.options.at(i);
        }
        case TaskKind::qa: return render_qa_answer(gold_of<QaPayload>(t).answer);
        case TaskKind::ner: return "entities: " + detail::spans_phrase(spec, gold_of<SpanPayload>(t).spans);
        case TaskKind::relation_extraction:
        {
            const auto& p = gold_of<RelationPayload>(t);
            std::string rels;
            for (const auto& r : p.triples)
                rels += (rels.empty() ? "" : "; ") + p.entities.at(r.head).surface + " " + r.relation + " "
                        + p.entities.at(r.tail).surface;
            return "entities: " + detail::spans_phrase(spec, p.entities) + "\nrelations: "
                   + (rels.empty() ? "none" : rels);
        }
        case TaskKind::event_extraction:
        {
            std::string out;
            for (const auto& e : gold_of<EventPayload>(t).events)
            {
                out += (out.empty() ? "" : "\n") + e.type + " event triggered by '" + e.trigger.surface + "'";
                for (const auto& [role, s] : e.arguments)
                    out += "; " + role + ": " + s.surface;
            }
            return out.empty() ? "no events" : out;
        }
        case TaskKind::pos:
        {
            auto words       = instance_words(t);
            const auto& tags = gold_of<TagPayload>(t).tags;
            std::string out;
            for (std::size_t i = 0; i < words.size() && i < tags.size(); ++i)
                out += (i ? " " : "") + words[i].surface + "/" + tags[i];
            return out;
        }
        case TaskKind::dependency:
        {
            auto words = instance_words(t);
            std::string out;
            for (const auto& a : gold_of<ArcPayload>(t).arcs)
            {
                auto head = a.head == 0 ? std::string("ROOT") : words.at(a.head - 1).surface;
                out += (out.empty() ? "" : "; ") + head + " -> " + words.at(a.dependent - 1).surface + " ("
                       + a.relation + ")";
            }
            return out;
        }
        case TaskKind::srl:
        {
            const auto& p = gold_of<SrlPayload>(t);
            std::string out = "sense: " + t.options.at(p.sense);
            for (const auto& [role, s] : p.arguments)
                out += "; " + spec.describe(role) + ": " + s.surface;
            return out;
        }
        }
        return {};
    }

    namespace detail
    {
        /// The instance as one self-contained INPUT block, for prompts that
        /// only have an {input} slot.
        inline TaskInstance flat_view(const TaskInstance& t, TaskKind kind)
        {
            switch (kind)
            {
            case TaskKind::nli:
                return with_text(t, "Premise: " + t.premise.value_or(t.text)
                                        + "\nHypothesis: " + t.hypothesis.value_or(""));
            case TaskKind::commonsense:
                return with_text(t, t.text + "\nOptions: " + render_options(t.options, OptionStyle::alphabetic));
            case TaskKind::qa:
                return with_text(t, render_indexed_sentences(text::split_sentences(t.text))
                                        + "\nQuestion: " + t.question.value_or(""));
            default: return t;
            }
        }
    } // namespace detail

    /// Training instances as demonstrations whose label is the gold statement.
    inline std::vector<Demonstration> training_demonstrations(const TaskSpec& spec,
                                                              const std::vector<TaskInstance>& train)
    {
        std::vector<Demonstration> out;
        out.reserve(train.size());
        for (const auto& t : train)
            out.push_back({detail::flat_view(t, spec.kind), describe_gold(spec, t), {}, {}});
        return out;
    }

    struct RationaleOptions
    {
        TokenBudget budget;
        std::size_t workers           = 1;
        std::size_t max_output_tokens = 512;
        std::string task              = "rationale";
        CallLedger* ledger            = nullptr;
    };

    struct RationaleSummary
    {
        std::size_t generated = 0;
        std::size_t skipped   = 0; // already in the store
        std::size_t failed    = 0;
        std::vector<std::string> failures;
    };

    /// One call per demonstration not yet in `store`. Each rationale is
    /// persisted as soon as its batch returns, so an interrupted pass resumes
    /// where it stopped. Failed calls are counted and reported, not retried.
    inline RationaleSummary generate_rationales(const std::vector<Demonstration>& train, Backend& backend,
                                                const PromptTemplate& tmpl, RationaleStore& store,
                                                const RationaleOptions& opts = {})
    {
        RationaleSummary summary;
        std::vector<const Demonstration*> pending;
        for (const auto& d : train)
        {
            if (store.contains(d.instance.id))
                ++summary.skipped;
            else
                pending.push_back(&d);
        }
        auto chunk = std::max<std::size_t>(1, opts.workers);
        for (std::size_t at = 0; at < pending.size(); at += chunk)
        {
            std::vector<CompletionRequest> reqs;
            for (std::size_t i = at; i < std::min(pending.size(), at + chunk); ++i)
            {
                const auto& d = *pending[i];
                AssembleOptions ao{false, {{"output", d.rendered_label}}, OptionStyle::alphabetic};
                reqs.push_back({assemble_prompt(tmpl, {}, d.instance, opts.budget, ao).text, 0.0,
                                opts.max_output_tokens, RequestTag{opts.task, d.instance.id, step::rationale}});
            }
            auto results = try_complete_batch(backend, reqs, opts.workers);
            std::vector<LedgerEntry> entries;
            for (std::size_t i = 0; i < results.size(); ++i)
            {
                const auto& id = reqs[i].tag.instance_id;
                auto& r        = results[i];
                if (r.error)
                {
                    ++summary.failed;
                    try
                    {
                        std::rethrow_exception(r.error);
                    }
                    catch (const std::exception& e)
                    {
                        summary.failures.push_back(id + ": " + e.what());
                    }
                    continue;
                }
                bool ok = !text::trim(r.response->text).empty();
                entries.push_back({id, step::rationale, "", step::rationale, reqs[i].tag, r.response->backend_id,
                                   r.response->cached, ok ? Fidelity::exact : Fidelity::rejected, r.response->text});
                if (!ok)
                {
                    ++summary.failed;
                    summary.failures.push_back(id + ": empty rationale");
                    continue;
                }
                store.put({id, r.response->text, r.response->backend_id});
                ++summary.generated;
            }
            if (opts.ledger)
                opts.ledger->append(std::move(entries));
        }
        return summary;
    }

    //=== self-verification ===//
    namespace detail
    {
        /// Runs one yes/no prompt set per unit; true where the valid answers
        /// hold a "no" majority.
        inline std::vector<bool> rejected_units(const TaskInstance& inst, const PipelineContext& ctx,
                                                const std::vector<Unit>& units, Prediction& pred)
        {
            std::vector<VoteTally<std::string>> tallies(units.size());
            StepOptions so{ctx.cfg.n_prompts, false, ctx.cfg.temperature};
            run_step(ctx, inst, step::verify, units, {}, so,
                     [&](std::size_t u, const std::string& o) { return binary_vote(tallies[u], o); }, pred);
            std::vector<bool> out;
            for (std::size_t u = 0; u < units.size(); ++u)
            {
                pred.unit_votes[units[u].key] = yes_no_counts(tallies[u]);
                out.push_back(tallies[u].has_majority("no"));
            }
            return out;
        }

        inline Unit verify_unit(std::string key, TaskInstance view, std::string question)
        {
            return {std::move(key), std::move(view), {{"ask", std::move(question)}}, {}};
        }

        inline std::optional<QaAnswer> qa_answer_from_key(const TaskInstance& inst, const std::string& key)
        {
            if (key == "unanswerable")
                return std::nullopt;
            auto close = key.find(") ");
            if (key.empty() || key[0] != '(' || close == std::string::npos)
                return std::nullopt;
            auto idx       = static_cast<std::size_t>(std::stoul(key.substr(1, close - 1)));
            auto sentences = text::split_sentences(inst.text);
            if (idx == 0 || idx > sentences.size())
                return std::nullopt;
            auto sentence = text::normalize_ws(sentences[idx - 1]);
            auto needle   = key.substr(close + 2);
            auto pos      = text::lower(sentence).find(needle);
            if (pos == std::string::npos)
                return std::nullopt;
            return QaAnswer{idx, sentence.substr(pos, needle.size())};
        }

        inline Prediction verify_classification(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            std::string winner, shown;
            std::function<bool(const std::string&, const std::string&)> order;
            switch (spec.kind)
            {
            case TaskKind::sentiment:
            case TaskKind::nli:
                winner = shown = spec.labels.at(std::get<ClassPayload>(pred.payload).index);
                order          = ListOrder{spec.labels};
                break;
            case TaskKind::commonsense:
            {
                auto i = std::get<ClassPayload>(pred.payload).index;
                winner = inst.options.at(i);
                shown  = option_marker(i, OptionStyle::alphabetic) + " " + winner;
                order  = ListOrder{inst.options};
                break;
            }
            case TaskKind::qa:
            {
                const auto& a = std::get<QaPayload>(pred.payload).answer;
                winner        = qa_key(a);
                shown         = render_qa_answer(a);
                order         = std::less<std::string>{};
                break;
            }
            default: return pred;
            }
            auto question = spec.kind == TaskKind::sentiment ? "Is the sentiment of the INPUT " + quote(shown) + "?"
                            : spec.kind == TaskKind::nli
                                ? "Is the relation between the premise and the hypothesis " + quote(shown) + "?"
                                : "Is " + quote(shown) + " the correct answer to the question?";
            std::vector<Unit> units{verify_unit("label", flat_view(inst, spec.kind), question)};
            if (!rejected_units(inst, ctx, units, pred).front())
                return pred;

            VoteTally<std::string> tally;
            tally.counts = pred.votes;
            auto next    = runner_up(tally, winner, order);
            if (!next)
            {
                pred.diagnostics.push_back("verification rejected " + quote(shown) + "; no runner-up, label stands");
                return pred;
            }
            pred.diagnostics.push_back("verification rejected " + quote(shown) + "; fell back to " + quote(*next));
            switch (spec.kind)
            {
            case TaskKind::sentiment:
            case TaskKind::nli: pred.payload = ClassPayload{spec.label_index(*next)}; break;
            case TaskKind::commonsense:
                pred.payload = ClassPayload{static_cast<std::size_t>(
                    std::find(inst.options.begin(), inst.options.end(), *next) - inst.options.begin())};
                break;
            default: pred.payload = QaPayload{qa_answer_from_key(inst, *next)}; break;
            }
            return pred;
        }

        inline Prediction verify_pos(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            auto& tags       = std::get<TagPayload>(pred.payload).tags;
            auto words       = instance_words(inst);
            std::vector<Unit> units;
            std::vector<std::size_t> word_of;
            for (std::size_t i = 0; i < words.size() && i < tags.size(); ++i)
            {
                if (tags[i] == "_")
                    continue;
                units.push_back(verify_unit("w" + std::to_string(i + 1) + ":" + tags[i],
                                            marked(inst, {word_span(inst, words[i])}, spec.markers),
                                            "Is the part-of-speech tag of the word " + quote(words[i].surface)
                                                + " marked in the INPUT " + quote(tags[i]) + "?"));
                word_of.push_back(i);
            }
            auto rejected = rejected_units(inst, ctx, units, pred);
            for (std::size_t u = 0; u < units.size(); ++u)
            {
                if (!rejected[u])
                    continue;
                auto i = word_of[u];
                VoteTally<std::string> tally;
                if (auto it = pred.unit_votes.find("w" + std::to_string(i + 1)); it != pred.unit_votes.end())
                    tally.counts = it->second;
                if (auto next = runner_up(tally, tags[i], ListOrder{spec.labels}))
                    tags[i] = *next;
            }
            return pred;
        }

        inline std::string entity_question(const TaskSpec& spec, const Span& s)
        {
            return "Is the marked " + quote(s.surface) + " a " + spec.describe(s.label) + " entity?";
        }

        inline std::vector<Span> verify_spans(const TaskInstance& inst, const PipelineContext& ctx,
                                              const std::vector<Span>& spans, Prediction& pred,
                                              std::vector<std::size_t>* kept_index = nullptr)
        {
            const auto& spec = ctx.cfg.task;
            std::vector<Unit> units;
            for (const auto& s : spans)
                units.push_back(verify_unit("span:" + span_key(s), marked(inst, {s}, spec.markers),
                                            entity_question(spec, s)));
            auto rejected = rejected_units(inst, ctx, units, pred);
            std::vector<Span> out;
            for (std::size_t i = 0; i < spans.size(); ++i)
                if (!rejected[i])
                {
                    out.push_back(spans[i]);
                    if (kept_index)
                        kept_index->push_back(i);
                }
            return out;
        }

        inline Prediction verify_relations(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            auto& p          = std::get<RelationPayload>(pred.payload);
            std::vector<std::size_t> kept;
            auto entities = verify_spans(inst, ctx, p.entities, pred, &kept);
            std::map<std::size_t, std::size_t> remap;
            for (std::size_t i = 0; i < kept.size(); ++i)
                remap[kept[i]] = i;

            std::vector<Triple> candidates;
            std::vector<Unit> units;
            for (const auto& t : p.triples)
            {
                if (!remap.count(t.head) || !remap.count(t.tail))
                    continue; // removed with its entity
                Triple r{remap[t.head], remap[t.tail], t.relation};
                const auto& a = entities[r.head];
                const auto& b = entities[r.tail];
                units.push_back(verify_unit("triple:" + std::to_string(r.head) + "-" + std::to_string(r.tail) + "/"
                                                + r.relation,
                                            marked(inst, {a, b}, spec.markers),
                                            relation_question(a, b, r.relation, spec)));
                candidates.push_back(std::move(r));
            }
            auto rejected = rejected_units(inst, ctx, units, pred);
            RelationPayload out{std::move(entities), {}};
            for (std::size_t i = 0; i < candidates.size(); ++i)
                if (!rejected[i])
                    out.triples.push_back(candidates[i]);
            pred.payload = std::move(out);
            return pred;
        }

        inline Prediction verify_events(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            auto events      = std::get<EventPayload>(pred.payload).events;
            std::vector<Unit> units;
            for (std::size_t e = 0; e < events.size(); ++e)
                units.push_back(verify_unit("event" + std::to_string(e) + ":" + events[e].type,
                                            marked(inst, {events[e].trigger}, spec.markers),
                                            "Is the marked " + quote(events[e].trigger.surface) + " the trigger of a "
                                                + quote(events[e].type) + " event?"));
            auto rejected = rejected_units(inst, ctx, units, pred);
            EventPayload out;
            for (std::size_t e = 0; e < events.size(); ++e)
                if (!rejected[e])
                    out.events.push_back(events[e]);

            std::vector<Unit> args;
            std::vector<std::pair<std::size_t, std::string>> arg_of;
            for (std::size_t e = 0; e < out.events.size(); ++e)
            {
                const auto& ev = out.events[e];
                for (const auto& [role, s] : ev.arguments)
                {
                    args.push_back(verify_unit("arg" + std::to_string(e) + ":" + ev.type + "/" + role,
                                               marked(inst, {ev.trigger}, spec.markers),
                                               "Is " + quote(s.surface) + " the " + spec.describe(role) + " of the "
                                                   + ev.type + " event triggered by " + quote(ev.trigger.surface)
                                                   + "?"));
                    arg_of.emplace_back(e, role);
                }
            }
            auto arg_rejected = rejected_units(inst, ctx, args, pred);
            for (std::size_t u = 0; u < args.size(); ++u)
                if (arg_rejected[u])
                    out.events[arg_of[u].first].arguments.erase(arg_of[u].second);
            pred.payload = std::move(out);
            return pred;
        }

        inline Prediction verify_arcs(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            auto words       = instance_words(inst);
            const auto arcs  = std::get<ArcPayload>(pred.payload).arcs;
            std::vector<Unit> units;
            std::vector<std::size_t> arc_of;
            for (std::size_t i = 0; i < arcs.size(); ++i)
            {
                const auto& a = arcs[i];
                if (a.head == 0 || a.head > words.size() || a.dependent == 0 || a.dependent > words.size())
                    continue;
                const auto& hw = words[a.head - 1];
                const auto& dw = words[a.dependent - 1];
                units.push_back(verify_unit(
                    "arc:" + std::to_string(a.head) + "-" + std::to_string(a.dependent),
                    marked(inst, {word_span(inst, hw), word_span(inst, dw)}, spec.markers),
                    arc_question(hw.surface, dw.surface, a.relation == "dep" ? "dependent" : spec.describe(a.relation))));
                arc_of.push_back(i);
            }
            auto rejected = rejected_units(inst, ctx, units, pred);
            std::set<std::size_t> drop;
            for (std::size_t u = 0; u < units.size(); ++u)
                if (rejected[u])
                    drop.insert(arc_of[u]);
            ArcPayload out;
            for (std::size_t i = 0; i < arcs.size(); ++i)
                if (!drop.count(i))
                    out.arcs.push_back(arcs[i]);
            pred.payload = std::move(out);
            return pred;
        }

        inline Prediction verify_srl(const TaskInstance& inst, Prediction pred, const PipelineContext& ctx)
        {
            const auto& spec = ctx.cfg.task;
            auto& p          = std::get<SrlPayload>(pred.payload);
            auto predicate   = instance_words(inst).at(*inst.predicate).surface;
            auto view        = predicate_view(inst, spec.markers);
            std::vector<Unit> units;
            std::vector<std::string> roles;
            for (const auto& [role, s] : p.arguments)
            {
                units.push_back(verify_unit("arg:" + role, view,
                                            "Is " + quote(s.surface) + " the argument expressing "
                                                + spec.describe(role) + " for the predicate " + quote(predicate)
                                                + "?"));
                roles.push_back(role);
            }
            auto rejected = rejected_units(inst, ctx, units, pred);
            for (std::size_t u = 0; u < units.size(); ++u)
                if (rejected[u])
                    p.arguments.erase(roles[u]);
            return pred;
        }
    } // namespace detail

    /// Second pass over a prediction. Extraction units answered "no" by the
    /// majority are removed and nothing is added; a rejected classification
    /// label falls back to the runner-up of its vote.
    inline Prediction self_verify(const TaskInstance& inst, const Prediction& prediction, const PipelineContext& ctx)
    {
        if (prediction.kind != ctx.cfg.task.kind || !payload_matches(ctx.cfg.task.kind, prediction.payload))
            throw Error(ErrorCode::config_error, "prediction does not belong to the configured task");
        switch (ctx.cfg.task.kind)
        {
        case TaskKind::sentiment:
        case TaskKind::nli:
        case TaskKind::commonsense:
        case TaskKind::qa: return detail::verify_classification(inst, prediction, ctx);
        case TaskKind::pos: return detail::verify_pos(inst, prediction, ctx);
        case TaskKind::ner:
        {
            auto pred    = prediction;
            pred.payload = SpanPayload{detail::verify_spans(inst, ctx, std::get<SpanPayload>(pred.payload).spans, pred)};
            return pred;
        }
        case TaskKind::relation_extraction: return detail::verify_relations(inst, prediction, ctx);
        case TaskKind::event_extraction: return detail::verify_events(inst, prediction, ctx);
        case TaskKind::dependency: return detail::verify_arcs(inst, prediction, ctx);
        case TaskKind::srl: return detail::verify_srl(inst, prediction, ctx);
        }
        return prediction;
    }

    //=== paraphrase voting ===//
    using PipelineFn = std::function<Prediction(const TaskInstance&, const PipelineContext&)>;

    namespace detail
    {
        /// The field a paraphrase rewrites; the rest of the instance is kept
        /// so answers stay comparable across versions.
        inline std::string& paraphrase_target(TaskKind kind, TaskInstance& t)
        {
            switch (kind)
            {
            case TaskKind::nli:
                if (!t.hypothesis)
                    t.hypothesis.emplace();
                return *t.hypothesis;
            case TaskKind::qa:
                if (!t.question)
                    t.question.emplace();
                return *t.question;
            default: return t.text;
            }
        }

        inline std::string comparable(std::string_view s)
        {
            return text::lower(text::normalize_ws(s));
        }
    } // namespace detail

    /// Runs `pipeline` on the instance and on up to K paraphrases of it, then
    /// votes over the resulting payloads. Ties go to the original's payload,
    /// then to the earliest version.
    inline Prediction paraphrase_vote(const TaskInstance& inst, const PipelineContext& ctx,
                                      const PipelineFn& pipeline = run_task)
    {
        const auto& cfg = ctx.cfg;
        if (!is_sentence_level(cfg.task.kind))
            throw Error(ErrorCode::config_error, std::string("paraphrase voting does not apply to ")
                                                     + to_string(cfg.task.kind));
        auto original = pipeline(inst, ctx);
        if (cfg.paraphrase_k == 0)
            return original;

        auto copy        = inst;
        auto source      = detail::paraphrase_target(cfg.task.kind, copy);
        auto tmpl        = ctx.templates.get(step::paraphrase);
        auto query       = detail::with_text(inst, source);
        auto prompt_text = assemble_prompt(tmpl, {}, query, cfg.budget).text;
        std::vector<CompletionRequest> reqs;
        for (std::size_t j = 1; j <= cfg.paraphrase_k; ++j)
            reqs.push_back({prompt_text, cfg.paraphrase_temperature, cfg.max_output_tokens,
                            RequestTag{to_string(cfg.task.kind), inst.id,
                                       std::string(step::paraphrase) + "/" + std::to_string(j)}});
        auto responses = complete_batch(ctx.backend, reqs, cfg.workers);

        std::vector<Prediction> runs{original};
        std::vector<std::string> diagnostics;
        std::vector<LedgerEntry> entries;
        for (std::size_t j = 0; j < responses.size(); ++j)
        {
            auto rewritten = std::string(text::trim(responses[j].text));
            bool rejected  = rewritten.empty() || detail::comparable(rewritten) == detail::comparable(source);
            entries.push_back({inst.id, step::paraphrase, std::to_string(j + 1), reqs[j].tag.prompt_id, reqs[j].tag,
                               responses[j].backend_id, responses[j].cached,
                               rejected ? Fidelity::rejected : Fidelity::exact, responses[j].text});
            if (rejected)
            {
                diagnostics.push_back(std::string(to_string(ErrorCode::paraphrase_rejected)) + ": paraphrase "
                                      + std::to_string(j + 1) + (rewritten.empty() ? " is empty" : " repeats the input"));
                continue;
            }
            auto variant = inst;
            variant.id   = inst.id + "#para" + std::to_string(j + 1);
            detail::paraphrase_target(cfg.task.kind, variant) = rewritten;
            if (ctx.ledger)
                ctx.ledger->append(std::exchange(entries, {}));
            try
            {
                runs.push_back(pipeline(variant, ctx));
            }
            catch (const Error& e)
            {
                if (e.code() != ErrorCode::all_abstained)
                    throw;
                diagnostics.push_back("paraphrase " + std::to_string(j + 1) + ": " + e.what());
            }
        }
        if (ctx.ledger)
            ctx.ledger->append(std::move(entries));

        std::vector<std::string> keys;
        std::map<std::string, int> counts;
        for (const auto& r : runs)
        {
            keys.push_back(payload_key(cfg.task, inst, r.payload));
            ++counts[keys.back()];
        }
        int best = 0;
        for (const auto& [_, c] : counts)
            best = std::max(best, c);
        std::size_t pick = 0;
        if (counts[keys[0]] != best)
            while (counts[keys[pick]] != best)
                ++pick;

        auto result = runs[pick];
        for (auto& d : diagnostics)
            result.diagnostics.push_back(std::move(d));
        result.unit_votes["paraphrase"] = counts;
        if (pick != 0)
            result.diagnostics.push_back("paraphrase vote overrode the original prediction");
        return result;
    }

    /// Full prediction for one instance: the task pipeline, optionally wrapped
    /// in paraphrase voting, optionally followed by verification.
    inline Prediction predict(const TaskInstance& inst, const PipelineContext& ctx)
    {
        auto base = ctx.cfg.paraphrase_k > 0 ? paraphrase_vote(inst, ctx) : run_task(inst, ctx);
        return ctx.cfg.self_verify ? self_verify(inst, base, ctx) : base;
    }
} // namespace promptforge

#endif // PROMPTFORGE_STRATEGIES_HPP_INCLUDED
