#ifndef PROMPTFORGE_CLI_HPP_INCLUDED
#define PROMPTFORGE_CLI_HPP_INCLUDED

// Command implementations behind tools/promptforge. Each command takes a
// parsed RunConfig plus output streams and returns the process exit code:
//   0 ok, 2 backend failure, 3 data mismatch, 4 refused without --yes.
// Other errors (bad config, unreadable files) propagate as Error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dataset.hpp"
#include "eval.hpp"
#include "http_backend.hpp"
#include "io.hpp"
#include "strategies.hpp"

namespace promptforge::cli
{
    namespace fs = std::filesystem;

    enum ExitCode : int
    {
        exit_ok       = 0,
        exit_backend  = 2,
        exit_mismatch = 3,
        exit_guard    = 4,
    };

    struct DataRef
    {
        std::string path;
        DataFormat format = DataFormat::jsonl;
        ConllColumns columns;
    };

    struct BackendSettings
    {
        std::string kind = "scripted"; // scripted | live
        std::string script;
        std::string endpoint;
        std::string model;
        std::string id;
        std::size_t max_in_flight       = 4;
        std::size_t requests_per_minute = 0; // 0 = unlimited
        RetryPolicy retry;
    };

    /// Everything a run depends on. Relative paths are resolved against the
    /// directory of the config file.
    struct RunConfig
    {
        PipelineConfig pipeline;
        std::optional<DataRef> train;
        std::optional<DataRef> test;
        std::map<std::string, std::string> templates; // step -> template file
        std::string pool_embeddings;
        std::string query_embeddings;
        BackendSettings backend;
        std::string cache;
        std::string rationales;
        std::string output_dir = "out";
        std::uint64_t seed     = 0;

        const TaskSpec& task() const noexcept
        {
            return pipeline.task;
        }

        /// Every referenced input file has to exist; outputs may not yet.
        void validate() const
        {
            pipeline.validate();
            auto need = [](const std::string& p, const char* what) {
                if (!p.empty() && !fs::exists(p))
                    throw Error(ErrorCode::config_error, std::string(what) + " '" + p + "' does not exist");
            };
            if (train)
                need(train->path, "train dataset");
            if (test)
                need(test->path, "test dataset");
            for (const auto& [_, p] : templates)
                need(p, "template");
            need(pool_embeddings, "embedding store");
            need(query_embeddings, "query embedding store");
            if (backend.kind == "scripted")
                need(backend.script, "backend script");
            else if (backend.kind != "live")
                throw Error(ErrorCode::config_error, "backend kind must be scripted or live");
            if (pipeline.retrieval.strategy != RetrievalStrategy::random && train && pool_embeddings.empty())
                throw Error(ErrorCode::config_error, "kNN retrieval needs embeddings.pool");
        }
    };

    namespace detail
    {
        inline std::string resolve(const fs::path& base, const std::string& p)
        {
            if (p.empty())
                return p;
            fs::path path(p);
            return path.is_absolute() ? p : (base / path).lexically_normal().string();
        }

        inline void apply_task_overrides(TaskSpec& spec, const json& j)
        {
            if (j.contains("labels"))
                spec.labels = j.at("labels").get<std::vector<std::string>>();
            if (j.contains("descriptions"))
                spec.descriptions = j.at("descriptions").get<std::map<std::string, std::string>>();
            if (j.contains("relations"))
                spec.relations = j.at("relations").get<std::vector<std::string>>();
            if (j.contains("event_roles"))
                spec.event_roles = j.at("event_roles").get<std::map<std::string, std::vector<std::string>>>();
            if (j.contains("label_words"))
            {
                spec.label_words.clear();
                for (const auto& [word, label] : j.at("label_words").items())
                    spec.label_words.emplace_back(word, label.get<std::string>());
            }
            if (j.contains("markers"))
                spec.markers = {j.at("markers").at(0).get<std::string>(), j.at("markers").at(1).get<std::string>()};
            if (j.contains("option_style"))
                spec.option_style =
                    j.at("option_style").get<std::string>() == "numeric" ? OptionStyle::numeric : OptionStyle::alphabetic;
            if (j.contains("sentinel"))
                spec.sentinel = j.at("sentinel").get<std::string>();
            if (j.contains("root_label"))
                spec.root_label = j.at("root_label").get<std::string>();
        }

        inline DataRef data_ref(const json& j, const fs::path& base)
        {
            DataRef d;
            if (j.is_string())
            {
                d.path = resolve(base, j.get<std::string>());
                return d;
            }
            d.path   = resolve(base, j.at("path").get<std::string>());
            d.format = parse_data_format(j.value("format", std::string("jsonl")));
            if (j.contains("columns"))
            {
                const auto& c = j.at("columns");
                auto opt      = [&](const char* name) -> std::optional<std::size_t> {
                    if (!c.contains(name))
                        return std::nullopt;
                    return c.at(name).get<std::size_t>();
                };
                d.columns.token      = c.value("token", std::size_t{0});
                d.columns.tag        = opt("tag");
                d.columns.pos        = opt("pos");
                d.columns.head       = opt("head");
                d.columns.relation   = opt("relation");
                d.columns.strict_bio = c.value("strict_bio", true);
            }
            return d;
        }
    } // namespace detail

    inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir)
    {
        using detail::resolve;
        RunConfig rc;
        try
        {
            auto kind        = parse_task_kind(j.at("task").get<std::string>());
            rc.pipeline.task = TaskSpec::defaults(kind);
            if (j.contains("task_spec"))
                detail::apply_task_overrides(rc.pipeline.task, j.at("task_spec"));
            if (j.contains("train"))
                rc.train = detail::data_ref(j.at("train"), base_dir);
            if (j.contains("test"))
                rc.test = detail::data_ref(j.at("test"), base_dir);
            if (j.contains("templates"))
                for (const auto& [step, p] : j.at("templates").items())
                    rc.templates[step] = resolve(base_dir, p.get<std::string>());
            if (j.contains("embeddings"))
            {
                const auto& e       = j.at("embeddings");
                rc.pool_embeddings  = resolve(base_dir, e.value("pool", std::string()));
                rc.query_embeddings = resolve(base_dir, e.value("queries", std::string()));
            }
            rc.seed = j.value("seed", std::uint64_t{0});
            if (j.contains("pipeline"))
            {
                const auto& p = j.at("pipeline");
                auto& pc      = rc.pipeline;
                pc.n_prompts  = p.value("n_prompts", pc.n_prompts);
                pc.retrieval.k = p.value("k", pc.retrieval.k);
                if (p.contains("strategy"))
                    pc.retrieval.strategy = parse_strategy(p.at("strategy").get<std::string>());
                pc.retrieval.exclude_self = p.value("exclude_self", pc.retrieval.exclude_self);
                pc.with_rationale         = p.value("with_rationale", pc.with_rationale);
                pc.self_verify            = p.value("self_verify", pc.self_verify);
                pc.paraphrase_k           = p.value("paraphrase_k", pc.paraphrase_k);
                pc.budget.limit           = p.value("token_budget", pc.budget.limit);
                pc.temperature            = p.value("temperature", pc.temperature);
                pc.paraphrase_temperature = p.value("paraphrase_temperature", pc.paraphrase_temperature);
                pc.max_output_tokens      = p.value("max_output_tokens", pc.max_output_tokens);
                pc.workers                = p.value("workers", pc.workers);
            }
            rc.pipeline.retrieval.seed = rc.seed;
            if (j.contains("backend"))
            {
                const auto& b          = j.at("backend");
                auto& bs               = rc.backend;
                bs.kind                = b.value("kind", bs.kind);
                bs.script              = resolve(base_dir, b.value("script", std::string()));
                bs.endpoint            = b.value("endpoint", bs.endpoint);
                bs.model               = b.value("model", bs.model);
                bs.id                  = b.value("id", bs.id);
                bs.max_in_flight       = b.value("max_in_flight", bs.max_in_flight);
                bs.requests_per_minute = b.value("requests_per_minute", bs.requests_per_minute);
                if (b.contains("retry"))
                {
                    const auto& r         = b.at("retry");
                    bs.retry.max_attempts = r.value("max_attempts", bs.retry.max_attempts);
                    if (r.contains("base_delay_ms"))
                        bs.retry.base_delay = std::chrono::milliseconds(r.at("base_delay_ms").get<long>());
                    if (r.contains("max_delay_ms"))
                        bs.retry.max_delay = std::chrono::milliseconds(r.at("max_delay_ms").get<long>());
                }
            }
            rc.cache      = resolve(base_dir, j.value("cache", std::string()));
            rc.rationales = resolve(base_dir, j.value("rationales", std::string()));
            rc.output_dir = resolve(base_dir, j.value("output_dir", rc.output_dir));
        }
        catch (const json::exception& e)
        {
            throw Error(ErrorCode::config_error, e.what());
        }
        return rc;
    }

    /// `overrides` is merged over the file contents (RFC 7386 merge patch),
    /// which is how command-line flags replace config fields.
    inline RunConfig load_run_config(const std::string& path, const json& overrides = json::object())
    {
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorCode::config_error, "cannot open config '" + path + "'");
        json j;
        try
        {
            j = json::parse(in);
        }
        catch (const json::exception& e)
        {
            throw Error(ErrorCode::config_error, path + ": " + e.what());
        }
        j.merge_patch(overrides);
        return run_config_from_json(j, fs::absolute(path).parent_path());
    }

    /// The backend chain: cache over retries/rate limit over the raw backend.
    class BackendStack
    {
    public:
        explicit BackendStack(const RunConfig& rc)
        {
            const auto& bs = rc.backend;
            if (bs.kind == "scripted")
            {
                auto scripted = std::make_unique<ScriptedBackend>(bs.id.empty() ? "scripted" : bs.id);
                std::ifstream in(bs.script);
                if (!in)
                    throw Error(ErrorCode::config_error, "cannot open script '" + bs.script + "'");
                load_script(*scripted, in, bs.script);
                raw_ = std::move(scripted);
            }
            else
                raw_ = std::make_unique<HttpBackend>(
                    HttpBackendConfig{bs.endpoint, bs.model, api_key_from_env(), bs.id, std::chrono::seconds(60)});
            if (bs.requests_per_minute > 0)
                limiter_ = std::make_unique<RateLimiter>(bs.requests_per_minute, std::chrono::minutes(1), clock_);
            resilient_ = std::make_unique<ResilientBackend>(*raw_, bs.retry, bs.max_in_flight, clock_, limiter_.get());
            if (!rc.cache.empty())
            {
                cache_   = std::make_unique<ResponseCache>(rc.cache);
                caching_ = std::make_unique<CachingBackend>(*resilient_, *cache_);
            }
        }

        Backend& top() noexcept
        {
            return caching_ ? static_cast<Backend&>(*caching_) : *resilient_;
        }

    private:
        SteadyClock clock_;
        std::unique_ptr<Backend> raw_;
        std::unique_ptr<RateLimiter> limiter_;
        std::unique_ptr<ResilientBackend> resilient_;
        std::unique_ptr<ResponseCache> cache_;
        std::unique_ptr<CachingBackend> caching_;
    };

    namespace detail
    {
        inline bool is_backend_failure(ErrorCode c)
        {
            return c == ErrorCode::backend_unavailable || c == ErrorCode::auth_error || c == ErrorCode::transient
                   || c == ErrorCode::script_miss;
        }

        inline Dataset load(const DataRef& d, const TaskSpec& spec, Split split)
        {
            return load_dataset(d.path, spec, d.format, split, d.columns);
        }

        inline TemplateSet templates_of(const RunConfig& rc)
        {
            TemplateSet ts(rc.task().kind);
            for (const auto& [step, path] : rc.templates)
                ts.set(load_template(path, rc.task().kind, step));
            return ts;
        }

        inline void write_lines(const fs::path& path, const std::vector<json>& records)
        {
            std::ofstream out(path, std::ios::trunc);
            for (const auto& r : records)
                out << r.dump() << '\n';
            if (!out)
                throw Error(ErrorCode::format_error, "cannot write '" + path.string() + "'");
        }
    } // namespace detail

    inline int cmd_prepare_rationales(const RunConfig& rc, std::ostream& out, std::ostream& err)
    {
        rc.validate();
        if (!rc.train)
            throw Error(ErrorCode::config_error, "prepare-rationales needs a train dataset");
        if (rc.rationales.empty())
            throw Error(ErrorCode::config_error, "prepare-rationales needs a rationales path");
        auto train = detail::load(*rc.train, rc.task(), Split::train);
        BackendStack backends(rc);
        RationaleStore store(rc.rationales);
        RationaleOptions opts;
        opts.budget            = rc.pipeline.budget;
        opts.workers           = rc.pipeline.workers;
        opts.max_output_tokens = rc.pipeline.max_output_tokens;
        opts.task              = to_string(rc.task().kind);
        auto summary = generate_rationales(training_demonstrations(rc.task(), train.instances), backends.top(),
                                           detail::templates_of(rc).get(step::rationale), store, opts);
        out << "generated " << summary.generated << ", skipped " << summary.skipped << ", failed " << summary.failed
            << '\n';
        for (const auto& f : summary.failures)
            err << "rationale failed: " << f << '\n';
        return summary.failed ? exit_backend : exit_ok;
    }

    /// Writes predictions.jsonl and ledger.jsonl into the output directory.
    /// A failed instance gets a record with "error" and a null payload; a
    /// backend failure stops the run with exit 2 after writing what exists.
    inline int cmd_run(const RunConfig& rc, std::ostream& out, std::ostream& err)
    {
        rc.validate();
        if (!rc.test)
            throw Error(ErrorCode::config_error, "run needs a test dataset");
        const auto& spec = rc.task();
        auto test        = detail::load(*rc.test, spec, Split::test);

        DemoPool pool;
        if (rc.train)
            pool = DemoPool(detail::load(*rc.train, spec, Split::train).instances);
        std::optional<EmbeddingStore> pool_store, query_store;
        if (!rc.pool_embeddings.empty())
            pool.store = &pool_store.emplace(ingest_embeddings(rc.pool_embeddings));
        if (!rc.query_embeddings.empty())
            pool.query_store = &query_store.emplace(ingest_embeddings(rc.query_embeddings));
        if (rc.pipeline.with_rationale)
        {
            if (rc.rationales.empty())
                throw Error(ErrorCode::config_error, "with_rationale needs a rationales path");
            pool.rationales = RationaleStore(rc.rationales).as_map();
        }

        auto templates = detail::templates_of(rc);
        BackendStack backends(rc);
        CallLedger ledger;
        PipelineContext ctx{rc.pipeline, backends.top(), pool, templates, &ledger};

        std::vector<json> predictions;
        int code           = exit_ok;
        std::size_t failed = 0;
        for (const auto& inst : test.instances)
        {
            try
            {
                predictions.push_back(prediction_to_json(spec, inst, predict(inst, ctx)));
            }
            catch (const Error& e)
            {
                if (detail::is_backend_failure(e.code()))
                {
                    err << "backend failure on '" << inst.id << "': " << e.what() << '\n';
                    code = exit_backend;
                    break;
                }
                ++failed;
                predictions.push_back({{"id", inst.id}, {"task", to_string(spec.kind)}, {"payload", nullptr},
                                       {"error", e.what()}});
            }
        }

        fs::create_directories(rc.output_dir);
        detail::write_lines(fs::path(rc.output_dir) / "predictions.jsonl", predictions);
        std::vector<json> entries;
        for (const auto& e : ledger.entries())
            entries.push_back(ledger_entry_to_json(e));
        detail::write_lines(fs::path(rc.output_dir) / "ledger.jsonl", entries);
        out << predictions.size() << " predictions (" << failed << " failed), " << entries.size()
            << " backend calls, written to " << rc.output_dir << '\n';
        return code;
    }

    namespace detail
    {
        /// Stand-in for an instance whose prediction failed; scores as wrong.
        inline Payload failed_payload(const TaskSpec& spec, const TaskInstance& inst)
        {
            constexpr auto none = std::numeric_limits<std::size_t>::max();
            switch (spec.kind)
            {
            case TaskKind::sentiment:
            case TaskKind::nli:
            case TaskKind::commonsense: return ClassPayload{none};
            case TaskKind::qa: return QaPayload{QaAnswer{0, ""}};
            case TaskKind::ner: return SpanPayload{};
            case TaskKind::relation_extraction: return RelationPayload{};
            case TaskKind::event_extraction: return EventPayload{};
            case TaskKind::pos: return TagPayload{std::vector<std::string>(instance_words(inst).size(), "_")};
            case TaskKind::dependency: return ArcPayload{};
            case TaskKind::srl: return SrlPayload{none, {}};
            }
            return ClassPayload{none};
        }
    } // namespace detail

    inline json report_to_json(const MetricReport& r)
    {
        json j{{"metric", r.name}, {"value", r.value}};
        if (r.is_f1())
            j.update({{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"precision", r.precision}, {"recall", r.recall}});
        else
            j.update({{"correct", r.correct}, {"total", r.total}});
        return j;
    }

    /// Scores a predictions file against the test split. Prints a table and
    /// writes the same numbers to `json_path` when it is non-empty.
    inline int cmd_eval(const RunConfig& rc, const std::string& predictions_path, const std::string& json_path,
                        std::ostream& out, std::ostream& err)
    {
        if (!rc.test)
            throw Error(ErrorCode::config_error, "eval needs a test dataset");
        const auto& spec = rc.task();
        auto test        = detail::load(*rc.test, spec, Split::test);

        std::ifstream in(predictions_path);
        if (!in)
            throw Error(ErrorCode::format_error, "cannot open predictions '" + predictions_path + "'");
        std::map<std::string, Payload> predictions;
        std::size_t failed = 0, lineno = 0;
        std::string line;
        try
        {
            while (std::getline(in, line))
            {
                ++lineno;
                if (text::trim(line).empty())
                    continue;
                auto j  = json::parse(line);
                auto id = j.at("id").get<std::string>();
                auto g  = test.find(id);
                if (!g)
                {
                    err << "prediction id '" << id << "' is not in the dataset\n";
                    return exit_mismatch;
                }
                if (j.at("payload").is_null())
                {
                    ++failed;
                    predictions[id] = detail::failed_payload(spec, *g);
                }
                else
                    predictions[id] = payload_from_json(spec, *g, j.at("payload"));
            }
        }
        catch (const json::exception& e)
        {
            throw Error(ErrorCode::format_error, predictions_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        for (const auto& g : test.instances)
            if (!predictions.count(g.id))
            {
                err << "no prediction for id '" << g.id << "'\n";
                return exit_mismatch;
            }

        auto reports = evaluate(spec, test.instances, predictions);
        out << std::left << std::setw(18) << "metric" << std::right << std::setw(10) << "value" << "  support\n";
        json j{{"task", to_string(spec.kind)}, {"instances", test.instances.size()}, {"failed", failed},
               {"metrics", json::array()}};
        for (const auto& r : reports)
        {
            std::ostringstream support;
            if (r.is_f1())
                support << "tp=" << r.tp << " fp=" << r.fp << " fn=" << r.fn;
            else
                support << r.correct << "/" << r.total;
            out << std::left << std::setw(18) << r.name << std::right << std::setw(10) << std::fixed
                << std::setprecision(4) << r.value << "  " << support.str() << '\n';
            j["metrics"].push_back(report_to_json(r));
        }
        if (!json_path.empty())
        {
            std::ofstream jo(json_path, std::ios::trunc);
            jo << j.dump(2) << '\n';
        }
        return exit_ok;
    }

    /// Validates an embedding file. Format errors name the failing line.
    inline int cmd_ingest_embeddings(const std::string& path, std::ostream& out, std::ostream& err)
    {
        try
        {
            auto store     = ingest_embeddings(path);
            std::size_t nv = 0;
            for (const auto& [_, e] : store.entries())
                nv += e.vectors.size();
            out << "dim " << store.dim() << ", count " << store.size() << ", vectors " << nv << ", level "
                << (store.level() == EmbeddingLevel::sentence ? "sentence" : "token") << ", provider "
                << store.provider() << '\n';
            return exit_ok;
        }
        catch (const Error& e)
        {
            err << e.what() << '\n';
            return exit_backend;
        }
    }

    inline int cmd_cache_list(const std::string& path, std::ostream& out)
    {
        if (!fs::exists(path))
        {
            out << "entries 0, bytes 0\n";
            return exit_ok;
        }
        ResponseCache cache(path);
        out << "entries " << cache.size() << ", bytes " << fs::file_size(path) << '\n';
        return exit_ok;
    }

    inline int cmd_cache_clear(const std::string& path, bool confirmed, std::ostream& out, std::ostream& err)
    {
        if (!confirmed)
        {
            err << "refusing to clear '" << path << "' without --yes\n";
            return exit_guard;
        }
        std::size_t n = 0;
        if (fs::exists(path))
        {
            n = ResponseCache(path).size();
            fs::remove(path);
        }
        out << "cleared " << n << " entries\n";
        return exit_ok;
    }
} // namespace promptforge::cli

#endif // PROMPTFORGE_CLI_HPP_INCLUDED
