#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <iostream>

#include <CLI11.hpp>

#include <promptforge/cli.hpp>

namespace pf = promptforge;

namespace
{
    struct Flags
    {
        std::string config;
        std::optional<std::size_t> n_prompts, k, workers, paraphrase_k;
        std::optional<std::string> strategy, output_dir, cache, script;
        std::optional<std::uint64_t> seed;
        bool self_verify = false, with_rationale = false;
    };

    void add_config_flags(CLI::App* cmd, Flags& f)
    {
        cmd->add_option("-c,--config", f.config, "Run config file (JSON)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--n-prompts", f.n_prompts, "Prompts per input (N)");
        cmd->add_option("--k", f.k, "Demonstrations per prompt");
        cmd->add_option("--strategy", f.strategy, "random | knn_sentence | knn_token");
        cmd->add_option("--workers", f.workers, "Concurrent backend calls");
        cmd->add_option("--paraphrase-k", f.paraphrase_k, "Paraphrases per input");
        cmd->add_option("--seed", f.seed, "Seed for every random choice");
        cmd->add_option("--output-dir", f.output_dir, "Directory for run artifacts");
        cmd->add_option("--cache", f.cache, "Response cache file");
        cmd->add_option("--script", f.script, "Scripted backend file");
        cmd->add_flag("--self-verify", f.self_verify, "Verify predictions in a second pass");
        cmd->add_flag("--with-rationale", f.with_rationale, "Show rationales in demonstrations");
    }

    /// Flags become a merge patch over the config file. Paths given on the
    /// command line are relative to the working directory.
    pf::json overrides(const Flags& f)
    {
        namespace fs = std::filesystem;
        pf::json p   = pf::json::object();
        auto abs     = [](const std::string& s) { return fs::absolute(s).string(); };
        if (f.n_prompts)
            p["pipeline"]["n_prompts"] = *f.n_prompts;
        if (f.k)
            p["pipeline"]["k"] = *f.k;
        if (f.strategy)
            p["pipeline"]["strategy"] = *f.strategy;
        if (f.workers)
            p["pipeline"]["workers"] = *f.workers;
        if (f.paraphrase_k)
            p["pipeline"]["paraphrase_k"] = *f.paraphrase_k;
        if (f.self_verify)
            p["pipeline"]["self_verify"] = true;
        if (f.with_rationale)
            p["pipeline"]["with_rationale"] = true;
        if (f.seed)
            p["seed"] = *f.seed;
        if (f.output_dir)
            p["output_dir"] = abs(*f.output_dir);
        if (f.cache)
            p["cache"] = abs(*f.cache);
        if (f.script)
            p["backend"]["script"] = abs(*f.script);
        return p;
    }
} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Prompt pipelines for NLP tasks over a completion backend"};
    app.require_subcommand(1);

    Flags prep_flags, run_flags, eval_flags;
    auto* prep = app.add_subcommand("prepare-rationales", "Generate rationales for every training example");
    add_config_flags(prep, prep_flags);

    auto* run = app.add_subcommand("run", "Predict the test split; writes predictions.jsonl and ledger.jsonl");
    add_config_flags(run, run_flags);

    std::string predictions, json_out;
    auto* eval = app.add_subcommand("eval", "Score predictions against the test split");
    add_config_flags(eval, eval_flags);
    eval->add_option("-p,--predictions", predictions, "Predictions file")->required();
    eval->add_option("--json", json_out, "Also write the report as JSON");

    std::string embeddings;
    auto* ingest = app.add_subcommand("ingest-embeddings", "Validate an embedding file and print its shape");
    ingest->add_option("path", embeddings, "Embedding file")->required();

    std::string cache_path;
    bool yes   = false;
    auto* cache = app.add_subcommand("cache", "Inspect or clear a response cache");
    cache->require_subcommand(1);
    auto* cache_list = cache->add_subcommand("list", "Show entry count and size");
    cache_list->add_option("path", cache_path, "Cache file")->required();
    auto* cache_clear = cache->add_subcommand("clear", "Delete the cache file");
    cache_clear->add_option("path", cache_path, "Cache file")->required();
    cache_clear->add_flag("--yes", yes, "Confirm deletion");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*prep)
            return pf::cli::cmd_prepare_rationales(pf::cli::load_run_config(prep_flags.config, overrides(prep_flags)),
                                                   std::cout, std::cerr);
        if (*run)
            return pf::cli::cmd_run(pf::cli::load_run_config(run_flags.config, overrides(run_flags)), std::cout,
                                    std::cerr);
        if (*eval)
            return pf::cli::cmd_eval(pf::cli::load_run_config(eval_flags.config, overrides(eval_flags)), predictions,
                                     json_out, std::cout, std::cerr);
        if (*ingest)
            return pf::cli::cmd_ingest_embeddings(embeddings, std::cout, std::cerr);
        if (*cache_list)
            return pf::cli::cmd_cache_list(cache_path, std::cout);
        if (*cache_clear)
            return pf::cli::cmd_cache_clear(cache_path, yes, std::cout, std::cerr);
    }
    catch (const pf::Error& e)
    {
        std::cerr << e.what() << '\n';
        return e.code() == pf::ErrorCode::backend_unavailable || e.code() == pf::ErrorCode::auth_error ? 2 : 1;
    }
    catch (const std::exception& e)
    {
        std::cerr << e.what() << '\n';
        return 1;
    }
    return 0;
}
