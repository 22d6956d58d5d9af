#ifndef PROMPTFORGE_BACKEND_HPP_INCLUDED
#define PROMPTFORGE_BACKEND_HPP_INCLUDED

// The completion contract plus the pieces every backend shares: scripted
// responses for tests, an on-disk response cache, rate limiting, retries and
// bounded concurrent dispatch.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "digest.hpp"

namespace promptforge
{
    struct RequestTag
    {
        std::string task;
        std::string instance_id;
        std::string prompt_id;

        std::string str() const
        {
            return task + "/" + instance_id + "/" + prompt_id;
        }

        friend bool operator==(const RequestTag&, const RequestTag&) = default;
    };

    struct CompletionRequest
    {
        std::string prompt;
        double temperature            = 0.0;
        std::size_t max_output_tokens = 512;
        RequestTag tag;
    };

    struct CompletionResponse
    {
        std::string text; // raw model output, never normalized here
        std::string backend_id;
        bool cached = false;
        std::chrono::nanoseconds latency{0};
    };

    class Backend
    {
    public:
        virtual ~Backend() = default;

        virtual std::string id() const                                     = 0;
        virtual CompletionResponse complete(const CompletionRequest& req) = 0;
    };

    /// Stable digest of (backend id, prompt bytes, temperature, max output
    /// tokens). Tags are excluded so identical prompts share entries.
    inline std::string cache_key(const CompletionRequest& req, const std::string& backend_id)
    {
        char temp[64];
        std::snprintf(temp, sizeof temp, "%.17g", req.temperature);
        std::string material;
        material.reserve(req.prompt.size() + backend_id.size() + 64);
        material += backend_id;
        material.push_back('\0');
        material += req.prompt;
        material.push_back('\0');
        material += temp;
        material.push_back('\0');
        material += std::to_string(req.max_output_tokens);
        return sha256_hex(material);
    }

    //=== scripted backend ===//

    /// Deterministic backend for tests: the first matching rule answers.
    class ScriptedBackend final : public Backend
    {
    public:
        enum class Match
        {
            prompt_hash, // sha256 hex of the prompt bytes
            substring,
            tag,
        };

        struct Rule
        {
            Match match = Match::tag;
            std::string pattern; // hash, substring, or tag.str()
            std::string response;
            /// When set, the rule raises this error instead of answering;
            /// `fail_times` > 0 limits it to the first n hits.
            std::optional<ErrorCode> error;
            int fail_times = 0;
        };

        explicit ScriptedBackend(std::string id = "scripted") : id_(std::move(id)) {}

        ScriptedBackend(const ScriptedBackend&)            = delete;
        ScriptedBackend& operator=(const ScriptedBackend&) = delete;

        std::string id() const override
        {
            return id_;
        }

        ScriptedBackend& on_tag(const RequestTag& tag, std::string response)
        {
            return add({Match::tag, tag.str(), std::move(response), std::nullopt, 0});
        }
        ScriptedBackend& on_substring(std::string needle, std::string response)
        {
            return add({Match::substring, std::move(needle), std::move(response), std::nullopt, 0});
        }
        ScriptedBackend& on_prompt(const std::string& prompt, std::string response)
        {
            return add({Match::prompt_hash, sha256_hex(prompt), std::move(response), std::nullopt, 0});
        }
        ScriptedBackend& fail_tag(const RequestTag& tag, ErrorCode code, int times = 0, std::string then = {})
        {
            return add({Match::tag, tag.str(), std::move(then), code, times});
        }
        ScriptedBackend& set_default(std::string response)
        {
            default_ = std::move(response);
            return *this;
        }

        ScriptedBackend& add(Rule rule)
        {
            if (rule.match == Match::tag)
                tag_index_.emplace(rule.pattern, rules_.size());
            hits_.push_back(std::make_unique<std::atomic<int>>(0));
            rules_.push_back(std::move(rule));
            return *this;
        }

        std::size_t rule_count() const noexcept
        {
            return rules_.size();
        }
        std::size_t calls() const noexcept
        {
            return calls_.load();
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            auto start = std::chrono::steady_clock::now();
            ++calls_;
            auto idx = find(req);
            if (!idx)
            {
                if (!default_)
                    throw Error(ErrorCode::script_miss, "no rule for " + req.tag.str());
                return {*default_, id_, false, std::chrono::steady_clock::now() - start};
            }
            const auto& rule = rules_[*idx];
            if (rule.error)
            {
                auto hit = ++*hits_[*idx];
                if (rule.fail_times == 0 || hit <= rule.fail_times)
                    throw Error(*rule.error, "scripted failure for " + req.tag.str());
            }
            return {rule.response, id_, false, std::chrono::steady_clock::now() - start};
        }

    private:
        std::optional<std::size_t> find(const CompletionRequest& req) const
        {
            std::optional<std::size_t> best;
            if (auto it = tag_index_.find(req.tag.str()); it != tag_index_.end())
                best = it->second;
            std::optional<std::string> hash;
            for (std::size_t i = 0; i < rules_.size() && (!best || i < *best); ++i)
            {
                const auto& r = rules_[i];
                if (r.match == Match::substring && req.prompt.find(r.pattern) != std::string::npos)
                    return i;
                if (r.match == Match::prompt_hash)
                {
                    if (!hash)
                        hash = sha256_hex(req.prompt);
                    if (*hash == r.pattern)
                        return i;
                }
            }
            return best;
        }

        std::string id_;
        std::vector<Rule> rules_;
        std::vector<std::unique_ptr<std::atomic<int>>> hits_;
        std::unordered_map<std::string, std::size_t> tag_index_;
        std::optional<std::string> default_;
        std::atomic<std::size_t> calls_{0};
    };

    inline std::optional<ErrorCode> parse_error_kind(const std::string& s)
    {
        if (s == "unavailable")
            return ErrorCode::backend_unavailable;
        if (s == "auth")
            return ErrorCode::auth_error;
        if (s == "transient")
            return ErrorCode::transient;
        return std::nullopt;
    }

    /// Loads a script file: one JSON object per line, e.g.
    ///   {"tag": {"task": "ner", "instance": "s1", "prompt": "ner/LOC/p1"}, "response": "..."}
    ///   {"substring": "Musk", "response": "Yes"}
    ///   {"prompt_sha256": "<hex>", "response": "..."}
    ///   {"tag": {...}, "error": "unavailable"}
    ///   {"default": "..."}
    inline void load_script(ScriptedBackend& backend, std::istream& in, const std::string& origin = "<script>")
    {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            if (text::trim(line).empty())
                continue;
            auto where = origin + ":" + std::to_string(lineno);
            nlohmann::json j;
            try
            {
                j = nlohmann::json::parse(line);
            }
            catch (const nlohmann::json::exception& e)
            {
                throw Error(ErrorCode::format_error, where + ": " + e.what());
            }
            if (j.contains("default"))
            {
                backend.set_default(j.at("default").get<std::string>());
                continue;
            }
            ScriptedBackend::Rule rule;
            try
            {
                if (j.contains("tag"))
                {
                    const auto& t = j.at("tag");
                    rule.match    = ScriptedBackend::Match::tag;
                    rule.pattern  = RequestTag{t.at("task").get<std::string>(), t.at("instance").get<std::string>(),
                                              t.at("prompt").get<std::string>()}
                                       .str();
                }
                else if (j.contains("substring"))
                {
                    rule.match   = ScriptedBackend::Match::substring;
                    rule.pattern = j.at("substring").get<std::string>();
                }
                else if (j.contains("prompt_sha256"))
                {
                    rule.match   = ScriptedBackend::Match::prompt_hash;
                    rule.pattern = j.at("prompt_sha256").get<std::string>();
                }
                else
                    throw Error(ErrorCode::format_error, where + ": rule needs tag, substring or prompt_sha256");
                rule.response = j.value("response", std::string());
                if (j.contains("error"))
                {
                    rule.error = parse_error_kind(j.at("error").get<std::string>());
                    if (!rule.error)
                        throw Error(ErrorCode::format_error, where + ": unknown error kind");
                    rule.fail_times = j.value("fail_times", 0);
                }
            }
            catch (const nlohmann::json::exception& e)
            {
                throw Error(ErrorCode::format_error, where + ": " + e.what());
            }
            backend.add(std::move(rule));
        }
    }

    //=== response cache ===//

    /// Append-only `<key>\t<base64 response>` records. Concurrent reads,
    /// serialized appends.
    class ResponseCache
    {
    public:
        ResponseCache() = default; // in-memory only
        explicit ResponseCache(std::string path) : path_(std::move(path))
        {
            std::ifstream in(path_);
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line))
            {
                ++lineno;
                if (line.empty())
                    continue;
                auto tab = line.find('\t');
                if (tab == std::string::npos)
                    throw Error(ErrorCode::format_error, path_ + ":" + std::to_string(lineno) + ": bad cache record");
                try
                {
                    entries_[line.substr(0, tab)] = base64_decode(std::string_view(line).substr(tab + 1));
                }
                catch (const std::invalid_argument& e)
                {
                    throw Error(ErrorCode::format_error, path_ + ":" + std::to_string(lineno) + ": " + e.what());
                }
            }
        }

        std::optional<std::string> lookup(const std::string& key) const
        {
            std::shared_lock lock(mutex_);
            auto it = entries_.find(key);
            if (it == entries_.end())
                return std::nullopt;
            return it->second;
        }

        void store(const std::string& key, const std::string& response)
        {
            std::unique_lock lock(mutex_);
            if (!entries_.emplace(key, response).second)
                return;
            if (!path_.empty())
            {
                std::ofstream out(path_, std::ios::app);
                out << key << '\t' << base64_encode(response) << '\n';
                if (!out)
                    throw Error(ErrorCode::format_error, "cannot append to cache '" + path_ + "'");
            }
        }

        std::size_t size() const
        {
            std::shared_lock lock(mutex_);
            return entries_.size();
        }

        const std::string& path() const noexcept
        {
            return path_;
        }

    private:
        std::string path_;
        mutable std::shared_mutex mutex_;
        std::unordered_map<std::string, std::string> entries_;
    };

    class CachingBackend final : public Backend
    {
    public:
        CachingBackend(Backend& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}

        std::string id() const override
        {
            return inner_.id();
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            auto start = std::chrono::steady_clock::now();
            auto key   = cache_key(req, inner_.id());
            if (auto hit = cache_.lookup(key))
                return {*hit, inner_.id(), true, std::chrono::steady_clock::now() - start};
            auto resp = inner_.complete(req);
            cache_.store(key, resp.text);
            resp.cached = false;
            return resp;
        }

    private:
        Backend& inner_;
        ResponseCache& cache_;
    };

    //=== clocks, rate limiting, retries ===//
    class Clock
    {
    public:
        using duration   = std::chrono::nanoseconds;
        using time_point = std::chrono::time_point<std::chrono::steady_clock, duration>;

        virtual ~Clock()                           = default;
        virtual time_point now()                   = 0;
        virtual void sleep_until(time_point until) = 0;
    };

    class SteadyClock final : public Clock
    {
    public:
        time_point now() override
        {
            return std::chrono::time_point_cast<duration>(std::chrono::steady_clock::now());
        }
        void sleep_until(time_point until) override
        {
            std::this_thread::sleep_until(until);
        }
    };

    /// Time advances only through sleep_until; for deterministic tests.
    class VirtualClock final : public Clock
    {
    public:
        time_point now() override
        {
            std::lock_guard lock(mutex_);
            return now_;
        }
        void sleep_until(time_point until) override
        {
            std::lock_guard lock(mutex_);
            if (until > now_)
                now_ = until;
        }
        void advance(duration d)
        {
            std::lock_guard lock(mutex_);
            now_ += d;
        }

    private:
        std::mutex mutex_;
        time_point now_{};
    };

    /// Sliding-window limiter: at most `max_requests` dispatches in any
    /// window of length `interval`.
    class RateLimiter
    {
    public:
        RateLimiter(std::size_t max_requests, Clock::duration interval, Clock& clock)
        : max_(max_requests), interval_(interval), clock_(clock)
        {
            if (max_ == 0 || interval_ <= Clock::duration::zero())
                throw Error(ErrorCode::config_error, "rate limit needs a positive count and interval");
        }

        /// Blocks until a dispatch is allowed; returns the dispatch time.
        Clock::time_point acquire()
        {
            std::unique_lock lock(mutex_);
            for (;;)
            {
                auto now = clock_.now();
                while (!sent_.empty() && sent_.front() + interval_ <= now)
                    sent_.pop_front();
                if (sent_.size() < max_)
                {
                    sent_.push_back(now);
                    return now;
                }
                auto wake = sent_.front() + interval_;
                lock.unlock();
                clock_.sleep_until(wake);
                lock.lock();
            }
        }

    private:
        std::size_t max_;
        Clock::duration interval_;
        Clock& clock_;
        std::mutex mutex_;
        std::deque<Clock::time_point> sent_;
    };

    class Semaphore
    {
    public:
        explicit Semaphore(std::size_t count) : count_(count) {}

        void acquire()
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [&] { return count_ > 0; });
            --count_;
        }
        void release()
        {
            {
                std::lock_guard lock(mutex_);
                ++count_;
            }
            cv_.notify_one();
        }

    private:
        std::mutex mutex_;
        std::condition_variable cv_;
        std::size_t count_;
    };

    struct RetryPolicy
    {
        int max_attempts           = 5;
        Clock::duration base_delay = std::chrono::milliseconds(500);
        Clock::duration max_delay  = std::chrono::seconds(30);
    };

    /// Adds retries with exponential backoff, a concurrent in-flight cap and
    /// an optional shared rate limiter in front of another backend.
    class ResilientBackend final : public Backend
    {
    public:
        ResilientBackend(Backend& inner, RetryPolicy policy, std::size_t max_in_flight, Clock& clock,
                         RateLimiter* limiter = nullptr)
        : inner_(inner), policy_(policy), slots_(max_in_flight == 0 ? 1 : max_in_flight), clock_(clock),
          limiter_(limiter)
        {}

        std::string id() const override
        {
            return inner_.id();
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            auto delay = policy_.base_delay;
            std::string last;
            for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt)
            {
                if (limiter_)
                    limiter_->acquire();
                slots_.acquire();
                try
                {
                    auto resp = inner_.complete(req);
                    slots_.release();
                    return resp;
                }
                catch (const Error& e)
                {
                    slots_.release();
                    if (e.code() != ErrorCode::transient)
                        throw;
                    last = e.what();
                }
                catch (...)
                {
                    slots_.release();
                    throw;
                }
                if (attempt < policy_.max_attempts)
                {
                    clock_.sleep_until(clock_.now() + delay);
                    delay = std::min(delay * 2, policy_.max_delay);
                }
            }
            throw Error(ErrorCode::backend_unavailable, req.tag.str() + ": retries exhausted (" + last + ")");
        }

    private:
        Backend& inner_;
        RetryPolicy policy_;
        Semaphore slots_;
        Clock& clock_;
        RateLimiter* limiter_;
    };

    /// Outcome of one request in a batch: a response or the error it raised.
    struct BatchResult
    {
        std::optional<CompletionResponse> response;
        std::exception_ptr error;
    };

    /// Runs every request on up to `workers` threads. Results keep request
    /// order whatever the completion order; failures do not stop the batch.
    inline std::vector<BatchResult> try_complete_batch(Backend& backend, const std::vector<CompletionRequest>& reqs,
                                                       std::size_t workers = 1)
    {
        std::vector<BatchResult> out(reqs.size());
        auto run = [&](std::size_t i) {
            try
            {
                out[i].response = backend.complete(reqs[i]);
            }
            catch (...)
            {
                out[i].error = std::current_exception();
            }
        };
        if (workers <= 1 || reqs.size() <= 1)
        {
            for (std::size_t i = 0; i < reqs.size(); ++i)
                run(i);
            return out;
        }
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        auto n = std::min(workers, reqs.size());
        for (std::size_t w = 0; w < n; ++w)
            pool.emplace_back([&] {
                for (auto i = next++; i < reqs.size(); i = next++)
                    run(i);
            });
        pool.clear(); // joins
        return out;
    }

    /// Like try_complete_batch but rethrows the first failure in request order.
    inline std::vector<CompletionResponse> complete_batch(Backend& backend, const std::vector<CompletionRequest>& reqs,
                                                          std::size_t workers = 1)
    {
        auto results = try_complete_batch(backend, reqs, workers);
        std::vector<CompletionResponse> out;
        out.reserve(results.size());
        for (auto& r : results)
        {
            if (r.error)
                std::rethrow_exception(r.error);
            out.push_back(std::move(*r.response));
        }
        return out;
    }
} // namespace promptforge

#endif // PROMPTFORGE_BACKEND_HPP_INCLUDED
