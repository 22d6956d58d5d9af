#ifndef PROMPTFORGE_HTTP_BACKEND_HPP_INCLUDED
#define PROMPTFORGE_HTTP_BACKEND_HPP_INCLUDED

// Live backend speaking the chat-completions wire format. https endpoints need
// CPPHTTPLIB_OPENSSL_SUPPORT defined before this header and OpenSSL linked.

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "backend.hpp"

namespace promptforge
{
    struct HttpBackendConfig
    {
        /// Full URL, e.g. https://api.example.com/v1/chat/completions.
        std::string endpoint;
        std::string model;
        /// Sent as a bearer token when non-empty.
        std::string api_key;
        /// Identity used in cache keys and the ledger; defaults to the model.
        std::string id;
        std::chrono::seconds timeout{60};
    };

    /// Reads the API key from PROMPTFORGE_API_KEY; empty when unset.
    inline std::string api_key_from_env()
    {
        const char* v = std::getenv("PROMPTFORGE_API_KEY");
        return v ? v : "";
    }

    class HttpBackend final : public Backend
    {
    public:
        explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg))
        {
            auto scheme_end = cfg_.endpoint.find("://");
            if (scheme_end == std::string::npos)
                throw Error(ErrorCode::config_error, "endpoint '" + cfg_.endpoint + "' has no scheme");
            auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
            origin_         = cfg_.endpoint.substr(0, path_start);
            path_           = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
            if (cfg_.model.empty())
                throw Error(ErrorCode::config_error, "live backend needs a model name");
            if (cfg_.id.empty())
                cfg_.id = cfg_.model;
        }

        std::string id() const override
        {
            return cfg_.id;
        }

        CompletionResponse complete(const CompletionRequest& req) override
        {
            // One client per call: httplib clients are not safe to share
            // across the worker threads.
            httplib::Client client(origin_);
            client.set_connection_timeout(cfg_.timeout);
            client.set_read_timeout(cfg_.timeout);
            httplib::Headers headers;
            if (!cfg_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + cfg_.api_key);

            nlohmann::json body{{"model", cfg_.model},
                                {"messages", {{{"role", "user"}, {"content", req.prompt}}}},
                                {"temperature", req.temperature},
                                {"max_tokens", req.max_output_tokens}};
            auto started = std::chrono::steady_clock::now();
            auto res     = client.Post(path_, headers, body.dump(), "application/json");
            if (!res)
                throw Error(ErrorCode::transient, req.tag.str() + ": " + httplib::to_string(res.error()));
            auto status = res->status;
            if (status == 401 || status == 403)
                throw Error(ErrorCode::auth_error, req.tag.str() + ": HTTP " + std::to_string(status));
            if (status == 429 || status >= 500)
                throw Error(ErrorCode::transient, req.tag.str() + ": HTTP " + std::to_string(status));
            if (status < 200 || status >= 300)
                throw Error(ErrorCode::backend_unavailable,
                            req.tag.str() + ": HTTP " + std::to_string(status) + ": " + res->body);

            CompletionResponse out;
            try
            {
                auto j   = nlohmann::json::parse(res->body);
                out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            }
            catch (const nlohmann::json::exception& e)
            {
                throw Error(ErrorCode::backend_unavailable, req.tag.str() + ": malformed response: " + e.what());
            }
            out.backend_id = cfg_.id;
            out.latency    = std::chrono::steady_clock::now() - started;
            return out;
        }

    private:
        HttpBackendConfig cfg_;
        std::string origin_;
        std::string path_;
    };
} // namespace promptforge

#endif // PROMPTFORGE_HTTP_BACKEND_HPP_INCLUDED
