#ifndef PROMPTFORGE_RETRIEVAL_HPP_INCLUDED
#define PROMPTFORGE_RETRIEVAL_HPP_INCLUDED

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "core.hpp"

namespace promptforge
{
    enum class EmbeddingLevel
    {
        sentence,
        token,
    };

    using Vector = std::vector<float>;

    struct EmbeddingEntry
    {
        std::vector<Vector> vectors; // one for sentence stores, one per token otherwise
        std::vector<double> norms;
    };

    /// Read-only after ingest; safe to share between threads.
    class EmbeddingStore
    {
    public:
        EmbeddingStore() = default;
        EmbeddingStore(std::string provider, std::size_t dim, EmbeddingLevel level)
        : provider_(std::move(provider)), dim_(dim), level_(level)
        {
            if (dim_ == 0)
                throw Error(ErrorCode::format_error, "dim must be positive");
        }

        const std::string& provider() const noexcept
        {
            return provider_;
        }
        std::size_t dim() const noexcept
        {
            return dim_;
        }
        EmbeddingLevel level() const noexcept
        {
            return level_;
        }
        std::size_t size() const noexcept
        {
            return entries_.size();
        }
        bool contains(const std::string& id) const
        {
            return entries_.count(id) != 0;
        }

        /// Ids in ascending order.
        std::vector<std::string> ids() const
        {
            std::vector<std::string> out;
            out.reserve(entries_.size());
            for (const auto& [id, _] : entries_)
                out.push_back(id);
            return out;
        }

        const EmbeddingEntry& entry(const std::string& id) const
        {
            auto it = entries_.find(id);
            if (it == entries_.end())
                throw Error(ErrorCode::config_error, "id '" + id + "' not in embedding store");
            return it->second;
        }

        const std::map<std::string, EmbeddingEntry>& entries() const noexcept
        {
            return entries_;
        }

        /// Adds one vector; token stores append in call order. Rejects zero,
        /// non-finite, or wrong-length vectors.
        void add(const std::string& id, Vector v)
        {
            if (v.size() != dim_)
                throw Error(ErrorCode::dimension_mismatch, "record for '" + id + "' has "
                                                               + std::to_string(v.size()) + " components, expected "
                                                               + std::to_string(dim_));
            double n = 0;
            for (auto x : v)
            {
                if (!std::isfinite(x))
                    throw Error(ErrorCode::format_error, "non-finite component in '" + id + "'");
                n += static_cast<double>(x) * static_cast<double>(x);
            }
            if (n == 0)
                throw Error(ErrorCode::format_error, "zero vector for '" + id + "'");
            auto& e = entries_[id];
            if (level_ == EmbeddingLevel::sentence && !e.vectors.empty())
                throw Error(ErrorCode::format_error, "duplicate id '" + id + "'");
            e.vectors.push_back(std::move(v));
            e.norms.push_back(n);
        }

    private:
        std::string provider_;
        std::size_t dim_      = 0;
        EmbeddingLevel level_ = EmbeddingLevel::sentence;
        std::map<std::string, EmbeddingEntry> entries_;
    };

    namespace detail
    {
        inline double squared_norm(const Vector& v)
        {
            double n = 0;
            for (auto x : v)
                n += static_cast<double>(x) * static_cast<double>(x);
            return n;
        }

        inline double dot(const Vector& a, const Vector& b)
        {
            double d = 0;
            for (std::size_t i = 0; i < a.size(); ++i)
                d += static_cast<double>(a[i]) * static_cast<double>(b[i]);
            return d;
        }

        inline double cosine(const Vector& a, double a_sq, const Vector& b, double b_sq)
        {
            return dot(a, b) / std::sqrt(a_sq * b_sq);
        }
    } // namespace detail

    /// Cosine similarity; symmetric, and exactly 1 for sim(u, u) with u != 0.
    inline double cosine_similarity(const Vector& a, const Vector& b)
    {
        if (a.size() != b.size())
            throw Error(ErrorCode::dimension_mismatch, "vectors differ in length");
        return detail::cosine(a, detail::squared_norm(a), b, detail::squared_norm(b));
    }

    /// Parses the embedding file format:
    ///   dim=<D> level=<sentence|token> provider=<tag>
    ///   <id>\t<token-index or ->\t<D space-separated floats>
    inline EmbeddingStore parse_embeddings(std::istream& in, const std::string& origin = "<stream>")
    {
        auto fail = [&](std::size_t line, const std::string& why) -> Error {
            return Error(ErrorCode::format_error, origin + ":" + std::to_string(line) + ": " + why);
        };
        std::string line;
        if (!std::getline(in, line))
            throw fail(1, "missing header");
        if (!line.empty() && line.back() == '\r')
            line.pop_back();

        std::size_t dim = 0;
        std::string level_name, provider;
        {
            std::istringstream hs(line);
            std::string field;
            while (hs >> field)
            {
                auto eq = field.find('=');
                if (eq == std::string::npos)
                    throw fail(1, "bad header field '" + field + "'");
                auto key = field.substr(0, eq), value = field.substr(eq + 1);
                if (key == "dim")
                {
                    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), dim);
                    if (ec != std::errc() || p != value.data() + value.size() || dim == 0)
                        throw fail(1, "bad dim '" + value + "'");
                }
                else if (key == "level")
                    level_name = value;
                else if (key == "provider")
                    provider = value;
                else
                    throw fail(1, "unknown header key '" + key + "'");
            }
        }
        if (dim == 0 || provider.empty() || (level_name != "sentence" && level_name != "token"))
            throw fail(1, "header must be 'dim=<D> level=<sentence|token> provider=<tag>'");
        auto level = level_name == "sentence" ? EmbeddingLevel::sentence : EmbeddingLevel::token;

        EmbeddingStore store(provider, dim, level);
        std::map<std::string, std::map<std::size_t, Vector>> tokens;
        std::size_t lineno = 1;
        while (std::getline(in, line))
        {
            ++lineno;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.empty())
                continue;
            auto t1 = line.find('\t');
            auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
            if (t2 == std::string::npos)
                throw fail(lineno, "record needs three tab-separated fields");
            auto id   = line.substr(0, t1);
            auto tok  = line.substr(t1 + 1, t2 - t1 - 1);
            auto body = std::string_view(line).substr(t2 + 1);
            if (id.empty())
                throw fail(lineno, "empty id");

            Vector v;
            const char* p   = body.data();
            const char* end = body.data() + body.size();
            while (p < end)
            {
                while (p < end && (*p == ' ' || *p == '\t'))
                    ++p;
                if (p == end)
                    break;
                float x      = 0;
                auto [q, ec] = std::from_chars(p, end, x);
                if (ec != std::errc() || (q < end && *q != ' '))
                    throw fail(lineno, "bad float in record for '" + id + "'");
                v.push_back(x);
                p = q;
            }
            if (v.size() != dim)
                throw Error(ErrorCode::dimension_mismatch,
                            origin + ":" + std::to_string(lineno) + ": record for '" + id + "' has "
                                + std::to_string(v.size()) + " components, expected " + std::to_string(dim));
            for (auto x : v)
                if (!std::isfinite(x))
                    throw fail(lineno, "non-finite component in record for '" + id + "'");
            if (detail::squared_norm(v) == 0)
                throw fail(lineno, "zero vector for '" + id + "'");
            if (level == EmbeddingLevel::sentence)
            {
                if (tok != "-")
                    throw fail(lineno, "sentence records use '-' as token index");
                if (store.contains(id))
                    throw fail(lineno, "duplicate id '" + id + "'");
                store.add(id, std::move(v));
            }
            else
            {
                std::size_t ti = 0;
                auto [q, ec]   = std::from_chars(tok.data(), tok.data() + tok.size(), ti);
                if (ec != std::errc() || q != tok.data() + tok.size())
                    throw fail(lineno, "bad token index '" + tok + "'");
                if (!tokens[id].emplace(ti, std::move(v)).second)
                    throw fail(lineno, "duplicate token index for '" + id + "'");
            }
        }
        for (auto& [id, by_index] : tokens)
            for (auto& [_, v] : by_index)
                store.add(id, std::move(v));
        return store;
    }

    inline EmbeddingStore ingest_embeddings(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorCode::format_error, "cannot open embedding file '" + path + "'");
        return parse_embeddings(in, path);
    }

    enum class RetrievalStrategy
    {
        random,
        knn_sentence,
        knn_token,
    };

    inline RetrievalStrategy parse_strategy(std::string_view s)
    {
        if (s == "random")
            return RetrievalStrategy::random;
        if (s == "knn_sentence" || s == "knn")
            return RetrievalStrategy::knn_sentence;
        if (s == "knn_token")
            return RetrievalStrategy::knn_token;
        throw Error(ErrorCode::config_error, "unknown retrieval strategy '" + std::string(s) + "'");
    }

    struct RetrievalConfig
    {
        std::size_t k               = 1;
        RetrievalStrategy strategy  = RetrievalStrategy::knn_sentence;
        std::uint64_t seed          = 0;
        bool exclude_self           = true;
    };

    using Query = std::variant<Vector, std::string>;

    namespace detail
    {
        /// Unbiased draw from [0, bound) using only the engine's raw output,
        /// so results are identical across standard libraries.
        inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound)
        {
            auto limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
            std::uint64_t x;
            do
                x = rng();
            while (x >= limit);
            return x % bound;
        }

        inline std::vector<std::string> candidate_ids(const EmbeddingStore& store, const std::string* self,
                                                      const RetrievalConfig& cfg)
        {
            if (cfg.k == 0)
                throw Error(ErrorCode::config_error, "k must be positive");
            std::vector<std::string> ids;
            ids.reserve(store.size());
            for (const auto& [id, _] : store.entries())
                if (!(cfg.exclude_self && self && id == *self))
                    ids.push_back(id);
            if (ids.empty())
                throw Error(ErrorCode::empty_pool, "no candidates left for retrieval");
            return ids;
        }

        inline std::vector<std::string> top_k(std::vector<std::pair<double, std::string>> scored, std::size_t k)
        {
            k        = std::min(k, scored.size());
            auto cmp = [](const auto& a, const auto& b) {
                if (a.first != b.first)
                    return a.first > b.first;
                return a.second < b.second;
            };
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), cmp);
            std::vector<std::string> out;
            out.reserve(k);
            for (std::size_t i = 0; i < k; ++i)
                out.push_back(std::move(scored[i].second));
            return out;
        }
    } // namespace detail

    /// Uniform sample of min(k, |pool|) ids without replacement; a pure
    /// function of (pool id-set, seed, k).
    inline std::vector<std::string> sample_ids(std::vector<std::string> pool, std::size_t k, std::uint64_t seed)
    {
        std::sort(pool.begin(), pool.end());
        std::mt19937_64 rng(seed);
        k = std::min(k, pool.size());
        for (std::size_t i = 0; i < k; ++i)
        {
            auto j = i + detail::bounded(rng, pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    /// Returns up to k ids: random sample, or exact cosine kNN ordered by
    /// descending similarity with ties broken by ascending id.
    inline std::vector<std::string> retrieve(const EmbeddingStore& store, const Query& query, const RetrievalConfig& cfg)
    {
        const std::string* self = std::get_if<std::string>(&query);
        if (self && !store.contains(*self))
            self = nullptr;
        auto ids = detail::candidate_ids(store, self, cfg);

        if (cfg.strategy == RetrievalStrategy::random)
            return sample_ids(std::move(ids), cfg.k, cfg.seed);
        if (cfg.strategy == RetrievalStrategy::knn_token)
            throw Error(ErrorCode::config_error, "token-level retrieval needs query token vectors");

        const Vector* q = nullptr;
        double q_sq     = 0;
        if (auto v = std::get_if<Vector>(&query))
        {
            if (v->size() != store.dim())
                throw Error(ErrorCode::dimension_mismatch, "query has " + std::to_string(v->size())
                                                               + " components, store dim is "
                                                               + std::to_string(store.dim()));
            q    = v;
            q_sq = detail::squared_norm(*v);
            if (q_sq == 0)
                throw Error(ErrorCode::format_error, "zero query vector");
        }
        else
        {
            const auto& e = store.entry(std::get<std::string>(query));
            q             = &e.vectors.front();
            q_sq          = e.norms.front();
        }

        std::vector<std::pair<double, std::string>> scored;
        scored.reserve(ids.size());
        for (auto& id : ids)
        {
            const auto& e = store.entry(id);
            scored.emplace_back(detail::cosine(*q, q_sq, e.vectors.front(), e.norms.front()), std::move(id));
        }
        return detail::top_k(std::move(scored), cfg.k);
    }

    /// Score of a candidate = mean over query tokens of the best cosine
    /// against any of the candidate's tokens.
    inline std::vector<std::string> retrieve_token_level(const EmbeddingStore& store,
                                                         const std::vector<Vector>& query_tokens,
                                                         const RetrievalConfig& cfg,
                                                         const std::string* self_id = nullptr)
    {
        if (query_tokens.empty())
            throw Error(ErrorCode::config_error, "empty token query");
        std::vector<double> q_sq;
        for (const auto& t : query_tokens)
        {
            if (t.size() != store.dim())
                throw Error(ErrorCode::dimension_mismatch, "query token has " + std::to_string(t.size())
                                                               + " components, store dim is "
                                                               + std::to_string(store.dim()));
            q_sq.push_back(detail::squared_norm(t));
            if (q_sq.back() == 0)
                throw Error(ErrorCode::format_error, "zero query token vector");
        }
        auto ids = detail::candidate_ids(store, self_id, cfg);

        std::vector<std::pair<double, std::string>> scored;
        scored.reserve(ids.size());
        for (auto& id : ids)
        {
            const auto& e = store.entry(id);
            double sum    = 0;
            for (std::size_t qi = 0; qi < query_tokens.size(); ++qi)
            {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t ci = 0; ci < e.vectors.size(); ++ci)
                    best = std::max(best, detail::cosine(query_tokens[qi], q_sq[qi], e.vectors[ci], e.norms[ci]));
                sum += best;
            }
            scored.emplace_back(sum / static_cast<double>(query_tokens.size()), std::move(id));
        }
        return detail::top_k(std::move(scored), cfg.k);
    }
} // namespace promptforge

#endif // PROMPTFORGE_RETRIEVAL_HPP_INCLUDED
