#ifndef PROMPTFORGE_VOTE_HPP_INCLUDED
#define PROMPTFORGE_VOTE_HPP_INCLUDED

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace promptforge
{
    /// Counts per candidate plus abstentions; total() equals the number of
    /// contributing prompts.
    template <typename Key>
    struct VoteTally
    {
        std::map<Key, int> counts;
        int abstentions = 0;

        void add(const Key& k, int n = 1)
        {
            counts[k] += n;
        }
        void abstain()
        {
            ++abstentions;
        }
        int valid() const
        {
            int n = 0;
            for (const auto& [_, c] : counts)
                n += c;
            return n;
        }
        int total() const
        {
            return valid() + abstentions;
        }
        int count(const Key& k) const
        {
            auto it = counts.find(k);
            return it == counts.end() ? 0 : it->second;
        }
        /// floor(valid / 2) + 1 votes over the non-abstaining prompts.
        bool has_majority(const Key& k) const
        {
            auto v = valid();
            return v > 0 && count(k) >= v / 2 + 1;
        }
    };

    /// Candidate with the highest count; `before(a, b)` orders tied candidates.
    /// Empty when every prompt abstained.
    template <typename Key, typename Before = std::less<Key>>
    std::optional<Key> vote(const VoteTally<Key>& tally, Before before = {})
    {
        std::optional<Key> best;
        int best_count = 0;
        for (const auto& [k, c] : tally.counts)
        {
            if (c <= 0)
                continue;
            if (!best || c > best_count || (c == best_count && before(k, *best)))
            {
                best       = k;
                best_count = c;
            }
        }
        return best;
    }

    /// Best candidate other than `winner` with a positive count.
    template <typename Key, typename Before = std::less<Key>>
    std::optional<Key> runner_up(const VoteTally<Key>& tally, const Key& winner, Before before = {})
    {
        VoteTally<Key> rest = tally;
        rest.counts.erase(winner);
        return vote(rest, before);
    }

    /// Orders keys by their position in a fixed list; unknown keys go last.
    struct ListOrder
    {
        std::vector<std::string> order;

        bool operator()(const std::string& a, const std::string& b) const
        {
            auto pos = [&](const std::string& k) {
                for (std::size_t i = 0; i < order.size(); ++i)
                    if (order[i] == k)
                        return i;
                return order.size();
            };
            auto pa = pos(a), pb = pos(b);
            return pa != pb ? pa < pb : a < b;
        }
    };
} // namespace promptforge

#endif // PROMPTFORGE_VOTE_HPP_INCLUDED
