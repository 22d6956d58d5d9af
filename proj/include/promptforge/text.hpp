#ifndef PROMPTFORGE_TEXT_HPP_INCLUDED
#define PROMPTFORGE_TEXT_HPP_INCLUDED

// Character-level text helpers. Every offset in the library counts Unicode
// code points, never bytes.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge::text
{
    inline std::u32string to_u32(std::string_view s)
    {
        std::u32string out;
        out.reserve(s.size());
        std::size_t i = 0;
        while (i < s.size())
        {
            auto c = static_cast<unsigned char>(s[i]);
            char32_t cp = 0xFFFD;
            std::size_t len = 1;
            if (c < 0x80)
                cp = c;
            else if ((c >> 5) == 0x6)
            {
                len = 2;
                cp  = c & 0x1F;
            }
            else if ((c >> 4) == 0xE)
            {
                len = 3;
                cp  = c & 0x0F;
            }
            else if ((c >> 3) == 0x1E)
            {
                len = 4;
                cp  = c & 0x07;
            }
            else
            {
                out.push_back(0xFFFD);
                ++i;
                continue;
            }
            if (i + len > s.size())
            {
                out.push_back(0xFFFD);
                break;
            }
            bool ok = true;
            for (std::size_t j = 1; j < len; ++j)
            {
                auto cc = static_cast<unsigned char>(s[i + j]);
                if ((cc >> 6) != 0x2)
                {
                    ok = false;
                    break;
                }
                cp = (cp << 6) | (cc & 0x3F);
            }
            if (!ok)
            {
                out.push_back(0xFFFD);
                ++i;
                continue;
            }
            out.push_back(cp);
            i += len;
        }
        return out;
    }

    inline void append_utf8(std::string& out, char32_t cp)
    {
        if (cp < 0x80)
            out.push_back(static_cast<char>(cp));
        else if (cp < 0x800)
        {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
        else if (cp < 0x10000)
        {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
        else
        {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }

    inline std::string to_utf8(std::u32string_view s)
    {
        std::string out;
        out.reserve(s.size());
        for (auto cp : s)
            append_utf8(out, cp);
        return out;
    }

    inline std::size_t char_length(std::string_view s)
    {
        std::size_t n = 0;
        for (unsigned char c : s)
            if ((c >> 6) != 0x2)
                ++n;
        return n;
    }

    /// Substring by code-point range [start, end).
    inline std::string substr_chars(std::string_view s, std::size_t start, std::size_t end)
    {
        auto u = to_u32(s);
        end    = std::min(end, u.size());
        if (start >= end)
            return {};
        return to_utf8(std::u32string_view(u).substr(start, end - start));
    }

    inline bool is_space(char32_t c)
    {
        switch (c)
        {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
        }
    }

    inline bool is_alnum(char32_t c)
    {
        if (c < 0x80)
            return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
        // Non-ASCII letters count as word characters unless they are spaces or
        // general punctuation.
        return !is_space(c) && !(c >= 0x2000 && c <= 0x206F) && !(c >= 0x3000 && c <= 0x303F);
    }

    inline bool is_punct(char32_t c)
    {
        return !is_space(c) && !is_alnum(c);
    }

    inline char32_t ascii_lower(char32_t c)
    {
        return (c >= 'A' && c <= 'Z') ? c + ('a' - 'A') : c;
    }

    inline std::string lower(std::string_view s)
    {
        std::string out(s);
        for (auto& c : out)
            if (c >= 'A' && c <= 'Z')
                c = static_cast<char>(c - 'A' + 'a');
        return out;
    }

    inline std::string_view trim(std::string_view s)
    {
        auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
        while (!s.empty() && is_ws(s.front()))
            s.remove_prefix(1);
        while (!s.empty() && is_ws(s.back()))
            s.remove_suffix(1);
        return s;
    }

    /// Whitespace-normalized text plus, for each normalized position, the
    /// index of the originating code point.
    struct Normalized
    {
        std::u32string text;
        std::vector<std::size_t> origin;
    };

    /// Collapses runs of Unicode whitespace to one space and trims both ends.
    inline Normalized normalize_ws(std::u32string_view s)
    {
        Normalized n;
        bool pending_space = false;
        for (std::size_t i = 0; i < s.size(); ++i)
        {
            if (is_space(s[i]))
            {
                pending_space = !n.text.empty();
                continue;
            }
            if (pending_space)
            {
                n.text.push_back(U' ');
                n.origin.push_back(i - 1);
                pending_space = false;
            }
            n.text.push_back(s[i]);
            n.origin.push_back(i);
        }
        return n;
    }

    inline std::string normalize_ws(std::string_view s)
    {
        return to_utf8(normalize_ws(to_u32(s)).text);
    }

    /// Levenshtein distance; stops early and returns limit + 1 once the
    /// distance provably exceeds limit.
    inline std::size_t edit_distance(std::u32string_view a, std::u32string_view b,
                                     std::size_t limit = static_cast<std::size_t>(-1))
    {
        auto diff = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
        if (limit != static_cast<std::size_t>(-1) && diff > limit)
            return limit + 1;
        std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
        for (std::size_t j = 0; j <= b.size(); ++j)
            prev[j] = j;
        for (std::size_t i = 1; i <= a.size(); ++i)
        {
            cur[0]           = i;
            std::size_t best = cur[0];
            for (std::size_t j = 1; j <= b.size(); ++j)
            {
                auto sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
                cur[j]   = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
                best     = std::min(best, cur[j]);
            }
            if (limit != static_cast<std::size_t>(-1) && best > limit)
                return limit + 1;
            std::swap(prev, cur);
        }
        return prev[b.size()];
    }

    inline std::vector<std::size_t> find_all(std::u32string_view hay, std::u32string_view needle)
    {
        std::vector<std::size_t> hits;
        if (needle.empty())
            return hits;
        for (auto pos = hay.find(needle); pos != std::u32string_view::npos;
             pos      = hay.find(needle, pos + 1))
            hits.push_back(pos);
        return hits;
    }

    struct Token
    {
        std::size_t start = 0; // code points, inclusive
        std::size_t end   = 0; // exclusive
        std::string surface;
    };

    /// Whitespace + punctuation tokenization: runs of word characters form one
    /// token, every punctuation character is a token of its own.
    inline std::vector<Token> tokenize(std::string_view s)
    {
        auto u = to_u32(s);
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < u.size())
        {
            if (is_space(u[i]))
            {
                ++i;
                continue;
            }
            std::size_t j = i + 1;
            if (is_alnum(u[i]))
                while (j < u.size() && is_alnum(u[j]))
                    ++j;
            out.push_back({i, j, to_utf8(std::u32string_view(u).substr(i, j - i))});
            i = j;
        }
        return out;
    }

    /// Locates pre-split words left to right in s. Returns an empty vector when
    /// some word cannot be found in order.
    inline std::vector<Token> align_words(std::string_view s, const std::vector<std::string>& words)
    {
        auto u = to_u32(s);
        std::vector<Token> out;
        std::size_t pos = 0;
        for (const auto& w : words)
        {
            auto uw  = to_u32(w);
            auto hit = u.find(uw, pos);
            if (hit == std::u32string::npos || uw.empty())
                return {};
            out.push_back({hit, hit + uw.size(), w});
            pos = hit + uw.size();
        }
        return out;
    }

    inline const std::vector<std::string>& default_abbreviations()
    {
        static const std::vector<std::string> abbr = {
            "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "vs.",
            "etc.", "e.g.", "i.e.", "Inc.", "Ltd.", "Co.", "Corp.", "U.S.", "U.K.", "No.",
            "Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.", "Sept.", "Oct.",
            "Nov.", "Dec."};
        return abbr;
    }

    /// Splits at '.', '?' or '!' followed by whitespace and an uppercase letter,
    /// unless the word ending at the period is a listed abbreviation.
    inline std::vector<std::string> split_sentences(
        std::string_view s, const std::vector<std::string>& abbreviations = default_abbreviations())
    {
        auto u = to_u32(s);
        std::vector<std::string> out;
        std::size_t begin = 0;
        auto flush        = [&](std::size_t end) {
            auto raw   = to_utf8(std::u32string_view(u).substr(begin, end - begin));
            auto piece = trim(raw);
            if (!piece.empty())
                out.emplace_back(normalize_ws(piece));
        };
        for (std::size_t i = 0; i < u.size(); ++i)
        {
            auto c = u[i];
            if (c != U'.' && c != U'?' && c != U'!')
                continue;
            std::size_t j = i + 1;
            if (j >= u.size() || !is_space(u[j]))
                continue;
            while (j < u.size() && is_space(u[j]))
                ++j;
            if (j >= u.size() || !(u[j] >= U'A' && u[j] <= U'Z'))
                continue;
            if (c == U'.')
            {
                std::size_t w = i;
                while (w > begin && !is_space(u[w - 1]))
                    --w;
                auto word = to_utf8(std::u32string_view(u).substr(w, i + 1 - w));
                if (std::find(abbreviations.begin(), abbreviations.end(), word) != abbreviations.end())
                    continue;
            }
            flush(i + 1);
            begin = j;
        }
        flush(u.size());
        return out;
    }
} // namespace promptforge::text

#endif // PROMPTFORGE_TEXT_HPP_INCLUDED
