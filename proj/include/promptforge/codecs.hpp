#ifndef PROMPTFORGE_CODECS_HPP_INCLUDED
#define PROMPTFORGE_CODECS_HPP_INCLUDED

// Output grammars: render gold payloads into the text a model is asked to
// produce, and decode raw model text back into typed payloads.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "core.hpp"
#include "prompting.hpp"

namespace promptforge
{
    enum class Fidelity
    {
        exact,
        realigned,
        rejected,
    };

    inline const char* to_string(Fidelity f)
    {
        switch (f)
        {
        case Fidelity::exact: return "exact";
        case Fidelity::realigned: return "realigned";
        case Fidelity::rejected: return "rejected";
        }
        return "?";
    }

    template <typename T>
    struct DecodeOutcome
    {
        std::optional<T> payload; // empty iff rejected
        Fidelity fidelity = Fidelity::rejected;
        std::vector<std::string> diagnostics;
    };

    //=== copy-and-mark ===//
    namespace detail
    {
        inline void require_markers_absent(std::u32string_view source, const MarkerGrammar& g)
        {
            for (const auto& m : {g.open, g.close})
                if (source.find(text::to_u32(m)) != std::u32string_view::npos)
                    throw Error(ErrorCode::marker_in_source, "marker '" + m + "' occurs in the source text");
        }

        inline bool cuts_word_left(std::u32string_view s, std::size_t start)
        {
            return start > 0 && start < s.size() && text::is_alnum(s[start - 1]) && text::is_alnum(s[start]);
        }

        inline bool cuts_word_right(std::u32string_view s, std::size_t end)
        {
            return end > 0 && end < s.size() && text::is_alnum(s[end - 1]) && text::is_alnum(s[end]);
        }
    } // namespace detail

    /// Wraps each span in the grammar's markers. Spans must not overlap.
    inline std::string marker_encode(std::string_view source, std::vector<Span> spans, const MarkerGrammar& g)
    {
        auto u = text::to_u32(source);
        detail::require_markers_absent(u, g);
        std::sort(spans.begin(), spans.end());
        std::size_t prev_end = 0;
        for (const auto& s : spans)
        {
            if (s.start >= s.end || s.end > u.size())
                throw Error(ErrorCode::span_out_of_bounds, span_key(s));
            if (s.start < prev_end)
                throw Error(ErrorCode::span_overlap, span_key(s));
            prev_end = s.end;
        }
        std::string out;
        std::size_t pos = 0;
        for (const auto& s : spans)
        {
            out += text::to_utf8(std::u32string_view(u).substr(pos, s.start - pos));
            out += g.open;
            out += text::to_utf8(std::u32string_view(u).substr(s.start, s.end - s.start));
            out += g.close;
            pos = s.end;
        }
        out += text::to_utf8(std::u32string_view(u).substr(pos));
        return out;
    }

    /// Decodes a copy-and-mark output into spans in source coordinates.
    ///
    /// Markers are stripped; when the remaining text equals the source up to
    /// whitespace the marked positions map directly (exact). Otherwise, if the
    /// edit distance is within ceil(10% of the source length), each marked
    /// surface is located in the source (realigned). Anything further off is
    /// rejected. Marks that cut through a word snap outward to the word edges.
    inline DecodeOutcome<std::vector<Span>> marker_decode(std::string_view source, std::string_view output,
                                                          const MarkerGrammar& g, const std::string& label)
    {
        auto src   = text::to_u32(source);
        auto out   = text::to_u32(output);
        auto open  = text::to_u32(g.open);
        auto close = text::to_u32(g.close);
        detail::require_markers_absent(src, g);

        DecodeOutcome<std::vector<Span>> result;

        // strip markers, remembering marked regions in stripped coordinates
        std::u32string stripped;
        std::vector<std::pair<std::size_t, std::size_t>> regions;
        std::optional<std::size_t> region_start;
        for (std::size_t i = 0; i < out.size();)
        {
            auto at = [&](const std::u32string& m) { return out.compare(i, m.size(), m) == 0; };
            if (region_start ? at(close) : at(open))
            {
                if (region_start)
                {
                    regions.emplace_back(*region_start, stripped.size());
                    region_start.reset();
                    i += close.size();
                }
                else
                {
                    region_start = stripped.size();
                    i += open.size();
                }
                continue;
            }
            if (region_start ? at(open) : at(close))
                throw Error(ErrorCode::unbalanced_markers, "unexpected '" + text::to_utf8(region_start ? open : close)
                                                               + "' at offset " + std::to_string(i));
            stripped.push_back(out[i]);
            ++i;
        }
        if (region_start)
            throw Error(ErrorCode::unbalanced_markers, "unterminated '" + g.open + "'");

        // trim whitespace inside each region
        std::vector<std::pair<std::size_t, std::size_t>> marks;
        for (auto [a, b] : regions)
        {
            while (a < b && text::is_space(stripped[a]))
                ++a;
            while (b > a && text::is_space(stripped[b - 1]))
                --b;
            if (a == b)
                result.diagnostics.push_back("empty marked region ignored");
            else
                marks.emplace_back(a, b);
        }

        auto norm_src = text::normalize_ws(src);
        auto norm_out = text::normalize_ws(stripped);

        std::vector<std::pair<std::size_t, std::size_t>> located; // source coordinates
        if (norm_src.text == norm_out.text)
        {
            std::vector<std::size_t> to_norm(stripped.size(), 0);
            for (std::size_t n = 0; n < norm_out.origin.size(); ++n)
                to_norm[norm_out.origin[n]] = n;
            for (auto [a, b] : marks)
                located.emplace_back(norm_src.origin[to_norm[a]], norm_src.origin[to_norm[b - 1]] + 1);
            result.fidelity = Fidelity::exact;
        }
        else
        {
            auto budget   = (src.size() + 9) / 10;
            auto distance = text::edit_distance(norm_out.text, norm_src.text, budget);
            if (distance > budget)
            {
                result.diagnostics.push_back("output differs from the source beyond the realignment budget");
                result.fidelity = Fidelity::rejected;
                return result;
            }
            for (auto [a, b] : marks)
            {
                auto surface = text::normalize_ws(std::u32string_view(stripped).substr(a, b - a)).text;
                auto hits    = text::find_all(norm_src.text, surface);
                if (hits.size() > 1)
                    throw Error(ErrorCode::ambiguous_realign,
                                "'" + text::to_utf8(surface) + "' occurs " + std::to_string(hits.size())
                                    + " times in the source");
                if (hits.empty())
                {
                    result.diagnostics.push_back("marked '" + text::to_utf8(surface)
                                                 + "' not found in source; dropped");
                    continue;
                }
                auto h = hits.front();
                located.emplace_back(norm_src.origin[h], norm_src.origin[h + surface.size() - 1] + 1);
            }
            result.fidelity = Fidelity::realigned;
        }

        std::vector<Span> spans;
        for (auto [a, b] : located)
        {
            auto sa = a, sb = b;
            if (detail::cuts_word_left(src, sa) || detail::cuts_word_right(src, sb))
            {
                while (sa > 0 && text::is_alnum(src[sa - 1]) && text::is_alnum(src[sa]))
                    --sa;
                while (sb < src.size() && text::is_alnum(src[sb - 1]) && text::is_alnum(src[sb]))
                    ++sb;
                result.diagnostics.push_back("mark inside a word snapped to '"
                                             + text::to_utf8(std::u32string_view(src).substr(sa, sb - sa)) + "'");
            }
            spans.push_back(make_span(src, sa, sb, label));
        }
        std::sort(spans.begin(), spans.end());
        std::vector<Span> kept;
        for (auto& s : spans)
        {
            if (!kept.empty() && s.start < kept.back().end)
            {
                result.diagnostics.push_back("overlapping mark '" + s.surface + "' dropped");
                continue;
            }
            kept.push_back(std::move(s));
        }
        result.payload = std::move(kept);
        return result;
    }

    //=== yes / no ===//
    enum class YesNo
    {
        yes,
        no,
        invalid,
    };

    /// Scans the first 16 word tokens (case-insensitive) for "yes" or "no";
    /// both or neither is invalid.
    inline YesNo binary_decode(std::string_view output)
    {
        auto u         = text::to_u32(output);
        bool saw_yes   = false, saw_no = false;
        std::size_t n  = 0;
        std::size_t i  = 0;
        while (i < u.size() && n < 16)
        {
            if (!text::is_alnum(u[i]))
            {
                ++i;
                continue;
            }
            std::u32string tok;
            while (i < u.size() && text::is_alnum(u[i]))
                tok.push_back(text::ascii_lower(u[i++]));
            ++n;
            saw_yes |= tok == U"yes";
            saw_no |= tok == U"no";
        }
        if (saw_yes == saw_no)
            return YesNo::invalid;
        return saw_yes ? YesNo::yes : YesNo::no;
    }

    //=== multi-choice ===//
    namespace detail
    {
        /// Leading "(D)", "D)", "D.", "(15)" or "15." marker as a 0-based index.
        inline std::optional<std::size_t> leading_option_index(std::string_view s)
        {
            s = text::trim(s);
            bool paren = !s.empty() && s.front() == '(';
            if (paren)
                s.remove_prefix(1);
            std::size_t i = 0;
            std::optional<std::size_t> idx;
            if (!s.empty() && s[0] >= '0' && s[0] <= '9')
            {
                std::size_t v = 0;
                while (i < s.size() && s[i] >= '0' && s[i] <= '9' && i < 6)
                    v = v * 10 + static_cast<std::size_t>(s[i++] - '0');
                if (v == 0)
                    return std::nullopt;
                idx = v - 1;
            }
            else if (!s.empty() && ((s[0] >= 'A' && s[0] <= 'Z') || (paren && s[0] >= 'a' && s[0] <= 'z')))
            {
                idx = static_cast<std::size_t>((s[0] >= 'a' ? s[0] - 'a' : s[0] - 'A'));
                i   = 1;
            }
            else
                return std::nullopt;
            if (i >= s.size())
                return paren ? std::nullopt : idx;
            if (paren)
                return s[i] == ')' ? idx : std::nullopt;
            if ((s[i] == '.' || s[i] == ')') && (i + 1 == s.size() || s[i + 1] == ' ' || s[i + 1] == '\t'))
                return idx;
            return std::nullopt;
        }

        inline bool contains_word(std::u32string_view hay, std::u32string_view needle)
        {
            for (auto pos : text::find_all(hay, needle))
            {
                auto end = pos + needle.size();
                bool left_ok  = pos == 0 || !text::is_alnum(hay[pos - 1]) || !text::is_alnum(needle.front());
                bool right_ok = end == hay.size() || !text::is_alnum(hay[end]) || !text::is_alnum(needle.back());
                if (left_ok && right_ok)
                    return true;
            }
            return false;
        }

        inline std::u32string folded(std::string_view s)
        {
            auto u = text::to_u32(s);
            for (auto& c : u)
                c = text::ascii_lower(c);
            return u;
        }
    } // namespace detail

    /// Matches an option by its letter/number marker first, otherwise by a
    /// unique whole-word occurrence of the option text. Returns a 0-based index.
    inline std::size_t choice_decode(std::string_view output, const std::vector<std::string>& options)
    {
        if (options.empty())
            throw Error(ErrorCode::config_error, "no options to choose from");
        if (auto idx = detail::leading_option_index(output); idx && *idx < options.size())
            return *idx;

        auto hay = detail::folded(output);
        std::vector<std::size_t> matched;
        for (std::size_t i = 0; i < options.size(); ++i)
        {
            auto needle = detail::folded(text::trim(options[i]));
            if (!needle.empty() && detail::contains_word(hay, needle))
                matched.push_back(i);
        }
        if (matched.empty())
            throw Error(ErrorCode::no_match, "no option found in '" + std::string(output) + "'");
        if (matched.size() > 1)
        {
            std::string names;
            for (auto m : matched)
                names += (names.empty() ? "" : ", ") + options[m];
            throw Error(ErrorCode::ambiguous_match, "several options match: " + names);
        }
        return matched.front();
    }

    //=== QA ===//
    namespace detail
    {
        inline std::string strip_wrapping(std::string_view s)
        {
            s = text::trim(s);
            auto is_quote = [](char c) { return c == '"' || c == '\'' || c == '`'; };
            while (s.size() >= 2 && is_quote(s.front()) && s.back() == s.front())
                s = text::trim(s.substr(1, s.size() - 2));
            // curly quotes
            for (std::string_view lq : {"\xE2\x80\x9C", "\xE2\x80\x98"})
            {
                std::string_view rq = lq == "\xE2\x80\x9C" ? "\xE2\x80\x9D" : "\xE2\x80\x99";
                if (s.size() >= lq.size() + rq.size() && s.substr(0, lq.size()) == lq
                    && s.substr(s.size() - rq.size()) == rq)
                    s = text::trim(s.substr(lq.size(), s.size() - lq.size() - rq.size()));
            }
            return std::string(s);
        }

        inline bool is_literal(std::string_view output, std::string_view word)
        {
            auto s = strip_wrapping(output);
            while (!s.empty() && (s.back() == '.' || s.back() == '!'))
                s.pop_back();
            return text::lower(text::trim(s)) == word;
        }
    } // namespace detail

    /// Parses "(i) answer". Returns an empty optional for "unanswerable".
    inline std::optional<QaAnswer> qa_decode(std::string_view output, const std::vector<std::string>& sentences)
    {
        if (sentences.empty())
            throw Error(ErrorCode::config_error, "no sentences");
        if (detail::is_literal(output, "unanswerable"))
            return std::nullopt;
        auto s = text::trim(output);
        if (s.empty() || s.front() != '(')
            throw Error(ErrorCode::no_match, "missing sentence index in '" + std::string(output) + "'");
        std::size_t i = 1, idx = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9' && i < 8)
            idx = idx * 10 + static_cast<std::size_t>(s[i++] - '0');
        if (i == 1 || i >= s.size() || s[i] != ')')
            throw Error(ErrorCode::no_match, "malformed sentence index in '" + std::string(output) + "'");
        if (idx == 0 || idx > sentences.size())
            throw Error(ErrorCode::index_out_of_range, "sentence (" + std::to_string(idx) + ") of "
                                                           + std::to_string(sentences.size()));
        auto answer = text::normalize_ws(detail::strip_wrapping(s.substr(i + 1)));
        if (answer.empty())
            throw Error(ErrorCode::no_match, "empty answer");
        auto sentence = text::normalize_ws(sentences[idx - 1]);
        if (sentence.find(answer) == std::string::npos)
        {
            auto bare = answer;
            while (!bare.empty() && (bare.back() == '.' || bare.back() == ',' || bare.back() == '!'))
                bare.pop_back();
            if (bare.empty() || sentence.find(bare) == std::string::npos)
                throw Error(ErrorCode::answer_not_in_sentence, "'" + answer + "' not in sentence ("
                                                                   + std::to_string(idx) + ")");
            answer = bare;
        }
        return QaAnswer{idx, answer};
    }

    inline std::string render_qa_answer(const std::optional<QaAnswer>& a)
    {
        if (!a)
            return "unanswerable";
        return "(" + std::to_string(a->sentence) + ") " + a->text;
    }

    /// "(1) first sentence (2) second sentence ..."
    inline std::string render_indexed_sentences(const std::vector<std::string>& sentences)
    {
        std::string out;
        for (std::size_t i = 0; i < sentences.size(); ++i)
            out += (i ? " (" : "(") + std::to_string(i + 1) + ") " + sentences[i];
        return out;
    }

    //=== span or null ===//

    /// "null" yields no span; otherwise the (unwrapped) output must occur in
    /// the source. With several occurrences the first one is used.
    inline std::optional<Span> span_or_null_decode(std::string_view output, std::string_view source,
                                                   const std::string& label = {},
                                                   std::vector<std::string>* diagnostics = nullptr)
    {
        if (detail::is_literal(output, "null"))
            return std::nullopt;
        auto src = text::to_u32(source);

        std::vector<std::string> candidates;
        auto add = [&](std::string c) {
            c = detail::strip_wrapping(c);
            if (!c.empty() && std::find(candidates.begin(), candidates.end(), c) == candidates.end())
                candidates.push_back(c);
            while (!c.empty() && (c.back() == '.' || c.back() == ','))
                c.pop_back();
            c = detail::strip_wrapping(c);
            if (!c.empty() && std::find(candidates.begin(), candidates.end(), c) == candidates.end())
                candidates.push_back(c);
        };
        auto whole = std::string(text::trim(output));
        add(whole);
        // reported answers: "The answer is X", "Trigger: X"
        auto low = text::lower(whole);
        for (std::string_view cue : {" is ", ": ", " are ", " was "})
            if (auto pos = low.rfind(cue); pos != std::string::npos)
                add(whole.substr(pos + cue.size()));
        if (auto nl = whole.find('\n'); nl != std::string::npos)
            add(whole.substr(0, nl));

        for (const auto& c : candidates)
        {
            auto needle = text::to_u32(c);
            auto hits   = text::find_all(src, needle);
            if (hits.empty())
                continue;
            if (hits.size() > 1 && diagnostics)
                diagnostics->push_back("'" + c + "' occurs " + std::to_string(hits.size())
                                       + " times; first occurrence used");
            return make_span(src, hits.front(), hits.front() + needle.size(), label);
        }
        throw Error(ErrorCode::not_in_source, "'" + whole + "' does not occur in the source");
    }

    //=== label words ===//

    /// The label of the earliest label word found in the output (case-insensitive).
    inline std::string label_word_decode(std::string_view output,
                                         const std::vector<std::pair<std::string, std::string>>& mapping)
    {
        auto hay          = detail::folded(output);
        auto best         = std::u32string::npos;
        const std::string* label = nullptr;
        for (const auto& [word, lab] : mapping)
        {
            auto pos = hay.find(detail::folded(word));
            if (pos != std::u32string::npos && pos < best)
            {
                best  = pos;
                label = &lab;
            }
        }
        if (!label)
            throw Error(ErrorCode::no_label_word, "no label word in '" + std::string(output) + "'");
        return *label;
    }

    /// Text after the last line that starts with the sentinel; the whole output
    /// when no sentinel line exists.
    inline std::string strip_rationale(std::string_view output, std::string_view sentinel)
    {
        std::size_t best = std::string_view::npos;
        std::size_t line_start = 0;
        while (line_start <= output.size())
        {
            auto line_end = output.find('\n', line_start);
            if (line_end == std::string_view::npos)
                line_end = output.size();
            auto line = output.substr(line_start, line_end - line_start);
            auto lead = line.find_first_not_of(" \t");
            if (lead != std::string_view::npos && line.substr(lead, sentinel.size()) == sentinel)
                best = line_start + lead + sentinel.size();
            line_start = line_end + 1;
        }
        if (best == std::string_view::npos)
            return std::string(output);
        return std::string(text::trim(output.substr(best)));
    }
} // namespace promptforge

#endif // PROMPTFORGE_CODECS_HPP_INCLUDED
