#ifndef PROMPTFORGE_PROMPTING_HPP_INCLUDED
#define PROMPTFORGE_PROMPTING_HPP_INCLUDED

#include <cstddef>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace promptforge
{
    //=== token counting ===//
    using TokenCounter = std::function<std::size_t(std::string_view)>;

    /// ceil(characters / 4); monotone under concatenation.
    inline std::size_t heuristic_token_count(std::string_view s)
    {
        return (text::char_length(s) + 3) / 4;
    }

    inline std::size_t count_tokens(std::string_view s, const TokenCounter& counter = heuristic_token_count)
    {
        return counter ? counter(s) : heuristic_token_count(s);
    }

    struct TokenBudget
    {
        std::size_t limit    = 4096;
        TokenCounter counter = heuristic_token_count;

        std::size_t count(std::string_view s) const
        {
            return count_tokens(s, counter);
        }
        bool fits(std::string_view s) const
        {
            return count(s) <= limit;
        }
    };

    //=== templates ===//
    using Fields = std::map<std::string, std::string>;

    /// Prompt layout for one (task, pipeline step).
    ///
    /// `header` is the task description, `demo` renders one demonstration and
    /// `prompt` lays out the whole request. Placeholders are `{name}`; the
    /// prompt layout sees `{header}` and `{demos}` in addition to the instance
    /// fields `{input}`, `{question}`, `{options}`, `{premise}`, `{hypothesis}`
    /// and any step slots such as `{label}`. The demo layout also sees
    /// `{output}` and `{rationale}`.
    struct PromptTemplate
    {
        TaskKind task = TaskKind::sentiment;
        std::string step;
        std::string header;
        std::string demo   = "INPUT: {input}\nOUTPUT: {output}";
        std::string prompt = "{header}\n\n{demos}INPUT: {input}\nOUTPUT:";
        std::optional<MarkerGrammar> markers;
        std::string sentinel = "Answer:";
    };

    /// Substitutes `{name}` placeholders. Braces not enclosing a lowercase
    /// identifier are literal text; unknown identifiers are an error.
    inline std::string render_pattern(std::string_view pattern, const Fields& fields)
    {
        std::string out;
        out.reserve(pattern.size() * 2);
        std::size_t i = 0;
        while (i < pattern.size())
        {
            if (pattern[i] == '{')
            {
                std::size_t j = i + 1;
                while (j < pattern.size()
                       && ((pattern[j] >= 'a' && pattern[j] <= 'z') || (pattern[j] >= '0' && pattern[j] <= '9')
                           || pattern[j] == '_'))
                    ++j;
                if (j > i + 1 && j < pattern.size() && pattern[j] == '}')
                {
                    auto name = std::string(pattern.substr(i + 1, j - i - 1));
                    auto it   = fields.find(name);
                    if (it == fields.end())
                        throw Error(ErrorCode::template_error, "unbound placeholder {" + name + "}");
                    out += it->second;
                    i = j + 1;
                    continue;
                }
            }
            out.push_back(pattern[i]);
            ++i;
        }
        return out;
    }

    /// Parses a template file. Sections start with a line `[header]`, `[demo]`
    /// or `[prompt]`; the newline ending each section belongs to the file
    /// layout, not to the section text.
    inline PromptTemplate parse_template(std::string_view content, TaskKind task, std::string step)
    {
        PromptTemplate t;
        t.task = task;
        t.step = std::move(step);
        std::map<std::string, std::string> sections;
        std::string* current = nullptr;
        std::istringstream in{std::string(content)};
        std::string line;
        bool first = true;
        while (std::getline(in, line))
        {
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line == "[header]" || line == "[demo]" || line == "[prompt]")
            {
                auto name = line.substr(1, line.size() - 2);
                if (sections.count(name))
                    throw Error(ErrorCode::template_error, "duplicate section [" + name + "]");
                current = &sections[name];
                first   = true;
                continue;
            }
            if (!current)
            {
                if (text::trim(line).empty())
                    continue;
                throw Error(ErrorCode::template_error, "text before the first section");
            }
            if (!first)
                current->push_back('\n');
            *current += line;
            first = false;
        }
        auto strip_trailing_blank = [](std::string s) {
            while (!s.empty() && s.back() == '\n')
                s.pop_back();
            return s;
        };
        if (!sections.count("header"))
            throw Error(ErrorCode::template_error, "template needs a [header] section");
        t.header = strip_trailing_blank(sections["header"]);
        if (sections.count("demo"))
            t.demo = strip_trailing_blank(sections["demo"]);
        if (sections.count("prompt"))
            t.prompt = strip_trailing_blank(sections["prompt"]);
        return t;
    }

    inline PromptTemplate load_template(const std::string& path, TaskKind task, std::string step)
    {
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorCode::template_error, "cannot open template '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_template(ss.str(), task, std::move(step));
    }

    inline std::string option_marker(std::size_t i, OptionStyle style)
    {
        if (style == OptionStyle::alphabetic)
            return "(" + std::string(1, static_cast<char>('A' + i)) + ")";
        return std::to_string(i + 1) + ".";
    }

    /// "(A) waterfall; (B) bridge" or one "1. NN" line per option.
    inline std::string render_options(const std::vector<std::string>& options, OptionStyle style)
    {
        std::string out;
        for (std::size_t i = 0; i < options.size(); ++i)
        {
            if (i)
                out += style == OptionStyle::alphabetic ? "; " : "\n";
            out += option_marker(i, style) + " " + options[i];
        }
        return out;
    }

    inline Fields instance_fields(const TaskInstance& inst, OptionStyle style = OptionStyle::alphabetic)
    {
        return {
            {"input", inst.text},
            {"question", inst.question.value_or("")},
            {"premise", inst.premise.value_or(inst.text)},
            {"hypothesis", inst.hypothesis.value_or("")},
            {"options", render_options(inst.options, style)},
        };
    }

    inline Fields merged(Fields base, const Fields& extra)
    {
        for (const auto& [k, v] : extra)
            base[k] = v;
        return base;
    }

    /// Input, then (optionally) the rationale and the `Answer:` sentinel line,
    /// then the gold output.
    inline std::string render_demonstration(const Demonstration& demo, const PromptTemplate& tmpl, bool with_rationale,
                                            const Fields& slots = {}, OptionStyle style = OptionStyle::alphabetic)
    {
        if (with_rationale && !demo.rationale)
            throw Error(ErrorCode::missing_rationale, "demonstration '" + demo.instance.id + "' has no rationale");
        auto fields = merged(merged(instance_fields(demo.instance, style), slots), demo.slots);
        if (with_rationale)
        {
            fields["rationale"] = *demo.rationale;
            fields["output"]    = *demo.rationale + "\n" + tmpl.sentinel + " " + demo.rendered_label;
        }
        else
        {
            fields["rationale"] = "";
            fields["output"]    = demo.rendered_label;
        }
        return render_pattern(tmpl.demo, fields);
    }

    struct AssembledPrompt
    {
        std::string text;
        std::vector<std::string> used_demo_ids;
    };

    struct AssembleOptions
    {
        bool with_rationale = false;
        Fields slots;
        OptionStyle option_style = OptionStyle::alphabetic;
    };

    /// Appends demonstrations in order, dropping whole trailing demonstrations
    /// until the prompt fits the budget.
    inline AssembledPrompt assemble_prompt(const PromptTemplate& tmpl, const std::vector<Demonstration>& demos,
                                           const TaskInstance& instance, const TokenBudget& budget,
                                           const AssembleOptions& opts = {})
    {
        auto fields      = merged(instance_fields(instance, opts.option_style), opts.slots);
        fields["header"] = render_pattern(tmpl.header, fields);

        std::vector<std::string> rendered;
        rendered.reserve(demos.size());
        for (const auto& d : demos)
            rendered.push_back(render_demonstration(d, tmpl, opts.with_rationale, opts.slots, opts.option_style));

        auto layout = [&](std::size_t used) {
            std::string block;
            for (std::size_t i = 0; i < used; ++i)
                block += rendered[i] + "\n\n";
            auto f     = fields;
            f["demos"] = std::move(block);
            return render_pattern(tmpl.prompt, f);
        };

        auto bare = layout(0);
        if (!budget.fits(bare))
            throw Error(ErrorCode::query_too_large, "instance '" + instance.id + "' needs "
                                                        + std::to_string(budget.count(bare))
                                                        + " tokens without demonstrations, limit is "
                                                        + std::to_string(budget.limit));
        std::size_t used = demos.size();
        auto text        = layout(used);
        while (used > 0 && !budget.fits(text))
            text = layout(--used);

        AssembledPrompt out{std::move(text), {}};
        for (std::size_t i = 0; i < used; ++i)
            out.used_demo_ids.push_back(demos[i].instance.id);
        return out;
    }

    /// Number of prompts actually used when `available` ranked demonstrations
    /// are shared out k at a time.
    inline std::size_t effective_prompt_count(std::size_t requested, std::size_t k, std::size_t available)
    {
        if (requested == 0 || k == 0)
            throw Error(ErrorCode::config_error, "N and k must be positive");
        if (available >= requested * k)
            return requested;
        return std::max<std::size_t>(1, available / k);
    }

    /// Round-robin interleave of a relevance ranking: prompt i receives ranks
    /// i, i+N, i+2N, ... so every prompt mixes high- and low-rank demos.
    inline std::vector<std::vector<std::size_t>> partition_round_robin(std::size_t available, std::size_t n,
                                                                       std::size_t k)
    {
        n          = effective_prompt_count(n, k, available);
        auto total = std::min(available, n * k);
        std::vector<std::vector<std::size_t>> parts(n);
        for (std::size_t r = 0; r < total; ++r)
            parts[r % n].push_back(r);
        return parts;
    }

    struct PlannedPrompt
    {
        std::string prompt_id;
        std::string text;
        std::vector<std::string> demo_ids;
    };

    struct PromptPlan
    {
        std::string instance_id;
        std::vector<PlannedPrompt> prompts;

        std::size_t size() const noexcept
        {
            return prompts.size();
        }
    };

    inline PromptPlan build_prompt_plan(const PromptTemplate& tmpl, const std::vector<Demonstration>& ranked,
                                        std::size_t n, std::size_t k, const TaskInstance& instance,
                                        const TokenBudget& budget, const AssembleOptions& opts = {},
                                        const std::string& id_prefix = "p")
    {
        PromptPlan plan;
        plan.instance_id = instance.id;
        auto parts       = partition_round_robin(ranked.size(), n, k);
        for (std::size_t i = 0; i < parts.size(); ++i)
        {
            std::vector<Demonstration> demos;
            demos.reserve(parts[i].size());
            for (auto r : parts[i])
                demos.push_back(ranked[r]);
            auto assembled = assemble_prompt(tmpl, demos, instance, budget, opts);
            plan.prompts.push_back({id_prefix + std::to_string(i + 1), std::move(assembled.text),
                                    std::move(assembled.used_demo_ids)});
        }
        return plan;
    }
} // namespace promptforge

#endif // PROMPTFORGE_PROMPTING_HPP_INCLUDED
